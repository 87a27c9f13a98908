"""Time-of-arrival distance fields for demonstration-guided reach planning.

A numpy library for building inverse-distance and time-of-arrival fields on
voxel grids, planning 6-DoF hand trajectories by descending those fields,
compressing them with a latent-conditioned decoder network, tracking goal
phase embeddings with per-channel Kalman filters, and scheduling bimanual
manipulation from matched motion keyframes.
"""

from toafield.grid import ScalarGrid3, load_toaf, save_toaf
from toafield.scene import Scene, Solid, load_scene, save_scene
from toafield.trajectory import Trajectory6, load_trajectory, save_trajectory
from toafield.fastmarch import fmm_solve
from toafield.fields import FieldTriple, build_fields, build_obstacle_field, \
    build_target_field, build_toa_field

__version__ = "0.1.0"

__all__ = [
    "ScalarGrid3", "load_toaf", "save_toaf",
    "Scene", "Solid", "load_scene", "save_scene",
    "Trajectory6", "load_trajectory", "save_trajectory",
    "fmm_solve",
    "FieldTriple", "build_fields", "build_target_field",
    "build_obstacle_field", "build_toa_field",
    "__version__",
]

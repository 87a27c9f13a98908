"""Numba kernels for the fast marching solver.

The marcher is the standard first-order upwind scheme on a 6-neighbor
stencil with a binary min-heap over (value, flat index).  Cells whose speed
is non-positive or non-finite never enter the heap.  Flat indexing is
C order over an (nx, ny, nz) array.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _heap_push(hv, hi, m, v, idx):
    hv[m] = v
    hi[m] = idx
    j = m
    while j > 0:
        p = (j - 1) // 2
        if hv[p] < hv[j] or (hv[p] == hv[j] and hi[p] <= hi[j]):
            break
        hv[p], hv[j] = hv[j], hv[p]
        hi[p], hi[j] = hi[j], hi[p]
        j = p
    return m + 1


@njit(cache=True)
def _heap_pop(hv, hi, m):
    v = hv[0]
    idx = hi[0]
    m -= 1
    hv[0] = hv[m]
    hi[0] = hi[m]
    j = 0
    while True:
        l = 2 * j + 1
        r = l + 1
        s = j
        if l < m and (hv[l] < hv[s] or (hv[l] == hv[s] and hi[l] < hi[s])):
            s = l
        if r < m and (hv[r] < hv[s] or (hv[r] == hv[s] and hi[r] < hi[s])):
            s = r
        if s == j:
            break
        hv[s], hv[j] = hv[j], hv[s]
        hi[s], hi[j] = hi[j], hi[s]
        j = s
    return v, idx, m


@njit(cache=True)
def _local_update(arrival, state, speed, nx, ny, nz, idx, h):
    """Solve the upwind quadratic at cell idx from accepted face neighbors."""
    iz = idx % nz
    iy = (idx // nz) % ny
    ix = idx // (nz * ny)
    sx = ny * nz
    m0 = np.inf
    m1 = np.inf
    m2 = np.inf
    if ix > 0 and state[idx - sx] == 2:
        m0 = arrival[idx - sx]
    if ix < nx - 1 and state[idx + sx] == 2 and arrival[idx + sx] < m0:
        m0 = arrival[idx + sx]
    if iy > 0 and state[idx - nz] == 2:
        m1 = arrival[idx - nz]
    if iy < ny - 1 and state[idx + nz] == 2 and arrival[idx + nz] < m1:
        m1 = arrival[idx + nz]
    if iz > 0 and state[idx - 1] == 2:
        m2 = arrival[idx - 1]
    if iz < nz - 1 and state[idx + 1] == 2 and arrival[idx + 1] < m2:
        m2 = arrival[idx + 1]
    # ascending sort of the three axis minima
    if m0 > m1:
        m0, m1 = m1, m0
    if m1 > m2:
        m1, m2 = m2, m1
    if m0 > m1:
        m0, m1 = m1, m0
    if not np.isfinite(m0):
        return np.inf
    w = h / speed[idx]
    ww = w * w
    k = 1
    if np.isfinite(m1):
        k = 2
    if np.isfinite(m2):
        k = 3
    while k > 1:
        if k == 3:
            s = m0 + m1 + m2
            q = m0 * m0 + m1 * m1 + m2 * m2
            top = m2
        else:
            s = m0 + m1
            q = m0 * m0 + m1 * m1
            top = m1
        disc = s * s - k * (q - ww)
        if disc >= 0.0:
            u = (s + np.sqrt(disc)) / k
            if u >= top:
                return u
        k -= 1
    return m0 + w


@njit(cache=True)
def _passable(speed, idx):
    return speed[idx] > 0.0 and np.isfinite(speed[idx])


@njit(cache=True)
def march(speed, nx, ny, nz, h, src_idx, src_val, order_out):
    """Multi-source fast marching; returns the arrival array.

    speed is flat (C order), src_idx/src_val are parallel source arrays and
    order_out (same length as speed) receives accepted flat indices in pop
    order, padded with -1.

    Each source also seeds its 26-neighborhood with the straight-segment
    arrival (value + distance * mean slowness) when the corner cells the
    segment grazes are passable.  This tames the point-source singularity of
    the first-order stencil; the seeded values are upper bounds on the true
    arrival, so marching can only tighten them.
    """
    n = nx * ny * nz
    arrival = np.full(n, np.inf)
    state = np.zeros(n, np.uint8)          # 0 unvisited, 1 narrow, 2 accepted
    cap = 8 * n + 16
    hv = np.empty(cap)
    hi = np.empty(cap, np.int64)
    m = 0
    order_out[:] = -1
    for s in range(src_idx.shape[0]):
        idx = src_idx[s]
        if not _passable(speed, idx):
            continue
        if src_val[s] < arrival[idx]:
            arrival[idx] = src_val[s]
            state[idx] = 1
            m = _heap_push(hv, hi, m, src_val[s], idx)
    for s in range(src_idx.shape[0]):
        idx = src_idx[s]
        if not _passable(speed, idx):
            continue
        iz = idx % nz
        iy = (idx // nz) % ny
        ix = idx // (nz * ny)
        for dx in range(-1, 2):
            if ix + dx < 0 or ix + dx >= nx:
                continue
            for dy in range(-1, 2):
                if iy + dy < 0 or iy + dy >= ny:
                    continue
                for dz in range(-1, 2):
                    if iz + dz < 0 or iz + dz >= nz:
                        continue
                    if dx == 0 and dy == 0 and dz == 0:
                        continue
                    nb = ((ix + dx) * ny + iy + dy) * nz + iz + dz
                    if not _passable(speed, nb):
                        continue
                    # every corner cell the straight segment passes must
                    # be open, or the segment may tunnel a wall
                    ok = True
                    for ax in range(2):
                        for ay in range(2):
                            for az in range(2):
                                ox = dx * ax
                                oy = dy * ay
                                oz = dz * az
                                if (ox == 0 and oy == 0 and oz == 0) or \
                                        (ox == dx and oy == dy and oz == dz):
                                    continue
                                cidx = ((ix + ox) * ny + iy + oy) * nz + iz + oz
                                if not _passable(speed, cidx):
                                    ok = False
                    if not ok:
                        continue
                    dist = h * np.sqrt(dx * dx + dy * dy + dz * dz)
                    slow = 0.5 * (1.0 / speed[idx] + 1.0 / speed[nb])
                    v = src_val[s] + dist * slow
                    if v < arrival[nb]:
                        arrival[nb] = v
                        state[nb] = 1
                        m = _heap_push(hv, hi, m, v, nb)
    cnt = 0
    sx = ny * nz
    while m > 0:
        v, idx, m = _heap_pop(hv, hi, m)
        if state[idx] == 2 or v != arrival[idx]:
            continue
        state[idx] = 2
        order_out[cnt] = idx
        cnt += 1
        iz = idx % nz
        iy = (idx // nz) % ny
        ix = idx // sx
        for d in range(6):
            if d == 0:
                if ix == 0:
                    continue
                nb = idx - sx
            elif d == 1:
                if ix == nx - 1:
                    continue
                nb = idx + sx
            elif d == 2:
                if iy == 0:
                    continue
                nb = idx - nz
            elif d == 3:
                if iy == ny - 1:
                    continue
                nb = idx + nz
            elif d == 4:
                if iz == 0:
                    continue
                nb = idx - 1
            else:
                if iz == nz - 1:
                    continue
                nb = idx + 1
            if state[nb] == 2:
                continue
            if not (speed[nb] > 0.0 and np.isfinite(speed[nb])):
                continue
            u = _local_update(arrival, state, speed, nx, ny, nz, nb, h)
            if u < arrival[nb]:
                arrival[nb] = u
                state[nb] = 1
                m = _heap_push(hv, hi, m, u, nb)
    return arrival

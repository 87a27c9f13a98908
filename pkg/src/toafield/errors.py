"""Domain failures that callers are expected to handle."""


class GenerationFailure(RuntimeError):
    """No acceptable layout found within the attempt budget."""


class PlanningFailure(RuntimeError):
    """Path integration could not reach the goal.

    Carries the last reached position when one exists.
    """

    def __init__(self, message, last_position=None):
        super().__init__(message)
        self.last_position = last_position


class InferenceFailure(RuntimeError):
    """Latent optimization lacked the observations it needs."""


class TrainingFailure(RuntimeError):
    """Training loss went non-finite; carries where it happened.

    epoch is the epoch index at abort, history the per-epoch losses
    recorded up to that point.
    """

    def __init__(self, message, epoch, history=None):
        super().__init__(message)
        self.epoch = epoch
        self.history = list(history) if history is not None else []


class MatchFailure(RuntimeError):
    """No database entry satisfies the categorical filter."""


class NavigationFailure(RuntimeError):
    """The 2D goal cannot be reached from the start."""


class SchedulingFailure(RuntimeError):
    """No hand is available for the requested tasks."""


FAILURES = (GenerationFailure, PlanningFailure, InferenceFailure,
            TrainingFailure, MatchFailure, NavigationFailure,
            SchedulingFailure)

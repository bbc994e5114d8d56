"""Exception hierarchy shared by all modules."""


class IntermittencyError(Exception):
    """Base class for every error raised by this package."""


class YNotInBranchImage(IntermittencyError):
    def __init__(self, branch, y):
        super().__init__(f"y={y!r} is not in the image of branch {branch}")
        self.branch = branch
        self.y = y


class RootFindingFailed(IntermittencyError):
    def __init__(self, branch, y, iterations=200):
        super().__init__(
            f"inverse of branch {branch} at y={y!r} did not converge "
            f"in {iterations} iterations"
        )
        self.branch = branch
        self.y = y


class MapDefinitionError(IntermittencyError):
    """Malformed map definition (bad branch table, unreadable file)."""


class PreconditionViolated(IntermittencyError):
    pass


class ConditionViolated(IntermittencyError):
    """One of the four neighbourhood conditions (i)-(iv) fails."""

    def __init__(self, condition, witness, detail=""):
        msg = f"condition ({condition}) violated at x={witness!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.condition = condition
        self.witness = witness


class InsufficientNoiseLength(IntermittencyError):
    def __init__(self, needed, available):
        super().__init__(f"need {needed} noise values, have {available}")
        self.needed = needed
        self.available = available


class GridMismatch(IntermittencyError):
    pass


class NotConverged(IntermittencyError):
    def __init__(self, max_iters, residual):
        super().__init__(
            f"power iteration did not converge in {max_iters} iterations "
            f"(residual {residual:.3e})"
        )
        self.max_iters = max_iters
        self.residual = residual


class BranchExplosion(IntermittencyError):
    def __init__(self, n, count):
        super().__init__(f"exact pushforward at n={n} needs {count} branch strings")
        self.n = n
        self.count = count


class WindowTooSmall(IntermittencyError):
    def __init__(self, points, needed=5):
        super().__init__(f"fit window has {points} usable points, need {needed}")
        self.points = points


class ConfigError(IntermittencyError):
    pass

class QMRIError(Exception):
    """Base class for errors raised by qmri."""


class DomainError(QMRIError, ValueError):
    """A physical parameter lies outside its admissible domain."""


class DegenerateTrajectoryError(QMRIError, ValueError):
    """The time-integrated trajectory is too close to equilibrium to invert."""


class ShapeMismatchError(QMRIError, ValueError):
    pass


class CacheMismatchError(QMRIError, ValueError):
    """A linearization was applied at a point other than the one it was built at."""

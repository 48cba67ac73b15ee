"""Exception hierarchy shared by every tgen module."""


class TgenError(Exception):
    """Base class for library errors."""


class FormatError(TgenError):
    """Malformed checkpoint file (bad magic, version, dtype code or truncation)."""


class NonFiniteError(TgenError, ValueError):
    """A tensor holds NaN or Inf."""


class LayoutMismatch(TgenError, ValueError):
    pass


class CongruenceError(TgenError, ValueError):
    """Checkpoints differ in tensor names, shapes or dtype."""


class WeightError(TgenError, ValueError):
    pass


class EmptyTrajectory(TgenError, ValueError):
    pass


class InsufficientHistory(TgenError, ValueError):
    """Too few checkpoints for the requested method."""


class EmptyHistory(InsufficientHistory):
    pass


class AllCandidatesFailed(TgenError, RuntimeError):
    pass


class EmptyMatrix(TgenError, ValueError):
    pass


class MissingRow(TgenError, ValueError):
    pass


class DegenerateTrajectory(TgenError, ValueError):
    pass


class RankDeficient(TgenError, ValueError):
    pass


class DivergenceError(TgenError, RuntimeError):
    """Training loss became NaN or Inf."""


class BadPermutation(TgenError, ValueError):
    pass

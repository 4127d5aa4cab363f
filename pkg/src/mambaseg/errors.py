"""Exception types raised across the package.

Every contract violation maps to one of these, so callers (and the CLI)
can distinguish usage errors from data problems.
"""


class MambasegError(Exception):
    """Base class for all package-specific errors."""


class InvalidShape(MambasegError):
    """Tensor construction or relayout with an impossible shape."""


class ShapeMismatch(MambasegError):
    """Operands whose shapes cannot be combined by the requested op."""


class DomainError(MambasegError):
    """Input outside an op's mathematical domain (e.g. log of <= 0)."""


class InvalidSplit(MambasegError):
    """Split along an axis whose extent is not divisible by the part count."""


class NotScalar(MambasegError):
    """Reverse-mode differentiation requested from a non-scalar tensor."""


class InvalidSpec(MambasegError):
    """Malformed layer specification (kernel width, scale factor, ...)."""


class DegenerateNorm(MambasegError):
    """Normalization over a single element with no stabilizing epsilon."""


class InvalidConfig(MambasegError):
    """Network configuration violating its invariants."""


class CorruptCheckpoint(MambasegError):
    """Checkpoint file with bad magic, version, or truncated payload."""


class ConfigMismatch(MambasegError):
    """Checkpoint whose configuration differs from the target network."""


class InvalidStageCount(MambasegError):
    """Deep-supervision loss called with the wrong number of stage outputs."""


class InvalidMask(MambasegError):
    """Ground-truth mask containing values other than 0 and 1."""


class NotFound(MambasegError):
    """Referenced dataset file does not exist."""


class CorruptImage(MambasegError):
    """Image file that cannot be decoded."""


class InvalidSample(MambasegError):
    """Image/mask pair with inconsistent spatial sizes."""


class EmptyDataset(MambasegError):
    """Training requested on a dataset with no samples."""


class InvalidDataset(MambasegError):
    """Evaluation requested on a dataset without ground-truth masks."""


class IoError(MambasegError):
    """Filesystem write failure."""

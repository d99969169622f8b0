"""Exception types shared across the package."""


class MvfError(Exception):
    """Base class for all package errors."""


class ShapeError(MvfError):
    """Tensor shapes incompatible with the requested operation."""


class ConfigError(MvfError):
    """Invalid configuration value or combination."""


class DomainError(MvfError):
    """Input outside the operation's domain (empty axis, empty split, ...)."""


class LabelError(MvfError):
    """Class label outside the valid range."""


class ContractError(MvfError):
    """API contract violated (non-scalar loss, missing gradient, ...)."""


class ManifestError(MvfError):
    """Manifest parsing or invariant failure."""


class FrameFormatError(MvfError):
    """Frame payload malformed or inconsistent with its metadata."""


class CheckpointError(MvfError):
    """Checkpoint file malformed or inconsistent with its config."""

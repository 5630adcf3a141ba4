"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so keep the hierarchy flat
and the categories coarse.
"""


class AttnDistillError(Exception):
    """Base class for all package errors."""


class ParameterError(AttnDistillError):
    """An argument violates an operation's precondition."""


class DataError(AttnDistillError):
    """Input data is malformed (non-finite values, bad shapes, bad labels)."""


class DatasetLoadError(AttnDistillError):
    """Dataset files are missing or corrupt."""


class UnsupportedDatasetError(AttnDistillError):
    """Requested dataset name is not known."""


class InsufficientDataError(AttnDistillError):
    """A class has fewer real samples than requested."""


class ContainerFormatError(AttnDistillError):
    """Synthetic-set or checkpoint file is truncated, corrupt, or wrong version."""


class ConfigError(AttnDistillError):
    """Run configuration is invalid; message names the offending key."""


class ConfigMismatchError(AttnDistillError):
    """Checkpoint was written under a different configuration."""


class ContractError(AttnDistillError):
    """Two values that must agree (layer counts, widths, preprocessing) do not."""


class DivergenceError(AttnDistillError):
    """Distillation loss became non-finite or exploded."""

"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration and usage
problems exit 1, data problems exit 2, internal invariant breaches
exit 3.
"""


class TemprelError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TemprelError):
    """Bad configuration value, unknown key, or unusable flag combination."""


class DataError(TemprelError):
    """Malformed or inconsistent input data (corpus, sidecar, predictions)."""


class SchemeError(DataError):
    """Invalid label scheme definition or a label unknown to the scheme."""


class CheckpointError(DataError):
    """Unreadable, corrupt, or incompatible model checkpoint."""


class SolverError(TemprelError):
    """Inference could not produce a feasible assignment."""


class TrainingError(TemprelError):
    """Training diverged or hit an unrecoverable state."""


class InternalError(TemprelError):
    """An invariant the code promises to maintain was observed broken."""

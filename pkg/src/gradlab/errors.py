"""Exception hierarchy shared by all gradlab modules.

The CLI maps these onto exit codes: ConfigError -> 2, NumericError -> 3,
DataError (and plain OSError) -> 4.
"""


class GradlabError(Exception):
    """Base class for all gradlab errors."""


class ConfigError(GradlabError):
    """Invalid configuration: bad shapes, bad spec fields, unknown keys."""


class InfeasibleBudgetError(ConfigError):
    """A utility budget that cannot be met even without pruning."""


class NumericError(GradlabError):
    """Runtime numeric failure: non-finite values, infinite information."""


class DataError(GradlabError):
    """Malformed input data: bad IDX magic, truncated files, CSV schema drift."""

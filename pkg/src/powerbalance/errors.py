class PowerBalanceError(Exception):
    """Base class for every error the toolkit reports to its callers.

    `kind` is the machine-readable tag printed by the command line, `exit_code` the
    process status it maps to.
    """

    kind = "internal"
    exit_code = 1


class ParseError(PowerBalanceError, ValueError):
    kind = "parse"
    exit_code = 3


class GraphError(PowerBalanceError, ValueError):
    kind = "graph"
    exit_code = 4


class ConfigError(PowerBalanceError, ValueError):
    kind = "config"
    exit_code = 2


class StructureError(PowerBalanceError, RuntimeError):
    kind = "structure"
    exit_code = 5


class DivergenceError(PowerBalanceError, ArithmeticError):
    kind = "divergence"
    exit_code = 6


class StatsError(PowerBalanceError, ValueError):
    kind = "stats"
    exit_code = 7


class DomainError(PowerBalanceError, ValueError):
    kind = "domain"
    exit_code = 9


IO_ERROR_KIND = "io"
IO_ERROR_EXIT_CODE = 8

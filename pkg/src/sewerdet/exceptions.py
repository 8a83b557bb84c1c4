class SewerdetError(Exception):
    """Base class; ``category`` and ``exit_code`` feed the CLI diagnostics."""

    category = "error"
    exit_code = 1


class UsageError(SewerdetError, ValueError):
    category = "usage"
    exit_code = 2


class ConfigError(SewerdetError, ValueError):
    category = "bad_config"
    exit_code = 3


class SchemaError(SewerdetError, ValueError):
    category = "bad_schema"
    exit_code = 4


class InfeasibleError(SewerdetError, ValueError):
    category = "infeasible_params"
    exit_code = 5


class MissingFileError(SewerdetError, FileNotFoundError):
    category = "missing_file"
    exit_code = 6


class RuleSyntaxError(SchemaError):
    """Raised by the ruleset parser; carries the 1-based offending line."""

    category = "bad_ruleset"
    exit_code = 7

    def __init__(self, message: str, line: int, source: str = "<ruleset>"):
        self.line = line
        self.source = source
        super().__init__(f"{source}:{line}: {message}")

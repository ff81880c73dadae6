"""Exception hierarchy. Each class maps to a CLI exit code."""


class AmaGcnError(Exception):
    exit_code = 1


class ConfigError(AmaGcnError, ValueError):
    exit_code = 1


class DataError(AmaGcnError, ValueError):
    exit_code = 2


class NumericError(AmaGcnError, ArithmeticError):
    exit_code = 3

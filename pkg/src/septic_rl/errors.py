"""Exception hierarchy shared across the toolkit.

ValidationError subclasses map to CLI exit code 1 (bad inputs or
configuration), RuntimeFailure subclasses to exit code 2.
"""


class SepticRLError(Exception):
    pass


class ValidationError(SepticRLError):
    pass


class ConfigurationError(ValidationError):
    pass


class IngestionError(ValidationError):
    pass


class RuntimeFailure(SepticRLError):
    pass


class TrainingDiverged(RuntimeFailure):
    pass

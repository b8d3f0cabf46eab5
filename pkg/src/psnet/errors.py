"""Exception taxonomy shared across the package.

Every error that can surface through the CLI maps onto one of these classes
so the front-end can emit a machine-readable error report.
"""


class PsnetError(Exception):
    """Base class for all package errors."""

    code = "error"


class ConfigurationError(PsnetError):
    """Invalid or inconsistent configuration (shapes, stability bounds, flags)."""

    code = "configuration"


class SupportError(PsnetError):
    """A value lies outside the support of the distribution it was scored under."""

    code = "support"


class ProgramError(PsnetError):
    """A probabilistic program misbehaved (non-finite parameter, empty trace)."""

    code = "program"


class RunawayProgramError(ProgramError):
    """A program (or surrogate) exceeded the configured maximum trace length."""

    code = "runaway"


class InferenceError(PsnetError):
    """Guided execution could not proceed (missing observation, bad address)."""

    code = "inference"


class DegenerateWeightsError(InferenceError):
    """Every importance weight vanished; the posterior estimate is undefined."""

    code = "degenerate_weights"


class CoverageError(PsnetError):
    """A trace visits an address or transition the surrogate never registered."""

    code = "coverage"


class SchemaConflictError(PsnetError):
    """Two sources disagree about the schema of an address or file."""

    code = "schema_conflict"


class SchemaVersionError(PsnetError):
    """A persisted file carries an unknown format version."""

    code = "schema_version"


class NonFiniteGradientError(PsnetError):
    """An optimizer step was rejected because a gradient was not finite."""

    code = "non_finite_gradient"

    def __init__(self, param_names):
        self.param_names = list(param_names)
        super().__init__(
            "non-finite gradient in parameter(s): " + ", ".join(self.param_names)
        )


class TrainingError(PsnetError):
    """Optimization failed (empty dataset, non-finite loss)."""

    code = "training"


class ValidationError(PsnetError):
    """A stored object violates one of its structural invariants."""

    code = "validation"

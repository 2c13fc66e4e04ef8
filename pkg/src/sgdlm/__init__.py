"""Sequential Bayesian analysis of simultaneous graphical dynamic linear models."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigError,
    DegeneracyError,
    IngestError,
    NumericalError,
    SgdlmError,
    StructuralInputError,
)

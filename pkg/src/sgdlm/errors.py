"""Exception hierarchy shared across the package."""


class SgdlmError(Exception):
    """Base class for all package errors."""


class StructuralInputError(SgdlmError, ValueError):
    """Invalid graph, layout, or pattern input (self-parents, out-of-range indices, ...)."""


class NumericalError(SgdlmError, ArithmeticError):
    """A numerical contract failed: non-positive forecast scale, Cholesky failure,
    non-convergent solve."""


class DegeneracyError(SgdlmError, RuntimeError):
    """Monte Carlo representation collapsed: singular recoupling matrix, weight
    degeneracy (ESS too small), or all-zero mixture weights."""


class IngestError(SgdlmError, ValueError):
    """Malformed data table: ragged rows, non-numeric or missing cells."""


class ConfigError(SgdlmError, ValueError):
    """Invalid or inconsistent run configuration."""

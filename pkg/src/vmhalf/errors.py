"""Exception types shared across the package."""


class VMHalfError(Exception):
    """Base class for all package errors."""


class Grazing(VMHalfError):
    """Operation undefined on (or too close to) the grazing set x3=0, v3=0."""


class NegativeRadicand(VMHalfError):
    """Kinetic-weight radicand went negative (boundary force condition violated)."""


class FieldEvalFailure(VMHalfError):
    """A field evaluator raised or returned non-finite values."""


class StepBlowup(VMHalfError):
    """Trajectory momentum exceeded the configured cap."""


class NoExitWithinHorizon(VMHalfError):
    """Trajectory failed to reach the boundary before the configured horizon."""


class OutOfRange(VMHalfError):
    """Requested sample instant outside the stored trajectory range."""


class Singular(VMHalfError):
    """Evaluation point too close to a kernel singularity."""


class QuadratureFailure(VMHalfError):
    """Quadrature produced non-finite values or failed to converge."""


class ZeroY(VMHalfError):
    """Magnetic kernel evaluated at Y = 0."""


class HistoryUnderrun(VMHalfError):
    """Retarded lookup requested outside the stored history window."""


class NoConvergence(VMHalfError):
    """Fixed-point iteration did not meet tolerance within max_iters."""


class WeightOverflow(VMHalfError):
    """Exponential weight exponent exceeded the configured cap."""


class ConfigInvalid(VMHalfError):
    """Scenario file failed schema validation."""


class IoFailure(VMHalfError):
    """File input/output failed."""

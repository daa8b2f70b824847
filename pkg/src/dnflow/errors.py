"""Exception types shared across the solver suite."""


class DnflowError(Exception):
    """Base class for all errors raised by this package."""


class ZeroField(DnflowError):
    """A quotient or normalization was requested for an identically zero field."""


class SingularPoint(DnflowError):
    """A gradient was requested at a point where the unregularized model is
    non-differentiable (p < 2 power models at the origin); the caller must
    regularize (eps > 0)."""


class NonConvergence(DnflowError):
    """The per-step convex solver exhausted its iteration budget with the
    residual still above tolerance."""


class OutOfRange(DnflowError):
    """A time outside [0, T] was passed to a trajectory interpolant."""


class NotScalar(DnflowError):
    """A scalar-only (m = 1) check was invoked on a vector-valued field."""


class ModelMismatch(DnflowError):
    """An operation required power-law models with a matching exponent."""


class OutOfDomain(DnflowError):
    """A space-time cylinder clips the domain boundary or the time range."""


class ZeroCollapse(DnflowError):
    """A flow iterate collapsed below representable scale before it could be
    renormalized (degenerate step size)."""


class DegenerateFit(DnflowError):
    """A decay-rate fit was requested on a series that reaches zero energy."""


class BadOrder(DnflowError):
    """Comparison inputs were not nodewise ordered."""


class UnknownDatum(DnflowError):
    """An unrecognized builtin initial-datum name."""


class ConfigError(DnflowError):
    """An experiment configuration is invalid; the message names the key."""

"""Exception types shared across the package."""


class FlowcertError(Exception):
    """Base class for all package errors."""


class SizeGuardError(FlowcertError, ValueError):
    """Dimension guard violated (too large or out of range)."""


class ShapeMismatchError(FlowcertError, ValueError):
    """Operands have incompatible shapes or grades."""


class SingularMatrixError(FlowcertError, ValueError):
    """An operation required an invertible matrix and got a singular one."""


class SignAmbiguityError(FlowcertError, ValueError):
    """Both signs are valid preimages and no hint was supplied."""


class DegenerateFormError(FlowcertError, ValueError):
    """Quadratic form is degenerate or has the wrong index."""


class DegenerateFrameError(FlowcertError, ValueError):
    """Supplied frames are rank deficient or not a direct sum."""


class SeparationFailureError(FlowcertError, RuntimeError):
    """Strict separation failed at a quadrature node.

    Carries the node index, time and base point where the admissible
    rate interval was empty.
    """

    def __init__(self, node, time, point):
        self.node = node
        self.time = time
        self.point = point
        super().__init__(
            f"empty separation interval at node {node} (t={time:.6g}, x={point})"
        )


class BlowUpError(FlowcertError, RuntimeError):
    """State norm exceeded the blow-up threshold during integration."""

    def __init__(self, last_time, last_state):
        self.last_time = last_time
        self.last_state = last_state
        super().__init__(f"integration blew up after t={last_time:.6g}")


class NonConvergenceError(FlowcertError, RuntimeError):
    """Iterative estimate did not meet its residual tolerance."""


class MetricCompatibilityError(FlowcertError, ValueError):
    """Form is not negative definite on E / positive definite on F at a sample."""


class ConfigError(FlowcertError, ValueError):
    """Configuration failed validation; carries every violation found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))

"""Indefinite quadratic forms, cone fields and separation-rate machinery.

A form field assigns to each point a symmetric non-degenerate operator J
of fixed index q (here q = 1 by default).  Strict cone invariance of the
derivative cocycle is decided pointwise by the pencil

    (J DX + DX^T J) - delta J  positive definite for some real delta;

the admissible deltas form an open interval whose endpoints are located
by bisection on the smallest eigenvalue.  The codimension-one compound
inherits strict separation with respect to -J at the shifted rate
2 trace(DX) - delta, which is what the volume-expansion criteria integrate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, simpson

from . import flows
from .errors import DegenerateFormError, SeparationFailureError

POSDEF_MARGIN = 1e-10
CONE_ZERO_TOL = 1e-12
DEFAULT_WINDOW = 1e3
DEFAULT_ENDPOINT_TOL = 1e-8
DEFAULT_POLICY_EPS = 1e-3


class ConeClass(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    ZERO = "zero"


@dataclass
class QuadFormField:
    """Constant field of non-degenerate indefinite quadratic forms.

    The representation is one symmetric matrix used at every point;
    ``matrix_at`` is the extension point for x-dependent fields (override
    or wrap, keeping the index constant).
    """

    dim: int
    matrix: np.ndarray
    index: int = 0  # number of negative eigenvalues, filled by __post_init__

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.shape != (self.dim, self.dim):
            raise DegenerateFormError(
                f"form matrix must be {self.dim}x{self.dim}, got {self.matrix.shape}"
            )
        if not np.allclose(self.matrix, self.matrix.T, atol=1e-12):
            raise DegenerateFormError("form matrix must be symmetric")
        eigs = np.linalg.eigvalsh(self.matrix)
        if np.min(np.abs(eigs)) < POSDEF_MARGIN:
            raise DegenerateFormError(f"form is degenerate: eigenvalue {np.min(np.abs(eigs)):.3e}")
        self.index = int(np.sum(eigs < 0))
        if self.index in (0, self.dim):
            raise DegenerateFormError("form must be indefinite")

    def matrix_at(self, x) -> np.ndarray:
        return self.matrix

    def negated(self) -> "QuadFormField":
        return QuadFormField(self.dim, -self.matrix)


def default_form(m: int) -> QuadFormField:
    """The constant diag(-1, 1, ..., 1) field of index one."""
    d = np.ones(m)
    d[0] = -1.0
    return QuadFormField(m, np.diag(d))


def eval_form(field: QuadFormField, x, v) -> float:
    v = np.asarray(v, dtype=float)
    return float(v @ field.matrix_at(x) @ v)


def cone_classify(field: QuadFormField, x, v, tol=CONE_ZERO_TOL) -> ConeClass:
    """Sign of the form on v, with a small symmetric band mapped to ZERO."""
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("cone classification needs a nonzero vector")
    val = eval_form(field, x, v / norm)
    if val > tol:
        return ConeClass.POSITIVE
    if val < -tol:
        return ConeClass.NEGATIVE
    return ConeClass.ZERO


def form_flow_derivative(field: QuadFormField, model, x) -> np.ndarray:
    """Symmetric operator of d/dt J(A_t v) at t = 0: J DX + DX^T J."""
    J = field.matrix_at(x)
    D = model.jacobian(np.asarray(x, dtype=float))
    return J @ D + D.T @ J


def codim1_criterion_form(field: QuadFormField, model, x) -> np.ndarray:
    """Flow derivative of the reversed form along the identified compound.

    Returns (J DX + DX^T J) - 2 trace(DX) J; positive definiteness at every
    sample is the pointwise volume-expansion criterion.
    """
    J = field.matrix_at(x)
    D = model.jacobian(np.asarray(x, dtype=float))
    return J @ D + D.T @ J - 2.0 * np.trace(D) * J


@dataclass
class SeparationInterval:
    """Open interval of rates delta with (J DX + DX^T J) - delta J positive definite."""

    lower: float
    upper: float
    empty: bool
    midpoint_margin: float = float("nan")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)


def _eigmin_pencil(tJs, J, deltas):
    """Smallest eigenvalue of tJs - delta J, broadcast over a node axis."""
    return np.linalg.eigvalsh(tJs - deltas[:, None, None] * J)[..., 0]


def separation_interval_batch(tJs, J, tol=DEFAULT_ENDPOINT_TOL, window=DEFAULT_WINDOW,
                              scan_points=129, margin=POSDEF_MARGIN):
    """Vectorized interval computation for a stack of derivative forms.

    Returns (lower, upper, empty) arrays.  The smallest pencil eigenvalue
    is concave in delta, so a coarse scan locates a feasible rate and the
    endpoints are then bisected to resolution ``tol``.
    """
    tJs = np.asarray(tJs, dtype=float)
    single = tJs.ndim == 2
    if single:
        tJs = tJs[None]
    n = tJs.shape[0]
    scan = np.linspace(-window, window, scan_points)
    best_val = np.full(n, -np.inf)
    best_delta = np.zeros(n)
    for d in scan:
        vals = np.linalg.eigvalsh(tJs - d * J)[:, 0]
        better = vals > best_val
        best_val[better] = vals[better]
        best_delta[better] = d
    # refine the feasible point by golden-ish trisection around the best scan cell
    span = scan[1] - scan[0]
    lo = best_delta - span
    hi = best_delta + span
    for _ in range(40):
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        v1 = _eigmin_pencil(tJs, J, m1)
        v2 = _eigmin_pencil(tJs, J, m2)
        take1 = v1 >= v2
        hi = np.where(take1, m2, hi)
        lo = np.where(take1, lo, m1)
    peak = 0.5 * (lo + hi)
    peak_val = _eigmin_pencil(tJs, J, peak)
    improve = peak_val > best_val
    best_delta = np.where(improve, peak, best_delta)
    best_val = np.maximum(peak_val, best_val)
    empty = best_val <= margin

    # bisect each endpoint: feasible at best_delta, infeasible at +-window
    lo_lo = np.full(n, -window)
    lo_hi = best_delta.copy()
    up_lo = best_delta.copy()
    up_hi = np.full(n, window)
    iters = max(1, int(np.ceil(np.log2(2.0 * window / tol))))
    for _ in range(iters):
        mid = 0.5 * (lo_lo + lo_hi)
        feas = _eigmin_pencil(tJs, J, mid) > margin
        lo_hi = np.where(feas, mid, lo_hi)
        lo_lo = np.where(feas, lo_lo, mid)
        mid = 0.5 * (up_lo + up_hi)
        feas = _eigmin_pencil(tJs, J, mid) > margin
        up_lo = np.where(feas, mid, up_lo)
        up_hi = np.where(feas, up_hi, mid)
    lower = np.where(empty, np.nan, 0.5 * (lo_lo + lo_hi))
    upper = np.where(empty, np.nan, 0.5 * (up_lo + up_hi))
    if single:
        return lower[0], upper[0], bool(empty[0])
    return lower, upper, empty


def separation_interval(tJ, J, tol=DEFAULT_ENDPOINT_TOL, window=DEFAULT_WINDOW) -> SeparationInterval:
    """Open interval {delta : tJ - delta J is positive definite}, by bisection."""
    J = np.asarray(J, dtype=float)
    eigs = np.linalg.eigvalsh(J)
    if np.min(np.abs(eigs)) < POSDEF_MARGIN or np.all(eigs > 0) or np.all(eigs < 0):
        raise DegenerateFormError("pencil base form must be indefinite and non-degenerate")
    lower, upper, empty = separation_interval_batch(np.asarray(tJ, dtype=float), J,
                                                    tol=tol, window=window)
    if empty:
        return SeparationInterval(float("nan"), float("nan"), True)
    mid = 0.5 * (lower + upper)
    mid_margin = float(np.linalg.eigvalsh(np.asarray(tJ) - mid * J)[0])
    return SeparationInterval(float(lower), float(upper), False, mid_margin)


def select_rate(interval: SeparationInterval, policy, eps=DEFAULT_POLICY_EPS) -> float:
    """Pick one admissible rate from a nonempty interval.

    ``policy`` is one of "midpoint", "sup_minus_eps", "inf_plus_eps", or a
    float for a fixed rate (validated against the interval).
    """
    if interval.empty:
        raise SeparationFailureError(-1, float("nan"), None)
    if isinstance(policy, (int, float)):
        val = float(policy)
        if not (interval.lower < val < interval.upper):
            raise ValueError(
                f"fixed rate {val} lies outside the admissible interval "
                f"({interval.lower:.6g}, {interval.upper:.6g})"
            )
        return val
    if policy == "midpoint":
        return interval.midpoint
    if policy == "sup_minus_eps":
        return interval.upper - eps
    if policy == "inf_plus_eps":
        return interval.lower + eps
    raise ValueError(f"unknown policy {policy!r}")


def _select_rate_arrays(lower, upper, policy, eps):
    if isinstance(policy, (int, float)):
        return np.full_like(lower, float(policy))
    if policy == "midpoint":
        return 0.5 * (lower + upper)
    if policy == "sup_minus_eps":
        return upper - eps
    if policy == "inf_plus_eps":
        return lower + eps
    raise ValueError(f"unknown policy {policy!r}")


def interval_series(model, field, states, tol=DEFAULT_ENDPOINT_TOL, window=DEFAULT_WINDOW):
    """Per-node separation intervals along a state series.

    Constant-Jacobian models are computed once and broadcast.  Returns
    (lower, upper, empty) arrays of length len(states).
    """
    states = np.asarray(states, dtype=float)
    n = states.shape[0]
    J = field.matrix_at(states[0])
    if model.constant_jacobian:
        lo, up, emp = separation_interval_batch(
            form_flow_derivative(field, model, states[0]), J, tol=tol, window=window)
        return np.full(n, lo), np.full(n, up), np.full(n, emp, dtype=bool)
    tJs = np.stack([form_flow_derivative(field, model, x) for x in states])
    return separation_interval_batch(tJs, J, tol=tol, window=window)


def rate_series(model, field, orbit, policy, eps=DEFAULT_POLICY_EPS,
                variant="base", precomputed=None):
    """Per-node integrand for the rate integrals.

    ``variant`` "base" evaluates the separation rate itself; "codim1"
    shifts it to 2 trace(DX) - rate for the identified compound cocycle.
    Raises SeparationFailureError naming the first node whose admissible
    interval is empty.
    """
    states = orbit.states
    lower, upper, empty = precomputed if precomputed is not None else interval_series(
        model, field, states)
    if np.any(empty):
        i = int(np.argmax(empty))
        raise SeparationFailureError(i, float(orbit.times[i]), states[i])
    deltas = _select_rate_arrays(lower, upper, policy, eps)
    if variant == "base":
        return deltas
    if variant == "codim1":
        traces = np.array([np.trace(model.jacobian(x)) for x in states])
        return 2.0 * traces - deltas
    raise ValueError(f"unknown variant {variant!r}")


def integrate_rate(model, field, x0, a, b, h, variant="base",
                   policy="sup_minus_eps", eps=DEFAULT_POLICY_EPS) -> float:
    """Composite Simpson integral of the selected rate along the orbit of x0.

    Quadrature nodes coincide with the RK4 grid on [a, b].
    """
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")
    orbit = flows.integrate_orbit(model, x0, b, h)
    i0 = int(round(a / h))
    integrand = rate_series(model, field, orbit, policy, eps=eps, variant=variant)
    return float(simpson(integrand[i0:], x=orbit.times[i0:]))


def cumulative_rate_series(model, field, orbit, policy, eps=DEFAULT_POLICY_EPS,
                           variant="codim1", precomputed=None):
    """Cumulative Simpson integral of the selected rate from the orbit start."""
    integrand = rate_series(model, field, orbit, policy, eps=eps, variant=variant,
                            precomputed=precomputed)
    return cumulative_simpson(integrand, x=orbit.times, initial=0.0)


@dataclass
class RatioCheckReport:
    applicable: bool
    passed: bool
    lhs: float
    rhs: float
    note: str = ""


def separation_ratio_check(model, field, x0, v, t1, t2, policy="midpoint",
                           eps=DEFAULT_POLICY_EPS, h=1e-3, slack=1e-6) -> RatioCheckReport:
    """Check |J(A_t2 v)| / |J(A_t1 v)| >= exp(rate integral over [t1, t2]).

    The bound is the positive-cone growth estimate; the check is reported
    as inapplicable when the form value crosses zero on the grid.
    """
    sample = flows.integrate_cocycle(model, x0, t2, h)
    v = np.asarray(v, dtype=float)
    i1, i2 = int(round(t1 / h)), int(round(t2 / h))
    images = sample.fundamental[i1:i2 + 1] @ v
    Js = np.array([eval_form(field, x, w)
                   for x, w in zip(sample.orbit.states[i1:i2 + 1], images)])
    norms2 = np.sum(images ** 2, axis=1)
    if np.any(np.abs(Js) <= CONE_ZERO_TOL * norms2):
        return RatioCheckReport(False, False, float("nan"), float("nan"),
                                "form value crossed the zero cone on the grid")
    delta_int = integrate_rate(model, field, x0, t1, t2, h, variant="base",
                               policy=policy, eps=eps)
    lhs = float(abs(Js[-1]) / abs(Js[0]))
    rhs = float(np.exp(delta_int))
    return RatioCheckReport(True, lhs >= rhs * (1.0 - slack), lhs, rhs)


def cone_rate_bounds(field, model, x, n_samples, rng) -> tuple[float, float]:
    """Monte-Carlo bracket of admissible rates from cone ratios.

    Unit vectors are sampled uniformly; ratios tJ(v)/J(v) over the
    negative cone bound the rates from below, over the positive cone from
    above.  The returned bracket contains the separation interval.
    """
    if n_samples <= 0:
        raise ValueError(f"need a positive sample count, got {n_samples}")
    x = np.asarray(x, dtype=float)
    J = field.matrix_at(x)
    tJ = form_flow_derivative(field, model, x)
    vs = rng.normal(size=(n_samples, field.dim))
    vs /= np.linalg.norm(vs, axis=1)[:, None]
    Jv = np.einsum("ni,ij,nj->n", vs, J, vs)
    tJv = np.einsum("ni,ij,nj->n", vs, tJ, vs)
    neg = Jv < -CONE_ZERO_TOL
    pos = Jv > CONE_ZERO_TOL
    if not np.any(neg) or not np.any(pos):
        raise DegenerateFormError(
            f"cone sampling found {int(neg.sum())} negative / {int(pos.sum())} positive "
            f"vectors out of {n_samples}; increase n_samples"
        )
    ratios = tJv / Jv
    return float(np.max(ratios[neg])), float(np.min(ratios[pos]))

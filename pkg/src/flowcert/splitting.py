"""Splitting estimation and the singular adapted metric.

The one-dimensional contracted bundle E is the backward power-iteration
limit of per-step inverse transitions pulled along the orbit; the
codimension-one center bundle F comes from the dominant direction of the
grade-(m-1) compound cocycle, identified with a normal vector.  Both
iterations run twice from independent seeds and the angle between the
two runs is the per-node convergence residual.

The adapted norm is |w|^2 = xi^2 (-J(w_E) + J(w_F)) for the splitting
decomposition w = w_E + w_F, with xi shrunk until the field itself has
norm at most one on the samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from . import exterior
from .errors import MetricCompatibilityError, NonConvergenceError

DEFAULT_RESIDUAL_TOL = 1e-8


def _angle_mod_sign(u, v):
    c = min(1.0, abs(float(u @ v)))
    return float(np.arccos(c))


def _canonical_sign(v):
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


@dataclass
class SplittingEstimate:
    """Per-node estimates of the splitting E + F along one orbit."""

    times: np.ndarray
    stable: np.ndarray            # (N+1, m) unit vectors spanning E, NaN before convergence
    stable_residual: np.ndarray
    stable_ok: np.ndarray         # bool mask
    normals: np.ndarray           # (N+1, m) unit normals of F
    frames: np.ndarray            # (N+1, m, m-1) orthonormal bases of F
    frame_residual: np.ndarray
    frame_ok: np.ndarray

    def both_ok(self):
        return self.stable_ok & self.frame_ok


def _two_seed_backward(transitions, seeds):
    """Pull unit vectors backward through per-step inverses, renormalizing."""
    N = transitions.shape[0]
    m = transitions.shape[1]
    out = np.empty((2, N + 1, m))
    for s, seed in enumerate(seeds):
        v = seed / np.linalg.norm(seed)
        out[s, N] = v
        for i in range(N - 1, -1, -1):
            v = np.linalg.solve(transitions[i], v)
            v /= np.linalg.norm(v)
            out[s, i] = v
    return out


def estimate_stable_direction(sample, t_window, tol=DEFAULT_RESIDUAL_TOL, rng=None):
    """Most-contracted forward direction at each orbit node.

    Backward power iteration on the one-step inverse transitions from the
    orbit end; a node counts as converged when at least ``t_window`` of
    future orbit was consumed and the two seed runs agree within ``tol``
    radians.  Raises NonConvergenceError when no node converges.
    """
    rng = rng if rng is not None else np.random.default_rng(7)
    transitions = sample.transitions
    N, m = transitions.shape[0], transitions.shape[1]
    h = sample.orbit.step
    window_steps = int(round(t_window / h))
    if window_steps < 1 or window_steps > N:
        raise ValueError(f"window {t_window} must fit inside the orbit span {N * h}")
    seeds = rng.normal(size=(2, m))
    runs = _two_seed_backward(transitions, seeds)
    residual = np.array([_angle_mod_sign(runs[0, i], runs[1, i]) for i in range(N + 1)])
    ok = (residual < tol) & (np.arange(N + 1) <= N - window_steps)
    if not np.any(ok):
        raise NonConvergenceError(
            f"stable direction did not converge anywhere: best residual "
            f"{residual[: N - window_steps + 1].min():.3e} above tol {tol:.1e} "
            f"(no dominated contracting direction resolved over window {t_window})"
        )
    vecs = np.full((N + 1, m), np.nan)
    for i in np.nonzero(ok)[0]:
        vecs[i] = _canonical_sign(runs[0, i])
    return vecs, residual, ok


def estimate_center_bundle(sample, t_window, tol=DEFAULT_RESIDUAL_TOL, rng=None):
    """Codimension-one bundle from the dominant grade-(m-1) compound direction.

    Forward power iteration on the per-step compound transitions; the
    dominant multivector is identified with a unit normal and F is its
    orthogonal complement.  Convergence bookkeeping mirrors
    :func:`estimate_stable_direction` with the window in the past.
    """
    rng = rng if rng is not None else np.random.default_rng(11)
    transitions = sample.transitions
    N, m = transitions.shape[0], transitions.shape[1]
    h = sample.orbit.step
    window_steps = int(round(t_window / h))
    if window_steps < 1 or window_steps > N:
        raise ValueError(f"window {t_window} must fit inside the orbit span {N * h}")
    comp = exterior.compound_matrices(transitions, m - 1)  # (N, R, R), R = m
    R = comp.shape[1]
    runs = np.empty((2, N + 1, R))
    for s in range(2):
        w = rng.normal(size=R)
        w /= np.linalg.norm(w)
        runs[s, 0] = w
        for i in range(N):
            w = comp[i] @ w
            w /= np.linalg.norm(w)
            runs[s, i + 1] = w
    residual = np.array([_angle_mod_sign(runs[0, i], runs[1, i]) for i in range(N + 1)])
    ok = (residual < tol) & (np.arange(N + 1) >= window_steps)
    if not np.any(ok):
        raise NonConvergenceError(
            f"center bundle did not converge anywhere: best residual "
            f"{residual[window_steps:].min():.3e} above tol {tol:.1e}"
        )
    normals = np.full((N + 1, m), np.nan)
    frames = np.full((N + 1, m, m - 1), np.nan)
    for i in np.nonzero(ok)[0]:
        n = exterior.hodge_identify(exterior.KVector(m, m - 1, runs[0, i]))
        n = _canonical_sign(n / np.linalg.norm(n))
        normals[i] = n
        frames[i] = null_space(n[None, :])
    return normals, frames, residual, ok


def estimate_splitting(sample, t_window, tol=DEFAULT_RESIDUAL_TOL, rng=None) -> SplittingEstimate:
    """Both bundles along one orbit; converged nodes carry finite entries."""
    rng = rng if rng is not None else np.random.default_rng(13)
    vecs, res_e, ok_e = estimate_stable_direction(sample, t_window, tol=tol, rng=rng)
    normals, frames, res_f, ok_f = estimate_center_bundle(sample, t_window, tol=tol, rng=rng)
    return SplittingEstimate(sample.orbit.times, vecs, res_e, ok_e,
                             normals, frames, res_f, ok_f)


def splitting_at_singularity(model, x, gap_tol=1e-9):
    """Splitting from the Jacobian eigen-decomposition at an equilibrium.

    E is the eigendirection of the smallest real part (must be real and
    simple); F is the real invariant complement, orthonormalized.
    """
    x = np.asarray(x, dtype=float)
    D = model.jacobian(x)
    vals, vecs = np.linalg.eig(D)
    order = np.argsort(vals.real)
    if abs(vals[order[0]].imag) > gap_tol:
        raise NonConvergenceError("strongest stable eigenvalue is complex; no 1-D stable direction")
    if vals[order[1]].real - vals[order[0]].real < gap_tol:
        raise NonConvergenceError("no spectral gap below the remaining spectrum")
    e = vecs[:, order[0]].real
    e = _canonical_sign(e / np.linalg.norm(e))
    rest = vecs[:, order[1:]]
    span = np.column_stack([rest.real, rest.imag])
    q, r = np.linalg.qr(span)
    keep = np.abs(np.diag(r)) > 1e-12
    F = q[:, keep]
    if F.shape[1] != model.dim - 1:
        raise NonConvergenceError("invariant complement is rank deficient")
    return e, F, vals[order]


@dataclass
class FlowAlignmentReport:
    angles: np.ndarray
    max_angle: float
    tol: float
    passed: bool


def flow_in_center_check(model, points, normals, tol=1e-3, regular_tol=1e-12) -> FlowAlignmentReport:
    """Angle between the field and the center bundle at regular samples."""
    angles = []
    for x, n in zip(points, normals):
        X = model.f(np.asarray(x, dtype=float))
        nx = np.linalg.norm(X)
        if nx <= regular_tol:
            continue  # singular sample, excluded
        s = abs(float(n @ X)) / (np.linalg.norm(n) * nx)
        angles.append(np.arcsin(min(1.0, s)))
    angles = np.asarray(angles)
    max_angle = float(angles.max()) if angles.size else 0.0
    return FlowAlignmentReport(angles, max_angle, tol, max_angle < tol)


@dataclass
class AdaptedMetricSpec:
    """Per-sample inner products realizing the splitting-adapted norm."""

    xi: float
    points: np.ndarray       # (S, m)
    stable: np.ndarray       # (S, m)
    frames: np.ndarray       # (S, m, m-1)
    matrices: np.ndarray     # (S, m, m), includes the xi^2 factor
    node_index: np.ndarray = field(default=None)  # orbit node of each sample, when built on one

    def norm(self, s, w):
        w = np.asarray(w, dtype=float)
        return float(np.sqrt(w @ self.matrices[s] @ w))


def build_adapted_metric(points, stable, frames, fld, model) -> AdaptedMetricSpec:
    """Assemble |w|^2 = xi^2 (-J(w_E) + J(w_F)) at every sample.

    Requires J negative definite on E and positive definite on F at each
    sample; xi is min(1, 1/sup |X| in the xi = 1 norm) so the field has
    norm at most one on the samples.
    """
    points = np.asarray(points, dtype=float)
    S, m = points.shape
    base = np.empty((S, m, m))
    for s in range(S):
        x, e, F = points[s], stable[s], frames[s]
        J = fld.matrix_at(x)
        jee = float(e @ J @ e)
        JF = F.T @ J @ F
        if jee >= -1e-12:
            raise MetricCompatibilityError(
                f"form is not negative definite on E at sample {s} (value {jee:.3e})"
            )
        lam = np.linalg.eigvalsh(JF)[0]
        if lam <= 1e-12:
            raise MetricCompatibilityError(
                f"form is not positive definite on F at sample {s} (min eigenvalue {lam:.3e})"
            )
        B = np.column_stack([e[:, None], F])
        Binv = np.linalg.inv(B)
        blk = np.zeros((m, m))
        blk[0, 0] = -jee
        blk[1:, 1:] = JF
        base[s] = Binv.T @ blk @ Binv
    sup = 0.0
    for s in range(S):
        X = model.f(points[s])
        sup = max(sup, float(np.sqrt(X @ base[s] @ X)))
    xi = min(1.0, 1.0 / sup) if sup > 0 else 1.0
    return AdaptedMetricSpec(xi, points, np.asarray(stable), np.asarray(frames),
                             xi ** 2 * base)


def metric_from_splitting(sample, splitting, fld, model, thin=1) -> AdaptedMetricSpec:
    """Adapted metric over the converged nodes of one orbit estimate."""
    ok = np.nonzero(splitting.both_ok())[0][::thin]
    if ok.size == 0:
        raise MetricCompatibilityError("splitting estimate has no converged nodes")
    spec = build_adapted_metric(sample.orbit.states[ok], splitting.stable[ok],
                                splitting.frames[ok], fld, model)
    spec.node_index = ok
    return spec


@dataclass
class AdaptednessReport:
    """Exponent caps for the three adapted-metric conditions on a t-grid.

    ``caps[c][j]`` is the worst (smallest) admissible exponent of condition
    c at grid time t_j over all base samples; the fitted exponent of a
    condition is the min over its caps and the metric is adapted when all
    three stay positive.
    """

    t_grid: np.ndarray
    caps: dict
    fitted: dict
    passed: dict
    overall_lambda: float
    overall_passed: bool


_COND_NAMES = ("contraction", "domination", "volume")


def verify_adaptedness(metric: AdaptedMetricSpec, sample, t_grid) -> AdaptednessReport:
    """Evaluate the three conditions in the constructed norm, constants one.

    For each metric sample x and probe time t the restrictions of the
    relative transition to E and F are measured in the adapted inner
    products at x and at the image node; admissible exponents are
    -log(value)/t for the contraction and domination values and
    +log(det)/t for the volume.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0):
        raise ValueError("probe times must be strictly positive (conditions are equalities at t=0)")
    if metric.node_index is None:
        raise ValueError("metric must be built on orbit nodes (use metric_from_splitting)")
    h = sample.orbit.step
    steps = np.array([int(round(t / h)) for t in t_grid])
    if np.any(np.abs(steps * h - t_grid) > 1e-9 * np.maximum(1.0, t_grid)):
        raise ValueError("probe times must sit on the orbit grid")
    node_of = {int(n): s for s, n in enumerate(metric.node_index)}
    N = sample.transitions.shape[0]

    caps = {c: np.full(t_grid.size, np.inf) for c in _COND_NAMES}
    used_any = False
    for s, n0 in enumerate(metric.node_index):
        n0 = int(n0)
        if n0 + steps.max() > N or any(int(n0 + st) not in node_of for st in steps):
            continue
        used_any = True
        e0, F0 = metric.stable[s], metric.frames[s]
        M0 = metric.matrices[s]
        L0 = np.linalg.cholesky(F0.T @ M0 @ F0)
        B0 = F0 @ np.linalg.inv(L0).T  # M0-orthonormal basis of F
        e0n = e0 / np.sqrt(e0 @ M0 @ e0)
        A = np.eye(sample.transitions.shape[1])
        last = n0
        for j in np.argsort(steps):
            target = n0 + int(steps[j])
            for i in range(last, target):
                A = sample.transitions[i] @ A
            last = target
            si = node_of[target]
            Mi = metric.matrices[si]
            ei, Fi = metric.stable[si], metric.frames[si]
            Li = np.linalg.cholesky(Fi.T @ Mi @ Fi)
            val_c = np.sqrt((A @ e0n) @ Mi @ (A @ e0n))
            Bfull = np.column_stack([ei[:, None], Fi])
            coords = np.linalg.solve(Bfull, A @ B0)
            rest = Li.T @ coords[1:, :]
            sv = np.linalg.svd(rest, compute_uv=False)
            val_dom = val_c / sv[-1]
            logdet = float(np.sum(np.log(sv)))
            t = t_grid[j]
            caps["contraction"][j] = min(caps["contraction"][j], -np.log(val_c) / t)
            caps["domination"][j] = min(caps["domination"][j], -np.log(val_dom) / t)
            caps["volume"][j] = min(caps["volume"][j], logdet / t)
    if not used_any:
        raise ValueError("no metric sample has splitting data at every probe time")
    fitted = {c: float(np.min(caps[c])) for c in _COND_NAMES}
    passed = {c: fitted[c] > 0 for c in _COND_NAMES}
    overall = min(fitted.values())
    return AdaptednessReport(t_grid, caps, fitted, passed, float(overall), all(passed.values()))


def frame_volume_log_series(transitions, start_frame, start_node=0):
    """log |det| of the pushed frame restriction, per node, by QR bookkeeping."""
    F = np.asarray(start_frame, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    N = transitions.shape[0]
    out = np.full(N + 1, np.nan)
    out[start_node] = 0.0
    logdet = 0.0
    Q = F.copy()
    for i in range(start_node, N):
        Q, R = np.linalg.qr(transitions[i] @ Q)
        logdet += float(np.sum(np.log(np.abs(np.diag(R)))))
        out[i + 1] = logdet
    return out

"""Vector-field models, fixed-step orbit and tangent-linear integration.

The derivative cocycle A_t(x) is produced jointly with the orbit by one
classical RK4 scheme: every step yields the one-step transition matrix
(the same RK4 applied to the matrix variational equation from the
identity), and fundamental matrices are the running products.  Raw
fundamental matrices are never re-orthonormalized, so the cocycle
identity holds on the samples themselves; exponent-fitting paths use
per-step QR bookkeeping instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import exterior
from .errors import BlowUpError, DegenerateFrameError

log = logging.getLogger(__name__)

BLOWUP_NORM = 1e12

KNOWN_SYSTEMS = ("lorenz", "diag_linear", "linear")


@dataclass
class VectorFieldModel:
    """A smooth vector field with its exact Jacobian."""

    name: str
    dim: int
    params: dict
    f: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    constant_jacobian: bool = False


@dataclass
class OrbitSegment:
    """States on a uniform time grid."""

    times: np.ndarray
    states: np.ndarray  # (N+1, m)
    step: float


@dataclass
class CocycleSample:
    """Orbit together with fundamental matrices A_t and one-step transitions.

    ``fundamental[i]`` maps tangent vectors at the initial point to
    tangent vectors at ``states[i]``; ``transitions[i]`` maps from node i
    to node i+1 and is well conditioned regardless of the span.
    """

    orbit: OrbitSegment
    fundamental: np.ndarray   # (N+1, m, m), fundamental[0] = I
    transitions: np.ndarray   # (N, m, m)


@dataclass
class RateReport:
    """Least-squares exponent fit of one log-scale quantity against time."""

    label: str
    times: np.ndarray
    log_values: np.ndarray
    exponent: float
    intercept: float
    residual: float  # RMS of the linear fit residual

    @classmethod
    def fit(cls, label, times, log_values):
        times = np.asarray(times, dtype=float)
        log_values = np.asarray(log_values, dtype=float)
        slope, intercept = np.polyfit(times, log_values, 1)
        rms = float(np.sqrt(np.mean((log_values - (slope * times + intercept)) ** 2)))
        return cls(label, times, log_values, float(slope), float(intercept), rms)


def make_system(name: str, params: dict) -> VectorFieldModel:
    """Build one of the bundled systems: lorenz, diag_linear or linear."""
    if name == "lorenz":
        try:
            sigma, rho, beta = (float(params[k]) for k in ("sigma", "rho", "beta"))
        except KeyError as missing:
            raise ValueError(f"lorenz needs parameter {missing}") from None

        def f(x, sigma=sigma, rho=rho, beta=beta):
            return np.array([
                sigma * (x[1] - x[0]),
                x[0] * (rho - x[2]) - x[1],
                x[0] * x[1] - beta * x[2],
            ])

        def jac(x, sigma=sigma, rho=rho, beta=beta):
            return np.array([
                [-sigma, sigma, 0.0],
                [rho - x[2], -1.0, -x[0]],
                [x[1], x[0], -beta],
            ])

        return VectorFieldModel("lorenz", 3, {"sigma": sigma, "rho": rho, "beta": beta}, f, jac)

    if name == "diag_linear":
        if "entries" not in params:
            raise ValueError("diag_linear needs parameter 'entries'")
        d = np.asarray(params["entries"], dtype=float)
        if d.ndim != 1 or d.size < 1:
            raise ValueError("diag_linear 'entries' must be a nonempty vector")
        D = np.diag(d)
        return VectorFieldModel(
            "diag_linear", d.size, {"entries": d.tolist()},
            lambda x, d=d: d * x, lambda x, D=D: D, constant_jacobian=True,
        )

    if name == "linear":
        if "matrix" not in params:
            raise ValueError("linear needs parameter 'matrix'")
        M = np.asarray(params["matrix"], dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"linear 'matrix' must be square, got shape {M.shape}")
        return VectorFieldModel(
            "linear", M.shape[0], {"matrix": M.tolist()},
            lambda x, M=M: M @ x, lambda x, M=M: M, constant_jacobian=True,
        )

    raise ValueError(f"unknown system '{name}'; known systems: {', '.join(KNOWN_SYSTEMS)}")


def reversed_model(model: VectorFieldModel) -> VectorFieldModel:
    """The time-reversed field -X with Jacobian -DX."""
    return VectorFieldModel(
        model.name + "_reversed", model.dim, dict(model.params),
        lambda x, f=model.f: -f(x), lambda x, j=model.jacobian: -j(x),
        constant_jacobian=model.constant_jacobian,
    )


def find_singularities(model, seeds, residual_tol=1e-10, dedup_tol=1e-8, max_iter=60):
    """Newton iteration from each seed; converged, deduplicated roots of X."""
    roots = []
    for si, seed in enumerate(seeds):
        x = np.asarray(seed, dtype=float).copy()
        ok = False
        for _ in range(max_iter):
            fx = model.f(x)
            if np.linalg.norm(fx) < residual_tol:
                ok = True
                break
            try:
                step = np.linalg.solve(model.jacobian(x), fx)
            except np.linalg.LinAlgError:
                break
            x = x - step
            if not np.all(np.isfinite(x)):
                break
        if not ok:
            log.info("Newton did not converge from seed %d (%s)", si, seed)
            continue
        if not any(np.linalg.norm(x - r) < dedup_tol for r in roots):
            roots.append(x)
    return roots


def _rk4_state_step(f, x, h):
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_joint_step(model, x, h, eye):
    """One RK4 step of state and one-step transition matrix from identity."""
    f, jac = model.f, model.jacobian
    k1 = f(x)
    J1 = jac(x)
    x2 = x + 0.5 * h * k1
    k2 = f(x2)
    J2 = jac(x2)
    K2 = J2 @ (eye + 0.5 * h * J1)
    x3 = x + 0.5 * h * k2
    k3 = f(x3)
    J3 = jac(x3)
    K3 = J3 @ (eye + 0.5 * h * K2)
    x4 = x + h * k3
    k4 = f(x4)
    J4 = jac(x4)
    K4 = J4 @ (eye + h * K3)
    x_next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    phi = eye + (h / 6.0) * (J1 + 2.0 * K2 + 2.0 * K3 + K4)
    return x_next, phi


def _grid(T, h):
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    if T < h:
        raise ValueError(f"duration {T} shorter than one step {h}")
    return int(round(T / h))


def integrate_orbit(model, x0, T, h) -> OrbitSegment:
    """Classical fixed-step RK4 over [0, T] with N = round(T/h) steps."""
    N = _grid(T, h)
    m = model.dim
    states = np.empty((N + 1, m))
    states[0] = np.asarray(x0, dtype=float)
    x = states[0]
    for i in range(N):
        x = _rk4_state_step(model.f, x, h)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > BLOWUP_NORM:
            raise BlowUpError(i * h, states[i].copy())
        states[i + 1] = x
    return OrbitSegment(np.arange(N + 1) * h, states, h)


def integrate_cocycle(model, x0, T, h) -> CocycleSample:
    """Joint RK4 of dx/dt = X(x) and dPsi/dt = DX(x(t)) Psi, Psi(0) = I."""
    N = _grid(T, h)
    m = model.dim
    eye = np.eye(m)
    states = np.empty((N + 1, m))
    transitions = np.empty((N, m, m))
    fundamental = np.empty((N + 1, m, m))
    states[0] = np.asarray(x0, dtype=float)
    fundamental[0] = eye
    x = states[0]
    A = eye.copy()
    for i in range(N):
        x, phi = _rk4_joint_step(model, x, h, eye)
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > BLOWUP_NORM:
            raise BlowUpError(i * h, states[i].copy())
        states[i + 1] = x
        transitions[i] = phi
        A = phi @ A
        fundamental[i + 1] = A
    return CocycleSample(OrbitSegment(np.arange(N + 1) * h, states, h), fundamental, transitions)


def compound_cocycle(sample: CocycleSample, k: int):
    """Grade-k compounds of every fundamental matrix, same time grid."""
    m = sample.fundamental.shape[1]
    mats = exterior.compound_matrices(sample.fundamental, k)
    return [exterior.CompoundOperator(m, k, M) for M in mats]


def _check_frame(U, m, label):
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if U.shape[0] != m:
        raise DegenerateFrameError(f"{label} frame must sit in dimension {m}, got shape {U.shape}")
    G = U.T @ U
    if not np.allclose(G, np.eye(U.shape[1]), atol=1e-8):
        raise DegenerateFrameError(f"{label} frame is not orthonormal")
    return U


def subbundle_rates(sample: CocycleSample, E_frame, F_frame) -> dict:
    """Fitted exponents for the E-norm, the domination product and det on F.

    E and F are orthonormal frames at the initial point of claimed
    invariant subspaces.  Norm growth and the inverse restriction are
    accumulated through per-step QR factorizations with rescaled R
    products; the determinant on F is the induced norm of the grade-k
    compound applied to the frame wedge, evaluated on the stored
    fundamental matrices.
    """
    m = sample.fundamental.shape[1]
    UE = _check_frame(E_frame, m, "E")
    UF = _check_frame(F_frame, m, "F")
    dE, dF = UE.shape[1], UF.shape[1]
    if dE + dF > m or np.linalg.matrix_rank(np.hstack([UE, UF]), tol=1e-10) < dE + dF:
        raise DegenerateFrameError(
            f"frames must span a direct sum: dim E + dim F = {dE}+{dF} in dimension {m}"
        )

    N = sample.transitions.shape[0]
    times = sample.orbit.times
    logE = np.empty(N + 1)
    logdom = np.empty(N + 1)
    logE[0] = 0.0
    logdom[0] = 0.0

    QE, QF = UE.copy(), UF.copy()
    PE = np.eye(dE)   # scaled R-product: A_t U_E = QE @ exp(lsE) PE
    PF = np.eye(dF)
    lsE = lsF = 0.0
    for i in range(N):
        phi = sample.transitions[i]
        QE, RE = np.linalg.qr(phi @ QE)
        QF, RF = np.linalg.qr(phi @ QF)
        PE = RE @ PE
        PF = RF @ PF
        sE = np.abs(PE).max()
        sF = np.abs(PF).max()
        PE /= sE
        PF /= sF
        lsE += np.log(sE)
        lsF += np.log(sF)
        svE = np.linalg.svd(PE, compute_uv=False)
        svF = np.linalg.svd(PF, compute_uv=False)
        logE[i + 1] = lsE + np.log(svE[0])
        logdom[i + 1] = logE[i + 1] - (lsF + np.log(svF[-1]))

    w0 = exterior.wedge_coordinates(list(UF.T)).coords
    comps = exterior.compound_matrices(sample.fundamental, dF)
    logdet = np.log(np.linalg.norm(comps @ w0, axis=1))

    return {
        "E_norm": RateReport.fit("E_norm", times, logE),
        "domination": RateReport.fit("domination", times, logdom),
        "F_det": RateReport.fit("F_det", times, logdet),
    }

"""Criteria evaluation and certificate assembly over a sampling plan.

The invariant set is approximated by finitely many post-transient orbit
samples plus explicitly listed equilibria, so every verdict is evidence
at samples, never a proof.  A certificate is issued only when the
non-negativity, cone-invariance and one of the two sufficient criteria
all hold; a refutation requires a demonstrated pointwise violation
(negative field value, escaped cone probe, empty separation interval)
or conclusive decay of the best achievable volume lower bound together
with a failed pointwise criterion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import flows, quadforms, reports
from ._version import __version__
from .errors import SeparationFailureError

VERDICT_CERTIFIED = "certified-singular-hyperbolic-evidence"
VERDICT_INCONCLUSIVE = "inconclusive"
VERDICT_REFUTED = "refuted-at-sample"

EXIT_CODES = {VERDICT_CERTIFIED: 0, VERDICT_INCONCLUSIVE: 2, VERDICT_REFUTED: 3}

DEFAULT_POLICIES = ("inf_plus_eps", "midpoint", "sup_minus_eps")
BEST_POLICY = "inf_plus_eps"  # maximizes the compound rate 2 tr(DX) - delta


@dataclass
class SamplingPlan:
    """Finite approximation of the invariant set to be certified."""

    model: flows.VectorFieldModel
    initial_conditions: list
    transient: float
    horizon: float
    step: float
    singularities: list = dc_field(default_factory=list)
    stride: int = 10

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.transient < 0:
            raise ValueError(f"transient must be non-negative, got {self.transient}")
        if self.horizon <= self.transient:
            raise ValueError(
                f"horizon ({self.horizon}) must exceed transient ({self.transient})"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be at least 1, got {self.stride}")

    def to_dict(self):
        return {
            "system": {"name": self.model.name, "params": self.model.params},
            "initial_conditions": [list(map(float, x)) for x in self.initial_conditions],
            "transient": self.transient,
            "horizon": self.horizon,
            "step": self.step,
            "singularities": [list(map(float, x)) for x in self.singularities],
            "stride": self.stride,
        }


@dataclass
class Sample:
    point: np.ndarray
    is_singularity: bool
    ic_index: int | None = None
    time: float | None = None
    sing_index: int | None = None

    def location(self):
        if self.is_singularity:
            return {"singularity": self.sing_index, "x": [float(v) for v in self.point]}
        return {"ic": self.ic_index, "t": float(self.time), "x": [float(v) for v in self.point]}


@dataclass
class PlanData:
    """Prepared plan: post-transient orbit slices and the thinned sample set."""

    plan: SamplingPlan
    segments: list          # per-IC OrbitSegment, times rebased to [0, horizon - transient]
    samples: list           # list[Sample]

    @property
    def model(self):
        return self.plan.model


def prepare(plan: SamplingPlan) -> PlanData:
    """Integrate every initial condition and thin the post-transient nodes."""
    segments = []
    samples = []
    h = plan.step
    i_trans = int(round(plan.transient / h))
    for ic, x0 in enumerate(plan.initial_conditions):
        orbit = flows.integrate_orbit(plan.model, np.asarray(x0, dtype=float), plan.horizon, h)
        times = orbit.times[i_trans:] - orbit.times[i_trans]
        seg = flows.OrbitSegment(times, orbit.states[i_trans:], h)
        segments.append(seg)
        for j in range(0, seg.states.shape[0], plan.stride):
            samples.append(Sample(seg.states[j], False, ic_index=ic,
                                  time=float(plan.transient + seg.times[j])))
    for k, s in enumerate(plan.singularities):
        samples.append(Sample(np.asarray(s, dtype=float), True, sing_index=k))
    return PlanData(plan, segments, samples)


@dataclass
class CriterionResult:
    id: str
    passed: bool
    margin: float
    worst_sample: dict | None = None
    slope: float | None = None
    policy: str | None = None
    inconclusive: bool = False
    note: str = ""
    extra: dict = dc_field(default_factory=dict)

    def to_dict(self):
        out = {
            "id": self.id,
            "pass": bool(self.passed),
            "margin": self.margin,
            "worst_sample": self.worst_sample,
            "slope": self.slope,
        }
        if self.policy is not None:
            out["policy"] = self.policy
        if self.inconclusive:
            out["inconclusive"] = True
        if self.note:
            out["note"] = self.note
        out.update(self.extra)
        return out


def check_nonnegative_field(data: PlanData, fld) -> CriterionResult:
    """Minimum of J(X(x)) over regular samples; equilibria pass by definition."""
    model = data.model
    worst = None
    margin = math.inf
    for s in data.samples:
        if s.is_singularity:
            continue
        val = quadforms.eval_form(fld, s.point, model.f(s.point))
        if val < margin:
            margin = val
            worst = s
    if worst is None:
        return CriterionResult("nonneg", True, 0.0, None,
                               note="no regular samples; equilibria are non-negative by definition")
    return CriterionResult("nonneg", margin > 0.0, float(margin), worst.location())


def certify_criterion_b(data: PlanData, fld) -> CriterionResult:
    """Pointwise positive definiteness of the codimension-one criterion form."""
    model = data.model
    worst = None
    margin = math.inf
    for s in data.samples:
        lam = float(np.linalg.eigvalsh(
            quadforms.codim1_criterion_form(fld, model, s.point))[0])
        if lam < margin:
            margin = lam
            worst = s
    return CriterionResult("b", margin > 0.0, float(margin),
                           worst.location() if worst else None)


def _interval_cache(data: PlanData, fld, interval_tol, window):
    cache = []
    for seg in data.segments:
        cache.append(quadforms.interval_series(data.model, fld, seg.states,
                                               tol=interval_tol, window=window))
    return cache

def certify_criterion_a(data: PlanData, fld, policy, eps=quadforms.DEFAULT_POLICY_EPS,
                        slope_min=0.0, endpoint_min=math.log(10.0),
                        interval_cache=None, interval_tol=quadforms.DEFAULT_ENDPOINT_TOL,
                        window=quadforms.DEFAULT_WINDOW) -> CriterionResult:
    """Growth of the integrated compound rate along every initial condition.

    The cumulative integral of 2 trace(DX) - delta must trend upward:
    pass iff every fitted slope exceeds ``slope_min`` and every endpoint
    exceeds ``endpoint_min`` (one decade by default).  An empty interval
    at any node makes the criterion inconclusive at that location.
    """
    if interval_cache is None:
        interval_cache = _interval_cache(data, fld, interval_tol, window)
    slopes, endpoints = [], []
    for ic, seg in enumerate(data.segments):
        try:
            series = quadforms.cumulative_rate_series(
                data.model, fld, seg, policy, eps=eps, variant="codim1",
                precomputed=interval_cache[ic])
        except SeparationFailureError as err:
            loc = {"ic": ic, "t": float(data.plan.transient + err.time),
                   "x": [float(v) for v in err.point]}
            return CriterionResult(
                "a", False, float("nan"), loc, policy=str(policy), inconclusive=True,
                note="strict separation failed at a quadrature node")
        slope = float(np.polyfit(seg.times, series, 1)[0])
        slopes.append(slope)
        endpoints.append(float(series[-1]))
    worst_ic = int(np.argmin(slopes))
    passed = all(s > slope_min for s in slopes) and all(e > endpoint_min for e in endpoints)
    return CriterionResult(
        "a", passed, float(min(slopes)),
        {"ic": worst_ic, "t": float(data.plan.transient), "x": None},
        slope=float(min(slopes)), policy=str(policy),
        extra={"endpoint": float(min(endpoints)), "max_slope": float(max(slopes)),
               "max_endpoint": float(max(endpoints))})


def _boundary_probe(fld, rng, n):
    """Unit vectors on the zero cone, via the eigen-parametrization of J."""
    J = fld.matrix
    vals, vecs = np.linalg.eigh(J)
    neg = vals < 0
    Vn, ln = vecs[:, neg], vals[neg]
    Vp, lp = vecs[:, ~neg], vals[~neg]
    out = np.empty((n, fld.dim))
    for i in range(n):
        a = rng.normal(size=Vn.shape[1])
        a /= np.linalg.norm(a)
        b = rng.normal(size=Vp.shape[1])
        b /= np.linalg.norm(b)
        v = Vn @ (a / np.sqrt(-ln)) + Vp @ (b / np.sqrt(lp))
        out[i] = v / np.linalg.norm(v)
    return out


def empirical_cone_invariance(data: PlanData, fld, n_vectors=32, t_probe=0.5,
                              rng=None) -> CriterionResult:
    """Push positive-cone and zero-cone probes through the cocycle at each sample."""
    if t_probe <= 0:
        raise ValueError(f"probe time must be positive, got {t_probe}")
    rng = rng if rng is not None else np.random.default_rng(0)
    model = data.model
    h = data.plan.step
    n_zero = n_vectors // 2
    n_plus = n_vectors - n_zero
    margin = math.inf
    worst = None
    all_positive = True
    for s in data.samples:
        probes = []
        draws = 0
        while len(probes) < n_plus and draws < 200 * n_plus:
            v = rng.normal(size=fld.dim)
            v /= np.linalg.norm(v)
            draws += 1
            if quadforms.eval_form(fld, s.point, v) > quadforms.CONE_ZERO_TOL:
                probes.append(v)
        probes = np.array(probes + list(_boundary_probe(fld, rng, n_zero)))
        sample = flows.integrate_cocycle(model, s.point, t_probe, h)
        A = sample.fundamental[-1]
        x_end = sample.orbit.states[-1]
        images = probes @ A.T
        vals = np.einsum("ni,ij,nj->n", images, fld.matrix_at(x_end), images)
        vmin = float(vals.min())
        if vmin < margin:
            margin = vmin
            worst = s
        norms2 = np.sum(images ** 2, axis=1)
        if np.any(vals <= quadforms.CONE_ZERO_TOL * norms2):
            all_positive = False
    return CriterionResult("cone", all_positive and margin > 0.0, float(margin),
                           worst.location() if worst else None,
                           extra={"t_probe": t_probe, "n_vectors": n_vectors})


@dataclass
class Certificate:
    verdict: str
    criteria: list
    plan_dict: dict
    plan_digest: str
    seed: int
    policies: list
    version: str = __version__
    config_echo: dict | None = None
    adapted_metric: dict | None = None

    @property
    def exit_code(self):
        return EXIT_CODES[self.verdict]

    def to_dict(self):
        out = {
            "version": self.version,
            "plan": self.plan_dict,
            "plan_digest": self.plan_digest,
            "seed": self.seed,
            "policies": [str(p) for p in self.policies],
            "criteria": [c.to_dict() for c in self.criteria],
            "verdict": self.verdict,
        }
        if self.config_echo is not None:
            out["config"] = self.config_echo
        if self.adapted_metric is not None:
            out["adapted_metric"] = self.adapted_metric
        return out


def _assemble_verdict(nonneg, bres, a_results, cone, endpoint_min):
    a_pass = any(r.passed for r in a_results)
    if nonneg.passed and cone.passed and (bres.passed or a_pass):
        return VERDICT_CERTIFIED
    if not nonneg.passed and nonneg.margin < 0.0:
        return VERDICT_REFUTED
    if not cone.passed and cone.margin < 0.0:
        return VERDICT_REFUTED
    if any(r.inconclusive for r in a_results):
        return VERDICT_REFUTED  # empty interval at a sample: strict separation violated there
    best = next((r for r in a_results if r.policy == BEST_POLICY), None)
    if best is not None and not bres.passed and not best.inconclusive:
        if best.extra.get("max_slope", 0.0) < 0.0 and best.extra.get("max_endpoint", 0.0) < -endpoint_min:
            return VERDICT_REFUTED  # best achievable volume lower bound decays a decade
    return VERDICT_INCONCLUSIVE


def certify(plan: SamplingPlan, fld=None, policies=DEFAULT_POLICIES, seed=0, *,
            policy_eps=quadforms.DEFAULT_POLICY_EPS, slope_min=0.0,
            endpoint_decades=1.0, cone_vectors=32, cone_t_probe=0.5,
            interval_tol=quadforms.DEFAULT_ENDPOINT_TOL,
            window=quadforms.DEFAULT_WINDOW, config_echo=None) -> Certificate:
    """Run all criteria over the plan and assemble the verdict.

    Deterministic for a fixed plan and seed: all randomness flows from one
    SeedSequence spawned per purpose in a fixed order.
    """
    if fld is None:
        fld = quadforms.default_form(plan.model.dim)
    policies = list(dict.fromkeys(list(policies) + [BEST_POLICY]))
    data = prepare(plan)
    ss = np.random.SeedSequence(seed)
    cone_rng = np.random.default_rng(ss.spawn(1)[0])

    nonneg = check_nonnegative_field(data, fld)
    bres = certify_criterion_b(data, fld)
    cache = _interval_cache(data, fld, interval_tol, window)
    endpoint_min = endpoint_decades * math.log(10.0)
    a_results = [
        certify_criterion_a(data, fld, pol, eps=policy_eps, slope_min=slope_min,
                            endpoint_min=endpoint_min, interval_cache=cache)
        for pol in policies
    ]
    cone = empirical_cone_invariance(data, fld, n_vectors=cone_vectors,
                                     t_probe=cone_t_probe, rng=cone_rng)
    verdict = _assemble_verdict(nonneg, bres, a_results, cone, endpoint_min)
    plan_dict = plan.to_dict()
    return Certificate(verdict, [nonneg, bres, *a_results, cone], plan_dict,
                       reports.digest(plan_dict), seed, policies,
                       config_echo=config_echo)


@dataclass
class ReversalReport:
    """Per-sample agreement of separation between (X, J) and (-X, -J)."""

    agree: np.ndarray
    forward_nonempty: np.ndarray
    backward_nonempty: np.ndarray

    @property
    def all_agree(self):
        return bool(np.all(self.agree))


def reversal_consistency(model, fld, data: PlanData,
                         interval_tol=quadforms.DEFAULT_ENDPOINT_TOL,
                         window=quadforms.DEFAULT_WINDOW) -> ReversalReport:
    """Check that time reversal with the negated form separates iff the flow does."""
    rev = flows.reversed_model(model)
    neg = fld.negated()
    fwd, bwd = [], []
    for s in data.samples:
        tJ = quadforms.form_flow_derivative(fld, model, s.point)
        iv = quadforms.separation_interval(tJ, fld.matrix_at(s.point),
                                           tol=interval_tol, window=window)
        fwd.append(not iv.empty)
        tJr = quadforms.form_flow_derivative(neg, rev, s.point)
        ivr = quadforms.separation_interval(tJr, neg.matrix_at(s.point),
                                            tol=interval_tol, window=window)
        bwd.append(not ivr.empty)
    fwd = np.array(fwd)
    bwd = np.array(bwd)
    return ReversalReport(fwd == bwd, fwd, bwd)

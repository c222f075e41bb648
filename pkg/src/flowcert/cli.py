"""Configuration parsing, subcommand dispatch and report bundles.

Subcommands: ``identities`` (exterior-kernel property suite on random
matrices), ``certify`` (criteria pipeline to a certificate), ``metric``
(certificate plus adapted-metric construction and verification) and
``orbit`` (integration and CSV export only).  Exit codes: 0 certified /
all checks passed, 2 inconclusive, 3 refuted at a sample, 1 usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from . import certifier, exterior, flows, quadforms, reports, splitting
from ._version import __version__
from .errors import ConfigError, FlowcertError

POLICY_ALIASES = {
    "inf": "inf_plus_eps", "sup": "sup_minus_eps", "midpoint": "midpoint",
    "inf_plus_eps": "inf_plus_eps", "sup_minus_eps": "sup_minus_eps",
}

DEFAULT_TOLERANCES = {
    "interval_tol": quadforms.DEFAULT_ENDPOINT_TOL,
    "interval_window": quadforms.DEFAULT_WINDOW,
    "slope_min": 0.0,
    "endpoint_decades": 1.0,
    "cone_vectors": 32,
    "cone_t_probe": 0.5,
}

DEFAULT_METRIC = {
    "t_window": 10.0,
    "probe_times": [0.5, 1.0, 1.5, 2.0],
    "residual_tol": 2e-6,
    "thin": 100,
    "flow_angle_tol": 1e-3,
}


@dataclass
class RunConfig:
    """Validated run configuration; ``echo`` is the normalized document."""

    system_name: str
    system_params: dict
    form_matrix: np.ndarray | None
    initial_conditions: list
    transient: float
    horizon: float
    step: float
    stride: int
    singularities: list
    singularity_seeds: list
    policies: list
    policy_eps: float
    tolerances: dict
    metric: dict
    seed: int
    out_dir: str | None
    echo: dict = dc_field(default_factory=dict)


def _normalize(cfg: RunConfig) -> dict:
    return {
        "system": {"name": cfg.system_name, "params": cfg.system_params},
        "form": None if cfg.form_matrix is None else cfg.form_matrix.tolist(),
        "plan": {
            "initial_conditions": cfg.initial_conditions,
            "transient": cfg.transient,
            "horizon": cfg.horizon,
            "step": cfg.step,
            "stride": cfg.stride,
            "singularities": cfg.singularities,
            "singularity_seeds": cfg.singularity_seeds,
        },
        "policies": cfg.policies,
        "policy_eps": cfg.policy_eps,
        "tolerances": cfg.tolerances,
        "metric": cfg.metric,
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
    }


def _as_point_list(raw, dim, label, problems):
    out = []
    if not isinstance(raw, list):
        problems.append(f"{label} must be a list of points")
        return out
    for i, p in enumerate(raw):
        try:
            arr = [float(v) for v in p]
        except (TypeError, ValueError):
            problems.append(f"{label}[{i}] is not a numeric point")
            continue
        if dim is not None and len(arr) != dim:
            problems.append(f"{label}[{i}] has dimension {len(arr)}, expected {dim}")
            continue
        if not all(math.isfinite(v) for v in arr):
            problems.append(f"{label}[{i}] contains non-finite values")
            continue
        out.append(arr)
    return out


def parse_config_dict(doc: dict) -> RunConfig:
    """Validate a configuration document, collecting every violation."""
    problems = []
    if not isinstance(doc, dict):
        raise ConfigError(["configuration root must be a JSON object"])

    system = doc.get("system")
    name, params, dim, model = None, {}, None, None
    if not isinstance(system, dict) or "name" not in system:
        problems.append("missing 'system' object with a 'name'")
    else:
        name = system["name"]
        params = system.get("params", {})
        try:
            model = flows.make_system(name, params)
            dim = model.dim
            params = model.params
        except ValueError as err:
            problems.append(str(err))

    form = doc.get("form")
    form_matrix = None
    if form is not None:
        try:
            form_matrix = np.asarray(form, dtype=float)
            if dim is not None:
                quadforms.QuadFormField(dim, form_matrix)
        except (ValueError, FlowcertError) as err:
            problems.append(f"form: {err}")
            form_matrix = None

    plan = doc.get("plan")
    ics, transient, horizon, step, stride = [], 0.0, 0.0, 0.0, 1
    sing, seeds = [], []
    if not isinstance(plan, dict):
        problems.append("missing 'plan' object")
    else:
        ics = _as_point_list(plan.get("initial_conditions", []), dim,
                             "plan.initial_conditions", problems)
        if not ics:
            problems.append("plan.initial_conditions must contain at least one point")
        for key, default in (("transient", 0.0), ("horizon", None), ("step", None)):
            val = plan.get(key, default)
            if val is None or not isinstance(val, (int, float)) or not math.isfinite(float(val)):
                problems.append(f"plan.{key} must be a finite number")
            else:
                if key == "transient":
                    transient = float(val)
                elif key == "horizon":
                    horizon = float(val)
                else:
                    step = float(val)
        if step <= 0:
            problems.append(f"plan.step must be positive, got {step}")
        if transient < 0:
            problems.append(f"plan.transient must be non-negative, got {transient}")
        if horizon <= transient:
            problems.append(f"plan.horizon ({horizon}) must exceed plan.transient ({transient})")
        stride = plan.get("stride", 10)
        if not isinstance(stride, int) or stride < 1:
            problems.append(f"plan.stride must be a positive integer, got {stride!r}")
            stride = 1
        sing = _as_point_list(plan.get("singularities", []), dim, "plan.singularities", problems)
        seeds = _as_point_list(plan.get("singularity_seeds", []), dim,
                               "plan.singularity_seeds", problems)

    raw_policies = doc.get("policies", ["inf", "midpoint", "sup"])
    policies = []
    for p in raw_policies:
        if p not in POLICY_ALIASES:
            problems.append(f"unknown policy {p!r}; known: {sorted(set(POLICY_ALIASES))}")
        else:
            policies.append(POLICY_ALIASES[p])
    policy_eps = doc.get("policy_eps", quadforms.DEFAULT_POLICY_EPS)
    if not isinstance(policy_eps, (int, float)) or not 0 < policy_eps < 1:
        problems.append(f"policy_eps must be in (0, 1), got {policy_eps!r}")

    tolerances = dict(DEFAULT_TOLERANCES)
    for key, val in doc.get("tolerances", {}).items():
        if key not in DEFAULT_TOLERANCES:
            problems.append(f"unknown tolerance {key!r}; known: {sorted(DEFAULT_TOLERANCES)}")
        else:
            tolerances[key] = val
    metric = dict(DEFAULT_METRIC)
    for key, val in doc.get("metric", {}).items():
        if key not in DEFAULT_METRIC:
            problems.append(f"unknown metric option {key!r}; known: {sorted(DEFAULT_METRIC)}")
        else:
            metric[key] = val

    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        problems.append(f"seed must be an integer, got {seed!r}")
        seed = 0
    out_dir = doc.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        problems.append("out_dir must be a string path")
        out_dir = None

    if problems:
        raise ConfigError(problems)
    cfg = RunConfig(name, params, form_matrix, ics, transient, horizon, step, stride,
                    sing, seeds, policies, float(policy_eps), tolerances, metric,
                    seed, out_dir)
    cfg.echo = _normalize(cfg)
    return cfg


def parse_config(path) -> RunConfig:
    """Load and validate a JSON configuration file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError([f"config file not found: {p}"])
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError([f"malformed JSON in {p}: {err}"]) from None
    return parse_config_dict(doc)


def build_model(cfg: RunConfig) -> flows.VectorFieldModel:
    return flows.make_system(cfg.system_name, cfg.system_params)


def build_field(cfg: RunConfig, model) -> quadforms.QuadFormField:
    if cfg.form_matrix is None:
        return quadforms.default_form(model.dim)
    return quadforms.QuadFormField(model.dim, cfg.form_matrix)


def build_plan(cfg: RunConfig, model) -> certifier.SamplingPlan:
    sing = [np.asarray(s) for s in cfg.singularities]
    if cfg.singularity_seeds:
        found = flows.find_singularities(model, cfg.singularity_seeds)
        for x in found:
            if not any(np.linalg.norm(x - np.asarray(s)) < 1e-8 for s in sing):
                sing.append(x)
    return certifier.SamplingPlan(model, cfg.initial_conditions, cfg.transient,
                                  cfg.horizon, cfg.step, singularities=sing,
                                  stride=cfg.stride)


@dataclass
class ReportBundle:
    out_dir: Path
    certificate_path: Path | None
    csv_paths: list
    log_path: Path


def _write_series(out, cfg, model, fld, log_lines):
    """Orbit, cocycle and rate CSVs per initial condition."""
    paths = []
    policy = cfg.policies[0] if cfg.policies else "inf_plus_eps"
    for i, x0 in enumerate(cfg.initial_conditions):
        sample = flows.integrate_cocycle(model, np.asarray(x0), cfg.horizon, cfg.step)
        orbit_path = out / f"orbit_{i}.csv"
        reports.write_csv(orbit_path, reports.orbit_header(model.dim),
                          reports.orbit_rows(sample.orbit))
        cocycle_path = out / f"cocycle_{i}.csv"
        reports.write_csv(cocycle_path, reports.cocycle_header(model.dim),
                          reports.cocycle_rows(sample))
        paths += [orbit_path, cocycle_path]
        if fld is not None:
            states = sample.orbit.states
            lower, upper, empty = quadforms.interval_series(
                model, fld, states, tol=cfg.tolerances["interval_tol"],
                window=cfg.tolerances["interval_window"])
            traces = np.array([np.trace(model.jacobian(x)) for x in states])
            hats = np.stack([quadforms.codim1_criterion_form(fld, model, x) for x in states])
            mineig = np.linalg.eigvalsh(hats)[:, 0]
            delta = np.where(empty, np.nan,
                             quadforms._select_rate_arrays(lower, upper, policy, cfg.policy_eps))
            delta_k = 2.0 * traces - delta
            delta_path = out / f"delta_{i}.csv"
            rows = zip(sample.orbit.times, delta, delta_k, mineig)
            reports.write_csv(delta_path, ["t", "delta", "delta_k", "mineig_hatJ"], rows)
            paths.append(delta_path)
            if np.any(empty):
                log_lines.append(
                    f"ic {i}: empty separation interval at {int(empty.sum())} nodes "
                    f"(policy column is NaN there)")
    return paths


def cmd_orbit(cfg: RunConfig, out_dir, quiet=False) -> int:
    model = build_model(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_lines = [f"flowcert {__version__} orbit", f"config digest {reports.digest(cfg.echo)}"]
    paths = _write_series(out, cfg, model, None, log_lines)
    log_path = out / "run.log"
    log_path.write_text("\n".join(log_lines + [f"wrote {p.name}" for p in paths]) + "\n")
    if not quiet:
        print(f"wrote {len(paths)} series files to {out}")
    return 0


def _criterion_log(c):
    bits = [f"criterion {c.id}", "pass" if c.passed else "FAIL",
            f"margin {reports.fmt(c.margin)}"]
    if c.policy is not None:
        bits.insert(1, f"policy {c.policy}")
    if c.slope is not None:
        bits.append(f"slope {reports.fmt(c.slope)}")
    if c.inconclusive:
        bits.append("inconclusive")
    return "  ".join(bits)


def run_certificate(cfg: RunConfig):
    """The certify pipeline shared by ``certify`` and ``metric``."""
    model = build_model(cfg)
    fld = build_field(cfg, model)
    plan = build_plan(cfg, model)
    cert = certifier.certify(
        plan, fld, policies=cfg.policies, seed=cfg.seed,
        policy_eps=cfg.policy_eps,
        slope_min=cfg.tolerances["slope_min"],
        endpoint_decades=cfg.tolerances["endpoint_decades"],
        cone_vectors=cfg.tolerances["cone_vectors"],
        cone_t_probe=cfg.tolerances["cone_t_probe"],
        interval_tol=cfg.tolerances["interval_tol"],
        window=cfg.tolerances["interval_window"],
        config_echo=cfg.echo)
    return model, fld, plan, cert


def _emit_certificate(cfg, model, fld, cert, out_dir, quiet, extra_lines=(),
                      extra_paths=()) -> ReportBundle:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cert_path = out / "certificate.json"
    reports.write_json(cert_path, cert.to_dict())
    log_lines = [f"flowcert {__version__} verdict {cert.verdict}",
                 f"config digest {reports.digest(cfg.echo)}",
                 f"plan digest {cert.plan_digest}"]
    log_lines += [_criterion_log(c) for c in cert.criteria]
    log_lines += list(extra_lines)
    paths = _write_series(out, cfg, model, fld, log_lines)
    paths += list(extra_paths)
    log_path = out / "run.log"
    log_path.write_text("\n".join(log_lines + [f"wrote {p.name}" for p in paths]) + "\n")
    if not quiet:
        for line in log_lines:
            print(line)
        print(f"certificate: {cert_path}")
    return ReportBundle(out, cert_path, paths, log_path)


def cmd_certify(cfg: RunConfig, out_dir, quiet=False) -> int:
    model, fld, plan, cert = run_certificate(cfg)
    _emit_certificate(cfg, model, fld, cert, out_dir, quiet)
    return cert.exit_code


def cmd_metric(cfg: RunConfig, out_dir, quiet=False) -> int:
    model, fld, plan, cert = run_certificate(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mcfg = cfg.metric
    x0 = np.asarray(cfg.initial_conditions[0])
    sample = flows.integrate_cocycle(model, x0, cfg.horizon, cfg.step)
    est = splitting.estimate_splitting(sample, mcfg["t_window"],
                                       tol=mcfg["residual_tol"],
                                       rng=np.random.default_rng(
                                           np.random.SeedSequence(cfg.seed).spawn(2)[1]))
    spec = splitting.metric_from_splitting(sample, est, fld, model, thin=mcfg["thin"])
    rep = splitting.verify_adaptedness(spec, sample, mcfg["probe_times"])
    flow_rep = splitting.flow_in_center_check(
        model, spec.points, est.normals[spec.node_index], tol=mcfg["flow_angle_tol"])
    cert.adapted_metric = {
        "xi": spec.xi,
        "samples": len(spec.points),
        "probe_times": [float(t) for t in rep.t_grid],
        "caps": {k: [float(v) for v in rep.caps[k]] for k in rep.caps},
        "fitted": rep.fitted,
        "passed": rep.passed,
        "overall_lambda": rep.overall_lambda,
        "overall_passed": rep.overall_passed,
        "flow_in_center_max_angle": flow_rep.max_angle,
    }
    adapt_path = out / "adaptedness.csv"
    rows = ([t] + [rep.caps[c][j] for c in splitting._COND_NAMES]
            for j, t in enumerate(rep.t_grid))
    reports.write_csv(adapt_path, ["t", "cap_contraction", "cap_domination", "cap_volume"], rows)
    split_path = out / "splitting.csv"
    m = model.dim
    header = (["t"] + [f"e_{i+1}" for i in range(m)] + [f"n_{i+1}" for i in range(m)])
    ok = np.nonzero(est.both_ok())[0]
    srows = ([sample.orbit.times[i], *est.stable[i], *est.normals[i]] for i in ok)
    reports.write_csv(split_path, header, srows)
    extra = [f"adapted metric xi {reports.fmt(spec.xi)} "
             f"overall lambda {reports.fmt(rep.overall_lambda)} "
             f"{'pass' if rep.overall_passed else 'FAIL'}"]
    _emit_certificate(cfg, model, fld, cert, out_dir, quiet, extra_lines=extra,
                      extra_paths=[adapt_path, split_path])
    code = cert.exit_code
    if not rep.overall_passed:
        code = max(code, 2)
    return code


def cmd_identities(dim, trials, seed, tol=1e-8, quiet=False) -> int:
    """Property suite for the exterior kernel on random matrices."""
    rng = np.random.default_rng(seed)
    m = dim
    errs = {"multiplicativity": 0.0, "det_power_law": 0.0, "codim1_identity": 0.0,
            "wedge_naturality": 0.0, "generator": 0.0, "recover_inverse": 0.0}
    for _ in range(trials):
        A = rng.normal(size=(m, m))
        B = rng.normal(size=(m, m))
        if abs(np.linalg.det(A)) < 1e-3 or abs(np.linalg.det(B)) < 1e-3:
            continue
        scale = max(1.0, np.abs(A).max()) ** m
        for k in range(1, m + 1):
            CA = exterior.compound_operator(A, k).matrix
            CB = exterior.compound_operator(B, k).matrix
            CAB = exterior.compound_operator(A @ B, k).matrix
            errs["multiplicativity"] = max(
                errs["multiplicativity"],
                np.abs(CAB - CA @ CB).max() / max(1e-12, np.abs(CAB).max()))
            lhs = np.linalg.det(CA)
            rhs = np.linalg.det(A) ** math.comb(m - 1, k - 1)
            errs["det_power_law"] = max(errs["det_power_law"],
                                        abs(lhs - rhs) / max(1e-12, abs(rhs)))
            vs = [rng.normal(size=m) for _ in range(k)]
            w1 = exterior.compound_operator(A, k).apply(exterior.wedge_coordinates(vs))
            w2 = exterior.wedge_coordinates([A @ v for v in vs])
            errs["wedge_naturality"] = max(
                errs["wedge_naturality"],
                np.abs(w1.coords - w2.coords).max() / max(1e-12, np.abs(w2.coords).max()))
        ident = exterior.identified_compound(A)
        cof = exterior.cofactor_operator(A)
        errs["codim1_identity"] = max(errs["codim1_identity"],
                                      np.abs(ident - cof).max() / max(1e-12, np.abs(cof).max()))
        G = exterior.codim1_generator(A)
        h1, h2 = 1e-3, 1e-4
        e1 = np.abs((exterior.identified_compound(expm(h1 * A)) - np.eye(m)) / h1 - G).max()
        e2 = np.abs((exterior.identified_compound(expm(h2 * A)) - np.eye(m)) / h2 - G).max()
        errs["generator"] = max(errs["generator"], e2 / max(1.0, np.abs(G).max()))
        if not (4.0 < e1 / max(e2, 1e-15) < 25.0):
            errs["generator"] = max(errs["generator"], 1.0)  # not first order
        hint = 1 if (m - 1) % 2 == 0 else None
        back = exterior.recover_base_operator(cof, hint)
        target = A if (m - 1) % 2 == 1 or np.linalg.det(A) > 0 else -A
        errs["recover_inverse"] = max(errs["recover_inverse"],
                                      np.abs(back - target).max() / max(1e-12, np.abs(A).max()))
    tols = dict.fromkeys(errs, tol)
    tols["generator"] = 1e-2  # first-order finite difference at h = 1e-4
    ok = True
    for name, err in errs.items():
        line_ok = err < tols[name]
        ok = ok and line_ok
        if not quiet:
            print(f"{name:18s} max error {err:.3e}  {'pass' if line_ok else 'FAIL'}")
    return 0 if ok else 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError([message])


def _add_config_args(p):
    p.add_argument("config", nargs="?", help="JSON configuration file")
    p.add_argument("--config", dest="config_flag", help="JSON configuration file")
    p.add_argument("--out", help="output directory (overrides config out_dir)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--policy", choices=sorted(set(POLICY_ALIASES)),
                   help="run a single rate policy")
    p.add_argument("--quiet", action="store_true")


def build_parser():
    parser = _Parser(prog="flowcert", description=__doc__)
    parser.add_argument("--version", action="version", version=f"flowcert {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    ids = sub.add_parser("identities", help="exterior-kernel property suite")
    ids.add_argument("--dim", type=int, default=4)
    ids.add_argument("--trials", type=int, default=200)
    ids.add_argument("--seed", type=int, default=0)
    ids.add_argument("--quiet", action="store_true")

    for name, doc in (("certify", "criteria pipeline"), ("metric", "adapted metric pipeline"),
                      ("orbit", "integration and CSV export")):
        _add_config_args(sub.add_parser(name, help=doc))
    return parser


def _load_config(args) -> RunConfig:
    path = args.config_flag or args.config
    if not path:
        raise ConfigError(["a configuration file is required (positional or --config)"])
    cfg = parse_config(path)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.policy is not None:
        cfg.policies = [POLICY_ALIASES[args.policy]]
    if args.out is not None:
        cfg.out_dir = args.out
    cfg.echo = _normalize(cfg)
    if cfg.out_dir is None:
        raise ConfigError(["no output directory: set out_dir in the config or pass --out"])
    return cfg


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as err:
        print(err, file=sys.stderr)
        return 1
    if args.command == "identities":
        if args.dim < 2 or args.dim > exterior.MAX_DIM:
            print(f"--dim must be in [2, {exterior.MAX_DIM}]", file=sys.stderr)
            return 1
        return cmd_identities(args.dim, args.trials, args.seed, quiet=args.quiet)
    try:
        cfg = _load_config(args)
    except ConfigError as err:
        print(err, file=sys.stderr)
        return 1
    try:
        if args.command == "certify":
            return cmd_certify(cfg, cfg.out_dir, quiet=args.quiet)
        if args.command == "metric":
            return cmd_metric(cfg, cfg.out_dir, quiet=args.quiet)
        if args.command == "orbit":
            return cmd_orbit(cfg, cfg.out_dir, quiet=args.quiet)
    except FlowcertError as err:
        print(f"run failed: {err}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command}")

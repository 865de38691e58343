"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime model error,
4 a verified bound failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile

import numpy as np

from . import bounds as bd
from .config import (default_kl_ball_radius, kl_radii_from_config, load_config,
                     scenario_from_config)
from .errors import AssumptionViolation, BeliefLabError, ConfigError
from .hypothesis import (HypothesisSpace, build_hellinger_covering, build_kl_covering,
                         check_assumption3, gamma_all, hellinger_ball)
from .network import make_graph
from .scenario import (build_localization, concentration_time, mc_concentration,
                       agent_rate_slopes, run, sample_history)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_VERIFY = 0, 2, 3, 4

log = logging.getLogger("belieflab")


class VerificationFailed(Exception):
    pass


def write_atomic(path, text):
    """Write to a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump(obj):
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(type(o).__name__)
    return json.dumps(obj, indent=2, default=default, allow_nan=True) + "\n"


def _say(args, msg):
    if not args.quiet:
        print(msg)


# ---------------------------------------------------------------------------
# Shared setup
# ---------------------------------------------------------------------------

def _bound_setup(cfg, sc):
    """ConcentrationParams and covering for the configured theorem."""
    bspec = dict(cfg.get("bounds", {}))
    theorem = int(bspec.get("theorem", 2 if sc.space.kind == "grid" else 1))
    model, A = sc.model, sc.weights
    rho = float(bspec.get("rho", 0.1))
    sigma = float(bspec.get("sigma", 0.1))
    if theorem == 1:
        r = float(bspec.get("r", default_kl_ball_radius(model)))
        cov = build_kl_covering(model, kl_radii_from_config(bspec, model, r), sc.space)
        actual = float(sc.priors.beliefs[:, model.theta_star].min())
        eps = float(bspec.get("epsilon", actual))
        if eps > actual * (1 + 1e-12):
            raise ConfigError(f"bounds.epsilon={eps:g} exceeds the smallest prior at theta* "
                              f"({actual:g})")
        params = bd.ConcentrationParams.for_model(model, A, rho, sigma, r, eps)
    elif theorem == 2:
        if "r" not in bspec:
            raise ConfigError("bounds.r is required for the continuum bound")
        r = float(bspec["r"])
        cov = build_hellinger_covering(model, sc.space, r, radii=bspec.get("radii"),
                                       deltas=bspec.get("deltas"), R=bspec.get("R"))
        eps = float(sc.priors.beliefs[:, model.theta_star].min())
        params = bd.ConcentrationParams.for_model(model, A, rho, sigma, r, eps, R=cov.R,
                                                  d=cov.d)
    else:
        raise ConfigError(f"bounds.theorem must be 1 or 2, got {theorem}")
    return theorem, params, cov, int(bspec.get("k_max", bd.K_MAX))


def _compute_bounds(cfg, sc):
    theorem, params, cov, k_max = _bound_setup(cfg, sc)
    if theorem == 1:
        report = bd.theorem1_N(params, cov, sc.model, k_max, priors=sc.priors)
        if len(cov.band_lower_radii()) >= 3:
            report.extra["assumption3"] = check_assumption3(cov).to_dict()
    else:
        report = bd.theorem2_N(params, cov, k_max)
    return theorem, params, cov, report


def _summary(sc, trace, sigma):
    g = gamma_all(sc.model)
    K = trace.horizon
    out = {"horizon": K, "final_consensus_gap": float(trace.consensus_gap[-1]),
           "concentration_time": {name: concentration_time(trace, name, sigma)
                                  for name in trace.masses},
           "sigma": sigma, "rate_slopes": {}}
    if K >= 10:
        lo = max(1, K // 5)
        for theta in np.flatnonzero(g > 0):
            try:
                slopes = agent_rate_slopes(trace, int(theta), lo, K)
            except ConfigError:
                continue
            out["rate_slopes"][int(theta)] = {"gamma": float(g[theta]),
                                              "slope_mean": float(np.mean(slopes)),
                                              "per_agent": slopes.tolist()}
    return out


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_validate(args, cfg):
    sc = scenario_from_config(cfg)
    from .hypothesis import alpha_lower_bound
    from .network import validate_weights
    report = {"weights": validate_weights(sc.weights, sc.graph).to_dict(),
              "alpha": alpha_lower_bound(sc.model),
              "eta": sc.weights.eta, "lambda_formula": sc.weights.lambda_formula,
              "lambda_empirical": sc.weights.lambda_empirical,
              "gamma": gamma_all(sc.model).tolist()}
    write_atomic(os.path.join(args.out, "validation.json"), _dump(report))
    _say(args, "config valid")
    return EXIT_OK


def cmd_run(args, cfg):
    sc = scenario_from_config(cfg)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    horizon = args.horizon if args.horizon is not None else sc.horizon
    trace = run(sc, seed, horizon=horizon)
    summary = _summary(sc, trace, float(cfg.get("sigma", 0.1)))
    summary["seed"] = seed
    write_atomic(os.path.join(args.out, "trace.csv"), trace.to_csv())
    write_atomic(os.path.join(args.out, "summary.json"), _dump(summary))
    _say(args, f"ran {horizon} steps; final consensus gap {summary['final_consensus_gap']:.3g}")
    return EXIT_OK


def cmd_bounds(args, cfg):
    sc = scenario_from_config(cfg)
    theorem, params, cov, report = _compute_bounds(cfg, sc)
    write_atomic(os.path.join(args.out, "bounds.json"), _dump(report.to_dict()))
    consts = ", ".join(f"{k}={v:.6g}" for k, v in report.log_constants.items())
    _say(args, f"theorem {theorem}: N1_min={report.N1_min} N2_min={report.N2_min} "
               f"N={report.N}  (log-scale constants: {consts})")
    return EXIT_OK


def cmd_covering(args, cfg):
    sc = scenario_from_config(cfg)
    theorem, params, cov, _ = _bound_setup(cfg, sc)
    data = cov.to_dict()
    if cov.kind == "kl" and len(cov.band_lower_radii()) >= 3:
        data["assumption3"] = check_assumption3(cov).to_dict()
    write_atomic(os.path.join(args.out, "covering.json"), _dump(data))
    _say(args, f"{cov.kind} covering: band sizes {cov.cardinalities}, "
               f"overflow {len(cov.overflow)}")
    return EXIT_OK


def _random_subset(rng, m, theta_star=None):
    size = int(rng.integers(1, m + 1))
    return np.sort(rng.choice(m, size=size, replace=False))


def cmd_mc_verify(args, cfg):
    vspec = dict(cfg.get("verify", {}))
    trials = args.trials if args.trials is not None else int(vspec.get("trials", 2000))
    if trials < 1:
        raise ConfigError("trials must be a positive integer")
    sc = scenario_from_config(cfg)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    checks = vspec.get("checks", ["lemma2", "lemma3", "concentration"]
                       if sc.space.kind != "grid" else ["lemma3", "lemma4", "concentration"])
    ks = [int(k) for k in vspec.get("k", [20, 50, 100])]
    theorem, params, cov, report = _compute_bounds(cfg, sc)
    results, failures = {}, []
    qw = sc.space.weights if sc.space.kind == "grid" else None

    if "lemma2" in checks:
        if cov.kind != "kl":
            raise ConfigError("lemma2 needs a KL covering (bounds.theorem = 1)")
        out = []
        for k in ks:
            rep = bd.lemma2_mc(sc.model, cov, k, trials, seed)
            out.append(rep.to_dict())
            if not rep.passed:
                failures.append(f"lemma2 k={k}: {rep.empirical_prob:.4g} > {rep.bound:.4g}")
        results["lemma2"] = out

    if "lemma3" in checks:
        rng = np.random.default_rng(seed)
        out = []
        for idx in range(int(vspec.get("lemma3_instances", 20))):
            k = int(rng.integers(1, 31))
            hist = sample_history(sc.model, k, seed, trial=idx)
            members = _random_subset(rng, sc.num_hypotheses)
            rep = bd.lemma3_check(sc.model, sc.weights, members, hist, k, weights=qw)
            out.append(rep.to_dict())
            if not rep.passed:
                failures.append(f"lemma3 instance {idx}: slack {min(rep.slack):.4g}")
        results["lemma3"] = out

    if "lemma4" in checks:
        if cov.kind != "hellinger":
            raise ConfigError("lemma4 needs a Hellinger covering (bounds.theorem = 2)")
        out = []
        for k in ks:
            rep = bd.lemma4_mc(sc.model, cov, cov.R, k, min(trials, 500), seed, sc.weights,
                               sampler=vspec.get("sampler", "exact"), weights=qw)
            out.append(rep.to_dict())
            if k > 0 and not rep.passed:
                failures.append(f"lemma4 k={k}: a non-vacuous cell bound failed")
        results["lemma4"] = out

    if "concentration" in checks:
        if report.N is None:
            failures.append("concentration: N not reached within k_max")
        else:
            cap = int(vspec.get("cap", 100_000))
            k_eval = min(report.N, cap)
            members = cov.inner if cov.kind == "kl" else hellinger_ball(sc.model, params.r)
            rep = mc_concentration(sc, members, params.sigma, k_eval, trials, seed,
                                   rho=params.rho, parallel=args.parallel)
            d = rep.to_dict()
            d.update({"N": report.N, "capped": k_eval < report.N})
            results["concentration"] = d
            if not rep.passed:
                failures.append(f"concentration: failure frequency {rep.frequency:.4g}")

    if "chain" in checks:
        if cov.kind != "kl":
            raise ConfigError("chain needs a KL covering")
        steps = int(vspec.get("chain_steps", 1000))
        out = []
        for t in range(int(vspec.get("chain_trajectories", 50))):
            hist = sample_history(sc.model, steps, seed, trial=t)
            rep = bd.chain_check(sc.model, sc.weights, sc.priors, cov.inner, hist, params.epsilon)
            out.append(rep.to_dict())
            if not rep.holds:
                failures.append(f"chain trajectory {t}: chain broken")
        results["chain"] = out

    results["bounds"] = report.to_dict()
    results["failures"] = failures
    write_atomic(os.path.join(args.out, "verify.json"), _dump(results))
    if failures:
        for f in failures:
            print(f"FAIL {f}", file=sys.stderr)
        return EXIT_VERIFY
    _say(args, f"all {len(checks)} verification groups passed")
    return EXIT_OK


DEMO_LOCALIZATION = {
    "positions": [[1.0, 1.0], [8.0, 1.0], [4.5, 8.0], [1.0, 6.0], [8.0, 6.0], [4.5, 4.5],
                  [2.5, 3.5]],
    "grid": {"bounds": [[0.0, 9.0], [0.0, 9.0]], "points_per_axis": [9, 9]},
    "theta_star": [6.5, 2.5],
    "noise": {"offsets": [-1.0, 0.0, 1.0], "probs": [0.25, 0.5, 0.25]},
    "bin_width": 1.0,
}


def cmd_localize_demo(args, cfg):
    loc = dict(DEMO_LOCALIZATION)
    if cfg is not None and "localization" in cfg.get("model", {}):
        loc.update(cfg["model"]["localization"])
    graph = make_graph("ring", len(loc["positions"]))
    if cfg is not None and "graph" in cfg:
        from .config import graph_from_config
        graph = graph_from_config(cfg["graph"], cfg.get("_base_dir", "."))
    horizon = args.horizon if args.horizon is not None else int((cfg or {}).get("horizon", 300))
    space = HypothesisSpace.from_dict({"kind": "grid", **loc["grid"]})
    sc = build_localization(loc["positions"], space, loc["theta_star"],
                            loc["noise"]["offsets"], loc["noise"]["probs"],
                            float(loc["bin_width"]), float(loc.get("floor", 1e-4)),
                            graph=graph, horizon=horizon)
    sc.balls = {"source": np.array([sc.model.theta_star])}
    sc.validate()
    seed = args.seed if args.seed is not None else int((cfg or {}).get("seed", 0))
    trace = run(sc, seed, horizon=horizon)
    summary = _summary(sc, trace, 0.1)
    final = trace.snapshots[-1]
    est = space.points[np.argmax(final, axis=1)]
    summary.update({"seed": seed, "theta_star": loc["theta_star"],
                    "estimates": est.tolist(), "positions": loc["positions"]})
    summary.pop("rate_slopes")
    write_atomic(os.path.join(args.out, "trace.csv"), trace.to_csv())
    write_atomic(os.path.join(args.out, "summary.json"), _dump(summary))
    _say(args, f"source at {loc['theta_star']}; agent estimates {est.tolist()}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "bounds": cmd_bounds, "mc-verify": cmd_mc_verify,
            "covering": cmd_covering, "localize-demo": cmd_localize_demo,
            "validate": cmd_validate}


def build_parser():
    parser = argparse.ArgumentParser(prog="belieflab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "localize-demo", help="JSON config path")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--horizon", type=int, default=None)
        p.add_argument("--parallel", type=int, default=os.cpu_count() or 1)
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("BELIEFLAB_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config) if args.config else None
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, AssumptionViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BeliefLabError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

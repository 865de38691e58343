"""JSON experiment configs: parsing, validation and scenario assembly.

Layout (all keys optional unless noted)::

    {
      "graph":   {"generator": "ring", "n": 3} | {"generator": "grid", "rows": 3, "cols": 3}
                 | {"n": 3, "edges": [[0, 1], ...]} | {"file": "graph.txt"},      (required)
      "weights": [[...], ...],            explicit matrix; default lazy Metropolis
      "model":   {"n", "alphabets", "theta_star", "tables"}
                 | {"localization": {"positions", "grid", "theta_star", "noise",
                                     "bin_width", "floor"}},                       (required)
      "space":   {"kind": "finite"} | {"kind": "countable-truncated", "truncation": L},
      "priors":  "uniform" | [[...], ...],
      "horizon": 200,
      "seed":    0,
      "balls":   [{"name": "B", "type": "kl" | "hellinger" | "set", "radius": r, "members": [...]}],
      "sigma":   0.1,
      "bounds":  {"theorem": 1 | 2, "rho", "sigma", "r", "radii", "deltas", "R", "k_max", "epsilon"},
      "verify":  {"checks": [...], "k": [...], "trials": 2000, ...}
    }
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import ConfigError
from .hypothesis import (HypothesisSpace, LikelihoodModel, default_kl_radii, gamma_all,
                         hellinger_ball, kl_ball)
from .network import Graph, WeightMatrix, make_graph
from .scenario import build_localization, make_scenario


def load_config(path):
    """Read and parse a JSON config, reporting line/column on syntax errors."""
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} does not exist")
    with open(path) as fh:
        text = fh.read()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    cfg["_base_dir"] = os.path.dirname(os.path.abspath(path))
    return cfg


def _require(cfg, key, where="config"):
    if key not in cfg:
        raise ConfigError(f"{where}: missing field {key!r}")
    return cfg[key]


def graph_from_config(spec, base_dir="."):
    if not isinstance(spec, dict):
        raise ConfigError("graph: expected an object")
    if "file" in spec:
        path = os.path.join(base_dir, spec["file"])
        try:
            with open(path) as fh:
                return Graph.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"graph.file: {exc}") from None
    if "generator" in spec:
        name = spec["generator"]
        if name == "grid":
            return make_graph("grid", int(_require(spec, "rows", "graph")),
                              int(_require(spec, "cols", "graph")))
        return make_graph(name, int(_require(spec, "n", "graph")))
    n = int(_require(spec, "n", "graph"))
    return Graph(n, frozenset(tuple(e) for e in spec.get("edges", [])))


def _localization(spec, graph, horizon):
    loc = spec["localization"]
    where = "model.localization"
    grid = _require(loc, "grid", where)
    space = HypothesisSpace.from_dict({"kind": "grid", **grid})
    noise = _require(loc, "noise", where)
    return build_localization(
        positions=_require(loc, "positions", where), space=space,
        theta_star=_require(loc, "theta_star", where),
        noise_offsets=_require(noise, "offsets", where + ".noise"),
        noise_probs=_require(noise, "probs", where + ".noise"),
        bin_width=float(_require(loc, "bin_width", where)),
        floor=float(loc.get("floor", 1e-4)), graph=graph, horizon=horizon)


def resolve_ball(spec, model, space=None):
    kind = spec.get("type", "set")
    if kind == "kl":
        return kl_ball(model, float(_require(spec, "radius", "ball")))
    if kind == "hellinger":
        return hellinger_ball(model, float(_require(spec, "radius", "ball")))
    if kind == "set":
        members = np.asarray(_require(spec, "members", "ball"), dtype=int)
        if members.size and (members.min() < 0 or members.max() >= model.num_hypotheses):
            raise ConfigError("ball members outside the hypothesis range")
        return members
    raise ConfigError(f"ball type {kind!r} not in kl/hellinger/set")


def default_kl_ball_radius(model):
    """Radius that keeps exactly the hypotheses with gamma = 0 inside."""
    g = gamma_all(model)
    pos = g[g > 0]
    return 0.9 * float(pos.min()) if pos.size else 1.0


def scenario_from_config(cfg):
    """Build and validate the scenario described by ``cfg``."""
    base = cfg.get("_base_dir", ".")
    graph = graph_from_config(_require(cfg, "graph"), base)
    horizon = int(cfg.get("horizon", 100))
    if horizon < 0:
        raise ConfigError("horizon must be nonnegative")
    mspec = _require(cfg, "model")
    if not isinstance(mspec, dict):
        raise ConfigError("model: expected an object")
    if "localization" in mspec:
        sc = _localization(mspec, graph, horizon)
        model, space = sc.model, sc.space
        meta = sc.meta
    else:
        model = LikelihoodModel.from_dict(mspec)
        space = HypothesisSpace.from_dict(cfg["space"]) if "space" in cfg else \
            HypothesisSpace.finite(model.num_hypotheses)
        if space.kind != "grid" and space.size != model.num_hypotheses:
            space = HypothesisSpace(kind=space.kind, size=model.num_hypotheses,
                                    truncation=space.truncation)
        meta = {}
    weights = None
    if "weights" in cfg:
        weights = WeightMatrix(np.asarray(cfg["weights"], dtype=float))
        if weights.n != graph.n:
            raise ConfigError(f"weights: expected {graph.n}x{graph.n} matrix")
    balls_cfg = cfg.get("balls") or [{"name": "B", "type": "kl",
                                      "radius": default_kl_ball_radius(model)}]
    balls = {}
    for idx, b in enumerate(balls_cfg):
        balls[b.get("name", f"ball{idx}")] = resolve_ball(b, model, space)
    sc = make_scenario(graph, model, space, priors=cfg.get("priors", "uniform"),
                       horizon=horizon, balls=balls, weights=weights, meta=meta)
    sc.validate()
    return sc


def kl_radii_from_config(bspec, model, r):
    if "radii" in bspec:
        return np.asarray(bspec["radii"], dtype=float)
    g = gamma_all(model)
    levels = max(2, int(np.ceil(g.max() / r)) + 1)
    return default_kl_radii(r, levels)

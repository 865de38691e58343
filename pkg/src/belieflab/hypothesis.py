"""Hypothesis sets, likelihood models, divergences and coverings.

A likelihood model holds, for every agent ``i``, a row-stochastic table
``tables[i][theta, s] = l^i(s | theta)`` over that agent's finite observation
alphabet.  The true observation law of agent ``i`` is the row at
``theta_star``.

Coverings partition the hypotheses lying outside a divergence ball around
``theta_star`` into bands.  KL coverings use increasing radii of the average
KL divergence ``gamma``; Hellinger coverings use decreasing radii of the
scaled joint Hellinger distance and refine each band with a greedy
delta-separated net.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import AbsoluteContinuityError, AssumptionViolation, ConfigError

ROW_SUM_TOL = 1e-12


# ---------------------------------------------------------------------------
# Distributions and divergences
# ---------------------------------------------------------------------------

def as_distribution(p, tol=ROW_SUM_TOL) -> np.ndarray:
    """Validate ``p`` as a probability vector and return it as a float array."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ConfigError("distribution must be a non-empty vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ConfigError("distribution entries must be finite and nonnegative")
    if abs(p.sum() - 1.0) > tol:
        raise ConfigError(f"distribution sums to {p.sum()!r}, not 1")
    return p


def kl_divergence(p, q) -> float:
    """D_KL(p || q) in nats, with 0 log(0/q) = 0.

    Raises AbsoluteContinuityError naming the first symbol where p > 0 = q.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ConfigError(f"length mismatch: {p.shape} vs {q.shape}")
    support = p > 0
    bad = np.flatnonzero(support & (q <= 0))
    if bad.size:
        raise AbsoluteContinuityError(int(bad[0]))
    ps, qs = p[support], q[support]
    return max(float(np.sum(ps * (np.log(ps) - np.log(qs)))), 0.0)


def _bhattacharyya(p, q):
    return np.sum(np.sqrt(p * q), axis=-1)


def hellinger_single(p, q) -> float:
    """Hellinger distance with h^2 = (1/2) sum (sqrt p - sqrt q)^2, in [0, 1]."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ConfigError(f"length mismatch: {p.shape} vs {q.shape}")
    h2 = 0.5 * float(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2))
    return math.sqrt(min(max(h2, 0.0), 1.0))


# ---------------------------------------------------------------------------
# Hypothesis spaces and likelihood models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HypothesisSpace:
    """Finite, truncated-countable, or uniform-grid set of hypotheses.

    For grids the points are cell centres of a uniform partition of the box,
    and every point carries the cell volume as quadrature weight.
    """

    kind: str
    size: int = 0
    truncation: Optional[int] = None
    d: int = 0
    bounds: tuple = ()
    points_per_axis: tuple = ()

    def __post_init__(self):
        if self.kind not in ("finite", "countable-truncated", "grid"):
            raise ConfigError(f"unknown hypothesis space kind {self.kind!r}")
        if self.kind == "grid":
            if self.d < 1 or len(self.bounds) != self.d or len(self.points_per_axis) != self.d:
                raise ConfigError("grid needs d, d bounds and d points-per-axis")
            for lo, hi in self.bounds:
                if not hi > lo:
                    raise ConfigError(f"grid bound [{lo}, {hi}] is empty")
            if any(m < 1 for m in self.points_per_axis):
                raise ConfigError("points_per_axis must be positive")
            object.__setattr__(self, "size", int(np.prod(self.points_per_axis)))
        elif self.kind == "countable-truncated":
            if self.truncation is None or self.truncation < 1:
                raise ConfigError("countable-truncated space needs truncation >= 1")
            if self.size == 0:
                object.__setattr__(self, "size", int(self.truncation))
        if self.size < 1:
            raise ConfigError("hypothesis space must be non-empty")

    @classmethod
    def finite(cls, size):
        return cls(kind="finite", size=int(size))

    @classmethod
    def countable(cls, truncation):
        return cls(kind="countable-truncated", size=int(truncation), truncation=int(truncation))

    @classmethod
    def grid(cls, bounds, points_per_axis):
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        return cls(kind="grid", d=len(bounds), bounds=bounds,
                   points_per_axis=tuple(int(m) for m in points_per_axis))

    @property
    def axes(self):
        out = []
        for (lo, hi), m in zip(self.bounds, self.points_per_axis):
            step = (hi - lo) / m
            out.append(lo + step * (np.arange(m) + 0.5))
        return out

    @property
    def points(self) -> np.ndarray:
        """Coordinates, shape (size, d); C-order over axes (last axis fastest)."""
        if self.kind != "grid":
            return np.arange(self.size, dtype=float)[:, None]
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @property
    def weights(self) -> np.ndarray:
        if self.kind != "grid":
            return np.ones(self.size)
        cell = np.prod([(hi - lo) / m for (lo, hi), m in zip(self.bounds, self.points_per_axis)])
        return np.full(self.size, cell)

    @property
    def volume(self) -> float:
        if self.kind != "grid":
            return float(self.size)
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    def index_of(self, point, tol=1e-9) -> int:
        """Grid index of ``point``; ConfigError if it is not a grid point."""
        point = np.asarray(point, dtype=float)
        dist = np.max(np.abs(self.points - point[None, :]), axis=1)
        idx = int(np.argmin(dist))
        if dist[idx] > tol:
            raise ConfigError(f"point {point.tolist()} is not on the grid")
        return idx

    def to_dict(self):
        if self.kind == "grid":
            return {"kind": "grid", "d": self.d, "bounds": [list(b) for b in self.bounds],
                    "points_per_axis": list(self.points_per_axis)}
        out = {"kind": self.kind, "size": self.size}
        if self.truncation is not None:
            out["truncation"] = self.truncation
        return out

    @classmethod
    def from_dict(cls, data):
        kind = data.get("kind", "grid" if "bounds" in data else "finite")
        if kind == "grid":
            space = cls.grid(data["bounds"], data["points_per_axis"])
            if "d" in data and int(data["d"]) != space.d:
                raise ConfigError("grid 'd' disagrees with bounds")
            return space
        if kind == "countable-truncated":
            return cls.countable(data["truncation"])
        return cls.finite(data["size"])


@dataclass(eq=False)
class LikelihoodModel:
    """Per-agent likelihood tables ``tables[i][theta, s]``."""

    tables: list
    theta_star: int

    def __post_init__(self):
        self.tables = [np.array(t, dtype=float) for t in self.tables]
        if not self.tables:
            raise ConfigError("model needs at least one agent")
        m = self.tables[0].shape[0]
        for i, t in enumerate(self.tables):
            if t.ndim != 2 or t.shape[0] != m or t.shape[1] < 1:
                raise ConfigError(f"table of agent {i} must be |Theta| x |S^{i}| with |Theta| = {m}")
            if np.any(t < 0) or not np.all(np.isfinite(t)):
                raise ConfigError(f"table of agent {i} has negative or non-finite entries")
            dev = np.abs(t.sum(axis=1) - 1.0)
            if np.any(dev > ROW_SUM_TOL):
                theta = int(np.argmax(dev))
                raise ConfigError(f"row {theta} of agent {i} sums to {t[theta].sum()!r}")
            t.setflags(write=False)
        if not 0 <= self.theta_star < m:
            raise ConfigError(f"theta_star={self.theta_star} outside [0, {m})")

    @property
    def n(self) -> int:
        return len(self.tables)

    @property
    def num_hypotheses(self) -> int:
        return self.tables[0].shape[0]

    @property
    def alphabets(self) -> list:
        return [t.shape[1] for t in self.tables]

    def truth(self, i) -> np.ndarray:
        """f^i, the observation law of agent i."""
        return self.tables[i][self.theta_star]

    def log_tables(self):
        cached = self.__dict__.get("_log_tables")
        if cached is None:
            with np.errstate(divide="ignore"):
                cached = [np.log(t) for t in self.tables]
            for lt in cached:
                lt.setflags(write=False)
            self.__dict__["_log_tables"] = cached
        return cached

    def to_dict(self):
        return {"n": self.n, "alphabets": self.alphabets, "theta_star": self.theta_star,
                "tables": [t.tolist() for t in self.tables]}

    @classmethod
    def from_dict(cls, data):
        try:
            model = cls(tables=data["tables"], theta_star=int(data["theta_star"]))
        except KeyError as exc:
            raise ConfigError(f"model is missing field {exc.args[0]!r}") from None
        if "n" in data and int(data["n"]) != model.n:
            raise ConfigError(f"model 'n'={data['n']} but {model.n} tables given")
        if "alphabets" in data and list(data["alphabets"]) != model.alphabets:
            raise ConfigError("model 'alphabets' disagree with table widths")
        return model

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def alpha_lower_bound(model: LikelihoodModel) -> float:
    """min l^i(s|theta) over all (i, theta, s) with f^i(s) > 0."""
    alpha = math.inf
    offenders = []
    for i, t in enumerate(model.tables):
        relevant = t[:, model.truth(i) > 0]
        alpha = min(alpha, float(relevant.min()))
        for theta, s in zip(*np.nonzero(relevant <= 0)):
            col = np.flatnonzero(model.truth(i) > 0)[s]
            offenders.append((i, int(theta), int(col)))
    if offenders:
        raise AssumptionViolation(
            f"likelihood lower bound alpha is 0 at (agent, theta, symbol) {offenders[:10]}",
            offenders)
    return alpha


# ---------------------------------------------------------------------------
# gamma, balls and pairwise distances
# ---------------------------------------------------------------------------

def gamma_all(model: LikelihoodModel) -> np.ndarray:
    """gamma(theta) for every hypothesis: mean over agents of KL(f^i || l^i(.|theta))."""
    total = np.zeros(model.num_hypotheses)
    for t in model.tables:
        f = t[model.theta_star]
        support = f > 0
        rows = t[:, support]
        if np.any(rows <= 0):
            theta, s = np.argwhere(rows <= 0)[0]
            raise AbsoluteContinuityError(
                int(np.flatnonzero(support)[s]),
                f"hypothesis {theta} gives zero likelihood to symbol "
                f"{int(np.flatnonzero(support)[s])} observed under the truth")
        fs = f[support]
        total += np.maximum(np.sum(fs * (np.log(fs) - np.log(rows)), axis=1), 0.0)
    total /= model.n
    total[model.theta_star] = 0.0
    return total


def gamma(model: LikelihoodModel, theta: int) -> float:
    """Average per-agent KL divergence from the truth to hypothesis ``theta``."""
    vals = [kl_divergence(model.truth(i), model.tables[i][theta]) for i in range(model.n)]
    return float(np.mean(vals))


def kl_ball(model: LikelihoodModel, r: float, gammas=None) -> np.ndarray:
    """Indices with gamma(theta) <= r (sorted)."""
    if r < 0:
        raise ConfigError("ball radius must be nonnegative")
    g = gamma_all(model) if gammas is None else gammas
    return np.flatnonzero(g <= r)


def _joint_h2(sq_a, sq_b):
    """1 - prod_i BC_i from per-agent squared distances, without cancellation.

    ``sq_a``/``sq_b`` are lists of per-agent sqrt-probability arrays whose last
    axis is the alphabet; broadcasting gives pairwise results.
    """
    log_bc = 0.0
    for ra, rb in zip(sq_a, sq_b):
        h2 = np.clip(0.5 * np.sum((ra - rb) ** 2, axis=-1), 0.0, 1.0)
        with np.errstate(divide="ignore"):
            log_bc = log_bc + np.log1p(-h2)
    return -np.expm1(log_bc)


def hellinger_joint(model: LikelihoodModel, a: int, b: int) -> float:
    """(1/sqrt n) times the Hellinger distance of the two product measures."""
    roots = [np.sqrt(t) for t in model.tables]
    h2 = _joint_h2([r[a] for r in roots], [r[b] for r in roots])
    return math.sqrt(float(np.clip(h2, 0.0, 1.0)) / model.n)


def hellinger_matrix(model: LikelihoodModel) -> np.ndarray:
    """All pairwise scaled joint Hellinger distances, shape (|Theta|, |Theta|)."""
    roots = [np.sqrt(t) for t in model.tables]
    h2 = _joint_h2([r[:, None, :] for r in roots], [r[None, :, :] for r in roots])
    return np.sqrt(np.clip(h2, 0.0, 1.0) / model.n)


def hellinger_from_truth(model: LikelihoodModel) -> np.ndarray:
    roots = [np.sqrt(t) for t in model.tables]
    h2 = _joint_h2(roots, [r[model.theta_star] for r in roots])
    return np.sqrt(np.clip(h2, 0.0, 1.0) / model.n)


def hellinger_ball(model: LikelihoodModel, r: float) -> np.ndarray:
    return np.flatnonzero(hellinger_from_truth(model) <= r)


# ---------------------------------------------------------------------------
# Coverings
# ---------------------------------------------------------------------------

@dataclass
class Covering:
    """Band decomposition of the hypotheses outside a ball around ``center``.

    ``kind == "kl"``: band l holds r_l < gamma <= r_{l+1}; ``overflow`` holds
    gamma > r_L.  ``kind == "hellinger"``: band l holds
    r_{l+1} < hbar <= r_l for l < L_r, each refined by a delta_l net.
    """

    kind: str
    center: int
    radii: np.ndarray
    inner: np.ndarray
    bands: list
    overflow: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    truncation: Optional[int] = None
    num_hypotheses: int = 0
    # Hellinger-only
    deltas: Optional[np.ndarray] = None
    nets: Optional[list] = None
    cells: Optional[list] = None
    L_r: Optional[int] = None
    R: Optional[float] = None
    d: Optional[int] = None

    @property
    def cardinalities(self) -> list:
        return [len(b) for b in self.bands]

    @property
    def net_sizes(self) -> list:
        return [len(z) for z in (self.nets or [])]

    def band_lower_radii(self):
        """(lower radius, count) per band, overflow included, for KL coverings."""
        pairs = [(float(self.radii[l]), len(b)) for l, b in enumerate(self.bands)]
        if len(self.overflow):
            pairs.append((float(self.radii[-1]), len(self.overflow)))
        return pairs

    def packing_comparison(self):
        """Measured net sizes K_l next to delta_l^{-d}; no direction is asserted."""
        if self.nets is None:
            return []
        return [{"band": l + 1, "K": len(z), "delta": float(self.deltas[l]),
                 "delta_pow_minus_d": float(self.deltas[l]) ** (-self.d),
                 "K_ge_delta_pow": len(z) >= float(self.deltas[l]) ** (-self.d)}
                for l, z in enumerate(self.nets)]

    def to_dict(self):
        out = {"kind": self.kind, "center": self.center, "radii": self.radii.tolist(),
               "inner": self.inner.tolist(), "bands": [b.tolist() for b in self.bands],
               "cardinalities": self.cardinalities, "overflow": self.overflow.tolist(),
               "num_hypotheses": self.num_hypotheses, "truncation": self.truncation}
        if self.kind == "hellinger":
            out.update({"deltas": self.deltas.tolist(), "L_r": self.L_r, "R": self.R,
                        "d": self.d, "nets": [z.tolist() for z in self.nets],
                        "net_sizes": self.net_sizes,
                        "cells": [[c.tolist() for c in band] for band in self.cells],
                        "packing_comparison": self.packing_comparison()})
        return out


def _strictly_monotone(radii, increasing):
    diffs = np.diff(radii)
    return bool(np.all(diffs > 0) if increasing else np.all(diffs < 0))


def default_kl_radii(r, levels):
    return r * np.arange(1, levels + 1, dtype=float)


def build_kl_covering(model: LikelihoodModel, radii: Sequence[float],
                      space: Optional[HypothesisSpace] = None, gammas=None) -> Covering:
    """KL bands B_{r_{l+1}} minus B_{r_l} generated by increasing ``radii``."""
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size < 1 or radii[0] <= 0:
        raise ConfigError("radii must be a non-empty sequence starting at r > 0")
    if not _strictly_monotone(radii, increasing=True):
        raise ConfigError(f"KL radii must be strictly increasing, got {radii.tolist()}")
    g = gamma_all(model) if gammas is None else np.asarray(gammas, dtype=float)
    inner = np.flatnonzero(g <= radii[0])
    bands = [np.flatnonzero((g > lo) & (g <= hi)) for lo, hi in zip(radii[:-1], radii[1:])]
    overflow = np.flatnonzero(g > radii[-1])
    return Covering(kind="kl", center=model.theta_star, radii=radii, inner=inner,
                    bands=bands, overflow=overflow,
                    truncation=space.truncation if space is not None else None,
                    num_hypotheses=len(g))


def max_delta_separated(points: Sequence, delta: float, metric: Callable) -> list:
    """Greedy maximal delta-separated subset, scanning ``points`` in order.

    A point is accepted iff it is at distance >= delta from every point
    accepted so far, so every rejected point lies within < delta of the net.
    """
    if delta <= 0:
        raise ConfigError("delta must be positive")
    net = []
    for p in points:
        if all(metric(p, z) >= delta for z in net):
            net.append(p)
    return net


def default_hellinger_radii(r):
    """r_l = 2^{1-l} for l = 1 .. L_r, where r_{L_r} is the first radius <= r."""
    if not 0 < r <= 1:
        raise ConfigError("Hellinger target radius must lie in (0, 1]")
    radii = [1.0]
    while radii[-1] > r:
        radii.append(radii[-1] / 2)
    return np.array(radii)


def default_deltas(radii, R):
    """delta_l = (r_{l+1} - R)/2, clamped to stay positive."""
    radii = np.asarray(radii, dtype=float)
    nxt = radii[1:]
    return np.maximum((nxt - R) / 2, 1e-6 * nxt)


def build_hellinger_covering(model: LikelihoodModel, space: HypothesisSpace, r: float,
                             radii=None, deltas=None, R=None, dist=None) -> Covering:
    """Hellinger bands around theta* with greedy delta_l nets and nearest-point cells."""
    if not 0 < r <= 1:
        raise ConfigError(f"target radius r={r} must lie in (0, 1]")
    radii = default_hellinger_radii(r) if radii is None else np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size < 1 or radii[0] != 1.0:
        raise ConfigError("Hellinger radii must start at r_1 = 1")
    if not _strictly_monotone(radii, increasing=False):
        raise ConfigError(f"Hellinger radii must be strictly decreasing, got {radii.tolist()}")
    hits = np.flatnonzero(radii <= r)
    if hits.size == 0:
        raise ConfigError(f"no radius <= r={r} in {radii.tolist()}")
    L_r = int(hits[0]) + 1
    if R is None:
        R = radii[L_r - 1] / 2
    if deltas is None:
        deltas = default_deltas(radii[:L_r], R)
    deltas = np.asarray(deltas, dtype=float)[: L_r - 1]
    if deltas.size < L_r - 1 or np.any(deltas <= 0):
        raise ConfigError(f"need {L_r - 1} positive deltas, got {deltas.tolist()}")

    H = hellinger_matrix(model) if dist is None else dist
    h_star = H[model.theta_star]
    inner = np.flatnonzero(h_star <= radii[L_r - 1])
    bands, nets, cells = [], [], []
    for l in range(L_r - 1):
        members = np.flatnonzero((h_star > radii[l + 1]) & (h_star <= radii[l]))
        net = max_delta_separated(list(members), deltas[l], lambda a, b: H[a, b])
        net = np.array(net, dtype=int)
        if len(members):
            # argmin returns the lowest net index on ties
            owner = np.argmin(H[np.ix_(members, net)], axis=1)
            band_cells = [members[owner == m] for m in range(len(net))]
        else:
            band_cells = []
        bands.append(members)
        nets.append(net)
        cells.append(band_cells)
    overflow = np.flatnonzero(h_star > radii[0])
    return Covering(kind="hellinger", center=model.theta_star, radii=radii[:L_r], inner=inner,
                    bands=bands, overflow=overflow, truncation=space.truncation,
                    num_hypotheses=model.num_hypotheses, deltas=deltas, nets=nets,
                    cells=cells, L_r=L_r, R=float(R), d=space.d if space.kind == "grid" else 1)


# ---------------------------------------------------------------------------
# Band-series convergence heuristic
# ---------------------------------------------------------------------------

@dataclass
class SeriesReport:
    increments: list
    partial_sums: list
    verdict: str
    note: str = "numerical heuristic on a finite prefix, not a proof of convergence"

    def to_dict(self):
        return {"increments": self.increments, "partial_sums": self.partial_sums,
                "verdict": self.verdict, "note": self.note}


def series_verdict(radii, log_counts, tail_levels=3, tol=1e-6) -> SeriesReport:
    """Partial sums of sum_l exp(-r_l^2 + log N_l); ``log_counts`` = -inf for empty bands."""
    radii = np.asarray(radii, dtype=float)
    log_terms = -radii ** 2 + np.asarray(log_counts, dtype=float)
    with np.errstate(over="ignore"):
        inc = np.exp(log_terms)
    partial = np.cumsum(inc)
    tail = log_terms[-tail_levels:] if tail_levels > 0 else log_terms[:0]
    tail_inc = inc[-tail_levels:] if tail_levels > 0 else inc[:0]
    if tail.size and np.all(tail_inc < tol) and np.all(np.diff(tail_inc) <= 0):
        verdict = "converged"
    elif tail.size > 1 and np.all(np.diff(tail) > 0):
        verdict = "diverging"
    else:
        verdict = "inconclusive"
    return SeriesReport(inc.tolist(), partial.tolist(), verdict)


def check_assumption3(cov: Covering, tail_levels=3, tol=1e-6) -> SeriesReport:
    """Heuristic convergence check for the band series of a KL covering."""
    pairs = cov.band_lower_radii() if cov.kind == "kl" else [
        (float(cov.radii[l]), len(b)) for l, b in enumerate(cov.bands)]
    if len(pairs) < tail_levels:
        raise ConfigError(f"covering has {len(pairs)} bands, fewer than tail_levels={tail_levels}")
    radii = [p[0] for p in pairs]
    with np.errstate(divide="ignore"):
        log_counts = np.log([p[1] for p in pairs])
    return series_verdict(radii, log_counts, tail_levels, tol)

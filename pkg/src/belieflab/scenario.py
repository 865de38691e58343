"""Experiment scenarios, seeded simulation runs, and empirical learning metrics.

Randomness is organised as one counter-based (Philox) stream per
(root seed, trial, agent); the t-th draw of a stream is agent i's
observation at step t.  Trials therefore produce identical data no matter
how they are grouped into batches or spread over worker processes.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import beliefs as bl
from .errors import ConfigError, AssumptionViolation
from .hypothesis import HypothesisSpace, LikelihoodModel, alpha_lower_bound, gamma_all
from .network import Graph, WeightMatrix, lazy_metropolis, ring, validate_weights

NEVER = None  # sentinel for "threshold never reached"
CHUNK = 2048


# ---------------------------------------------------------------------------
# Randomness and observation sampling
# ---------------------------------------------------------------------------

def agent_streams(root_seed, trial, n):
    """One Philox generator per agent for a given trial."""
    return [np.random.Generator(np.random.Philox(np.random.SeedSequence(
        int(root_seed), spawn_key=(int(trial), i)))) for i in range(n)]


class ObservationSampler:
    """Inverse-CDF sampling of each agent's symbols from f^i."""

    def __init__(self, model: LikelihoodModel):
        self.cdfs = []
        for i in range(model.n):
            c = np.cumsum(model.truth(i))
            c[-1] = 1.0
            self.cdfs.append(c)

    def symbols(self, streams, count):
        """(count, n) symbols drawn from per-agent streams."""
        out = np.empty((count, len(self.cdfs)), dtype=np.int64)
        for i, (g, c) in enumerate(zip(streams, self.cdfs)):
            out[:, i] = np.searchsorted(c, g.random(count), side="right")
        return out


def sample_history(model, k, root_seed, trial=0):
    """k rounds of observations for one trial, shape (k, n)."""
    return ObservationSampler(model).symbols(agent_streams(root_seed, trial, model.n), k)


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

@dataclass
class Scenario:
    graph: Graph
    weights: WeightMatrix
    model: LikelihoodModel
    space: HypothesisSpace
    priors: bl.BeliefState
    horizon: int = 100
    balls: dict = field(default_factory=dict)
    epsilon: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model.n != self.graph.n:
            raise ConfigError(f"model has {self.model.n} agents but graph has {self.graph.n} nodes")
        if self.space.size != self.model.num_hypotheses:
            raise ConfigError("hypothesis space size differs from model table height")
        if self.priors.log_beliefs.shape != (self.model.n, self.model.num_hypotheses):
            raise ConfigError("prior shape must be n x |Theta|")
        if self.horizon < 0:
            raise ConfigError("horizon must be nonnegative")
        self.balls = {name: np.asarray(m, dtype=int) for name, m in self.balls.items()}

    def validate(self):
        """Raise if the weights or model break the standing assumptions."""
        report = validate_weights(self.weights, self.graph)
        if not report.ok:
            raise AssumptionViolation(f"weight matrix fails conditions {sorted(report.failures())}",
                                      [report.failures()])
        alpha_lower_bound(self.model)
        if self.priors.beliefs.min() < self.epsilon:
            raise ConfigError("initial beliefs fall below epsilon")
        return report

    @property
    def n(self):
        return self.model.n

    @property
    def num_hypotheses(self):
        return self.model.num_hypotheses


def make_scenario(graph, model, space=None, priors="uniform", horizon=100, balls=None,
                  weights=None, epsilon=None, meta=None) -> Scenario:
    """Assemble a scenario, defaulting to lazy Metropolis weights and uniform priors."""
    space = space or HypothesisSpace.finite(model.num_hypotheses)
    weights = weights if weights is not None else lazy_metropolis(graph)
    if not isinstance(weights, WeightMatrix):
        weights = WeightMatrix(weights)
    if isinstance(priors, str):
        if priors != "uniform":
            raise ConfigError(f"unknown prior spec {priors!r}")
        state = bl.uniform_state(model.n, model.num_hypotheses)
    elif isinstance(priors, bl.BeliefState):
        state = priors
    else:
        p = np.atleast_2d(np.asarray(priors, dtype=float))
        if p.shape[0] == 1:
            p = np.repeat(p, model.n, axis=0)
        state = bl.state_from_priors(p)
    if epsilon is None:
        epsilon = float(state.beliefs[:, model.theta_star].min())
    return Scenario(graph, weights, model, space, state, horizon, balls or {}, epsilon, meta or {})


def quantize(values, lo, bin_width):
    return np.floor((np.asarray(values) - lo) / bin_width + 1e-9).astype(int)


def localization_tables(positions, points, noise_offsets, noise_probs, bin_width, floor=1e-4):
    """Quantised distance-plus-noise likelihood tables, one per agent."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    offsets = np.asarray(noise_offsets, dtype=float)
    probs = np.asarray(noise_probs, dtype=float)
    if offsets.shape != probs.shape or offsets.ndim != 1 or offsets.size == 0:
        raise ConfigError("noise needs matching 1-d offsets and probabilities")
    if np.any(probs < 0) or abs(probs.sum() - 1) > 1e-12:
        raise ConfigError("noise probabilities must be a distribution")
    if bin_width <= 0:
        raise ConfigError("bin width must be positive")
    if floor < 0:
        raise ConfigError("probability floor must be nonnegative")
    tables, edges = [], []
    for x in positions:
        dist = np.linalg.norm(points - x[None, :], axis=1)
        values = dist[:, None] + offsets[None, :]
        lo = values.min()
        bins = quantize(values, lo, bin_width)
        size = int(bins.max()) + 1
        t = np.zeros((len(points), size))
        rows = np.repeat(np.arange(len(points)), offsets.size)
        np.add.at(t, (rows, bins.ravel()), np.tile(probs, len(points)))
        t += floor
        t /= t.sum(axis=1, keepdims=True)
        tables.append(t)
        edges.append(lo + bin_width * np.arange(size + 1))
    return tables, edges


def build_localization(positions, space: HypothesisSpace, theta_star, noise_offsets,
                       noise_probs, bin_width, floor=1e-4, graph=None, horizon=100,
                       balls=None) -> Scenario:
    """Source-localisation scenario: agent i observes |x^i - theta*| + W, quantised."""
    if space.kind != "grid":
        raise ConfigError("localisation needs a grid hypothesis space")
    star = space.index_of(theta_star)
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.shape[1] != space.d:
        raise ConfigError(f"positions must be {space.d}-dimensional")
    tables, edges = localization_tables(positions, space.points, noise_offsets, noise_probs,
                                        bin_width, floor)
    model = LikelihoodModel(tables, star)
    alpha_lower_bound(model)
    g = gamma_all(model)
    twins = np.flatnonzero(g <= 1e-15)
    twins = twins[twins != star]
    if twins.size:
        warnings.warn(f"hypotheses {twins.tolist()} are indistinguishable from theta* "
                      "(gamma = 0); the source is not identifiable", stacklevel=2)
    graph = graph if graph is not None else ring(len(positions))
    meta = {"positions": positions.tolist(), "bin_edges": [e.tolist() for e in edges],
            "theta_star_point": list(map(float, theta_star)), "bin_width": bin_width,
            "floor": floor}
    return make_scenario(graph, model, space, horizon=horizon, balls=balls, meta=meta)


# ---------------------------------------------------------------------------
# Traces and single runs
# ---------------------------------------------------------------------------

@dataclass
class Trace:
    """Time-indexed record of one run."""

    snapshot_ks: np.ndarray
    snapshots: np.ndarray          # (len(snapshot_ks), n, |Theta|) log-beliefs
    observations: np.ndarray       # (K, n); row t-1 holds the symbols of step t
    consensus_gap: np.ndarray      # (K+1,)
    masses: dict                   # ball name -> (K+1, n)
    balls: dict = field(default_factory=dict)

    @property
    def horizon(self):
        return len(self.consensus_gap) - 1

    def log_beliefs_at(self, k):
        pos = np.searchsorted(self.snapshot_ks, k)
        if pos == len(self.snapshot_ks) or self.snapshot_ks[pos] != k:
            raise KeyError(f"no snapshot stored for k={k}")
        return self.snapshots[pos]

    def to_csv(self, fh=None):
        """Write ``kind,k,agent,theta_index,ball,value`` rows; returns text if fh is None."""
        own = fh is None
        fh = io.StringIO() if own else fh
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "k", "agent", "theta_index", "ball", "value"])
        for k, snap in zip(self.snapshot_ks, self.snapshots):
            b = np.exp(snap)
            for i in range(b.shape[0]):
                for theta in range(b.shape[1]):
                    w.writerow(["belief", int(k), i, theta, "", repr(float(b[i, theta]))])
        for k, gap in enumerate(self.consensus_gap):
            w.writerow(["consensus_gap", k, "", "", "", repr(float(gap))])
        for name, mass in self.masses.items():
            for k in range(mass.shape[0]):
                for i in range(mass.shape[1]):
                    w.writerow(["mass_in_ball", k, i, "", name, repr(float(mass[k, i]))])
        if own:
            return fh.getvalue()
        return None


def _keep_snapshot(k, thin_after, thin_every):
    return k <= thin_after or k % thin_every == 0


def _ball_masses(log_beliefs, balls):
    return {name: np.exp(logsumexp(log_beliefs[..., members], axis=-1)) if len(members)
            else np.zeros(log_beliefs.shape[:-1]) for name, members in balls.items()}


def run(scenario: Scenario, seed, horizon=None, thin_after=1000, thin_every=10) -> Trace:
    """Simulate one trajectory with ``step``; trial 0 of the given root seed."""
    K = scenario.horizon if horizon is None else horizon
    model, A = scenario.model, scenario.weights
    sampler = ObservationSampler(model)
    streams = agent_streams(seed, 0, model.n)
    state = scenario.priors
    obs = np.empty((K, model.n), dtype=np.int64)
    ks, snaps = [0], [state.log_beliefs]
    gaps = np.empty(K + 1)
    gaps[0] = bl.consensus_gap(state)
    masses = {name: np.empty((K + 1, model.n)) for name in scenario.balls}
    for name, val in _ball_masses(state.log_beliefs, scenario.balls).items():
        masses[name][0] = val
    for start in range(0, K, CHUNK):
        block = sampler.symbols(streams, min(CHUNK, K - start))
        for off, s in enumerate(block):
            k = start + off + 1
            state = bl.step(state, A, model, s)
            obs[k - 1] = s
            gaps[k] = bl.consensus_gap(state)
            for name, val in _ball_masses(state.log_beliefs, scenario.balls).items():
                masses[name][k] = val
            if _keep_snapshot(k, thin_after, thin_every):
                ks.append(k)
                snaps.append(state.log_beliefs)
    return Trace(np.array(ks), np.array(snaps), obs, gaps, masses, dict(scenario.balls))


# ---------------------------------------------------------------------------
# Batched Monte Carlo
# ---------------------------------------------------------------------------

def _mix(a, lb):
    """sum_j a[:, j] * lb[..., j, :], accumulated in a fixed order."""
    out = a[:, 0, None] * lb[..., 0:1, :]
    for j in range(1, a.shape[1]):
        out = out + a[:, j, None] * lb[..., j:j + 1, :]
    return out


def simulate_batch(scenario: Scenario, root_seed, trial_ids, checkpoints):
    """Run many trials in lock-step; returns {k: normalised log-beliefs (T, n, |Theta|)}."""
    model = scenario.model
    a = scenario.weights.entries
    trial_ids = list(trial_ids)
    checkpoints = sorted(set(int(k) for k in checkpoints))
    if any(k < 0 for k in checkpoints):
        raise ConfigError("checkpoints must be nonnegative")
    T = len(trial_ids)
    lb = np.broadcast_to(scenario.priors.log_beliefs,
                         (T,) + scenario.priors.log_beliefs.shape).copy()
    out = {}
    if 0 in checkpoints:
        out[0] = bl.normalize(lb)
    K = checkpoints[-1] if checkpoints else 0
    sampler = ObservationSampler(model)
    streams = [agent_streams(root_seed, t, model.n) for t in trial_ids]
    logt = [np.ascontiguousarray(lt.T) for lt in model.log_tables()]  # (|S|, |Theta|)
    pending = [k for k in checkpoints if k > 0]
    k = 0
    while k < K:
        c = min(CHUNK, K - k)
        sym = np.stack([sampler.symbols(s, c) for s in streams])  # (T, c, n)
        for off in range(c):
            loglik = np.stack([logt[i][sym[:, off, i]] for i in range(model.n)], axis=1)
            lb = _mix(a, lb) + loglik
            lb -= lb.max(axis=-1, keepdims=True)
            k += 1
            if pending and k == pending[0]:
                out[k] = bl.normalize(lb)
                pending.pop(0)
    return out


def _blocks(trials, parallel):
    parallel = max(1, int(parallel))
    edges = np.linspace(0, trials, parallel + 1).astype(int)
    return [range(lo, hi) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def _failures_block(args):
    scenario, root_seed, ids, k, members, sigma = args
    lb = simulate_batch(scenario, root_seed, ids, [k])[k]
    mass = np.exp(logsumexp(lb[..., members], axis=-1)) if len(members) else np.zeros(lb.shape[:2])
    return mass.min(axis=1)


def batch_min_masses(scenario, members, k, trials, seed, parallel=1):
    """Min over agents of the mass on ``members`` at step k, per trial (trial order)."""
    members = np.asarray(members, dtype=int)
    jobs = [(scenario, seed, blk, k, members, None) for blk in _blocks(trials, parallel)]
    if len(jobs) <= 1:
        parts = [_failures_block(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as ex:
            parts = list(ex.map(_failures_block, jobs))
    return np.concatenate(parts) if parts else np.zeros(0)


@dataclass
class MCReport:
    failures: int
    trials: int
    k: int
    sigma: float
    rho: Optional[float] = None

    @property
    def frequency(self):
        return self.failures / self.trials if self.trials else 0.0

    @property
    def standard_error(self):
        if not self.trials:
            return 0.0
        p = self.rho if self.rho is not None else self.frequency
        return math.sqrt(max(p * (1 - p), 0.0) / self.trials)

    @property
    def passed(self):
        if self.rho is None:
            return None
        return self.frequency <= self.rho + 3 * self.standard_error

    def to_dict(self):
        return {"failures": self.failures, "trials": self.trials, "k": self.k,
                "sigma": self.sigma, "rho": self.rho, "failure_frequency": self.frequency,
                "standard_error": self.standard_error, "passed": self.passed}


def mc_concentration(scenario, ball, sigma, N, trials, seed, rho=None, parallel=1) -> MCReport:
    """Fraction of trials where some agent has mass < 1 - sigma on ``ball`` at k = N."""
    if trials < 0:
        raise ConfigError("trials must be nonnegative")
    members = scenario.balls[ball] if isinstance(ball, str) else np.asarray(ball, dtype=int)
    if sigma >= 1 or trials == 0:
        return MCReport(0, trials, int(N), sigma, rho)
    mins = batch_min_masses(scenario, members, int(N), trials, seed, parallel)
    return MCReport(int(np.sum(mins < 1 - sigma)), trials, int(N), sigma, rho)


# ---------------------------------------------------------------------------
# Empirical metrics on traces
# ---------------------------------------------------------------------------

def concentration_time(trace: Trace, ball, sigma):
    """First k after which every agent keeps mass >= 1 - sigma on the ball; None if never."""
    if sigma >= 1:
        return 0
    mass = trace.masses[ball]
    ok = np.all(mass >= 1 - sigma, axis=1)
    if not ok[-1]:
        return NEVER
    bad = np.flatnonzero(~ok)
    return 0 if bad.size == 0 else int(bad[-1]) + 1


def agent_rate_slopes(trace: Trace, theta, k_min, k_max):
    """Least-squares slope of log mu_k^i(theta) over stored k in [k_min, k_max], per agent."""
    sel = (trace.snapshot_ks >= k_min) & (trace.snapshot_ks <= k_max)
    ks = trace.snapshot_ks[sel].astype(float)
    y = trace.snapshots[sel][:, :, theta]
    finite = np.all(np.isfinite(y), axis=1)
    if not np.all(finite):
        first_bad = int(np.argmin(finite))
        warnings.warn(f"belief at hypothesis {theta} underflows at k={int(ks[first_bad])}; "
                      "window shrunk", stacklevel=2)
        ks, y = ks[:first_bad], y[:first_bad]
    if ks.size < 2:
        raise ConfigError("rate window holds fewer than two stored steps")
    kc = ks - ks.mean()
    return (kc @ (y - y.mean(axis=0))) / (kc @ kc)


def rate_slope(trace: Trace, theta, k_min, k_max) -> float:
    """Agent-averaged log-belief decay rate at ``theta``; compare with -gamma(theta)."""
    return float(np.mean(agent_rate_slopes(trace, theta, k_min, k_max)))

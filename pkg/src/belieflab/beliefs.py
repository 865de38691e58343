"""Log-space belief updates, the k-step closed form, and the mirror-descent oracle.

Beliefs are stored as log-masses: row i of ``log_beliefs`` is log mu^i(theta)
with logsumexp(row) = 0.  On grids the masses already include the
quadrature weight of each point, so set masses are plain sums.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DegenerateLikelihoodError, OracleFailure
from .network import WeightMatrix, matrix_power_rows

NORM_TOL = 1e-9


def _entries(A):
    return A.entries if isinstance(A, WeightMatrix) else np.asarray(A, dtype=float)


@dataclass(frozen=True)
class BeliefState:
    log_beliefs: np.ndarray
    k: int = 0

    def __post_init__(self):
        lb = np.array(self.log_beliefs, dtype=float)
        if lb.ndim != 2:
            raise ConfigError("log_beliefs must be an n x |Theta| array")
        lb.setflags(write=False)
        object.__setattr__(self, "log_beliefs", lb)

    @property
    def n(self):
        return self.log_beliefs.shape[0]

    @property
    def beliefs(self) -> np.ndarray:
        return np.exp(self.log_beliefs)

    def normalization_error(self) -> float:
        return float(np.max(np.abs(logsumexp(self.log_beliefs, axis=1))))

    def argmax(self) -> np.ndarray:
        """Most believed hypothesis per agent (lowest index on ties)."""
        return np.argmax(self.log_beliefs, axis=1)


def uniform_state(n, m) -> BeliefState:
    return BeliefState(np.full((n, m), -np.log(m)))


def state_from_priors(priors, epsilon=0.0) -> BeliefState:
    """Build a state from prior masses (one row per agent, or one shared row).

    Every entry must be strictly positive and at least ``epsilon``.
    """
    p = np.atleast_2d(np.asarray(priors, dtype=float))
    if np.any(p <= 0):
        i, theta = np.argwhere(p <= 0)[0]
        raise ConfigError(f"prior of agent {i} at hypothesis {theta} is not strictly positive")
    if p.min() < epsilon:
        raise ConfigError(f"min prior entry {p.min():g} below epsilon={epsilon:g}")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-12):
        raise ConfigError("each prior row must sum to 1")
    return BeliefState(np.log(p))


def observation_loglik(log_tables, obs):
    """Stack log l^i(obs^i | .) into an (n, |Theta|) array."""
    return np.stack([lt[:, s] for lt, s in zip(log_tables, obs)])


def _check_observations(model, obs):
    obs = np.asarray(obs, dtype=int)
    if obs.shape != (model.n,):
        raise ConfigError(f"need one symbol per agent, got shape {obs.shape}")
    for i, (s, size) in enumerate(zip(obs, model.alphabets)):
        if not 0 <= s < size:
            raise ConfigError(f"symbol {s} of agent {i} outside alphabet of size {size}")
    return obs


def step(state: BeliefState, A, model, obs, weights=None) -> BeliefState:
    """One round: geometric averaging of neighbour beliefs, then a local Bayes update.

    With quadrature ``weights`` the update runs on densities with respect to
    the quadrature measure and is converted back to point masses.
    """
    obs = _check_observations(model, obs)
    a = _entries(A)
    loglik = observation_loglik(model.log_tables(), obs)
    dead = np.flatnonzero(np.all(np.isneginf(loglik), axis=1))
    if dead.size:
        i = int(dead[0])
        raise DegenerateLikelihoodError(
            f"symbol {obs[i]} of agent {i} has zero likelihood under every hypothesis")
    prev = state.log_beliefs
    if weights is None:
        new = a @ prev + loglik
        new -= logsumexp(new, axis=1, keepdims=True)
    else:
        logw = np.log(np.asarray(weights, dtype=float))
        dens = a @ (prev - logw) + loglik
        dens -= logsumexp(dens + logw, axis=1, keepdims=True)
        new = dens + logw
    return BeliefState(new, state.k + 1)


def step_batch(log_beliefs, a, loglik):
    """Unnormalised update on stacked states of shape (..., n, |Theta|).

    Rows are only shifted by their max, which keeps the dynamics identical to
    ``step`` up to a per-row constant; call ``normalize`` before reading masses.
    """
    new = np.matmul(a, log_beliefs)
    new += loglik
    new -= new.max(axis=-1, keepdims=True)
    return new


def normalize(log_beliefs):
    return log_beliefs - logsumexp(log_beliefs, axis=-1, keepdims=True)


def closed_form(mu0: BeliefState, A, model, history, k, i, powers=None) -> np.ndarray:
    """Agent i's log-belief at time k written directly in terms of mu_0 and the data.

    log mu_k^i ~ sum_j [A^k]_ij log mu_0^j + sum_{t=1..k} sum_j [A^{k-t}]_ij log l^j(s_t^j|.)
    """
    history = np.asarray(history, dtype=int).reshape(-1, model.n)
    if history.shape[0] < k:
        raise ConfigError(f"history has {history.shape[0]} steps, need {k}")
    if powers is None:
        powers = matrix_power_rows(A, k)
    log_tables = model.log_tables()
    out = powers[k][i] @ mu0.log_beliefs
    for t in range(1, k + 1):
        out = out + powers[k - t][i] @ observation_loglik(log_tables, history[t - 1])
    return out - logsumexp(out)


def _objective(log_pi, cost, mix_logs, row_weights):
    live = np.isfinite(log_pi)
    pi = np.exp(log_pi[live])
    value = float(pi @ cost[live])
    for w, lm in zip(row_weights, mix_logs):
        value += w * float(pi @ (log_pi[live] - lm[live]))
    return value


def mirror_oracle_step(state: BeliefState, A, model, obs, i, step_size=0.5,
                       tol=1e-12, max_iter=50_000) -> np.ndarray:
    """Minimise E_pi[-log l^i(s^i|.)] + sum_j a_ij KL(pi || mu^j) by exponentiated gradient.

    Returns the minimiser as a probability vector.  Stops once the objective
    decrease falls below ``tol`` and the iterate has stopped moving.
    """
    obs = _check_observations(model, obs)
    a = _entries(A)
    cost = -np.log(model.tables[i][:, obs[i]])
    if np.all(np.isinf(cost)):
        raise DegenerateLikelihoodError(f"symbol {obs[i]} of agent {i} is impossible")
    nbrs = np.flatnonzero(a[i] > 0)
    weights = a[i, nbrs]
    mix_logs = state.log_beliefs[nbrs]
    m = cost.size
    log_pi = np.full(m, -np.log(m))
    value = _objective(log_pi, cost, mix_logs, weights)
    for _ in range(max_iter):
        # gradient of the objective; the +1 terms vanish after normalisation
        grad = cost + weights.sum() * log_pi - weights @ mix_logs
        new = log_pi - step_size * grad
        new -= logsumexp(new)
        new_value = _objective(new, cost, mix_logs, weights)
        live = np.isfinite(new)
        moved = np.max(np.abs(new[live] - log_pi[live]))
        decrease = value - new_value
        log_pi, value = new, new_value
        if 0 <= decrease < tol and moved < tol:
            return np.exp(log_pi)
    raise OracleFailure(f"exponentiated gradient did not converge in {max_iter} iterations")


def belief_mass(state: BeliefState, agent, members) -> float:
    """mu^agent(B) for a set of hypothesis indices (or a boolean mask)."""
    members = np.asarray(members)
    if members.size == 0:
        return 0.0
    sel = state.log_beliefs[agent][members]
    if sel.size == 0:
        return 0.0
    return float(min(np.exp(logsumexp(sel)), 1.0))


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def consensus_gap(state) -> float:
    """Largest total-variation distance between two agents' beliefs."""
    b = state.beliefs if isinstance(state, BeliefState) else np.exp(np.asarray(state))
    n = b.shape[0]
    gap = 0.0
    for u in range(n):
        for v in range(u + 1, n):
            gap = max(gap, total_variation(b[u], b[v]))
    return gap

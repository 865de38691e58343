"""Concentration constants, transient times, and Monte Carlo checks of the lemmas.

All constants and threshold tests are handled as logarithms: for realistic
(alpha, n, lambda) the prefactor exp(8 log(1/alpha) log n / (1 - lambda))
overflows a double long before it becomes interesting.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError
from .hypothesis import Covering, LikelihoodModel, alpha_lower_bound, gamma_all, hellinger_ball
from .network import WeightMatrix, matrix_power_rows
from .scenario import ObservationSampler, agent_streams

K_MAX = 10 ** 6


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

def log_C2(alpha) -> float:
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha={alpha} must lie in (0, 1)")
    return 1.0 / (8.0 * math.log(1.0 / alpha) ** 2)


def constant_C2(alpha) -> float:
    """exp(1 / (8 log^2(1/alpha)))."""
    return math.exp(log_C2(alpha))


def log_C1(alpha, n, lam) -> float:
    """log of exp(8 log(1/alpha) log n / (1 - lambda))."""
    if not 0 < alpha <= 1:
        raise ConfigError(f"alpha={alpha} must lie in (0, 1]")
    if n < 1:
        raise ConfigError("n must be positive")
    if lam >= 1:
        raise ConfigError(f"lambda={lam} must be < 1")
    if n == 1:
        return 0.0
    return 8.0 * math.log(1.0 / alpha) * math.log(n) / (1.0 - lam)


def log_C3(alpha, n, lam, epsilon) -> float:
    if not 0 < epsilon <= 1:
        raise ConfigError(f"epsilon={epsilon} must lie in (0, 1]")
    return -math.log(epsilon) + log_C1(alpha, n, lam)


def constant_C3(alpha, n, lam, epsilon) -> float:
    """(1/epsilon) exp(8 log(1/alpha) log n / (1 - lambda)); may overflow to inf."""
    value = log_C3(alpha, n, lam, epsilon)
    return math.exp(value) if value < 709 else math.inf


# ---------------------------------------------------------------------------
# Monotone threshold scans
# ---------------------------------------------------------------------------

def first_k(pred: Callable[[int], bool], k_max=K_MAX) -> Optional[int]:
    """Smallest k in [1, k_max] with pred(k), for pred monotone in k; None if none.

    Doubling then bisection.
    """
    if k_max < 1:
        return None
    if pred(1):
        return 1
    lo, hi = 1, 2
    while not pred(min(hi, k_max)):
        if hi >= k_max:
            return None
        lo, hi = hi, hi * 2
    hi = min(hi, k_max)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def first_k_linear(pred, k_max) -> Optional[int]:
    for k in range(1, k_max + 1):
        if pred(k):
            return k
    return None


# ---------------------------------------------------------------------------
# Parameters and reports
# ---------------------------------------------------------------------------

@dataclass
class ConcentrationParams:
    rho: float
    sigma: float
    r: float
    alpha: float
    epsilon: float
    lam: float
    n: int
    R: Optional[float] = None
    d: Optional[int] = None

    def __post_init__(self):
        for name in ("rho", "sigma"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name}={v} must lie in the open interval (0, 1)")
        if self.r <= 0:
            raise ConfigError("radius r must be positive")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha={self.alpha} must lie in (0, 1)")
        if not 0 < self.epsilon <= 1:
            raise ConfigError(f"epsilon={self.epsilon} must lie in (0, 1]")
        if self.lam >= 1:
            raise ConfigError(f"lambda={self.lam} must be < 1")
        if self.R is not None and not 0 < self.R < self.r:
            raise ConfigError(f"R={self.R} must satisfy 0 < R < r={self.r}")

    @classmethod
    def for_model(cls, model, A: WeightMatrix, rho, sigma, r, epsilon, R=None, d=None):
        return cls(rho=rho, sigma=sigma, r=r, alpha=alpha_lower_bound(model), epsilon=epsilon,
                   lam=A.lambda_formula, n=model.n, R=R, d=d)


@dataclass
class BoundReport:
    theorem: int
    log_constants: dict
    N1_min: Optional[int]
    N2_min: Optional[int]
    N: Optional[int]
    k_max: int
    bands: list = field(default_factory=list)
    truncation: Optional[int] = None
    notes: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def reached(self):
        return self.N is not None

    def to_dict(self):
        out = asdict(self)
        out["constants_are_log_scale"] = True
        out["reached"] = self.reached
        return out

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _prior_logs(priors, model):
    if priors is None:
        return np.full((model.n, model.num_hypotheses), -math.log(model.num_hypotheses))
    lb = getattr(priors, "log_beliefs", None)
    return np.asarray(lb if lb is not None else np.log(priors), dtype=float)


# ---------------------------------------------------------------------------
# Countable (KL) case
# ---------------------------------------------------------------------------

def theorem1_N(params: ConcentrationParams, cov: Covering, model: LikelihoodModel,
               k_max=K_MAX, priors=None) -> BoundReport:
    """Transient time N = max(N1_min, N2_min) for a KL covering.

    N1: C2 sum_l N_{r_l} exp(-k r_l^2) <= rho (the overflow band counts with
    the last radius).  N2: C3 exp(-k gamma/2) <= sigma prod_i mu_0^i(theta)^(1/n)
    for every hypothesis outside the ball, checked per hypothesis; the
    sufficient band-wise version is reported alongside.
    """
    if cov.kind != "kl":
        raise ConfigError("theorem1_N needs a KL covering")
    lc2 = log_C2(params.alpha)
    lc3 = log_C3(params.alpha, params.n, params.lam, params.epsilon)
    pairs = cov.band_lower_radii()
    radii = np.array([p[0] for p in pairs])
    with np.errstate(divide="ignore"):
        logN = np.log([p[1] for p in pairs]) if pairs else np.zeros(0)

    def n1_log(k):
        if radii.size == 0 or np.all(np.isneginf(logN)):
            return -math.inf
        return lc2 + float(logsumexp(logN - k * radii ** 2))

    log_rho, log_sigma = math.log(params.rho), math.log(params.sigma)
    N1 = first_k(lambda k: n1_log(k) <= log_rho, k_max)

    g = gamma_all(model)
    outside = np.setdiff1d(np.arange(model.num_hypotheses), cov.inner)
    geo = _prior_logs(priors, model).mean(axis=0)  # (1/n) sum_i log mu_0^i(theta)
    notes = []
    if np.any(g[outside] <= 0):
        notes.append("some hypotheses outside the ball have gamma = 0; N2 unreachable")

    def n2_excess(k):
        if outside.size == 0:
            return -math.inf
        return float(np.max(lc3 - 0.5 * k * g[outside] - log_sigma - geo[outside]))

    N2 = first_k(lambda k: n2_excess(k) <= 0, k_max)

    band_N2 = []
    for l, (r_l, count) in enumerate(pairs):
        members = cov.bands[l] if l < len(cov.bands) else cov.overflow
        if count == 0:
            band_N2.append(None)
            continue
        worst_prior = float(geo[members].min())
        band_N2.append(first_k(
            lambda k, r_l=r_l, p=worst_prior: lc3 - 0.5 * k * r_l - log_sigma - p <= 0, k_max))
    nonempty = [v for v, (_, c) in zip(band_N2, pairs) if c]
    N2_band = None if any(v is None for v in nonempty) else max(nonempty, default=1)

    N = None if N1 is None or N2 is None else max(N1, N2)
    k_eval = N if N is not None else k_max
    bands = []
    for l, (r_l, count) in enumerate(pairs):
        members = cov.bands[l] if l < len(cov.bands) else cov.overflow
        entry = {"band": l + 1, "lower_radius": r_l, "count": count,
                 "overflow": l >= len(cov.bands),
                 "log_N1_term": lc2 + math.log(count) - k_eval * r_l ** 2 if count else None,
                 "N2_bandwise": band_N2[l]}
        if count:
            entry["min_gamma"] = float(g[members].min())
        bands.append(entry)
    extra = {"N2_bandwise": N2_band, "n2_criterion": "exact per-hypothesis check on the truncation",
             "log_N1_residual": n1_log(k_eval) - log_rho,
             "log_N2_residual": n2_excess(k_eval)}
    if cov.truncation is not None:
        notes.append(f"hypothesis set truncated at L_trunc={cov.truncation}; tail mass unmodelled")
    return BoundReport(1, {"log_C2": lc2, "log_C3": lc3}, N1, N2, N, int(k_max), bands,
                       cov.truncation, notes, extra)


def theorem1_N2_closed_form(params, model, theta, priors=None) -> int:
    """ceil(2 (log C3 - log sigma - mean_i log mu_0^i(theta)) / gamma(theta)), at least 1."""
    g = gamma_all(model)[theta]
    geo = _prior_logs(priors, model).mean(axis=0)[theta]
    lc3 = log_C3(params.alpha, params.n, params.lam, params.epsilon)
    return max(1, math.ceil(2 * (lc3 - math.log(params.sigma) - geo) / g))


# ---------------------------------------------------------------------------
# Continuum (Hellinger) case
# ---------------------------------------------------------------------------

def theorem2_N(params: ConcentrationParams, cov: Covering, k_max=K_MAX) -> BoundReport:
    """Transient time for a Hellinger covering with uniform initial beliefs.

    N1: sum_l exp(log C1 - k g_l - d log delta_l) <= rho,
    N2: sum_l exp(d log(r_l/R) - 2 k g_l) <= sigma, with g_l = r_{l+1} - delta_l - R.
    """
    if cov.kind != "hellinger":
        raise ConfigError("theorem2_N needs a Hellinger covering")
    R = params.R if params.R is not None else cov.R
    if R is None or R <= 0:
        raise ConfigError("theorem2_N needs an inner radius R > 0")
    d = params.d if params.d is not None else cov.d
    lc1 = log_C1(params.alpha, params.n, params.lam)
    L = cov.L_r - 1
    radii, deltas = cov.radii, cov.deltas
    gaps = np.array([radii[l + 1] - deltas[l] - R for l in range(L)])
    for l, gap in enumerate(gaps):
        if not gap > 0:
            raise ConfigError(f"band {l + 1}: r_{l + 2} - delta_{l + 1} - R = {gap:.6g} is not positive")
    logd = np.log(deltas[:L])
    notes = ["Assumption on the countable band series is not checked for Hellinger coverings"]
    log_rho, log_sigma = math.log(params.rho), math.log(params.sigma)

    def n1_log(k):
        return float(logsumexp(lc1 - k * gaps - d * logd)) if L else -math.inf

    def n2_log(k):
        return float(logsumexp(d * np.log(radii[:L] / R) - 2 * k * gaps)) if L else -math.inf

    N1 = first_k(lambda k: n1_log(k) <= log_rho, k_max)
    N2 = first_k(lambda k: n2_log(k) <= log_sigma, k_max)
    N = None if N1 is None or N2 is None else max(N1, N2)
    k_eval = N if N is not None else k_max
    bands = [{"band": l + 1, "r_l": float(radii[l]), "r_next": float(radii[l + 1]),
              "delta": float(deltas[l]), "gap": float(gaps[l]), "count": len(cov.bands[l]),
              "K": len(cov.nets[l]),
              "log_N1_term": lc1 - k_eval * gaps[l] - d * logd[l],
              "log_N2_term": d * math.log(radii[l] / R) - 2 * k_eval * gaps[l]}
             for l in range(L)]
    extra = {"R": R, "d": d, "L_r": cov.L_r, "log_N1_residual": n1_log(k_eval) - log_rho,
             "log_N2_residual": n2_log(k_eval) - log_sigma,
             "packing_comparison": cov.packing_comparison()}
    return BoundReport(2, {"log_C1": lc1}, N1, N2, N, int(k_max), bands, cov.truncation,
                       notes, extra)


# ---------------------------------------------------------------------------
# Log-likelihood ratio sums
# ---------------------------------------------------------------------------

def llr_tables(model):
    """log(l^i(s|theta) / l^i(s|theta*)) per agent, shape (|Theta|, |S^i|)."""
    out = []
    for lt in model.log_tables():
        with np.errstate(invalid="ignore"):
            out.append(lt - lt[model.theta_star][None, :])
    return out


def vbar_all(model, history, k) -> np.ndarray:
    """vbar_k(theta) for every theta: sum_{t<=k} (1/n) sum_i log(l^i(s_t^i|theta)/l^i(s_t^i|theta*))."""
    history = np.asarray(history, dtype=int).reshape(-1, model.n)
    if history.shape[0] < k:
        raise ConfigError(f"history has {history.shape[0]} steps, need {k}")
    total = np.zeros(model.num_hypotheses)
    for i, llr in enumerate(llr_tables(model)):
        counts = np.bincount(history[:k, i], minlength=llr.shape[1])
        total += llr @ counts
    return total / model.n


def vbar(model, theta, history, k) -> float:
    return float(vbar_all(model, history, k)[theta])


def _sample_counts(model, k, trials, seed):
    """Per-agent symbol counts over k steps for each trial: list of (trials, |S^i|)."""
    sampler = ObservationSampler(model)
    counts = [np.zeros((trials, a), dtype=np.int64) for a in model.alphabets]
    for t in range(trials):
        sym = sampler.symbols(agent_streams(seed, t, model.n), k)
        for i in range(model.n):
            counts[i][t] = np.bincount(sym[:, i], minlength=model.alphabets[i])
    return counts


def binomial_se(p, trials):
    p = min(max(p, 0.0), 1.0)
    return math.sqrt(p * (1 - p) / trials) if trials else 0.0


@dataclass
class TailReport:
    k: int
    trials: int
    hits: int
    bound: float
    log_bound: float
    vacuous: bool
    passed: Optional[bool]
    extra: dict = field(default_factory=dict)

    @property
    def empirical_prob(self):
        return self.hits / self.trials if self.trials else 0.0

    def to_dict(self):
        out = asdict(self)
        out["empirical_prob"] = self.empirical_prob
        return out


def lemma2_bound_log(alpha, cov: Covering, k) -> float:
    pairs = [(r, c) for r, c in cov.band_lower_radii() if c]
    if not pairs:
        return -math.inf
    radii = np.array([p[0] for p in pairs])
    logN = np.log([p[1] for p in pairs])
    return log_C2(alpha) + float(logsumexp(logN - k * radii ** 2))


def lemma2_mc(model: LikelihoodModel, cov: Covering, k, trials, seed, alpha=None) -> TailReport:
    """Monte Carlo frequency of {exists theta outside the ball: vbar_k(theta) >= -(k/2) gamma(theta)}.

    Compared with C2 sum_l N_{r_l} exp(-k r_l^2); the report also carries the
    standard bounded-differences (McDiarmid) bound for the same event.
    """
    alpha = alpha_lower_bound(model) if alpha is None else alpha
    g = gamma_all(model)
    outside = np.setdiff1d(np.arange(model.num_hypotheses), cov.inner)
    lb = lemma2_bound_log(alpha, cov, k)
    bound = math.exp(min(lb, 700.0))
    if outside.size == 0 or trials == 0:
        return TailReport(k, trials, 0, bound, lb, bound >= 1, True)
    counts = _sample_counts(model, k, trials, seed)
    v = np.zeros((trials, model.num_hypotheses))
    for c, llr in zip(counts, llr_tables(model)):
        v += c @ llr.T
    v /= model.n
    hits = int(np.sum(np.any(v[:, outside] >= -0.5 * k * g[outside], axis=1)))
    vacuous = bound >= 1
    passed = True if vacuous else hits / trials <= bound + 3 * binomial_se(bound, trials)
    mcd = float(logsumexp(-k * g[outside] ** 2 / (8 * math.log(1 / alpha) ** 2)))
    extra = {"log_mcdiarmid_bound": mcd,
             "log_pointwise_bound": log_C2(alpha) + float(logsumexp(-k * g[outside] ** 2)),
             "mean_vbar": v[:, outside].mean(axis=0).tolist(),
             "minus_k_gamma": (-k * g[outside]).tolist()}
    return TailReport(k, trials, hits, bound, lb, vacuous, passed, extra)


# ---------------------------------------------------------------------------
# Densities of sets of hypotheses
# ---------------------------------------------------------------------------

def _weighted_loglik(model, A, history, k, i):
    """sum_{t=1..k} sum_j [A^{k-t}]_ij log l^j(s_t^j | theta), for every theta."""
    history = np.asarray(history, dtype=int).reshape(-1, model.n)
    if history.shape[0] < k:
        raise ConfigError(f"history has {history.shape[0]} steps, need {k}")
    powers = matrix_power_rows(A, max(k - 1, 0))
    total = np.zeros(model.num_hypotheses)
    for t in range(1, k + 1):
        w = powers[k - t][i]
        for j, lt in enumerate(model.log_tables()):
            if w[j] != 0:
                total += w[j] * lt[:, history[t - 1, j]]
    return total


def _plain_loglik(model, history, k):
    history = np.asarray(history, dtype=int).reshape(-1, model.n)
    total = np.zeros(model.num_hypotheses)
    for j, lt in enumerate(model.log_tables()):
        counts = np.bincount(history[:k, j], minlength=lt.shape[1])
        nz = counts > 0
        total += lt[:, nz] @ counts[nz]
    return total


def _prior_masses(model, weights):
    if weights is None:
        return np.full(model.num_hypotheses, 1.0 / model.num_hypotheses)
    w = np.asarray(weights, dtype=float)
    return w / w.sum()


def _set_log_mass(log_prior, members):
    members = np.asarray(members, dtype=int)
    if members.size == 0:
        raise ConfigError("set has zero prior measure")
    return float(logsumexp(log_prior[members]))


def log_density_g(model, members, history, k, weights=None) -> float:
    """log of int_B prod_t prod_j l^j(s_t^j|theta) dmu_0(theta) (not normalised by mu_0(B))."""
    log_prior = np.log(_prior_masses(model, weights))
    _set_log_mass(log_prior, members)
    members = np.asarray(members, dtype=int)
    return float(logsumexp(log_prior[members] + _plain_loglik(model, history, k)[members]))


def log_density_g_i(model, A, members, history, k, i, weights=None) -> float:
    """log of (1/mu_0(B)) int_B prod_t prod_j l^j(s_t^j|theta)^{[A^{k-t}]_ij} dmu_0(theta)."""
    log_prior = np.log(_prior_masses(model, weights))
    log_mu_B = _set_log_mass(log_prior, members)
    members = np.asarray(members, dtype=int)
    s = _weighted_loglik(model, A, history, k, i)
    return float(logsumexp(log_prior[members] + s[members])) - log_mu_B


def density_g(model, members, history, k, weights=None) -> float:
    return math.exp(log_density_g(model, members, history, k, weights))


def density_g_i(model, A, members, history, k, i, weights=None) -> float:
    return math.exp(log_density_g_i(model, A, members, history, k, i, weights))


@dataclass
class Lemma3Report:
    log_C1: float
    log_mu_B: float
    log_g: float
    log_g_i: list
    slack: list            # log C1 + (1/n)(log g_B - log mu_0(B)) - log g_B^i
    slack_literal: list    # log C1 + (1/n) log g_B - log g_B^i
    passed: bool
    passed_literal: bool

    def to_dict(self):
        return asdict(self)


def lemma3_check(model, A: WeightMatrix, members, history, k, weights=None, tol=1e-9) -> Lemma3Report:
    """Compare each agent's weighted density with the network-wide density.

    The asserted form normalises g_B by mu_0(B), which is what the Jensen step
    supports; the unnormalised comparison is reported as ``slack_literal``.
    """
    alpha = alpha_lower_bound(model)
    lc1 = log_C1(alpha, model.n, A.lambda_formula) if model.n > 1 else 0.0
    log_prior = np.log(_prior_masses(model, weights))
    log_mu_B = _set_log_mass(log_prior, members)
    lg = log_density_g(model, members, history, k, weights)
    lgi = [log_density_g_i(model, A, members, history, k, i, weights) for i in range(model.n)]
    slack = [lc1 + (lg - log_mu_B) / model.n - v for v in lgi]
    literal = [lc1 + lg / model.n - v for v in lgi]
    return Lemma3Report(lc1, log_mu_B, lg, lgi, slack, literal,
                        all(s >= -tol for s in slack), all(s >= -tol for s in literal))


# ---------------------------------------------------------------------------
# Density ratios on Hellinger cells
# ---------------------------------------------------------------------------

def _sample_from_rows(model, thetas, k, seed, trial_ids):
    """(T, k, n) symbols; trial t draws from the rows of hypothesis thetas[t]."""
    cdfs = [np.cumsum(t, axis=1) for t in model.tables]
    for c in cdfs:
        c[:, -1] = 1.0
    out = np.empty((len(thetas), k, model.n), dtype=np.int64)
    for row, (theta, t) in enumerate(zip(thetas, trial_ids)):
        streams = agent_streams(seed, t, model.n)
        for i, (g, c) in enumerate(zip(streams, cdfs)):
            out[row, :, i] = np.searchsorted(c[theta], g.random(k), side="right")
    return out


@dataclass
class Lemma4Report:
    k: int
    trials: int
    sampler: str
    cells: list
    passed: bool
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def lemma4_mc(model, cov: Covering, R, k, trials, seed, A: WeightMatrix,
              sampler="exact", weights=None) -> Lemma4Report:
    """Frequency of log(g^i_F / g^i_{B_R}) >= -2k g_l per covering cell F and agent i.

    g_l = r_{l+1} - delta_l - R.  ``sampler="exact"`` draws theta uniformly
    from B_R and then data from l(.|theta); ``"proxy"`` draws data from the
    truth.  The per-cell bound C2 exp(-k g_l + d log delta_l) is asserted
    only where it is below 1.
    """
    if cov.kind != "hellinger":
        raise ConfigError("lemma4_mc needs a Hellinger covering")
    if sampler not in ("exact", "proxy"):
        raise ConfigError("sampler must be 'exact' or 'proxy'")
    alpha = alpha_lower_bound(model)
    lc2 = log_C2(alpha)
    d = cov.d
    inner = hellinger_ball(model, R)
    log_prior = np.log(_prior_masses(model, weights))
    notes = []
    if sampler == "proxy":
        notes.append("histories drawn from the true product measure as a proxy for P_{B_R}")
    else:
        notes.append("histories drawn from the B_R mixture: theta ~ prior on B_R, then data")

    flat = [(l, m, cell) for l, band in enumerate(cov.cells) for m, cell in enumerate(band)]
    gaps = [cov.radii[l + 1] - cov.deltas[l] - R for l in range(cov.L_r - 1)]

    if k == 0:
        # both normalised densities equal 1, so the log-ratio is exactly 0
        hits = np.ones((len(flat), model.n), dtype=int) * trials
        notes.append("k = 0: log-ratio is identically 0, event evaluated directly")
    elif trials == 0 or not flat:
        hits = np.zeros((len(flat), model.n), dtype=int)
    else:
        ids = np.arange(trials)
        if sampler == "exact":
            pick = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(2 ** 31,)))
            p = np.exp(log_prior[inner] - logsumexp(log_prior[inner]))
            thetas = pick.choice(inner, size=trials, p=p)
        else:
            thetas = np.full(trials, model.theta_star)
        sym = _sample_from_rows(model, thetas, k, seed, ids)
        powers = matrix_power_rows(A, k - 1)
        W = np.stack([powers[k - t] for t in range(1, k + 1)])  # (k, n_i, n_j)
        hits = np.zeros((len(flat), model.n), dtype=int)
        logt = model.log_tables()
        for tr in range(trials):
            L = np.stack([logt[j][:, sym[tr, :, j]].T for j in range(model.n)], axis=1)  # (k, n, m)
            S = np.einsum("tij,tjm->im", W, L)  # (n_i, m)
            base = log_prior[None, :] + S
            log_g_R = logsumexp(base[:, inner], axis=1) - logsumexp(log_prior[inner])
            for c, (l, m, cell) in enumerate(flat):
                log_g_F = logsumexp(base[:, cell], axis=1) - logsumexp(log_prior[cell])
                hits[c] += (log_g_F - log_g_R >= -2 * k * gaps[l])
    cells = []
    passed = True
    for c, (l, m, cell) in enumerate(flat):
        log_bound = lc2 - k * gaps[l] + d * math.log(cov.deltas[l])
        bound = math.exp(min(log_bound, 700.0))
        freq = float(hits[c].max()) / trials if trials else 0.0
        asserted = bound < 1
        ok = (not asserted) or freq <= bound + 3 * binomial_se(bound, trials)
        passed &= ok
        cells.append({"band": l + 1, "cell": m, "size": len(cell), "frequency": freq,
                      "per_agent_hits": hits[c].tolist(), "bound": bound,
                      "log_bound": log_bound, "asserted": asserted, "passed": ok})
    return Lemma4Report(k, trials, sampler, cells, bool(passed), notes)


# ---------------------------------------------------------------------------
# Pathwise inequality chain behind the countable-case theorem
# ---------------------------------------------------------------------------

def _lse_rows(x):
    """Row-wise log-sum-exp for finite 2-d input; cheaper than scipy in tight loops."""
    m = x.max(axis=1)
    return m + np.log(np.exp(x - m[:, None]).sum(axis=1))


@dataclass
class ChainReport:
    steps: int
    min_slack_exact: float     # mu_k(B) - [1 - sum exp(prior term + weighted llr)]
    min_slack_epsilon: float   # that bound minus the 1/epsilon relaxation
    min_slack_network: float   # that relaxation minus the C3 / averaged-llr form
    holds: bool

    def to_dict(self):
        return asdict(self)


def chain_check(model, A: WeightMatrix, priors, members, history, epsilon, alpha=None,
               tol=1e-9) -> ChainReport:
    """Check mu_k^i(B) >= exact lower bound >= epsilon form >= C3 form along a path.

    B must contain theta*.  Each link is checked at every k and every agent.
    """
    members = np.asarray(members, dtype=int)
    if model.theta_star not in members:
        raise ConfigError("the set must contain theta*")
    alpha = alpha_lower_bound(model) if alpha is None else alpha
    lc3 = log_C3(alpha, model.n, A.lambda_formula, epsilon)
    a = A.entries
    m = model.num_hypotheses
    outside = np.setdiff1d(np.arange(m), members)
    logp0 = _prior_logs(priors, model)
    star = model.theta_star
    prior_term = logp0 - logp0[:, [star]]
    llr = llr_tables(model)
    X = np.zeros((model.n, m))        # sum_t A^{k-t} llr_t
    v = np.zeros(m)                   # vbar_k
    lb = logp0.copy()
    history = np.asarray(history, dtype=int).reshape(-1, model.n)
    s1 = s2 = s3 = math.inf
    logt = model.log_tables()
    for t, obs in enumerate(history, start=1):
        step_llr = np.stack([llr[j][:, obs[j]] for j in range(model.n)])
        X = a @ X + step_llr
        v = v + step_llr.mean(axis=0)
        prior_term = a @ prior_term
        lb = a @ lb + np.stack([logt[j][:, obs[j]] for j in range(model.n)])
        lb -= _lse_rows(lb)[:, None]
        mass = np.exp(_lse_rows(lb[:, members]))
        if outside.size:
            rhs8 = 1 - np.exp(_lse_rows(prior_term[:, outside] + X[:, outside]))
            rhs9 = 1 - np.exp(-math.log(epsilon) + _lse_rows(X[:, outside]))
            log_tail10 = lc3 + float(_lse_rows(v[None, outside])[0])
            rhs10 = 1 - math.exp(log_tail10) if log_tail10 < 700 else -math.inf
        else:
            rhs8 = rhs9 = np.ones(model.n)
            rhs10 = 1.0
        s1 = min(s1, float(np.min(mass - rhs8)))
        s2 = min(s2, float(np.min(rhs8 - rhs9)))
        s3 = min(s3, float(np.min(rhs9 - rhs10)))
    holds = min(s1, s2, s3) >= -tol
    return ChainReport(len(history), s1, s2, s3, bool(holds))

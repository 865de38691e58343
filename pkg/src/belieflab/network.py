"""Communication graphs, lazy Metropolis weights and consensus diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import networkx as nx
import numpy as np

from .errors import AssumptionViolation, ConfigError

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes 0..n-1."""

    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("graph needs at least one node")
        norm = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise ConfigError(f"self-loop at node {u}; the lazy step supplies self-weight")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ConfigError(f"edge ({u}, {v}) outside node range [0, {self.n})")
            norm.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", frozenset(norm))

    @classmethod
    def from_networkx(cls, g):
        g = nx.convert_node_labels_to_integers(g, ordering="sorted")
        return cls(g.number_of_nodes(), frozenset(g.edges()))

    def to_networkx(self):
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg

    def is_connected(self) -> bool:
        return nx.is_connected(self.to_networkx())

    def to_text(self) -> str:
        lines = [f"n {self.n}"] + [f"{u} {v}" for u, v in sorted(self.edges)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        """Parse the edge-list format: header ``n <count>`` then ``u v`` lines."""
        n, edges = None, []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if n is None:
                if len(parts) != 2 or parts[0] != "n":
                    raise ConfigError(f"line {lineno}: expected header 'n <count>'")
                n = int(parts[1])
                continue
            if len(parts) != 2:
                raise ConfigError(f"line {lineno}: expected 'u v'")
            try:
                edges.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ConfigError(f"line {lineno}: node ids must be integers") from None
        if n is None:
            raise ConfigError("graph file has no 'n <count>' header")
        return cls(n, frozenset(edges))


def path(n):
    return Graph.from_networkx(nx.path_graph(n))


def ring(n):
    if n < 3:
        return path(n)
    return Graph.from_networkx(nx.cycle_graph(n))


def complete(n):
    return Graph.from_networkx(nx.complete_graph(n))


def star(n):
    """Star on n nodes with node 0 as hub."""
    return Graph.from_networkx(nx.star_graph(n - 1))


def grid(rows, cols):
    return Graph.from_networkx(nx.grid_2d_graph(rows, cols))


GENERATORS = {"path": path, "ring": ring, "complete": complete, "star": star, "grid": grid}


def make_graph(name, *args):
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise ConfigError(f"unknown graph generator {name!r}; choose from {sorted(GENERATORS)}") from None
    return gen(*args)


# ---------------------------------------------------------------------------
# Weight matrices
# ---------------------------------------------------------------------------

def _consensus_error_norm(A, tol=1e-10, max_iter=10_000):
    """Largest singular value of x -> Ax - mean(Ax) 1 on the mean-zero subspace.

    Power iteration on M^T M with M = (I - J/n) A (I - J/n).
    """
    n = A.shape[0]
    if n == 1:
        return 0.0
    x = np.random.default_rng(0).standard_normal(n)
    x -= x.mean()
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(max_iter):
        y = A @ x
        y -= y.mean()
        z = A.T @ y
        z -= z.mean()
        norm = np.linalg.norm(z)
        if norm == 0.0:
            return 0.0
        new_sigma = math.sqrt(norm)
        x = z / norm
        if abs(new_sigma - sigma) < tol:
            return new_sigma
        sigma = new_sigma
    return sigma


@dataclass(frozen=True)
class WeightMatrix:
    """Nonnegative n x n mixing matrix with derived eta and lambda values."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigError("weight matrix must be square")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def eta(self) -> float:
        pos = self.entries[self.entries > 0]
        return float(pos.min()) if pos.size else 0.0

    @property
    def lambda_formula(self) -> float:
        return 1.0 - self.eta / (4 * self.n ** 2)

    @cached_property
    def lambda_empirical(self) -> float:
        return _consensus_error_norm(self.entries)


def lazy_metropolis(g: Graph) -> WeightMatrix:
    """(1/2)(I + M) with Metropolis off-diagonals 1/max(d_i + 1, d_j + 1)."""
    if not g.is_connected():
        raise AssumptionViolation("graph is not connected", [])
    deg = g.degrees()
    a = np.zeros((g.n, g.n))
    for u, v in g.edges:
        w = 0.5 / max(deg[u] + 1, deg[v] + 1)
        a[u, v] = a[v, u] = w
    a[np.diag_indices(g.n)] = 1.0 - a.sum(axis=1)
    return WeightMatrix(a)


@dataclass
class WeightReport:
    """Per-condition outcome of the doubly stochastic / graph-conformity checks."""

    checks: dict

    @property
    def ok(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def failures(self):
        return {k: v for k, v in self.checks.items() if not v["pass"]}

    def to_dict(self):
        return {"ok": self.ok, "checks": self.checks}


def validate_weights(A, g: Graph, tol=STOCHASTIC_TOL) -> WeightReport:
    """Check conditions (a)-(e) on a weight matrix and graph.

    (a) doubly stochastic and positive on every edge, (b) zero off the graph,
    (c) positive diagonal, (d) positive entries at least eta, (e) connected.
    """
    a = A.entries if isinstance(A, WeightMatrix) else np.asarray(A, dtype=float)
    checks = {}
    if a.shape != (g.n, g.n):
        bad = {"pass": False, "witness": f"shape {a.shape} vs n={g.n}"}
        return WeightReport({c: dict(bad) for c in "abcde"})

    rows = np.abs(a.sum(axis=1) - 1.0)
    cols = np.abs(a.sum(axis=0) - 1.0)
    edge_zero = [(u, v) for u, v in sorted(g.edges) if a[u, v] <= 0 or a[v, u] <= 0]
    witness = {}
    if np.any(a < 0):
        witness["negative"] = [tuple(map(int, ij)) for ij in np.argwhere(a < 0)]
    if rows.max() > tol:
        witness["row"] = int(np.argmax(rows))
    if cols.max() > tol:
        witness["column"] = int(np.argmax(cols))
    if edge_zero:
        witness["edge_without_weight"] = edge_zero
    checks["a"] = {"pass": not witness, "witness": witness or None,
                   "max_row_error": float(rows.max()), "max_col_error": float(cols.max())}

    off = [(int(i), int(j)) for i, j in np.argwhere(a > 0)
           if i != j and (min(i, j), max(i, j)) not in g.edges]
    checks["b"] = {"pass": not off, "witness": off or None}

    diag = np.flatnonzero(np.diag(a) <= 0)
    checks["c"] = {"pass": diag.size == 0, "witness": int(diag[0]) if diag.size else None}

    pos = a[a > 0]
    eta = float(pos.min()) if pos.size else 0.0
    checks["d"] = {"pass": eta > 0, "witness": None if eta > 0 else "no positive entries",
                   "eta": eta}

    connected = g.is_connected()
    comp = None
    if not connected:
        comp = sorted(sorted(c) for c in nx.connected_components(g.to_networkx()))
    checks["e"] = {"pass": connected, "witness": comp}
    return WeightReport(checks)


def matrix_power_rows(A, k):
    """[A^0, A^1, ..., A^k] by repeated multiplication."""
    a = A.entries if isinstance(A, WeightMatrix) else np.asarray(A, dtype=float)
    if k < 0:
        raise ConfigError("k must be nonnegative")
    powers = [np.eye(a.shape[0])]
    for _ in range(k):
        powers.append(powers[-1] @ a)
    return powers


def row_deviations(A, m_max):
    """dev[m, i] = sum_j |[A^m]_ij - 1/n| for m = 0..m_max."""
    a = A.entries if isinstance(A, WeightMatrix) else np.asarray(A, dtype=float)
    n = a.shape[0]
    dev = np.empty((m_max + 1, n))
    p = np.eye(n)
    for m in range(m_max + 1):
        dev[m] = np.abs(p - 1.0 / n).sum(axis=1)
        p = p @ a
    return dev


def consensus_deviation_sum(A, k, i) -> float:
    """sum_{t=1..k} sum_j |[A^{k-t}]_ij - 1/n|."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    return float(row_deviations(A, k - 1)[:, i].sum())


def consensus_bound(n, lam) -> float:
    """4 log n / (1 - lambda)."""
    if n == 1:
        return 0.0
    return 4.0 * math.log(n) / (1.0 - lam)


@dataclass
class Lemma1Report:
    passed: bool
    bound_formula: float
    bound_empirical: float
    max_value: float
    max_ratio_formula: float
    max_ratio_empirical: float
    violations: list

    def to_dict(self):
        return dict(self.__dict__)


def lemma1_check(A: WeightMatrix, k_max: int, slack=1e-12) -> Lemma1Report:
    """Check the consensus-deviation inequality for every agent and every k <= k_max.

    Both the eta-based lambda and the measured second singular value are
    used; the measured one gives the tighter bound.
    """
    dev = row_deviations(A, k_max - 1)
    sums = np.cumsum(dev, axis=0)  # sums[k-1, i] = deviation sum at k
    lam_f, lam_e = A.lambda_formula, A.lambda_empirical
    b_f = consensus_bound(A.n, lam_f)
    b_e = consensus_bound(A.n, lam_e) if lam_e < 1 else math.inf
    violations = []
    for label, b in (("formula", b_f), ("empirical", b_e)):
        for k, i in np.argwhere(sums > b + slack):
            violations.append({"lambda": label, "k": int(k) + 1, "i": int(i),
                               "value": float(sums[k, i]), "bound": b})
    vmax = float(sums.max()) if sums.size else 0.0

    def ratio(b):
        if b == 0:
            return 0.0 if vmax == 0 else math.inf
        return vmax / b

    return Lemma1Report(not violations, b_f, b_e, vmax, ratio(b_f), ratio(b_e), violations)

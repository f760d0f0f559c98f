"""Domain types for DAGs, orders and linear-Gaussian networks.

Parent sets are plain integer bitmasks over variable indices 0..d-1, which
caps d at 64; set operations are O(1) machine words.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

MAX_VARS = 64


def bits_of(mask: int):
    """Yield the set bit positions of a mask, ascending."""
    mask = int(mask)
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def mask_of(indices) -> int:
    m = 0
    for i in indices:
        m |= 1 << i
    return m


@dataclass(frozen=True)
class Dag:
    """Column-wise DAG: columns[i] is the bitmask of parents of variable i."""

    columns: tuple
    d: int

    def __post_init__(self):
        if self.d < 1 or self.d > MAX_VARS:
            raise ValueError(f"d must be in 1..{MAX_VARS}, got {self.d}")
        if len(self.columns) != self.d:
            raise ValueError("columns length must equal d")
        for i, col in enumerate(self.columns):
            if col >> self.d:
                raise ValueError(f"parent set of {i} references variables >= d")
            if col & (1 << i):
                raise ValueError(f"variable {i} is its own parent")
        if self.topological_order() is None:
            raise ValueError("graph is cyclic")

    def topological_order(self):
        """Kahn's algorithm; returns a permutation tuple or None if cyclic."""
        indeg = [c.bit_count() for c in self.columns]
        stack = [i for i in range(self.d) if indeg[i] == 0]
        out = []
        cols = list(self.columns)
        while stack:
            v = stack.pop()
            out.append(v)
            for j in range(self.d):
                if cols[j] & (1 << v):
                    cols[j] ^= 1 << v
                    indeg[j] -= 1
                    if indeg[j] == 0:
                        stack.append(j)
        return tuple(out) if len(out) == self.d else None

    def edges(self):
        return [(p, c) for c in range(self.d) for p in bits_of(self.columns[c])]

    def n_edges(self) -> int:
        return sum(c.bit_count() for c in self.columns)

    def adjacency(self) -> np.ndarray:
        """adj[p, c] = 1 iff edge p -> c."""
        adj = np.zeros((self.d, self.d), dtype=np.int8)
        for p, c in self.edges():
            adj[p, c] = 1
        return adj

    def to_json(self) -> str:
        return json.dumps(
            {"d": self.d, "parents": [sorted(bits_of(c)) for c in self.columns]}
        )

    @staticmethod
    def from_json(text: str) -> "Dag":
        obj = json.loads(text)
        cols = tuple(mask_of(ps) for ps in obj["parents"])
        return Dag(cols, obj["d"])


@dataclass(frozen=True)
class Order:
    perm: tuple

    def __post_init__(self):
        if sorted(self.perm) != list(range(len(self.perm))):
            raise ValueError("perm is not a permutation")

    def prefix_mask(self, i: int) -> int:
        """Bitmask of variables preceding i in the order."""
        m = 0
        for v in self.perm:
            if v == i:
                return m
            m |= 1 << v
        raise ValueError(f"{i} not in order")

    def consistent_with(self, dag: Dag) -> bool:
        m = 0
        for v in self.perm:
            if dag.columns[v] & ~m:
                return False
            m |= 1 << v
        return True


@dataclass(frozen=True)
class LinearGaussianBn:
    weights: np.ndarray    # weights[p, c]: coefficient of p in the equation of c
    noise_vars: np.ndarray
    bias: np.ndarray

    @property
    def d(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class Dataset:
    rows: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("dataset contains non-finite entries")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            for row in self.rows:
                w.writerow([repr(float(x)) for x in row])

    @staticmethod
    def load_csv(path) -> "Dataset":
        rows = np.loadtxt(path, delimiter=",", ndmin=2)
        return Dataset(rows)


def sample_erdos_renyi_dag(d: int, expected_edges: int, rng_seed: int) -> Dag:
    """ER random DAG with the given expected edge count.

    Labels are permuted before filling the upper triangle, so edge direction
    carries no label bias.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if expected_edges < 0:
        raise ValueError("expected_edges must be >= 0")
    rng = np.random.default_rng(rng_seed)
    n_pairs = d * (d - 1) // 2
    p = min(1.0, expected_edges / n_pairs) if n_pairs else 0.0
    labels = rng.permutation(d)
    cols = [0] * d
    for a in range(d):
        for b in range(a + 1, d):
            if rng.random() < p:
                cols[labels[b]] |= 1 << int(labels[a])
    return Dag(tuple(cols), d)


def sample_weights_and_data(
    dag: Dag,
    n: int,
    weight_std: float = 1.0,
    noise_var: float = 0.1,
    rng_seed: int = 0,
):
    """Draw edge weights ~ N(0, weight_std^2) and simulate n rows."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if noise_var < 0:
        raise ValueError("noise_var must be non-negative")
    rng = np.random.default_rng(rng_seed)
    d = dag.d
    weights = np.zeros((d, d))
    for p, c in dag.edges():
        weights[p, c] = rng.normal(0.0, weight_std)
    noise = np.full(d, noise_var)
    bias = np.zeros(d)
    bn = LinearGaussianBn(weights, noise, bias)
    rows = np.empty((n, d))
    eps = rng.normal(0.0, 1.0, size=(n, d)) * np.sqrt(noise_var)
    for v in dag.topological_order():
        rows[:, v] = bias[v] + eps[:, v]
        parents = list(bits_of(dag.columns[v]))
        if parents:
            rows[:, v] += rows[:, parents] @ weights[parents, v]
    return bn, Dataset(rows)


def simulate_data(bn: LinearGaussianBn, dag: Dag, n: int, rng_seed: int = 0) -> Dataset:
    """Simulate n fresh rows from an existing linear-Gaussian network."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    d = bn.d
    rows = np.empty((n, d))
    eps = rng.normal(0.0, 1.0, size=(n, d)) * np.sqrt(bn.noise_vars)
    for v in dag.topological_order():
        rows[:, v] = bn.bias[v] + eps[:, v]
        parents = list(bits_of(dag.columns[v]))
        if parents:
            rows[:, v] += rows[:, parents] @ bn.weights[parents, v]
    return Dataset(rows)


def total_effects(weights: np.ndarray) -> np.ndarray:
    """Path-sum effect matrix of a weighted DAG: entry (i, j) sums the
    products of edge weights over all directed paths i -> j; zero diagonal."""
    d = weights.shape[0]
    eff = np.linalg.inv(np.eye(d) - weights) - np.eye(d)
    return eff


@dataclass(frozen=True)
class Pdag:
    """Partially directed graph. mat[i, j] = 1 means an edge i -> j; an
    undirected edge i - j is stored as mat[i, j] = mat[j, i] = 1."""

    mat: np.ndarray

    @property
    def d(self) -> int:
        return self.mat.shape[0]

    def status(self, i: int, j: int) -> str:
        a, b = self.mat[i, j], self.mat[j, i]
        if a and b:
            return "undirected"
        if a:
            return "i->j"
        if b:
            return "j->i"
        return "none"

    def __eq__(self, other):
        return isinstance(other, Pdag) and np.array_equal(self.mat, other.mat)


def _order_edges(dag: Dag):
    topo = dag.topological_order()
    rank = {v: r for r, v in enumerate(topo)}
    edges = dag.edges()
    # Process edges headed by earlier nodes first; among edges into the same
    # head, those with later tails first.
    edges.sort(key=lambda e: (rank[e[1]], -rank[e[0]]))
    return edges


def essential_graph(dag: Dag) -> Pdag:
    """CPDAG of a DAG via compelled-edge labelling over ordered edges."""
    d = dag.d
    parents = [set(bits_of(c)) for c in dag.columns]
    edges = _order_edges(dag)
    label = {}  # (x, y) -> "compelled" | "reversible"
    for x, y in edges:
        if (x, y) in label:
            continue
        resolved = False
        for w in list(parents[x]):
            if label.get((w, x)) != "compelled":
                continue
            if w not in parents[y]:
                for z in parents[y]:
                    label[(z, y)] = "compelled"
                resolved = True
                break
            label[(w, y)] = "compelled"
        if resolved:
            continue
        if any(z != x and z not in parents[x] for z in parents[y]):
            for z in parents[y]:
                if (z, y) not in label:
                    label[(z, y)] = "compelled"
        else:
            for z in parents[y]:
                if (z, y) not in label:
                    label[(z, y)] = "reversible"
    mat = np.zeros((d, d), dtype=np.int8)
    for x, y in edges:
        mat[x, y] = 1
        if label[(x, y)] == "reversible":
            mat[y, x] = 1
    return Pdag(mat)


def shd(g1: Pdag, g2: Pdag) -> int:
    """Edge insertions, deletions and orientation changes between two
    partially directed graphs; a reversal counts as one change."""
    if g1.d != g2.d:
        raise ValueError("dimension mismatch")
    count = 0
    for i in range(g1.d):
        for j in range(i + 1, g1.d):
            if g1.status(i, j) != g2.status(i, j):
                count += 1
    return count

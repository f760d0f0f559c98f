"""Regular OrderSPN structure.

The circuit is stored depth by depth. Every sum node at depth j is a block
(S1, S2) holding up to K_j children; each child is an implicit product node
for one ordered partition (S21, S22) of S2, pointing at a left block
(S1, S21) and a right block (S1 | S21, S22) one depth down. Blocks with a
singleton S2 are leaves. Ragged child counts are padded and masked so each
inference pass is a flat array sweep per depth.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .model import bits_of, mask_of
from .score import LocalScoreTable

KIND_SUM = 0
KIND_LEAF = 1

EXHAUSTIVE_THRESHOLD = 4


@dataclass
class SumLayer:
    s1: np.ndarray
    s2: np.ndarray
    s21: np.ndarray     # (n, K) partition first halves; padded entries repeat
    valid: np.ndarray   # (n, K) bool
    theta: np.ndarray   # (n, K) unconstrained weights; -inf on padding
    lkind: np.ndarray
    lidx: np.ndarray
    rkind: np.ndarray
    ridx: np.ndarray

    @property
    def n(self) -> int:
        return len(self.s1)

    @property
    def kmax(self) -> int:
        return self.s21.shape[1]

    def log_phi(self) -> np.ndarray:
        """Row-wise log-softmax of theta over valid children."""
        th = np.where(self.valid, self.theta, -np.inf)
        mx = th.max(axis=1, keepdims=True)
        z = mx + np.log(np.exp(th - mx).sum(axis=1, keepdims=True))
        return th - z


@dataclass
class LeafLayer:
    s1: np.ndarray
    var: np.ndarray

    @property
    def n(self) -> int:
        return len(self.var)


@dataclass
class OrderSpn:
    d: int
    expansion: tuple
    sums: list      # SumLayer or None per depth
    leaves: list    # LeafLayer or None per depth

    @property
    def n_sum_layers(self) -> int:
        return sum(1 for s in self.sums if s is not None)

    def total_sum_nodes(self) -> int:
        return sum(s.n for s in self.sums if s is not None)

    def total_leaf_nodes(self) -> int:
        return sum(l.n for l in self.leaves if l is not None)

    def structure_size(self) -> int:
        """Total child links: K per sum node plus two per product node."""
        m = 0
        for s in self.sums:
            if s is not None:
                m += 3 * int(s.valid.sum())
        return m

    def set_uniform_weights(self):
        for s in self.sums:
            if s is not None:
                s.theta = np.where(s.valid, 0.0, -np.inf)

    def to_json(self) -> str:
        def layer(s):
            if s is None:
                return None
            return {
                "s1": s.s1.tolist(),
                "s2": s.s2.tolist(),
                "s21": s.s21.tolist(),
                "valid": s.valid.astype(int).tolist(),
                "theta": [[repr(float(x)) for x in row] for row in s.theta],
                "lkind": s.lkind.tolist(),
                "lidx": s.lidx.tolist(),
                "rkind": s.rkind.tolist(),
                "ridx": s.ridx.tolist(),
            }

        def lyr(l):
            return None if l is None else {"s1": l.s1.tolist(), "var": l.var.tolist()}

        return json.dumps(
            {
                "format": "orderspn-circuit-v1",
                "d": self.d,
                "expansion": list(self.expansion),
                "sums": [layer(s) for s in self.sums],
                "leaves": [lyr(l) for l in self.leaves],
            }
        )

    @staticmethod
    def from_json(text: str) -> "OrderSpn":
        obj = json.loads(text)
        if obj.get("format") != "orderspn-circuit-v1":
            raise ValueError("unrecognized circuit format")

        def layer(s):
            if s is None:
                return None
            return SumLayer(
                s1=np.array(s["s1"], dtype=np.int64),
                s2=np.array(s["s2"], dtype=np.int64),
                s21=np.array(s["s21"], dtype=np.int64),
                valid=np.array(s["valid"], dtype=bool),
                theta=np.array([[float(x) for x in row] for row in s["theta"]]),
                lkind=np.array(s["lkind"], dtype=np.int8),
                lidx=np.array(s["lidx"], dtype=np.int64),
                rkind=np.array(s["rkind"], dtype=np.int8),
                ridx=np.array(s["ridx"], dtype=np.int64),
            )

        def lyr(l):
            if l is None:
                return None
            return LeafLayer(
                s1=np.array(l["s1"], dtype=np.int64),
                var=np.array(l["var"], dtype=np.int64),
            )

        return OrderSpn(
            d=obj["d"],
            expansion=tuple(obj["expansion"]),
            sums=[layer(s) for s in obj["sums"]],
            leaves=[lyr(l) for l in obj["leaves"]],
        )


def n_sum_layers(d: int) -> int:
    return max(0, math.ceil(math.log2(d))) if d > 1 else 0


def _half_subsets(s2: int):
    """All first halves of size floor(|S2|/2), ascending by mask value."""
    elems = sorted(bits_of(s2))
    h = len(elems) // 2
    return sorted(mask_of(c) for c in combinations(elems, h))


def _random_half_subset(s2: int, rng) -> int:
    elems = sorted(bits_of(s2))
    h = len(elems) // 2
    pick = rng.choice(len(elems), size=h, replace=False)
    return mask_of(elems[int(t)] for t in pick)


def _collect_partitions(oracle, s1, s2, k, rng):
    n2 = s2.bit_count()
    h = n2 // 2
    avail = math.comb(n2, h)
    if k > avail:
        warnings.warn(
            f"expansion factor {k} exceeds the {avail} distinct partitions "
            f"of a {n2}-variable block; truncating"
        )
        k = avail
    seen: dict[int, None] = {}
    for _ in range(16):
        if len(seen) >= k:
            break
        for s21 in oracle(s1, s2, k):
            if s21 & ~s2 or s21.bit_count() != h:
                raise ValueError(f"oracle returned invalid partition {s21:b} of {s2:b}")
            if s21 not in seen:
                seen[s21] = None
            if len(seen) >= k:
                break
    while len(seen) < k:
        seen.setdefault(_random_half_subset(s2, rng), None)
    return list(seen)[:k]


def build_regular(
    scores: LocalScoreTable,
    oracle,
    expansion,
    exhaustive_threshold: int = EXHAUSTIVE_THRESHOLD,
    rng=None,
) -> OrderSpn:
    """Build the regular structure top-down.

    Blocks of at most `exhaustive_threshold` variables enumerate all their
    partitions (capped at the layer's expansion factor); larger blocks draw
    distinct partitions from the oracle.
    """
    d = scores.d
    L = n_sum_layers(d)
    expansion = tuple(expansion)
    if len(expansion) != L:
        raise ValueError(f"need {L} expansion factors for d={d}, got {len(expansion)}")
    if any(k < 1 for k in expansion):
        raise ValueError("expansion factors must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)

    raw_sums = [[] for _ in range(L + 1)]
    raw_leaves = [[] for _ in range(L + 1)]

    def make(s1: int, s2: int, depth: int):
        s1, s2 = int(s1), int(s2)
        if s2.bit_count() == 1:
            raw_leaves[depth].append((s1, s2.bit_length() - 1))
            return KIND_LEAF, len(raw_leaves[depth]) - 1
        k = expansion[depth]
        if s2.bit_count() <= exhaustive_threshold:
            parts = _half_subsets(s2)
            if k < len(parts):
                parts = parts[:k]
            elif k > len(parts):
                warnings.warn(
                    f"expansion factor {k} exceeds the {len(parts)} distinct "
                    f"partitions of a {s2.bit_count()}-variable block; truncating"
                )
        else:
            parts = _collect_partitions(oracle, s1, s2, k, rng)
        children = []
        for s21 in parts:
            s22 = s2 & ~s21
            lk, li = make(s1, s21, depth + 1)
            rk, ri = make(s1 | s21, s22, depth + 1)
            children.append((s21, lk, li, rk, ri))
        raw_sums[depth].append((s1, s2, children))
        return KIND_SUM, len(raw_sums[depth]) - 1

    make(0, (1 << d) - 1, 0)

    sums, leaves = [], []
    for depth in range(L + 1):
        if raw_leaves[depth]:
            leaves.append(
                LeafLayer(
                    s1=np.array([x[0] for x in raw_leaves[depth]], dtype=np.int64),
                    var=np.array([x[1] for x in raw_leaves[depth]], dtype=np.int64),
                )
            )
        else:
            leaves.append(None)
        if raw_sums[depth]:
            n = len(raw_sums[depth])
            kmax = max(len(ch) for _, _, ch in raw_sums[depth])
            layer = SumLayer(
                s1=np.array([x[0] for x in raw_sums[depth]], dtype=np.int64),
                s2=np.array([x[1] for x in raw_sums[depth]], dtype=np.int64),
                s21=np.zeros((n, kmax), dtype=np.int64),
                valid=np.zeros((n, kmax), dtype=bool),
                theta=np.full((n, kmax), -np.inf),
                lkind=np.zeros((n, kmax), dtype=np.int8),
                lidx=np.zeros((n, kmax), dtype=np.int64),
                rkind=np.zeros((n, kmax), dtype=np.int8),
                ridx=np.zeros((n, kmax), dtype=np.int64),
            )
            for i, (_, _, children) in enumerate(raw_sums[depth]):
                for k, (s21, lk, li, rk, ri) in enumerate(children):
                    layer.s21[i, k] = s21
                    layer.valid[i, k] = True
                    layer.theta[i, k] = 0.0
                    layer.lkind[i, k] = lk
                    layer.lidx[i, k] = li
                    layer.rkind[i, k] = rk
                    layer.ridx[i, k] = ri
                # pad with copies of the first child so gathers stay in range
                for k in range(len(children), kmax):
                    layer.s21[i, k] = layer.s21[i, 0]
                    layer.lkind[i, k] = layer.lkind[i, 0]
                    layer.lidx[i, k] = layer.lidx[i, 0]
                    layer.rkind[i, k] = layer.rkind[i, 0]
                    layer.ridx[i, k] = layer.ridx[i, 0]
            sums.append(layer)
        else:
            sums.append(None)
    return OrderSpn(d=d, expansion=expansion, sums=sums, leaves=leaves)


def _log_tau_tables(scores: LocalScoreTable):
    """Per-variable log-space subset sums tau_i(U) over all U inside C_i,
    computed with the standard subset zeta transform."""
    taus = []
    for i in range(scores.d):
        m = len(scores.candidates[i])
        tau = np.array(scores.tables[i], dtype=np.float64)
        for t in range(m):
            bit = 1 << t
            idx = np.nonzero(np.arange(1 << m) & bit)[0]
            tau[idx] = np.logaddexp(tau[idx], tau[idx ^ bit])
        taus.append(tau)
    return taus


def builtin_order_mcmc_oracle(scores: LocalScoreTable, budget: int = 500, seed: int = 0):
    """Partition oracle backed by Metropolis-Hastings over orders of S2.

    An order is scored by the sum over its variables of log tau_i of the
    usable candidate prefix. Visited half-splits are deduplicated and
    returned most-frequent first; the builder pads if too few are found.
    """
    taus = _log_tau_tables(scores)
    cmasks = [scores.candidate_mask(i) for i in range(scores.d)]
    rng = np.random.default_rng(seed)

    def order_score(s1: int, order) -> float:
        total = 0.0
        prefix = s1
        for v in order:
            total += taus[v][scores.pos_mask(v, prefix & cmasks[v])]
            prefix |= 1 << v
        return total

    def oracle(s1: int, s2: int, k: int):
        elems = sorted(bits_of(s2))
        h = len(elems) // 2
        if budget <= 0:
            return [_random_half_subset(s2, rng) for _ in range(4 * k)]
        order = list(rng.permutation(elems))
        cur = order_score(s1, order)
        counts: dict[int, int] = {}
        counts[mask_of(order[:h])] = 1
        n = len(order)
        for _ in range(budget):
            a = int(rng.integers(n - 1))
            if rng.random() < 0.5:
                b = a + 1
            else:
                b = int(rng.integers(n))
                if b == a:
                    b = (a + 1) % n
            order[a], order[b] = order[b], order[a]
            prop = order_score(s1, order)
            if math.log(rng.random() + 1e-300) < prop - cur:
                cur = prop
            else:
                order[a], order[b] = order[b], order[a]
            split = mask_of(order[:h])
            counts[split] = counts.get(split, 0) + 1
        ranked = sorted(counts, key=lambda s: (-counts[s], s))
        return ranked[:k]

    return oracle


def random_partition_oracle(seed: int = 0):
    rng = np.random.default_rng(seed)

    def oracle(s1: int, s2: int, k: int):
        return [_random_half_subset(s2, rng) for _ in range(4 * k)]

    return oracle


@dataclass
class AuditReport:
    checks: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


def audit(spn: OrderSpn) -> AuditReport:
    """Verify the structural invariants of the regular OrderSPN."""
    rep = AuditReport(
        checks={
            "root_scope": True,
            "completeness": True,
            "decomposability": True,
            "regular_splits": True,
            "determinism": True,
            "leaf_support": True,
            "layer_count": True,
        }
    )

    def fail(check, msg):
        rep.checks[check] = False
        rep.violations.append(msg)

    full = (1 << spn.d) - 1
    if spn.sums[0] is not None:
        if spn.sums[0].n != 1 or spn.sums[0].s1[0] != 0 or spn.sums[0].s2[0] != full:
            fail("root_scope", "root block is not (empty, full set)")
    elif spn.d != 1:
        fail("root_scope", "missing root sum layer")

    if spn.n_sum_layers != n_sum_layers(spn.d):
        fail("layer_count", "sum layer count differs from ceil(log2 d)")

    for depth, layer in enumerate(spn.sums):
        if layer is None:
            continue
        for i in range(layer.n):
            s1, s2 = int(layer.s1[i]), int(layer.s2[i])
            if s1 & s2:
                fail("decomposability", f"depth {depth} node {i}: S1 meets S2")
            seen = set()
            for k in range(layer.kmax):
                if not layer.valid[i, k]:
                    continue
                s21 = int(layer.s21[i, k])
                s22 = s2 & ~s21
                if s21 & ~s2:
                    fail("completeness", f"depth {depth} node {i}: S21 outside S2")
                if s21 & s22:
                    fail("decomposability", f"depth {depth} node {i}: overlapping split")
                if s21.bit_count() != s2.bit_count() // 2:
                    fail("regular_splits", f"depth {depth} node {i}: unbalanced split")
                if s21 in seen:
                    fail("determinism", f"depth {depth} node {i}: duplicate partition")
                seen.add(s21)

                def block(kind, idx):
                    if kind == KIND_LEAF:
                        lyr = spn.leaves[depth + 1]
                        return int(lyr.s1[idx]), 1 << int(lyr.var[idx])
                    nxt = spn.sums[depth + 1]
                    return int(nxt.s1[idx]), int(nxt.s2[idx])

                lb = block(int(layer.lkind[i, k]), int(layer.lidx[i, k]))
                rb = block(int(layer.rkind[i, k]), int(layer.ridx[i, k]))
                if lb != (s1, s21):
                    fail("completeness", f"depth {depth} node {i}: bad left block")
                if rb != (s1 | s21, s22):
                    fail("completeness", f"depth {depth} node {i}: bad right block")

    for depth, lyr in enumerate(spn.leaves):
        if lyr is None:
            continue
        for j in range(lyr.n):
            if int(lyr.s1[j]) & (1 << int(lyr.var[j])):
                fail("leaf_support", f"leaf depth {depth} idx {j}: variable inside S1")
    return rep


def size_and_support(spn: OrderSpn):
    """(closed-form edge count, exact support order count, its log).

    The closed-form size of a regular circuit equals three links per sum
    node; the support count is the number of distinct sum-choice
    assignments, computed recursively over actual children.
    """
    edge_count = 3 * spn.total_sum_nodes()

    from functools import lru_cache

    @lru_cache(maxsize=None)
    def count(kind: int, depth: int, idx: int) -> int:
        if kind == KIND_LEAF:
            return 1
        layer = spn.sums[depth]
        total = 0
        for k in range(layer.kmax):
            if not layer.valid[idx, k]:
                continue
            total += count(int(layer.lkind[idx, k]), depth + 1, int(layer.lidx[idx, k])) * count(
                int(layer.rkind[idx, k]), depth + 1, int(layer.ridx[idx, k])
            )
        return total

    if spn.sums[0] is not None:
        support = count(KIND_SUM, 0, 0)
    else:
        support = 1
    return edge_count, support, math.log(support)


def formula_size_and_support(d: int, expansion) -> tuple:
    """Closed forms for d = 2^l: size Sum_(i=1..l) (2^i + 2^(i-1)) * prod of
    the first i-1 expansion factors; support prod K_i^(2^i)."""
    l = len(expansion)
    if d != 1 << l:
        raise ValueError("closed forms require d = 2^l")
    size = 0
    prod = 1
    for i in range(1, l + 1):
        size += (2**i + 2 ** (i - 1)) * prod
        prod *= expansion[i - 1]
    support = 1
    for i, k in enumerate(expansion):
        support *= k ** (2**i)
    return size, support

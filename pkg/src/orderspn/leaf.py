"""Per-variable subset tables for leaf distributions.

A leaf (S1, i) is the score distribution of variable i restricted to parent
sets inside S1 (intersected with the candidate set C_i). One table per
variable serves every leaf: S1 enters only through the lookup keys, so the
O(3^|C_i|) build happens once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import bits_of, mask_of
from .score import LocalScoreTable

LEAF_CAP = 16


class InfeasibleConditionError(ValueError):
    """Raised when sampling is requested under a zero-probability condition."""


@dataclass(frozen=True)
class EdgeConjunction:
    """Conjunction of edge literals: per child variable, a bitmask of
    required parents and a bitmask of forbidden parents."""

    d: int
    required: tuple
    forbidden: tuple

    def __post_init__(self):
        for i in range(self.d):
            if self.required[i] & self.forbidden[i]:
                raise ValueError(f"contradictory literals for variable {i}")
            if (self.required[i] | self.forbidden[i]) & (1 << i):
                raise ValueError(f"self-loop literal for variable {i}")

    @staticmethod
    def empty(d: int) -> "EdgeConjunction":
        return EdgeConjunction(d, (0,) * d, (0,) * d)

    @staticmethod
    def from_literals(d: int, literals) -> "EdgeConjunction":
        """literals: iterable of (child, parent, present)."""
        req = [0] * d
        forb = [0] * d
        for child, parent, present in literals:
            if present:
                req[child] |= 1 << parent
            else:
                forb[child] |= 1 << parent
        return EdgeConjunction(d, tuple(req), tuple(forb))

    @staticmethod
    def require_edges(d: int, edges) -> "EdgeConjunction":
        return EdgeConjunction.from_literals(d, [(c, p, True) for p, c in edges])

    def conjoin(self, other: "EdgeConjunction") -> "EdgeConjunction":
        req = tuple(a | b for a, b in zip(self.required, other.required))
        forb = tuple(a | b for a, b in zip(self.forbidden, other.forbidden))
        return EdgeConjunction(self.d, req, forb)

    def is_empty(self) -> bool:
        return not any(self.required) and not any(self.forbidden)

    def literals(self):
        out = []
        for i in range(self.d):
            for j in bits_of(self.required[i]):
                out.append((i, j, True))
            for j in bits_of(self.forbidden[i]):
                out.append((i, j, False))
        return out


@dataclass(frozen=True)
class LeafTable:
    scores: LocalScoreTable
    f: tuple        # per-variable log-sum tables, length 3^|C_i|
    fmax: tuple     # per-variable log-max tables
    argmax: tuple   # per-variable argmax position masks
    pow3: tuple

    @property
    def d(self) -> int:
        return self.scores.d

    def candidate_mask(self, i: int) -> int:
        return self.scores.candidate_mask(i)

    def key(self, i: int, req_pos: int, forb_pos: int) -> int:
        p3 = self.pow3[i]
        k = 0
        for t in bits_of(req_pos):
            k += p3[t]
        for t in bits_of(forb_pos):
            k += 2 * p3[t]
        return k


def build_leaf_table(scores: LocalScoreTable, cap: int = LEAF_CAP) -> LeafTable:
    for i, cand in enumerate(scores.candidates):
        if len(cand) > cap:
            raise ValueError(f"candidate set of {i} has {len(cand)} > cap {cap}")
    fs, fms, ams, p3s = [], [], [], []
    for i in range(scores.d):
        m = len(scores.candidates[i])
        fs.append(kernels.build_sum_table(scores.tables[i], m))
        fm, am = kernels.build_max_table(scores.tables[i], m)
        fms.append(fm)
        ams.append(am)
        p3s.append(3 ** np.arange(m, dtype=np.int64))
    return LeafTable(scores, tuple(fs), tuple(fms), tuple(ams), tuple(p3s))


def _leaf_keys(table: LeafTable, i: int, s1: int, req: int, forb: int):
    """Resolve global masks into (numerator key, denominator key) or None if
    the constraint is unsatisfiable at this leaf."""
    cmask = table.candidate_mask(i)
    if req & ~cmask:
        return None  # required parent can never appear
    s1m = s1 & cmask
    if req & ~s1m:
        return None  # required parent outside the leaf support
    if req & forb:
        return None
    out = cmask & ~s1m
    req_pos = table.scores.pos_mask(i, req)
    forb_pos = table.scores.pos_mask(i, (forb & cmask) | out)
    num = table.key(i, req_pos, forb_pos)
    den = table.key(i, 0, table.scores.pos_mask(i, out))
    return num, den


def leaf_log_norm(table: LeafTable, i: int, s1: int) -> float:
    """log tau_i(S1 cap C_i): the leaf's log-normalizer."""
    cmask = table.candidate_mask(i)
    out = cmask & ~(s1 & cmask)
    return float(table.f[i][table.key(i, 0, table.scores.pos_mask(i, out))])


def leaf_marginal(table: LeafTable, i: int, s1: int, req: int = 0, forb: int = 0) -> float:
    """log p_{S1,{i}}(conjunction): two table lookups."""
    keys = _leaf_keys(table, i, s1, req, forb)
    if keys is None:
        return -math.inf
    num, den = keys
    if table.f[i][den] == -math.inf:
        return -math.inf
    return float(table.f[i][num] - table.f[i][den])


def leaf_mpe(table: LeafTable, i: int, s1: int, req: int = 0, forb: int = 0):
    """(max log p_{S1,{i}}(G_i) over G_i satisfying the conjunction,
    attaining global parent mask); ties break toward the smaller mask."""
    keys = _leaf_keys(table, i, s1, req, forb)
    if keys is None:
        return -math.inf, 0
    num, den = keys
    if table.f[i][den] == -math.inf or table.fmax[i][num] == -math.inf:
        return -math.inf, 0
    val = float(table.fmax[i][num] - table.f[i][den])
    arg = table.scores.global_mask(i, int(table.argmax[i][num]))
    return val, arg


def leaf_sample(table: LeafTable, i: int, s1: int, req: int, forb: int, rng) -> int:
    """Exact sample from the conditioned leaf by sequential Bernoulli draws."""
    keys = _leaf_keys(table, i, s1, req, forb)
    if keys is None or table.f[i][keys[0]] == -math.inf:
        raise InfeasibleConditionError(f"no feasible parent set for variable {i}")
    cmask = table.candidate_mask(i)
    s1m = s1 & cmask
    out = cmask & ~s1m
    cur_req = table.scores.pos_mask(i, req)
    cur_forb = table.scores.pos_mask(i, (forb & cmask) | out)
    f = table.f[i]
    p3 = table.pow3[i]
    key = table.key(i, cur_req, cur_forb)
    m = len(table.scores.candidates[i])
    free = ((1 << m) - 1) & ~(cur_req | cur_forb)
    for t in bits_of(free):
        total = f[key]
        with_t = f[key + p3[t]]
        if rng.random() < math.exp(with_t - total):
            cur_req |= 1 << t
            key += p3[t]
        else:
            cur_forb |= 1 << t
            key += 2 * p3[t]
    return table.scores.global_mask(i, cur_req)

"""Modular log-scores: structure prior times BGe local marginal likelihood.

All scores live in log-space. The BGe local term is computed from
log-determinants of submatrices of the posterior matrix
R = T + S_N + (N a_mu / (N + a_mu)) (nu - xbar)(nu - xbar)^T.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .model import Dataset, bits_of, mask_of

CANDIDATE_CAP = 16


class ScoreNumericalError(RuntimeError):
    """Raised when a scatter submatrix is not positive definite."""


@dataclass(frozen=True)
class BgeParams:
    alpha_mu: float = 1.0
    alpha_w: float | None = None  # defaults to d + 2 at scoring time
    t_scale: float = 0.5
    prior_mean: np.ndarray | None = None

    def resolve(self, d: int) -> "BgeParams":
        aw = self.alpha_w if self.alpha_w is not None else d + 2
        nu = self.prior_mean if self.prior_mean is not None else np.zeros(d)
        if self.alpha_mu <= 0:
            raise ValueError("alpha_mu must be positive")
        if aw <= d - 1:
            raise ValueError("alpha_w must exceed d - 1")
        if self.t_scale <= 0:
            raise ValueError("t_scale must be positive")
        return BgeParams(self.alpha_mu, aw, self.t_scale, nu)


class BgeScorer:
    """Caches the posterior matrix R for repeated local-score evaluation."""

    def __init__(self, data: Dataset, params: BgeParams = BgeParams()):
        if data.n < 1:
            raise ValueError("need at least one data row")
        self.d = data.d
        self.n = data.n
        p = params.resolve(self.d)
        self.params = p
        x = data.rows
        xbar = x.mean(axis=0)
        centered = x - xbar
        s_n = centered.T @ centered
        shift = xbar - p.prior_mean
        self.r = (
            p.t_scale * np.eye(self.d)
            + s_n
            + (self.n * p.alpha_mu / (self.n + p.alpha_mu)) * np.outer(shift, shift)
        )
        n, d, aw, am, t = self.n, self.d, p.alpha_w, p.alpha_mu, p.t_scale
        self._const = [
            0.5 * (math.log(am) - math.log(n + am))
            - 0.5 * n * math.log(math.pi)
            + gammaln(0.5 * (n + aw - d + np_ + 1))
            - gammaln(0.5 * (aw - d + np_ + 1))
            + 0.5 * (aw - d + 2 * np_ + 1) * math.log(t)
            for np_ in range(d)
        ]

    def _logdet(self, idx) -> float:
        if not idx:
            return 0.0
        sign, val = np.linalg.slogdet(self.r[np.ix_(idx, idx)])
        if sign <= 0 or not np.isfinite(val):
            raise ScoreNumericalError(f"non-PD scatter submatrix {idx}")
        return val

    def local_score(self, child: int, parents: int) -> float:
        """log p(D_child | parents), parents given as a global bitmask."""
        if parents & (1 << child):
            raise ValueError("child cannot be its own parent")
        pa = list(bits_of(parents))
        p = len(pa)
        n, d, aw = self.n, self.d, self.params.alpha_w
        return (
            self._const[p]
            + 0.5 * (n + aw - d + p) * self._logdet(pa)
            - 0.5 * (n + aw - d + p + 1) * self._logdet(sorted(pa + [child]))
        )


def bge_local_score(
    data: Dataset, child: int, parents: int, params: BgeParams = BgeParams()
) -> float:
    return BgeScorer(data, params).local_score(child, parents)


def fair_log_prior(d: int, parents: int) -> float:
    """log-prior proportional to 1 / #parent-sets of the same size."""
    k = parents.bit_count()
    if k > d - 1:
        raise ValueError("parent set too large")
    return -math.log(math.comb(d - 1, k))


@dataclass(frozen=True)
class LocalScoreTable:
    """Per-variable dense tables of log pi_i(G_i) over subsets of C_i.

    tables[i] has length 2^|C_i| and is indexed by the position bitmask of
    the parent set within the sorted candidate tuple candidates[i].
    """

    d: int
    candidates: tuple
    tables: tuple

    def __post_init__(self):
        for i, (cand, tab) in enumerate(zip(self.candidates, self.tables)):
            if len(tab) != 1 << len(cand):
                raise ValueError(f"table size mismatch for variable {i}")

    def candidate_mask(self, i: int) -> int:
        return mask_of(self.candidates[i])

    def pos_mask(self, i: int, global_mask: int) -> int:
        """Translate a global parent bitmask into candidate positions."""
        pm = 0
        for t, c in enumerate(self.candidates[i]):
            if global_mask & (1 << c):
                pm |= 1 << t
        return pm

    def global_mask(self, i: int, pos_mask: int) -> int:
        gm = 0
        for t, c in enumerate(self.candidates[i]):
            if pos_mask & (1 << t):
                gm |= 1 << c
        return gm

    def log_score(self, i: int, parents: int) -> float:
        """log pi_i for a global parent bitmask; requires parents within C_i."""
        if parents & ~self.candidate_mask(i):
            raise KeyError(f"parents {parents:b} outside candidate set of {i}")
        return float(self.tables[i][self.pos_mask(i, parents)])

    def to_json(self) -> str:
        triples = []
        for i in range(self.d):
            for pm, v in enumerate(self.tables[i]):
                triples.append([i, self.global_mask(i, pm), float(v)])
        return json.dumps(
            {
                "d": self.d,
                "candidates": [list(c) for c in self.candidates],
                "entries": triples,
            }
        )

    @staticmethod
    def from_json(text: str) -> "LocalScoreTable":
        obj = json.loads(text)
        d = obj["d"]
        candidates = tuple(tuple(c) for c in obj["candidates"])
        tables = [np.zeros(1 << len(c)) for c in candidates]
        tmp = LocalScoreTable(d, candidates, tuple(tables))
        for i, gm, v in obj["entries"]:
            tables[i][tmp.pos_mask(i, gm)] = v
        return LocalScoreTable(d, candidates, tuple(np.asarray(t) for t in tables))


def build_score_table(
    data: Dataset,
    candidates,
    params: BgeParams = BgeParams(),
    prior: str = "fair",
    cap: int = CANDIDATE_CAP,
) -> LocalScoreTable:
    """Score every parent subset of each candidate set: 2^|C_i| entries."""
    scorer = BgeScorer(data, params)
    d = data.d
    cands = tuple(tuple(sorted(c)) for c in candidates)
    tables = []
    for i in range(d):
        if i in cands[i]:
            raise ValueError(f"variable {i} is its own candidate")
        m = len(cands[i])
        if m > cap:
            raise ValueError(f"candidate set of {i} exceeds cap {cap}")
        tab = np.empty(1 << m)
        for pm in range(1 << m):
            gm = mask_of(cands[i][t] for t in bits_of(pm))
            lp = fair_log_prior(d, gm) if prior == "fair" else 0.0
            tab[pm] = lp + scorer.local_score(i, gm)
        tables.append(tab)
    return LocalScoreTable(d, cands, tuple(tables))


def full_candidates(d: int):
    return [tuple(j for j in range(d) if j != i) for i in range(d)]


def select_candidates(data: Dataset, k: int, params: BgeParams = BgeParams()):
    """Greedy candidate parents: repeatedly add the single parent that most
    improves the local BGe score of the current set."""
    d = data.d
    if k > d - 1:
        raise ValueError("k must be at most d - 1")
    scorer = BgeScorer(data, params)
    out = []
    for i in range(d):
        chosen = 0
        while chosen.bit_count() < k:
            best, best_score = None, -math.inf
            for j in range(d):
                if j == i or chosen & (1 << j):
                    continue
                s = scorer.local_score(i, chosen | (1 << j))
                if s > best_score:
                    best, best_score = j, s
            chosen |= 1 << best
        out.append(tuple(sorted(bits_of(chosen))))
    return out

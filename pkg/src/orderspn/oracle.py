"""Brute-force enumeration of the order-modular posterior for small d.

Enumerates every (order, graph) pair with graphs restricted to each
variable's candidate parents, and answers the same queries the circuit
answers, by direct summation.  Used to certify circuit results exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .leaf import EdgeConjunction
from .model import Dag, Order, bits_of, mask_of
from .score import LocalScoreTable

MAX_EXACT_D = 5


@dataclass(frozen=True)
class PosteriorTable:
    """All (order, graph) pairs with log joint mass, plus log Z."""

    d: int
    orders: tuple          # tuple of permutation tuples
    graphs: tuple          # tuple of column-mask tuples, aligned with orders
    log_mass: np.ndarray   # unnormalized log p(order, graph)
    log_z: float


def enumerate_posterior(scores: LocalScoreTable, reverse_orders: bool = False) -> PosteriorTable:
    d = scores.d
    if d > MAX_EXACT_D:
        raise ValueError(f"exact enumeration supports d <= {MAX_EXACT_D}, got {d}")
    # Per variable: every candidate-restricted parent set with its score.
    subsets = []
    for i in range(d):
        cm = scores.candidate_mask(i)
        subs = []
        for pos in range(1 << len(scores.candidates[i])):
            gm = scores.global_mask(i, pos)
            subs.append((gm, scores.log_score(i, gm)))
        subsets.append(subs)
    orders_iter = list(itertools.permutations(range(d)))
    if reverse_orders:
        orders_iter = orders_iter[::-1]
    orders, graphs, masses = [], [], []
    for perm in orders_iter:
        prefix = [0] * d
        acc = 0
        for v in perm:
            prefix[v] = acc
            acc |= 1 << v
        allowed = [
            [(g, s) for g, s in subsets[i] if not (g & ~prefix[i])] for i in range(d)
        ]
        for combo in itertools.product(*allowed):
            orders.append(perm)
            graphs.append(tuple(g for g, _ in combo))
            masses.append(sum(s for _, s in combo))
    log_mass = np.array(masses)
    return PosteriorTable(d, tuple(orders), tuple(graphs), log_mass,
                          float(logsumexp(log_mass)))


def _satisfies(columns, conj: EdgeConjunction) -> bool:
    for i in range(len(columns)):
        if conj.required[i] & ~columns[i]:
            return False
        if conj.forbidden[i] & columns[i]:
            return False
    return True


def exact_marginal(post: PosteriorTable, conj: EdgeConjunction) -> float:
    """Normalized log posterior probability of the edge conjunction."""
    sel = [m for g, m in zip(post.graphs, post.log_mass) if _satisfies(g, conj)]
    if not sel:
        return -math.inf
    return float(logsumexp(sel)) - post.log_z


def exact_conditional(post: PosteriorTable, conj: EdgeConjunction,
                      given: EdgeConjunction) -> float:
    den = exact_marginal(post, given)
    if den == -math.inf:
        raise ValueError("conditioning event has zero mass")
    return exact_marginal(post, conj.conjoin(given)) - den


def exact_mpe(post: PosteriorTable, given: EdgeConjunction):
    """Highest-mass (order, graph) pair satisfying the condition, with its
    normalized conditional log probability."""
    best, best_val = None, -math.inf
    for perm, g, m in zip(post.orders, post.graphs, post.log_mass):
        if _satisfies(g, given) and m > best_val:
            best_val, best = m, (perm, g)
    if best is None:
        raise ValueError("no satisfying pair")
    norm = exact_marginal(post, given) + post.log_z
    return best_val - norm, Order(best[0]), Dag(best[1], post.d)


def exact_edge_marginals(post: PosteriorTable) -> np.ndarray:
    """Matrix P[p, c] = posterior probability of edge p -> c."""
    d = post.d
    probs = np.zeros((d, d))
    w = np.exp(post.log_mass - post.log_z)
    for g, wt in zip(post.graphs, w):
        for c in range(d):
            for p in bits_of(g[c]):
                probs[p, c] += wt
    return probs


def exact_graph_posterior(post: PosteriorTable) -> dict:
    """Map column tuple -> normalized posterior probability of the graph."""
    out: dict = {}
    for g, m in zip(post.graphs, post.log_mass):
        if g in out:
            out[g] = np.logaddexp(out[g], m)
        else:
            out[g] = m
    return {g: math.exp(m - post.log_z) for g, m in out.items()}


def exact_bce(post: PosteriorTable, weight_fn) -> np.ndarray:
    """Posterior mean of total causal effects: E[(I - B)^{-1} - I] with
    per-graph weight matrix B = weight_fn(Dag)."""
    d = post.d
    w = np.exp(post.log_mass - post.log_z)
    acc = np.zeros((d, d))
    for g, wt in zip(post.graphs, w):
        B = weight_fn(Dag(g, d))
        acc += wt * (np.linalg.inv(np.eye(d) - B) - np.eye(d))
    return acc

"""Structure-recovery and effect-recovery metrics over a fitted circuit,
plus reference samplers drawn directly from an order MCMC chain."""

from __future__ import annotations

import math

import numpy as np
from scipy.stats import rankdata

from . import causal, infer
from .circuit import OrderSpn, _log_tau_tables
from .leaf import EdgeConjunction, LeafTable
from .model import Dag, Dataset, LinearGaussianBn, bits_of, essential_graph, shd, total_effects
from .score import BgeParams, BgeScorer, LocalScoreTable


def edge_marginal_matrix(spn: OrderSpn, table: LeafTable) -> np.ndarray:
    """P[p, c] = exact posterior probability of edge p -> c under the circuit."""
    d = spn.d
    out = np.zeros((d, d))
    for c in range(d):
        for p in range(d):
            if p == c:
                continue
            conj = EdgeConjunction.from_literals(d, [(c, p, True)])
            out[p, c] = math.exp(infer.marginal(spn, table, conj))
    return out


def auroc_from_edge_probs(probs: np.ndarray, true_dag: Dag):
    """Rank-statistic AUROC over ordered off-diagonal pairs; ties averaged.
    Returns None when the true graph is empty or complete (undefined)."""
    d = true_dag.d
    adj = true_dag.adjacency()
    off = ~np.eye(d, dtype=bool)
    y = adj[off].astype(bool)
    s = probs[off]
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    return (ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def metric_auroc(spn: OrderSpn, table: LeafTable, true_dag: Dag):
    return auroc_from_edge_probs(edge_marginal_matrix(spn, table), true_dag)


def metric_eshd(spn: OrderSpn, table: LeafTable, true_dag: Dag,
                samples: int, rng) -> tuple:
    """(mean, Monte Carlo standard error) of SHD between sampled and true
    essential graphs."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    ref = essential_graph(true_dag)
    vals = np.empty(samples)
    cache: dict = {}
    for s in range(samples):
        _, g = infer.sample(spn, table, rng, cache=cache)
        vals[s] = shd(essential_graph(g), ref)
    se = vals.std(ddof=1) / math.sqrt(samples) if samples > 1 else 0.0
    return float(vals.mean()), float(se)


def metric_mll(spn: OrderSpn, table: LeafTable, test_data: Dataset,
               samples: int, rng, params: BgeParams = BgeParams()) -> tuple:
    """(mean, standard error) of the held-out BGe log marginal likelihood of
    sampled graphs; repeated graphs are scored once."""
    scorer = BgeScorer(test_data, params)
    cache: dict = {}
    phi_cache: dict = {}
    vals = np.empty(samples)
    for s in range(samples):
        _, g = infer.sample(spn, table, rng, cache=phi_cache)
        if g.columns not in cache:
            cache[g.columns] = sum(
                scorer.local_score(i, g.columns[i]) for i in range(g.d)
            )
        vals[s] = cache[g.columns]
    se = vals.std(ddof=1) / math.sqrt(samples) if samples > 1 else 0.0
    return float(vals.mean()), float(se)


def metric_mse_ce(spn: OrderSpn, table: LeafTable, model,
                  true_bn: LinearGaussianBn) -> float:
    """Mean squared error between the exact posterior-averaged effect matrix
    and the true path-sum effects, over off-diagonal pairs."""
    d = spn.d
    est = causal.bce_matrix(spn, table, model)
    truth = total_effects(true_bn.weights)
    off = ~np.eye(d, dtype=bool)
    return float(np.mean((est[off] - truth[off]) ** 2))


def coverage_experiment(spn: OrderSpn, table: LeafTable, true_dag: Dag,
                        n_edges_list, trials: int, rng) -> list:
    """For each n: rate over trials that a random n-subset of true edges has
    nonzero probability of joint presence under the circuit."""
    edges = true_dag.edges()
    out = []
    for n in n_edges_list:
        if n > len(edges):
            raise ValueError(f"true graph has only {len(edges)} edges, need {n}")
        hits = 0
        for _ in range(trials):
            idx = rng.choice(len(edges), size=n, replace=False)
            conj = EdgeConjunction.from_literals(
                true_dag.d, [(edges[i][1], edges[i][0], True) for i in idx]
            )
            if infer.marginal(spn, table, conj) > -math.inf:
                hits += 1
        out.append((int(n), hits / trials if trials else 1.0))
    return out


def dag_set_coverage(dags, true_dag: Dag, n_edges_list, trials: int, rng) -> list:
    """Same experiment for a finite bag of reference graphs: a selection is a
    hit when some graph in the bag contains every chosen edge."""
    edges = true_dag.edges()
    out = []
    for n in n_edges_list:
        hits = 0
        for _ in range(trials):
            idx = rng.choice(len(edges), size=n, replace=False)
            need = [edges[i] for i in idx]
            ok = any(
                all(g.columns[c] >> p & 1 for p, c in need) for g in dags
            )
            hits += ok
        out.append((int(n), hits / trials if trials else 1.0))
    return out


def dag_set_edge_freq(dags, d: int) -> np.ndarray:
    """Empirical edge frequencies of a bag of graphs."""
    out = np.zeros((d, d))
    for g in dags:
        out += g.adjacency()
    return out / max(len(dags), 1)


def mcmc_reference_dags(scores: LocalScoreTable, n_dags: int,
                        budget: int = 500, seed: int = 0) -> list:
    """Sample graphs straight from the order MCMC chain: run Metropolis over
    orders scored by the marginalized parent-set mass, keep evenly spaced
    orders, and draw one parent set per variable from its prefix-restricted
    score distribution."""
    d = scores.d
    rng = np.random.default_rng(seed)
    log_tau = []  # per variable: log sum of scores over subsets of each pos mask
    for i in range(d):
        m = len(scores.candidates[i])
        t = scores.tables[i].copy()
        for b in range(m):
            step = 1 << b
            for pos in range(1 << m):
                if pos & step:
                    t[pos] = np.logaddexp(t[pos], t[pos ^ step])
        log_tau.append(t)

    def order_score(perm):
        total, acc = 0.0, 0
        for v in perm:
            total += log_tau[v][scores.pos_mask(v, acc & scores.candidate_mask(v))]
            acc |= 1 << v
        return total

    perm = list(rng.permutation(d))
    cur = order_score(perm)
    kept = []
    keep_every = max(1, budget // max(n_dags, 1))
    for it in range(max(budget, n_dags)):
        prop = perm.copy()
        if d > 1:
            if rng.random() < 0.5:
                a = int(rng.integers(d - 1))
                prop[a], prop[a + 1] = prop[a + 1], prop[a]
            else:
                a, b = rng.choice(d, size=2, replace=False)
                prop[a], prop[b] = prop[b], prop[a]
        val = order_score(prop)
        if math.log(rng.random()) < val - cur:
            perm, cur = prop, val
        if it % keep_every == 0:
            kept.append(tuple(perm))
    kept = kept[-n_dags:]
    while len(kept) < n_dags:
        kept.append(tuple(perm))
    return _dags_from_orders(scores, kept, rng)


def _dags_from_orders(scores: LocalScoreTable, orders, rng) -> list:
    """One graph per order: each variable draws a parent set from its
    prefix-restricted score distribution."""
    d = scores.d
    dags = []
    for p in orders:
        acc = 0
        cols = [0] * d
        prefix = [0] * d
        for v in p:
            prefix[v] = acc
            acc |= 1 << v
        for i in range(d):
            allowed = scores.pos_mask(i, prefix[i] & scores.candidate_mask(i))
            subs = [s for s in range(1 << len(scores.candidates[i]))
                    if not (s & ~allowed)]
            w = np.array([scores.tables[i][s] for s in subs])
            w = np.exp(w - w.max())
            w /= w.sum()
            pos = subs[int(rng.choice(len(subs), p=w))]
            cols[i] = scores.global_mask(i, pos)
        dags.append(Dag(tuple(cols), d))
    return dags


def oracle_order_dags(scores: LocalScoreTable, k: int, budget: int = 500,
                      seed: int = 0, dag_seed: int = 0) -> list:
    """Graphs induced by the structure oracle's k top-level partitions.

    Each of the oracle's k top-ranked half-splits of all d variables is
    completed into a full order by recursively taking the oracle's single
    top-ranked split of every sub-block, then converted to one sampled
    graph. These are exactly the order samples that seed a circuit built
    with top-level expansion factor k."""
    from .circuit import builtin_order_mcmc_oracle

    oracle = builtin_order_mcmc_oracle(scores, budget, seed)
    cache: dict = {}

    def complete(s1: int, s2: int) -> list:
        if s2.bit_count() == 1:
            return list(bits_of(s2))
        key = (s1, s2)
        if key not in cache:
            cache[key] = oracle(s1, s2, 1)[0]
        s21 = cache[key]
        s22 = s2 & ~s21
        return complete(s1, s21) + complete(s1 | s21, s22)

    full = (1 << scores.d) - 1
    if scores.d == 1:
        tops = [0]
    else:
        tops = oracle(0, full, k)
    orders = []
    for s21 in tops:
        s22 = full & ~s21
        orders.append(tuple(complete(0, s21) + complete(s21, s22)))
    while len(orders) < k:
        orders.append(orders[-1])
    return _dags_from_orders(scores, orders, np.random.default_rng(dag_seed))

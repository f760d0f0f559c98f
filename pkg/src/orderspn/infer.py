"""Exact circuit inference: marginals, conditionals, MPE, sampling, and the
exact ELBO with analytic gradients.

Every pass is a flat bottom-up sweep over the layered arrays; each circuit
link is touched exactly once per pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import KIND_LEAF, KIND_SUM, OrderSpn
from .leaf import EdgeConjunction, LeafTable, leaf_mpe, leaf_sample
from .model import Dag, Order, bits_of


class ConditioningError(ValueError):
    """Conditioning event has zero probability under the circuit."""


def _lse(arr: np.ndarray, axis: int) -> np.ndarray:
    mx = arr.max(axis=axis, keepdims=True)
    safe = np.where(np.isfinite(mx), mx, 0.0)
    with np.errstate(divide="ignore"):
        out = np.squeeze(safe, axis=axis) + np.log(
            np.exp(arr - safe).sum(axis=axis)
        )
    return np.where(np.isfinite(np.squeeze(mx, axis=axis)), out, -np.inf)


def _leaf_values(table: LeafTable, layer, conj: EdgeConjunction, mode: str) -> np.ndarray:
    """Vectorized log value of every leaf in a layer under the conjunction."""
    out = np.zeros(layer.n)
    for i in np.unique(layer.var):
        sel = np.nonzero(layer.var == i)[0]
        s1 = layer.s1[sel]
        cand = table.scores.candidates[int(i)]
        p3 = table.pow3[int(i)]
        req = conj.required[int(i)]
        forb = conj.forbidden[int(i)]
        cmask = table.candidate_mask(int(i))
        if req & ~cmask:
            out[sel] = -np.inf
            continue
        num = np.zeros(len(sel), dtype=np.int64)
        den = np.zeros(len(sel), dtype=np.int64)
        bad = np.zeros(len(sel), dtype=bool)
        for t, c in enumerate(cand):
            in_s1 = ((s1 >> c) & 1).astype(bool)
            if req & (1 << c):
                bad |= ~in_s1
                num += p3[t]
            elif forb & (1 << c):
                num += 2 * p3[t]
            else:
                num += np.where(in_s1, 0, 2 * p3[t])
            den += np.where(in_s1, 0, 2 * p3[t])
        src = table.fmax[int(i)] if mode == "max" else table.f[int(i)]
        dvals = table.f[int(i)][den]
        with np.errstate(invalid="ignore"):
            vals = src[num] - dvals
        vals[~np.isfinite(dvals)] = -np.inf  # zero-mass leaf: dead branch
        vals[bad] = -np.inf
        out[sel] = vals
    return out


@dataclass
class EvidencePass:
    """Per-node log values of one bottom-up pass for a conjunction."""

    conj: EdgeConjunction
    sum_vals: list
    leaf_vals: list
    prod_vals: list
    argmax: list = None

    @property
    def root(self) -> float:
        if self.sum_vals[0] is not None:
            return float(self.sum_vals[0][0])
        return float(self.leaf_vals[0][0])


def _gather(kind, idx, sum_vals, leaf_vals):
    out = np.empty(kind.shape)
    sel = kind == KIND_SUM
    if sel.any():
        out[sel] = sum_vals[idx[sel]]
    if (~sel).any():
        out[~sel] = leaf_vals[idx[~sel]]
    return out


def evidence_pass(
    spn: OrderSpn,
    table: LeafTable,
    conj: EdgeConjunction,
    mode: str = "sum",
    counters: dict | None = None,
) -> EvidencePass:
    depths = len(spn.sums)
    sum_vals = [None] * depths
    leaf_vals = [None] * depths
    prod_vals = [None] * depths
    argmax = [None] * depths
    for depth in range(depths - 1, -1, -1):
        if spn.leaves[depth] is not None:
            leaf_vals[depth] = _leaf_values(table, spn.leaves[depth], conj, mode)
            if counters is not None:
                counters["edge_visits"] = counters.get("edge_visits", 0) + spn.leaves[depth].n
        layer = spn.sums[depth]
        if layer is None:
            continue
        lv = _gather(layer.lkind, layer.lidx, sum_vals[depth + 1], leaf_vals[depth + 1])
        rv = _gather(layer.rkind, layer.ridx, sum_vals[depth + 1], leaf_vals[depth + 1])
        child = lv + rv
        logphi = layer.log_phi()
        scored = np.where(layer.valid, logphi + child, -np.inf)
        prod_vals[depth] = child
        if mode == "max":
            sum_vals[depth] = scored.max(axis=1)
            argmax[depth] = scored.argmax(axis=1)
        else:
            sum_vals[depth] = _lse(scored, axis=1)
        if counters is not None:
            counters["edge_visits"] = counters.get("edge_visits", 0) + 3 * int(layer.valid.sum())
    return EvidencePass(conj, sum_vals, leaf_vals, prod_vals, argmax if mode == "max" else None)


def marginal(spn: OrderSpn, table: LeafTable, conj: EdgeConjunction,
             counters: dict | None = None) -> float:
    """log q(conjunction): one bottom-up pass."""
    return evidence_pass(spn, table, conj, counters=counters).root


def conditional(spn: OrderSpn, table: LeafTable, conj: EdgeConjunction,
                given: EdgeConjunction) -> float:
    """log q(conj | given) as a ratio of two marginals."""
    den = marginal(spn, table, given)
    if den == -math.inf:
        raise ConditioningError("conditioning event has zero probability")
    num = marginal(spn, table, conj.conjoin(given))
    return num - den


def mpe(spn: OrderSpn, table: LeafTable, given: EdgeConjunction):
    """(max_G log q(G | given), attaining Dag) via a max pass plus top-down
    decode of the argmax choices."""
    ep = evidence_pass(spn, table, given, mode="max")
    if ep.root == -math.inf:
        raise ConditioningError("no graph in the support satisfies the condition")
    norm = marginal(spn, table, given)
    columns = [0] * spn.d

    def decode(kind, depth, idx):
        if kind == KIND_LEAF:
            lyr = spn.leaves[depth]
            var = int(lyr.var[idx])
            _, arg = leaf_mpe(
                table, var, int(lyr.s1[idx]),
                req=given.required[var], forb=given.forbidden[var],
            )
            columns[var] = arg
            return
        layer = spn.sums[depth]
        k = int(ep.argmax[depth][idx])
        decode(int(layer.lkind[idx, k]), depth + 1, int(layer.lidx[idx, k]))
        decode(int(layer.rkind[idx, k]), depth + 1, int(layer.ridx[idx, k]))

    if spn.sums[0] is not None:
        decode(KIND_SUM, 0, 0)
    else:
        decode(KIND_LEAF, 0, 0)
    return ep.root - norm, Dag(tuple(columns), spn.d)


def _sample_one(spn, table, conj, ep, rng, want_logq=False, cache=None):
    columns = [0] * spn.d
    logq = 0.0
    if cache is None:
        cache = {}

    def walk(kind, depth, idx):
        nonlocal logq
        if kind == KIND_LEAF:
            lyr = spn.leaves[depth]
            var = int(lyr.var[idx])
            s1 = int(lyr.s1[idx])
            g = leaf_sample(
                table, var, s1, conj.required[var], conj.forbidden[var], rng
            )
            columns[var] = g
            if want_logq:
                from .leaf import leaf_log_norm

                logq += table.scores.log_score(var, g) - leaf_log_norm(table, var, s1)
            return [var]
        layer = spn.sums[depth]
        if depth not in cache:
            cache[depth] = layer.log_phi()
        logphi = cache[depth][idx]
        if ep is not None:
            lv = _gather(layer.lkind[idx], layer.lidx[idx],
                         ep.sum_vals[depth + 1], ep.leaf_vals[depth + 1])
            rv = _gather(layer.rkind[idx], layer.ridx[idx],
                         ep.sum_vals[depth + 1], ep.leaf_vals[depth + 1])
            w = np.where(layer.valid[idx], logphi + lv + rv, -np.inf)
            w = w - _lse(w[None, :], axis=1)[0]
        else:
            w = np.where(layer.valid[idx], logphi, -np.inf)
        probs = np.exp(w)
        probs /= probs.sum()
        k = int(rng.choice(len(probs), p=probs))
        if want_logq:
            logq += float(logphi[k])
        left = walk(int(layer.lkind[idx, k]), depth + 1, int(layer.lidx[idx, k]))
        right = walk(int(layer.rkind[idx, k]), depth + 1, int(layer.ridx[idx, k]))
        return left + right

    if spn.sums[0] is not None:
        perm = walk(KIND_SUM, 0, 0)
    else:
        perm = walk(KIND_LEAF, 0, 0)
    out = Order(tuple(perm)), Dag(tuple(columns), spn.d)
    if want_logq:
        return out + (logq,)
    return out


def sample(spn: OrderSpn, table: LeafTable, rng, want_logq: bool = False,
           cache: dict | None = None):
    """Exact unconditional sample of (order, graph) by top-down traversal.

    Pass the same dict as `cache` across calls to reuse the per-layer
    normalized weights."""
    return _sample_one(spn, table, EdgeConjunction.empty(spn.d), None, rng,
                       want_logq, cache)


def conditional_sample(spn: OrderSpn, table: LeafTable, given: EdgeConjunction, rng):
    """Exact sample from q(. | given): evidence pass then reweighted descent."""
    ep = evidence_pass(spn, table, given)
    if ep.root == -math.inf:
        raise ConditioningError("conditioning event has zero probability")
    return _sample_one(spn, table, given, ep, rng)


def leaf_elbo_constants(spn: OrderSpn, table: LeafTable) -> list:
    """Per-depth arrays of leaf ELBO constants log tau_i(S1 cap C_i)."""
    consts = []
    for lyr in spn.leaves:
        if lyr is None:
            consts.append(None)
            continue
        vals = np.zeros(lyr.n)
        for i in np.unique(lyr.var):
            sel = np.nonzero(lyr.var == i)[0]
            cand = table.scores.candidates[int(i)]
            p3 = table.pow3[int(i)]
            den = np.zeros(len(sel), dtype=np.int64)
            for t, c in enumerate(cand):
                den += np.where(((lyr.s1[sel] >> c) & 1).astype(bool), 0, 2 * p3[t])
            vals[sel] = table.f[int(i)][den]
        consts.append(vals)
    return consts


def _elbo_forward(spn: OrderSpn, consts: list):
    depths = len(spn.sums)
    sum_e = [None] * depths
    prod_e = [None] * depths
    for depth in range(depths - 1, -1, -1):
        layer = spn.sums[depth]
        if layer is None:
            continue
        lv = _gather(layer.lkind, layer.lidx, sum_e[depth + 1], consts[depth + 1])
        rv = _gather(layer.rkind, layer.ridx, sum_e[depth + 1], consts[depth + 1])
        child = lv + rv
        logphi = layer.log_phi()
        phi = np.where(layer.valid, np.exp(logphi), 0.0)
        a = np.where(phi > 0, child - logphi, 0.0)
        prod_e[depth] = child
        sum_e[depth] = (phi * a).sum(axis=1)
    return sum_e, prod_e


def elbo(spn: OrderSpn, table: LeafTable, consts: list | None = None) -> float:
    """Exact evidence lower bound on log Z of the order-modular target."""
    if consts is None:
        consts = leaf_elbo_constants(spn, table)
    sum_e, _ = _elbo_forward(spn, consts)
    if spn.sums[0] is not None:
        return float(sum_e[0][0])
    return float(consts[0][0])


def elbo_gradients(spn: OrderSpn, table: LeafTable, consts: list | None = None):
    """(elbo, per-layer d elbo / d theta) by one reverse sweep."""
    if consts is None:
        consts = leaf_elbo_constants(spn, table)
    if spn.sums[0] is None:
        return float(consts[0][0]), []
    sum_e, prod_e = _elbo_forward(spn, consts)
    depths = len(spn.sums)
    g = [None] * depths
    g[0] = np.ones(1)
    grads = [None] * depths
    for depth in range(depths):
        layer = spn.sums[depth]
        if layer is None:
            continue
        logphi = layer.log_phi()
        phi = np.where(layer.valid, np.exp(logphi), 0.0)
        a = np.where(phi > 0, prod_e[depth] - logphi, 0.0)
        grads[depth] = np.where(
            layer.valid, g[depth][:, None] * phi * (a - sum_e[depth][:, None]), 0.0
        )
        if depth + 1 < depths and spn.sums[depth + 1] is not None:
            g[depth + 1] = np.zeros(spn.sums[depth + 1].n)
            contrib = g[depth][:, None] * phi
            sel = (layer.lkind == KIND_SUM) & layer.valid
            np.add.at(g[depth + 1], layer.lidx[sel], contrib[sel])
            sel = (layer.rkind == KIND_SUM) & layer.valid
            np.add.at(g[depth + 1], layer.ridx[sel], contrib[sel])
    val = float(sum_e[0][0])
    return val, [gr for gr in grads if gr is not None]


@dataclass
class FitConfig:
    lr: float = 0.1
    iters: int = 700
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def fit(spn: OrderSpn, table: LeafTable, config: FitConfig = FitConfig()):
    """Maximize the exact ELBO over theta with Adam; returns the trace of
    ELBO values (length iters + 1, final entry after the last step)."""
    consts = leaf_elbo_constants(spn, table)
    layers = [s for s in spn.sums if s is not None]
    if not layers:
        return np.array([elbo(spn, table, consts)])
    ms = [np.zeros_like(l.theta) for l in layers]
    vs = [np.zeros_like(l.theta) for l in layers]
    trace = []
    for it in range(config.iters):
        val, grads = elbo_gradients(spn, table, consts)
        if not math.isfinite(val):
            raise RuntimeError(f"non-finite ELBO at iteration {it}: {val}")
        trace.append(val)
        t = it + 1
        for l, gr, m, v in zip(layers, grads, ms, vs):
            m += (1 - config.beta1) * (gr - m)
            v += (1 - config.beta2) * (gr * gr - v)
            mhat = m / (1 - config.beta1**t)
            vhat = v / (1 - config.beta2**t)
            step = config.lr * mhat / (np.sqrt(vhat) + config.eps)
            l.theta = np.where(l.valid, l.theta + step, -np.inf)
    trace.append(elbo(spn, table, consts))
    return np.array(trace)


def set_exact_weights(spn: OrderSpn, table: LeafTable) -> float:
    """Set every sum node's weights to the exact conditional masses of its
    children's subproblems; returns the circuit-support log partition sum."""
    consts = leaf_elbo_constants(spn, table)
    depths = len(spn.sums)
    vals = [None] * depths
    for depth in range(depths - 1, -1, -1):
        layer = spn.sums[depth]
        if layer is None:
            continue
        lv = _gather(layer.lkind, layer.lidx, vals[depth + 1], consts[depth + 1])
        rv = _gather(layer.rkind, layer.ridx, vals[depth + 1], consts[depth + 1])
        child = np.where(layer.valid, lv + rv, -np.inf)
        node = _lse(child, axis=1)
        layer.theta = np.where(layer.valid, child - node[:, None], -np.inf)
        vals[depth] = node
    if spn.sums[0] is not None:
        return float(vals[0][0])
    return float(consts[0][0])

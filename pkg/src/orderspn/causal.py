"""Posterior-averaged total causal effects in closed form.

Computes E_q[(I - B)^{-1} - I] in one bottom-up pass: each node carries a
d x |S2| buffer of expected total effects of every variable onto the node's
free variables, composed across products by path concatenation.
"""

from __future__ import annotations

import numpy as np

from .circuit import KIND_SUM, OrderSpn
from .leaf import LeafTable
from .model import Dag, bits_of
from .score import BgeParams, BgeScorer, Dataset, LocalScoreTable


class FixedWeightModel:
    """Edge weights independent of the graph: scalar or full d x d matrix."""

    def __init__(self, value, d: int):
        self.d = d
        if np.isscalar(value):
            self.matrix = np.full((d, d), float(value))
        else:
            self.matrix = np.asarray(value, dtype=float)
            if self.matrix.shape != (d, d):
                raise ValueError("weight matrix must be d x d")

    def coefficients(self, child: int, parents_mask: int) -> np.ndarray:
        return np.array([self.matrix[p, child] for p in bits_of(parents_mask)])


class BgePosteriorWeightModel:
    """Per-graph posterior-mean linear weights from the conjugate normal
    model: for parent set Pa of child j the mean coefficient vector is
    R[Pa, Pa]^{-1} R[Pa, j]."""

    def __init__(self, data: Dataset, params: BgeParams = BgeParams()):
        self.d = data.d
        self.r_matrix = BgeScorer(data, params).r

    def coefficients(self, child: int, parents_mask: int) -> np.ndarray:
        pa = list(bits_of(parents_mask))
        if not pa:
            return np.zeros(0)
        sub = self.r_matrix[np.ix_(pa, pa)]
        rhs = self.r_matrix[pa, child]
        return np.linalg.solve(sub, rhs)


def fixed_weight_model(value, d: int) -> FixedWeightModel:
    return FixedWeightModel(value, d)


def bge_posterior_weight_model(data: Dataset, params: BgeParams = BgeParams()):
    return BgePosteriorWeightModel(data, params)


def model_weight_matrix(model, dag: Dag) -> np.ndarray:
    """B[p, c] = model coefficient of edge p -> c for this graph."""
    d = dag.d
    out = np.zeros((d, d))
    for c in range(d):
        pa = list(bits_of(dag.columns[c]))
        if pa:
            out[pa, c] = model.coefficients(c, dag.columns[c])
    return out


def expectation_tables(scores: LocalScoreTable, model) -> list:
    """Per variable i: array E[pos, t] = E[B_{c_t, i}] over parent sets drawn
    from the local score restricted to candidate positions in pos.

    Exact subset-sum (zeta transform) over all parent sets; no sampling.
    """
    tables = []
    for i in range(scores.d):
        cand = scores.candidates[i]
        m = len(cand)
        raw = scores.tables[i]
        smax = raw.max()
        p = np.exp(raw - smax)
        num = np.zeros((1 << m, m))
        for pos in range(1 << m):
            if p[pos] == 0.0:
                continue
            coef = model.coefficients(i, scores.global_mask(i, pos))
            w = p[pos] * coef
            for t_out, t in enumerate(bits_of(pos)):
                num[pos, t] = w[t_out]
        den = p.copy()
        for b in range(m):
            step = 1 << b
            for pos in range(1 << m):
                if pos & step:
                    num[pos] += num[pos ^ step]
                    den[pos] += den[pos ^ step]
        # zero-mass allowed sets (all scores -inf) never receive sum weight;
        # report 0 for them instead of nan
        with np.errstate(invalid="ignore", divide="ignore"):
            tables.append(np.where(den[:, None] > 0, num / den[:, None], 0.0))
    return tables


def _mask_bits_array(masks: np.ndarray, width: int) -> np.ndarray:
    """Row per mask: its set bit positions, ascending, exactly width each."""
    out = np.empty((len(masks), width), dtype=np.int64)
    for r, m in enumerate(masks):
        out[r] = list(bits_of(int(m)))
    return out


def bce_matrix(
    spn: OrderSpn,
    table: LeafTable,
    model,
    counters: dict | None = None,
) -> np.ndarray:
    """Posterior mean of total effects E_q[(I - B)^{-1} - I], exactly.

    One bottom-up pass; per depth, nodes are grouped by free-block size and
    composed with batched matrix products.
    """
    scores = table.scores
    d = spn.d
    etabs = expectation_tables(scores, model)
    depths = len(spn.sums)
    # Per depth: padded buffer array (n_nodes, d, max_block) with each node's
    # columns ordered by ascending variable index in the leading positions.
    sum_buf = [None] * depths
    leaf_buf = [None] * depths
    for depth in range(depths - 1, -1, -1):
        lyr = spn.leaves[depth]
        if lyr is not None:
            buf = np.zeros((lyr.n, d, 1))
            for i in np.unique(lyr.var):
                sel = np.nonzero(lyr.var == i)[0]
                i = int(i)
                cand = scores.candidates[i]
                pos = np.zeros(len(sel), dtype=np.int64)
                for t, c in enumerate(cand):
                    pos |= ((lyr.s1[sel] >> c) & 1) << t
                for t, c in enumerate(cand):
                    buf[sel, c, 0] = np.where(pos >> t & 1, etabs[i][pos, t], 0.0)
            leaf_buf[depth] = buf
        layer = spn.sums[depth]
        if layer is None:
            continue
        sizes = np.array([int(m).bit_count() for m in layer.s2])
        buf = np.zeros((layer.n, d, int(sizes.max())))
        phi = np.exp(layer.log_phi())
        for n2 in np.unique(sizes):
            grp = np.nonzero(sizes == n2)[0]
            n2 = int(n2)
            h1, h2 = n2 // 2, n2 - n2 // 2
            s2v = _mask_bits_array(layer.s2[grp], n2)
            acc = np.zeros((len(grp), d, n2))
            for k in range(layer.theta.shape[1]):
                ok = layer.valid[grp, k] & (phi[grp, k] > 0)
                sub = grp[ok]
                if not len(sub):
                    continue
                rows = np.nonzero(ok)[0]
                m1 = _gather3(layer.lkind[sub, k], layer.lidx[sub, k],
                              sum_buf[depth + 1], leaf_buf[depth + 1])[:, :, :h1]
                m2 = _gather3(layer.rkind[sub, k], layer.ridx[sub, k],
                              sum_buf[depth + 1], leaf_buf[depth + 1])[:, :, :h2]
                s21v = _mask_bits_array(layer.s21[sub, k], h1)
                # exit rows of the right factor = the left block's variables
                mrows = m2[np.arange(len(sub))[:, None], s21v, :]
                cross = m1 @ mrows
                prod = np.zeros((len(sub), d, n2))
                c21 = (s2v[rows][:, None, :] == s21v[:, :, None]).argmax(-1)
                s22v = _mask_bits_array(
                    layer.s2[sub] & ~layer.s21[sub, k], h2
                )
                c22 = (s2v[rows][:, None, :] == s22v[:, :, None]).argmax(-1)
                np.put_along_axis(prod, c21[:, None, :], m1, axis=2)
                np.put_along_axis(prod, c22[:, None, :], m2 + cross, axis=2)
                acc[rows] += phi[sub, k][:, None, None] * prod
                if counters is not None:
                    counters["bce_madds"] = (
                        counters.get("bce_madds", 0) + len(sub) * d * h1 * h2
                    )
            buf[grp, :, :n2] = acc
        sum_buf[depth] = buf
    # the root block is all d variables in ascending order
    if spn.sums[0] is not None:
        return sum_buf[0][0]
    return np.pad(leaf_buf[0][0], ((0, 0), (0, d - 1)))


def _gather3(kind, idx, sum_arr, leaf_arr):
    d = (sum_arr if sum_arr is not None else leaf_arr).shape[1]
    width = max(
        sum_arr.shape[2] if sum_arr is not None else 1,
        leaf_arr.shape[2] if leaf_arr is not None else 1,
    )
    out = np.zeros((len(kind), d, width))
    sel = kind == KIND_SUM
    if sel.any():
        w = sum_arr.shape[2]
        out[sel, :, :w] = sum_arr[idx[sel]]
    if (~sel).any():
        w = leaf_arr.shape[2]
        out[~sel, :, :w] = leaf_arr[idx[~sel]]
    return out

import itertools
import math
import time

import numpy as np
import pytest
from scipy.special import logsumexp

from orderspn.leaf import (
    EdgeConjunction,
    InfeasibleConditionError,
    build_leaf_table,
    leaf_log_norm,
    leaf_marginal,
    leaf_mpe,
    leaf_sample,
)
from orderspn.model import bits_of, mask_of
from orderspn.score import LocalScoreTable

from conftest import random_scores


def enum_leaf(scores, i, s1, req=0, forb=0):
    """Brute-force leaf conditional: enumerate all parent sets."""
    cand = scores.candidates[i]
    allowed, masses = [], []
    for bits in itertools.product([0, 1], repeat=len(cand)):
        g = mask_of(c for c, b in zip(cand, bits) if b)
        if g & ~s1:
            continue
        allowed.append(g)
        masses.append(scores.log_score(i, g))
    norm = logsumexp(masses)
    sat = [
        (g, m) for g, m in zip(allowed, masses)
        if not (req & ~g) and not (forb & g)
    ]
    return sat, norm


class TestConjunction:
    def test_contradictory_literals_rejected(self):
        with pytest.raises(ValueError):
            EdgeConjunction.from_literals(3, [(1, 0, True), (1, 0, False)])

    def test_self_loop_rejected(self):
        with pytest.raises(ValueError):
            EdgeConjunction.from_literals(3, [(1, 1, True)])

    def test_conjoin_merges_masks(self):
        a = EdgeConjunction.from_literals(3, [(1, 0, True)])
        b = EdgeConjunction.from_literals(3, [(2, 0, False)])
        c = a.conjoin(b)
        assert c.required[1] == 1 and c.forbidden[2] == 1

    def test_literals_round_trip(self):
        lits = [(1, 0, True), (2, 1, False), (2, 0, True)]
        c = EdgeConjunction.from_literals(3, lits)
        assert sorted(c.literals()) == sorted(lits)


class TestLeafQueries:
    @pytest.mark.parametrize("seed", range(4))
    def test_marginal_matches_enumeration(self, seed):
        d = 5
        scores = random_scores(d, seed)
        table = build_leaf_table(scores)
        rng = np.random.default_rng(seed)
        for _ in range(30):
            i = int(rng.integers(d))
            s1 = int(rng.integers(1 << d)) & ~(1 << i)
            others = [j for j in bits_of(s1)]
            req = mask_of(j for j in others if rng.random() < 0.3)
            forb = mask_of(
                j for j in range(d)
                if j != i and not req >> j & 1 and rng.random() < 0.2
            )
            sat, norm = enum_leaf(scores, i, s1, req, forb)
            got = leaf_marginal(table, i, s1, req, forb)
            if not sat:
                assert got == -math.inf
            else:
                want = logsumexp([m for _, m in sat]) - norm
                assert got == pytest.approx(want, abs=1e-10)

    @pytest.mark.parametrize("seed", range(4))
    def test_mpe_matches_enumeration(self, seed):
        d = 5
        scores = random_scores(d, 10 + seed)
        table = build_leaf_table(scores)
        rng = np.random.default_rng(seed)
        for _ in range(30):
            i = int(rng.integers(d))
            s1 = int(rng.integers(1 << d)) & ~(1 << i)
            sat, norm = enum_leaf(scores, i, s1)
            val, arg = leaf_mpe(table, i, s1)
            best = max(sat, key=lambda gm: (gm[1], -gm[0]))
            assert val == pytest.approx(best[1] - norm, abs=1e-10)
            assert arg == best[0]

    def test_log_norm_matches_enumeration(self):
        scores = random_scores(4, 3)
        table = build_leaf_table(scores)
        _, norm = enum_leaf(scores, 2, 0b1001)
        assert leaf_log_norm(table, 2, 0b1001) == pytest.approx(norm, abs=1e-10)

    def test_required_edge_outside_prefix_is_impossible(self):
        scores = random_scores(3, 0)
        table = build_leaf_table(scores)
        assert leaf_marginal(table, 0, 0b010, req=0b100) == -math.inf

    def test_empty_condition_has_probability_one(self):
        scores = random_scores(3, 1)
        table = build_leaf_table(scores)
        assert leaf_marginal(table, 1, 0b101) == pytest.approx(0.0, abs=1e-12)


class TestLeafSampling:
    def test_frequencies_match_conditional(self):
        d = 4
        scores = random_scores(d, 5, spread=1.0)
        table = build_leaf_table(scores)
        i, s1, req, forb = 2, 0b1011, 0b0001, 0b1000
        sat, norm = enum_leaf(scores, i, s1, req, forb)
        total = logsumexp([m for _, m in sat])
        want = {g: math.exp(m - total) for g, m in sat}
        rng = np.random.default_rng(0)
        counts = {}
        n = 20000
        for _ in range(n):
            g = leaf_sample(table, i, s1, req, forb, rng)
            counts[g] = counts.get(g, 0) + 1
        assert set(counts) <= set(want)
        for g, p in want.items():
            assert counts.get(g, 0) / n == pytest.approx(p, abs=0.02)

    def test_infeasible_condition_raises(self):
        scores = random_scores(3, 2)
        table = build_leaf_table(scores)
        with pytest.raises(InfeasibleConditionError):
            leaf_sample(table, 0, 0, 0b010, 0, np.random.default_rng(0))


class TestScale:
    def test_twelve_candidate_build_under_five_seconds(self):
        d = 13
        rng = np.random.default_rng(0)
        cands = tuple(tuple(j for j in range(d) if j != i) for i in range(d))
        tables = tuple(rng.normal(size=1 << 12) for _ in range(d))
        scores = LocalScoreTable(d, cands, tables)
        t0 = time.time()
        table = build_leaf_table(scores, cap=12)
        elapsed = time.time() - t0
        assert elapsed < 5.0
        assert len(table.f[0]) == 3 ** 12

    def test_cap_enforced(self):
        scores = random_scores(4, 0)
        with pytest.raises(ValueError):
            build_leaf_table(scores, cap=2)

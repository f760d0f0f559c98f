import numpy as np
import pytest

from orderspn import causal, infer, oracle
from orderspn.circuit import build_regular
from orderspn.leaf import build_leaf_table
from orderspn.model import Dag, Dataset, sample_erdos_renyi_dag, sample_weights_and_data
from orderspn.score import LocalScoreTable, build_score_table, full_candidates

from conftest import random_scores


def exhaustive_fit(scores, expansion):
    spn = build_regular(
        scores, None, expansion, exhaustive_threshold=5,
        rng=np.random.default_rng(0),
    )
    table = build_leaf_table(scores)
    infer.set_exact_weights(spn, table)
    return spn, table


def forced_graph_scores(d, dag):
    """Score table putting all mass on one graph."""
    cands = tuple(tuple(j for j in range(d) if j != i) for i in range(d))
    tables = []
    for i in range(d):
        t = np.full(1 << (d - 1), -np.inf)
        tmp = LocalScoreTable(d, cands, tuple(np.zeros(1 << (d - 1)) for _ in range(d)))
        t[tmp.pos_mask(i, dag.columns[i])] = 0.0
        tables.append(t)
    return LocalScoreTable(d, cands, tuple(tables))


class TestWeightModels:
    def test_fixed_scalar_and_matrix(self):
        m = causal.fixed_weight_model(0.5, 3)
        assert np.allclose(m.coefficients(0, 0b110), [0.5, 0.5])
        w = np.arange(9.0).reshape(3, 3)
        m2 = causal.fixed_weight_model(w, 3)
        assert np.allclose(m2.coefficients(2, 0b011), [w[0, 2], w[1, 2]])

    def test_empty_parent_set_gives_empty_vector(self):
        m = causal.bge_posterior_weight_model(
            Dataset(np.random.default_rng(0).normal(size=(10, 3)))
        )
        assert m.coefficients(1, 0).size == 0

    def test_bge_posterior_mean_approaches_ols(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=10_000)
        y = 1.0 * x + 0.1 * rng.normal(size=10_000)
        data = Dataset(np.column_stack([x, y]))
        m = causal.bge_posterior_weight_model(data)
        coef = m.coefficients(1, 0b01)[0]
        assert coef == pytest.approx(1.0, abs=0.05)


class TestExpectationTables:
    def test_matches_direct_average(self):
        scores = random_scores(3, 5, spread=1.0)
        model = causal.fixed_weight_model(1.0, 3)
        tabs = causal.expectation_tables(scores, model)
        # allowed set = both candidates of variable 0: E[B] = P(parent in set)
        i = 0
        probs = np.exp(scores.tables[i] - scores.tables[i].max())
        full = probs.sum()
        for t in range(2):
            want = probs[[pm for pm in range(4) if pm >> t & 1]].sum() / full
            assert tabs[i][0b11, t] == pytest.approx(want, abs=1e-12)


class TestBceMatrix:
    @pytest.mark.parametrize("d,expansion", [(3, (3, 2)), (4, (6, 2))])
    def test_matches_oracle_fixed_weights(self, d, expansion):
        scores = random_scores(d, d, spread=1.0)
        spn, table = exhaustive_fit(scores, expansion)
        post = oracle.enumerate_posterior(scores)
        model = causal.fixed_weight_model(0.7, d)
        got = causal.bce_matrix(spn, table, model)
        want = oracle.exact_bce(
            post, lambda g: causal.model_weight_matrix(model, g)
        )
        assert np.abs(got - want).max() < 1e-9

    def test_matches_oracle_bge_weights(self):
        d = 4
        dag = sample_erdos_renyi_dag(d, 4, 3)
        _, data = sample_weights_and_data(dag, 60, rng_seed=3)
        scores = build_score_table(data, full_candidates(d))
        spn, table = exhaustive_fit(scores, (6, 2))
        post = oracle.enumerate_posterior(scores)
        model = causal.bge_posterior_weight_model(data)
        got = causal.bce_matrix(spn, table, model)
        want = oracle.exact_bce(
            post, lambda g: causal.model_weight_matrix(model, g)
        )
        assert np.abs(got - want).max() < 1e-9

    def test_point_mass_chain_is_path_sum(self):
        dag = Dag((0, 0b001, 0b010), 3)  # 0 -> 1 -> 2
        scores = forced_graph_scores(3, dag)
        spn, table = exhaustive_fit(scores, (3, 2))
        w = np.zeros((3, 3))
        w[0, 1], w[1, 2] = 2.0, 3.0
        got = causal.bce_matrix(spn, table, causal.fixed_weight_model(w, 3))
        assert got[0, 1] == pytest.approx(2.0, abs=1e-12)
        assert got[1, 2] == pytest.approx(3.0, abs=1e-12)
        assert got[0, 2] == pytest.approx(6.0, abs=1e-12)
        assert got[2, 0] == 0.0

    def test_two_graph_mixture(self):
        # mixture over two forced graphs via a two-entry leaf for variable 1
        d = 3
        cands = tuple(tuple(j for j in range(d) if j != i) for i in range(d))
        t0 = np.array([0.0, -np.inf, -np.inf, -np.inf])
        t1 = np.array([np.log(0.3), np.log(0.7), -np.inf, -np.inf])
        t2 = np.array([-np.inf, -np.inf, 0.0, -np.inf])  # parents {1}
        scores = LocalScoreTable(d, cands, (t0, t1, t2))
        spn, table = exhaustive_fit(scores, (3, 2))
        w = np.zeros((3, 3))
        w[0, 1], w[1, 2] = 2.0, 3.0
        got = causal.bce_matrix(spn, table, causal.fixed_weight_model(w, 3))
        # G1: chain 0->1->2 (mass 0.7, 1 consistent order); G2: lone edge
        # 1->2 (mass 0.3, 3 consistent orders): posterior 0.7 : 0.9
        p1 = 0.7 / 1.6
        assert got[0, 1] == pytest.approx(p1 * 2.0, abs=1e-12)
        assert got[0, 2] == pytest.approx(p1 * 6.0, abs=1e-12)
        assert got[1, 2] == pytest.approx(3.0, abs=1e-12)

    def test_diagonal_zero_and_counter_bound(self):
        d = 4
        scores = random_scores(d, 9, spread=1.0)
        spn, table = exhaustive_fit(scores, (6, 2))
        counters = {}
        got = causal.bce_matrix(
            spn, table, causal.fixed_weight_model(1.0, d), counters=counters
        )
        assert np.all(np.diag(got) == 0)
        n_links = sum(int(l.valid.sum()) for l in spn.sums if l is not None)
        n_leaves = sum(l.n for l in spn.leaves if l is not None)
        m_size = 3 * n_links + n_leaves
        assert counters["bce_madds"] <= d**3 * m_size

    def test_all_weights_one_leaf_equals_edge_probability(self):
        d = 3
        scores = random_scores(d, 11, spread=1.0)
        spn, table = exhaustive_fit(scores, (3, 2))
        post = oracle.enumerate_posterior(scores)
        got = causal.bce_matrix(spn, table, causal.fixed_weight_model(1.0, d))
        # single-edge effects dominate: compare the full matrix to the oracle
        want = oracle.exact_bce(
            post,
            lambda g: causal.model_weight_matrix(
                causal.fixed_weight_model(1.0, d), g
            ),
        )
        assert np.abs(got - want).max() < 1e-10

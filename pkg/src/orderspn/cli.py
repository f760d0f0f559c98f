"""Command-line harness: data generation, end-to-end runs, circuit queries,
effect matrices, brute-force references, and seed sweeps.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import causal, infer, metrics, oracle
from .circuit import (
    OrderSpn,
    audit,
    build_regular,
    builtin_order_mcmc_oracle,
    n_sum_layers,
    random_partition_oracle,
    size_and_support,
)
from .leaf import EdgeConjunction, build_leaf_table
from .model import (
    Dag,
    Dataset,
    sample_erdos_renyi_dag,
    sample_weights_and_data,
    simulate_data,
)
from .score import (
    BgeParams,
    LocalScoreTable,
    ScoreNumericalError,
    build_score_table,
    full_candidates,
    select_candidates,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    pass


def max_threads() -> int:
    """Parallelism cap from ORDERSPN_THREADS (default: all cores)."""
    raw = os.environ.get("ORDERSPN_THREADS", "")
    if not raw:
        return os.cpu_count() or 1
    try:
        val = int(raw)
    except ValueError as exc:
        raise ConfigError(f"ORDERSPN_THREADS must be an integer, got {raw!r}") from exc
    if val < 1:
        raise ConfigError("ORDERSPN_THREADS must be >= 1")
    return val


@dataclass
class RunConfig:
    d: int = 16
    n_train: int = 100
    n_test: int = 1000
    expected_edges: int | None = None
    seed: int = 0
    candidate_k: int | None = None
    expansion_factors: list = field(default_factory=lambda: [64, 16, 6, 2])
    oracle: str = "mcmc"
    oracle_budget: int = 500
    lr: float = 0.1
    iters: int = 700
    weight_model: str = "bge"   # "bge" or a float encoded as string/number
    eshd_samples: int = 200
    mll_samples: int = 100
    coverage_edges: list = field(default_factory=list)
    coverage_trials: int = 50
    noise_var: float = 0.1
    out_dir: str | None = None

    @staticmethod
    def from_dict(obj: dict) -> "RunConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = set(RunConfig().__dict__)
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        cfg = RunConfig(**obj)
        if cfg.d < 1:
            raise ConfigError("d must be >= 1")
        for name in ("n_train", "n_test", "coverage_trials", "eshd_samples",
                     "mll_samples", "iters", "oracle_budget"):
            if getattr(cfg, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if cfg.expected_edges is None:
            cfg.expected_edges = 2 * cfg.d
        want = n_sum_layers(cfg.d)
        if len(cfg.expansion_factors) != want:
            raise ConfigError(
                f"expansion_factors must have length ceil(log2 d) = {want}"
            )
        if any(int(k) < 1 for k in cfg.expansion_factors):
            raise ConfigError("expansion factors must be >= 1")
        if cfg.oracle not in ("mcmc", "random"):
            raise ConfigError("oracle must be 'mcmc' or 'random'")
        return cfg


def _weight_model(cfg: RunConfig, data: Dataset):
    if cfg.weight_model == "bge":
        return causal.bge_posterior_weight_model(data)
    try:
        return causal.fixed_weight_model(float(cfg.weight_model), cfg.d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(
            "weight_model must be 'bge' or a numeric fixed weight"
        ) from exc


def run_pipeline(cfg: RunConfig) -> dict:
    """Data -> scores -> circuit -> fit -> metrics; returns the report dict
    and writes artifacts when out_dir is set."""
    t0 = time.time()
    true_dag = sample_erdos_renyi_dag(cfg.d, cfg.expected_edges, cfg.seed)
    bn, train = sample_weights_and_data(
        true_dag, cfg.n_train, noise_var=cfg.noise_var, rng_seed=cfg.seed + 1
    )
    test = simulate_data(bn, true_dag, cfg.n_test, rng_seed=cfg.seed + 2)
    if cfg.candidate_k is None or cfg.candidate_k >= cfg.d - 1:
        cands = full_candidates(cfg.d)
    else:
        cands = select_candidates(train, cfg.candidate_k)
    scores = build_score_table(train, cands)
    table = build_leaf_table(scores)
    if cfg.oracle == "mcmc":
        part = builtin_order_mcmc_oracle(scores, cfg.oracle_budget, cfg.seed + 4)
    else:
        part = random_partition_oracle(cfg.seed + 4)
    spn = build_regular(
        scores, part, tuple(int(k) for k in cfg.expansion_factors),
        rng=np.random.default_rng(cfg.seed + 3),
    )
    rep = audit(spn)
    if not rep.ok:
        raise RuntimeError(f"structure audit failed: {rep.violations[:5]}")
    spn.set_uniform_weights()
    trace = infer.fit(spn, table, infer.FitConfig(lr=cfg.lr, iters=cfg.iters))
    model = _weight_model(cfg, train)
    rng = np.random.default_rng(cfg.seed + 5)
    eshd, eshd_se = metrics.metric_eshd(spn, table, true_dag, cfg.eshd_samples, rng)
    auroc = metrics.metric_auroc(spn, table, true_dag)
    mll, mll_se = metrics.metric_mll(spn, table, test, cfg.mll_samples, rng)
    mse_ce = metrics.metric_mse_ce(spn, table, model, bn)
    cov_ns = [n for n in cfg.coverage_edges if n <= true_dag.n_edges()]
    cov = metrics.coverage_experiment(
        spn, table, true_dag, cov_ns, cfg.coverage_trials, rng
    )
    size, support, log_support = size_and_support(spn)
    report = {
        "config": asdict(cfg),
        "true_edges": len(true_dag.edges()),
        "circuit": {"size": size, "log_support": log_support},
        "elbo": {"initial": float(trace[0]), "final": float(trace[-1])},
        "metrics": {
            "e_shd": eshd, "e_shd_se": eshd_se,
            "auroc": auroc,
            "mll": mll, "mll_se": mll_se,
            "mse_ce": mse_ce,
            "coverage": cov,
        },
        "runtime_s": round(time.time() - t0, 3),
    }
    if cfg.out_dir:
        os.makedirs(cfg.out_dir, exist_ok=True)
        bundle = {
            "scores": json.loads(scores.to_json()),
            "circuit": json.loads(spn.to_json()),
        }
        with open(os.path.join(cfg.out_dir, "circuit.json"), "w") as fh:
            json.dump(bundle, fh)
        with open(os.path.join(cfg.out_dir, "metrics.json"), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
        bce = causal.bce_matrix(spn, table, model)
        with open(os.path.join(cfg.out_dir, "bce.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            for row in bce:
                w.writerow([repr(float(x)) for x in row])
        with open(os.path.join(cfg.out_dir, "elbo_trace.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            for it, val in enumerate(trace):
                w.writerow([it, repr(float(val))])
    return report


def load_bundle(path: str):
    with open(path) as fh:
        obj = json.load(fh)
    if "scores" not in obj or "circuit" not in obj:
        raise ConfigError("circuit file must contain 'scores' and 'circuit'")
    scores = LocalScoreTable.from_json(json.dumps(obj["scores"]))
    spn = OrderSpn.from_json(json.dumps(obj["circuit"]))
    return scores, spn, build_leaf_table(scores)


def _parse_literals(obj, d: int) -> EdgeConjunction:
    if not isinstance(obj, list):
        raise ConfigError("literals must be a JSON list")
    lits = []
    for item in obj:
        try:
            lits.append((int(item["child"]), int(item["parent"]),
                         bool(item.get("present", True))))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad literal {item!r}") from exc
    return EdgeConjunction.from_literals(d, lits)


def _cmd_run(args) -> int:
    with open(args.config) as fh:
        cfg = RunConfig.from_dict(json.load(fh))
    report = run_pipeline(cfg)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_query(args) -> int:
    scores, spn, table = load_bundle(args.circuit)
    with open(args.literals) as fh:
        obj = json.load(fh)
    if isinstance(obj, dict):
        conj = _parse_literals(obj.get("query", []), spn.d)
        given = _parse_literals(obj.get("given", []), spn.d)
        lp = infer.conditional(spn, table, conj, given)
    else:
        conj = _parse_literals(obj, spn.d)
        lp = infer.marginal(spn, table, conj)
    print(json.dumps({"log_prob": lp, "prob": math.exp(lp)}))
    return EXIT_OK


def _cmd_bce(args) -> int:
    scores, spn, table = load_bundle(args.circuit)
    if args.data is not None:
        model = causal.bge_posterior_weight_model(Dataset.load_csv(args.data))
    elif args.weight == "bge":
        raise ConfigError("weight model 'bge' needs --data with the training CSV")
    else:
        try:
            model = causal.fixed_weight_model(float(args.weight), spn.d)
        except ValueError as exc:
            raise ConfigError(f"bad --weight {args.weight!r}") from exc
    mat = causal.bce_matrix(spn, table, model)
    w = csv.writer(sys.stdout)
    for row in mat:
        w.writerow([repr(float(x)) for x in row])
    return EXIT_OK


def _cmd_exact(args) -> int:
    if args.d > oracle.MAX_EXACT_D:
        raise ConfigError(f"exact mode supports d <= {oracle.MAX_EXACT_D}")
    data = Dataset.load_csv(args.data)
    if data.d != args.d:
        raise ConfigError(f"data has {data.d} columns, expected {args.d}")
    scores = build_score_table(data, full_candidates(args.d))
    post = oracle.enumerate_posterior(scores)
    out = {
        "log_z": post.log_z,
        "edge_marginals": oracle.exact_edge_marginals(post).tolist(),
    }
    if args.literals:
        with open(args.literals) as fh:
            conj = _parse_literals(json.load(fh), args.d)
        out["query_log_prob"] = oracle.exact_marginal(post, conj)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _run_one(obj: dict) -> dict:
    return run_pipeline(RunConfig.from_dict(obj))


def _cmd_bench(args) -> int:
    with open(args.sweep) as fh:
        sweep = json.load(fh)
    base = sweep.get("base", {})
    jobs = []
    for over in sweep.get("runs", [{}]):
        merged = dict(base)
        merged.update(over)
        RunConfig.from_dict(dict(merged))  # validate before spawning workers
        jobs.append(merged)
    workers = min(max_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_one, jobs))
    else:
        reports = [_run_one(j) for j in jobs]
    summary = {}
    for key in ("e_shd", "auroc", "mll", "mse_ce"):
        vals = [r["metrics"][key] for r in reports if r["metrics"][key] is not None]
        if vals:
            summary[key] = {
                "mean": float(np.mean(vals)),
                "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
            }
    out = {"runs": reports, "summary": summary}
    print(json.dumps(out, indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(out, fh, indent=2, sort_keys=True)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="orderspn",
        description="Sum-product circuits over graph posteriors: run, query, "
        "average causal effects, brute-force references, seed sweeps.",
    )
    sub = p.add_subparsers(dest="cmd", required=True)
    q = sub.add_parser("run", help="end-to-end pipeline from a config file")
    q.add_argument("--config", required=True)
    q.set_defaults(fn=_cmd_run)
    q = sub.add_parser("query", help="marginal/conditional of edge literals")
    q.add_argument("--circuit", required=True)
    q.add_argument("--literals", required=True)
    q.set_defaults(fn=_cmd_query)
    q = sub.add_parser("bce", help="posterior-averaged causal effect matrix")
    q.add_argument("--circuit", required=True)
    q.add_argument("--weight", default="1.0",
                   help="fixed edge weight, or 'bge' with --data")
    q.add_argument("--data", default=None, help="training CSV for the "
                   "data-driven weight model")
    q.set_defaults(fn=_cmd_bce)
    q = sub.add_parser("exact", help="brute-force posterior for small d")
    q.add_argument("--d", type=int, required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--literals", default=None)
    q.set_defaults(fn=_cmd_exact)
    q = sub.add_parser("bench", help="sweep of runs with summary statistics")
    q.add_argument("--sweep", required=True)
    q.add_argument("--out", default=None)
    q.set_defaults(fn=_cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScoreNumericalError, np.linalg.LinAlgError, FloatingPointError,
            RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

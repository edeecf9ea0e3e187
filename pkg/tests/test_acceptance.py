"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""
import time

import numpy as np
import pytest

from conftest import numeric_grad, one_query_dataset, rel_error
from urank import io
from urank.bounds import lemma_grid_check, random_monotone_snapshot, verify_bounds
from urank.clicks import LoggingPolicy, OracleClickModel, simulate_query
from urank.config import ExperimentConfig
from urank.ctr import CtrModel
from urank.data import generate_synthetic
from urank.matching import brute_force_match, km_match, utility_of_ranking
from urank.metrics import estimated_query_utility, query_click_probs
from urank.pipeline import run_pipeline
from urank.ranker import ScoringModel, urank_loss


def test_criterion_1_matching_exact(report_criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = 0
    for trial in range(200):
        n = 2 + trial % 6
        w = rng.random((n, n))
        if abs(km_match(w).total_weight - brute_force_match(w).total_weight) > 1e-12:
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 5
    report_criterion(1, ok, f"KM vs brute force, {mismatches}/200 mismatches, {elapsed:.2f} s (limit 5 s)")
    assert ok


def test_criterion_2_estimator_unbiased(report_criterion):
    t0 = time.perf_counter()
    ds = generate_synthetic(1, 10, 20, 4, seed=5, utility="bid")
    q = ds.queries[0]
    oracle = OracleClickModel.sample(20, eta=1.0, epsilon=0.1, k_max=10, seed=6)
    ctr = oracle.position_ctr(q)
    assert ctr.min() > 1e-6                    # no clamping, so the identity is exact
    target = np.argsort(-q.relevance, kind="stable")
    truth = float((query_click_probs(oracle, one_query_dataset(q.features, q.relevance).queries[0],
                                     target) * q.utility_values[target]).sum())
    policy = LoggingPolicy("random_shuffle")

    def estimates(n_sessions, reps, seed):
        rng = np.random.default_rng(seed)
        return np.array([estimated_query_utility(q, simulate_query(oracle, policy, q, n_sessions, rng),
                                                 ctr, target) for _ in range(reps)])

    big = estimates(100_000, 20, seed=1)
    small = estimates(1_000, 200, seed=2)
    rel_err = abs(big[0] - truth) / truth
    rmse_small = np.sqrt(np.mean((small - truth) ** 2))
    rmse_big = np.sqrt(np.mean((big - truth) ** 2))
    ratio = rmse_small / rmse_big
    elapsed = time.perf_counter() - t0
    ok = rel_err < 0.01 and 5 <= ratio <= 20 and elapsed < 60
    pooled = abs(big.mean() - truth) / truth
    report_criterion(2, ok, f"relative error {rel_err:.4%} at 1e5 sessions (limit 1%; "
                            f"{pooled:.4%} pooled over 20 replicates), "
                            f"RMSE ratio 1e3/1e5 = {ratio:.2f} (range [5, 20]), {elapsed:.1f} s (limit 60 s)")
    assert ok


def test_criterion_3_bound_chain(report_criterion):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    snaps = [random_monotone_snapshot(rng, int(rng.integers(2, 9)), int(rng.integers(2, 11)),
                                      sigma=float(rng.uniform(0.5, 2.0)), score_bound=float(rng.uniform(1, 6)))
             for _ in range(1000)]
    rep = verify_bounds(snaps, tol=1e-9)
    grid = lemma_grid_check(sigma=1.0, score_bound=5.0, n_points=10_000)
    elapsed = time.perf_counter() - t0
    grid_bad = grid["lemma1_violations"] + grid["lemma2_violations"] + grid["lemma3_violations"]
    ok = (rep.ok and rep.n_checked_regret == 1000 and rep.n_checked_loss == 1000
          and grid_bad == 0 and elapsed < 30)
    report_criterion(3, ok, f"{rep.n_checked_regret} tables, violations regret={rep.n_violations_regret} "
                            f"loss={rep.n_violations_loss}, min slacks {rep.min_slack_1:.3g}/"
                            f"{rep.min_slack_2:.3g}, lemma grid violations {grid_bad}, {elapsed:.2f} s (limit 30 s)")
    assert ok


def test_criterion_4_gradients(report_criterion):
    rng = np.random.default_rng(11)
    t0 = time.perf_counter()
    worst_ctr = worst_rank = 0.0
    for trial in range(20):
        arch = "A1" if trial % 2 == 0 else "A2"
        m = CtrModel.init(arch, 4, 5, (6,), seed=trial)
        X = rng.random((8, 4))
        pos = rng.integers(1, 6, size=8)
        y = (rng.random(8) < 0.4).astype(float)
        _, grads = m.loss_and_grad(X, pos, y)
        num = numeric_grad(lambda: m.loss_and_grad(X, pos, y)[0], m.net.params)
        worst_ctr = max(worst_ctr, rel_error(grads, num))
    for trial in range(20):
        n = int(rng.integers(2, 7))
        model = ScoringModel.init(4, (6,), seed=trial, score_bound=5.0)
        X = model.inputs(rng.random((n, 4)), rng.random(n) + 0.5)
        pos = rng.permutation(n) + 1
        table = np.sort(rng.random((n, n)), axis=1)[:, ::-1]
        sigma = float(rng.uniform(0.5, 2.0))

        def f():
            return urank_loss(model.forward(X)[0], pos, table, sigma)[0]

        s, cache = model.forward(X)
        _, ds = urank_loss(s, pos, table, sigma)
        grads = model.backward(cache, ds)
        worst_rank = max(worst_rank, rel_error(grads, numeric_grad(f, model.net.params)))
    elapsed = time.perf_counter() - t0
    ok = worst_ctr < 1e-4 and worst_rank < 1e-4 and elapsed < 30
    report_criterion(4, ok, f"worst relative error CTR loss {worst_ctr:.2e}, ranking loss {worst_rank:.2e} "
                            f"(limit 1e-4), {elapsed:.2f} s (limit 30 s)")
    assert ok


def test_criterion_5_intro_example(report_criterion):
    w = np.array([[0.200, 0.150, 0.120],
                  [0.100, 0.070, 0.060],
                  [0.090, 0.064, 0.045]])
    prp = np.argsort(-w[:, 0], kind="stable")
    km = km_match(w).to_permutation()
    diff = utility_of_ranking(w, km) - utility_of_ranking(w, prp)
    swapped = list(prp) == [0, 1, 2] and list(km) == [0, 2, 1]
    ok = swapped and abs(diff - 0.009) <= 1e-9
    report_criterion(5, ok, f"PRP order {prp.tolist()}, KM order {km.tolist()}, utility gain {diff:.12f} "
                            f"(target 0.009 +/- 1e-9)")
    assert ok


@pytest.fixture(scope="module")
def default_runs(tmp_path_factory):
    """The default experiment, run twice from scratch into separate directories."""
    outs, times = [], []
    for name in ("first", "second"):
        out = tmp_path_factory.mktemp(name)
        t0 = time.perf_counter()
        run_pipeline(ExperimentConfig(output_dir=str(out)))
        times.append(time.perf_counter() - t0)
        outs.append(out)
    return outs, times


@pytest.mark.slow
def test_criterion_6_directional_ordering(default_runs, report_criterion):
    (out, _), (elapsed, _) = default_runs
    cfg = ExperimentConfig()
    n = {m: r["n_click"] for m, r in io.read_json(out / "report.json", "eval_report")["methods"].items()}
    margin = n["u_rank"] / n["ctr_at_1"] - 1
    ok = (cfg.dataset.n_train_queries >= 500 and cfg.dataset.n_test_queries >= 100
          and cfg.dataset.n_docs == 10 and cfg.dataset.feature_dim == 20 and cfg.oracle.eta == 1.0
          and n["km_oracle"] >= n["u_rank"] and margin >= 0.02
          and n["u_rank"] >= n["naive_lambdarank"] and elapsed < 900)
    report_criterion(6, ok, f"#Click km_oracle {n['km_oracle']:.4f} >= u_rank {n['u_rank']:.4f}; "
                            f"u_rank vs ctr_at_1 {n['ctr_at_1']:.4f} margin {margin:+.2%} (need >= 2%); "
                            f"naive {n['naive_lambdarank']:.4f}; pipeline {elapsed:.0f} s (limit 900 s)")
    assert ok


@pytest.mark.slow
def test_criterion_7_architecture_table(default_runs, report_criterion):
    out = default_runs[0][0]
    rows = io.read_csv(out / "arch_compare.csv")

    def complete(r):
        vals = [float(r[k]) for k in ("train_auc", "test_auc", "n_click")]
        return all(np.isfinite(vals)) and 0 <= vals[0] <= 1 and 0 <= vals[1] <= 1 and vals[2] > 0

    ok = [r["architecture"] for r in rows] == ["A1", "A2"] and all(complete(r) for r in rows)
    table = "; ".join(f"{r['architecture']} train AUC {float(r['train_auc']):.4f} test AUC "
                      f"{float(r['test_auc']):.4f} #Click {float(r['n_click']):.4f}" for r in rows)
    report_criterion(7, ok, table)
    assert ok


@pytest.mark.slow
def test_criterion_8_deterministic_rerun(default_runs, report_criterion):
    (a, b), _ = default_runs
    names = sorted(p.name for p in a.iterdir() if p.is_file())
    differing = [n for n in names if not (b / n).exists() or (a / n).read_bytes() != (b / n).read_bytes()]
    ok = not differing and len(names) > 0
    report_criterion(8, ok, f"{len(names) - len(differing)}/{len(names)} artifacts byte-identical across "
                            f"two full runs" + (f"; differing: {differing}" if differing else ""))
    assert ok

"""Numerical check of the regret bound chain for the ΔUtil-weighted pairwise loss.

For a query state (scores s, frozen positions k, utility table u):

    regret   L_r  = sum_i u(i, k*_i) - sum_i u(i, k_i)          (k* from exact matching)
    L''           = sum_i sum_{j: s_i < s_j} |u(i, k_j) - u(i, k_i)|
    L'            = the training loss at (s, k)
    C1            = max(log2(1 + exp(2 sigma C)), 2)
    C2            = C1 * sum_j sum_{i: k_i > k_j} (u(j, k_j) - u(j, k_i))

and, for rows nonincreasing in k with |s| <= C, L'' <= L' + C2. When k is
also the strict order of s, L_r <= L''. Logs are base 2 throughout; with the
natural log the indicator bound log(1 + e^{-sigma x}) >= 1[x <= 0] fails near x = 0.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .matching import km_match
from .ranker import pair_logistic, padded_table, positions_from_order, rank_by_scores, urank_loss

TOL = 1e-9


@dataclass
class BoundRecord:
    query_id: str
    epoch: int
    regret: float
    l_double_prime: float
    l_prime: float
    c1: float
    c2: float
    monotone: bool
    order_consistent: bool
    slack_1: float
    slack_2: float


@dataclass
class BoundReport:
    records: list[BoundRecord] = field(default_factory=list)
    n_checked_regret: int = 0
    n_checked_loss: int = 0
    n_skipped_nonmonotone: int = 0
    n_skipped_order: int = 0
    n_violations_regret: int = 0
    n_violations_loss: int = 0
    min_slack_1: float = float("inf")
    min_slack_2: float = float("inf")
    tolerance: float = TOL

    @property
    def ok(self) -> bool:
        return self.n_violations_regret == 0 and self.n_violations_loss == 0

    def to_dict(self, with_records: bool = True) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "records"}
        d["ok"] = self.ok
        if with_records:
            d["records"] = [asdict(r) for r in self.records]
        return d


def is_monotone(table, tol: float = 0.0) -> bool:
    table = np.asarray(table, dtype=float)
    return bool(np.all(np.diff(table, axis=1) <= tol))


def order_consistent(scores, positions) -> bool:
    """True when positions are exactly the descending order of strictly distinct scores."""
    s = np.asarray(scores, dtype=float)
    if len(np.unique(s)) != len(s):
        return False
    return bool(np.array_equal(positions_from_order(rank_by_scores(s)), np.asarray(positions)))


def bound_terms(scores, positions, table, sigma: float, score_bound: float) -> dict:
    s = np.asarray(scores, dtype=float)
    k = np.asarray(positions, dtype=int)
    n = len(s)
    u = padded_table(np.asarray(table, dtype=float), max(n, int(k.max())))
    idx = np.arange(n)
    at_own = u[idx, k - 1]
    A = u[:, k - 1]                     # A[i, j] = u(i, k_j)

    best = km_match(u[:, :max(n, 1)]).total_weight
    regret = best - at_own.sum()
    above = s[:, None] < s[None, :]     # [i, j]: s_i < s_j
    l_pp = float((np.abs(A - at_own[:, None]) * above).sum())
    l_p, _ = urank_loss(s, k, u, sigma)
    c1 = max(float(pair_logistic(-2 * score_bound, sigma)), 2.0)
    # pairs (j above i): u(j, k_j) - u(j, k_i) summed over j and i with k_i > k_j
    lower = k[None, :] > k[:, None]     # [j, i]: k_i > k_j
    c2 = c1 * float(((at_own[:, None] - A) * lower).sum())
    return {"regret": float(regret), "l_double_prime": l_pp, "l_prime": float(l_p),
            "c1": c1, "c2": c2}


def verify_bounds(snapshots: Iterable[dict], tol: float = TOL) -> BoundReport:
    """Check both inequalities on each snapshot; non-monotone tables are skipped and counted.

    A snapshot holds ``scores``, ``positions`` (1-based), ``table`` and
    ``sigma``/``score_bound``; ``query_id`` and ``epoch`` are optional labels.
    """
    report = BoundReport(tolerance=tol)
    for snap in snapshots:
        s = np.asarray(snap["scores"], dtype=float)
        C = float(snap["score_bound"])
        if np.any(np.abs(s) > C + 1e-12):
            raise ValueError(f"snapshot scores exceed the bound {C}")
        terms = bound_terms(s, snap["positions"], snap["table"], float(snap["sigma"]), C)
        mono = is_monotone(snap["table"])
        consistent = order_consistent(s, snap["positions"])
        slack_1 = terms["l_double_prime"] - terms["regret"]
        slack_2 = terms["l_prime"] + terms["c2"] - terms["l_double_prime"]
        report.records.append(BoundRecord(str(snap.get("query_id", "")), int(snap.get("epoch", 0)),
                                          **terms, monotone=mono, order_consistent=consistent,
                                          slack_1=slack_1, slack_2=slack_2))
        if not mono:
            report.n_skipped_nonmonotone += 1
            continue
        report.n_checked_loss += 1
        report.min_slack_2 = min(report.min_slack_2, slack_2)
        if slack_2 < -tol:
            report.n_violations_loss += 1
        if not consistent:
            report.n_skipped_order += 1
            continue
        report.n_checked_regret += 1
        report.min_slack_1 = min(report.min_slack_1, slack_1)
        if slack_1 < -tol:
            report.n_violations_regret += 1
    return report


def lemma_grid_check(sigma: float = 1.0, score_bound: float = 5.0, n_points: int = 10_000,
                     seed: int = 0) -> dict:
    """Violation counts of the three elementary inequalities behind the bound chain."""
    x = np.linspace(-score_bound, score_bound, n_points)
    g = pair_logistic(x, sigma)
    lemma1 = int(np.sum(g < (x <= 0)))
    cap = max(float(pair_logistic(-score_bound, sigma)), 2.0)
    lemma2 = int(np.sum(cap - g < (x >= 0)))
    rng = np.random.default_rng(seed)
    v = rng.exponential(size=(n_points, 5))
    lemma3 = int(np.sum(v.sum(axis=1) < v.max(axis=1)))
    return {"lemma1_violations": lemma1, "lemma2_violations": lemma2,
            "lemma3_violations": lemma3, "n_points": n_points}


def random_monotone_snapshot(rng: np.random.Generator, n_items: int, k_max: int,
                             sigma: float = 1.0, score_bound: float = 5.0,
                             consistent: bool = True) -> dict:
    """Random nonincreasing utility rows (some all-zero) and scores in [-C, C].

    With ``consistent`` the positions are the score order; otherwise they are
    an independent random permutation.
    """
    steps = rng.exponential(size=(n_items, k_max)) * (rng.random((n_items, 1)) < 0.8)
    table = np.cumsum(steps[:, ::-1], axis=1)[:, ::-1]
    table *= rng.uniform(0.05, 2.0, size=(n_items, 1)) / np.maximum(table[:, :1], 1e-12)
    scores = rng.uniform(-score_bound, score_bound, size=n_items)
    if consistent:
        positions = positions_from_order(rank_by_scores(scores))
    else:
        positions = rng.permutation(n_items) + 1
    return {"scores": scores.tolist(), "positions": positions.tolist(), "table": table.tolist(),
            "sigma": sigma, "score_bound": score_bound}

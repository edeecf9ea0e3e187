"""Offline evaluation: oracle utility, click-log utility estimates, relevance metrics, debiased @K metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import stats

from .clicks import OracleClickModel, QueryLog
from .data import Dataset, QueryGroup, check_permutation
from .ranker import build_query_table, positions_from_order

CTR_DENOMINATOR = "placed documents (top min(n_q, k_max) of each ranking)"


def _perm(permutations: Mapping[str, np.ndarray], q: QueryGroup) -> np.ndarray:
    return check_permutation(permutations[q.query_id], len(q))


@dataclass
class UtilityMetrics:
    n_click: float
    ctr: float
    per_query: np.ndarray
    n_placed: int
    revenue: float = 0.0
    per_query_revenue: np.ndarray = None


def query_click_probs(oracle: OracleClickModel, query: QueryGroup, order) -> np.ndarray:
    """Oracle click probability of the item shown at each position 1..min(n, k_max)."""
    order = np.asarray(order)
    m = min(len(query), oracle.k_max)
    return oracle.position_ctr(query)[order[:m], np.arange(m)]


def oracle_utility(oracle: OracleClickModel, dataset: Dataset,
                   permutations: Mapping[str, np.ndarray]) -> UtilityMetrics:
    """#Click = mean over queries of expected clicks; CTR = expected clicks per placed document.

    ``revenue`` weights each expected click by the item's utility value.
    """
    clicks, revenue, placed = [], [], 0
    for q in dataset:
        order = _perm(permutations, q)
        p = query_click_probs(oracle, q, order)
        clicks.append(p.sum())
        revenue.append((p * q.utility_values[order[:len(p)]]).sum())
        placed += len(p)
    clicks, revenue = np.array(clicks), np.array(revenue)
    n = max(len(clicks), 1)
    return UtilityMetrics(float(clicks.sum()) / n, float(clicks.sum()) / placed if placed else 0.0,
                          clicks, placed, float(revenue.sum()) / n, revenue)


def estimated_query_utility(query: QueryGroup, qlog: QueryLog | None, ctr: np.ndarray, order) -> float:
    """Click-log estimate of the utility of showing ``query`` in ``order``, averaged over sessions."""
    table = build_query_table(query, qlog, ctr)
    pos = positions_from_order(order)
    shown = pos <= table.shape[1]
    return float(table[np.nonzero(shown)[0], pos[shown] - 1].sum())


@dataclass
class EstimatedUtility:
    mean: float
    per_query: np.ndarray


def estimated_utility(logs: Mapping[str, QueryLog], ctr_model, dataset: Dataset,
                      permutations: Mapping[str, np.ndarray]) -> EstimatedUtility:
    per_query = np.array([
        estimated_query_utility(q, logs.get(q.query_id), ctr_model.position_ctr(q),
                                _perm(permutations, q))
        for q in dataset])
    return EstimatedUtility(float(per_query.mean()) if len(per_query) else 0.0, per_query)


def average_precision(order, relevance) -> float | None:
    rel = (np.asarray(relevance)[np.asarray(order)] >= 1).astype(float)
    if rel.sum() == 0:
        return None
    hits = np.cumsum(rel)
    return float((hits / np.arange(1, len(rel) + 1) * rel).sum() / rel.sum())


def ndcg(order, relevance, k: int = 10) -> float | None:
    rel = np.asarray(relevance, dtype=float)
    gains = 2.0 ** rel[np.asarray(order)][:k] - 1
    ideal = 2.0 ** np.sort(rel)[::-1][:k] - 1
    disc = 1.0 / np.log2(np.arange(2, len(gains) + 2))
    idcg = float((ideal * disc[:len(ideal)]).sum())
    if idcg <= 0:
        return None
    return float((gains * disc).sum() / idcg)


def _average_skipping(values) -> tuple[float, int]:
    kept = [v for v in values if v is not None]
    skipped = len(values) - len(kept)
    return (float(np.mean(kept)) if kept else float("nan")), skipped


def map_metric(permutations: Mapping[str, np.ndarray], dataset: Dataset) -> tuple[float, int]:
    """Mean average precision with grades >= 1 counted relevant; returns (MAP, skipped queries)."""
    return _average_skipping([average_precision(_perm(permutations, q), q.relevance) for q in dataset])


def ndcg_at_k(permutations: Mapping[str, np.ndarray], dataset: Dataset, k: int = 10) -> tuple[float, int]:
    """Mean nDCG@k with gain 2^y - 1; returns (nDCG, skipped queries without positive grades)."""
    return _average_skipping([ndcg(_perm(permutations, q), q.relevance, k) for q in dataset])


def debiased_click_at_k(logs: Mapping[str, QueryLog], propensity: OracleClickModel, dataset: Dataset,
                        permutations: Mapping[str, np.ndarray], K: int) -> tuple[float, float]:
    """(#click@K, revenue@K): logged clicks moved to their new positions by examination ratios.

    Each click of item i logged at k^h counts Q(i, k_i) / Q(i, k^h) when the
    new position k_i is within the top K (and within k_max); revenue also
    multiplies by b_i. Averaged over sessions, then queries.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    clicks_q, revenue_q = [], []
    for q in dataset:
        n = len(q)
        qlog = logs.get(q.query_id)
        if qlog is None or len(qlog) == 0:
            clicks_q.append(0.0)
            revenue_q.append(0.0)
            continue
        exam = propensity.attention_matrix(q.features)
        pos = positions_from_order(_perm(permutations, q))
        top = pos <= min(K, propensity.k_max)
        logged = qlog.logged_positions(n)
        shown = logged > 0
        num = np.where(top, exam[np.arange(n), np.minimum(pos, propensity.k_max) - 1], 0.0)
        den = np.where(shown, exam[np.arange(n)[None, :], np.maximum(logged, 1) - 1], 1.0)
        per_item = (qlog.item_clicks(n) * num[None, :] / den).mean(axis=0)
        clicks_q.append(float(per_item.sum()))
        revenue_q.append(float((per_item * q.utility_values).sum()))
    return float(np.mean(clicks_q)), float(np.mean(revenue_q))


def position_click_distribution(oracle: OracleClickModel, dataset: Dataset,
                                permutations: Mapping[str, np.ndarray]) -> np.ndarray:
    """Average oracle click probability at each position 1..k_max over all queries.

    Queries shorter than a position contribute 0 there, so the curve times the
    number of queries sums to the total expected clicks.
    """
    curve = np.zeros(oracle.k_max)
    for q in dataset:
        p = query_click_probs(oracle, q, _perm(permutations, q))
        curve[:len(p)] += p
    return curve / max(len(dataset), 1)


def paired_ttest(a, b) -> tuple[float, float]:
    """Paired t statistic and two-sided p-value of per-query differences a - b."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if len(a) < 2 or np.allclose(a, b):
        return 0.0, 1.0
    res = stats.ttest_rel(a, b)
    return float(res.statistic), float(res.pvalue)


def query_dump(oracle: OracleClickModel, query: QueryGroup,
               orders: Mapping[str, np.ndarray]) -> list[dict]:
    """Per item: relevance, position under each method, oracle click probability at every position."""
    ctr = oracle.position_ctr(query)
    pos = {name: positions_from_order(o) for name, o in orders.items()}
    rows = []
    for i in range(len(query)):
        row = {"item": i, "relevance": int(query.relevance[i])}
        row.update({f"position_{name}": int(p[i]) for name, p in pos.items()})
        row.update({f"ctr_at_{k + 1}": float(ctr[i, k]) for k in range(ctr.shape[1])})
        rows.append(row)
    return rows


@dataclass
class EvalReport:
    methods: dict[str, dict] = field(default_factory=dict)
    position_curves: dict[str, list[float]] = field(default_factory=dict)
    per_query_clicks: dict[str, list[float]] = field(default_factory=dict)
    t_tests: dict[str, dict] = field(default_factory=dict)
    query_dump: list[dict] = field(default_factory=list)
    ctr_denominator: str = CTR_DENOMINATOR

    def to_dict(self) -> dict:
        return {"ctr_denominator": self.ctr_denominator, "methods": self.methods,
                "t_tests": self.t_tests, "position_curves": self.position_curves,
                "per_query_clicks": self.per_query_clicks, "query_dump": self.query_dump}

    def metric_rows(self) -> list[dict]:
        return [{"method": name, **vals} for name, vals in self.methods.items()]

    def curve_rows(self) -> list[dict]:
        return [{"position": k + 1, "avg_ctr": v, "method": name}
                for name, curve in self.position_curves.items() for k, v in enumerate(curve)]


def evaluate_methods(dataset: Dataset, oracle: OracleClickModel,
                     permutations: Mapping[str, Mapping[str, np.ndarray]],
                     logs: Mapping[str, QueryLog] | None = None, ctr_model=None,
                     reference: str | None = None, cutoffs=(1, 3, 5),
                     dump_query: int | None = 0) -> EvalReport:
    """Score every method's rankings; t-tests compare each method against ``reference``."""
    report = EvalReport()
    for name, perms in permutations.items():
        util = oracle_utility(oracle, dataset, perms)
        map_v, skipped = map_metric(perms, dataset)
        ndcg_v, _ = ndcg_at_k(perms, dataset, 10)
        row = {"n_click": util.n_click, "ctr": util.ctr, "revenue_expected": util.revenue,
               "map": map_v, "ndcg@10": ndcg_v,
               "relevance_skipped_queries": skipped}
        if logs is not None:
            if ctr_model is not None:
                row["est_utility"] = estimated_utility(logs, ctr_model, dataset, perms).mean
            n_max = max(len(q) for q in dataset)
            for K in (*cutoffs, n_max):
                c, r = debiased_click_at_k(logs, oracle, dataset, perms, K)
                tag = "" if K == n_max else f"@{K}"
                row[f"click{tag}"] = c
                row[f"revenue{tag}"] = r
        report.methods[name] = row
        report.position_curves[name] = position_click_distribution(oracle, dataset, perms).tolist()
        report.per_query_clicks[name] = util.per_query.tolist()
    if reference in report.per_query_clicks:
        ref = report.per_query_clicks[reference]
        for name, clicks in report.per_query_clicks.items():
            if name != reference:
                t, p = paired_ttest(ref, clicks)
                report.t_tests[f"{reference} vs {name}"] = {"t": t, "p_value": p}
    if dump_query is not None and len(dataset):
        q = dataset.queries[dump_query]
        report.query_dump = query_dump(oracle, q, {n: p[q.query_id] for n, p in permutations.items()})
    return report

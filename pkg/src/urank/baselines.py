"""Reference rankers: click-trained pairwise (plain and IPS-weighted), CTR@1 and exact matching."""
from __future__ import annotations

from enum import Enum
from typing import Mapping

import numpy as np

from .clicks import OracleClickModel, QueryLog
from .data import Dataset, QueryGroup
from .matching import km_match
from .ranker import (ScoringModel, TrainingReport, UrankTrainConfig, fit_scorer,
                     pair_logistic, pair_logistic_grad, rank_by_scores)


class BaselineKind(str, Enum):
    naive_lambdarank = "naive_lambdarank"
    ips_lambdarank_groundtruth = "ips_lambdarank_groundtruth"
    ctr_at_1 = "ctr_at_1"
    km_oracle = "km_oracle"
    km_estimated = "km_estimated"


def click_gains(dataset: Dataset, logs: Mapping[str, QueryLog],
                propensity: OracleClickModel | None = None) -> dict[str, np.ndarray]:
    """Per-item click totals over a query's sessions, each click divided by its
    examination probability at the logged position when ``propensity`` is given."""
    gains = {}
    for q in dataset:
        n = len(q)
        qlog = logs.get(q.query_id)
        if qlog is None or len(qlog) == 0:
            gains[q.query_id] = np.zeros(n)
            continue
        clicks = qlog.item_clicks(n)
        if propensity is not None:
            logged = qlog.logged_positions(n)
            exam = propensity.attention_matrix(q.features)
            shown = logged > 0
            p = np.where(shown, exam[np.arange(n)[None, :], np.maximum(logged, 1) - 1], 1.0)
            clicks = clicks / p
        gains[q.query_id] = clicks.sum(axis=0)
    return gains


def lambda_pair_weights(gains) -> np.ndarray:
    """|ΔNDCG| of swapping i and j in the gain-sorted ideal order, kept where gain_i > gain_j.

    Gains are linear in clicks and discounts are log2; the ideal order breaks
    ties by item index. Returns zeros when the query has no gain.
    """
    g = np.asarray(gains, dtype=float)
    ideal = rank_by_scores(g)
    rank = np.empty(len(g), dtype=int)
    rank[ideal] = np.arange(1, len(g) + 1)
    disc = 1.0 / np.log2(1.0 + rank)
    idcg = float((g * disc).sum())
    if idcg <= 0:
        return np.zeros((len(g), len(g)))
    delta = np.abs((g[:, None] - g[None, :]) * (disc[:, None] - disc[None, :])) / idcg
    return delta * (g[:, None] > g[None, :])


def lambdarank_loss(scores, gains, sigma: float = 1.0):
    """sum_{i,j: y_i > y_j} |ΔNDCG(i,j)| log2(1 + exp(-sigma (s_i - s_j))) and its score gradient."""
    s = np.asarray(scores, dtype=float)
    W = lambda_pair_weights(gains)
    x = s[:, None] - s[None, :]
    loss = float((W * pair_logistic(x, sigma)).sum())
    G = W * pair_logistic_grad(x, sigma)
    return loss, G.sum(axis=1) - G.sum(axis=0)


def _train_pairwise(dataset: Dataset, gains: Mapping[str, np.ndarray], config: UrankTrainConfig,
                    method: str) -> tuple[ScoringModel, TrainingReport]:
    rng = np.random.default_rng(config.seed)
    model = ScoringModel.init(dataset.feature_dim, config.hidden_sizes,
                              seed=int(rng.integers(2**31)), score_bound=config.score_bound,
                              sigma=config.sigma, clip=config.clip,
                              utility_input=config.utility_input)
    report = TrainingReport(method)

    def query_grad(qid, s):
        return lambdarank_loss(s, gains[qid], model.sigma)

    fit_scorer(model, dataset, query_grad, config, rng, report)
    return model, report


def train_naive_lambdarank(logs: Mapping[str, QueryLog], dataset: Dataset,
                           config: UrankTrainConfig) -> tuple[ScoringModel, TrainingReport]:
    """Pairwise training on raw click counts, no position-bias correction."""
    return _train_pairwise(dataset, click_gains(dataset, logs), config,
                           BaselineKind.naive_lambdarank.value)


def train_ips_lambdarank(logs: Mapping[str, QueryLog], dataset: Dataset, oracle: OracleClickModel,
                         config: UrankTrainConfig) -> tuple[ScoringModel, TrainingReport]:
    """Pairwise training on clicks reweighted by 1 / true examination probability."""
    return _train_pairwise(dataset, click_gains(dataset, logs, oracle), config,
                           BaselineKind.ips_lambdarank_groundtruth.value)


def rank_ctr_at_1(ctr_model, query: QueryGroup) -> np.ndarray:
    """Sort by predicted CTR at the top position times utility value."""
    ctr = ctr_model.position_ctr(query)
    return rank_by_scores(ctr[:, 0] * query.utility_values)


def km_weights(ctr_source, query: QueryGroup) -> np.ndarray:
    ctr = ctr_source.position_ctr(query)
    m = min(len(query), ctr.shape[1])
    return ctr[:, :m] * query.utility_values[:, None]


def rank_km(ctr_source, query: QueryGroup) -> np.ndarray:
    """Exact utility-maximizing order under ``ctr_source`` (oracle or learned CTR model)."""
    return km_match(km_weights(ctr_source, query)).to_permutation()

"""Utility-oriented ranker: a bounded scoring network trained with ΔUtil-weighted pairwise loss.

Training alternates between ranking every query by the current scores (which
freezes positions k) and gradient steps on

    sum_i sum_{j: k_j < k_i} ΔUtil(i, j) * log2(1 + exp(-sigma (s_i - s_j)))

where ΔUtil(i, j) = u(i, k_j) + u(j, k_i) - u(i, k_i) - u(j, k_j) and u(i, k) is
the click-log estimate of item i's utility at position k.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from .clicks import QueryLog
from .ctr import clamp_prob
from .data import Dataset, QueryGroup
from .nn import MLP, TrainingDiverged, make_optimizer

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
CLIP_MODES = ("hard", "tanh")


def pair_logistic(x, sigma: float = 1.0):
    """log2(1 + exp(-sigma x)); equals 1 at x = 0."""
    return np.logaddexp(0.0, -sigma * np.asarray(x, dtype=float)) / LN2


def pair_logistic_grad(x, sigma: float = 1.0):
    return -sigma * expit(-sigma * np.asarray(x, dtype=float)) / LN2


class ScoringModel:
    """s_i = bound(net([f_i, b_i])) with |s_i| <= score_bound."""

    def __init__(self, net: MLP, feature_dim: int, score_bound: float = 5.0, sigma: float = 1.0,
                 clip: str = "hard", utility_input: bool = True):
        if score_bound <= 0 or sigma <= 0:
            raise ValueError("score_bound and sigma must be positive")
        if clip not in CLIP_MODES:
            raise ValueError(f"clip must be one of {CLIP_MODES}")
        if net.sizes[0] != feature_dim + int(utility_input) or net.sizes[-1] != 1:
            raise ValueError("scoring network has the wrong input/output width")
        self.net = net
        self.feature_dim = feature_dim
        self.score_bound = score_bound
        self.sigma = sigma
        self.clip = clip
        self.utility_input = utility_input

    @classmethod
    def init(cls, feature_dim: int, hidden_sizes=(32,), seed: int = 0, **kw) -> "ScoringModel":
        utility_input = kw.get("utility_input", True)
        net = MLP([feature_dim + int(utility_input), *hidden_sizes, 1], np.random.default_rng(seed))
        return cls(net, feature_dim, **kw)

    def inputs(self, features, utility_values=None) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=float))
        if not self.utility_input:
            return features
        if utility_values is None:
            utility_values = np.ones(len(features))
        return np.hstack([features, np.asarray(utility_values, dtype=float)[:, None]])

    def _bound(self, raw):
        C = self.score_bound
        if self.clip == "hard":
            return np.clip(raw, -C, C), (np.abs(raw) < C).astype(float)
        t = np.tanh(raw / C)
        return C * t, 1.0 - t * t

    def scores(self, features, utility_values=None) -> np.ndarray:
        raw = self.net(self.inputs(features, utility_values))[:, 0]
        return self._bound(raw)[0]

    def query_scores(self, query: QueryGroup) -> np.ndarray:
        return self.scores(query.features, query.utility_values)

    def forward(self, X):
        raw, acts = self.net.forward(X)
        s, dsdraw = self._bound(raw[:, 0])
        return s, (acts, dsdraw)

    def backward(self, cache, ds) -> list[np.ndarray]:
        acts, dsdraw = cache
        return self.net.backward(acts, (ds * dsdraw)[:, None])

    def to_dict(self) -> dict:
        return {"feature_dim": self.feature_dim, "score_bound": self.score_bound,
                "sigma": self.sigma, "clip": self.clip, "utility_input": self.utility_input,
                **self.net.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScoringModel":
        return cls(MLP.from_dict(d), d["feature_dim"], d["score_bound"], d["sigma"],
                   d.get("clip", "hard"), d.get("utility_input", True))


def rank_by_scores(scores) -> np.ndarray:
    """Descending score order, ties by item index."""
    return np.argsort(-np.asarray(scores, dtype=float), kind="stable")


def rank(model: ScoringModel, query: QueryGroup) -> np.ndarray:
    return rank_by_scores(model.query_scores(query))


def positions_from_order(order) -> np.ndarray:
    """1-based position of each item under a display order."""
    order = np.asarray(order, dtype=int)
    pos = np.empty(len(order), dtype=int)
    pos[order] = np.arange(1, len(order) + 1)
    return pos


def build_query_table(query: QueryGroup, qlog: QueryLog | None, ctr: np.ndarray) -> np.ndarray:
    """u[i, k-1] = mean over sessions of c_i * g(i, k) / g(i, k_i^h) * b_i."""
    n, k_max = ctr.shape
    if qlog is None or len(qlog) == 0:
        return np.zeros((n, k_max))
    if qlog.placements.shape[1] > k_max:
        raise ValueError(f"query {query.query_id!r}: logged position beyond k_max={k_max}")
    g = clamp_prob(ctr)
    logged = qlog.logged_positions(n)
    clicks = qlog.item_clicks(n)
    shown = logged > 0
    denom = np.where(shown, g[np.arange(n)[None, :], np.maximum(logged, 1) - 1], 1.0)
    weight = np.where(shown, clicks / denom, 0.0).mean(axis=0)
    return g * (weight * query.utility_values)[:, None]


def build_utility_table(logs: Mapping[str, QueryLog], ctr_model, dataset: Dataset,
                        ) -> dict[str, np.ndarray]:
    """Per-query (n_items, k_max) utility estimates; ``ctr_model`` needs ``position_ctr(query)``."""
    tables = {}
    clamped = 0
    for q in dataset:
        ctr = ctr_model.position_ctr(q)
        clamped += int(np.sum((ctr < 1e-6) | (ctr > 1 - 1e-6)))
        tables[q.query_id] = build_query_table(q, logs.get(q.query_id), ctr)
    if clamped:
        log.debug("utility table: %d CTR predictions clamped", clamped)
    return tables


def padded_table(table: np.ndarray, n_positions: int) -> np.ndarray:
    """Extend with zero columns so that every rank 1..n_positions has an entry."""
    n, k = table.shape
    if n_positions <= k:
        return table
    return np.hstack([table, np.zeros((n, n_positions - k))])


def delta_util(table, i: int, j: int, k_i: int, k_j: int) -> float:
    table = np.asarray(table, dtype=float)
    K = table.shape[1]
    if k_i == k_j:
        raise ValueError("items must occupy different positions")
    if not (1 <= k_i <= K and 1 <= k_j <= K):
        raise ValueError(f"positions must lie in 1..{K}")
    return float(table[i, k_j - 1] + table[j, k_i - 1] - table[i, k_i - 1] - table[j, k_j - 1])


def delta_util_matrix(table, positions) -> np.ndarray:
    """D[i, j] = ΔUtil(i, j) for the frozen positions."""
    positions = np.asarray(positions, dtype=int)
    u = padded_table(np.asarray(table, dtype=float), int(positions.max()))
    A = u[:, positions - 1]              # A[i, j] = u(i, k_j)
    d = np.diag(A)
    return A + A.T - d[:, None] - d[None, :]


def urank_loss(scores, positions, table, sigma: float = 1.0):
    """Loss over pairs with j shown above i, weighted by signed ΔUtil, and d loss / d scores."""
    s = np.asarray(scores, dtype=float)
    positions = np.asarray(positions, dtype=int)
    if s.shape != positions.shape or len(s) != np.asarray(table).shape[0]:
        raise ValueError("scores, positions and table rows must have equal length")
    if len(s) < 2:
        return 0.0, np.zeros_like(s)
    D = delta_util_matrix(table, positions)
    W = D * (positions[None, :] < positions[:, None])
    x = s[:, None] - s[None, :]
    loss = float((W * pair_logistic(x, sigma)).sum())
    G = W * pair_logistic_grad(x, sigma)
    return loss, G.sum(axis=1) - G.sum(axis=0)


@dataclass
class UrankTrainConfig:
    epochs: int = 30
    learning_rate: float = 0.01
    seed: int = 0
    sigma: float = 1.0
    score_bound: float = 5.0
    rerank_every: int = 1
    hidden_sizes: tuple[int, ...] = (32,)
    batch_size: int = 32
    optimizer: str = "sgd"
    clip: str = "hard"
    utility_input: bool = True
    snapshot_queries: int = 5

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate <= 0 or self.sigma <= 0 or self.score_bound <= 0:
            raise ValueError("epochs, learning_rate, sigma and score_bound must be positive")
        if self.rerank_every < 1 or self.batch_size < 1:
            raise ValueError("rerank_every and batch_size must be >= 1")


@dataclass
class TrainingReport:
    method: str
    epochs: list[dict] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)


def fit_scorer(model: ScoringModel, dataset: Dataset,
               query_grad: Callable[[str, np.ndarray], tuple[float, np.ndarray]],
               config, rng: np.random.Generator, report: TrainingReport,
               on_epoch: Callable[[int], dict] | None = None) -> ScoringModel:
    """Mini-batch descent over queries given per-query loss/score-gradient callbacks.

    ``on_epoch(t)`` runs before epoch t+1 (and once after the last epoch) and
    returns extra report fields; it is where the ranker refreshes positions.
    """
    opt = make_optimizer(config.optimizer, config.learning_rate)
    qids = [q.query_id for q in dataset]
    inputs = {q.query_id: model.inputs(q.features, q.utility_values) for q in dataset}
    row = {"epoch": 0, "loss": float("nan")}
    if on_epoch:
        row.update(on_epoch(0))
    report.epochs.append(row)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(qids))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [qids[i] for i in order[start:start + config.batch_size]]
            X = np.vstack([inputs[q] for q in batch])
            s, cache = model.forward(X)
            ds = np.empty_like(s)
            offset = 0
            for q in batch:
                n = len(inputs[q])
                loss, g = query_grad(q, s[offset:offset + n])
                total += loss
                ds[offset:offset + n] = g
                offset += n
            if not np.isfinite(total):
                raise TrainingDiverged(f"{report.method}: non-finite loss in epoch {epoch}")
            grads = model.backward(cache, ds / len(batch))
            opt.step(model.net.params, grads)
        model.net.check_finite(report.method)
        row = {"epoch": epoch, "loss": total / max(len(qids), 1)}
        if on_epoch:
            row.update(on_epoch(epoch))
        report.epochs.append(row)
        log.debug("%s epoch %d: %s", report.method, epoch, row)
    return model


def train_urank(dataset: Dataset, logs: Mapping[str, QueryLog], ctr_model,
                config: UrankTrainConfig, tables: Mapping[str, np.ndarray] | None = None,
                ) -> tuple[ScoringModel, TrainingReport]:
    """EM-style training: rank by current scores, then descend the loss with positions frozen.

    Positions are refreshed every ``rerank_every`` epochs. The report logs the
    mean loss and the training-set estimated utility sum_q sum_i u(i, k_i) at
    every refresh point, starting from the initial model.
    """
    if tables is None:
        tables = build_utility_table(logs, ctr_model, dataset)
    rng = np.random.default_rng(config.seed)
    model = ScoringModel.init(dataset.feature_dim, config.hidden_sizes,
                              seed=int(rng.integers(2**31)), score_bound=config.score_bound,
                              sigma=config.sigma, clip=config.clip,
                              utility_input=config.utility_input)
    report = TrainingReport("u_rank")
    positions: dict[str, np.ndarray] = {}
    padded = {q.query_id: padded_table(tables[q.query_id], len(q)) for q in dataset}
    snap_ids = [q.query_id for q in dataset][:config.snapshot_queries]

    def e_step(epoch: int) -> dict:
        fields = {}
        if epoch % config.rerank_every == 0 or epoch == config.epochs:
            utility = 0.0
            for q in dataset:
                s = model.query_scores(q)
                positions[q.query_id] = positions_from_order(rank_by_scores(s))
                u = padded[q.query_id]
                utility += float(u[np.arange(len(q)), positions[q.query_id] - 1].sum())
                if q.query_id in snap_ids:
                    report.snapshots.append({
                        "epoch": epoch, "query_id": q.query_id, "scores": s.tolist(),
                        "positions": positions[q.query_id].tolist(),
                        "table": tables[q.query_id].tolist(),
                        "sigma": model.sigma, "score_bound": model.score_bound})
            fields["est_utility"] = utility
        return fields

    def query_grad(qid, s):
        return urank_loss(s, positions[qid], padded[qid], model.sigma)

    fit_scorer(model, dataset, query_grad, config, rng, report, on_epoch=e_step)
    return model, report

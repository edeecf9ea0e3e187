"""Position-aware click-probability model g(f, k) trained by cross-entropy on logged clicks.

Architecture A1 maps features to ``k_max`` logits (one per position); A2 takes
features concatenated with a one-hot position and emits a single logit.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.special import expit

from .clicks import ClickSession, QueryLog, group_sessions
from .data import Dataset, QueryGroup
from .nn import MLP, TrainingDiverged, bce_with_logits, make_optimizer

log = logging.getLogger(__name__)

ARCHITECTURES = ("A1", "A2")
# keeps IPS-style ratios finite
PROB_FLOOR = 1e-6


class CtrModel:
    def __init__(self, architecture: str, net: MLP, k_max: int, feature_dim: int):
        if architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {architecture!r}")
        expected_in = feature_dim if architecture == "A1" else feature_dim + k_max
        expected_out = k_max if architecture == "A1" else 1
        if net.sizes[0] != expected_in or net.sizes[-1] != expected_out:
            raise ValueError(f"{architecture} network must map {expected_in} -> {expected_out}, "
                             f"got {net.sizes[0]} -> {net.sizes[-1]}")
        self.architecture = architecture
        self.net = net
        self.k_max = k_max
        self.feature_dim = feature_dim

    @classmethod
    def init(cls, architecture: str, feature_dim: int, k_max: int,
             hidden_sizes=(64, 32), seed: int = 0, zero_output: bool = False) -> "CtrModel":
        if architecture == "A1":
            sizes = [feature_dim, *hidden_sizes, k_max]
        else:
            sizes = [feature_dim + k_max, *hidden_sizes, 1]
        net = MLP(sizes, np.random.default_rng(seed), zero_output=zero_output)
        return cls(architecture, net, k_max, feature_dim)

    def _a2_inputs(self, features, positions):
        onehot = np.zeros((len(positions), self.k_max))
        onehot[np.arange(len(positions)), positions - 1] = 1.0
        return np.hstack([features, onehot])

    def _check_positions(self, positions):
        positions = np.asarray(positions, dtype=int)
        if np.any(positions < 1) or np.any(positions > self.k_max):
            raise ValueError(f"position outside 1..{self.k_max}")
        return positions

    def logits_all(self, features) -> np.ndarray:
        """(n, k_max) logits for every position."""
        features = np.atleast_2d(features)
        if self.architecture == "A1":
            return self.net(features)
        n = features.shape[0]
        pos = np.tile(np.arange(1, self.k_max + 1), n)
        rep = np.repeat(features, self.k_max, axis=0)
        return self.net(self._a2_inputs(rep, pos)).reshape(n, self.k_max)

    def predict_all_positions(self, features) -> np.ndarray:
        features = np.asarray(features, dtype=float)
        probs = expit(self.logits_all(features))
        return probs[0] if features.ndim == 1 else probs

    def predict_ctr(self, features, position):
        position = self._check_positions(position)
        features = np.asarray(features, dtype=float)
        if features.ndim == 1:
            return float(self.predict_all_positions(features)[position - 1])
        return self.predict_all_positions(features)[np.arange(len(features)), position - 1]

    def position_ctr(self, query: QueryGroup) -> np.ndarray:
        return self.predict_all_positions(query.features)

    def loss_and_grad(self, features, positions, clicks, counts=None):
        """Summed cross-entropy over (item, shown position, click) triples and its gradient.

        ``clicks`` may be click fractions when ``counts`` gives the number of
        impressions aggregated into each triple.
        """
        features = np.atleast_2d(np.asarray(features, dtype=float))
        positions = self._check_positions(positions)
        clicks = np.asarray(clicks, dtype=float)
        if self.architecture == "A1":
            out, acts = self.net.forward(features)
            z = out[np.arange(len(positions)), positions - 1]
        else:
            out, acts = self.net.forward(self._a2_inputs(features, positions))
            z = out[:, 0]
        loss, dz = bce_with_logits(z, clicks, counts)
        dout = np.zeros_like(out)
        if self.architecture == "A1":
            dout[np.arange(len(positions)), positions - 1] = dz
        else:
            dout[:, 0] = dz
        return float(loss.sum()), self.net.backward(acts, dout)

    def to_dict(self) -> dict:
        return {"architecture": self.architecture, "k_max": self.k_max,
                "feature_dim": self.feature_dim, **self.net.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CtrModel":
        return cls(d["architecture"], MLP.from_dict(d), d["k_max"], d["feature_dim"])


@dataclass
class CtrTrainConfig:
    hidden_sizes: tuple[int, ...] = (64, 32)
    learning_rate: float = 0.05
    epochs: int = 20
    batch_size: int = 256
    seed: int = 0
    validation_fraction: float = 0.1
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("learning_rate, epochs and batch_size must be positive")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")


@dataclass
class Triples:
    """Impressions aggregated per (query, item, shown position)."""

    features: np.ndarray
    positions: np.ndarray
    click_rate: np.ndarray
    counts: np.ndarray

    def __len__(self):
        return len(self.positions)

    def take(self, idx) -> "Triples":
        return Triples(self.features[idx], self.positions[idx], self.click_rate[idx], self.counts[idx])

    def click_count(self) -> np.ndarray:
        return self.click_rate * self.counts


def build_triples(logs: Mapping[str, QueryLog], dataset: Dataset, k_max: int) -> Triples:
    feats, poss, rates, counts = [], [], [], []
    for qid, qlog in logs.items():
        try:
            query = dataset.query(qid)
        except KeyError:
            raise KeyError(f"session references unknown query {qid!r}") from None
        n = len(query)
        if qlog.placements.size and qlog.placements.max() >= n:
            raise ValueError(f"query {qid!r}: session references an item outside 0..{n - 1}")
        m = qlog.placements.shape[1]
        if m > k_max:
            raise ValueError(f"query {qid!r}: sessions show {m} items, more than k_max={k_max}")
        shown = np.zeros((n, k_max))
        clicked = np.zeros((n, k_max))
        cols = np.broadcast_to(np.arange(m), qlog.placements.shape)
        np.add.at(shown, (qlog.placements, cols), 1.0)
        np.add.at(clicked, (qlog.placements, cols), qlog.clicks)
        items, pcols = np.nonzero(shown)
        feats.append(query.features[items])
        poss.append(pcols + 1)
        rates.append(clicked[items, pcols] / shown[items, pcols])
        counts.append(shown[items, pcols])
    if not feats:
        return Triples(np.zeros((0, dataset.feature_dim)), np.zeros(0, int), np.zeros(0), np.zeros(0))
    return Triples(np.concatenate(feats), np.concatenate(poss), np.concatenate(rates),
                   np.concatenate(counts))


def auc_score(scores, labels, weights=None) -> float:
    """Rank-based AUC with tied scores counted as half; optional per-example weights."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    weights = np.ones_like(scores) if weights is None else np.asarray(weights, dtype=float)
    pos_w = weights * labels
    neg_w = weights * (1 - labels)
    P, N = pos_w.sum(), neg_w.sum()
    if P <= 0 or N <= 0:
        raise ValueError("AUC undefined: labels are all positive or all negative")
    uniq, inv = np.unique(scores, return_inverse=True)
    pos_g = np.bincount(inv, pos_w, len(uniq))
    neg_g = np.bincount(inv, neg_w, len(uniq))
    neg_below = np.concatenate([[0.0], np.cumsum(neg_g)[:-1]])
    return float((pos_g * (neg_below + 0.5 * neg_g)).sum() / (P * N))


def triples_auc(model: CtrModel, triples: Triples) -> float:
    """AUC over individual impressions: each triple carries clicks and non-clicks."""
    pred = model.predict_ctr(triples.features, triples.positions)
    clicks = triples.click_count()
    scores = np.concatenate([pred, pred])
    labels = np.concatenate([np.ones_like(pred), np.zeros_like(pred)])
    weights = np.concatenate([clicks, triples.counts - clicks])
    return auc_score(scores, labels, weights)


def auc(model: CtrModel, sessions: Iterable[ClickSession] | Mapping[str, QueryLog],
        dataset: Dataset) -> float:
    logs = sessions if isinstance(sessions, Mapping) else group_sessions(sessions)
    return triples_auc(model, build_triples(logs, dataset, model.k_max))


@dataclass
class CtrTrainingReport:
    architecture: str
    epochs: list[dict] = field(default_factory=list)
    train_auc: float = float("nan")
    validation_auc: float = float("nan")

    def to_rows(self) -> list[dict]:
        return self.epochs


def _safe_auc(model, triples) -> float:
    try:
        return triples_auc(model, triples)
    except ValueError:
        return float("nan")


def train_ctr(sessions: Iterable[ClickSession] | Mapping[str, QueryLog], dataset: Dataset,
              config: CtrTrainConfig, architecture: str = "A1", k_max: int = 10,
              ) -> tuple[CtrModel, CtrTrainingReport]:
    """Fit g(f, k) by mini-batch descent on the summed cross-entropy of observed impressions.

    Only the position at which an item was actually shown contributes to its
    loss. Queries are split into train/validation by ``validation_fraction``.
    """
    logs = sessions if isinstance(sessions, Mapping) else group_sessions(sessions)
    if not logs or all(len(l) == 0 for l in logs.values()):
        raise ValueError("no click sessions to train on")
    rng = np.random.default_rng(config.seed)
    qids = sorted(logs)
    n_val = int(round(config.validation_fraction * len(qids)))
    val_ids = set(rng.choice(qids, size=n_val, replace=False).tolist()) if n_val else set()
    train = build_triples({q: logs[q] for q in qids if q not in val_ids}, dataset, k_max)
    val = build_triples({q: logs[q] for q in qids if q in val_ids}, dataset, k_max)
    if not len(train):
        raise ValueError("no training impressions after validation split")

    model = CtrModel.init(architecture, dataset.feature_dim, k_max, config.hidden_sizes,
                          seed=int(rng.integers(2**31)))
    opt = make_optimizer(config.optimizer, config.learning_rate)
    report = CtrTrainingReport(architecture)
    total = train.counts.sum()

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        for start in range(0, len(order), config.batch_size):
            batch = train.take(order[start:start + config.batch_size])
            loss, grads = model.loss_and_grad(batch.features, batch.positions,
                                              batch.click_rate, batch.counts)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"CTR training: non-finite loss in epoch {epoch}")
            norm = batch.counts.sum()
            opt.step(model.net.params, [g / norm for g in grads])
        model.net.check_finite("CTR model")
        epoch_loss = model.loss_and_grad(train.features, train.positions,
                                         train.click_rate, train.counts)[0] / total
        row = {"epoch": epoch, "loss": epoch_loss,
               "val_auc": _safe_auc(model, val) if len(val) else float("nan")}
        report.epochs.append(row)
        log.debug("ctr %s epoch %d loss %.5f val_auc %.4f", architecture, epoch,
                  row["loss"], row["val_auc"])

    report.train_auc = _safe_auc(model, train)
    report.validation_auc = _safe_auc(model, val) if len(val) else float("nan")
    return model, report


def clamp_prob(p):
    return np.clip(p, PROB_FLOOR, 1 - PROB_FLOOR)

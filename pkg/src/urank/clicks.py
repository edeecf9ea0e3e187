"""Oracle click model with item-specific attention bias, logging policies, session simulation.

Seeding: ``simulate_sessions`` gives the query at index ``q`` of the dataset its
own generator ``default_rng(SeedSequence([seed, q]))``, so each query's sessions
depend only on (seed, q) and can be produced in any order or in parallel.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .data import Dataset, QueryGroup

POLICY_KINDS = ("random_shuffle", "relevance_sorted", "pretrained_pointwise")


@dataclass(frozen=True, eq=False)
class OracleClickModel:
    """Ground-truth P(click | item, position) = examination x relevance."""

    w: np.ndarray
    eta: float = 1.0
    epsilon: float = 0.1
    y_max: int = 4
    k_max: int = 10

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        object.__setattr__(self, "w", w)
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if abs(w.sum()) > 1e-9:
            raise ValueError(f"attention weights must sum to 0, got {w.sum():.3g}")
        # mean-centering can move a component up to eta past the sampling range
        if np.any(np.abs(w) >= 2 * self.eta):
            raise ValueError("attention weight magnitude exceeds 2*eta")
        if self.y_max < 1 or self.k_max < 1:
            raise ValueError("y_max and k_max must be positive")

    @classmethod
    def sample(cls, feature_dim: int, *, eta: float = 1.0, epsilon: float = 0.1,
               y_max: int = 4, k_max: int = 10, seed: int = 0) -> "OracleClickModel":
        """Draw w uniformly from [-eta, eta) and subtract its mean."""
        rng = np.random.default_rng(seed)
        w = rng.uniform(-eta, eta, size=feature_dim)
        w = w - w.mean()
        return cls(w, eta, epsilon, y_max, k_max)

    @property
    def feature_dim(self) -> int:
        return self.w.shape[0]

    def _check_position(self, position):
        position = np.asarray(position)
        if np.any(position < 1) or np.any(position > self.k_max):
            raise ValueError(f"position outside 1..{self.k_max}: {position}")
        return position

    def exponent(self, features) -> np.ndarray:
        return np.maximum(np.asarray(features, dtype=float) @ self.w + 1.0, 0.0)

    def attention_prob(self, features, position):
        position = self._check_position(position)
        return 1.0 / np.power(position, self.exponent(features))

    def relevance_prob(self, relevance):
        relevance = np.asarray(relevance)
        if np.any(relevance < 0) or np.any(relevance > self.y_max):
            raise ValueError(f"relevance grade outside 0..{self.y_max}: {relevance}")
        eps = self.epsilon
        return eps + (1 - eps) * (2.0 ** relevance - 1) / (2.0 ** self.y_max - 1)

    def click_prob(self, features, relevance, position):
        return self.attention_prob(features, position) * self.relevance_prob(relevance)

    def attention_matrix(self, features) -> np.ndarray:
        """(n_items, k_max) examination probabilities for every position."""
        pos = np.arange(1, self.k_max + 1, dtype=float)
        return 1.0 / pos[None, :] ** self.exponent(features)[:, None]

    def position_ctr(self, query: QueryGroup) -> np.ndarray:
        """(n_items, k_max) click probabilities; same contract as ``CtrModel.position_ctr``."""
        return self.attention_matrix(query.features) * self.relevance_prob(query.relevance)[:, None]

    def to_dict(self) -> dict:
        return {"w": self.w.tolist(), "eta": self.eta, "epsilon": self.epsilon,
                "y_max": self.y_max, "k_max": self.k_max}

    @classmethod
    def from_dict(cls, d: dict) -> "OracleClickModel":
        return cls(np.array(d["w"]), d["eta"], d["epsilon"], d["y_max"], d["k_max"])


@dataclass(frozen=True, eq=False)
class LoggingPolicy:
    kind: str
    coef: Optional[np.ndarray] = None
    intercept: float = 0.0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown logging policy {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.kind == "pretrained_pointwise" and self.coef is None:
            raise ValueError("pretrained_pointwise policy needs a fitted scorer")

    def scores(self, features) -> np.ndarray:
        return np.asarray(features) @ self.coef + self.intercept

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.coef is not None:
            d.update(coef=self.coef.tolist(), intercept=self.intercept)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LoggingPolicy":
        coef = d.get("coef")
        return cls(d["kind"], None if coef is None else np.array(coef), d.get("intercept", 0.0))


def fit_pointwise_policy(dataset: Dataset, label_fraction: float = 0.01, seed: int = 0,
                         ridge: float = 1.0) -> LoggingPolicy:
    """Ridge-regress relevance on features using a random ``label_fraction`` of items."""
    X = np.concatenate([q.features for q in dataset])
    y = np.concatenate([q.relevance for q in dataset]).astype(float)
    rng = np.random.default_rng(seed)
    n_lab = max(2, int(round(label_fraction * len(y))))
    idx = rng.choice(len(y), size=min(n_lab, len(y)), replace=False)
    Xl, yl = X[idx], y[idx]
    mu_x, mu_y = Xl.mean(axis=0), yl.mean()
    Xc = Xl - mu_x
    coef = np.linalg.solve(Xc.T @ Xc + ridge * np.eye(X.shape[1]), Xc.T @ (yl - mu_y))
    return LoggingPolicy("pretrained_pointwise", coef, float(mu_y - mu_x @ coef))


def rank_by_policy(policy: LoggingPolicy, query: QueryGroup, seed: int = 0) -> np.ndarray:
    """Item indices in display order. Deterministic kinds break ties by item id."""
    n = len(query)
    if policy.kind == "random_shuffle":
        return np.random.default_rng(seed).permutation(n)
    if policy.kind == "relevance_sorted":
        key = query.relevance
    else:
        key = policy.scores(query.features)
    return np.argsort(-np.asarray(key, dtype=float), kind="stable")


@dataclass(frozen=True, eq=False)
class ClickSession:
    """One impression: ``placement[p]`` is the item shown at position p+1."""

    query_id: str
    placement: tuple[int, ...]
    clicks: tuple[int, ...]

    def __post_init__(self):
        if len(self.placement) != len(self.clicks):
            raise ValueError("placement and clicks differ in length")
        if len(set(self.placement)) != len(self.placement):
            raise ValueError("placement is not injective")
        if any(c not in (0, 1) for c in self.clicks):
            raise ValueError("clicks must be 0/1")

    def __eq__(self, other):
        if not isinstance(other, ClickSession):
            return NotImplemented
        return (self.query_id, self.placement, self.clicks) == \
            (other.query_id, other.placement, other.clicks)

    __hash__ = None

    def positions(self, n_items: int) -> np.ndarray:
        """1-based logged position of each item, 0 where the item was not shown."""
        pos = np.zeros(n_items, dtype=int)
        pos[list(self.placement)] = np.arange(1, len(self.placement) + 1)
        return pos

    def to_dict(self) -> dict:
        return {"query_id": self.query_id, "placement": list(self.placement),
                "clicks": list(self.clicks)}

    @classmethod
    def from_dict(cls, d: dict) -> "ClickSession":
        return cls(str(d["query_id"]), tuple(int(i) for i in d["placement"]),
                   tuple(int(c) for c in d["clicks"]))


@dataclass
class QueryLog:
    """All sessions of one query as arrays: (n_sessions, n_shown) item ids and clicks."""

    placements: np.ndarray
    clicks: np.ndarray

    def __len__(self) -> int:
        return self.placements.shape[0]

    def logged_positions(self, n_items: int) -> np.ndarray:
        """(n_sessions, n_items) 1-based positions, 0 for items not shown."""
        S, m = self.placements.shape
        pos = np.zeros((S, n_items), dtype=int)
        pos[np.arange(S)[:, None], self.placements] = np.arange(1, m + 1)[None, :]
        return pos

    def item_clicks(self, n_items: int) -> np.ndarray:
        """(n_sessions, n_items) clicks, 0 for items not shown."""
        S = self.placements.shape[0]
        out = np.zeros((S, n_items), dtype=float)
        out[np.arange(S)[:, None], self.placements] = self.clicks
        return out

    def sessions(self, query_id: str) -> list[ClickSession]:
        return [ClickSession(query_id, tuple(p.tolist()), tuple(c.tolist()))
                for p, c in zip(self.placements, self.clicks)]


def group_sessions(sessions: Iterable[ClickSession]) -> dict[str, QueryLog]:
    by_query: dict[str, list[ClickSession]] = defaultdict(list)
    for s in sessions:
        by_query[s.query_id].append(s)
    out = {}
    for qid, ss in by_query.items():
        widths = {len(s.placement) for s in ss}
        if len(widths) != 1:
            raise ValueError(f"query {qid!r}: sessions show different numbers of items")
        out[qid] = QueryLog(np.array([s.placement for s in ss], dtype=int),
                            np.array([s.clicks for s in ss], dtype=int))
    return out


def query_rng(seed: int, query_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, query_index]))


def simulate_query(model: OracleClickModel, policy: LoggingPolicy, query: QueryGroup,
                   n_sessions: int, rng: np.random.Generator) -> QueryLog:
    """Sessions for one query. ``random_shuffle`` draws a fresh order per session."""
    n = len(query)
    m = min(n, model.k_max)
    if policy.kind == "random_shuffle":
        placements = rng.permuted(np.tile(np.arange(n), (n_sessions, 1)), axis=1)[:, :m]
    else:
        order = rank_by_policy(policy, query)[:m]
        placements = np.tile(order, (n_sessions, 1))
    probs = model.position_ctr(query)[placements, np.arange(m)[None, :]]
    clicks = (rng.random((n_sessions, m)) < probs).astype(int)
    return QueryLog(placements, clicks)


def simulate_logs(model: OracleClickModel, policy: LoggingPolicy, dataset: Dataset,
                  sessions_per_query: int, seed: int) -> dict[str, QueryLog]:
    if sessions_per_query < 1:
        raise ValueError("sessions_per_query must be >= 1")
    return {q.query_id: simulate_query(model, policy, q, sessions_per_query, query_rng(seed, i))
            for i, q in enumerate(dataset)}


def simulate_sessions(model: OracleClickModel, policy: LoggingPolicy, dataset: Dataset,
                      sessions_per_query: int, seed: int) -> list[ClickSession]:
    logs = simulate_logs(model, policy, dataset, sessions_per_query, seed)
    return [s for qid, log in logs.items() for s in log.sessions(qid)]

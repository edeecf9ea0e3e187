"""In-memory ranking datasets, LETOR (SVMLight-with-qid) IO and synthetic generation."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm


class LetorParseError(ValueError):
    """Raised for a malformed LETOR line; carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class Item:
    item_id: int
    features: np.ndarray
    relevance: int
    utility_value: float = 1.0

    def __eq__(self, other):
        if not isinstance(other, Item):
            return NotImplemented
        return (self.item_id == other.item_id and self.relevance == other.relevance
                and self.utility_value == other.utility_value
                and np.array_equal(self.features, other.features))

    __hash__ = None


@dataclass(frozen=True)
class QueryGroup:
    query_id: str
    items: tuple[Item, ...]

    def __post_init__(self):
        if len(self.items) < 1:
            raise ValueError(f"query {self.query_id!r} has no items")
        ids = [it.item_id for it in self.items]
        if ids != list(range(len(ids))):
            raise ValueError(f"query {self.query_id!r}: item ids must be 0..n-1 in order, got {ids}")

    def __len__(self) -> int:
        return len(self.items)

    @cached_property
    def features(self) -> np.ndarray:
        return np.stack([it.features for it in self.items])

    @cached_property
    def relevance(self) -> np.ndarray:
        return np.array([it.relevance for it in self.items], dtype=int)

    @cached_property
    def utility_values(self) -> np.ndarray:
        return np.array([it.utility_value for it in self.items], dtype=float)


@dataclass(frozen=True)
class Dataset:
    queries: tuple[QueryGroup, ...]
    feature_dim: int
    y_max: int
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        for q in self.queries:
            for it in q.items:
                if it.features.shape != (self.feature_dim,):
                    raise ValueError(
                        f"query {q.query_id!r} item {it.item_id}: feature length "
                        f"{it.features.shape[0]} != feature_dim {self.feature_dim}")
                if not 0 <= it.relevance <= self.y_max:
                    raise ValueError(
                        f"query {q.query_id!r} item {it.item_id}: relevance {it.relevance} "
                        f"outside 0..{self.y_max}")
                if it.utility_value < 0:
                    raise ValueError(f"query {q.query_id!r} item {it.item_id}: negative utility value")
        object.__setattr__(self, "_index", {q.query_id: q for q in self.queries})

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    def query(self, query_id: str) -> QueryGroup:
        return self._index[query_id]

    def subset(self, query_ids: Iterable[str]) -> "Dataset":
        return Dataset(tuple(self._index[q] for q in query_ids), self.feature_dim, self.y_max)


def make_query(query_id: str, features, relevance, utility_values=None) -> QueryGroup:
    features = np.asarray(features, dtype=float)
    relevance = np.asarray(relevance, dtype=int)
    if utility_values is None:
        utility_values = np.ones(len(relevance))
    items = tuple(
        Item(i, features[i].copy(), int(relevance[i]), float(utility_values[i]))
        for i in range(len(relevance)))
    return QueryGroup(str(query_id), items)


_QID = re.compile(r"^qid:(\S+)$")


def parse_letor(path, feature_dim: int, y_max: int = 4) -> Dataset:
    """Read a LETOR/SVMLight-with-qid file.

    Lines with the same qid are merged into one query even when they are not
    contiguous; queries appear in order of first occurrence. Feature ids are
    1-based and absent ids are 0.0. Text after ``#`` is ignored. An optional
    ``b:<value>`` token sets the item's utility value.
    """
    groups: dict[str, list[tuple[int, np.ndarray, float]]] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) < 2:
                raise LetorParseError(lineno, "expected '<label> qid:<id> ...'")
            try:
                label = int(float(tokens[0]))
            except ValueError:
                raise LetorParseError(lineno, f"bad label {tokens[0]!r}") from None
            if float(tokens[0]) != label:
                raise LetorParseError(lineno, f"label {tokens[0]!r} is not an integer grade")
            m = _QID.match(tokens[1])
            if not m:
                raise LetorParseError(lineno, f"expected qid:<id>, got {tokens[1]!r}")
            if not 0 <= label <= y_max:
                raise ValueError(f"line {lineno}: label {label} outside 0..{y_max}")
            feats = np.zeros(feature_dim)
            b = 1.0
            for tok in tokens[2:]:
                key, sep, val = tok.partition(":")
                if not sep:
                    raise LetorParseError(lineno, f"bad feature token {tok!r}")
                try:
                    value = float(val)
                except ValueError:
                    raise LetorParseError(lineno, f"bad feature value in {tok!r}") from None
                if key == "b":
                    b = value
                    continue
                try:
                    fid = int(key)
                except ValueError:
                    raise LetorParseError(lineno, f"bad feature id in {tok!r}") from None
                if not 1 <= fid <= feature_dim:
                    raise LetorParseError(lineno, f"feature id {fid} outside 1..{feature_dim}")
                feats[fid - 1] = value
            groups.setdefault(m.group(1), []).append((label, feats, b))

    queries = []
    for qid, rows in groups.items():
        items = tuple(Item(i, f, lab, b) for i, (lab, f, b) in enumerate(rows))
        queries.append(QueryGroup(qid, items))
    return Dataset(tuple(queries), feature_dim, y_max)


def write_letor(dataset: Dataset, path) -> None:
    """Write ``dataset`` so that :func:`parse_letor` reproduces it exactly."""
    with open(path, "w") as fh:
        for q in dataset:
            for it in q.items:
                parts = [str(it.relevance), f"qid:{q.query_id}"]
                parts += [f"{j + 1}:{v!r}" for j, v in enumerate(it.features.tolist())]
                if it.utility_value != 1.0:
                    parts.append(f"b:{it.utility_value!r}")
                fh.write(" ".join(parts) + "\n")


def normalize_features(dataset: Dataset) -> Dataset:
    """Min-max scale every feature column to [0, 1] over the whole dataset."""
    if not len(dataset):
        return dataset
    allf = np.concatenate([q.features for q in dataset])
    lo, hi = allf.min(axis=0), allf.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    queries = tuple(
        QueryGroup(q.query_id, tuple(
            Item(it.item_id, (it.features - lo) / span, it.relevance, it.utility_value)
            for it in q.items))
        for q in dataset)
    return Dataset(queries, dataset.feature_dim, dataset.y_max)


# share of each grade 0..y_max for y_max=4; other y_max values use a geometric profile
_GRADE_SHARES = {4: (0.40, 0.28, 0.17, 0.10, 0.05)}


def _grade_shares(y_max: int) -> np.ndarray:
    if y_max in _GRADE_SHARES:
        return np.array(_GRADE_SHARES[y_max])
    shares = 0.6 ** np.arange(y_max + 1)
    return shares / shares.sum()


def generate_synthetic(n_queries: int, n_docs: int, feature_dim: int, y_max: int,
                       seed: int, *, noise: float = 0.5, utility: str = "unit") -> Dataset:
    """Draw a dataset whose grades are a noisy function of the features.

    Features are uniform in [0, 1]. A hidden linear direction plus Gaussian
    noise gives each item a latent score; grades come from cutting the latent
    scores at fixed quantiles of their distribution, so every grade 0..y_max
    has positive probability. ``utility="bid"`` samples log-normal bids as
    utility values instead of 1.0.
    """
    if min(n_queries, n_docs, feature_dim, y_max) < 1:
        raise ValueError("n_queries, n_docs, feature_dim and y_max must all be positive")
    if utility not in ("unit", "bid"):
        raise ValueError(f"unknown utility kind {utility!r}")
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=feature_dim) / np.sqrt(feature_dim)
    X = rng.uniform(size=(n_queries, n_docs, feature_dim))
    centered = (X - 0.5) @ direction
    # var of centered latent is |direction|^2 / 12
    latent_sd = np.sqrt(direction @ direction / 12.0)
    latent = centered / latent_sd + noise * rng.normal(size=(n_queries, n_docs))
    total_sd = np.sqrt(1.0 + noise ** 2)
    cuts = np.cumsum(_grade_shares(y_max))[:-1]
    thresholds = norm.ppf(cuts) * total_sd
    grades = np.searchsorted(thresholds, latent)
    if utility == "bid":
        bids = rng.lognormal(mean=0.0, sigma=0.5, size=(n_queries, n_docs))
    else:
        bids = np.ones((n_queries, n_docs))
    queries = tuple(make_query(str(q), X[q], grades[q], bids[q]) for q in range(n_queries))
    return Dataset(queries, feature_dim, y_max)


def check_permutation(order: Sequence[int], n: int) -> np.ndarray:
    order = np.asarray(order, dtype=int)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise ValueError(f"not a permutation of 0..{n - 1}: {list(order)}")
    return order


def truncate_to_top_k(query: QueryGroup, k_max: int, order: Sequence[int]) -> QueryGroup:
    """Keep the first ``min(n_q, k_max)`` items under ``order``, renumbered 0..m-1."""
    order = check_permutation(order, len(query))
    kept = order[:min(len(query), k_max)]
    items = tuple(
        Item(new_id, query.items[old].features, query.items[old].relevance,
             query.items[old].utility_value)
        for new_id, old in enumerate(kept))
    return QueryGroup(query.query_id, items)

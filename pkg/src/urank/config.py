"""Experiment configuration: schema, YAML loading, config hash and per-stage seeds."""
from __future__ import annotations

import hashlib
import json
import os
import zlib
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import (BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError,
                      model_validator)

from .ctr import CtrTrainConfig
from .ranker import UrankTrainConfig

OUTPUT_DIR_ENV = "URANK_OUTPUT_DIR"
METHODS = ("u_rank", "naive_lambdarank", "ips_lambdarank_groundtruth", "ctr_at_1",
           "km_oracle", "km_estimated")
BaselineName = Literal["naive_lambdarank", "ips_lambdarank_groundtruth", "ctr_at_1",
                       "km_oracle", "km_estimated"]


class ConfigError(ValueError):
    """Config file missing, unparsable or failing validation."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetConfig(_Strict):
    source: Literal["synthetic", "letor"] = "synthetic"
    n_train_queries: PositiveInt = 1000
    n_test_queries: PositiveInt = 100
    n_docs: PositiveInt = 10
    feature_dim: PositiveInt = 20
    y_max: PositiveInt = 4
    noise: float = Field(0.5, ge=0)
    utility: Literal["unit", "bid"] = "unit"
    train_path: Optional[str] = None
    test_path: Optional[str] = None
    normalize: bool = False

    @model_validator(mode="after")
    def _paths(self):
        if self.source == "letor" and not (self.train_path and self.test_path):
            raise ValueError("letor source needs train_path and test_path")
        return self


class OracleConfig(_Strict):
    eta: PositiveFloat = 1.0
    epsilon: float = Field(0.1, gt=0, lt=1)
    k_max: PositiveInt = 10


class LoggingConfig(_Strict):
    kind: Literal["random_shuffle", "relevance_sorted", "pretrained_pointwise"] = "random_shuffle"
    label_fraction: float = Field(0.01, gt=0, le=1)


class CtrConfig(_Strict):
    architecture: Literal["A1", "A2"] = "A1"
    compare_architectures: bool = True
    hidden_sizes: list[PositiveInt] = [64, 32]
    learning_rate: PositiveFloat = 0.003
    epochs: int = Field(100, ge=0)
    batch_size: PositiveInt = 256
    validation_fraction: float = Field(0.1, ge=0, lt=1)
    optimizer: Literal["sgd", "adam"] = "adam"

    def train_config(self, seed: int) -> CtrTrainConfig:
        return CtrTrainConfig(hidden_sizes=tuple(self.hidden_sizes), learning_rate=self.learning_rate,
                              epochs=self.epochs, batch_size=self.batch_size, seed=seed,
                              validation_fraction=self.validation_fraction, optimizer=self.optimizer)


class RankerConfig(_Strict):
    epochs: int = Field(120, ge=0)
    learning_rate: PositiveFloat = 0.003
    sigma: PositiveFloat = 1.0
    score_bound: PositiveFloat = 5.0
    clip: Literal["hard", "tanh"] = "tanh"
    rerank_every: PositiveInt = 1
    hidden_sizes: list[PositiveInt] = [64, 32]
    batch_size: PositiveInt = 32
    optimizer: Literal["sgd", "adam"] = "adam"
    utility_input: bool = True
    snapshot_queries: int = Field(5, ge=0)

    def train_config(self, seed: int) -> UrankTrainConfig:
        return UrankTrainConfig(epochs=self.epochs, learning_rate=self.learning_rate, seed=seed,
                                sigma=self.sigma, score_bound=self.score_bound,
                                rerank_every=self.rerank_every,
                                hidden_sizes=tuple(self.hidden_sizes), batch_size=self.batch_size,
                                optimizer=self.optimizer, clip=self.clip,
                                utility_input=self.utility_input,
                                snapshot_queries=self.snapshot_queries)


class EvalConfig(_Strict):
    cutoffs: list[PositiveInt] = [1, 3, 5]
    dump_query: int = Field(0, ge=0)
    lemma_grid_points: PositiveInt = 10_000


class ExperimentConfig(_Strict):
    seed: int = Field(0, ge=0)
    output_dir: str = "urank_out"
    dataset: DatasetConfig = DatasetConfig()
    oracle: OracleConfig = OracleConfig()
    logging: LoggingConfig = LoggingConfig()
    sessions_per_query: PositiveInt = 300
    test_sessions_per_query: PositiveInt = 50
    ctr: CtrConfig = CtrConfig()
    urank: RankerConfig = RankerConfig()
    baselines: list[BaselineName] = ["naive_lambdarank", "ips_lambdarank_groundtruth",
                                     "ctr_at_1", "km_oracle", "km_estimated"]
    evaluation: EvalConfig = EvalConfig()

    @model_validator(mode="after")
    def _unique(self):
        if len(set(self.baselines)) != len(self.baselines):
            raise ValueError("baselines must not repeat")
        return self

    @property
    def methods(self) -> list[str]:
        return ["u_rank", *self.baselines]

    @property
    def architectures(self) -> list[str]:
        other = "A2" if self.ctr.architecture == "A1" else "A1"
        return [self.ctr.architecture] + ([other] if self.ctr.compare_architectures else [])

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form, ignoring where outputs are written."""
        data = self.model_dump(mode="json", exclude={"output_dir"})
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)


def stage_seed(master: int, stage: str) -> int:
    """Seed for a named stage: SeedSequence([master, crc32(stage)]) reduced to 32 bits."""
    ss = np.random.SeedSequence([master, zlib.crc32(stage.encode())])
    return int(ss.generate_state(1)[0])


def load_config(path=None, output_dir: str | None = None, env: dict | None = None) -> ExperimentConfig:
    """Defaults, overlaid by the YAML file, then the env var, then ``output_dir``."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: invalid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
    env = os.environ if env is None else env
    if env.get(OUTPUT_DIR_ENV):
        raw["output_dir"] = env[OUTPUT_DIR_ENV]
    if output_dir:
        raw["output_dir"] = output_dir
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc

"""Artifact files: versioned JSON, JSON-lines sessions, CSV reports, model checkpoints."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Mapping

from .clicks import ClickSession, LoggingPolicy, OracleClickModel, QueryLog, group_sessions
from .ctr import CtrModel
from .ranker import ScoringModel

SCHEMA_VERSION = 1


class ArtifactError(RuntimeError):
    """A required artifact is missing or has the wrong kind/schema."""


def jsonable(obj):
    # strict JSON has no NaN/Infinity
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    return obj


def write_json(path, kind: str, payload: Mapping, config_hash: str | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind}
    if config_hash is not None:
        doc["config_hash"] = config_hash
    doc.update(payload)
    path.write_text(json.dumps(jsonable(doc), indent=1, sort_keys=False) + "\n")
    return path


def read_json(path, kind: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact: {path}")
    doc = json.loads(path.read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ArtifactError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    if kind is not None and doc.get("kind") != kind:
        raise ArtifactError(f"{path}: expected a {kind!r} artifact, found {doc.get('kind')!r}")
    return doc


def write_csv(path, rows: list[dict], config_hash: str | None = None) -> Path:
    """CSV with a leading ``# schema_version=.. config_hash=..`` comment line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields: list[str] = []
    for row in rows:
        fields += [k for k in row if k not in fields]
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION} config_hash={config_hash or ''}\n")
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def write_sessions(path, sessions: Iterable[ClickSession]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for s in sessions:
            fh.write(json.dumps({"schema_version": SCHEMA_VERSION, **s.to_dict()}) + "\n")
    return path


def write_logs(path, logs: Mapping[str, QueryLog]) -> Path:
    return write_sessions(path, (s for qid, qlog in logs.items() for s in qlog.sessions(qid)))


def read_sessions(path) -> list[ClickSession]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact: {path}")
    with open(path) as fh:
        return [ClickSession.from_dict(json.loads(line)) for line in fh if line.strip()]


def read_logs(path) -> dict[str, QueryLog]:
    return group_sessions(read_sessions(path))


def save_oracle(path, oracle: OracleClickModel, config_hash=None) -> Path:
    return write_json(path, "oracle_click_model", oracle.to_dict(), config_hash)


def load_oracle(path) -> OracleClickModel:
    return OracleClickModel.from_dict(read_json(path, "oracle_click_model"))


def save_policy(path, policy: LoggingPolicy, config_hash=None) -> Path:
    return write_json(path, "logging_policy", {"policy": policy.to_dict()}, config_hash)


def load_policy(path) -> LoggingPolicy:
    return LoggingPolicy.from_dict(read_json(path, "logging_policy")["policy"])


def save_ctr_model(path, model: CtrModel, config_hash=None) -> Path:
    return write_json(path, "ctr_model", model.to_dict(), config_hash)


def load_ctr_model(path) -> CtrModel:
    return CtrModel.from_dict(read_json(path, "ctr_model"))


def save_scoring_model(path, model: ScoringModel, method: str, config_hash=None) -> Path:
    return write_json(path, "scoring_model", {"method": method, **model.to_dict()}, config_hash)


def load_scoring_model(path) -> tuple[str, ScoringModel]:
    doc = read_json(path, "scoring_model")
    return doc["method"], ScoringModel.from_dict(doc)

"""Stage-by-stage experiment runner.

Stages, in order, and what each leaves in the output directory:

    data           train.letor, test.letor
    simulate       oracle.json, policy.json, sessions_train.jsonl, sessions_test.jsonl
    train-ctr      ctr_<arch>.json, ctr_<arch>_report.csv
    train-ranker   ranker_<method>.json, ranker_<method>_report.csv, bound_snapshots.json
    evaluate       report.json, report.csv, position_ctr.csv, query_dump.csv, arch_compare.csv
    verify-bounds  bounds.json, bounds.csv

Every stage reads its inputs from disk, so each can be run on its own once its
upstream artifacts exist. A stage writes ``.stages/<stage>.json`` holding a
hash of the config sections it depends on (chained through its upstream
stages); ``run_pipeline`` skips stages whose stored hash still matches.

Seeds: each random step draws from ``stage_seed(config.seed, name)`` with a
fixed name ("data", "oracle", "policy", "simulate/train", "simulate/test",
"train-ctr", "train-ranker"), so the master seed fixes every output. All
rankers share the "train-ranker" seed and therefore the same initial weights.
"""
from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import Callable

import numpy as np

from . import io
from .baselines import rank_ctr_at_1, rank_km, train_ips_lambdarank, train_naive_lambdarank
from .bounds import lemma_grid_check, verify_bounds
from .clicks import LoggingPolicy, OracleClickModel, fit_pointwise_policy, simulate_logs
from .config import ExperimentConfig, stage_seed
from .ctr import auc, train_ctr
from .data import Dataset, generate_synthetic, normalize_features, parse_letor, write_letor
from .metrics import evaluate_methods
from .ranker import ScoringModel, build_query_table, rank, train_urank

log = logging.getLogger(__name__)

STAGES = ("data", "simulate", "train-ctr", "train-ranker", "evaluate", "verify-bounds")
_DEPENDS = {
    "data": (None, ("seed", "dataset")),
    "simulate": ("data", ("oracle", "logging", "sessions_per_query", "test_sessions_per_query")),
    "train-ctr": ("simulate", ("ctr",)),
    "train-ranker": ("train-ctr", ("urank", "baselines")),
    "evaluate": ("train-ranker", ("evaluation",)),
    "verify-bounds": ("train-ranker", ("evaluation",)),
}
TRAINED = ("u_rank", "naive_lambdarank", "ips_lambdarank_groundtruth")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class Pipeline:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self.config_hash = config.config_hash()

    # paths and hashes

    def path(self, name: str) -> Path:
        return self.out / name

    def stage_hash(self, stage: str) -> str:
        upstream, keys = _DEPENDS[stage]
        parts = self.config.model_dump(mode="json", include=set(keys))
        parts["_upstream"] = self.stage_hash(upstream) if upstream else None
        parts["_seed"] = self.config.seed
        blob = json.dumps(parts, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def _marker(self, stage: str) -> Path:
        return self.out / ".stages" / f"{stage}.json"

    def is_current(self, stage: str) -> bool:
        m = self._marker(stage)
        if not m.exists():
            return False
        try:
            return json.loads(m.read_text()).get("stage_hash") == self.stage_hash(stage)
        except json.JSONDecodeError:
            return False

    def _mark(self, stage: str) -> None:
        io.write_json(self._marker(stage), "stage_marker",
                      {"stage": stage, "stage_hash": self.stage_hash(stage)}, self.config_hash)

    def _need(self, name: str) -> Path:
        p = self.path(name)
        if not p.exists():
            raise io.ArtifactError(f"missing artifact {p}; run the upstream stage first")
        return p

    # loaders

    def datasets(self) -> tuple[Dataset, Dataset]:
        d = self.config.dataset
        return (parse_letor(self._need("train.letor"), d.feature_dim, d.y_max),
                parse_letor(self._need("test.letor"), d.feature_dim, d.y_max))

    def oracle(self) -> OracleClickModel:
        return io.load_oracle(self._need("oracle.json"))

    def logs(self, split: str):
        return io.read_logs(self._need(f"sessions_{split}.jsonl"))

    def ctr_model(self, arch: str | None = None):
        return io.load_ctr_model(self._need(f"ctr_{arch or self.config.ctr.architecture}.json"))

    def ranker(self, method: str) -> ScoringModel:
        return io.load_scoring_model(self._need(f"ranker_{method}.json"))[1]

    def trained_methods(self) -> list[str]:
        names = [m for m in self.config.methods if m in TRAINED]
        names += [f"u_rank_{a}" for a in self.config.architectures[1:]]
        return names

    # stages

    def run_data(self) -> None:
        d = self.config.dataset
        if d.source == "synthetic":
            full = generate_synthetic(d.n_train_queries + d.n_test_queries, d.n_docs, d.feature_dim,
                                      d.y_max, stage_seed(self.config.seed, "data"),
                                      noise=d.noise, utility=d.utility)
            ids = [q.query_id for q in full]
            train, test = full.subset(ids[:d.n_train_queries]), full.subset(ids[d.n_train_queries:])
        else:
            train = parse_letor(d.train_path, d.feature_dim, d.y_max)
            test = parse_letor(d.test_path, d.feature_dim, d.y_max)
            if d.normalize:
                train, test = normalize_features(train), normalize_features(test)
        self.out.mkdir(parents=True, exist_ok=True)
        write_letor(train, self.path("train.letor"))
        write_letor(test, self.path("test.letor"))
        log.info("data: %d train / %d test queries", len(train), len(test))

    def run_simulate(self) -> None:
        c = self.config
        train, test = self.datasets()
        oracle = OracleClickModel.sample(c.dataset.feature_dim, eta=c.oracle.eta,
                                         epsilon=c.oracle.epsilon, y_max=c.dataset.y_max,
                                         k_max=c.oracle.k_max, seed=stage_seed(c.seed, "oracle"))
        if c.logging.kind == "pretrained_pointwise":
            policy = fit_pointwise_policy(train, c.logging.label_fraction,
                                          seed=stage_seed(c.seed, "policy"))
        else:
            policy = LoggingPolicy(c.logging.kind)
        io.save_oracle(self.path("oracle.json"), oracle, self.config_hash)
        io.save_policy(self.path("policy.json"), policy, self.config_hash)
        for split, ds, spq in (("train", train, c.sessions_per_query),
                               ("test", test, c.test_sessions_per_query)):
            logs = simulate_logs(oracle, policy, ds, spq, stage_seed(c.seed, f"simulate/{split}"))
            io.write_logs(self.path(f"sessions_{split}.jsonl"), logs)
        log.info("simulate: %d sessions per train query", c.sessions_per_query)

    def run_train_ctr(self) -> None:
        c = self.config
        train, _ = self.datasets()
        logs = self.logs("train")
        for arch in c.architectures:
            model, report = train_ctr(logs, train, c.ctr.train_config(stage_seed(c.seed, "train-ctr")),
                                      arch, c.oracle.k_max)
            io.save_ctr_model(self.path(f"ctr_{arch}.json"), model, self.config_hash)
            io.write_csv(self.path(f"ctr_{arch}_report.csv"), report.to_rows(), self.config_hash)
            io.write_json(self.path(f"ctr_{arch}_summary.json"), "ctr_training_summary",
                          {"architecture": arch, "train_auc": report.train_auc,
                           "validation_auc": report.validation_auc}, self.config_hash)
            log.info("train-ctr %s: train AUC %.4f, validation AUC %.4f",
                     arch, report.train_auc, report.validation_auc)

    def run_train_ranker(self, methods: list[str] | None = None) -> None:
        c = self.config
        train, _ = self.datasets()
        logs = self.logs("train")
        cfg = c.urank.train_config(stage_seed(c.seed, "train-ranker"))
        wanted = self.trained_methods() if methods is None else methods
        unknown = set(wanted) - set(self.trained_methods())
        if unknown:
            raise ValueError(f"not a trainable method in this config: {sorted(unknown)}; "
                             f"choose from {self.trained_methods()}")
        for method in wanted:
            if method == "naive_lambdarank":
                model, report = train_naive_lambdarank(logs, train, cfg)
            elif method == "ips_lambdarank_groundtruth":
                model, report = train_ips_lambdarank(logs, train, self.oracle(), cfg)
            else:
                arch = method.removeprefix("u_rank_") if method != "u_rank" else None
                model, report = train_urank(train, logs, self.ctr_model(arch), cfg)
                report.method = method
                if method == "u_rank":
                    io.write_json(self.path("bound_snapshots.json"), "bound_snapshots",
                                  {"snapshots": report.snapshots}, self.config_hash)
            io.save_scoring_model(self.path(f"ranker_{method}.json"), model, method, self.config_hash)
            io.write_csv(self.path(f"ranker_{method}_report.csv"), report.epochs, self.config_hash)
            log.info("train-ranker %s: final loss %.5f", method, report.epochs[-1]["loss"])

    def orders(self, method: str, dataset: Dataset) -> dict[str, np.ndarray]:
        if method == "ctr_at_1":
            ctr = self.ctr_model()
            fn: Callable = lambda q: rank_ctr_at_1(ctr, q)
        elif method == "km_oracle":
            oracle = self.oracle()
            fn = lambda q: rank_km(oracle, q)
        elif method == "km_estimated":
            ctr = self.ctr_model()
            fn = lambda q: rank_km(ctr, q)
        else:
            model = self.ranker(method)
            fn = lambda q: rank(model, q)
        return {q.query_id: fn(q) for q in dataset}

    def run_evaluate(self) -> dict:
        c = self.config
        train, test = self.datasets()
        oracle = self.oracle()
        test_logs = self.logs("test")
        methods = c.methods + [m for m in self.trained_methods() if m not in c.methods]
        perms = {m: self.orders(m, test) for m in methods}
        report = evaluate_methods(test, oracle, perms, test_logs, self.ctr_model(), "u_rank",
                                  tuple(c.evaluation.cutoffs),
                                  min(c.evaluation.dump_query, len(test) - 1))
        arch_rows = self._arch_compare(train, test, report)
        doc = {**report.to_dict(), "n_test_queries": len(test), "arch_compare": arch_rows}
        io.write_json(self.path("report.json"), "eval_report", doc, self.config_hash)
        io.write_csv(self.path("report.csv"), report.metric_rows(), self.config_hash)
        io.write_csv(self.path("position_ctr.csv"), report.curve_rows(), self.config_hash)
        io.write_csv(self.path("query_dump.csv"), report.query_dump, self.config_hash)
        io.write_csv(self.path("arch_compare.csv"), arch_rows, self.config_hash)
        for m, row in report.methods.items():
            log.info("evaluate %-28s #Click %.4f", m, row["n_click"])
        return doc

    def _arch_compare(self, train: Dataset, test: Dataset, report) -> list[dict]:
        rows = []
        train_logs, test_logs = self.logs("train"), self.logs("test")
        for i, arch in enumerate(self.config.architectures):
            model = self.ctr_model(arch)
            summary = io.read_json(self._need(f"ctr_{arch}_summary.json"), "ctr_training_summary")
            method = "u_rank" if i == 0 else f"u_rank_{arch}"
            rows.append({"architecture": arch,
                         "train_auc": auc(model, train_logs, train),
                         "validation_auc": summary["validation_auc"],
                         "test_auc": auc(model, test_logs, test),
                         "ranker": method,
                         "n_click": report.methods[method]["n_click"]})
        return rows

    def run_verify_bounds(self) -> dict:
        """Check the bound chain on the saved training states, twice.

        Once with the tables the ranker trained on (learned click model; rows
        that are not monotone in position are skipped) and once with tables
        rebuilt from the same clicks using the oracle click curves, which are
        monotone by construction, so every state is checked.
        """
        snaps = io.read_json(self._need("bound_snapshots.json"), "bound_snapshots")["snapshots"]
        train, _ = self.datasets()
        logs, oracle = self.logs("train"), self.oracle()
        oracle_snaps = []
        for snap in snaps:
            q = train.query(snap["query_id"])
            table = build_query_table(q, logs.get(q.query_id), oracle.position_ctr(q))
            oracle_snaps.append({**snap, "table": table.tolist()})
        r = self.config.urank
        sections = {"estimated": verify_bounds(snaps), "oracle_propensity": verify_bounds(oracle_snaps)}
        lemmas = lemma_grid_check(r.sigma, r.score_bound, self.config.evaluation.lemma_grid_points)
        ok = all(b.ok for b in sections.values()) and all(
            v == 0 for k, v in lemmas.items() if k.endswith("violations"))
        doc = {"ok": ok, "lemmas": lemmas,
               **{name: b.to_dict() for name, b in sections.items()}}
        rows = [{"table_source": name, **rec} for name, b in sections.items()
                for rec in b.to_dict()["records"]]
        io.write_json(self.path("bounds.json"), "bound_report", doc, self.config_hash)
        io.write_csv(self.path("bounds.csv"), rows, self.config_hash)
        for name, b in sections.items():
            log.info("verify-bounds %s: %d regret / %d loss checks, %d violations",
                     name, b.n_checked_regret, b.n_checked_loss,
                     b.n_violations_regret + b.n_violations_loss)
        return doc

    def run_stage(self, stage: str, **kw) -> None:
        runner = {"data": self.run_data, "simulate": self.run_simulate,
                  "train-ctr": self.run_train_ctr, "train-ranker": self.run_train_ranker,
                  "evaluate": self.run_evaluate, "verify-bounds": self.run_verify_bounds}[stage]
        log.info("stage %s", stage)
        try:
            runner(**kw)
        except Exception as exc:
            raise StageError(stage, exc) from exc
        if not kw.get("methods"):      # a partial ranker run leaves the stage incomplete
            self._mark(stage)


def run_pipeline(config: ExperimentConfig, force: bool = False) -> Pipeline:
    """Run every stage in order, skipping stages whose artifacts match the config."""
    pipe = Pipeline(config)
    for stage in STAGES:
        if not force and pipe.is_current(stage):
            log.info("stage %s up to date, skipped", stage)
            continue
        pipe.run_stage(stage)
    return pipe


def evaluate_checkpoints(pipe: Pipeline, paths: list[str], out: Path | None = None) -> dict:
    """Side-by-side oracle evaluation of saved ranker checkpoints on the pipeline's test split.

    The first checkpoint is the reference for paired t-tests.
    """
    _, test = pipe.datasets()
    oracle = pipe.oracle()
    perms, names = {}, []
    for p in paths:
        method, model = io.load_scoring_model(p)
        name = method if method not in names else f"{method}#{len(names)}"
        names.append(name)
        perms[name] = {q.query_id: rank(model, q) for q in test}
    report = evaluate_methods(test, oracle, perms, pipe.logs("test"), None, names[0],
                              tuple(pipe.config.evaluation.cutoffs), None)
    doc = {"checkpoints": dict(zip(names, paths)), "methods": report.methods,
           "t_tests": report.t_tests}
    if out is not None:
        io.write_json(out, "checkpoint_comparison", doc, pipe.config_hash)
    return doc

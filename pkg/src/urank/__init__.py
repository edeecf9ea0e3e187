"""Utility-maximizing learning to rank from position-biased click logs."""
from .clicks import ClickSession, LoggingPolicy, OracleClickModel, simulate_logs, simulate_sessions
from .config import ExperimentConfig, load_config
from .ctr import CtrModel, CtrTrainConfig, train_ctr
from .data import Dataset, QueryGroup, generate_synthetic, parse_letor, write_letor
from .matching import brute_force_match, km_match, utility_of_ranking
from .pipeline import Pipeline, run_pipeline
from .ranker import ScoringModel, UrankTrainConfig, build_utility_table, rank, train_urank, urank_loss

__version__ = "0.1.0"

__all__ = [
    "ClickSession", "LoggingPolicy", "OracleClickModel", "simulate_logs", "simulate_sessions",
    "ExperimentConfig", "load_config", "CtrModel", "CtrTrainConfig", "train_ctr",
    "Dataset", "QueryGroup", "generate_synthetic", "parse_letor", "write_letor",
    "brute_force_match", "km_match", "utility_of_ranking", "Pipeline", "run_pipeline",
    "ScoringModel", "UrankTrainConfig", "build_utility_table", "rank", "train_urank", "urank_loss",
]

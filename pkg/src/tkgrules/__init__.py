"""Temporal logical rule learning and link prediction on interval graphs."""

from .datasets import DatasetSplit, FormatConfig, load_dataset, time_shift_resplit
from .errors import ContractViolation, ParseError, TkgError, TrainingDiverged
from .estimator import TemporalRuleRanker
from .graph import Fact, TemporalGraph, build_graph
from .intervals import PRESENT, Interval, TRClass, temporal_relation
from .ranking import Query, RankedAnswer, apply_rules, metrics, time_aware_filter
from .walks import RuleSet, RuleTemplate, enumerate_walks, find_all_paths

__version__ = "0.1.0"

__all__ = [
    "ContractViolation",
    "DatasetSplit",
    "Fact",
    "FormatConfig",
    "Interval",
    "ParseError",
    "PRESENT",
    "Query",
    "RankedAnswer",
    "RuleSet",
    "RuleTemplate",
    "TRClass",
    "TemporalGraph",
    "TemporalRuleRanker",
    "TkgError",
    "TrainingDiverged",
    "apply_rules",
    "build_graph",
    "enumerate_walks",
    "find_all_paths",
    "load_dataset",
    "metrics",
    "temporal_relation",
    "time_aware_filter",
    "time_shift_resplit",
]

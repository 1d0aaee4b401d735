"""Declarative experiment configuration with stable hashing.

One config file drives every subcommand; CLI flags override single fields.
The canonical JSON serialization is embedded (with its hash and the seed)
in every output artifact so a run can be reproduced from any of them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ExperimentConfig:
    # data
    dataset: str = "custom"
    train_path: str | None = None
    valid_path: str | None = None
    test_path: str | None = None
    strict_counts: bool = True
    # model
    max_rule_length: int = 5
    embed_dim: int = 32
    cell: str = "gated"
    # phase 1
    epochs: int = 30
    lr: float = 1e-2
    lr_decay: float = 0.95
    batch_size: int = 32
    optimizer: str = "adam"
    # phase 2
    feature_epochs: int = 10
    feature_lr: float = 1e-2
    use_feature_model: bool = True
    feature_candidates: str = "neighbors"
    # enumeration caps
    max_paths_per_example: int | None = None
    max_walks_per_rule: int | None = None
    max_examples: int | None = None
    keep_groundings: int = 5
    # evaluation
    eval_split: str = "test"
    filter_known: bool = True
    both_directions: bool = True
    # scenarios
    scenario_fractions: list = field(default_factory=lambda: [0.25, 0.5, 0.75, 1.0])
    scenario_rounds: int = 5
    scenario_boundaries: list | None = None
    scenario_relations: list | None = None
    # run control
    seed: int = 0
    workers: int = 1
    output_dir: str = "runs"

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        doc = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]

    def stamp(self) -> dict:
        """Provenance block embedded in output artifacts."""
        return {"config": json.loads(self.to_json()), "config_hash": self.hash(), "seed": self.seed}

    def make_estimator(self):
        from .estimator import TemporalRuleRanker

        return TemporalRuleRanker(
            max_rule_length=self.max_rule_length,
            embed_dim=self.embed_dim,
            cell=self.cell,
            epochs=self.epochs,
            lr=self.lr,
            lr_decay=self.lr_decay,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            feature_epochs=self.feature_epochs,
            feature_lr=self.feature_lr,
            use_feature_model=self.use_feature_model,
            feature_candidates=self.feature_candidates,
            max_paths_per_example=self.max_paths_per_example,
            max_walks_per_rule=self.max_walks_per_rule,
            max_examples=self.max_examples,
            keep_groundings=self.keep_groundings,
            workers=self.workers,
            random_state=self.seed,
        )

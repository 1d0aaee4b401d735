"""Hard-setting protocol runners: few samples, biased data, time shift.

Each runner retrains a fresh estimator per round under the perturbed data
and reports ranking metrics as rows (setting, round, mrr, hit1, hit10).
All resampling flows from one root seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .datasets import DatasetSplit, time_shift_resplit


@dataclass
class ScenarioRow:
    setting: str
    round: int
    mrr: float
    hit1: float
    hit10: float

    def as_list(self):
        return [self.setting, self.round, self.mrr, self.hit1, self.hit10]


def write_rows(rows, path, header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(header_comment + "\n")
        writer = csv.writer(fh)
        writer.writerow(["setting", "round", "mrr", "hit1", "hit10"])
        for row in rows:
            writer.writerow(row.as_list())


def plot_rows(rows, path, title=""):
    """Optional summary plot; silently skipped without matplotlib."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return False
    by_setting: dict[str, list[float]] = {}
    for row in rows:
        by_setting.setdefault(row.setting, []).append(row.mrr)
    labels = list(by_setting)
    means = [float(np.mean(by_setting[s])) for s in labels]
    errs = [float(np.std(by_setting[s])) for s in labels]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.errorbar(range(len(labels)), means, yerr=errs, marker="o")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel("MRR")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return True


def _subset_split(split: DatasetSplit, train_facts) -> DatasetSplit:
    return DatasetSplit(
        train=list(train_facts),
        valid=split.valid,
        test=split.test,
        entities=split.entities,
        relations=split.relations,
        max_year=split.max_year,
        min_year=split.min_year,
    )


def _fit_and_eval(split, estimator_factory, seed, test_facts=None, filter_known=True):
    est = estimator_factory()
    est.set_params(random_state=seed)
    est.fit(split)
    known = split.build_full_graph().resolve(seed=seed) if filter_known else None
    facts = test_facts if test_facts is not None else split.test
    report, _ = est.evaluate(facts, known_graph=known)
    return report


def run_few_samples(
    split: DatasetSplit,
    estimator_factory,
    fractions=(0.25, 0.5, 0.75, 1.0),
    rounds=5,
    seed=0,
    filter_known=True,
):
    """Retrain on randomly reduced training sets, several rounds each."""
    rows = []
    root = np.random.default_rng(seed)
    for fraction in fractions:
        for rnd in range(rounds):
            child = int(root.integers(2**31))
            rng = np.random.default_rng(child)
            n = len(split.train)
            keep = max(1, int(round(fraction * n)))
            idx = rng.choice(n, size=keep, replace=False) if keep < n else np.arange(n)
            sub = _subset_split(split, [split.train[i] for i in sorted(idx)])
            report = _fit_and_eval(sub, estimator_factory, child, filter_known=filter_known)
            rows.append(
                ScenarioRow(
                    setting=f"fraction={fraction}",
                    round=rnd,
                    mrr=report["mrr"],
                    hit1=report["hit1"],
                    hit10=report["hit10"],
                )
            )
    return rows


def equalize_test_queries(test_facts, rng):
    """Rebalance test queries toward equal per-relation counts.

    The target count is the median relation frequency; relations at or
    above it are sampled down to the target, rarer relations contribute
    half of what they have (at least one query).
    """
    by_rel: dict[int, list] = {}
    for f in test_facts:
        by_rel.setdefault(f.relation, []).append(f)
    if not by_rel:
        return []
    target = int(np.median([len(v) for v in by_rel.values()]))
    target = max(target, 1)
    out = []
    for r in sorted(by_rel):
        facts = by_rel[r]
        if len(facts) >= target:
            pick = rng.choice(len(facts), size=target, replace=False)
        else:
            pick = rng.choice(len(facts), size=max(1, math.ceil(len(facts) / 2)), replace=False)
        out.extend(facts[i] for i in sorted(pick))
    return out


def run_biased(
    split: DatasetSplit,
    estimator_factory,
    relations=None,
    rounds=5,
    seed=0,
    filter_known=True,
):
    """Halve one relation's training edges at a time and measure the hit.

    Rows include a per-round ``baseline`` (untouched training set) so the
    MRR change each relation suffers can be read off directly; all rounds
    of one seed share the rebalanced test set.
    """
    rows = []
    root = np.random.default_rng(seed)
    rel_ids = relations
    if rel_ids is None:
        rel_ids = sorted({f.relation for f in split.train})
    for rnd in range(rounds):
        child = int(root.integers(2**31))
        rng = np.random.default_rng(child)
        test_facts = equalize_test_queries(split.test, rng)
        base = _fit_and_eval(
            split, estimator_factory, child, test_facts=test_facts, filter_known=filter_known
        )
        rows.append(
            ScenarioRow("baseline", rnd, base["mrr"], base["hit1"], base["hit10"])
        )
        for r in rel_ids:
            rel_facts = [i for i, f in enumerate(split.train) if f.relation == r]
            drop = set(
                rng.choice(rel_facts, size=len(rel_facts) // 2, replace=False).tolist()
            ) if rel_facts else set()
            train = [f for i, f in enumerate(split.train) if i not in drop]
            sub = _subset_split(split, train)
            rep = _fit_and_eval(
                sub, estimator_factory, child, test_facts=test_facts, filter_known=filter_known
            )
            name = split.relations[r] if r < len(split.relations) else str(r)
            rows.append(
                ScenarioRow(f"halved:{name}", rnd, rep["mrr"], rep["hit1"], rep["hit10"])
            )
    return rows


def run_time_shift(
    split: DatasetSplit,
    estimator_factory,
    boundaries,
    seed=0,
    filter_known=True,
):
    """Re-split by start year, retrain, evaluate on the late period."""
    shifted, report = time_shift_resplit(split, boundaries)
    rep = _fit_and_eval(shifted, estimator_factory, seed, filter_known=filter_known)
    row = ScenarioRow(
        setting=f"shift:{boundaries[0]}-{boundaries[1]}",
        round=0,
        mrr=rep["mrr"],
        hit1=rep["hit1"],
        hit10=rep["hit10"],
    )
    return [row], report

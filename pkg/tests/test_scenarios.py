import csv

import numpy as np
import pytest

from tkgrules.estimator import TemporalRuleRanker
from tkgrules.scenarios import (
    ScenarioRow,
    equalize_test_queries,
    run_biased,
    run_few_samples,
    run_time_shift,
    write_rows,
)
from tkgrules.synthetic import planted_rule_dataset


def tiny_factory():
    return TemporalRuleRanker(
        max_rule_length=2,
        embed_dim=4,
        epochs=3,
        feature_epochs=0,
        use_feature_model=False,
        random_state=0,
    )


@pytest.fixture(scope="module")
def tiny_split():
    return planted_rule_dataset(n_train=25, n_test=8, seed=11, noise_per_example=1)


def test_few_samples_rows_cover_all_settings(tiny_split):
    rows = run_few_samples(
        tiny_split, tiny_factory, fractions=(0.5, 1.0), rounds=2, seed=1, filter_known=False
    )
    assert len(rows) == 4
    settings = {r.setting for r in rows}
    assert settings == {"fraction=0.5", "fraction=1.0"}
    full = [r.mrr for r in rows if r.setting == "fraction=1.0"]
    assert min(full) > 0.5  # the planted pattern survives the full training set


def test_few_samples_is_seed_deterministic(tiny_split):
    a = run_few_samples(tiny_split, tiny_factory, fractions=(0.5,), rounds=1, seed=3, filter_known=False)
    b = run_few_samples(tiny_split, tiny_factory, fractions=(0.5,), rounds=1, seed=3, filter_known=False)
    assert [r.as_list() for r in a] == [r.as_list() for r in b]


def test_equalize_test_queries_caps_common_relations():
    from tkgrules.graph import Fact
    from tkgrules.intervals import Interval

    facts = [Fact(0, 0, 1, Interval.point(2000))] * 9
    facts += [Fact(0, 1, 1, Interval.point(2000))] * 9
    facts += [Fact(0, 2, 1, Interval.point(2000))] * 2
    rng = np.random.default_rng(0)
    out = equalize_test_queries(facts, rng)
    counts = {}
    for f in out:
        counts[f.relation] = counts.get(f.relation, 0) + 1
    # median target is 9; the rare relation contributes half its queries
    assert counts[0] == 9 and counts[1] == 9 and counts[2] == 1


def test_biased_runner_reports_baseline_and_per_relation_rows(tiny_split):
    rows = run_biased(
        tiny_split, tiny_factory, relations=[1], rounds=1, seed=2, filter_known=False
    )
    settings = [r.setting for r in rows]
    assert settings[0] == "baseline"
    assert settings[1] == "halved:step_a"
    # both runs answer the same rebalanced query set and stay in range
    assert 0.0 <= rows[1].mrr <= 1.0
    assert rows[0].hit10 >= rows[0].hit1


def test_time_shift_runner_reports_ranges(tiny_split):
    rows, report = run_time_shift(
        tiny_split, tiny_factory, boundaries=(2005, 2010), seed=0, filter_known=False
    )
    assert report.boundaries == (2005, 2010)
    assert report.train_range[1] == 2005
    assert report.valid_range == (2005, 2010)
    assert report.test_range[0] == 2010
    assert rows[0].setting == "shift:2005-2010"


def test_rows_csv_round_trip(tmp_path):
    rows = [ScenarioRow("x", 0, 0.5, 0.25, 0.75), ScenarioRow("y", 1, 0.9, 0.8, 1.0)]
    path = tmp_path / "rows.csv"
    write_rows(rows, path)
    with open(path) as fh:
        got = list(csv.reader(fh))
    assert got[0] == ["setting", "round", "mrr", "hit1", "hit10"]
    assert got[1][0] == "x" and float(got[2][2]) == 0.9


def test_quarter_fraction_preserves_planted_pattern_mrr():
    """With redundant groundings, shrinking the training set changes the
    pattern's frequency but not its existence: a quarter of the training
    facts should score within 0.05 MRR of the full set."""
    from tkgrules.synthetic import redundant_planted_dataset

    split = redundant_planted_dataset(n_train=10, n_test=5, seed=2, copies_a=10, copies_b=8)

    def factory():
        return TemporalRuleRanker(
            max_rule_length=2,
            embed_dim=6,
            epochs=4,
            feature_epochs=0,
            use_feature_model=False,
            random_state=0,
        )

    rows = run_few_samples(
        split, factory, fractions=(0.25, 1.0), rounds=1, seed=4, filter_known=False
    )
    by_setting = {r.setting: r.mrr for r in rows}
    assert by_setting["fraction=1.0"] >= 0.9
    assert abs(by_setting["fraction=0.25"] - by_setting["fraction=1.0"]) <= 0.05

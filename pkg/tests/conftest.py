import pytest

from tkgrules.graph import Fact, build_graph
from tkgrules.intervals import Interval
from tkgrules.synthetic import planted_rule_dataset


def make_graph(rows, num_entities=None, num_base_relations=None):
    """rows: (subject, relation, object, start, end) tuples."""
    facts = [Fact(s, r, o, Interval(ts, te)) for s, r, o, ts, te in rows]
    return build_graph(
        facts, num_entities=num_entities, num_base_relations=num_base_relations
    ).resolve()


@pytest.fixture(scope="session")
def planted_split():
    return planted_rule_dataset(n_train=60, n_test=15, seed=7)


@pytest.fixture(scope="session")
def small_trained(planted_split):
    from tkgrules.estimator import TemporalRuleRanker

    est = TemporalRuleRanker(
        max_rule_length=2,
        embed_dim=8,
        epochs=8,
        feature_epochs=3,
        batch_size=32,
        random_state=3,
    )
    est.fit(planted_split)
    return est

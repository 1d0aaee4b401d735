import json

import numpy as np
import pytest

from conftest import make_graph
from tkgrules.errors import ContractViolation
from tkgrules.intervals import TRClass
from tkgrules.ranking import (
    KnownFactIndex,
    Query,
    RankedAnswer,
    apply_rules,
    combine_scores,
    explain_candidate,
    grounding_to_text,
    logic_scores,
    metrics,
    rank_of_truth,
    ranked_candidates,
    rule_to_text,
    time_aware_filter,
)
from tkgrules.walks import RuleTemplate

B, T, A = int(TRClass.BEFORE), int(TRClass.TOUCHING), int(TRClass.AFTER)


def fan_graph():
    """One source with 4 step-1 edges: 3 reach entity 5, 1 reaches entity 6."""
    rows = [
        (0, 1, 1, 2000, 2000),
        (0, 1, 2, 2000, 2000),
        (0, 1, 3, 2000, 2000),
        (0, 1, 4, 2001, 2001),
        (1, 2, 5, 2001, 2001),
        (2, 2, 5, 2001, 2001),
        (3, 2, 5, 2001, 2001),
        (4, 2, 6, 2002, 2002),
    ]
    return make_graph(rows, num_entities=7, num_base_relations=3)


def fan_rule():
    return RuleTemplate(head=0, predicates=(1, 2), tr_query=(B, B), tr_pairs=(B,))


def test_arriving_rates_by_hand():
    g = fan_graph()
    query = Query(0, 0, (2005.0, 2005.0))
    apps = apply_rules(g, query, [fan_rule()], keep_groundings=2)
    (app,) = apps
    assert app.total == 4
    assert app.counts == {5: 3, 6: 1}
    assert app.rates[5] == pytest.approx(0.75)
    assert app.rates[6] == pytest.approx(0.25)
    assert len(app.groundings[5]) == 2  # capped


def test_single_walk_rate_is_one():
    g = make_graph(
        [(0, 1, 1, 2000, 2000), (1, 2, 2, 2001, 2001)],
        num_entities=3,
        num_base_relations=3,
    )
    apps = apply_rules(g, Query(0, 0, (2005.0, 2005.0)), [fan_rule()])
    assert apps[0].rates == {2: 1.0}


def test_shifted_query_interval_yields_nothing():
    g = fan_graph()
    apps = apply_rules(g, Query(0, 0, (1990.0, 1990.0)), [fan_rule()])
    assert apps == []


def test_rule_head_must_match_query():
    g = fan_graph()
    with pytest.raises(ContractViolation):
        apply_rules(g, Query(0, 2, (2005.0, 2005.0)), [fan_rule()])


def test_logic_scores_sum_rate_times_confidence():
    g = fan_graph()
    apps = apply_rules(g, Query(0, 0, (2005.0, 2005.0)), [fan_rule()])
    scores = logic_scores(apps, np.array([0.4]))
    assert scores[5] == pytest.approx(0.3)
    assert scores[6] == pytest.approx(0.1)
    # two rules: (rate, confidence) pairs (0.5, 0.2) and (1.0, 0.1) -> 0.2
    fake = [
        type(apps[0])(rule_index=0, rule=fan_rule(), total=2, counts={9: 1}),
        type(apps[0])(rule_index=1, rule=fan_rule(), total=1, counts={9: 1}),
    ]
    assert logic_scores(fake, np.array([0.2, 0.1]))[9] == pytest.approx(0.2)


def test_candidate_unreached_scores_zero():
    scores = logic_scores([], np.zeros(0))
    assert scores == {}
    assert combine_scores(scores, {}, 1.0, 1.0) == {}


def test_combine_scores_and_scaling_preserve_order():
    logic = {1: 0.3, 2: 0.05}
    feature = {2: 0.2, 3: 0.1}
    both = combine_scores(logic, feature, 1.0, 1.0)
    assert both == pytest.approx({1: 0.3, 2: 0.25, 3: 0.1})
    doubled = combine_scores(logic, feature, 2.0, 2.0)
    assert max(both, key=both.get) == max(doubled, key=doubled.get)
    only_logic = combine_scores(logic, feature, 1.0, 0.0)
    assert only_logic == pytest.approx({1: 0.3, 2: 0.05, 3: 0.0})


# ---------------------------------------------------------------------------
# time-aware filtering


def known_index():
    rows = [
        (0, 0, 1, 2000, 2005),
        (0, 0, 2, 2010, 2012),
    ]
    return KnownFactIndex(make_graph(rows, num_entities=4, num_base_relations=1))


def test_overlapping_known_candidate_is_removed():
    idx = known_index()
    q = Query(0, 0, (2004.0, 2004.0))
    kept = time_aware_filter(idx, q, [1, 2, 3], truth=3)
    assert kept == [2, 3]  # entity 1 holds during 2004, entity 2 does not


def test_disjoint_known_candidate_is_kept():
    idx = known_index()
    q = Query(0, 0, (2007.0, 2008.0))
    assert time_aware_filter(idx, q, [1, 2, 3], truth=3) == [1, 2, 3]


def test_truth_survives_filtering():
    idx = known_index()
    q = Query(0, 0, (2004.0, 2004.0))
    assert time_aware_filter(idx, q, [1, 2], truth=1) == [1, 2]


def test_no_known_facts_is_identity():
    idx = known_index()
    q = Query(3, 0, (2004.0, 2004.0))
    assert time_aware_filter(idx, q, [1, 2], truth=2) == [1, 2]


def test_filtering_never_worsens_the_truth_rank():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(3, 10))
        scores = {int(c): float(rng.random()) for c in rng.choice(20, n, replace=False)}
        truth = int(rng.choice(list(scores)))
        others = [c for c in scores if c != truth]
        removed = set(
            int(c) for c in rng.choice(others, size=int(rng.integers(0, len(others) + 1)), replace=False)
        ) if others else set()
        base = rank_of_truth(scores, truth, 20)
        filtered = rank_of_truth(scores, truth, 20, excluded=removed)
        assert filtered <= base


# ---------------------------------------------------------------------------
# ranks and metrics


def test_mean_rank_of_tied_block():
    scores = {1: 0.5, 2: 0.5, 3: 0.1}
    assert rank_of_truth(scores, 1, 10) == pytest.approx(1.5)
    assert rank_of_truth(scores, 3, 10) == pytest.approx(3.0)


def test_unscored_truth_ranks_below_scored_by_entity_id():
    scores = {4: 0.9, 7: -0.5}
    # unscored entities 0..9 minus {4, 7}: truth 2 sits behind ids 0, 1
    assert rank_of_truth(scores, 2, 10) == 2 + 3
    assert rank_of_truth(scores, 0, 10) == 2 + 1
    # negative-scored candidates still precede unscored ones
    assert rank_of_truth(scores, 7, 10) == 2.0


def test_excluded_truth_is_a_contract_violation():
    with pytest.raises(ContractViolation):
        rank_of_truth({1: 0.2}, 1, 5, excluded={1})


def test_ranked_candidates_order_and_determinism():
    scores = {3: 0.2, 1: 0.9, 2: 0.2}
    assert ranked_candidates(scores) == [(1, 0.9), (2, 0.2), (3, 0.2)]
    assert ranked_candidates(scores, excluded={1}) == [(2, 0.2), (3, 0.2)]


def test_metrics_by_hand():
    perfect = metrics([1, 1, 1])
    assert perfect["mrr"] == 1.0 and perfect["hit1"] == 1.0 and perfect["hit10"] == 1.0
    got = metrics([1, 4, 20])
    assert got["mrr"] == pytest.approx((1 + 0.25 + 0.05) / 3)
    assert got["hit10"] == pytest.approx(2 / 3)
    tied = metrics([1.5])
    assert tied["mrr"] == pytest.approx(2 / 3)
    assert tied["hit1"] == 0.0
    assert metrics([])["count"] == 0


# ---------------------------------------------------------------------------
# explanations and serialization


def test_rule_and_grounding_rendering():
    rule = fan_rule()
    text = rule_to_text(rule, relation_names=["wins", "nominated", "shares"])
    assert text.startswith("wins(E1,E3,I3) <- nominated(E1,E2,I1) ^ shares(E2,E3,I2)")
    assert "before(I1,I2)" in text and "before(I1,I3)" in text and "before(I2,I3)" in text
    g = fan_graph()
    apps = apply_rules(g, Query(0, 0, (2005.0, 2005.0)), [fan_rule()], keep_groundings=1)
    grounding = apps[0].groundings[5][0]
    walk_text = grounding_to_text(g, grounding, entity_names=[f"n{i}" for i in range(7)])
    assert walk_text.startswith("E1=n0")
    assert "I1=[2000, 2000]" in walk_text


def test_explanations_rank_rules_by_contribution():
    g = fan_graph()
    rules = [
        fan_rule(),
        RuleTemplate(head=0, predicates=(1, 2), tr_query=(B, B), tr_pairs=(T,)),
    ]
    apps = apply_rules(g, Query(0, 0, (2005.0, 2005.0)), rules, keep_groundings=1)
    out = explain_candidate(g, apps, np.array([0.5, 0.9]), candidate=5, top_k=3)
    assert out  # the first rule fires; contributions sorted descending
    assert out[0]["contribution"] >= out[-1]["contribution"]
    assert "grounding" in out[0]


def test_ranked_answer_json_round_trip():
    answer = RankedAnswer(
        query=Query(0, 1, (2000.0, 2001.0)),
        truth=5,
        candidates=[(5, 0.9), (6, 0.1)],
        truth_rank=1.0,
    )
    doc = json.loads(answer.to_json())
    assert doc["truth"] == 5
    assert doc["candidates"][0] == {"entity": 5, "score": 0.9, "rank": 1}
    assert doc["query"]["interval"] == [2000.0, 2001.0]

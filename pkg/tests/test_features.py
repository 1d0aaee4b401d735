import math

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import make_graph
from tkgrules import autodiff as ad
from tkgrules.errors import ContractViolation
from tkgrules.features import (
    GAP_EXPONENTIAL,
    GAP_GAUSSIAN,
    DistributionParams,
    DurationModel,
    EvidenceSets,
    FeatureWeights,
    build_tables,
    collect_evidence,
    exponential_density,
    feature_score,
    feature_score_node,
    fit_bernoulli,
    fit_distributions,
    fit_duration_model,
    fit_exponential,
    fit_gaussian,
    fit_truncated_gaussian,
    gap_score,
    gaussian_density,
    impute_duration,
    integrate_scores,
    order_score,
    part_score,
    recurrence_score,
    _gap_fit_from_stats,
)
from tkgrules.intervals import Interval


# ---------------------------------------------------------------------------
# densities and elementary fits


def test_birth_to_graduation_density_matches_published_value():
    assert abs(gaussian_density(47, 22, 1) - 7.65e-137) / 7.65e-137 < 0.01


def test_birth_to_death_density_matches_published_value():
    assert abs(gaussian_density(114, 70, 6) - 1.39e-13) / 1.39e-13 < 0.01


def test_exponential_density_at_origin_is_rate():
    assert exponential_density(0.0, 0.7) == pytest.approx(0.7)
    assert exponential_density(-1.0, 0.7) == 0.0


def test_gaussian_density_integrates_to_one():
    for mu, sigma in [(0, 1), (22, 1), (5, 3)]:
        total, _ = integrate.quad(lambda x: gaussian_density(x, mu, sigma), mu - 40 * sigma, mu + 40 * sigma)
        assert abs(total - 1.0) < 1e-3


def test_elementary_fitters_recover_parameters():
    rng = np.random.default_rng(0)
    assert fit_bernoulli(rng.random(2000) < 0.3) == pytest.approx(0.3, abs=0.05)
    mu, sigma = fit_gaussian(rng.normal(10, 2, 4000))
    assert mu == pytest.approx(10, abs=0.2) and sigma == pytest.approx(2, abs=0.2)
    lam = fit_exponential(rng.exponential(5.0, 4000))
    assert lam == pytest.approx(0.2, abs=0.02)


def test_gaussian_sigma_floor_prevents_degenerate_fit():
    _, sigma = fit_gaussian([7.0, 7.0, 7.0])
    assert sigma == 0.5
    assert fit_exponential([0.0, 0.0]) == 1.0 / 0.5


def test_truncated_gaussian_mle_handles_active_truncation():
    rng = np.random.default_rng(3)
    mu_true, sigma_true = 2.0, 3.0
    a = (0 - mu_true) / sigma_true
    x = stats.truncnorm.rvs(a, np.inf, loc=mu_true, scale=sigma_true, size=4000, random_state=rng)
    # plain moments are badly biased here; the MLE is not
    assert x.mean() > mu_true + 0.5
    mu, sigma = fit_truncated_gaussian(x)
    assert mu == pytest.approx(mu_true, abs=0.35)
    assert sigma == pytest.approx(sigma_true, abs=0.35)


def test_gap_fit_prefers_exponential_for_exponential_data():
    rng = np.random.default_rng(1)
    x = rng.exponential(1.0 / 0.2, size=500)
    kind, mu, sigma, lam = _gap_fit_from_stats(len(x), x.sum(), (x**2).sum())
    assert kind == GAP_EXPONENTIAL
    assert 0.17 <= lam <= 0.23


def test_gap_fit_prefers_gaussian_for_concentrated_data():
    rng = np.random.default_rng(2)
    x = rng.normal(22, 1, size=500)
    kind, mu, sigma, lam = _gap_fit_from_stats(len(x), x.sum(), (x**2).sum())
    assert kind == GAP_GAUSSIAN
    assert mu == pytest.approx(22, abs=0.2)
    assert sigma == pytest.approx(1, abs=0.2)


# ---------------------------------------------------------------------------
# duration model


def test_duration_samples_are_never_negative():
    model = DurationModel(
        mu=np.array([-5.0]), sigma=np.array([1.0]), n_obs=np.array([10]),
        global_mu=1.0, global_sigma=1.0,
    )
    rng = np.random.default_rng(0)
    draws = np.array([model.sample(0, rng) for _ in range(10000)])
    assert (draws >= 0).all()


def test_duration_degenerate_sigma_returns_mean():
    model = DurationModel(
        mu=np.array([7.3]), sigma=np.array([0.0]), n_obs=np.array([5]),
        global_mu=1.0, global_sigma=1.0,
    )
    assert model.sample(0, np.random.default_rng(0)) == 7.3


def test_duration_falls_back_to_global_for_unseen_relation():
    model = DurationModel(
        mu=np.array([7.0]), sigma=np.array([1.0]), n_obs=np.array([0]),
        global_mu=3.0, global_sigma=0.0,
    )
    assert model.sample(0, np.random.default_rng(0)) == 3.0


def test_impute_duration_is_deterministic_and_rounded():
    model = DurationModel(
        mu=np.array([4.4]), sigma=np.array([2.0]), n_obs=np.array([9]),
        global_mu=1.0, global_sigma=1.0,
    )
    iv = Interval(2000, None)
    first = impute_duration(iv, 0, model, seed=42)
    second = impute_duration(iv, 0, model, seed=42)
    assert first == second
    assert first.start == 2000 and isinstance(first.end, int) and first.end >= 2000
    with pytest.raises(ContractViolation):
        impute_duration(Interval(None, None), 0, model, seed=1)


def test_fit_duration_model_on_graph():
    rows = [(i, 0, i + 1, 2000, 2000 + 3 + (i % 2)) for i in range(0, 20, 2)]
    g = make_graph(rows, num_base_relations=1)
    model = fit_duration_model(g)
    mu, sigma = model.params_for(0)
    assert 3.0 <= mu <= 4.0
    # inverse relation sees the same durations
    assert model.params_for(1) == pytest.approx(model.params_for(0))


# ---------------------------------------------------------------------------
# evidence collection


def person_fixture():
    # city 0, person 1, school 2, other-city 3; relations: born 0, grad 1, died 2
    rows = [
        (1, 0, 0, 1872, 1872),
        (1, 1, 2, 1919, 1919),
        (1, 2, 3, 1986, 1986),
    ]
    return make_graph(rows, num_entities=4, num_base_relations=3)


def test_candidate_without_facts_has_empty_evidence():
    g = person_fixture()
    ev = collect_evidence(g, subject=0, candidate=2, query_start=1872.0)
    # school's only facts point back at the person, none at the city
    assert len(ev.direct) == 0
    assert len(ev.other) == 1


def test_closest_start_times_per_relation():
    g = person_fixture()
    # subject-side query from the city: candidate is the person
    born_edge = int(g.edge_ids[0])
    ev = collect_evidence(
        g, subject=0, candidate=1, query_start=1872.0, exclude_edge_ids={born_edge}
    )
    assert list(ev.rels[0]) == []  # own edge excluded, nothing else to the city
    assert ev.closest_start[1][1] == 1919.0  # graduation
    assert ev.closest_start[1][2] == 1986.0  # death
    assert len(ev.walks) == 0 and len(ev.rels[2]) == 0


def test_evidence_partitions_candidate_facts():
    g = person_fixture()
    ev = collect_evidence(g, subject=0, candidate=1, query_start=1900.0)
    all_from = set(int(i) for i in g.facts_from(1))
    assert set(ev.direct) | set(ev.other) == all_from
    assert set(ev.direct) & set(ev.other) == set()


def test_walk_evidence_collects_walk_relations():
    g = person_fixture()
    walks = [(0,), (1, int(g.facts_from_with(2, 1 + 3)[0]))]
    ev = collect_evidence(g, subject=0, candidate=1, query_start=1872.0, walks=walks)
    assert len(ev.walks) == 2
    assert set(ev.rels[2]) == {0, 1, 1 + 3}


# ---------------------------------------------------------------------------
# scoring primitives


def test_integrate_singleton_ignores_weight():
    w = np.array([3.7, 0.0])
    b = np.array([0.25, 0.0])
    assert integrate_scores([0.5], w, b, [0]) == pytest.approx(0.75)


def test_integrate_uniform_weights_average():
    w = np.zeros(3)
    b = np.zeros(3)
    assert integrate_scores([0.2, 0.4, 0.9], w, b, [0, 1, 2]) == pytest.approx(0.5)


def test_integrate_weighted_example():
    w = np.array([0.0, math.log(3.0)])
    b = np.zeros(2)
    got = integrate_scores([0.4, 0.8], w, b, [0, 1])
    assert got == pytest.approx(0.7)


def test_integrate_empty_set_is_neutral():
    assert integrate_scores([], np.zeros(2), np.zeros(2), []) == 0.0


def make_params(R=4):
    return DistributionParams.empty(R)


def test_recurrence_score_examples():
    params = make_params()
    weights = FeatureWeights(4)
    g = make_graph([(1, 0, 0, 2000, 2000)], num_entities=2, num_base_relations=2)
    # candidate 1 has relation 0 toward the subject
    ev = collect_evidence(g, subject=0, candidate=1, query_start=2001.0)
    params.rec_p[0, 0] = 1.0
    tables = build_tables(ev, params, query_relation=0, query_start=2001.0)
    assert tables.rec_x[0] == 1 and tables.rec_h[0] == 1.0
    # w=1, b=0 by default
    assert recurrence_score(weights, tables, 0) == pytest.approx(1.0)

    params.rec_p[0, 0] = 0.3
    t2 = build_tables(ev, params, query_relation=0, query_start=2001.0)
    assert t2.rec_h[0] == pytest.approx(0.3)
    # absent case: query relation 1 is not among the direct relations
    params.rec_p[0, 1] = 0.3
    t3 = build_tables(ev, params, query_relation=1, query_start=2001.0)
    assert t3.rec_h[0] == pytest.approx(0.7)
    params.rec_p[0, 1] = 0.5
    t4 = build_tables(ev, params, query_relation=1, query_start=2001.0)
    assert t4.rec_h[0] == pytest.approx(0.5)
    with pytest.raises(ContractViolation):
        recurrence_score(weights, t4, 2)


def test_order_score_single_relation():
    params = make_params(R=6)
    weights = FeatureWeights(6)
    g = person_fixture()
    ev = collect_evidence(g, subject=0, candidate=1, query_start=1872.0,
                          exclude_edge_ids={int(g.edge_ids[0])})
    params.order_p[1, 3, 1] = 0.8  # query relation born^-1 (id 3) vs graduation
    params.order_p[1, 3, 2] = 0.8  # vs death
    tables = build_tables(ev, params, query_relation=3, query_start=1872.0)
    # 1872 precedes both starts, so each h is 0.8; uniform blend keeps 0.8
    assert order_score(weights, tables, 1) == pytest.approx(0.8)
    # part 3 has no walks: neutral zero
    assert order_score(weights, tables, 2) == 0.0
    assert gap_score(weights, tables, 2) == 0.0


def test_gap_score_uses_fitted_densities():
    params = make_params(R=6)
    weights = FeatureWeights(6)
    g = person_fixture()
    ev = collect_evidence(g, subject=0, candidate=1, query_start=1872.0,
                          exclude_edge_ids={int(g.edge_ids[0])})
    params.pair_kind[1, 3, 1] = GAP_GAUSSIAN
    params.pair_mu[1, 3, 1] = 22.0
    params.pair_sigma[1, 3, 1] = 1.0
    params.pair_kind[1, 3, 2] = GAP_GAUSSIAN
    params.pair_mu[1, 3, 2] = 70.0
    params.pair_sigma[1, 3, 2] = 6.0
    tables = build_tables(ev, params, query_relation=3, query_start=1872.0)
    by_rel = dict(zip(tables.rels[1], tables.pair_h[1]))
    assert by_rel[1] == pytest.approx(7.65e-137, rel=0.01)
    assert by_rel[2] == pytest.approx(1.39e-13, rel=0.01)
    # uniform blend of the two densities
    assert gap_score(weights, tables, 1) == pytest.approx((by_rel[1] + by_rel[2]) / 2)


def inverse_softplus(y):
    return math.log(math.expm1(y))


def test_feature_score_combines_parts_with_softplus_weights():
    params = make_params(R=4)
    weights = FeatureWeights(4)
    g = make_graph([(1, 0, 0, 2000, 2000), (1, 1, 2, 2003, 2003)],
                   num_entities=3, num_base_relations=2)
    ev = collect_evidence(g, subject=0, candidate=1, query_start=2001.0)
    tables = build_tables(ev, params, query_relation=0, query_start=2001.0)
    parts = [part_score(weights, tables, k) for k in range(3)]
    for gammas in [(1.0, 2.0, 3.0), (0.5, 0.5, 0.5)]:
        weights.store.tensors["part_raw"] = np.array(
            [inverse_softplus(x) for x in gammas]
        )
        want = sum(gamma * p for gamma, p in zip(gammas, parts))
        assert feature_score(weights, tables) == pytest.approx(want)
    # driving the raw weights far negative turns the feature score off
    weights.store.tensors["part_raw"] = np.full(3, -80.0)
    assert feature_score(weights, tables) == pytest.approx(0.0, abs=1e-30)


def test_feature_score_node_matches_numpy_path():
    rng = np.random.default_rng(5)
    params = make_params(R=6)
    params.order_p[:] = rng.random((3, 6, 6))
    params.pair_kind[:] = GAP_GAUSSIAN
    params.pair_mu[:] = rng.normal(10, 3, (3, 6, 6))
    params.pair_sigma[:] = 0.5 + rng.random((3, 6, 6))
    params.rec_p[:] = rng.random((2, 6))
    weights = FeatureWeights(6)
    for name, tensor in weights.store.tensors.items():
        weights.store.tensors[name] = tensor + rng.normal(0, 0.3, tensor.shape)
    g = person_fixture()
    ev = collect_evidence(g, subject=0, candidate=1, query_start=1872.0)
    tables = build_tables(ev, params, query_relation=3, query_start=1872.0)
    node = feature_score_node(weights.store.leaves(), tables)
    # the tape path folds in the part weights; compare against numpy total
    assert float(node.value) == pytest.approx(feature_score(weights, tables))


def test_feature_score_node_gradients_match_finite_differences():
    from oracles import numeric_gradient

    params = make_params(R=4)
    params.rec_p[:] = 0.3
    weights = FeatureWeights(4)
    g = make_graph([(1, 0, 0, 2000, 2000), (1, 1, 2, 2003, 2003)],
                   num_entities=3, num_base_relations=2)
    ev = collect_evidence(g, subject=0, candidate=1, query_start=2001.0)
    tables = build_tables(ev, params, query_relation=0, query_start=2001.0)

    leaves = weights.store.leaves()
    out = feature_score_node(leaves, tables)
    ad.backward(out)
    for name in ("rec_w_1", "order_w_1", "pair_b_2", "mix_1", "part_raw"):

        def f(x, name=name):
            w2 = weights.copy()
            w2.store.tensors[name] = x
            return float(feature_score_node(w2.store.leaves(), tables).value)

        numeric = numeric_gradient(f, weights.store.tensors[name].copy())
        got = leaves[name].grad
        if got is None:
            got = np.zeros_like(numeric)
        assert np.allclose(got, numeric, atol=1e-6), name


# ---------------------------------------------------------------------------
# distribution fitting over a graph


def gap_fixture(n=60, seed=0):
    """People born in a city who graduate ~22 years later."""
    rng = np.random.default_rng(seed)
    rows = []
    city, school = 0, 1
    for i in range(n):
        person = 2 + i
        birth = int(rng.integers(1850, 1950))
        gap = int(round(rng.normal(22, 1)))
        rows.append((person, 0, city, birth, birth))  # born
        rows.append((person, 1, school, birth + gap, birth + gap))  # graduated
    return make_graph(rows, num_entities=2 + n, num_base_relations=2)


def test_fit_recovers_birth_graduation_gap():
    g = gap_fixture()
    params = fit_distributions(g)
    born_inv = 2  # base relations: born 0, graduated 1
    grad = 1
    assert params.pair_kind[1, born_inv, grad] == GAP_GAUSSIAN
    assert params.pair_mu[1, born_inv, grad] == pytest.approx(22, abs=0.5)
    assert params.pair_sigma[1, born_inv, grad] == pytest.approx(1, abs=0.5)
    # the query start always precedes graduation
    assert params.order_p[1, born_inv, grad] == pytest.approx(1.0)


def test_fit_marks_never_recurring_relations_zero():
    g = gap_fixture(n=20)
    params = fit_distributions(g)
    # a person is born in one city once: recurrence of born^-1 on the person
    assert params.rec_n[1, 2] > 0
    assert params.rec_p[1, 2] == 0.0


def test_fit_falls_back_on_sparse_pairs():
    g = make_graph([(0, 0, 1, 2000, 2000)], num_entities=2, num_base_relations=1)
    params = fit_distributions(g)
    assert params.is_fallback_pair(0, 0, 0)
    assert params.pair_sigma[0, 0, 0] == 100.0
    assert params.order_p[0, 0, 0] == 0.5


def test_fit_uses_walk_evidence_for_part_three():
    g = gap_fixture(n=30)
    walks = {}
    for f in range(g.num_facts):
        if g.relations[f] == 2:  # born^-1 examples: city -> person
            person = int(g.objects[f])
            grad_facts = g.facts_from_with(person, 1)
            if len(grad_facts):
                walks[f] = [(int(grad_facts[0]),)]
    params = fit_distributions(g, walks_by_example=walks)
    assert params.pair_n[2, 2, 1] >= 2
    assert params.pair_mu[2, 2, 1] == pytest.approx(22, abs=0.8)


def test_distribution_params_round_trip(tmp_path):
    g = gap_fixture(n=25)
    params = fit_distributions(g)
    path = tmp_path / "dist.npz"
    params.save(path)
    back = DistributionParams.load(path)
    assert np.array_equal(params.rec_p, back.rec_p)
    assert np.array_equal(params.pair_mu, back.pair_mu)
    assert np.array_equal(params.pair_kind, back.pair_kind)
    assert back.duration.global_mu == params.duration.global_mu
    assert params.to_json_summary() == back.to_json_summary()


def test_feature_weights_round_trip_and_simplexes(tmp_path):
    w = FeatureWeights(5)
    rng = np.random.default_rng(8)
    for name, tensor in w.store.tensors.items():
        w.store.tensors[name] = tensor + rng.normal(0, 1, tensor.shape)
    for part in range(3):
        mix = w.mix(part)
        assert mix.sum() == pytest.approx(1.0)
        assert (mix >= 0).all()
    assert (w.part_weights() >= 0).all()
    assert (w.top_weights() >= 0).all()
    path = tmp_path / "w.npz"
    w.save(path)
    back = FeatureWeights.load(path)
    for name, tensor in w.store.tensors.items():
        assert np.array_equal(tensor, back.store.tensors[name])

"""Scikit-learn style estimator wrapping the full learn/rank pipeline.

``fit`` takes training facts, discovers rule templates from per-example
path searches, trains the attention system (phase 1), fits the temporal
feature distributions, and trains the feature integration weights with
attention frozen (phase 2).  ``predict`` / ``predict_ranking`` answer
queries with ranked candidates; ``score`` reports MRR.  Subject prediction
uses the inverse relation and the same learned parameters throughout.
"""

from __future__ import annotations

import json
import multiprocessing
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import as_fact_list, as_query_rows, check_positive
from .attention import AttentionParams, forward_attention, score_rules
from .datasets import DatasetSplit
from .errors import ContractViolation
from .features import (
    DistributionParams,
    FeatureWeights,
    build_tables,
    collect_evidence,
    feature_score,
    fit_distributions,
    fit_duration_model,
)
from .graph import TemporalGraph, build_graph
from .ranking import (
    KnownFactIndex,
    Query,
    RankedAnswer,
    apply_rules,
    combine_scores,
    explain_candidate,
    logic_scores,
    metrics,
    rank_of_truth,
    ranked_candidates,
    time_aware_filter,
)
from .training import (
    PreparedFeatureExample,
    TrainConfig,
    prepare_examples,
    train_phase1,
    train_phase2,
)
from .walks import RuleSet, extract_rule, find_all_paths

# Fork-inherited state for worker pools; set immediately before mapping.
_POOL_STATE: dict = {}


def _discover_one(fact_index: int):
    graph = _POOL_STATE["graph"]
    f = int(fact_index)
    walks = find_all_paths(
        graph,
        int(graph.subjects[f]),
        int(graph.objects[f]),
        _POOL_STATE["max_len"],
        exclude_edge_ids={int(graph.edge_ids[f])},
        cap=_POOL_STATE["cap"],
    )
    return f, walks.walks, walks.truncated


def _answer_one(item):
    est = _POOL_STATE["estimator"]
    query, truth = item
    return est._answer(
        query,
        truth,
        known_index=_POOL_STATE["known_index"],
        explanations=_POOL_STATE["explanations"],
        weights_override=_POOL_STATE["weights_override"],
        entity_names=_POOL_STATE.get("entity_names"),
        relation_names=_POOL_STATE.get("relation_names"),
    )


def _parallel_map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(workers) as pool:
        return pool.map(fn, items, chunksize=max(1, len(items) // (workers * 4)))


class TemporalRuleRanker(BaseEstimator):
    """Link-prediction ranker driven by learned temporal logical rules.

    Parameters mirror the training pipeline: rule discovery depth, the
    attention model size, phase-1/phase-2 optimization settings, and caps
    that bound walk enumeration on dense graphs.  All randomness derives
    from ``random_state``.
    """

    def __init__(
        self,
        max_rule_length=5,
        embed_dim=32,
        cell="gated",
        epochs=30,
        lr=1e-2,
        lr_decay=0.95,
        batch_size=32,
        optimizer="adam",
        feature_epochs=10,
        feature_lr=1e-2,
        use_feature_model=True,
        feature_candidates="neighbors",
        max_paths_per_example=None,
        max_walks_per_rule=None,
        max_examples=None,
        keep_groundings=5,
        workers=1,
        random_state=0,
    ):
        self.max_rule_length = max_rule_length
        self.embed_dim = embed_dim
        self.cell = cell
        self.epochs = epochs
        self.lr = lr
        self.lr_decay = lr_decay
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.feature_epochs = feature_epochs
        self.feature_lr = feature_lr
        self.use_feature_model = use_feature_model
        self.feature_candidates = feature_candidates
        self.max_paths_per_example = max_paths_per_example
        self.max_walks_per_rule = max_walks_per_rule
        self.max_examples = max_examples
        self.keep_groundings = keep_groundings
        self.workers = workers
        self.random_state = random_state

    # ------------------------------------------------------------------
    # fitting

    def _coerce_graph(self, X) -> TemporalGraph:
        if isinstance(X, TemporalGraph):
            graph = X
        elif isinstance(X, DatasetSplit):
            graph = X.build_train_graph()
        else:
            facts = as_fact_list(X)
            graph = build_graph(facts)
        if not graph.is_resolved:
            duration = fit_duration_model(graph)
            graph = graph.resolve(duration_model=duration, seed=self.random_state)
        return graph

    def fit(self, X, y=None):
        check_positive(self.max_rule_length, "max_rule_length")
        check_positive(self.embed_dim, "embed_dim")
        graph = self._coerce_graph(X)
        self.graph_ = graph
        self.duration_model_ = fit_duration_model(graph)

        examples = np.arange(graph.num_facts)
        if self.max_examples is not None and len(examples) > self.max_examples:
            rng = np.random.default_rng(self.random_state)
            examples = np.sort(rng.choice(examples, self.max_examples, replace=False))

        # rule discovery: unconstrained path search per positive example
        _POOL_STATE.update(
            graph=graph, max_len=self.max_rule_length, cap=self.max_paths_per_example
        )
        discovered = _parallel_map(_discover_one, examples, self.workers)
        rules = RuleSet()
        walks_by_example: dict[int, list] = {}
        truncated_examples = 0
        for f, walks, truncated in discovered:
            truncated_examples += bool(truncated)
            walks_by_example[f] = walks
            head = int(graph.relations[f])
            interval = (float(graph.resolved_starts[f]), float(graph.resolved_ends[f]))
            for w in walks:
                rules.add(extract_rule(graph, w, head, interval))
        self.rules_ = rules

        prepared, skipped = prepare_examples(
            graph,
            examples,
            rules,
            max_walks_per_rule=self.max_walks_per_rule,
            keep_groundings=self.keep_groundings if self.use_feature_model else 0,
        )
        config = TrainConfig(
            epochs=self.epochs,
            lr=self.lr,
            lr_decay=self.lr_decay,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            seed=self.random_state,
        )
        self.attention_params_ = AttentionParams.init(
            graph.num_relations,
            self.max_rule_length,
            self.embed_dim,
            cell=self.cell,
            seed=self.random_state,
        )
        phase1 = train_phase1(self.attention_params_, prepared, rules, config)
        self._refresh_rule_scores()

        self.distribution_params_ = fit_distributions(
            graph,
            duration=self.duration_model_,
            walks_by_example=walks_by_example,
            example_indices=examples,
        )

        self.feature_weights_ = FeatureWeights(graph.num_relations)
        phase2_trace: list[float] = []
        if self.use_feature_model and prepared:
            feature_prepared = self._prepare_feature_examples(prepared)
            feature_config = TrainConfig(
                epochs=self.feature_epochs,
                lr=self.feature_lr,
                lr_decay=self.lr_decay,
                batch_size=self.batch_size,
                optimizer=self.optimizer,
                seed=self.random_state,
            )
            phase2 = train_phase2(self.feature_weights_, feature_prepared, feature_config)
            phase2_trace = phase2.trace

        self.fit_report_ = {
            "num_examples": int(len(examples)),
            "num_rules": len(rules),
            "skipped_examples": int(skipped),
            "truncated_discoveries": int(truncated_examples),
            "phase1_trace": phase1.trace,
            "phase2_trace": phase2_trace,
        }
        return self

    def _refresh_rule_scores(self):
        self.rule_scores_ = {}
        for head in self.rules_.heads():
            bundle = forward_attention(self.attention_params_, head)
            self.rule_scores_[head] = score_rules(
                bundle, self.rules_.rules_for(head)
            ).value

    def _prepare_feature_examples(self, prepared):
        graph = self.graph_
        out = []
        for ex in prepared:
            f = ex.fact_index
            subject = int(graph.subjects[f])
            q_start = float(graph.resolved_starts[f])
            exclude = {int(graph.edge_ids[f])}
            logic = ex.rates @ self.rule_scores_[ex.predicate]
            tables = []
            for c in ex.candidates:
                ev = collect_evidence(
                    graph,
                    subject,
                    int(c),
                    q_start,
                    walks=ex.walks_by_candidate.get(int(c)),
                    exclude_edge_ids=exclude,
                )
                tables.append(
                    build_tables(ev, self.distribution_params_, ex.predicate, q_start)
                )
            out.append(
                PreparedFeatureExample(logic=logic, tables=tables, truth_row=ex.truth_row)
            )
        return out

    # ------------------------------------------------------------------
    # inference

    def _check_fitted(self):
        if not hasattr(self, "graph_"):
            raise ContractViolation("estimator is not fitted")

    def _resolve_query_interval(self, relation, start, end):
        """Make a query interval concrete, imputing missing endpoints.

        ``present`` ends resolve to the dataset's max year; a single
        missing endpoint is filled with a drawn duration (deterministic
        per relation under the estimator seed); a fully unknown interval
        spans the whole dataset range.
        """
        meta = self.graph_.resolution_meta
        max_year = float(meta.get("max_year", 0.0))
        min_year = float(meta.get("min_year", 0.0))
        start, end = float(start), float(end)
        if np.isinf(end):
            end = max_year
        if np.isnan(start) and np.isnan(end):
            return min_year, max_year
        if np.isnan(start) or np.isnan(end):
            rng = np.random.default_rng((int(self.random_state), int(relation)))
            d = round(self.duration_model_.sample(int(relation), rng))
            if np.isnan(end):
                end = start + d
            else:
                start = end - d
        if end < start:
            end = start
        return float(start), float(end)

    def _candidate_scores(self, query: Query, weights_override=None):
        """Score candidates for one query; returns (scores, applications)."""
        graph = self.graph_
        rule_list = self.rules_.rules_for(query.relation)
        apps = []
        logic: dict[int, float] = {}
        if rule_list:
            apps = apply_rules(
                graph,
                query,
                rule_list,
                cap=self.max_walks_per_rule,
                keep_groundings=self.keep_groundings,
            )
            logic = logic_scores(apps, self.rule_scores_[query.relation])

        if weights_override is not None:
            w_logic, w_feature = weights_override
        elif self.use_feature_model:
            w_logic, w_feature = self.feature_weights_.top_weights()
        else:
            w_logic, w_feature = 1.0, 0.0

        feature: dict[int, float] = {}
        if w_feature != 0.0:
            candidates = set(logic)
            if self.feature_candidates == "neighbors":
                candidates |= {int(o) for o in graph.objects[graph.facts_from(query.subject)]}
            elif self.feature_candidates == "all":
                candidates |= set(range(graph.num_entities))
            walks_by_cand: dict[int, list] = {}
            for app in apps:
                for c, ws in app.groundings.items():
                    walks_by_cand.setdefault(c, []).extend(ws)
            for c in candidates:
                ev = collect_evidence(
                    graph, query.subject, c, query.interval[0], walks=walks_by_cand.get(c)
                )
                tables = build_tables(
                    ev, self.distribution_params_, query.relation, query.interval[0]
                )
                feature[c] = feature_score(self.feature_weights_, tables)
        return combine_scores(logic, feature, w_logic, w_feature), apps

    def _answer(
        self,
        query: Query,
        truth,
        known_index=None,
        explanations=False,
        weights_override=None,
        entity_names=None,
        relation_names=None,
    ) -> RankedAnswer:
        scores, apps = self._candidate_scores(query, weights_override=weights_override)
        excluded = set()
        if known_index is not None:
            kept = time_aware_filter(known_index, query, list(scores), truth)
            excluded = set(scores) - set(kept)
        rank = rank_of_truth(scores, truth, self.graph_.num_entities, excluded)
        answer = RankedAnswer(
            query=query,
            truth=truth,
            candidates=ranked_candidates(scores, excluded),
            truth_rank=rank,
        )
        if explanations and apps:
            rel_scores = self.rule_scores_.get(query.relation)
            for c, _ in answer.candidates[:3]:
                answer.explanations.append(
                    {
                        "candidate": int(c),
                        "rules": explain_candidate(
                            self.graph_,
                            apps,
                            rel_scores,
                            int(c),
                            top_k=3,
                            relation_names=relation_names,
                            entity_names=entity_names,
                        ),
                    }
                )
        return answer

    def queries_from_facts(self, facts, both_directions=True):
        """Expand facts into (query, truth) pairs for evaluation."""
        graph = self.graph_
        pairs = []
        for f in as_fact_list(facts):
            s, e = f.interval.as_floats()
            interval = self._resolve_query_interval(f.relation, s, e)
            pairs.append((Query(f.subject, f.relation, interval), f.object))
            if both_directions:
                inv = graph.inverse_relation(f.relation)
                pairs.append((Query(f.object, inv, interval), f.subject))
        return pairs

    def evaluate(
        self,
        facts,
        known_graph: TemporalGraph | None = None,
        both_directions=True,
        explanations=False,
        weights_override=None,
        entity_names=None,
        relation_names=None,
    ):
        """Rank the answers of held-out facts; returns (metrics, answers).

        ``known_graph`` (typically all three splits) enables time-aware
        filtering of candidates that restate known overlapping facts.
        Vocabulary name lists make explanations human-readable.
        """
        self._check_fitted()
        known_index = KnownFactIndex(known_graph) if known_graph is not None else None
        pairs = self.queries_from_facts(facts, both_directions)
        _POOL_STATE.update(
            estimator=self,
            known_index=known_index,
            explanations=explanations,
            weights_override=weights_override,
            entity_names=entity_names,
            relation_names=relation_names,
        )
        answers = _parallel_map(_answer_one, pairs, self.workers)
        report = metrics([a.truth_rank for a in answers])
        return report, answers

    def predict_ranking(self, X, weights_override=None):
        """Ranked (entity, score) candidates for each query row."""
        self._check_fitted()
        out = []
        for subject, relation, start, end in as_query_rows(X):
            interval = self._resolve_query_interval(relation, start, end)
            scores, _ = self._candidate_scores(
                Query(int(subject), int(relation), interval),
                weights_override=weights_override,
            )
            out.append(ranked_candidates(scores))
        return out

    def predict(self, X):
        """Top-ranked entity per query row (-1 when nothing scores)."""
        rankings = self.predict_ranking(X)
        return np.array([r[0][0] if r else -1 for r in rankings], dtype=np.int64)

    def score(self, X, y):
        """Mean reciprocal rank of the true answers for query rows X."""
        self._check_fitted()
        y = np.asarray(y, dtype=np.int64)
        ranks = []
        for (subject, relation, start, end), truth in zip(as_query_rows(X), y):
            interval = self._resolve_query_interval(relation, start, end)
            scores, _ = self._candidate_scores(Query(int(subject), int(relation), interval))
            ranks.append(rank_of_truth(scores, int(truth), self.graph_.num_entities))
        return metrics(ranks)["mrr"]

    # ------------------------------------------------------------------
    # persistence

    def save(self, directory):
        self._check_fitted()
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "hyperparams.json").write_text(json.dumps(self.get_params(), default=str))
        self.graph_.save(d / "graph.npz")
        self.rules_.save_jsonl(d / "rules.jsonl")
        self.attention_params_.save(d / "attention.npz")
        self.feature_weights_.save(d / "feature_weights.npz")
        self.distribution_params_.save(d / "distributions.npz")
        (d / "fit_report.json").write_text(json.dumps(self.fit_report_))

    @classmethod
    def load(cls, directory) -> "TemporalRuleRanker":
        d = Path(directory)
        params = json.loads((d / "hyperparams.json").read_text())
        for key in ("max_paths_per_example", "max_walks_per_rule", "max_examples"):
            if params.get(key) in ("None", None):
                params[key] = None
            else:
                params[key] = int(params[key])
        est = cls(**{k: v for k, v in params.items()})
        est.graph_ = TemporalGraph.load(d / "graph.npz")
        est.rules_ = RuleSet.load_jsonl(d / "rules.jsonl")
        est.attention_params_ = AttentionParams.load(d / "attention.npz")
        est.feature_weights_ = FeatureWeights.load(d / "feature_weights.npz")
        est.distribution_params_ = DistributionParams.load(d / "distributions.npz")
        est.duration_model_ = est.distribution_params_.duration
        est.fit_report_ = json.loads((d / "fit_report.json").read_text())
        est._refresh_rule_scores()
        return est

"""Rule application, candidate scoring, time-aware ranking, and metrics.

A query ``(subject, relation, ?, interval)`` is answered by applying every
learned rule of the target predicate: each rule's constrained walks are
enumerated, the fraction arriving at each endpoint (the arriving rate) is
weighted by the rule's confidence, and the per-candidate sums form the
logic score.  The feature model contributes a second score; a non-negative
weighted sum of the two ranks the candidates.  Subject prediction reuses
the same machinery with the inverse relation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .graph import TemporalGraph
from .intervals import Interval, TRClass
from .walks import QueryContext, RuleTemplate, enumerate_walks, filter_pairwise, walk_entities


@dataclass(frozen=True)
class Query:
    """A link-prediction query with a resolved interval."""

    subject: int
    relation: int
    interval: tuple[float, float]


@dataclass
class RuleApplication:
    """Walk tally of one rule against one query."""

    rule_index: int
    rule: RuleTemplate
    total: int
    counts: dict
    groundings: dict = field(default_factory=dict)
    truncated: bool = False

    @property
    def rates(self) -> dict:
        return {c: n / self.total for c, n in self.counts.items()}


def apply_rules(
    graph: TemporalGraph,
    query: Query,
    rules,
    cap=None,
    exclude_edge_ids=frozenset(),
    keep_groundings: int = 0,
) -> list[RuleApplication]:
    """Enumerate and tally each rule's constrained walks from the subject.

    Rules that produce no walk contribute nothing and are omitted.  Up to
    ``keep_groundings`` example walks per candidate are retained for
    explanations.
    """
    ctx = QueryContext(graph, query.interval)
    out = []
    for index, rule in enumerate(rules):
        if rule.head != query.relation:
            raise ContractViolation(
                f"rule head {rule.head} does not match query relation {query.relation}"
            )
        operators = ctx.operators_for(rule)
        walk_set = enumerate_walks(
            graph,
            operators,
            query.subject,
            cap=cap,
            exclude_edge_ids=exclude_edge_ids,
        )
        walks = filter_pairwise(graph, walk_set.walks, rule.pairwise_map())
        if not walks:
            continue
        counts: dict[int, int] = {}
        groundings: dict[int, list] = {}
        for w in walks:
            end = int(graph.objects[w[-1]])
            counts[end] = counts.get(end, 0) + 1
            if keep_groundings and len(groundings.setdefault(end, [])) < keep_groundings:
                groundings[end].append(w)
        out.append(
            RuleApplication(
                rule_index=index,
                rule=rule,
                total=len(walks),
                counts=counts,
                groundings=groundings,
                truncated=walk_set.truncated,
            )
        )
    return out


def logic_scores(applications, rule_scores: np.ndarray) -> dict:
    """Per-candidate sum of arriving rate x rule confidence."""
    scores: dict[int, float] = {}
    for app in applications:
        s = float(rule_scores[app.rule_index])
        for c, rate in app.rates.items():
            scores[c] = scores.get(c, 0.0) + rate * s
    return scores


def combine_scores(logic: dict, feature: dict, weight_logic: float, weight_feature: float) -> dict:
    """Weighted sum of the two score maps (missing entries count as 0)."""
    out = {}
    for c in set(logic) | set(feature):
        out[c] = weight_logic * logic.get(c, 0.0) + weight_feature * feature.get(c, 0.0)
    return out


# ---------------------------------------------------------------------------
# time-aware filtering


class KnownFactIndex:
    """Interval-aware lookup of known facts across all splits.

    Built from the full (train+valid+test) graph so evaluation can drop
    candidates that would merely restate a known fact overlapping the
    query interval.  Inverse edges are included, which makes subject
    queries symmetric.
    """

    def __init__(self, graph: TemporalGraph):
        graph._require_resolved()
        self._objs: dict[tuple[int, int], np.ndarray] = {}
        self._starts: dict[tuple[int, int], np.ndarray] = {}
        self._ends: dict[tuple[int, int], np.ndarray] = {}
        for (s, r), idx in graph.by_subject_relation.items():
            self._objs[(s, r)] = graph.objects[idx].astype(np.int64)
            self._starts[(s, r)] = graph.resolved_starts[idx]
            self._ends[(s, r)] = graph.resolved_ends[idx]

    def overlapping_objects(self, query: Query) -> set:
        key = (query.subject, query.relation)
        if key not in self._objs:
            return set()
        q_s, q_e = query.interval
        starts = self._starts[key]
        ends = self._ends[key]
        touching = ~((ends < q_s) | (starts > q_e))
        return set(int(o) for o in self._objs[key][touching])


def time_aware_filter(index: KnownFactIndex, query: Query, candidates, truth) -> list:
    """Drop candidates already known to hold during the query interval.

    The ground truth always survives.  Returns the kept candidates in the
    input order.
    """
    conflicting = index.overlapping_objects(query)
    conflicting.discard(truth)
    return [c for c in candidates if c not in conflicting]


# ---------------------------------------------------------------------------
# ranking and metrics


def rank_of_truth(scores: dict, truth, num_entities: int, excluded=frozenset()) -> float:
    """Rank of the truth with mean-rank ties among scored candidates.

    Entities without a score sit below every scored candidate, ordered by
    entity id; ``excluded`` entities (filtered out) leave the ranking
    entirely and never contain the truth.
    """
    if truth in excluded:
        raise ContractViolation("the ground truth must never be filtered out")
    if truth in scores:
        s_t = scores[truth]
        greater = sum(1 for c, s in scores.items() if s > s_t and c not in excluded)
        tied = sum(1 for c, s in scores.items() if s == s_t and c not in excluded)
        return greater + (tied + 1) / 2.0
    n_scored = sum(1 for c in scores if c not in excluded)
    below = sum(1 for c in scores if c < truth and c not in excluded)
    excluded_below = sum(1 for c in excluded if c < truth and c not in scores)
    return n_scored + 1 + (truth - below - excluded_below)


def ranked_candidates(scores: dict, excluded=frozenset()):
    """Scored candidates in rank order (score desc, entity id asc)."""
    items = [(c, s) for c, s in scores.items() if c not in excluded]
    items.sort(key=lambda cs: (-cs[1], cs[0]))
    return items


def metrics(ranks) -> dict:
    """MRR and hit@k over truth ranks (possibly fractional from ties)."""
    ranks = np.asarray(list(ranks), dtype=np.float64)
    if len(ranks) == 0:
        return {"mrr": 0.0, "hit1": 0.0, "hit10": 0.0, "count": 0}
    return {
        "mrr": float((1.0 / ranks).mean()),
        "hit1": float((ranks <= 1).mean()),
        "hit10": float((ranks <= 10).mean()),
        "count": int(len(ranks)),
    }


# ---------------------------------------------------------------------------
# explanations


def rule_to_text(rule: RuleTemplate, relation_names=None) -> str:
    """Readable chain-rule rendering with explicit TR atoms."""

    def rel(r):
        return relation_names[r] if relation_names else f"r{r}"

    l = rule.length
    head = f"{rel(rule.head)}(E1,E{l + 1},I{l + 1})"
    body = [
        f"{rel(p)}(E{i + 1},E{i + 2},I{i + 1})" for i, p in enumerate(rule.predicates)
    ]
    from .walks import pair_keys

    trs = []
    for (j, k), t in zip(pair_keys(l), rule.tr_pairs):
        trs.append(f"{TRClass(t).label()}(I{j},I{k})")
    for i, t in enumerate(rule.tr_query):
        trs.append(f"{TRClass(t).label()}(I{i + 1},I{l + 1})")
    return head + " <- " + " ^ ".join(body + trs)


def grounding_to_text(graph: TemporalGraph, walk, entity_names=None) -> str:
    def ent(e):
        return entity_names[e] if entity_names else f"e{e}"

    ents = walk_entities(graph, walk)
    parts = [f"E{i + 1}={ent(e)}" for i, e in enumerate(ents)]
    for i, f in enumerate(walk):
        iv = Interval.from_floats(graph.resolved_starts[f], graph.resolved_ends[f])
        parts.append(f"I{i + 1}={iv}")
    return ", ".join(parts)


def explain_candidate(
    graph: TemporalGraph,
    applications,
    rule_scores: np.ndarray,
    candidate: int,
    top_k: int = 3,
    relation_names=None,
    entity_names=None,
) -> list[dict]:
    """Top contributing rules for one candidate, each with one grounding."""
    rows = []
    for app in applications:
        if candidate not in app.counts:
            continue
        contribution = app.rates[candidate] * float(rule_scores[app.rule_index])
        grounding = app.groundings.get(candidate, [None])[0] if app.groundings else None
        rows.append((contribution, app, grounding))
    rows.sort(key=lambda row: -row[0])
    out = []
    for contribution, app, grounding in rows[:top_k]:
        entry = {
            "rule": rule_to_text(app.rule, relation_names),
            "contribution": contribution,
            "arriving_rate": app.rates[candidate],
            "rule_score": float(rule_scores[app.rule_index]),
        }
        if grounding is not None:
            entry["grounding"] = grounding_to_text(graph, grounding, entity_names)
        out.append(entry)
    return out


@dataclass
class RankedAnswer:
    """One evaluated query: ordered candidates, truth rank, explanations."""

    query: Query
    truth: int
    candidates: list  # (entity, score) in rank order
    truth_rank: float
    explanations: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {
                "query": {
                    "subject": self.query.subject,
                    "relation": self.query.relation,
                    "interval": list(self.query.interval),
                },
                "truth": self.truth,
                "truth_rank": self.truth_rank,
                "candidates": [
                    {"entity": int(c), "score": float(s), "rank": i + 1}
                    for i, (c, s) in enumerate(self.candidates)
                ],
                "explanations": self.explanations,
            }
        )

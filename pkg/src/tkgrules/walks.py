"""Constrained walk enumeration over a temporal graph.

A rule of length ``l`` constrains a walk two ways.  Per-step (Markovian)
constraints - the step's predicate and its temporal relation to the query
interval - compile into sparse 0/1 step operators; multiplying an indicator
vector through the operator chain marks exactly the entities reachable
under them.  Pairwise (non-Markovian) constraints between body intervals
need the concrete walk, so reachable endpoints are backtracked into explicit
edge sequences first and filtered afterwards.  Walks never reuse an edge;
an edge and its synthetic inverse share an id and count as one edge.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ContractViolation
from .graph import TemporalGraph
from .intervals import TRClass, classify_many

# Indicator counts are clipped here each step; positivity is what matters
# and unclipped path counts can overflow on dense graphs.
_COUNT_CAP = np.int64(2) ** 40

Walk = tuple[int, ...]  # fact indices into the graph's arrays


@dataclass(frozen=True)
class StepConstraint:
    """Per-step constraint: body predicate and its TR to the query interval."""

    predicate: int
    tr_to_query: TRClass


class StepOperator:
    """Sparse 0/1 reachability operator for one constrained step.

    ``matrix[x, y] == 1`` iff some fact from entity y to entity x has the
    step's predicate and the required temporal relation to the query
    interval (entries clamped to 1).  ``fact_indices`` lists the matching
    facts, grouped by source entity for backtracking.
    """

    def __init__(self, matrix: sp.csr_matrix, fact_indices: np.ndarray, graph: TemporalGraph):
        self.matrix = matrix
        self.fact_indices = fact_indices
        self._graph = graph
        self._by_source: dict[int, np.ndarray] | None = None

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def facts_from(self, entity: int) -> np.ndarray:
        if self._by_source is None:
            subj = self._graph.subjects[self.fact_indices]
            order = np.argsort(subj, kind="stable")
            grouped = {}
            uniq, offsets = np.unique(subj[order], return_index=True)
            bounds = np.append(offsets, len(order))
            for k, ent in enumerate(uniq):
                grouped[int(ent)] = self.fact_indices[order[bounds[k] : bounds[k + 1]]]
            self._by_source = grouped
        return self._by_source.get(int(entity), _EMPTY)


_EMPTY = np.empty(0, dtype=np.int64)


def build_step_operator(
    graph: TemporalGraph,
    constraint: StepConstraint,
    query_interval: tuple[float, float],
    tr_codes: np.ndarray | None = None,
) -> StepOperator:
    """Compile one step's constraint into a :class:`StepOperator`.

    ``tr_codes`` may carry the precomputed TR class of every fact against
    the query interval (see :class:`QueryContext`); otherwise it is derived
    here from the graph's resolved intervals.
    """
    graph._require_resolved()
    if tr_codes is None:
        q_s, q_e = query_interval
        tr_codes = classify_many(graph.resolved_starts, graph.resolved_ends, q_s, q_e)
    mask = (graph.relations == constraint.predicate) & (
        tr_codes == int(constraint.tr_to_query)
    )
    fact_idx = np.flatnonzero(mask)
    n = graph.num_entities
    matrix = sp.csr_matrix(
        (
            np.ones(len(fact_idx), dtype=np.int64),
            (graph.objects[fact_idx], graph.subjects[fact_idx]),
        ),
        shape=(n, n),
    )
    matrix.sum_duplicates()
    matrix.data[:] = 1
    return StepOperator(matrix, fact_idx, graph)


class QueryContext:
    """Per-query cache of TR codes and step operators.

    Rules for one query share step constraints heavily; building each
    (predicate, TR) operator once amortizes the scan over the fact arrays.
    """

    def __init__(self, graph: TemporalGraph, query_interval: tuple[float, float]):
        graph._require_resolved()
        self.graph = graph
        self.query_interval = (float(query_interval[0]), float(query_interval[1]))
        self.tr_codes = classify_many(
            graph.resolved_starts,
            graph.resolved_ends,
            self.query_interval[0],
            self.query_interval[1],
        )
        self._operators: dict[tuple[int, int], StepOperator] = {}

    def operator(self, constraint: StepConstraint) -> StepOperator:
        key = (constraint.predicate, int(constraint.tr_to_query))
        op = self._operators.get(key)
        if op is None:
            op = build_step_operator(
                self.graph, constraint, self.query_interval, tr_codes=self.tr_codes
            )
            self._operators[key] = op
        return op

    def operators_for(self, rule: "RuleTemplate") -> list[StepOperator]:
        return [
            self.operator(StepConstraint(p, TRClass(t)))
            for p, t in zip(rule.predicates, rule.tr_query)
        ]


def propagate(operators, start: int, num_entities: int) -> list[np.ndarray]:
    """Walk an indicator vector through the operator chain.

    Returns the l+1 indicator vectors: position 0 is one-hot at ``start``,
    position i counts constraint-satisfying paths of length i ending at
    each entity (counts clipped, positivity exact).
    """
    if not operators:
        raise ContractViolation("propagate requires at least one operator")
    v = np.zeros(num_entities, dtype=np.int64)
    v[start] = 1
    out = [v]
    for op in operators:
        v = op.matrix.dot(v)
        np.minimum(v, _COUNT_CAP, out=v)
        out.append(v)
    return out


@dataclass
class WalkSet:
    """Enumeration result; ``truncated`` is set when a cap cut it short."""

    walks: list[Walk]
    truncated: bool = False

    def __len__(self):
        return len(self.walks)

    def __iter__(self):
        return iter(self.walks)


def enumerate_walks(
    graph: TemporalGraph,
    operators,
    start: int,
    target: int | None = None,
    cap: int | None = None,
    remove_repeated_edges: bool = True,
    exclude_edge_ids=frozenset(),
) -> WalkSet:
    """Enumerate every concrete walk satisfying the per-step constraints.

    Reachability is established by :func:`propagate`; concrete walks are
    reconstructed by depth-first backtracking over per-position alive sets
    (entities that both are reachable from the start and can still reach a
    valid endpoint), so dead branches are never expanded.  Walks reusing an
    edge id are dropped unless ``remove_repeated_edges`` is disabled, and
    edges in ``exclude_edge_ids`` (a query's own edge) are never used.
    Exhaustive unless ``cap`` is reached, which sets the truncated flag.
    """
    length = len(operators)
    exclude = frozenset(int(e) for e in exclude_edge_ids)
    vectors = propagate(operators, start, graph.num_entities)
    final = vectors[length] > 0
    if target is not None:
        keep = np.zeros_like(final)
        if final[target]:
            keep[target] = True
        final = keep
    if not final.any():
        return WalkSet([])

    alive = [None] * (length + 1)
    alive[length] = final
    for i in range(length - 1, 0, -1):
        back = operators[i].matrix.T.dot(alive[i + 1].astype(np.int64)) > 0
        alive[i] = (vectors[i] > 0) & back
    start_alive = np.zeros(graph.num_entities, dtype=bool)
    start_alive[start] = True
    alive[0] = start_alive

    objects = graph.objects
    edge_ids = graph.edge_ids
    walks: list[Walk] = []
    truncated = False
    used: set[int] = set()
    path: list[int] = []

    def dfs(pos: int, entity: int):
        nonlocal truncated
        if truncated:
            return
        if pos == length:
            if cap is not None and len(walks) >= cap:
                truncated = True
                return
            walks.append(tuple(path))
            return
        for fi in operators[pos].facts_from(entity):
            nxt = int(objects[fi])
            if not alive[pos + 1][nxt]:
                continue
            eid = int(edge_ids[fi])
            if eid in exclude:
                continue
            if remove_repeated_edges:
                if eid in used:
                    continue
                used.add(eid)
            path.append(int(fi))
            dfs(pos + 1, nxt)
            path.pop()
            if remove_repeated_edges:
                used.remove(eid)
            if truncated:
                return

    dfs(0, start)
    return WalkSet(walks, truncated)


def pair_keys(length: int) -> list[tuple[int, int]]:
    """Canonical (j, k) order, 1-based, for pairwise body-interval TRs."""
    return [(j, k) for j in range(1, length) for k in range(j + 1, length + 1)]


def filter_pairwise(graph: TemporalGraph, walks, pairwise_trs) -> list[Walk]:
    """Keep walks whose body intervals realize every required pairwise TR.

    ``pairwise_trs`` maps 1-based (j, k) with j < k <= l to a TRClass and
    must cover every such pair for each walk's length; a missing entry is a
    contract violation.  Length-1 walks have no pairs and pass vacuously.
    """
    graph._require_resolved()
    starts = graph.resolved_starts
    ends = graph.resolved_ends
    kept = []
    for walk in walks:
        length = len(walk)
        ok = True
        for j, k in pair_keys(length):
            if (j, k) not in pairwise_trs:
                raise ContractViolation(f"pairwise TR for {(j, k)} missing")
            want = int(pairwise_trs[(j, k)])
            fj, fk = walk[j - 1], walk[k - 1]
            if ends[fj] < starts[fk]:
                got = int(TRClass.BEFORE)
            elif starts[fj] > ends[fk]:
                got = int(TRClass.AFTER)
            else:
                got = int(TRClass.TOUCHING)
            if got != want:
                ok = False
                break
        if ok:
            kept.append(walk)
    return kept


def _adjacency(graph: TemporalGraph):
    cached = getattr(graph, "_walk_adjacency", None)
    if cached is None:
        n = graph.num_entities
        mat = sp.csr_matrix(
            (
                np.ones(graph.num_facts, dtype=np.int64),
                (graph.objects, graph.subjects),
            ),
            shape=(n, n),
        )
        mat.sum_duplicates()
        mat.data[:] = 1
        cached = (mat, mat.T.tocsr())
        graph._walk_adjacency = cached
    return cached


def find_all_paths(
    graph: TemporalGraph,
    source: int,
    target: int,
    max_len: int,
    exclude_edge_ids=frozenset(),
    cap: int | None = None,
) -> WalkSet:
    """All edge-distinct walks from source to target of length 1..max_len.

    This is the unconstrained discovery pass used when harvesting rules
    from positive examples: no predicate or TR filtering, only the
    repeated-edge rule and the exclusion set (the example's own edge).
    Entities may repeat; only edges may not.
    """
    adj, adj_t = _adjacency(graph)
    n = graph.num_entities
    forward = [None] * (max_len + 1)
    f = np.zeros(n, dtype=bool)
    f[source] = True
    forward[0] = f
    for i in range(1, max_len + 1):
        forward[i] = adj.dot(forward[i - 1].astype(np.int64)) > 0

    exclude = frozenset(int(e) for e in exclude_edge_ids)
    objects = graph.objects
    edge_ids = graph.edge_ids
    walks: list[Walk] = []
    truncated = False

    for length in range(1, max_len + 1):
        if truncated:
            break
        if not forward[length][target]:
            continue
        alive = [None] * (length + 1)
        tvec = np.zeros(n, dtype=bool)
        tvec[target] = True
        alive[length] = tvec
        dead = False
        for i in range(length - 1, -1, -1):
            alive[i] = forward[i] & (adj_t.dot(alive[i + 1].astype(np.int64)) > 0)
            if not alive[i].any():
                dead = True
                break
        if dead or not alive[0][source]:
            continue

        used: set[int] = set()
        path: list[int] = []

        def dfs(pos: int, entity: int):
            nonlocal truncated
            if truncated:
                return
            if pos == length:
                if entity == target:
                    if cap is not None and len(walks) >= cap:
                        truncated = True
                        return
                    walks.append(tuple(path))
                return
            for fi in graph.facts_from(entity):
                nxt = int(objects[fi])
                if not alive[pos + 1][nxt]:
                    continue
                eid = int(edge_ids[fi])
                if eid in exclude or eid in used:
                    continue
                used.add(eid)
                path.append(int(fi))
                dfs(pos + 1, nxt)
                path.pop()
                used.remove(eid)
                if truncated:
                    return

        dfs(0, source)
    return WalkSet(walks, truncated)


# ---------------------------------------------------------------------------
# rule templates


@dataclass(frozen=True)
class RuleTemplate:
    """A chain rule: body predicates plus the full pairwise TR matrix.

    ``tr_query[i]`` is the TR between body interval i+1 and the query
    interval; ``tr_pairs`` follows :func:`pair_keys` order.  Values are
    TRClass ints so templates stay hashable and compact.
    """

    head: int
    predicates: tuple[int, ...]
    tr_query: tuple[int, ...]
    tr_pairs: tuple[int, ...]

    def __post_init__(self):
        l = len(self.predicates)
        if len(self.tr_query) != l:
            raise ContractViolation("tr_query must have one entry per body step")
        if len(self.tr_pairs) != l * (l - 1) // 2:
            raise ContractViolation("tr_pairs must cover all body interval pairs")

    @property
    def length(self) -> int:
        return len(self.predicates)

    def sort_key(self):
        return (self.length, self.predicates, self.tr_query, self.tr_pairs, self.head)

    def pairwise_map(self) -> dict[tuple[int, int], TRClass]:
        return {
            jk: TRClass(t) for jk, t in zip(pair_keys(self.length), self.tr_pairs)
        }

    def to_json(self, discovery_count: int = 1) -> str:
        return json.dumps(
            {
                "head": self.head,
                "length": self.length,
                "predicates": list(self.predicates),
                "tr_query": [TRClass(t).label() for t in self.tr_query],
                "tr_pairs": {
                    f"{j},{k}": TRClass(t).label()
                    for (j, k), t in zip(pair_keys(self.length), self.tr_pairs)
                },
                "discovery_count": discovery_count,
            }
        )

    @classmethod
    def from_json(cls, line: str):
        doc = json.loads(line)
        length = doc["length"]
        pairs = tuple(
            int(TRClass.from_label(doc["tr_pairs"][f"{j},{k}"]))
            for j, k in pair_keys(length)
        )
        rule = cls(
            head=doc["head"],
            predicates=tuple(doc["predicates"]),
            tr_query=tuple(int(TRClass.from_label(t)) for t in doc["tr_query"]),
            tr_pairs=pairs,
        )
        return rule, int(doc.get("discovery_count", 1))


def extract_rule(
    graph: TemporalGraph,
    walk: Walk,
    head: int,
    query_interval: tuple[float, float],
) -> RuleTemplate:
    """Abstract one grounded walk into its rule template for the query."""
    graph._require_resolved()
    q_s, q_e = float(query_interval[0]), float(query_interval[1])
    starts = graph.resolved_starts[list(walk)]
    ends = graph.resolved_ends[list(walk)]
    tr_query = tuple(int(c) for c in classify_many(starts, ends, q_s, q_e))
    pairs = []
    for j, k in pair_keys(len(walk)):
        a, b = j - 1, k - 1
        if ends[a] < starts[b]:
            pairs.append(int(TRClass.BEFORE))
        elif starts[a] > ends[b]:
            pairs.append(int(TRClass.AFTER))
        else:
            pairs.append(int(TRClass.TOUCHING))
    return RuleTemplate(
        head=head,
        predicates=tuple(int(graph.relations[f]) for f in walk),
        tr_query=tr_query,
        tr_pairs=tuple(pairs),
    )


class RuleSet:
    """Deduplicated rule templates per head predicate, with discovery counts."""

    def __init__(self):
        self._by_head: dict[int, dict[RuleTemplate, int]] = {}
        self._sorted: dict[int, list[RuleTemplate]] = {}

    def add(self, rule: RuleTemplate, count: int = 1):
        bucket = self._by_head.setdefault(rule.head, {})
        bucket[rule] = bucket.get(rule, 0) + count
        self._sorted.pop(rule.head, None)

    def heads(self):
        return sorted(self._by_head)

    def rules_for(self, head: int) -> list[RuleTemplate]:
        if head not in self._sorted:
            rules = sorted(self._by_head.get(head, {}), key=RuleTemplate.sort_key)
            self._sorted[head] = rules
        return self._sorted[head]

    def count_of(self, rule: RuleTemplate) -> int:
        return self._by_head.get(rule.head, {}).get(rule, 0)

    def __len__(self):
        return sum(len(b) for b in self._by_head.values())

    def __contains__(self, rule: RuleTemplate):
        return rule in self._by_head.get(rule.head, {})

    def save_jsonl(self, path):
        with open(path, "w") as fh:
            for head in self.heads():
                for rule in self.rules_for(head):
                    fh.write(rule.to_json(self.count_of(rule)) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "RuleSet":
        rs = cls()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rule, count = RuleTemplate.from_json(line)
                    rs.add(rule, count)
        return rs


def walk_entities(graph: TemporalGraph, walk: Walk) -> list[int]:
    """Entity chain e_1 .. e_{l+1} visited by a walk."""
    ents = [int(graph.subjects[walk[0]])]
    ents.extend(int(graph.objects[f]) for f in walk)
    return ents

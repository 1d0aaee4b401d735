"""Indexed, immutable fact store for an interval-annotated knowledge graph.

Facts are quadruples (subject, relation, object, interval).  The store adds
a synthetic inverse edge for every loaded fact so walks can traverse both
directions; an edge and its inverse share one ``edge_id`` and count as the
same edge for repeated-edge checks.  Relation ids for inverses live above
the base vocabulary: ``inverse(r) = r + num_base_relations`` for base ids.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .intervals import Interval


@dataclass(frozen=True)
class Fact:
    """One directed edge of the graph."""

    subject: int
    relation: int
    object: int
    interval: Interval

    @classmethod
    def of(cls, subject, relation, object, start, end) -> "Fact":
        return cls(subject, relation, object, Interval(start, end))


def inverse_relation(relation: int, num_base: int) -> int:
    """Involution pairing each base relation with its synthetic inverse."""
    return relation + num_base if relation < num_base else relation - num_base


class TemporalGraph:
    """Immutable, array-backed fact store with subject indices.

    Attributes are parallel arrays over the *stored* facts (originals
    followed by their inverses): ``subjects``, ``relations``, ``objects``,
    ``starts``, ``ends`` (packed floats: NaN unknown, +inf present) and
    ``edge_ids``.  ``resolved_starts``/``resolved_ends`` are set once
    :meth:`resolve` has run and are what the walk engine consumes.
    """

    def __init__(
        self,
        subjects,
        relations,
        objects,
        starts,
        ends,
        edge_ids,
        num_entities,
        num_base_relations,
        duplicates_removed=0,
        resolved_starts=None,
        resolved_ends=None,
        resolution_meta=None,
    ):
        self.subjects = np.ascontiguousarray(subjects, dtype=np.int32)
        self.relations = np.ascontiguousarray(relations, dtype=np.int32)
        self.objects = np.ascontiguousarray(objects, dtype=np.int32)
        self.starts = np.ascontiguousarray(starts, dtype=np.float64)
        self.ends = np.ascontiguousarray(ends, dtype=np.float64)
        self.edge_ids = np.ascontiguousarray(edge_ids, dtype=np.int32)
        self.num_entities = int(num_entities)
        self.num_base_relations = int(num_base_relations)
        self.duplicates_removed = int(duplicates_removed)
        self.resolved_starts = resolved_starts
        self.resolved_ends = resolved_ends
        self.resolution_meta = resolution_meta or {}
        self._by_subject = None
        self._by_subject_relation = None
        for a in (self.relations, self.objects, self.starts, self.ends, self.edge_ids):
            if len(a) != len(self.subjects):
                raise ContractViolation("fact arrays must have equal length")
        self.subjects.setflags(write=False)
        self.relations.setflags(write=False)
        self.objects.setflags(write=False)
        self.starts.setflags(write=False)
        self.ends.setflags(write=False)
        self.edge_ids.setflags(write=False)

    # ------------------------------------------------------------------
    # basic accessors

    @property
    def num_facts(self) -> int:
        """Stored fact count (originals plus inverses)."""
        return len(self.subjects)

    @property
    def num_relations(self) -> int:
        """Relation vocabulary size counting inverses."""
        return 2 * self.num_base_relations

    @property
    def is_resolved(self) -> bool:
        return self.resolved_starts is not None

    def inverse_relation(self, relation: int) -> int:
        return inverse_relation(relation, self.num_base_relations)

    def fact(self, index: int) -> Fact:
        return Fact(
            int(self.subjects[index]),
            int(self.relations[index]),
            int(self.objects[index]),
            Interval.from_floats(self.starts[index], self.ends[index]),
        )

    def resolved_interval(self, index: int) -> tuple[float, float]:
        self._require_resolved()
        return float(self.resolved_starts[index]), float(self.resolved_ends[index])

    def _require_resolved(self):
        if not self.is_resolved:
            raise ContractViolation(
                "graph intervals are not resolved; call resolve() first"
            )

    # ------------------------------------------------------------------
    # indices

    @property
    def by_subject(self) -> dict[int, np.ndarray]:
        """Map entity id -> indices of stored facts with that subject."""
        if self._by_subject is None:
            order = np.argsort(self.subjects, kind="stable")
            idx = {}
            uniq, offsets = np.unique(self.subjects[order], return_index=True)
            bounds = np.append(offsets, len(order))
            for k, ent in enumerate(uniq):
                idx[int(ent)] = order[bounds[k] : bounds[k + 1]]
            self._by_subject = idx
        return self._by_subject

    @property
    def by_subject_relation(self) -> dict[tuple[int, int], np.ndarray]:
        """Map (entity id, relation id) -> indices of matching stored facts."""
        if self._by_subject_relation is None:
            key = self.subjects.astype(np.int64) * (self.num_relations + 1) + self.relations
            order = np.argsort(key, kind="stable")
            idx = {}
            uniq, offsets = np.unique(key[order], return_index=True)
            bounds = np.append(offsets, len(order))
            denom = self.num_relations + 1
            for k, packed in enumerate(uniq):
                ent, rel = divmod(int(packed), denom)
                idx[(ent, rel)] = order[bounds[k] : bounds[k + 1]]
            self._by_subject_relation = idx
        return self._by_subject_relation

    def facts_from(self, entity: int) -> np.ndarray:
        return self.by_subject.get(int(entity), _EMPTY_IDX)

    def facts_from_with(self, entity: int, relation: int) -> np.ndarray:
        return self.by_subject_relation.get((int(entity), int(relation)), _EMPTY_IDX)

    # ------------------------------------------------------------------
    # interval resolution

    def resolve(self, max_year=None, min_year=None, duration_model=None, seed=0):
        """Return a copy with every interval endpoint made concrete.

        ``present`` ends become ``max_year`` (default: max finite year seen).
        Unknown endpoints are imputed with the relation's duration model
        when one is given: a missing end becomes ``start + d`` and a missing
        start becomes ``end - d`` with ``d`` drawn per fact from the model.
        Facts missing both endpoints span the whole dataset range.  The
        draw is deterministic under ``seed``.
        """
        starts = self.starts.copy()
        ends = self.ends.copy()
        finite_years = np.concatenate(
            [starts[np.isfinite(starts)], ends[np.isfinite(ends)]]
        )
        if max_year is None:
            max_year = float(finite_years.max()) if len(finite_years) else 0.0
        if min_year is None:
            min_year = float(finite_years.min()) if len(finite_years) else 0.0
        ends[np.isinf(ends)] = max_year

        imputed = 0
        missing_any = np.isnan(starts) | np.isnan(ends)
        if missing_any.any():
            rng = np.random.default_rng(seed)
            for i in np.flatnonzero(missing_any):
                s, e = starts[i], ends[i]
                rel = int(self.relations[i])
                if np.isnan(s) and np.isnan(e):
                    starts[i], ends[i] = min_year, max_year
                elif duration_model is None:
                    raise ContractViolation(
                        "graph has unknown endpoints but no duration model was given"
                    )
                elif np.isnan(e):
                    d = duration_model.sample(rel, rng)
                    ends[i] = s + round(d)
                else:
                    d = duration_model.sample(rel, rng)
                    starts[i] = max(min_year, e - round(d))
                imputed += 1
        bad = ends < starts
        ends[bad] = starts[bad]
        return TemporalGraph(
            self.subjects,
            self.relations,
            self.objects,
            self.starts,
            self.ends,
            self.edge_ids,
            self.num_entities,
            self.num_base_relations,
            duplicates_removed=self.duplicates_removed,
            resolved_starts=starts,
            resolved_ends=ends,
            resolution_meta={
                "max_year": max_year,
                "min_year": min_year,
                "seed": int(seed),
                "imputed_endpoints": int(imputed),
            },
        )

    # ------------------------------------------------------------------
    # persistence

    def save(self, path):
        """Persist the graph (and any resolution) to a single .npz file."""
        meta = {
            "num_entities": self.num_entities,
            "num_base_relations": self.num_base_relations,
            "duplicates_removed": self.duplicates_removed,
            "resolution_meta": self.resolution_meta,
        }
        arrays = {
            "subjects": self.subjects,
            "relations": self.relations,
            "objects": self.objects,
            "starts": self.starts,
            "ends": self.ends,
            "edge_ids": self.edge_ids,
            "meta_json": np.frombuffer(
                json.dumps(meta).encode("utf-8"), dtype=np.uint8
            ),
        }
        if self.is_resolved:
            arrays["resolved_starts"] = self.resolved_starts
            arrays["resolved_ends"] = self.resolved_ends
        np.savez_compressed(path, **arrays)

    @classmethod
    def load(cls, path) -> "TemporalGraph":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta_json"]).decode("utf-8"))
            return cls(
                data["subjects"],
                data["relations"],
                data["objects"],
                data["starts"],
                data["ends"],
                data["edge_ids"],
                meta["num_entities"],
                meta["num_base_relations"],
                duplicates_removed=meta["duplicates_removed"],
                resolved_starts=data["resolved_starts"] if "resolved_starts" in data else None,
                resolved_ends=data["resolved_ends"] if "resolved_ends" in data else None,
                resolution_meta=meta.get("resolution_meta") or {},
            )


_EMPTY_IDX = np.empty(0, dtype=np.int64)


def build_graph(
    facts,
    num_entities=None,
    num_base_relations=None,
    warn_on_duplicates=True,
) -> TemporalGraph:
    """Index a fact list into a :class:`TemporalGraph`, adding inverse edges.

    Exact duplicate quadruples are collapsed to a single edge (a warning
    reports how many); the count is kept on ``graph.duplicates_removed``.
    Every surviving fact i gets ``edge_id = i`` shared with its inverse.
    """
    seen = set()
    rows = []
    dupes = 0
    for f in facts:
        key = (f.subject, f.relation, f.object, f.interval.start, f.interval.end)
        if key in seen:
            dupes += 1
            continue
        seen.add(key)
        rows.append(f)
    if dupes and warn_on_duplicates:
        warnings.warn(f"removed {dupes} duplicate facts", stacklevel=2)

    n = len(rows)
    if num_entities is None:
        num_entities = 1 + max(
            (max(f.subject, f.object) for f in rows), default=-1
        )
    if num_base_relations is None:
        num_base_relations = 1 + max((f.relation for f in rows), default=-1)
    for f in rows:
        if f.relation >= num_base_relations:
            raise ContractViolation(
                f"relation id {f.relation} is not a base relation "
                f"(base vocabulary size {num_base_relations})"
            )
        if f.subject >= num_entities or f.object >= num_entities:
            raise ContractViolation("entity id out of vocabulary")

    subjects = np.empty(2 * n, dtype=np.int32)
    relations = np.empty(2 * n, dtype=np.int32)
    objects = np.empty(2 * n, dtype=np.int32)
    starts = np.empty(2 * n, dtype=np.float64)
    ends = np.empty(2 * n, dtype=np.float64)
    edge_ids = np.empty(2 * n, dtype=np.int32)
    for i, f in enumerate(rows):
        s, e = f.interval.as_floats()
        subjects[i], relations[i], objects[i] = f.subject, f.relation, f.object
        subjects[n + i] = f.object
        relations[n + i] = f.relation + num_base_relations
        objects[n + i] = f.subject
        starts[i] = starts[n + i] = s
        ends[i] = ends[n + i] = e
        edge_ids[i] = edge_ids[n + i] = i

    return TemporalGraph(
        subjects,
        relations,
        objects,
        starts,
        ends,
        edge_ids,
        num_entities,
        num_base_relations,
        duplicates_removed=dupes,
    )

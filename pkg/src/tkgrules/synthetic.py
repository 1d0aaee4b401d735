"""Synthetic interval-graph generators with a known planted rule.

The planted construction gives every positive example a two-step body
chain whose temporal pattern uniquely identifies the answer::

    achieves(X, Z, [t+5, t+5]) <- step_a(X, Y, [t, t]) ^ step_b(Y, Z, [t+2, t+2])

so the planted template has pairwise TR ``before`` and both query TRs
``before``.  Decoy edges create competing same-predicate templates with
different TR signatures that arrive at wrong entities, and noise edges add
unrelated structure.  Useful for end-to-end checks: a learner that ranks
the planted template above its decoys recovers the answer exactly.
"""

from __future__ import annotations

import numpy as np

from .datasets import DatasetSplit
from .graph import Fact
from .intervals import Interval, TRClass
from .walks import RuleTemplate

HEAD, STEP_A, STEP_B, NOISE = 0, 1, 2, 3


def planted_template(num_base_relations: int = 4) -> RuleTemplate:
    """The injected rule, in template form (object direction)."""
    return RuleTemplate(
        head=HEAD,
        predicates=(STEP_A, STEP_B),
        tr_query=(int(TRClass.BEFORE), int(TRClass.BEFORE)),
        tr_pairs=(int(TRClass.BEFORE),),
    )


def planted_rule_dataset(
    n_train: int = 200,
    n_test: int = 50,
    seed: int = 0,
    year_lo: int = 1990,
    year_hi: int = 2010,
    head_offset: int = 5,
    noise_per_example: int = 2,
    decoys: bool = True,
    competitor_rate: float = 0.3,
) -> DatasetSplit:
    """Build a planted-rule dataset; body/decoy/noise facts all train-side.

    Head facts split ``n_train``/``n_test``.  Every example carries decoy
    chains whose TR signatures differ from the planted one and end at
    wrong entities; for a ``competitor_rate`` fraction of examples those
    same signatures *also* reach the true answer, so the competing
    same-length templates are discovered as rules yet stay unreliable.
    With ``head_offset`` large relative to the year span, head starts
    cluster later than body starts, which also makes the data usable for
    time-shift resplits.
    """
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    train: list[Fact] = []
    test: list[Fact] = []
    next_entity = 0

    def fresh():
        nonlocal next_entity
        next_entity += 1
        return next_entity - 1

    shared_pool = [fresh() for _ in range(10)]
    for i in range(n):
        x, y, z = fresh(), fresh(), fresh()
        t = int(rng.integers(year_lo, year_hi + 1))
        head_year = t + head_offset
        train.append(Fact(x, STEP_A, y, Interval.point(t)))
        train.append(Fact(y, STEP_B, z, Interval.point(t + 2)))
        head = Fact(x, HEAD, z, Interval.point(head_year))
        (train if i < n_train else test).append(head)
        if decoys:
            w1, w2 = fresh(), fresh()
            # same predicates, second body interval after the query
            train.append(Fact(y, STEP_B, w1, Interval.point(head_year + 2)))
            # same predicates, inverted pairwise order
            y2 = fresh()
            train.append(Fact(x, STEP_A, y2, Interval.point(t + 4)))
            train.append(Fact(y2, STEP_B, w2, Interval.point(t + 1)))
            if rng.random() < competitor_rate:
                # the "after the query" signature also reaches the answer
                y3 = fresh()
                train.append(Fact(x, STEP_A, y3, Interval.point(t)))
                train.append(Fact(y3, STEP_B, z, Interval.point(head_year + 2)))
            if rng.random() < competitor_rate:
                # the inverted-pairwise signature also reaches the answer
                y4 = fresh()
                train.append(Fact(x, STEP_A, y4, Interval.point(t + 4)))
                train.append(Fact(y4, STEP_B, z, Interval.point(t + 1)))
            if rng.random() < competitor_rate:
                # an unreliable length-1 shortcut
                train.append(Fact(x, NOISE, z, Interval.point(t + 1)))
        seen_noise = set()
        for _ in range(noise_per_example):
            other = shared_pool[int(rng.integers(len(shared_pool)))]
            yr = int(rng.integers(year_lo, year_hi + head_offset + 3))
            if (other, yr) not in seen_noise:
                seen_noise.add((other, yr))
                train.append(Fact(x, NOISE, other, Interval.point(yr)))

    entities = [f"e{i}" for i in range(next_entity)]
    relations = ["achieves", "step_a", "step_b", "related_to"]
    years = [
        y
        for f in train + test
        for y in (f.interval.start, f.interval.end)
        if isinstance(y, int)
    ]
    return DatasetSplit(
        train=train,
        valid=[],
        test=test,
        entities=entities,
        relations=relations,
        max_year=max(years),
        min_year=min(years),
    )


def redundant_planted_dataset(
    n_train: int = 12,
    n_test: int = 5,
    seed: int = 0,
    copies_a: int = 13,
    copies_b: int = 10,
    chains: int = 2,
    year_lo: int = 1990,
    year_hi: int = 2005,
) -> DatasetSplit:
    """Planted rule with heavily redundant groundings per example.

    Each positive example carries ``chains`` parallel middle entities, each
    reachable by ``copies_a`` first-step edges and connected onward by
    ``copies_b`` second-step edges (all realizing the planted TR pattern).
    Random subsampling of the training facts then changes how often the
    pattern is seen without severing any query's evidence, the regime in
    which reduced training data should barely move ranking quality.
    """
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    train: list[Fact] = []
    test: list[Fact] = []
    next_entity = 0

    def fresh():
        nonlocal next_entity
        next_entity += 1
        return next_entity - 1

    for i in range(n):
        x, z = fresh(), fresh()
        t = int(rng.integers(year_lo, year_hi + 1))
        head_year = t + 12
        for _ in range(chains):
            y = fresh()
            for k in range(copies_a):
                train.append(Fact(x, STEP_A, y, Interval.point(t - k)))
            for k in range(copies_b):
                train.append(Fact(y, STEP_B, z, Interval.point(t + 2 + k)))
        head = Fact(x, HEAD, z, Interval.point(head_year))
        (train if i < n_train else test).append(head)

    entities = [f"e{i}" for i in range(next_entity)]
    relations = ["achieves", "step_a", "step_b", "related_to"]
    years = [f.interval.start for f in train + test]
    return DatasetSplit(
        train=train,
        valid=[],
        test=test,
        entities=entities,
        relations=relations,
        max_year=max(years),
        min_year=min(years),
    )


def random_graph_facts(
    rng: np.random.Generator,
    num_entities: int,
    num_facts: int,
    num_relations: int = 2,
    year_lo: int = 2000,
    year_hi: int = 2010,
) -> list[Fact]:
    """Uniform random facts with small random intervals, for stress tests."""
    facts = []
    seen = set()
    for _ in range(num_facts):
        s = int(rng.integers(num_entities))
        o = int(rng.integers(num_entities))
        r = int(rng.integers(num_relations))
        a = int(rng.integers(year_lo, year_hi + 1))
        b = int(rng.integers(a, year_hi + 1))
        key = (s, r, o, a, b)
        if key in seen:
            continue
        seen.add(key)
        facts.append(Fact(s, r, o, Interval(a, b)))
    return facts

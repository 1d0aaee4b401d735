"""Loading, validation, and (re)splitting of interval-fact datasets.

The on-disk format is the tab-separated layout the public wikidata12k /
yago11k distributions use::

    subject \t relation \t object \t start \t end

Time tokens are integer years or ISO-style dates; month and day parts are
truncated to the year.  ``####`` (possibly with date padding), ``?`` or an
empty field mean the endpoint is unknown; ``present`` marks an open end.
Entity and relation tokens are opaque strings mapped to a vocabulary shared
by all three splits.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractViolation, ParseError
from .graph import Fact, TemporalGraph, build_graph
from .intervals import PRESENT, Interval

# Published statistics for the canonical benchmark files, used by
# `validate_counts`: (train, valid, test, entities, base relations).
CANONICAL_STATS = {
    "wikidata12k": (32497, 4062, 4062, 12544, 24),
    "yago11k": (16408, 2051, 2050, 10622, 10),
}


@dataclass
class FormatConfig:
    delimiter: str = "\t"
    columns: tuple[int, int, int, int, int] = (0, 1, 2, 3, 4)  # s, r, o, start, end
    max_valid_year: int = 2022


@dataclass
class DatasetSplit:
    """Train/valid/test fact lists over one shared vocabulary."""

    train: list[Fact]
    valid: list[Fact]
    test: list[Fact]
    entities: list[str]
    relations: list[str]
    max_year: int | None = None
    min_year: int | None = None
    corrected_years: int = 0

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_base_relations(self) -> int:
        return len(self.relations)

    def all_facts(self) -> list[Fact]:
        return self.train + self.valid + self.test

    def build_train_graph(self) -> TemporalGraph:
        return build_graph(
            self.train,
            num_entities=self.num_entities,
            num_base_relations=self.num_base_relations,
        )

    def build_full_graph(self) -> TemporalGraph:
        return build_graph(
            self.all_facts(),
            num_entities=self.num_entities,
            num_base_relations=self.num_base_relations,
        )

    def metadata(self) -> dict:
        return {
            "entities": self.entities,
            "relations": self.relations,
            "sizes": {
                "train": len(self.train),
                "valid": len(self.valid),
                "test": len(self.test),
            },
            "num_entities": self.num_entities,
            "num_base_relations": self.num_base_relations,
            "max_year": self.max_year,
            "min_year": self.min_year,
            "corrected_years": self.corrected_years,
        }

    def save_metadata(self, path):
        Path(path).write_text(json.dumps(self.metadata(), indent=1))


_YEAR_RE = re.compile(r"^(-?)(\d+)")


def parse_year_token(token: str, max_valid_year: int = 2022):
    """Parse one time token into a year, ``None`` (unknown), or ``PRESENT``.

    Month/day components are truncated.  Years beyond ``max_valid_year``
    are data errors in these dumps and are treated as unknown.
    """
    tok = token.strip()
    if tok == "" or tok in {"?", "None", "null"}:
        return None
    if tok.lower() == "present":
        return PRESENT
    if "#" in tok.split("-")[0] or tok.lstrip("-").startswith("#"):
        return None
    m = _YEAR_RE.match(tok)
    if not m:
        return None
    year = int(m.group(2))
    if m.group(1):
        year = -year
    if year > max_valid_year:
        return None
    return year


class _Vocab:
    def __init__(self):
        self.index: dict[str, int] = {}
        self.items: list[str] = []

    def get(self, token: str) -> int:
        i = self.index.get(token)
        if i is None:
            i = len(self.items)
            self.index[token] = i
            self.items.append(token)
        return i


def _parse_file(path, fmt, entities, relations):
    facts = []
    corrected = 0
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(str(exc), path=path) from None
    s_col, r_col, o_col, ts_col, te_col = fmt.columns
    need = max(fmt.columns) + 1
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(fmt.delimiter)
        if len(parts) < need:
            raise ParseError(
                f"expected at least {need} fields, got {len(parts)}",
                path=path,
                line_number=lineno,
            )
        raw_start = parts[ts_col].strip()
        raw_end = parts[te_col].strip()
        start = parse_year_token(raw_start, fmt.max_valid_year)
        end = parse_year_token(raw_end, fmt.max_valid_year)
        if start is None and raw_start and "#" not in raw_start and raw_start not in {"?", "None", "null"}:
            corrected += 1
        if end is None and raw_end and "#" not in raw_end and raw_end.lower() != "present" and raw_end not in {"?", "None", "null"}:
            corrected += 1
        if start is not None and end is not None and end != PRESENT and end < start:
            # swapped endpoints occur in the raw dumps; normalize
            start, end = end, start
            corrected += 1
        facts.append(
            Fact(
                entities.get(parts[s_col].strip()),
                relations.get(parts[r_col].strip()),
                entities.get(parts[o_col].strip()),
                Interval(start, end),
            )
        )
    return facts, corrected


def load_dataset(train_path, valid_path, test_path, fmt: FormatConfig | None = None) -> DatasetSplit:
    """Load the three split files into one vocabulary-shared dataset."""
    fmt = fmt or FormatConfig()
    entities = _Vocab()
    relations = _Vocab()
    split_facts = []
    corrected = 0
    for path in (train_path, valid_path, test_path):
        facts, bad = _parse_file(path, fmt, entities, relations)
        split_facts.append(facts)
        corrected += bad

    years = [
        y
        for facts in split_facts
        for f in facts
        for y in (f.interval.start, f.interval.end)
        if isinstance(y, int)
    ]
    return DatasetSplit(
        train=split_facts[0],
        valid=split_facts[1],
        test=split_facts[2],
        entities=entities.items,
        relations=relations.items,
        max_year=max(years) if years else None,
        min_year=min(years) if years else None,
        corrected_years=corrected,
    )


def validate_counts(split: DatasetSplit, dataset_name: str, strict: bool = True) -> dict:
    """Compare split sizes with the published statistics for a benchmark.

    Returns a report dict; raises ContractViolation on mismatch when
    ``strict`` and the dataset name is one of the canonical benchmarks.
    """
    name = dataset_name.lower()
    report = {"dataset": name, "known": name in CANONICAL_STATS, "match": None}
    if name not in CANONICAL_STATS:
        return report
    exp_train, exp_valid, exp_test, exp_ent, exp_rel = CANONICAL_STATS[name]
    got = (
        len(split.train),
        len(split.valid),
        len(split.test),
        split.num_entities,
        split.num_base_relations,
    )
    report["expected"] = [exp_train, exp_valid, exp_test, exp_ent, exp_rel]
    report["got"] = list(got)
    report["match"] = got == (exp_train, exp_valid, exp_test, exp_ent, exp_rel)
    if strict and not report["match"]:
        raise ContractViolation(
            f"{name} counts {got} do not match published statistics "
            f"{(exp_train, exp_valid, exp_test, exp_ent, exp_rel)}"
        )
    return report


@dataclass
class TimeShiftReport:
    boundaries: tuple[int, int]
    train_range: tuple[int, int]
    valid_range: tuple[int, int]
    test_range: tuple[int, int]
    sizes: tuple[int, int, int]

    def ranges(self):
        return [list(self.train_range), list(self.valid_range), list(self.test_range)]


def time_shift_resplit(split: DatasetSplit, boundaries: tuple[int, int]):
    """Re-split all facts by start year for the time-shift protocol.

    Facts with start year in ``[min, b1]`` go to train, ``(b1, b2]`` to
    valid, and ``(b2, max]`` to test; facts with an unknown start year go
    to train.  Returns the new split plus a report of the three year
    ranges ``[min, b1] / [b1, b2] / [b2, max]``.
    """
    b1, b2 = boundaries
    if b1 >= b2:
        raise ContractViolation(f"invalid boundaries: {b1} >= {b2}")
    train, valid, test = [], [], []
    starts = []
    for f in split.all_facts():
        s = f.interval.start
        if s is None:
            train.append(f)
            continue
        starts.append(s)
        if s <= b1:
            train.append(f)
        elif s <= b2:
            valid.append(f)
        else:
            test.append(f)
    lo = min(starts) if starts else b1
    hi = max(starts) if starts else b2
    new_split = DatasetSplit(
        train=train,
        valid=valid,
        test=test,
        entities=split.entities,
        relations=split.relations,
        max_year=split.max_year,
        min_year=split.min_year,
        corrected_years=split.corrected_years,
    )
    report = TimeShiftReport(
        boundaries=(b1, b2),
        train_range=(lo, b1),
        valid_range=(b1, b2),
        test_range=(b2, hi),
        sizes=(len(train), len(valid), len(test)),
    )
    return new_split, report

import json

import pytest

from tkgrules.datasets import (
    DatasetSplit,
    FormatConfig,
    load_dataset,
    parse_year_token,
    time_shift_resplit,
    validate_counts,
)
from tkgrules.errors import ContractViolation, ParseError
from tkgrules.graph import Fact
from tkgrules.intervals import PRESENT, Interval


def write(path, lines):
    path.write_text("".join(line + "\n" for line in lines))
    return str(path)


@pytest.fixture
def toy_paths(tmp_path):
    train = write(
        tmp_path / "train.txt",
        [
            "alice\tworks_at\tuni\t1959\t1999",
            "bob\tworks_at\tuni\t2003-07\t2005-01-15",
            "carol\tborn_in\tcity\t-431\t-431",
            "uni\tlocated_in\tcity\t####\t####-##-##",
            "alice\tmember_of\tclub\t1962\tpresent",
            "dave\tworks_at\tuni\t2070\t2071",
        ],
    )
    valid = write(tmp_path / "valid.txt", ["bob\tborn_in\tcity\t1980\t1980"])
    test = write(tmp_path / "test.txt", ["eve\tworks_at\tuni\t1999\t2001"])
    return train, valid, test


def test_year_token_parsing():
    assert parse_year_token("2003-07") == 2003
    assert parse_year_token("2005-01-15") == 2005
    assert parse_year_token("-431") == -431
    assert parse_year_token("-431-06-01") == -431
    assert parse_year_token("####") is None
    assert parse_year_token("####-##-##") is None
    assert parse_year_token("") is None
    assert parse_year_token("present") == PRESENT
    assert parse_year_token("Present") == PRESENT
    assert parse_year_token("2070") is None  # beyond the valid range


def test_load_dataset_builds_shared_vocabulary(toy_paths):
    split = load_dataset(*toy_paths)
    assert len(split.train) == 6
    assert len(split.valid) == 1
    assert len(split.test) == 1
    assert split.num_base_relations == 4
    # entities shared across splits: eve only appears in test
    assert "eve" in split.entities
    assert split.max_year == 2005
    assert split.min_year == -431


def test_load_dataset_truncates_and_marks_unknowns(toy_paths):
    split = load_dataset(*toy_paths)
    by_subject = {split.entities[f.subject]: f for f in split.train}
    assert by_subject["bob"].interval == Interval(2003, 2005)
    assert by_subject["carol"].interval == Interval(-431, -431)
    assert by_subject["uni"].interval == Interval(None, None)
    assert by_subject["alice"].interval in (Interval(1959, 1999), Interval(1962, PRESENT))
    # out-of-range years corrected to unknown
    assert by_subject["dave"].interval == Interval(None, None)
    assert split.corrected_years >= 2


def test_empty_files_give_empty_split(tmp_path):
    paths = [write(tmp_path / f"{name}.txt", []) for name in ("a", "b", "c")]
    split = load_dataset(*paths)
    assert split.train == [] and split.valid == [] and split.test == []
    assert split.num_entities == 0
    assert split.num_base_relations == 0


def test_malformed_line_reports_its_number(tmp_path):
    bad = write(tmp_path / "train.txt", ["a\tr\tb\t2000\t2001", "broken line"])
    ok = write(tmp_path / "other.txt", [])
    with pytest.raises(ParseError) as err:
        load_dataset(bad, ok, ok)
    assert err.value.line_number == 2


def test_missing_file_is_a_parse_error(tmp_path):
    ok = write(tmp_path / "ok.txt", [])
    with pytest.raises(ParseError):
        load_dataset(str(tmp_path / "absent.txt"), ok, ok)


def test_metadata_sidecar_round_trips(tmp_path, toy_paths):
    split = load_dataset(*toy_paths)
    out = tmp_path / "meta.json"
    split.save_metadata(out)
    meta = json.loads(out.read_text())
    assert meta["sizes"] == {"train": 6, "valid": 1, "test": 1}
    assert meta["num_entities"] == split.num_entities
    assert meta["max_year"] == 2005


def test_validate_counts_flags_mismatch(toy_paths):
    split = load_dataset(*toy_paths)
    report = validate_counts(split, "wikidata12k", strict=False)
    assert report["known"] and report["match"] is False
    with pytest.raises(ContractViolation):
        validate_counts(split, "wikidata12k", strict=True)
    assert validate_counts(split, "toy", strict=True)["known"] is False


def _facts_with_starts(years):
    return [Fact(i, 0, i + 1, Interval.point(y)) for i, y in enumerate(years)]


def _split_of(facts):
    n = max(f.object for f in facts) + 1
    return DatasetSplit(
        train=facts,
        valid=[],
        test=[],
        entities=[f"e{i}" for i in range(n)],
        relations=["r"],
    )


def test_time_shift_resplit_counts_by_hand():
    split = _split_of(_facts_with_starts(range(2000, 2010)))
    shifted, report = time_shift_resplit(split, (2004, 2007))
    assert report.sizes == (5, 3, 2)
    assert report.train_range == (2000, 2004)
    assert report.valid_range == (2004, 2007)
    assert report.test_range == (2007, 2009)


def test_time_shift_degenerate_boundary_keeps_all_in_train():
    split = _split_of(_facts_with_starts([2005] * 4))
    shifted, report = time_shift_resplit(split, (2005, 2006))
    assert report.sizes == (4, 0, 0)


def test_time_shift_unknown_start_goes_to_train():
    facts = _facts_with_starts([2000, 2009]) + [Fact(5, 0, 6, Interval(None, 2008))]
    split = _split_of(facts)
    shifted, report = time_shift_resplit(split, (2003, 2006))
    assert len(shifted.train) == 2  # year 2000 + the unknown-start fact
    assert len(shifted.test) == 1


def test_time_shift_rejects_bad_boundaries():
    split = _split_of(_facts_with_starts([2000]))
    with pytest.raises(ContractViolation):
        time_shift_resplit(split, (2007, 2004))


def test_custom_format_config(tmp_path):
    path = write(tmp_path / "t.csv", ["2000|2001|a|r|b"])
    empty = write(tmp_path / "e.csv", [])
    fmt = FormatConfig(delimiter="|", columns=(2, 3, 4, 0, 1))
    split = load_dataset(path, empty, empty, fmt)
    assert split.train[0].interval == Interval(2000, 2001)

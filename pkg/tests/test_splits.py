import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from bikit.catalog import DatasetManifest, SampleRecord, find_manifest, load_dataset_index, make_index
from bikit.errors import SplitError
from bikit.splits import (
    SplitAssignment,
    SplitSpec,
    format_split,
    load_split,
    parse_split,
    save_split,
    split_path,
    stratified_split,
    verify_split,
)
from bikit.synth import synth_index

CLASSES = ("A", "B", "C")
MANIFEST = DatasetManifest("toy", "1.0.0", "multi-target", CLASSES)


def index_from_bits(bits):
    return make_index(MANIFEST, [SampleRecord(f"s{i:03d}", f"{i}.jpg", tuple(int(b) for b in row))
                                 for i, row in enumerate(bits)])


def sixty_sample_index():
    rng = np.random.default_rng(7)
    bits = (rng.random((60, 3)) < [0.15, 0.4, 0.6]).astype(int)
    bits[bits.sum(axis=1) == 0, 2] = 1
    return index_from_bits(bits)


def test_single_class_proportional():
    m = DatasetManifest("one", "1.0.0", "multi-target", ("A",))
    idx = make_index(m, [SampleRecord(f"s{i}", "x", (1,)) for i in range(10)])
    a = stratified_split(idx, SplitSpec((8, 1, 1), seed=3))
    rep = verify_split(a, idx)
    assert rep.per_class["A"] == {"train": 8, "val": 1, "test": 1}
    assert rep.max_deviation == 0.0


def test_sixty_sample_recount():
    idx = sixty_sample_index()
    a = stratified_split(idx, SplitSpec((40, 10, 10), seed=0))
    labels = {r.image_id: r.labels for r in idx.records}
    counts = oracles.bucket_label_counts(dict(a.assignment), labels, CLASSES)
    totals = {c: sum(counts[c].values()) for c in CLASSES}
    for c in CLASSES:
        assert abs(counts[c]["val"] - 10 * totals[c] / 60) <= 1
    assert verify_split(a, idx).per_class == counts


def test_mcds_shaped_sizes_exact():
    idx = synth_index(find_manifest("mcds"), seed=0)
    a = stratified_split(idx, SplitSpec((2057, 270, 270), seed=0))
    rep = verify_split(a, idx)
    assert rep.ok and rep.cardinalities == {"train": 2057, "val": 270, "test": 270}
    assert rep.max_deviation <= 2


def test_size_mismatch_and_empty():
    idx = sixty_sample_index()
    with pytest.raises(SplitError) as e:
        stratified_split(idx, SplitSpec((40, 10, 9)))
    assert e.value.code == "size-mismatch"
    with pytest.raises(SplitError) as e:
        stratified_split(make_index(MANIFEST, []), SplitSpec((0, 0, 0)))
    assert e.value.code == "empty-index"


def test_fixed_strategy_is_not_generated():
    with pytest.raises(SplitError) as e:
        stratified_split(sixty_sample_index(), SplitSpec((40, 10, 10), strategy="fixed"))
    assert e.value.code == "bad-strategy"


def test_spec_validation():
    with pytest.raises(SplitError):
        SplitSpec((1, -1, 0))
    with pytest.raises(SplitError):
        SplitSpec((1, 1, 1), seed=-1)
    with pytest.raises(SplitError):
        SplitSpec((1, 1, 1), strategy="kfold")


def test_round_trip(tmp_path):
    idx = sixty_sample_index()
    a = stratified_split(idx, SplitSpec((40, 10, 10), seed=5))
    save_split(a, tmp_path / "s.csv")
    b = load_split(tmp_path / "s.csv")
    assert b == a
    text = (tmp_path / "s.csv").read_text()
    assert text.splitlines()[0] == ("# bikit-split v1 dataset=toy seed=5 strategy=iterative-stratified "
                                    "prng=numpy-pcg64 sizes=40,10,10")


@pytest.mark.parametrize(
    "body, code",
    [
        ("img1,train\nimg1,train\n", "duplicate-image-id"),
        ("img1,holdout\n", "unknown-bucket"),
        ("img1\n", "malformed-row"),
    ],
)
def test_parse_errors(body, code):
    head = "# bikit-split v1 dataset=toy seed=0 strategy=random prng=numpy-pcg64 sizes=1,0,0\nimage_id,bucket\n"
    with pytest.raises(SplitError) as e:
        parse_split(head + body)
    assert e.value.code == code


@pytest.mark.parametrize("head", ["image_id,bucket\n", "# other v1\nimage_id,bucket\n",
                                  "# bikit-split v1 dataset=t seed=0 strategy=random prng=mt19937 sizes=1,0,0\n"
                                  "image_id,bucket\n"])
def test_bad_headers(head):
    with pytest.raises(SplitError) as e:
        parse_split(head + "a,train\n")
    assert e.value.code == "bad-header"


def test_codebrim_fixed_split_cardinalities(data_root):
    a = load_split(split_path(data_root, "codebrim-balanced"))
    assert a.spec.strategy == "fixed"
    assert a.cardinalities() == {"train": 6013, "val": 616, "test": 632}
    assert verify_split(a, load_dataset_index("codebrim-balanced", data_root)).ok


def test_verify_reports_missing_and_unknown():
    idx = sixty_sample_index()
    a = stratified_split(idx, SplitSpec((40, 10, 10)))
    partial = dict(a.assignment)
    gone = sorted(partial)[0]
    del partial[gone]
    partial["zzz"] = "train"
    rep = verify_split(SplitAssignment("toy", a.spec, partial), idx)
    assert not rep.ok and rep.missing == [gone] and rep.unknown == ["zzz"]


# -- properties -----------------------------------------------------------------------


@st.composite
def split_cases(draw):
    n = draw(st.integers(3, 80))
    rows = draw(st.lists(st.tuples(*[st.integers(0, 1)] * 3), min_size=n, max_size=n))
    rows = [r if any(r) else (0, 0, 1) for r in rows]
    val = draw(st.integers(0, n // 3))
    test = draw(st.integers(0, n // 3))
    seed = draw(st.integers(0, 2**64 - 1))
    return index_from_bits(rows), (n - val - test, val, test), seed


@settings(max_examples=60, deadline=None)
@given(split_cases())
def test_total_disjoint_and_stratified(case):
    idx, sizes, seed = case
    a = stratified_split(idx, SplitSpec(sizes, seed))
    rep = verify_split(a, idx)
    assert rep.total and rep.sizes_match
    assert sorted(a.assignment) == idx.image_ids
    assert rep.max_deviation <= 2


@settings(max_examples=30, deadline=None)
@given(split_cases())
def test_deterministic_bytes(case):
    idx, sizes, seed = case
    spec = SplitSpec(sizes, seed)
    assert format_split(stratified_split(idx, spec)) == format_split(stratified_split(idx, spec))


@settings(max_examples=30, deadline=None)
@given(split_cases(), st.integers(0, 2**32))
def test_seed_changes_assignment_not_cardinalities(case, other):
    idx, sizes, seed = case
    a = stratified_split(idx, SplitSpec(sizes, seed))
    b = stratified_split(idx, SplitSpec(sizes, other))
    assert a.cardinalities() == b.cardinalities()


def test_seed_changes_assignment_on_sixty():
    idx = sixty_sample_index()
    seen = {format_split(stratified_split(idx, SplitSpec((40, 10, 10), s))).split("\n", 1)[1] for s in range(5)}
    assert len(seen) > 1


@pytest.mark.parametrize("strategy", ["random", "iterative-stratified"])
def test_random_strategy_sizes(strategy):
    idx = sixty_sample_index()
    a = stratified_split(idx, SplitSpec((40, 10, 10), 1, strategy))
    assert a.cardinalities() == {"train": 40, "val": 10, "test": 10}

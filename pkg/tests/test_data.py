import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairadv import data as D

FIRST_LINE = (
    "39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, "
    "White, Male, 2174, 0, 40, United-States, <=50K"
)
TABLE1 = {(0, 0): 15128, (1, 0): 9592, (0, 1): 6662, (1, 1): 1179}


def record(sex="Male", label="<=50K", **overrides):
    vals = dict(zip(D.ADULT_COLUMNS, FIRST_LINE.split(", ")[:-1]))
    vals["sex"] = sex
    vals.update({k.replace("_", "-"): v for k, v in overrides.items()})
    return D.RawRecord(tuple(vals[c] for c in D.ADULT_COLUMNS), label)


def test_parse_first_uci_record():
    (r,) = D.parse_adult(FIRST_LINE + "\n")
    assert r.sex == "Male" and r.label == "<=50K"
    assert r["age"] == "39" and r["native-country"] == "United-States"


def test_parse_empty_and_blank_lines():
    assert D.parse_adult("") == []
    assert len(D.parse_adult(io.StringIO("\n" + FIRST_LINE + "\n\n  \n"))) == 1


def test_parse_strips_trailing_period_and_keeps_missing():
    line = FIRST_LINE.replace("State-gov", "?").replace("<=50K", ">50K.")
    (r,) = D.parse_adult(line)
    assert r.label == ">50K" and r["workclass"] == "?"


def test_parse_wrong_field_count_names_line():
    bad = ", ".join(FIRST_LINE.split(", ")[:13])
    with pytest.raises(D.AdultParseError, match="line 2"):
        D.parse_adult(FIRST_LINE + "\n" + bad + "\n")


def test_parse_preserves_order():
    lines = [FIRST_LINE.replace("39", str(a), 1) for a in (20, 30, 40)]
    assert [r["age"] for r in D.parse_adult("\n".join(lines))] == ["20", "30", "40"]


def test_schema_excludes_sex_and_includes_missing_token():
    schema = D.build_schema([record(), record(sex="Female")])
    names = [c.name for c in schema.columns]
    assert "sex" not in names
    for col in schema.columns:
        if isinstance(col, D.CategoricalColumn):
            assert "?" in col.vocabulary
            assert list(col.vocabulary) == sorted(col.vocabulary)


def test_one_hot_vocabulary():
    recs = [record(workclass="A"), record(workclass="B"), record(workclass="A")]
    schema = D.build_schema(recs)
    col = next(c for c in schema.columns if c.name == "workclass")
    assert col.vocabulary == ("?", "A", "B")
    ds = D.encode(recs, schema)
    start = 0
    for c in schema.columns:
        if c.name == "workclass":
            break
        start += c.width
    block = ds.X[:, start : start + 3]
    np.testing.assert_array_equal(block, [[0, 1, 0], [0, 0, 1], [0, 1, 0]])


def test_unseen_category_maps_to_missing_slot():
    schema = D.build_schema([record(race="White")])
    ds = D.encode([record(race="Other")], schema)
    names = schema.feature_names()
    assert ds.X[0, names.index("race=?")] == 1.0


def test_zero_variance_column_encodes_zero(caplog):
    recs = [record(), record()]
    schema = D.build_schema(recs)
    assert "zero variance" in caplog.text
    ds = D.encode(recs, schema)
    assert np.all(np.isfinite(ds.X))


def test_encode_labels_and_identical_records():
    schema = D.build_schema([record(), record(sex="Female", label=">50K")])
    ds = D.encode([record(sex="Female", label=">50K"), record(), record()], schema)
    assert (ds.y[0], ds.z[0]) == (1, 1)
    assert (ds.y[1], ds.z[1]) == (0, 0)
    np.testing.assert_array_equal(ds.X[1], ds.X[2])


def test_split_sizes_and_partition():
    ds = D.Dataset(np.zeros((4, 1)), [0, 1, 0, 1], [0, 0, 1, 1])
    tr, te = D.split_train_test(ds, 0)
    assert len(te) == 1 and len(tr) == 3
    tr_idx, te_idx = D.split_indices(32561, 0)
    assert len(te_idx) == 8140 and len(tr_idx) == 24421
    assert len(np.intersect1d(tr_idx, te_idx)) == 0
    np.testing.assert_array_equal(np.union1d(tr_idx, te_idx), np.arange(32561))
    np.testing.assert_array_equal(D.split_indices(32561, 0)[1], te_idx)


def test_split_rejects_tiny():
    with pytest.raises(ValueError):
        D.split_train_test(D.Dataset(np.zeros((1, 1)), [0], [0]), 0)


def _grid_dataset(counts):
    """Dataset with ``counts[(z, y)]`` rows per stratum, ``X[:,0]`` = row id."""
    rows = [(z, y) for (z, y), n in sorted(counts.items()) for _ in range(n)]
    z = [r[0] for r in rows]
    y = [r[1] for r in rows]
    return D.Dataset(np.arange(len(rows), dtype=float)[:, None], y, z)


def test_adv_balanced_low_only_small():
    train = _grid_dataset({(0, 0): 5, (1, 0): 5, (0, 1): 5, (1, 1): 5})
    adv = D.build_adv_dataset(train, D.AdvDataSpec(4, "balanced", "low_only"), 0)
    assert adv.stratum_counts() == {(0, 0): 2, (1, 0): 2, (0, 1): 0, (1, 1): 0}
    assert len(np.unique(adv.source)) == 4


def test_adv_balanced_both_500():
    train = _grid_dataset({(0, 0): 400, (1, 0): 300, (0, 1): 200, (1, 1): 150})
    adv = D.build_adv_dataset(train, D.AdvDataSpec(500, "balanced", "balanced"), 0)
    assert set(adv.stratum_counts().values()) == {125}


def test_adv_odd_size_tie_break():
    train = _grid_dataset({(0, 0): 9, (1, 0): 9, (0, 1): 9, (1, 1): 9})
    adv = D.build_adv_dataset(train, D.AdvDataSpec(7, "balanced", "balanced"), 0)
    # y=0 gets 4 (z=0: 2, z=1: 2); y=1 gets 3 (z=0: 2, z=1: 1)
    assert adv.stratum_counts() == {(0, 0): 2, (1, 0): 2, (0, 1): 2, (1, 1): 1}


def test_adv_replacement_only_after_exhaustion():
    train = _grid_dataset({(0, 1): 10, (1, 1): 3, (0, 0): 1, (1, 0): 1})
    adv = D.build_adv_dataset(train, D.AdvDataSpec(10, "balanced", "high_only"), 1)
    fem = adv.source[(adv.z == 1)]
    assert len(fem) == 5 and len(np.unique(fem)) == 3
    male = adv.source[(adv.z == 0)]
    assert len(male) == 5 and len(np.unique(male)) == 5


def test_adv_empty_stratum_error():
    train = _grid_dataset({(0, 0): 3, (0, 1): 3, (1, 0): 3})
    with pytest.raises(ValueError, match="Female.*>50K"):
        D.build_adv_dataset(train, D.AdvDataSpec(4, "balanced", "high_only"), 0)


def test_adv_unbalanced_follows_class_distribution():
    train = _grid_dataset({(0, 0): 3000, (1, 0): 1000, (0, 1): 900, (1, 1): 100})
    adv = D.build_adv_dataset(train, D.AdvDataSpec(2000, "unbalanced", "balanced"), 0)
    c = adv.stratum_counts()
    assert c[(0, 0)] + c[(1, 0)] == 1000 and c[(0, 1)] + c[(1, 1)] == 1000
    assert abs(c[(1, 0)] / 1000 - 0.25) < 0.05
    assert abs(c[(1, 1)] / 1000 - 0.10) < 0.04


def test_adv_deterministic():
    train = _grid_dataset({(0, 0): 30, (1, 0): 30, (0, 1): 30, (1, 1): 30})
    spec = D.AdvDataSpec(40, "balanced", "balanced")
    a = D.build_adv_dataset(train, spec, 3)
    b = D.build_adv_dataset(train, spec, 3)
    np.testing.assert_array_equal(a.source, b.source)


def test_adv_spec_validation():
    assert D.AdvDataSpec().size == 2000
    with pytest.raises(ValueError):
        D.AdvDataSpec(0)
    with pytest.raises(ValueError):
        D.AdvDataSpec(10, "skewed")
    with pytest.raises(ValueError):
        D.AdvDataSpec(10, "balanced", "medium")


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 300),
    st.sampled_from(D.Z_POLICIES),
    st.sampled_from(D.Y_POLICIES),
    st.integers(0, 2**32 - 1),
)
def test_adv_composition_property(size, zp, yp, seed):
    train = _grid_dataset({(0, 0): 50, (1, 0): 20, (0, 1): 30, (1, 1): 7})
    adv = D.build_adv_dataset(train, D.AdvDataSpec(size, zp, yp), seed)
    assert len(adv) == size
    assert set(adv.source) <= set(train.source)
    if yp == "low_only":
        assert not adv.y.any()
    elif yp == "high_only":
        assert adv.y.all()
    else:
        assert int(adv.y.sum()) == size // 2
    if zp == "balanced":
        for y in (0, 1):
            zs = adv.z[adv.y == y]
            assert len(zs) - 2 * int(zs.sum()) in (0, 1)


def test_batch_stream_cycles():
    batches = list(itertools.islice(D.BatchStream(3, 2, 0), 2))
    flat = np.concatenate(batches)
    assert set(flat) == {0, 1, 2} and len(flat) == 4


def test_batch_stream_epoch_fairness_and_determinism():
    idx = D.BatchStream(7, 3, 42).next_indices(7 * 5)  # 15 full epochs
    counts = np.bincount(idx.ravel(), minlength=7)
    assert counts.max() - counts.min() <= 1
    np.testing.assert_array_equal(idx, D.BatchStream(7, 3, 42).next_indices(35))


def test_batch_stream_chunking_invariant():
    a = D.BatchStream(10, 4, 1).next_indices(9)
    s = D.BatchStream(10, 4, 1)
    b = np.vstack([s.next_indices(2), s.next_indices(1), s.next_indices(6)])
    np.testing.assert_array_equal(a, b)


def test_batch_stream_datasets_and_empty():
    ds = _grid_dataset({(0, 0): 2, (1, 1): 3})
    first = next(D.batch_stream(ds, 4, 0))
    assert len(first) == 4
    with pytest.raises(ValueError):
        D.batch_stream(ds.subset([]), 4, 0)


def test_csr_matches_dense():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(20, 8)) * (rng.random((20, 8)) < 0.4)
    ds = D.Dataset(X, np.zeros(20), np.zeros(20))
    ptr, idx, val = ds.csr
    dense = np.zeros_like(X)
    for r in range(20):
        dense[r, idx[ptr[r] : ptr[r + 1]]] = val[ptr[r] : ptr[r + 1]]
    np.testing.assert_array_equal(dense, X)


# -- the real file ----------------------------------------------------------


def test_full_file_strata_match_table1(adult_path):
    recs = D.load_adult(adult_path)
    assert len(recs) == 32561
    ds = D.encode(recs, D.build_schema(recs))
    assert ds.stratum_counts() == TABLE1
    assert ds.n_features == 110


def test_full_file_encoding_total(adult_split):
    train, test, schema = adult_split
    # 110 over the whole file; the single Holand-Netherlands row lands in the test split
    assert train.n_features == test.n_features == schema.width == 109
    assert "native-country=Holand-Netherlands" not in schema.feature_names()
    assert np.all(np.isfinite(train.X)) and np.all(np.isfinite(test.X))
    offset = 0
    for col in schema.columns:
        if isinstance(col, D.CategoricalColumn):
            np.testing.assert_array_equal(train.X[:, offset : offset + col.width].sum(axis=1), 1.0)
        else:
            v = train.X[:, offset]
            assert abs(v.mean()) < 1e-9 and abs(v.std() - 1) < 1e-9
        offset += col.width


def test_full_file_split_sizes(adult_split):
    train, test, _ = adult_split
    assert (len(train), len(test)) == (24421, 8140)
    assert len(np.intersect1d(train.source, test.source)) == 0


def test_high_only_balanced_needs_replacement(adult_split):
    train, _, _ = adult_split
    n_female_high = train.stratum_counts()[(1, 1)]
    assert n_female_high < 1000
    assert abs(n_female_high - 0.75 * 1179) < 60
    adv = D.build_adv_dataset(train, D.AdvDataSpec(2000, "balanced", "high_only"), 0)
    fem = adv.source[adv.z == 1]
    assert len(fem) == 1000 and len(np.unique(fem)) == n_female_high
    assert set(adv.source) <= set(train.source)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from causalpipe.dataset import (
    BINARY,
    CONTINUOUS,
    ColumnType,
    DataError,
    Dataset,
    load_csv,
    make_censoring,
    parse_schema,
    rescale_outcome,
    save_csv,
    unscale_effect,
)


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_missing_mask_counts_na(tmp_path):
    ds = load_csv(write(tmp_path, "a,b\n1,2\nNA,3\n4,5\n"))
    assert ds.n_rows == 3 and int(ds.missing_mask.sum()) == 1
    assert ds.missing_counts()["a"] == 1


def test_empty_cell_is_missing(tmp_path):
    ds = load_csv(write(tmp_path, "a,b\n1,\n2,3\n"))
    assert math.isnan(ds.column("b")[0])


def test_auto_binary(tmp_path):
    ds = load_csv(write(tmp_path, "t,y\n0,1.5\n1,2.5\n1,0.1\n"))
    assert ds.type_of("t") == BINARY and ds.type_of("y") == CONTINUOUS


def test_ragged_row_named(tmp_path):
    with pytest.raises(DataError, match="row 3"):
        load_csv(write(tmp_path, "a,b\n1,2\n3\n"))


def test_bad_token_rejected(tmp_path):
    with pytest.raises(DataError, match="non-numeric"):
        load_csv(write(tmp_path, "a\n1\nnull\n"))


def test_missing_file():
    with pytest.raises(DataError):
        load_csv("/nonexistent/file.csv")


def test_schema_overrides_and_validates(tmp_path):
    p = write(tmp_path, "g,y\n0,1\n2,0\n1,1\n")
    ds = load_csv(p, {"g": "categorical(3)"})
    assert ds.type_of("g") == ColumnType("categorical", 3)
    with pytest.raises(DataError):
        load_csv(p, {"g": "binary"})
    with pytest.raises(DataError):
        load_csv(p, {"zz": "binary"})


def test_parse_schema():
    s = parse_schema("# types\nT=categorical(5)\nY = continuous\nC=auto\n")
    assert s == {"T": "categorical(5)", "Y": "continuous", "C": "auto"}
    with pytest.raises(DataError):
        parse_schema("T=weird")


def test_rescale_examples():
    ds = Dataset.from_columns({"y": [2.0, 4.0, 6.0]})
    r = rescale_outcome(ds, "y")
    assert r.column("y").tolist() == [0.0, 0.5, 1.0]
    assert r.bounds["y"] == (2.0, 6.0)
    assert unscale_effect((2.0, 6.0), 0.1) == pytest.approx(0.4, abs=1e-15)


def test_rescale_constant_rejected():
    with pytest.raises(DataError, match="constant"):
        rescale_outcome(Dataset.from_columns({"y": [3.0, 3.0]}), "y")


@given(
    hnp.arrays(float, st.integers(2, 30), elements=st.floats(-1e6, 1e6, allow_nan=False)),
    st.floats(-1, 1, allow_nan=False),
)
def test_rescale_unscale_exact(y, delta):
    if y.max() == y.min():
        return
    r = rescale_outcome(Dataset.from_columns({"y": y}), "y")
    lo, hi = r.bounds["y"]
    s = r.column("y")
    assert s.min() == 0.0 and s.max() == 1.0
    assert abs(unscale_effect((lo, hi), delta) - delta * (y.max() - y.min())) <= 1e-12 * max(1.0, abs(hi - lo))


def test_censoring_example():
    ds = Dataset.from_columns({"x": [1.0, np.nan, 3.0]})
    c = make_censoring(ds, "x")
    assert c.column("x").tolist() == [1.0, 2.0, 3.0]
    assert c.column("Q_x").tolist() == [1.0, 0.0, 1.0]
    assert c.type_of("Q_x") == BINARY


def test_censoring_guards():
    with pytest.raises(DataError, match="no missing"):
        make_censoring(Dataset.from_columns({"x": [1.0, 2.0]}), "x")
    with pytest.raises(DataError, match="entirely missing"):
        make_censoring(Dataset.from_columns({"x": [np.nan, np.nan]}), "x")


def test_censoring_binary_uses_mode():
    ds = Dataset.from_columns({"b": [1.0, 1.0, 0.0, np.nan]}, {"b": "binary"})
    assert make_censoring(ds, "b").column("b")[3] == 1.0


@given(hnp.arrays(float, st.integers(2, 40), elements=st.one_of(st.floats(-100, 100), st.just(np.nan))))
def test_censoring_invariants(x):
    miss = np.isnan(x)
    if miss.all() or not miss.any():
        return
    c = make_censoring(Dataset.from_columns({"x": x}), "x")
    assert not np.isnan(c.column("x")).any()
    assert (1 - c.column("Q_x")).sum() == miss.sum()


columns = st.integers(1, 4).flatmap(
    lambda w: st.integers(1, 15).flatmap(
        lambda n: st.tuples(
            hnp.arrays(float, (n, w), elements=st.one_of(st.floats(-1e300, 1e300, allow_nan=False), st.just(np.nan))),
            hnp.arrays(float, (n,), elements=st.one_of(st.sampled_from([0.0, 1.0]), st.just(np.nan))),
        )
    )
)


@settings(max_examples=60)
@given(columns)
def test_save_load_round_trip(tmp_path_factory, data):
    cont, binary = data
    cols = {f"c{j}": cont[:, j] for j in range(cont.shape[1])}
    cols["b"] = binary
    ds = Dataset.from_columns(cols, {"b": "binary"})
    p = tmp_path_factory.mktemp("rt") / "x.csv"
    save_csv(ds, p)
    back = load_csv(p, {k: str(t) for k, t in zip(ds.names, ds.types)})
    assert back.names == ds.names
    assert np.array_equal(np.isnan(back.values), np.isnan(ds.values))
    ok = ~np.isnan(ds.values)
    assert np.array_equal(back.values[ok], ds.values[ok])


def test_dataset_is_immutable():
    ds = Dataset.from_columns({"a": [1.0, 2.0]})
    with pytest.raises(ValueError):
        ds.values[0, 0] = 5.0
    ds2 = ds.with_column("b", [0.0, 1.0], BINARY)
    assert ds.names == ("a",) and ds2.names == ("a", "b")

"""Dataset loading, splitting, standardization and the toy generators."""

import logging

import numpy as np
import pytest

from amorgp.data import Dataset, load_csv, make_toy, save_csv, split


# ---------------------------------------------------------------------------
# toy generators

def test_snelson_shape_and_input_gap():
    data = make_toy("snelson1d", 50, 0)
    assert data.x.shape == (50, 1) and data.task == "regression"
    xs = data.x[:, 0]
    assert np.array_equal(xs, np.sort(xs))
    assert not np.any((xs > 2.3) & (xs < 3.3))


def test_banana_labels_and_shape():
    data = make_toy("banana", 41, 2)
    assert data.x.shape == (41, 2) and data.task == "binary"
    assert set(np.unique(data.y)) == {-1.0, 1.0}
    assert int((data.y > 0).sum()) == 20


def test_synthetic_regression_dimension():
    data = make_toy("synth-reg", 64, 1)
    assert data.x.shape == (64, 8) and data.task == "regression"


@pytest.mark.parametrize("kind", ["snelson1d", "banana", "synth-reg"])
def test_toys_are_seed_deterministic(kind):
    a = make_toy(kind, 30, 9)
    b = make_toy(kind, 30, 9)
    c = make_toy(kind, 30, 10)
    assert a.x.tobytes() == b.x.tobytes() and a.y.tobytes() == b.y.tobytes()
    assert a.x.tobytes() != c.x.tobytes()


def test_unknown_toy_name_errors():
    with pytest.raises(ValueError, match="unknown toy"):
        make_toy("spiral", 10, 0)


# ---------------------------------------------------------------------------
# standardization

def test_standardize_train_portion_is_zero_mean_unit_std():
    train, _ = split(make_toy("synth-reg", 40, 0), 0.8, 0)
    xs = train.standardized_x()
    assert np.allclose(xs.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(xs.std(axis=0), 1.0, atol=1e-12)
    ys = train.standardized_y()
    assert abs(ys.mean()) < 1e-12 and abs(ys.std() - 1.0) < 1e-12


def test_standardize_then_destandardize_is_identity():
    data = make_toy("snelson1d", 25, 4).compute_stats()
    back = data.destandardize_mean(data.standardized_y())
    assert np.max(np.abs(back - data.y)) < 1e-12


def test_binary_targets_pass_through_standardization():
    data = make_toy("banana", 20, 0).compute_stats()
    assert np.array_equal(data.standardized_y(), data.y)
    assert data.y_mean == 0.0 and data.y_std == 1.0


def test_missing_stats_is_an_error():
    data = make_toy("snelson1d", 10, 0)
    with pytest.raises(ValueError, match="stats"):
        data.standardized_x()


def test_constant_feature_std_floors_to_one():
    x = np.column_stack([np.arange(5.0), np.full(5, 3.0)])
    data = Dataset(x=x, y=np.arange(5.0), task="regression").compute_stats()
    assert data.x_std[1] == 1.0
    assert np.all(np.isfinite(data.standardized_x()))


# ---------------------------------------------------------------------------
# splitting

def test_split_sizes_and_disjointness():
    data = make_toy("synth-reg", 25, 0)
    train, test = split(data, 0.8, 0)
    assert train.n == 20 and test.n == 5
    merged = np.concatenate([train.x, test.x])
    assert np.array_equal(
        np.sort(merged, axis=0), np.sort(data.x, axis=0)
    )
    # no row appears on both sides
    train_rows = {row.tobytes() for row in train.x}
    assert all(row.tobytes() not in train_rows for row in test.x)


def test_split_statistics_come_from_train_only():
    data = make_toy("snelson1d", 30, 1)
    train, test = split(data, 0.8, 3)
    assert np.array_equal(test.x_mean, train.x.mean(axis=0))
    assert test.y_mean == train.y.mean()
    assert not np.array_equal(test.x_mean, data.x.mean(axis=0))


def test_split_is_seed_deterministic():
    data = make_toy("banana", 30, 5)
    a_train, a_test = split(data, 0.8, 11)
    b_train, b_test = split(data, 0.8, 11)
    c_train, _ = split(data, 0.8, 12)
    assert a_train.x.tobytes() == b_train.x.tobytes()
    assert a_test.y.tobytes() == b_test.y.tobytes()
    assert a_train.x.tobytes() != c_train.x.tobytes()


def test_split_rejects_degenerate_fractions():
    data = make_toy("snelson1d", 10, 0)
    for frac in (0.0, 1.0, -0.2, 1.7):
        with pytest.raises(ValueError, match="fraction"):
            split(data, frac, 0)


def test_split_keeps_at_least_one_point_per_side():
    data = make_toy("snelson1d", 4, 0)
    train, test = split(data, 0.99, 0)
    assert train.n == 3 and test.n == 1


# ---------------------------------------------------------------------------
# csv round trips

def test_save_load_regression_roundtrip(tmp_path):
    data = make_toy("snelson1d", 15, 2)
    path = tmp_path / "reg.csv"
    save_csv(data, str(path))
    back = load_csv(str(path), task="regression")
    assert back.x.tobytes() == data.x.tobytes()
    assert back.y.tobytes() == data.y.tobytes()
    assert back.feature_names == ["x0"]


def test_save_load_binary_roundtrip(tmp_path):
    data = make_toy("banana", 16, 3)
    path = tmp_path / "cls.csv"
    save_csv(data, str(path))
    text = path.read_text(encoding="utf-8")
    assert "-1" not in text.split("\n")[1]  # labels live as 0/1 on disk
    back = load_csv(str(path), task="binary")
    assert set(np.unique(back.y)) == {-1.0, 1.0}
    assert back.y.tobytes() == data.y.tobytes()


def test_load_target_by_name_and_index(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b,t\n1,2,3\n4,5,6\n2,9,4\n", encoding="utf-8")
    by_name = load_csv(str(path), target_column="b")
    assert np.array_equal(by_name.y, [2.0, 5.0, 9.0])
    assert by_name.feature_names == ["a", "t"]
    by_index = load_csv(str(path), target_column="0")
    assert np.array_equal(by_index.y, [1.0, 4.0, 2.0])
    default = load_csv(str(path))
    assert np.array_equal(default.y, [3.0, 6.0, 4.0])


def test_load_drops_constant_columns_with_warning(tmp_path, caplog):
    path = tmp_path / "c.csv"
    path.write_text("a,c,y\n1.0,5.0,0.1\n2.0,5.0,0.2\n3.0,5.0,0.3\n", encoding="utf-8")
    with caplog.at_level(logging.WARNING, logger="amorgp.data"):
        data = load_csv(str(path))
    assert data.feature_names == ["a"]
    assert data.x.shape == (3, 1)
    assert any("constant" in r.message and "c" in r.getMessage() for r in caplog.records)


def test_load_error_messages_name_the_location(tmp_path):
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("a,b,y\n1,2,3\n4,5\n", encoding="utf-8")
    with pytest.raises(ValueError, match=r"ragged\.csv:3"):
        load_csv(str(ragged))

    text = tmp_path / "text.csv"
    text.write_text("a,b,y\n1,oops,3\n", encoding="utf-8")
    with pytest.raises(ValueError, match=r"column 'b'"):
        load_csv(str(text))

    empty = tmp_path / "empty.csv"
    empty.write_text("", encoding="utf-8")
    with pytest.raises(ValueError, match="empty"):
        load_csv(str(empty))

    headed = tmp_path / "headed.csv"
    headed.write_text("a,y\n", encoding="utf-8")
    with pytest.raises(ValueError, match="no data rows"):
        load_csv(str(headed))


def test_load_rejects_non_binary_labels(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,y\n1,0\n2,2\n", encoding="utf-8")
    with pytest.raises(ValueError, match="0/1"):
        load_csv(str(path), task="binary")


def test_load_rejects_missing_target_name(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,y\n1,2\n3,4\n", encoding="utf-8")
    with pytest.raises(ValueError, match="'z'"):
        load_csv(str(path), target_column="z")


def test_all_constant_features_is_an_error(tmp_path):
    path = tmp_path / "flat.csv"
    path.write_text("a,y\n2,1\n2,2\n", encoding="utf-8")
    with pytest.raises(ValueError, match="no usable feature"):
        load_csv(str(path))


def test_dataset_shape_and_task_validation():
    with pytest.raises(ValueError, match="task"):
        Dataset(x=np.zeros((3, 1)), y=np.zeros(3), task="ranking")
    with pytest.raises(ValueError, match="shapes"):
        Dataset(x=np.zeros((3, 1)), y=np.zeros(4), task="regression")

import numpy as np
import pytest

from alssnn.dataio import Dataset, SplitSpec, load_csv, normalize, save_csv, split
from alssnn.errors import DataError


def make_ds(n=20, m=2, p=1, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, m)), rng.normal(size=(n, p)), dt=0.1, name="x")


def test_dataset_shapes_and_props():
    ds = make_ds(n=15, m=3, p=2)
    assert ds.n_samples == 15
    assert ds.n_inputs == 3
    assert ds.n_outputs == 2


def test_dataset_accepts_1d_channels():
    ds = Dataset(np.arange(5.0), np.arange(5.0), dt=1.0)
    assert ds.u.shape == (5, 1)
    assert ds.y.shape == (5, 1)


def test_dataset_rejects_length_mismatch():
    with pytest.raises(DataError):
        Dataset(np.zeros((4, 1)), np.zeros((5, 1)))


def test_dataset_rejects_nonfinite():
    u = np.zeros((4, 1))
    y = np.zeros((4, 1))
    y[2, 0] = np.nan
    with pytest.raises(DataError):
        Dataset(u, y)


def test_dataset_rejects_bad_dt():
    with pytest.raises(DataError):
        Dataset(np.zeros((4, 1)), np.zeros((4, 1)), dt=0.0)


def test_dataset_arrays_read_only():
    ds = make_ds()
    with pytest.raises(ValueError):
        ds.u[0, 0] = 1.0


def test_split_sizes_and_order():
    ds = make_ds(n=21)
    tr, te = split(ds, SplitSpec(0.5))
    assert tr.n_samples == 10  # floor(21 * 0.5)
    assert te.n_samples == 11
    assert np.array_equal(np.vstack([tr.u, te.u]), ds.u)
    assert tr.name.endswith(":train")
    assert te.name.endswith(":test")


def test_split_fraction_validated():
    with pytest.raises(DataError):
        SplitSpec(0.0)
    with pytest.raises(DataError):
        SplitSpec(1.0)


def test_split_requires_two_samples_per_side():
    ds = make_ds(n=5)
    with pytest.raises(DataError):
        split(ds, SplitSpec(0.1))  # train side would get 0 samples


def test_csv_round_trip_bit_exact(tmp_path):
    ds = make_ds(n=30, m=2, p=2, seed=3)
    path = tmp_path / "d.csv"
    save_csv(ds, path)
    back = load_csv(path)
    # %.17g is enough digits for float64 round trips
    assert np.array_equal(back.u, ds.u)
    assert np.array_equal(back.y, ds.y)
    assert back.dt == ds.dt


def test_csv_header_layout(tmp_path):
    ds = make_ds(n=5, m=2, p=1)
    path = tmp_path / "d.csv"
    save_csv(ds, path)
    header = path.read_text().splitlines()[0]
    assert header == "t,u1,u2,y1"


def test_load_csv_missing_file():
    with pytest.raises(DataError):
        load_csv("/nonexistent/nowhere.csv")


def test_load_csv_bad_cell_cites_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,u1,y1\n0,1,2\n0.1,oops,3\n")
    with pytest.raises(DataError, match="line 3"):
        load_csv(path)


def test_normalize_zero_mean_unit_std():
    ds = make_ds(n=200, m=2, p=2, seed=1)
    out, params = normalize(ds)
    assert np.allclose(out.u.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(out.u.std(axis=0), 1.0, rtol=1e-12)
    assert np.allclose(out.y.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(out.y.std(axis=0), 1.0, rtol=1e-12)
    # recorded parameters invert the transform
    restored = out.y * np.asarray(params["y_std"]) + np.asarray(params["y_mean"])
    assert np.allclose(restored, ds.y, atol=1e-12)


def test_normalize_constant_channel_guard():
    u = np.ones((10, 1))
    y = np.arange(10.0)
    ds = Dataset(u, y, dt=1.0)
    out, params = normalize(ds)
    assert np.allclose(out.u, 0.0)
    assert params["u_std"] == [1.0]

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from samplecompress.data import (
    DataError,
    Dataset,
    IdxParseError,
    filter_digit_pair,
    load_csv,
    load_idx,
    split,
    synth_classify,
    synth_regress,
    target_bounds,
    write_idx,
)

# (lower, min, max, upper) reference ranges at 2 decimals
REGRESSION_RANGES = {
    "Powerplant": (412.71, 420.26, 495.76, 503.31),
    "Infrared": (35.40, 35.75, 39.3, 39.66),
    "Airfoil": (99.62, 103.38, 140.99, 144.75),
    "Parkinson": (1.59, 5.04, 39.51, 42.96),
    "Concrete": (0.0, 2.33, 82.6, 90.63),
}
LOSS_MAX = {"Powerplant": 90.6, "Infrared": 4.26, "Airfoil": 45.13, "Parkinson": 41.37, "Concrete": 90.63}


@pytest.fixture
def idx_files(tmp_path):
    images = np.arange(3 * 2 * 4, dtype=np.uint8).reshape(3, 2, 4) * 10
    labels = np.array([7, 1, 7], dtype=np.uint8)
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(img, lab, images, labels)
    return img, lab, images, labels


class TestIdx:
    def test_round_trip(self, idx_files):
        img, lab, images, labels = idx_files
        d = load_idx(img, lab)
        assert d.X.shape == (3, 8)
        assert d.X[1, 0] == pytest.approx(80 / 255)
        np.testing.assert_array_equal(d.y, labels)
        assert d.X.min() >= 0 and d.X.max() <= 1

    def test_header_bytes(self, idx_files):
        img, lab, *_ = idx_files
        raw = img.read_bytes()
        assert struct.unpack(">IIII", raw[:16]) == (0x803, 3, 2, 4)
        assert len(raw) == 16 + 3 * 8

    def test_bad_magic(self, idx_files):
        img, lab, *_ = idx_files
        raw = bytearray(img.read_bytes())
        raw[3] = 0x02
        img.write_bytes(bytes(raw))
        with pytest.raises(IdxParseError, match="magic") as e:
            load_idx(img, lab)
        assert e.value.offset == 0

    def test_truncated_pixels(self, idx_files):
        img, lab, *_ = idx_files
        img.write_bytes(img.read_bytes()[:-1])
        with pytest.raises(IdxParseError, match="truncated"):
            load_idx(img, lab)

    def test_truncated_header(self, idx_files):
        img, lab, *_ = idx_files
        img.write_bytes(img.read_bytes()[:6])
        with pytest.raises(IdxParseError, match="truncated"):
            load_idx(img, lab)

    def test_count_mismatch(self, tmp_path):
        img, lab = tmp_path / "i", tmp_path / "l"
        write_idx(img, lab, np.zeros((3, 2, 2)), np.zeros(2))
        with pytest.raises(IdxParseError, match="count"):
            load_idx(img, lab)


class TestFilter:
    def test_pair_order_and_labels(self):
        d = Dataset(np.arange(6.0).reshape(-1, 1), np.array([8, 3, 0, 8, 0, 5]))
        f = filter_digit_pair(d, 8, 0)
        np.testing.assert_array_equal(f.X[:, 0], [0, 2, 3, 4])
        np.testing.assert_array_equal(f.y, [1, 0, 1, 0])
        assert f.meta["pair"] == [0, 8]

    def test_same_digit(self):
        d = Dataset(np.zeros((2, 1)), np.array([3, 3]))
        with pytest.raises(DataError):
            filter_digit_pair(d, 3, 3)

    def test_empty(self):
        d = Dataset(np.zeros((2, 1)), np.array([3, 4]))
        with pytest.raises(DataError):
            filter_digit_pair(d, 0, 1)


class TestSplit:
    @pytest.mark.parametrize(
        "n,builtin,sizes",
        [
            (9568, False, (7751, 861, 956)),
            (100, False, (81, 9, 10)),
            (13007, True, (11707, 1300, None)),
            (11774, True, (10597, 1177, None)),
        ],
    )
    def test_sizes(self, n, builtin, sizes):
        d = Dataset(np.zeros((n, 1)), np.zeros(n))
        tr, va, te = split(d, 1, builtin)
        assert (len(tr), len(va), None if te is None else len(te)) == sizes

    @settings(max_examples=30, deadline=None)
    @given(st.integers(10, 400), st.integers(0, 10**6), st.booleans())
    def test_partition(self, n, seed, builtin):
        d = Dataset(np.arange(n, dtype=float).reshape(-1, 1), np.zeros(n))
        parts = [p for p in split(d, seed, builtin) if p is not None]
        ids = np.concatenate([p.X[:, 0] for p in parts])
        assert len(ids) == n and len(set(ids)) == n
        again = [p for p in split(d, seed, builtin) if p is not None]
        for a, b in zip(parts, again):
            assert np.array_equal(a.X, b.X)

    def test_seed_changes_split(self):
        d = Dataset(np.arange(200.0).reshape(-1, 1), np.zeros(200))
        assert not np.array_equal(split(d, 1)[0].X, split(d, 2)[0].X)

    def test_too_small(self):
        with pytest.raises(DataError):
            split(Dataset(np.zeros((9, 1)), np.zeros(9)), 0)


class TestTargetBounds:
    @pytest.mark.parametrize("name", list(REGRESSION_RANGES))
    def test_reference_ranges(self, name):
        lower, lo, hi, upper = REGRESSION_RANGES[name]
        tb = target_bounds([lo, (lo + hi) / 2, hi])
        # reference values are rounded to 2 decimals; x.xx5 edges may round either way
        assert abs(tb.y_lo - lower) <= 0.005 + 1e-9
        assert abs(tb.y_hi - upper) <= 0.005 + 1e-9
        assert round(upper - lower, 2) == LOSS_MAX[name]
        assert tb.sigma == pytest.approx((hi - lo) / 2)
        assert tb.y_lo <= lo <= hi <= tb.y_hi

    def test_clamp_only_for_nonnegative(self):
        assert target_bounds([2.33, 82.6]).y_lo == 0.0
        assert target_bounds([-1.0, 9.0]).y_lo == pytest.approx(-2.0)

    def test_constant_warns(self, caplog):
        tb = target_bounds([3.0, 3.0])
        assert tb.loss_max > 0
        assert "constant" in caplog.text

    def test_too_few(self):
        with pytest.raises(DataError):
            target_bounds([1.0])


class TestSynthetic:
    def test_classify_deterministic(self):
        a, b = synth_classify(300, seed=4), synth_classify(300, seed=4)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
        assert not np.array_equal(a.X, synth_classify(300, seed=5).X)

    def test_classify_separated(self):
        d = synth_classify(1000, separation=10.0, seed=0)
        assert np.all((d.X[:, 0] > 0) == (d.y == 1))

    def test_regress_noiseless_is_linear(self):
        d = synth_regress(200, d=3, noise=0.0, seed=1)
        np.testing.assert_allclose(d.X @ np.array(d.meta["w"]), d.y, atol=1e-12)


class TestCsv:
    def test_load(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,target\n1,2,3\n4,5,6\n")
        d = load_csv(p)
        assert d.X.shape == (2, 2)
        np.testing.assert_array_equal(d.y, [3, 6])
        assert d.meta["columns"] == ["a", "b", "target"]

    @pytest.mark.parametrize("text", ["a,t\n", "a,t\n1,x\n", "t\n1\n2\n", "a,t\n1,nan\n"])
    def test_bad(self, tmp_path, text):
        p = tmp_path / "d.csv"
        p.write_text(text)
        with pytest.raises(DataError):
            load_csv(p)

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(tmp_path / "absent.csv")


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset(np.zeros((2, 1)), np.zeros(3))

import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from streamcast.errors import ContractError
from streamcast.losses import (
    PLATFORM_ECON,
    SAPE,
    SQUARED,
    LossFunctionSpec,
    LossStream,
    batch_loss,
    evaluation_summary,
    pointwise_loss,
    write_loss_tables,
)

ONE_ULP = 1e-15
demand = st.floats(0, 1e4, allow_nan=False)


def test_reference_values():
    assert pointwise_loss(5, 0, SQUARED) == 25
    assert pointwise_loss(0, 3.2, SAPE) == 100
    assert pointwise_loss(5, 5, SAPE) == 0
    assert pointwise_loss(0, 0, SAPE) == 0
    assert pointwise_loss(5, 0, PLATFORM_ECON) == pytest.approx(5.70, rel=ONE_ULP, abs=0)
    assert pointwise_loss(5, 10, PLATFORM_ECON) == pytest.approx(2.70, rel=ONE_ULP, abs=0)
    assert pointwise_loss(7, 7, PLATFORM_ECON) == 0


def test_spec_validation():
    with pytest.raises(ContractError):
        LossFunctionSpec("ape")
    with pytest.raises(ContractError):
        LossFunctionSpec("econ", 0.0, 1.0)
    assert LossFunctionSpec.parse("econ") is PLATFORM_ECON


@given(demand, demand)
def test_symmetries(a, f):
    assert 0 <= pointwise_loss(a, f, SAPE) <= 100
    assert pointwise_loss(a, f, SAPE) == pointwise_loss(f, a, SAPE)
    assert pointwise_loss(a, f, SQUARED) == pointwise_loss(f, a, SQUARED)
    swapped = LossFunctionSpec("econ", PLATFORM_ECON.c_over, PLATFORM_ECON.c_under)
    assert pointwise_loss(a, f, PLATFORM_ECON) == pointwise_loss(f, a, swapped)


@given(demand, demand)
def test_econ_is_piecewise_linear(a, f):
    v = pointwise_loss(a, f, PLATFORM_ECON)
    if f < a:
        assert v == 1.14 * (a - f)
    elif f > a:
        assert v == 0.54 * (f - a)
    else:
        assert v == 0
    assert (v == 0) == (a == f)


def test_vectorised():
    out = pointwise_loss(np.array([1.0, 2.0]), np.array([0.0, 0.0]), SQUARED)
    np.testing.assert_array_equal(out, [1, 4])


def test_batch_loss():
    assert batch_loss([1, 2], [0, 0], SQUARED) == 5
    assert batch_loss([3, 4], [3, 4], SAPE) == 0
    r = np.random.default_rng(0)
    a, f = r.random(15) * 20, r.random(15) * 20
    assert batch_loss(a, f, PLATFORM_ECON) == pytest.approx(sum(pointwise_loss(x, y, PLATFORM_ECON) for x, y in zip(a, f)))
    with pytest.raises(ContractError):
        batch_loss([1, 2], [1], SQUARED)


@given(st.lists(st.tuples(demand, demand), min_size=2, max_size=30), st.integers(1, 29))
def test_batch_loss_additive(pairs, cut):
    cut = min(cut, len(pairs) - 1)
    a, f = map(np.array, zip(*pairs))
    whole = batch_loss(a, f, PLATFORM_ECON)
    assert whole == pytest.approx(batch_loss(a[:cut], f[:cut], PLATFORM_ECON) + batch_loss(a[cut:], f[cut:], PLATFORM_ECON))


def test_loss_stream():
    ls = LossStream(start_batch=5)
    for v in (1.0, 2.0, 3.0):
        ls.append(v)
    ls.truncate_after(2)
    assert ls.values == [3.0] and ls.start_batch == 7
    with pytest.raises(ContractError):
        ls.append(-1.0)
    with pytest.raises(ContractError):
        ls.append(float("inf"))


class TestSummary:
    def test_constant_error_rmse(self):
        a = np.full((4, 30), 10.0)
        t = evaluation_summary(a, a - 3, SQUARED, 15)
        assert t.cells.shape == (15, 2) and np.allclose(t.cells, 3) and t.overall == pytest.approx(3)

    def test_perfect(self):
        a = np.full((3, 15), 2.0)
        assert np.all(evaluation_summary(a, a, SAPE, 15).cells == 0)

    def test_toy_by_hand(self):
        # H=2, two days ahead, two issue days
        a = np.array([[1.0, 2, 3, 4], [5, 6, 7, np.nan]])
        f = np.zeros((2, 4))
        t = evaluation_summary(a, f, PLATFORM_ECON, 2)
        c = 1.14
        expected = np.array([[c * (1 + 5) / 2, c * (3 + 7) / 2], [c * (2 + 6) / 2, c * 4]])
        np.testing.assert_allclose(t.cells, expected)
        np.testing.assert_array_equal(t.counts, [[2, 2], [2, 1]])
        assert t.overall == pytest.approx(c * 28 / 7)

    def test_empty(self):
        t = evaluation_summary(np.empty((0, 0)), np.empty((0, 0)), SQUARED, 15)
        assert t.cells.size == 0

    def test_csv(self, tmp_path):
        a = np.full((2, 15), 1.0)
        path = tmp_path / "l.csv"
        write_loss_tables(path, [evaluation_summary(a, a, SAPE, 15)], seed=9)
        lines = path.read_text().splitlines()
        assert lines[0] == "# seed=9" and lines[1] == "hour,day_ahead,loss_kind,value"
        rows = list(csv.reader(lines[2:]))
        assert len(rows) == 15 and rows[0] == ["1", "1", "sape", "0.0"]

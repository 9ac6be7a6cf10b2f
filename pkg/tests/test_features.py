from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aclab.errors import ParameterError
from aclab.features import (
    FeatureMap,
    m2_features,
    make_centered_basis,
    make_centered_onehot,
    make_random_bounded,
    phi,
)

r = 1 / np.sqrt(2)


def test_centered_onehot_two_states():
    fm = make_centered_onehot(2)
    np.testing.assert_allclose(fm.table, [[r, -r], [-r, r]], atol=1e-15)
    assert fm.kind == "centered_onehot"


@pytest.mark.parametrize("n", [2, 3, 5, 10])
def test_centered_onehot_properties(n):
    fm = make_centered_onehot(n)
    assert fm.dim == n
    np.testing.assert_allclose(np.linalg.norm(fm.table, axis=1), 1.0, atol=1e-12)
    assert np.abs(fm.table.sum(axis=0)).max() <= 1e-12
    assert np.linalg.norm(fm.table.T @ np.ones(n)) <= 1e-10
    assert np.linalg.matrix_rank(fm.table) == n - 1


@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_centered_basis_spans_mean_zero_subspace(n):
    fm = make_centered_basis(n)
    assert fm.dim == n - 1
    assert np.linalg.norm(fm.table.T @ np.ones(n)) <= 1e-10
    assert np.linalg.matrix_rank(fm.table) == n - 1
    assert np.linalg.norm(fm.table, axis=1).max() <= 1 + 1e-12
    # every mean-zero vector is reproduced exactly
    v = np.random.default_rng(n).standard_normal(n)
    v -= v.mean()
    w, *_ = np.linalg.lstsq(fm.table, v, rcond=None)
    np.testing.assert_allclose(fm.table @ w, v, atol=1e-12)


def test_centered_too_small():
    with pytest.raises(ParameterError):
        make_centered_onehot(1)
    with pytest.raises(ParameterError):
        make_centered_basis(1)


def test_random_bounded_unit_rows_and_determinism():
    a = make_random_bounded(5, 2, seed=3)
    b = make_random_bounded(5, 2, seed=3)
    assert a.table.shape == (5, 2)
    np.testing.assert_allclose(np.linalg.norm(a.table, axis=1), 1.0, atol=1e-12)
    assert a.table.tobytes() == b.table.tobytes()


def test_random_bounded_full_rank():
    assert np.linalg.matrix_rank(make_random_bounded(5, 5, seed=1).table) == 5


def test_m2_fixture_rows():
    fm = m2_features()
    np.testing.assert_array_equal(phi(fm, 0), [1.0])
    np.testing.assert_array_equal(phi(fm, 1), [-1.0])


def test_phi_lookup_and_range():
    fm = make_centered_onehot(3)
    np.testing.assert_array_equal(phi(fm, 0), fm.table[0])
    with pytest.raises(ParameterError):
        phi(fm, 3)
    with pytest.raises(ParameterError):
        phi(fm, -1)


def test_rows_above_unit_norm_rejected():
    with pytest.raises(ParameterError):
        FeatureMap(np.array([[1.0, 0.1]]))


@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 10_000))
def test_all_constructors_bounded(n, d, seed):
    for fm in (make_centered_onehot(n), make_centered_basis(n), make_random_bounded(n, d, seed)):
        assert np.linalg.norm(fm.table, axis=1).max() <= 1 + 1e-12


def test_round_trip_dict():
    fm = make_random_bounded(4, 3, 9)
    back = FeatureMap.from_dict(fm.to_dict())
    assert back.table.tobytes() == fm.table.tobytes() and back.kind == fm.kind

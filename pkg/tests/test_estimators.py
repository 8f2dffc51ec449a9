from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fewtreat import Dataset, ProxyKind, ProxyModel, control_residuals, diff_in_means, errors, proxy_effect
from fewtreat.estimators import control_mean_proxy

from .conftest import datasets


def ds(y, d, x=None):
    return Dataset.from_arrays(y, d, x)


class TestDiffInMeans:
    @pytest.mark.parametrize(
        "y, d, expected",
        [
            ([1.0, 0.0, 2.0], [1, 0, 0], 0.0),
            ([3.0, 1.0, 1.0], [1, 0, 0], 2.0),
            ([2.0, 4.0, 1.0, 3.0], [1, 1, 0, 0], 1.0),
        ],
    )
    def test_examples(self, y, d, expected):
        assert diff_in_means(ds(y, d)) == expected

    @given(datasets(), st.floats(-100, 100))
    def test_translation_invariance(self, data, k):
        shifted = ds(data.y + k, data.d)
        assert diff_in_means(shifted) == pytest.approx(diff_in_means(data), abs=1e-9)

    @given(datasets(), st.floats(-100, 100))
    def test_effect_equivariance(self, data, k):
        shifted = ds(data.y + k * data.d, data.d)
        assert diff_in_means(shifted) == pytest.approx(diff_in_means(data) + k, abs=1e-9)


class TestProxyEffect:
    def test_single_treated(self):
        assert proxy_effect(ds([3.0, 0.0], [1, 0]), ProxyModel(ProxyKind.EXTERNAL, [1.0])) == 2.0

    def test_two_treated(self):
        pm = ProxyModel(ProxyKind.EXTERNAL, [1.5, 2.5])
        assert proxy_effect(ds([2.0, 4.0, 0.0], [1, 1, 0]), pm) == 1.0

    def test_length_mismatch(self):
        with pytest.raises(errors.LengthMismatch):
            proxy_effect(ds([2.0, 4.0, 0.0], [1, 1, 0]), ProxyModel(ProxyKind.EXTERNAL, [1.0]))

    @given(datasets())
    def test_control_mean_proxy_is_diff_in_means(self, data):
        assert proxy_effect(data, control_mean_proxy(data)) == diff_in_means(data)


class TestControlResiduals:
    def test_demeaning(self):
        np.testing.assert_array_equal(control_residuals(ds([9.0, 1.0, 3.0], [1, 0, 0])), [-1.0, 1.0])

    def test_null_imposed(self):
        res = control_residuals(ds([5.0, 2.0, 2.0], [1, 0, 0]), null_c=3.0)
        np.testing.assert_array_equal(res, [0.0, 0.0, 0.0])

    def test_single_control(self):
        np.testing.assert_array_equal(control_residuals(ds([4.0, 0.0], [1, 0])), [0.0])

    @given(datasets())
    def test_residuals_sum_to_zero(self, data):
        res = control_residuals(data)
        assert res.size == data.n0
        scale = max(1.0, float(np.abs(data.y_control).max()))
        assert abs(res.sum()) <= 1e-12 * scale * res.size

    @given(datasets(), st.floats(-10, 10))
    def test_null_imposed_length(self, data, c):
        assert control_residuals(data, c).size == data.n

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from braingraphs.errors import ConstantSignal, DegenerateRetention, ValidationError
from braingraphs.signal import (
    BoldMatrix,
    RetentionSpec,
    apply_threshold,
    compute_threshold,
    percentile_count,
    retain_high_amplitude,
    z_normalize,
)

from .oracles import top_k_abs_mask

Z_EXAMPLE = np.array([0.1, -2.0, 0.5, 3.0, -0.2, 1.2, -1.5, 0.05, 0.8, -0.9])


def _normalized(col):
    """NormalizedMatrix whose single column is exactly ``col`` (plus a dummy column)."""
    col = np.asarray(col, dtype=float)
    z = z_normalize(np.column_stack([np.arange(col.size, dtype=float), np.arange(col.size)[::-1]]))
    return z.with_values(np.column_stack([col, col[::-1]]))


def test_bold_matrix_rejects_small_or_nonfinite():
    with pytest.raises(ValidationError):
        BoldMatrix(np.zeros((1, 3)))
    with pytest.raises(ValidationError):
        BoldMatrix(np.zeros((5, 1)))
    bad = np.ones((4, 2))
    bad[2, 1] = np.nan
    with pytest.raises(ValidationError):
        BoldMatrix(bad)


def test_bold_matrix_is_read_only():
    b = BoldMatrix(np.arange(6.0).reshape(3, 2))
    with pytest.raises(ValueError):
        b.values[0, 0] = 9.0


def test_z_normalize_hand_example():
    # [1, 2, 3]: mean 2, population std sqrt(2/3) -> -+sqrt(3/2)
    z = z_normalize(np.array([[1.0, 4.0], [2.0, 1.0], [3.0, 0.0]]))
    np.testing.assert_allclose(z.values[:, 0], [-math.sqrt(1.5), 0.0, math.sqrt(1.5)], atol=1e-12)
    assert abs(z.values[:, 0].mean()) < 1e-9
    assert abs(z.values[:, 0].std() - 1) < 1e-9
    np.testing.assert_allclose(z.mean, [2.0, 5 / 3])


def test_z_normalize_constant_aborts_by_default():
    raw = np.column_stack([np.arange(5.0), np.full(5, 2.5)])
    with pytest.raises(ConstantSignal) as exc:
        z_normalize(raw)
    assert exc.value.roi == 1


def test_z_normalize_constant_drop_policy():
    raw = BoldMatrix(np.column_stack([np.arange(5.0), np.full(5, 2.5), np.arange(5.0) ** 2]), ["a", "b", "c"])
    with pytest.warns(UserWarning):
        z = z_normalize(raw, on_constant="drop")
    assert z.kept == (0, 2)
    assert z.roi_labels == ("a", "c")
    assert z.meta["dropped_rois"] == [1]


def test_z_normalize_idempotent(rng):
    z1 = z_normalize(rng.normal(3, 2, size=(50, 4)))
    z2 = z_normalize(z1.values)
    np.testing.assert_allclose(z2.values, z1.values, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (20, 3), elements=st.floats(-1e3, 1e3)))
def test_z_normalize_moments(values):
    if any(np.all(c == c[0]) for c in values.T) or np.any(values.std(axis=0) < 1e-6):
        return
    z = z_normalize(values)
    np.testing.assert_allclose(z.values.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(z.values.std(axis=0), 1, atol=1e-9)


def test_percentile_count_avoids_float_rounding():
    # 30 / 100 * 10 would be 3.0000000000000004
    assert percentile_count(30, 10) == 3
    assert percentile_count(30, 1200) == 360
    assert percentile_count(100, 7) == 7
    assert percentile_count(30, 11) == 4


def test_threshold_percentile_keeps_top_three_of_ten():
    z = _normalized(Z_EXAMPLE)
    theta = compute_threshold(z, RetentionSpec.percentile(30))
    assert theta.shape == (2,)
    # sorted |z| descending: 3.0, 2.0, 1.5, 1.2 ...; third-largest is the cut
    assert theta[0] == 1.5
    assert int(np.sum(np.abs(Z_EXAMPLE) >= theta[0])) == 3


def test_threshold_percentile_100_is_min():
    z = _normalized(Z_EXAMPLE)
    theta = compute_threshold(z, RetentionSpec.percentile(100))
    assert theta[0] == np.min(np.abs(Z_EXAMPLE))


def test_threshold_stddev_is_global(rng):
    z = z_normalize(rng.normal(size=(100, 6)))
    theta = compute_threshold(z, RetentionSpec.stddev(1))
    assert isinstance(theta, float)
    assert abs(theta - 1.0) < 1e-9


def test_retention_example_gamma0_and_gamma1():
    z = _normalized(Z_EXAMPLE)
    out0 = retain_high_amplitude(z, RetentionSpec.percentile(30, binarize=False))
    out1 = retain_high_amplitude(z, RetentionSpec.percentile(30, binarize=True))
    np.testing.assert_array_equal(out0.values[:, 0], [0, -2.0, 0, 3.0, 0, 0, -1.5, 0, 0, 0])
    np.testing.assert_array_equal(out1.values[:, 0], [0, 1, 0, 1, 0, 0, 1, 0, 0, 0])
    assert out0.meta["retention"]["scope"] == "per_roi"
    assert out0.meta["retention"]["retained"] == [3, 3]


def test_zero_threshold_is_identity_or_ones():
    np.testing.assert_array_equal(apply_threshold(Z_EXAMPLE, 0.0, False), Z_EXAMPLE)
    np.testing.assert_array_equal(apply_threshold(Z_EXAMPLE, 0.0, True), np.ones(10))


def test_degenerate_retention():
    z = z_normalize(np.random.default_rng(1).normal(size=(8, 2)))
    with pytest.raises(DegenerateRetention):
        retain_high_amplitude(z, RetentionSpec.percentile(10))


def test_stddev_retention_records_global_theta(rng):
    z = z_normalize(rng.normal(size=(200, 3)))
    out = retain_high_amplitude(z, RetentionSpec.stddev(1, True))
    assert out.meta["retention"]["scope"] == "global"
    assert set(np.unique(out.values)) <= {0.0, 1.0}


@pytest.mark.parametrize("bad", [(0.0,), (150.0,)])
def test_percentile_spec_range(bad):
    with pytest.raises(ValidationError):
        RetentionSpec.percentile(*bad)


def test_spec_names_round_trip():
    for name in ("p30-g0", "p30-g1", "sd1-g0", "sd1-g1"):
        assert RetentionSpec.parse(name).name == name
    with pytest.raises(ValidationError):
        RetentionSpec.parse("q3")


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, st.integers(10, 80), elements=st.floats(-5, 5)),
    st.floats(0.0, 3.0),
    st.floats(0.0, 3.0),
)
def test_retention_properties(values, theta_a, theta_b):
    g0 = apply_threshold(values, theta_a, False)
    g1 = apply_threshold(values, theta_a, True)
    # identical support under both gammas
    np.testing.assert_array_equal(g0 != 0, (g1 != 0) & (values != 0))
    support = g1 != 0
    assert set(np.unique(g1)) <= {0.0, 1.0}
    # gamma=0 equals the input on its support, bit for bit
    assert g0[support].tobytes() == values[support].tobytes()
    # raising the threshold never adds a retained sample
    lo, hi = sorted((theta_a, theta_b))
    assert np.all(apply_threshold(values, hi, True) <= apply_threshold(values, lo, True))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(10, 60), elements=st.integers(-6, 6).map(float)))
def test_percentile_matches_sort_oracle_with_ties(values):
    if np.all(values == values[0]):
        return
    z = _normalized(values)
    theta = compute_threshold(z, RetentionSpec.percentile(30))
    mask = np.abs(values) >= theta[0]
    assert mask.tolist() == top_k_abs_mask(values.tolist(), 30)
    assert mask.sum() >= math.ceil(0.3 * values.size - 1e-9)

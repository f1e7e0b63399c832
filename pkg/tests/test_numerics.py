import numpy as np
import pytest
from helpers import circulant_conv_matrix
from hypothesis import given
from hypothesis import strategies as st

from modcrit.numerics import (
    RngStream,
    conv_singular_values,
    flatten_params,
    float_key,
    frobenius_norm,
    gaussian_sample,
    spectral_norm_dense,
)


def test_rng_stream_is_stateless():
    s = RngStream(3, (1, 2))
    a = s.generator().standard_normal(5)
    b = s.generator().standard_normal(5)
    assert np.array_equal(a, b)


def test_rng_children_are_distinct():
    s = RngStream(3)
    a = s.child(0).generator().standard_normal(4)
    b = s.child(1).generator().standard_normal(4)
    c = RngStream(4).child(0).generator().standard_normal(4)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_float_key_distinguishes_close_values():
    assert float_key(0.1) != float_key(0.1 + 1e-17 + 2e-17)
    assert float_key(0.5) == float_key(0.5)


def test_gaussian_sample_zero_sigma_and_errors():
    z = gaussian_sample((3, 2), 0.0, RngStream(1))
    assert z.shape == (3, 2) and not z.any()
    with pytest.raises(ValueError):
        gaussian_sample(3, -0.1, RngStream(1))


def test_gaussian_sample_scale():
    x = gaussian_sample(200_000, 0.3, RngStream(2))
    assert abs(x.std() - 0.3) < 0.005


def test_frobenius_and_flatten():
    assert frobenius_norm(np.array([[3.0, 4.0]])) == pytest.approx(5.0)
    flat = flatten_params([np.ones((2, 2)), np.arange(3.0)])
    assert flat.tolist() == [1, 1, 1, 1, 0, 1, 2]


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
def test_power_iteration_matches_svd(rows, cols, seed):
    m = np.random.default_rng(seed).standard_normal((rows, cols))
    res = spectral_norm_dense(m, rng=RngStream(seed))
    assert res.converged
    assert res.value == pytest.approx(np.linalg.svd(m, compute_uv=False)[0], rel=1e-6)


def test_power_iteration_zero_matrix():
    res = spectral_norm_dense(np.zeros((3, 4)))
    assert res.value == 0.0 and res.converged


def test_power_iteration_reports_nonconvergence():
    # two equal top singular values with opposite sign never settle in one step
    m = np.diag([1.0, 1.0 - 1e-12, 0.5])
    res = spectral_norm_dense(m, max_iters=2, tol=0.0)
    assert not res.converged
    assert res.iterations == 2


def test_power_iteration_rejects_bad_input():
    with pytest.raises(ValueError):
        spectral_norm_dense(np.ones(3))


def test_conv_spectrum_delta_kernel_is_identity():
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1.0
    sv = conv_singular_values(k, 8)
    assert sv.shape == (64,)
    assert np.allclose(sv, 1.0)


def test_conv_spectrum_count_and_order():
    k = np.random.default_rng(0).standard_normal((3, 2, 3, 3))
    sv = conv_singular_values(k, 5)
    assert sv.shape == (25 * 2,)
    assert np.all(np.diff(sv) <= 0)


@given(st.integers(1, 3), st.integers(1, 3), st.integers(3, 6), st.integers(0, 10_000))
def test_conv_spectrum_matches_explicit_operator(c_out, c_in, n, seed):
    k = np.random.default_rng(seed).standard_normal((c_out, c_in, 3, 3))
    explicit = np.sort(np.linalg.svd(circulant_conv_matrix(k, n), compute_uv=False))[::-1]
    fast = conv_singular_values(k, n)
    assert np.max(np.abs(explicit[: fast.size] - fast)) < 1e-9


def test_conv_spectrum_errors():
    with pytest.raises(ValueError):
        conv_singular_values(np.ones((1, 1, 5, 5)), 4)
    with pytest.raises(ValueError):
        conv_singular_values(np.ones((3, 3)), 4)

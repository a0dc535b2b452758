import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from boolkernel.svid import approx_error, reconstruct, successive_extract, svid_extract
from boolkernel.tensor import BitMatrix, leading_singular_pair, pack
from boolkernel.svid import SvidKernel

matrices = hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=10),
                      elements=st.floats(-100, 100, allow_nan=False))


def test_rank_one_nonnegative():
    kern, res = svid_extract(np.full((2, 2), 2.0))
    assert kern.bits.mask().all()
    np.testing.assert_allclose(kern.s_out, [2**0.5] * 2, atol=1e-12)
    np.testing.assert_allclose(kern.s_in, [2**0.5] * 2, atol=1e-12)
    np.testing.assert_allclose(res, 0.0, atol=1e-12)


def test_sign_value_separation():
    kern, res = svid_extract(np.array([[2.0, -2.0], [-2.0, 2.0]]))
    assert kern.bits.mask().tolist() == [[True, False], [False, True]]
    np.testing.assert_allclose(kern.s_out, [2**0.5] * 2, atol=1e-12)
    np.testing.assert_allclose(res, 0.0, atol=1e-12)


def test_zero_matrix_is_degenerate():
    kern, res = svid_extract(np.zeros((3, 2)))
    assert kern.degenerate
    assert not kern.s_out.any() and not kern.s_in.any() and not res.any()


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        svid_extract(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        successive_extract(np.ones((2, 2)), 0)


@pytest.mark.parametrize("seed", range(5))
def test_beats_random_competitors_4x4(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(4, 4))
    kern, res = svid_extract(w)
    err = np.linalg.norm(res)
    signs = kern.bits.signs()
    for _ in range(100):
        c, d = rng.normal(size=4) * 2, rng.normal(size=4) * 2
        assert err <= np.linalg.norm(w - signs * np.outer(c, d)) + 1e-8


@given(matrices)
def test_scales_nonnegative_and_residual_consistent(w):
    kern, res = svid_extract(w)
    assert np.all(kern.s_out >= 0) and np.all(kern.s_in >= 0)
    np.testing.assert_allclose(w - kern.dense(), res, atol=1e-9)


@given(matrices)
def test_beats_best_rank_one_fit(w):
    _, res = svid_extract(w)
    t = leading_singular_pair(w)
    rank1 = t.sigma * np.outer(t.u, t.v)
    assert np.linalg.norm(res) <= np.linalg.norm(w - rank1) + 1e-8 * (1 + np.linalg.norm(w))


@given(matrices, st.integers(1, 5))
def test_successive_residuals_monotone(w, k):
    rep = successive_extract(w, k)
    assert len(rep.kernels) == len(rep.residual_frobenius) == len(rep.residual_l1_normalized) == k
    seq = [rep.source_frobenius] + rep.residual_frobenius
    scale = 1e-9 * (1 + rep.source_frobenius)
    assert all(b <= a + scale for a, b in zip(seq, seq[1:]))
    np.testing.assert_allclose(w - reconstruct(rep.kernels), rep.final_residual, atol=1e-8)


def test_k1_matches_single_extraction(rng):
    w = rng.normal(size=(5, 6))
    kern, res = svid_extract(w)
    rep = successive_extract(w, 1)
    assert rep.kernels[0].bits == kern.bits
    np.testing.assert_array_equal(rep.final_residual, res)


def test_rank_one_needs_one_kernel(rng):
    w = np.outer(np.abs(rng.normal(size=4)), np.abs(rng.normal(size=3)))
    rep = successive_extract(w, 3)
    assert rep.degenerate_steps == [1, 2] or max(rep.residual_frobenius) < 1e-12
    for kern in rep.kernels[1:]:
        assert np.abs(kern.s_out).max() * np.abs(kern.s_in).max() < 1e-12
    assert max(rep.residual_frobenius) < 1e-12


def test_residual_strictly_decreasing_16x16(rng):
    w = rng.normal(size=(16, 16))
    rep = successive_extract(w, 8)
    assert all(b < a for a, b in zip(rep.residual_frobenius, rep.residual_frobenius[1:]))
    assert all(b < a for a, b in zip(rep.residual_l1_normalized, rep.residual_l1_normalized[1:]))


def test_reconstruct_examples(rng):
    assert not reconstruct([], shape=(2, 3)).any()
    with pytest.raises(ValueError):
        reconstruct([])
    ones = SvidKernel(pack(np.ones((2, 3))), np.ones(2), np.ones(3))
    assert np.array_equal(reconstruct([ones]), np.ones((2, 3)))
    other = SvidKernel(pack(np.ones((3, 3))), np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        reconstruct([ones, other])
    w = rng.normal(size=(6, 5))
    rep = successive_extract(w, 4)
    assert np.linalg.norm(w - reconstruct(rep.kernels)) == pytest.approx(rep.residual_frobenius[-1], abs=1e-9)


def test_approx_error(rng):
    w = rng.normal(size=(6, 5))
    assert approx_error(w, []) == pytest.approx((np.linalg.norm(w), 1.0))
    exact = SvidKernel(BitMatrix.from_mask(w >= 0), np.ones(6), np.ones(5))
    assert approx_error(np.sign(w) + (w == 0), [exact]) == (0.0, 0.0)
    e3 = approx_error(w, successive_extract(w, 3).kernels)[1]
    e4 = approx_error(w, successive_extract(w, 4).kernels)[1]
    assert e4 <= e3
    with pytest.raises(ValueError):
        approx_error(np.zeros((2, 2)), [])

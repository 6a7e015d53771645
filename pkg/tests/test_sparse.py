import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsidl.dictionary import (class_blocks, classify, classify_batch, init_dictionary_by_class, ksvd_train,
                              label_matrices, lcksvd_train)
from gsidl.errors import InputError
from gsidl.omp import omp, omp_batch
from oracles import coherence, exhaustive_support, feasible_sizes, incoherent_dictionary, sparse_instance


def unit_dictionary(rng, m, n):
    D = rng.standard_normal((m, n))
    return D / np.linalg.norm(D, axis=0)


def two_gaussians(rng, per_class, sep=6.0, dim=4):
    centers = np.zeros((2, dim))
    centers[0, 0], centers[1, 1] = sep, sep
    Y = np.hstack([centers[k][:, None] + rng.standard_normal((dim, per_class)) for k in range(2)])
    return Y, np.repeat([0, 1], per_class)


# -- omp -----------------------------------------------------------------------

def test_atom_identity():
    D = unit_dictionary(np.random.default_rng(0), 5, 8)
    code = omp(D[:, 3], D, 2)
    assert code.support.tolist() == [3]
    assert code.coefficients[0] == pytest.approx(1.0)
    np.testing.assert_allclose(D @ code.dense(8), D[:, 3], atol=1e-12)


def test_zero_signal_gives_empty_code():
    D = unit_dictionary(np.random.default_rng(0), 5, 8)
    code = omp(np.zeros(5), D, 3)
    assert code.support.size == 0
    np.testing.assert_array_equal(omp_batch(np.zeros((5, 2)), D, 3), 0.0)


def test_six_by_ten_all_pairs():
    # coherence below 1/3 is the exact-recovery condition for two atoms
    rng = np.random.default_rng(1)
    D = incoherent_dictionary(6, 10, rng, target=0.333, rounds=5000)
    assert coherence(D) < 1 / 3
    for pair in itertools.combinations(range(10), 2):
        y = D[:, pair] @ (rng.uniform(0.5, 2.0, 2) * rng.choice([-1.0, 1.0], 2))
        got = set(omp(y, D, 2).support.tolist())
        best, res = exhaustive_support(y, D, 2)
        assert got == set(pair) == best
        assert res < 1e-10


def test_bad_sparsity():
    D = unit_dictionary(np.random.default_rng(0), 4, 6)
    for s in (0, 5):
        with pytest.raises(ValueError):
            omp(np.ones(4), D, s)
        with pytest.raises(ValueError):
            omp_batch(np.ones((4, 2)), D, s)


@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(feasible_sizes()))
def test_single_atom_matches_exhaustive(seed, size):
    rng = np.random.default_rng(seed)
    m, n = size
    D = unit_dictionary(rng, m, n)
    y = rng.standard_normal(m)
    code = omp(y, D, 1)
    best, res = exhaustive_support(y, D, 1)
    assert np.abs(D[:, code.support[0]] @ y) == pytest.approx(np.abs(D.T @ y).max(), abs=1e-12)
    assert np.linalg.norm(y - D @ code.dense(n)) == pytest.approx(res, abs=1e-12)


@settings(max_examples=40)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(feasible_sizes()), st.integers(1, 2))
def test_incoherent_recovery(seed, size, s):
    rng = np.random.default_rng(seed)
    m, n = size
    D, y, support = sparse_instance(rng, m, n, min(s, m))
    assert set(omp(y, D, len(support)).support.tolist()) == support


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_batch_matches_single(seed, s):
    rng = np.random.default_rng(seed)
    D = unit_dictionary(rng, 6, 9)
    Y = rng.standard_normal((6, 7))
    Y[:, 0] = 0.0
    Y[:, 1] = D[:, 4]
    X = omp_batch(Y, D, s)
    for j in range(Y.shape[1]):
        np.testing.assert_allclose(X[:, j], omp(Y[:, j], D, s).dense(9), atol=1e-10)
    assert np.all(np.count_nonzero(X, axis=0) <= s)


# -- k-svd ---------------------------------------------------------------------

def test_two_orthonormal_directions():
    e = np.eye(3)[:, :2]
    Y = np.repeat(e, 5, axis=1) * np.tile([1.0, 2.0, -0.5, 3.0, 1.5], 2)
    res = ksvd_train(Y, 2, 1, iters=5, seed=3)
    assert min(res.history[:5]) < 1e-10


def test_monotone_on_random_data():
    Y = np.random.default_rng(7).standard_normal((8, 60))
    res = ksvd_train(Y, 12, 3, iters=30, seed=1)
    assert all(b <= a + 1e-9 for a, b in zip(res.history, res.history[1:]))
    assert max(res.norm_history) < 1e-10


def test_single_signal_closed_form():
    y = np.array([[3.0], [-4.0], [0.0]])
    res = ksvd_train(y, 1, 1, iters=2)
    d = res.D[:, 0]
    assert abs(d @ y[:, 0]) == pytest.approx(5.0)
    np.testing.assert_allclose(np.abs(d), [0.6, 0.8, 0.0], atol=1e-12)
    np.testing.assert_allclose(d * res.X[0, 0], y[:, 0], atol=1e-12)
    assert d[np.argmax(np.abs(d))] > 0  # canonical sign


def test_unused_atoms_are_replaced():
    rng = np.random.default_rng(0)
    Y = rng.standard_normal((4, 30))
    init = np.tile(Y[:, :1], (1, 6)) + 1e-3 * rng.standard_normal((4, 6))  # near-duplicate atoms
    res = ksvd_train(Y, 6, 1, iters=4, seed=0, init=init)
    assert res.replaced > 0
    assert np.all(np.count_nonzero(res.X, axis=1) > 0)
    np.testing.assert_allclose(np.linalg.norm(res.D, axis=0), 1.0, atol=1e-10)


def test_warns_on_few_signals():
    with pytest.warns(UserWarning):
        ksvd_train(np.eye(3)[:, :2], 4, 1, iters=1)
    with pytest.raises(ValueError):
        ksvd_train(np.eye(3), 2, 1, iters=0)


@settings(max_examples=20)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3))
def test_ksvd_invariants(seed, s):
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((6, 25))
    res = ksvd_train(Y, 8, s, iters=8, seed=seed % 1000)
    assert all(b <= a + 1e-9 for a, b in zip(res.history, res.history[1:]))
    assert max(res.norm_history) < 1e-10
    assert np.all(np.count_nonzero(res.X, axis=0) <= s)


# -- lc-ksvd -------------------------------------------------------------------

def test_zero_weights_reduce_to_ksvd():
    rng = np.random.default_rng(2)
    Y = rng.standard_normal((6, 40))
    labels = np.repeat([0, 1, 2, 3], 10)
    lc = lcksvd_train(Y, labels, 8, 2, iters=10, alpha=0.0, beta=0.0, seed=5)
    init = init_dictionary_by_class(Y, labels, 4, 8, seed=5)
    ks = ksvd_train(Y, 8, 2, iters=10, seed=5, init=init)
    np.testing.assert_allclose(lc.history, ks.history, atol=1e-9, rtol=0)
    np.testing.assert_allclose(lc.D, ks.D, atol=1e-9)


def test_block_allocation():
    assert [b.tolist() for b in class_blocks(6, 3)] == [[0, 1], [2, 3], [4, 5]]
    assert [len(b) for b in class_blocks(7, 3)] == [3, 2, 2]
    H, Q = label_matrices(np.array([0, 2, 1]), 3, 6)
    np.testing.assert_array_equal(H, np.eye(3)[:, [0, 2, 1]])
    np.testing.assert_array_equal(Q[:, 1], [0, 0, 0, 0, 1, 1])
    np.testing.assert_array_equal(Q.sum(axis=0), [2, 2, 2])


def test_missing_class_rejected():
    Y = np.random.default_rng(0).standard_normal((4, 6))
    with pytest.raises(InputError, match="7"):
        lcksvd_train(Y, [1, 1, 2, 2, 2, 1], 4, 1, classes=[1, 2, 7])
    with pytest.raises(InputError):
        lcksvd_train(Y, [1, 1, 2, 2, 2, 1], 1, 1)


def test_separated_gaussians():
    rng = np.random.default_rng(11)
    Y, labels = two_gaussians(rng, 40)
    res = lcksvd_train(Y, labels, 4, 1, iters=10, seed=0)
    assert np.all(classify_batch(Y, res.D, res.W, 1) == labels)
    Yt, lt = two_gaussians(rng, 100)
    assert np.mean(classify_batch(Yt, res.D, res.W, 1) == lt) >= 0.95
    np.testing.assert_allclose(np.linalg.norm(res.D, axis=0), 1.0, atol=1e-10)


def test_lcksvd_reconstruction_consistent():
    rng = np.random.default_rng(4)
    Y, labels = two_gaussians(rng, 15)
    res = lcksvd_train(Y, labels, 6, 2, iters=5, alpha=2.0, beta=0.5)
    # codes were rescaled with the atoms, so D X is the reconstruction from the stacked problem
    assert np.sum((Y - res.D @ res.X) ** 2) <= np.sum(Y ** 2)
    assert res.W.shape == (2, 6) and res.A.shape == (6, 6)


# -- classify ------------------------------------------------------------------

def test_classify_examples():
    D = unit_dictionary(np.random.default_rng(0), 5, 4)
    W = np.eye(4)
    assert classify(D[:, 1], D, W, 1) == 1
    assert classify(np.zeros(5), D, W, 1) == 0  # all-zero scores: lowest class


@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-3, 1e3))
def test_classify_scale_covariant(seed, lam):
    rng = np.random.default_rng(seed)
    D = unit_dictionary(rng, 5, 7)
    W = rng.standard_normal((3, 7))
    Y = rng.standard_normal((5, 6))
    np.testing.assert_array_equal(classify_batch(Y, D, lam * W, 2), classify_batch(Y, D, W, 2))
    assert all(classify(Y[:, j], D, lam * W, 2) == classify(Y[:, j], D, W, 2) for j in range(6))

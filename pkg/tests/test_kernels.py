import numpy as np
from hypothesis import given, strategies as st

from rpsolve import _kernels as K


def brute(ell, f, w):
    n = f.shape[1]
    out = np.zeros_like(f)
    for i in range(n):
        for j in range(max(0, i - w), i + 1):
            out[:, i] += np.exp(ell[:, i] - ell[:, j]) * f[:, j]
    return out


@given(n=st.integers(2, 300), w=st.integers(0, 320), seed=st.integers(0, 1000), drift=st.floats(-3, 3))
def test_sliding_sum_matches_brute_force(n, w, seed, drift):
    rng = np.random.default_rng(seed)
    ell = np.cumsum(drift * 0.01 + 0.3 * rng.standard_normal((2, n)), axis=1)
    f = rng.standard_normal((2, n))
    assert np.allclose(K.sliding_sum(ell, f, w), brute(ell, f, w), rtol=1e-10, atol=1e-10)


def test_long_windows_with_large_log_amplitude_swings_stay_finite():
    # decaying kernel whose reverse direction would exceed the double range
    n, w = 40_000, 15_000
    rng = np.random.default_rng(0)
    ell = -0.1 * np.arange(n)[None, :] + np.cumsum(0.05 * rng.standard_normal((1, n)), axis=1)
    f = np.ones((1, n))
    out = K.sliding_sum(ell, f, w)
    assert np.all(np.isfinite(out))
    for i in (w - 1, w + 3, 2 * w + 17, n - 1):
        j = np.arange(max(0, i - w), i + 1)
        assert np.isclose(out[0, i], np.sum(np.exp(ell[0, i] - ell[0, j])), rtol=1e-12)


def test_window_trapezoid_end_weights():
    n, w, dt = 50, 7, 0.1
    rng = np.random.default_rng(1)
    ell = np.cumsum(0.2 * rng.standard_normal((1, n)), axis=1)
    f = rng.standard_normal((1, n))
    out = K.window_trapezoid(ell, f, w, dt)
    for i in range(1, n):
        j = np.arange(max(0, i - w), i + 1)
        vals = np.exp(ell[0, i] - ell[0, j]) * f[0, j]
        assert np.isclose(out[0, i], dt * (vals.sum() - 0.5 * vals[0] - 0.5 * vals[-1]))


@given(n=st.integers(2, 60), w=st.integers(1, 70), seed=st.integers(0, 1000))
def test_matrix_sliding_sum_matches_brute_force(n, w, seed):
    rng = np.random.default_rng(seed)
    steps = np.eye(2) + 0.1 * rng.standard_normal((n, 2, 2))
    f = rng.standard_normal((n, 2))
    S, E = K.sliding_sum_matrix(steps, f, w)
    for i in range(n):
        acc = np.zeros(2)
        for j in range(max(0, i - w), i + 1):
            P = np.eye(2)
            for k in range(j, i):
                P = steps[k] @ P
            acc += P @ f[j]
            if j == max(0, i - w):
                assert np.allclose(E[i], P @ f[j], atol=1e-10)
        assert np.allclose(S[i], acc, atol=1e-10)


def test_scalar_and_matrix_kernels_agree_on_diagonal_steps():
    n, w = 80, 13
    rng = np.random.default_rng(2)
    incr = 0.1 * rng.standard_normal((2, n))
    ell = np.concatenate([np.zeros((2, 1)), np.cumsum(incr[:, :-1], axis=1)], axis=1)
    steps = np.array([np.diag(np.exp(incr[:, k])) for k in range(n)])
    f = rng.standard_normal((2, n))
    S, _ = K.sliding_sum_matrix(steps, f.T, w)
    assert np.allclose(S.T, K.sliding_sum(ell, f, w), atol=1e-12)

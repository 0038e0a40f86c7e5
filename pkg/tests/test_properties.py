"""Randomized property checks (hypothesis)."""
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from rbcd.operators import BlockVector, DenseBlockOperator
from rbcd.penalties import Penalty, block_minimizer
from rbcd.problems import RadonGeometry, radon_matrix
from rbcd.solver import init_state, rbcd_step

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=40, deadline=None)
@given(seed=seeds, b=st.integers(1, 5), m=st.integers(1, 8))
def test_residual_tracks_after_random_steps(seed, b, m):
    rng = np.random.default_rng(seed)
    dims = rng.integers(1, 5, size=b).tolist()
    op = DenseBlockOperator.from_matrix(rng.standard_normal((m, sum(dims))), dims)
    y = rng.standard_normal(m)
    gamma = 1.0 / max(np.linalg.norm(op.to_dense(), 2) ** 2, 1e-12)
    s = init_state(op, y)
    for _ in range(30):
        s = rbcd_step(s, op, gamma, int(rng.integers(b)))
    np.testing.assert_allclose(s.r, op.apply(s.x) - y, atol=1e-10 * (1 + np.linalg.norm(y)))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 6), theta=st.floats(0, 180), rays=st.integers(1, 9))
def test_radon_rows_are_bounded(n, theta, rays):
    A = radon_matrix(RadonGeometry(n, (theta,), rays_per_angle=rays))
    assert A.shape == (rays, n * n)
    if A.nnz:
        assert A.data.min() >= 0
        assert np.asarray(A.sum(axis=1)).max() <= n * np.sqrt(2) + 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=seeds, lam=st.floats(0.01, 2.0))
def test_tv_prox_is_firmly_nonexpansive(seed, lam):
    rng = np.random.default_rng(seed)
    pen = Penalty("tv", lam, (4, 3), tv_tol=1e-15, tv_max_iter=100_000)
    a, b = rng.standard_normal(12), rng.standard_normal(12)
    za, zb = block_minimizer(pen, 0, a).z, block_minimizer(pen, 0, b).z
    assert float((a - b) @ (za - zb)) >= float((za - zb) @ (za - zb)) - 1e-10
    # the prox preserves the mean of the frame
    assert abs(za.mean() - a.mean()) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(seed=seeds)
def test_block_vector_algebra(seed):
    rng = np.random.default_rng(seed)
    dims = rng.integers(1, 6, size=int(rng.integers(1, 5))).tolist()
    x = BlockVector([rng.standard_normal(n) for n in dims])
    y = BlockVector([rng.standard_normal(n) for n in dims])
    assert np.isclose((x + y).sq_norm(), x.sq_norm() + 2 * x.dot(y) + y.sq_norm())
    assert (x - x).sq_norm() == 0

import numpy as np
import pytest

from rbcd.operators import BlockVector, DenseBlockOperator, operator_norm
from rbcd.problems import add_noise
from rbcd.solver import (
    RNG_ALGORITHM,
    DivergenceError,
    IndexStream,
    IterationState,
    SolverConfig,
    derive_seed,
    dp_step_size,
    init_state,
    monte_carlo,
    rbcd_step,
    run,
    select_index,
)


def scalar_pair():
    return DenseBlockOperator([np.array([[1.0]]), np.array([[2.0]])])


def dense_problem(seed=0, m=40, b=4, nb=10):
    rng = np.random.default_rng(seed)
    op = DenseBlockOperator.from_matrix(rng.standard_normal((m, b * nb)), [nb] * b)
    x_true = BlockVector([rng.standard_normal(nb) for _ in range(b)])
    return op, x_true, op.apply(x_true)


# ---------------------------------------------------------------------------
# config


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(mu=2.0)
    with pytest.raises(ValueError):
        SolverConfig(mu=0.0)
    with pytest.raises(ValueError):
        SolverConfig(stop="dp", tau=1.0)
    with pytest.raises(ValueError):
        SolverConfig(stop="sometimes")
    with pytest.raises(ValueError):
        SolverConfig(index_rule="greedy")
    with pytest.raises(ValueError):
        SolverConfig(gamma=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(record_every=0)
    # an explicit gamma bypasses the mu range
    assert SolverConfig(mu=5.0, gamma=0.1).gamma == 0.1


def test_step_size_uses_norm():
    op = DenseBlockOperator([np.array([[3.0]])])
    assert SolverConfig(mu=0.9).step_size(op) == pytest.approx(0.1)
    assert SolverConfig(gamma=0.25).step_size(op) == 0.25


# ---------------------------------------------------------------------------
# single steps


def test_hand_worked_step():
    op = scalar_pair()
    st = init_state(op, np.array([5.0]))
    assert st.r[0] == -5.0
    st1 = rbcd_step(st, op, 0.3, 1)
    np.testing.assert_allclose(st1.x.flat(), [0.0, 3.0])
    assert st1.r[0] == pytest.approx(1.0)
    assert st1.k == 1 and st1.last_index == 1


def test_zero_residual_and_zero_step_leave_state():
    op = scalar_pair()
    st = IterationState(3, BlockVector([np.array([1.0]), np.array([2.0])]), np.zeros(1))
    nxt = rbcd_step(st, op, 0.3, 0)
    assert nxt.k == 4 and nxt.x.equal(st.x) and np.array_equal(nxt.r, st.r)
    st = init_state(op, np.array([5.0]))
    frozen = rbcd_step(st, op, 0.0, 1)
    assert frozen.k == 1 and frozen.x.equal(st.x) and np.array_equal(frozen.r, st.r)


def test_step_only_touches_selected_block():
    op, _, y = dense_problem()
    st = init_state(op, y)
    st = rbcd_step(st, op, 0.01, 2)
    for i in (0, 1, 3):
        assert not np.any(st.x[i])
    assert np.any(st.x[2])


def test_single_block_step_is_landweber():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((12, 7))
    op = DenseBlockOperator([A])
    y = rng.standard_normal(12)
    x0 = BlockVector([rng.standard_normal(7)])
    gamma = 0.9 / np.linalg.norm(A, 2) ** 2
    st = rbcd_step(init_state(op, y, x0), op, gamma, 0)
    landweber = x0[0] - gamma * A.T @ (A @ x0[0] - y)
    assert np.max(np.abs(st.x[0] - landweber)) <= 1e-15 * max(1.0, np.max(np.abs(landweber)))


def test_divergence_is_reported():
    op = scalar_pair()
    st = init_state(op, np.array([5.0]))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError) as info:
            for k in range(2000):
                st = rbcd_step(st, op, 1e150, k % 2)
    assert info.value.k >= 1 and info.value.i_k in (0, 1)


def test_dp_step_size_rule():
    assert dp_step_size(2.0, 1.1, 1.0, 0.5) == 0.5
    assert dp_step_size(1.1, 1.1, 1.0, 0.5) == 0.0


# ---------------------------------------------------------------------------
# index selection


def test_single_block_always_zero():
    s = IndexStream("uniform", 1, seed=5)
    assert {s(k) for k in range(50)} == {0}


def test_cyclic_order():
    s = IndexStream("cyclic", 4)
    assert [select_index("cyclic", k, s) for k in range(8)] == [0, 1, 2, 3, 0, 1, 2, 3]


def test_uniform_frequencies():
    s = IndexStream("uniform", 8, seed=11)
    draws = np.array([s(k) for k in range(100_000)])
    freq = np.bincount(draws, minlength=8) / draws.size
    assert np.all(np.abs(freq - 1 / 8) <= 0.01)


def test_uniform_stream_is_seeded():
    s1, s2, s3 = IndexStream("uniform", 5, 7), IndexStream("uniform", 5, 7), IndexStream("uniform", 5, 8)
    seq1 = [s1(k) for k in range(10_000)]
    assert seq1 == [s2(k) for k in range(10_000)]
    assert seq1 != [s3(k) for k in range(10_000)]


# ---------------------------------------------------------------------------
# runs


def test_residual_recursion_stays_faithful():
    op, _, y = dense_problem(1)
    noisy = add_noise(y, 0.05, 1)
    res = run(op, noisy.y_delta, noisy.delta, None, SolverConfig(mu=1.0, k_max=1000, seed=1))
    direct = np.linalg.norm(op.apply(res.x_final) - noisy.y_delta)
    assert abs(res.final_residual - direct) <= 1e-10 * (1 + np.linalg.norm(noisy.y_delta))
    assert res.stop_reason == "k_max" and res.stop_index == 1000
    assert res.rng_algorithm == RNG_ALGORITHM


def test_initial_guess_already_good_enough():
    op, x_true, y = dense_problem(2)
    noisy = add_noise(y, 0.01, 0)
    res = run(op, noisy.y_delta, noisy.delta, x_true, SolverConfig(stop="dp", tau=1.5))
    assert res.stop_index == 0 and res.stop_reason == "discrepancy"
    assert res.x_final.equal(x_true)
    assert res.x_final is not x_true


def test_dp_run_stops_below_threshold():
    op, _, y = dense_problem(4, m=60)
    noisy = add_noise(y, 0.05, 4)
    cfg = SolverConfig(mu=1.0, stop="dp", tau=1.2, seed=3)
    res = run(op, noisy.y_delta, noisy.delta, None, cfg)
    assert res.stop_reason == "discrepancy"
    assert res.final_residual <= 1.2 * noisy.delta
    assert res.residual_history[-2] > 1.2 * noisy.delta
    assert np.linalg.norm(op.apply(res.x_final) - noisy.y_delta) <= 1.2 * noisy.delta * (1 + 1e-12)


def test_dp_freeze_matches_continuing_with_zero_steps():
    op, _, y = dense_problem(4, m=60)
    noisy = add_noise(y, 0.05, 4)
    cfg = SolverConfig(mu=1.0, stop="dp", tau=1.2, seed=3)
    res = run(op, noisy.y_delta, noisy.delta, None, cfg)
    # replay with the explicit step-size rule for many more steps
    gamma = cfg.step_size(op)
    st = init_state(op, noisy.y_delta)
    stream = IndexStream("uniform", op.b, 3)
    frozen_at = None
    for k in range(res.stop_index + 200):
        g = dp_step_size(np.linalg.norm(st.r), 1.2, noisy.delta, gamma)
        if g == 0 and frozen_at is None:
            frozen_at, snapshot = k, st.x.copy()
        st = rbcd_step(st, op, g, stream(k))
        if frozen_at is not None:
            assert st.x.equal(snapshot)
    assert frozen_at == res.stop_index
    assert st.x.equal(res.x_final)


def test_dp_with_zero_delta_runs_to_cap(caplog):
    op, _, y = dense_problem(5)
    res = run(op, y, 0.0, None, SolverConfig(stop="dp", k_cap=50))
    assert res.stop_reason == "cap" and res.stop_index == 50
    assert "until the cap" in caplog.text


def test_target_stop_needs_reference():
    op, x_true, y = dense_problem(5)
    with pytest.raises(ValueError):
        run(op, y, 0.0, None, SolverConfig(stop="target"))
    res = run(op, y, 0.0, None, SolverConfig(stop="target", target=0.5, mu=1.0), reference=x_true)
    assert res.stop_reason == "target" and res.error_history[-1] < 0.5
    assert res.error_history[-2] >= 0.5


def test_negative_delta_rejected():
    op, _, y = dense_problem()
    with pytest.raises(ValueError):
        run(op, y, -1.0, None, SolverConfig())


def test_runs_are_bit_identical():
    op, x_true, y = dense_problem(6)
    noisy = add_noise(y, 0.02, 6)
    cfg = SolverConfig(mu=1.5, k_max=3000, seed=42)
    a = run(op, noisy.y_delta, noisy.delta, None, cfg, reference=x_true)
    b = run(op, noisy.y_delta, noisy.delta, None, cfg, reference=x_true)
    assert a.x_final.equal(b.x_final)
    assert np.array_equal(a.residual_history, b.residual_history)
    assert np.array_equal(a.error_history, b.error_history)


def test_error_history_matches_direct_computation():
    op, x_true, y = dense_problem(7)
    res = run(op, y, 0.0, None, SolverConfig(k_max=1500, seed=2), reference=x_true)
    assert res.ks[0] == 0 and res.error_history[0] == pytest.approx(1.0)
    assert np.all(np.diff(res.ks[res.ks <= 1000]) == 1)
    assert np.all(res.ks[res.ks > 1000] % 10 == 0)
    assert res.ks[-1] == 1500
    direct = (res.x_final - x_true).sq_norm() / x_true.sq_norm()
    assert res.error_history[-1] == pytest.approx(direct, rel=1e-10)


def test_record_every_stride():
    op, x_true, y = dense_problem(7)
    res = run(op, y, 0.0, None, SolverConfig(k_max=95, record_every=10), reference=x_true)
    assert list(res.ks) == [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 95]


def test_cyclic_run_is_deterministic_and_converges():
    op, x_true, y = dense_problem(8, m=60)
    cfg = SolverConfig(mu=1.0, k_max=20000, index_rule="cyclic")
    res = run(op, y, 0.0, None, cfg, reference=x_true)
    assert res.error_history[-1] < 1e-6


def test_conditional_descent_by_enumeration():
    """Average over every block choice of the distance to a solution decreases."""
    op, x_hat, y = dense_problem(9, m=30, b=4, nb=10)
    A_norm = np.linalg.norm(op.to_dense(), 2)
    gamma = 1.0 / A_norm**2
    c0 = (2 - gamma * A_norm**2) * gamma / op.b
    st = init_state(op, y)
    stream = IndexStream("uniform", op.b, 1)
    for k in range(50):
        base = (st.x - x_hat).sq_norm()
        avg = np.mean([(rbcd_step(st, op, gamma, i).x - x_hat).sq_norm() for i in range(op.b)])
        assert avg <= base - c0 * float(st.r @ st.r) + 1e-10
        st = rbcd_step(st, op, gamma, stream(k))


def test_pathwise_stability_small():
    op, _, y = dense_problem(10)
    noisy = add_noise(y, 0.05, 10)
    gamma = 1.9 / operator_norm(op).value ** 2
    exact, pert = init_state(op, y), init_state(op, noisy.y_delta)
    stream = IndexStream("uniform", op.b, 10)
    for k in range(500):
        i = stream(k)
        exact, pert = rbcd_step(exact, op, gamma, i), rbcd_step(pert, op, gamma, i)
        diff = op.apply(pert.x - exact.x) - noisy.y_delta + y
        assert np.linalg.norm(diff) <= noisy.delta + 1e-12


# ---------------------------------------------------------------------------
# Monte Carlo


def _mc_problem():
    op, x_true, y = dense_problem(11)
    noisy = add_noise(y, 0.05, 11)

    def one(seed):
        return run(op, noisy.y_delta, noisy.delta, None, SolverConfig(mu=1.0, k_max=300, seed=seed),
                   reference=x_true)

    return one


def test_derived_seeds_are_stable_and_distinct():
    assert derive_seed(5, 0) == derive_seed(5, 0)
    seeds = {derive_seed(5, r) for r in range(100)}
    assert len(seeds) == 100
    assert derive_seed(5, 0) != derive_seed(6, 0)


def test_single_run_mean_is_the_run():
    one = _mc_problem()
    mc = monte_carlo(one, 1, master_seed=3)
    single = one(derive_seed(3, 0))
    assert np.array_equal(mc.mean, single.error_history)
    assert np.all(mc.std == 0)


def test_two_run_mean_is_average_of_replays():
    one = _mc_problem()
    mc = monte_carlo(one, 2, master_seed=4)
    a, b = one(derive_seed(4, 0)), one(derive_seed(4, 1))
    np.testing.assert_allclose(mc.mean, (a.error_history + b.error_history) / 2, rtol=1e-15)
    assert mc.count == 2 and mc.failed == []


def test_monte_carlo_is_deterministic_including_threads():
    one = _mc_problem()
    a = monte_carlo(one, 6, master_seed=9)
    b = monte_carlo(one, 6, master_seed=9, workers=3)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)


def test_monte_carlo_drops_diverged_runs():
    good = _mc_problem()
    calls = []

    def flaky(seed):
        calls.append(seed)
        if len(calls) == 2:
            raise DivergenceError(7, 1)
        return good(seed)

    mc = monte_carlo(flaky, 4, master_seed=1)
    assert mc.count == 3 and mc.failed == [1]
    with pytest.raises(ValueError):
        monte_carlo(good, 0)


def test_monte_carlo_aligns_runs_with_different_stops():
    op, x_true, y = dense_problem(12, m=60)
    noisy = add_noise(y, 0.05, 12)

    def one(seed):
        return run(op, noisy.y_delta, noisy.delta, None, SolverConfig(stop="dp", tau=1.2, seed=seed),
                   reference=x_true)

    mc = monte_carlo(one, 5, master_seed=0, keep_results=True)
    assert len(set(mc.stop_indices.tolist())) > 1
    assert mc.ks.size == mc.mean.size
    for res in mc.results:
        assert set(mc.ks.tolist()) <= set(res.ks.tolist())

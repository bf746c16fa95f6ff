import numpy as np
import pytest

from dsgtm.engine import (EngineError, RunSetup, init_state, run, step_dsgd, step_dsgt,
                          step_dsgtm_tv)
from dsgtm.flows import phi_sequence, pi_sequence
from dsgtm.graph import GeneratorSpec, generate_sequence
from dsgtm.mixing import MixingPair, build_mixing
from dsgtm.problems import OracleConfig, QuadraticProblem, sample_gradient

EXACT = OracleConfig()


def quad(n=5, d=3, seed=0):
    return QuadraticProblem(np.random.default_rng(seed).standard_normal((n, d)))


def network(n, horizon, seed=0, mode="per-step-random"):
    seq = generate_sequence(n, horizon, GeneratorSpec(mode=mode, density=0.3), seed)
    return seq, [build_mixing(g) for g in seq.graphs]


def ring_W(n):
    seq = generate_sequence(n, 1, GeneratorSpec(mode="static", topology="ring"), 0)
    return build_mixing(seq[0], "metropolis").A


def test_single_agent_gd_step():
    prob = QuadraticProblem([[0.0]])
    st = init_state(prob, 1.0, 0.0, EXACT, 0, x0=np.array([5.0]))
    one = MixingPair(np.ones((1, 1)), np.ones((1, 1)), 1.0, 1.0)
    st = step_dsgtm_tv(st, one, prob, EXACT, 0)
    assert st.x[0, 0] == 0.0 and st.k == 1


def test_two_agents_complete_graph():
    prob = QuadraticProblem([[1.0, -2.0], [1.0, -2.0]])
    half = np.full((2, 2), 0.5)
    pair = MixingPair(half, half, 0.5, 0.5)
    st = init_state(prob, 0.5, 0.0, EXACT, 0)
    st = step_dsgtm_tv(st, pair, prob, EXACT, 0)
    assert np.array_equal(st.x[0], st.x[1])
    # identical agents, uniform averaging: the error halves every step
    errs = []
    for _ in range(20):
        st = step_dsgtm_tv(st, pair, prob, EXACT, 0)
        errs.append(np.linalg.norm(st.x[0] - prob.centers[0]))
    ratios = np.array(errs[1:]) / np.array(errs[:-1])
    assert np.allclose(ratios, 0.5, atol=1e-9)


def test_sum_of_y_tracks_sum_of_g():
    prob = quad()
    seq, pairs = network(5, 50, seed=1)
    cfg = OracleConfig("exact-plus-noise", sigma=0.3)
    st = init_state(prob, 0.05, 0.2, cfg, 4)
    for k in range(50):
        st = step_dsgtm_tv(st, pairs[k], prob, cfg, 4)
        gap = np.abs(st.y.sum(axis=0) - st.g.sum(axis=0)).max()
        assert gap <= 1e-9 * (1 + np.abs(st.g.sum(axis=0)).max())


def test_dsgt_is_the_specialization():
    prob = quad(6)
    W = ring_W(6)
    cfg = OracleConfig("exact-plus-noise", sigma=0.1)
    a = init_state(prob, 0.2, 0.5, cfg, 2)
    b = init_state(prob, 0.2, 0.0, cfg, 2)
    pair = MixingPair(W, W, 0.0, 0.0)
    for _ in range(100):
        a = step_dsgt(a, W, prob, cfg, 2)
        b = step_dsgtm_tv(b, pair, prob, cfg, 2)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    # the configured momentum is kept but unused
    assert (a.beta == 0.5).all()


def test_dsgt_single_agent_tracks_gradient():
    prob = QuadraticProblem([[2.0, 1.0]])
    cfg = OracleConfig("exact-plus-noise", sigma=1.0)
    st = init_state(prob, 0.3, 0.0, cfg, 0)
    for _ in range(10):
        st = step_dsgt(st, np.ones((1, 1)), prob, cfg, 0)
        assert np.allclose(st.y, st.g, atol=1e-14)


def test_dsgt_exact_convergence():
    prob = quad(6, seed=3)
    W = ring_W(6)
    st = init_state(prob, 0.1, 0.0, EXACT, 0)
    for _ in range(600):
        st = step_dsgt(st, W, prob, EXACT, 0)
    x_star = prob.centers.mean(axis=0)
    assert np.abs(st.x - x_star).max() ** 2 < 1e-10


def test_dsgd_plateaus_above_dsgt():
    prob = quad(6, seed=3)
    W = ring_W(6)
    x_star = prob.centers.mean(axis=0)
    a = init_state(prob, 0.1, 0.0, EXACT, 0)
    b = init_state(prob, 0.1, 0.0, EXACT, 0)
    for _ in range(600):
        a = step_dsgt(a, W, prob, EXACT, 0)
        b = step_dsgd(b, W, prob, EXACT, 0)
    err_t = np.sum((a.x - x_star) ** 2)
    err_d = np.sum((b.x - x_star) ** 2)
    assert err_d > 1e-4 and err_d > 1e6 * err_t


def test_dsgd_single_agent_is_gd():
    prob = QuadraticProblem([[3.0]])
    st = init_state(prob, 0.5, 0.0, EXACT, 0)
    st = step_dsgd(st, np.ones((1, 1)), prob, EXACT, 0)
    assert st.x[0, 0] == pytest.approx(1.5)


def test_dsgd_diminishing_stepsize_decreases():
    prob = quad(6, seed=5)
    W = ring_W(6)
    cfg = OracleConfig("exact-plus-noise", sigma=1.0)
    x_star = prob.centers.mean(axis=0)
    errs = np.zeros(2000)
    for seed in range(8):
        st = init_state(prob, 1.0, 0.0, cfg, seed)
        for k in range(2000):
            st = step_dsgd(st, W, prob, cfg, seed, "one-over-k")
            errs[k] += np.mean(np.sum((st.x - x_star) ** 2, axis=1)) / 8
    ks = np.arange(1, 2001)
    window = slice(99, 2000)
    slope = np.polyfit(np.log(ks[window]), np.log(errs[window]), 1)[0]
    assert errs[-1] < errs[99]
    assert -1.6 < slope < -0.5


def test_dsgd_rejects_unknown_schedule():
    prob = quad(2)
    st = init_state(prob, 0.1, 0.0, EXACT, 0)
    with pytest.raises(EngineError):
        step_dsgd(st, np.full((2, 2), 0.5), prob, EXACT, 0, "cosine")


def test_non_doubly_stochastic_rejected():
    prob = quad(3)
    seq, pairs = network(3, 1, seed=0)
    st = init_state(prob, 0.1, 0.0, EXACT, 0)
    W = np.array([[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]]) * 1.1
    with pytest.raises(EngineError):
        step_dsgt(st, W, prob, EXACT, 0)


def test_dimension_mismatch():
    prob = quad(3)
    st = init_state(prob, 0.1, 0.0, EXACT, 0)
    with pytest.raises(EngineError):
        step_dsgtm_tv(st, MixingPair(np.eye(2), np.eye(2), 1, 1), prob, EXACT, 0)


def test_stepsize_validation():
    prob = quad(3)
    with pytest.raises(EngineError, match="at least one stepsize"):
        init_state(prob, 0.0, 0.0, EXACT, 0)
    with pytest.raises(EngineError):
        init_state(prob, [0.1, -0.1, 0.1], 0.0, EXACT, 0)
    st = init_state(prob, [0.0, 0.0, 0.2], 0.0, EXACT, 0)
    assert np.array_equal(st.y, st.g)
    assert st.agent(2).alpha == 0.2 and np.array_equal(st.agent(2).g_last, st.g[2])


def test_weighted_average_recursion():
    prob = quad(7, seed=2)
    seq, pairs = network(7, 40, seed=6)
    phi = phi_sequence([p.A for p in pairs])
    rng = np.random.default_rng(0)
    st = init_state(prob, rng.uniform(0.05, 0.1, 7), rng.uniform(0, 0.3, 7), EXACT, 0)
    for k in range(40):
        nxt = step_dsgtm_tv(st, pairs[k], prob, EXACT, 0)
        w = phi[k + 1]
        predicted = (phi[k] @ st.x - (w * st.alpha) @ st.y
                     + (w * st.beta) @ (st.x - st.x_prev))
        scale = 1 + np.abs(st.x).max() + np.abs(st.y).max()
        assert np.abs(w @ nxt.x - predicted).max() <= 10 * phi.approx_tol * scale
        st = nxt


def test_gradient_streams_do_not_depend_on_order():
    prob = quad(4)
    cfg = OracleConfig("exact-plus-noise", sigma=0.5)
    x = np.ones(3)
    forward = [sample_gradient(prob, i, x, cfg, 9, 3) for i in range(4)]
    backward = [sample_gradient(prob, i, x, cfg, 9, 3) for i in reversed(range(4))][::-1]
    assert all(np.array_equal(a, b) for a, b in zip(forward, backward))


def make_setup(horizon=30, seed=0, cadence=1, sigma=0.2):
    prob = quad(5)
    seq, pairs = network(5, max(horizon, 1), seed=1)
    return RunSetup("dsgtm-tv", prob, pairs, phi_sequence([p.A for p in pairs]),
                    pi_sequence([p.B for p in pairs]),
                    OracleConfig("exact-plus-noise", sigma=sigma), np.full(5, 0.1),
                    np.full(5, 0.2), horizon, seed=seed, cadence=cadence)


def test_run_horizon_zero():
    rec = run(make_setup(horizon=0))
    assert rec.iters == [0]


def test_run_is_deterministic():
    a = run(make_setup(seed=3)).to_csv()
    b = run(make_setup(seed=3)).to_csv()
    c = run(make_setup(seed=4)).to_csv()
    assert a == b and a != c


def test_run_cadence():
    rec = run(make_setup(horizon=25, cadence=10))
    assert rec.iters == [0, 10, 20, 25]


def test_run_errors_carry_step():
    setup = make_setup(horizon=5)
    setup.pairs = setup.pairs[:3] + [MixingPair(np.eye(2), np.eye(2), 1, 1)] * 2
    with pytest.raises(EngineError, match="step 3"):
        run(setup)

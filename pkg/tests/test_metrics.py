import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dsgtm import metrics, theory
from dsgtm.engine import RunSetup, run
from dsgtm.harness import ExperimentConfig, build_environment, build_problem, with_overrides
from dsgtm.problems import OracleConfig, QuadraticProblem, estimate_L_mu, solve_reference


def test_weighted_average_examples():
    xs = np.array([[1.0, 0.0], [3.0, 4.0]])
    assert np.allclose(metrics.weighted_average(xs, [0.5, 0.5]), [2.0, 2.0])
    assert np.allclose(metrics.weighted_average(xs, [1.0, 0.0]), [1.0, 0.0])
    with pytest.raises(metrics.MetricsError):
        metrics.weighted_average(xs, [1.0])


def test_error_vector_zero_at_consensus_optimum():
    x_star = np.array([0.3, -1.0])
    xs = np.tile(x_star, (4, 1))
    ys = np.array([[0.25, 0.5]] * 4)  # y_i = pi_i * sum_j y_j with uniform pi
    ev = metrics.error_vector(xs, xs, np.full(4, 0.25), np.full(4, 0.25), ys, x_star)
    assert ev.as_array().tolist() == [0.0, 0.0, 0.0, 0.0]


def test_single_agent_error_vector():
    ev = metrics.error_vector(np.array([[2.0]]), np.array([[1.0]]), [1.0], [1.0],
                              np.array([[5.0]]), np.array([0.0]))
    assert (ev.opt_gap, ev.consensus, ev.state_diff, ev.tracking) == (4.0, 0.0, 1.0, 0.0)


def loop_error_vector(xs, xs_prev, phi, pi, ys, x_star):
    n, d = xs.shape
    x_hat = [sum(phi[i] * xs[i][t] for i in range(n)) for t in range(d)]
    ybar = [sum(ys[i][t] for i in range(n)) for t in range(d)]
    v1 = sum((x_hat[t] - x_star[t]) ** 2 for t in range(d))
    v2 = sum(phi[i] * sum((xs[i][t] - x_hat[t]) ** 2 for t in range(d)) for i in range(n))
    v3 = sum((xs[i][t] - xs_prev[i][t]) ** 2 for i in range(n) for t in range(d))
    v4 = sum(pi[i] * sum((ys[i][t] / pi[i] - ybar[t]) ** 2 for t in range(d)) for i in range(n))
    return [v1, v2, v3, v4]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_error_vector_dual(n, d, seed):
    rng = np.random.default_rng(seed)
    xs, xp, ys = rng.normal(size=(3, n, d))
    phi = rng.dirichlet(np.ones(n))
    pi = rng.dirichlet(np.ones(n)) + 1e-3
    pi /= pi.sum()
    x_star = rng.normal(size=d)
    got = metrics.error_vector(xs, xp, phi, pi, ys, x_star).as_array()
    assert np.allclose(got, loop_error_vector(xs, xp, phi, pi, ys, x_star), rtol=1e-10, atol=1e-12)
    assert (got >= 0).all()


def test_tracking_rejects_zero_weight():
    with pytest.raises(metrics.MetricsError):
        metrics.tracking_error_sq(np.ones((2, 1)), [1.0, 0.0])


def test_sumgrad_examples():
    ys = np.array([[1.0, 2.0], [3.0, -1.0]])
    gs = np.array([[2.0, 0.5], [2.0, 0.5]])
    assert metrics.sumgrad_residual(ys, gs) == 0.0
    gs2 = gs + np.array([[0.0, 0.0], [0.0, 0.25]])
    assert metrics.sumgrad_residual(ys, gs2) == 0.25
    assert metrics.relative_sumgrad_residual(ys, gs2) == pytest.approx(0.25 / 5.0)


def test_y_pi_inv_sq():
    ys = np.array([[1.0], [2.0]])
    assert metrics.y_pi_inv_sq(ys, [0.5, 0.5]) == pytest.approx(10.0)


def test_heterogeneity_quadratic():
    centers = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 2.0], [0.0, -2.0]])
    prob = QuadraticProblem(centers)
    x_star = solve_reference(prob)[0]
    assert np.allclose(x_star, 0)
    assert metrics.heterogeneity(prob, x_star) == pytest.approx(2.5)
    same = QuadraticProblem(np.ones((3, 2)))
    assert metrics.heterogeneity(same, np.ones(2)) == pytest.approx(0, abs=1e-24)


def test_label_sorted_partition_more_heterogeneous():
    base = ExperimentConfig()
    vals = {}
    for scheme in ("iid", "label-sorted"):
        cfg = with_overrides(base, n=6, p=20, n_train=600, n_test=100, partition=scheme,
                             separation=1.0)
        prob = build_problem(cfg)
        vals[scheme] = metrics.heterogeneity(prob, solve_reference(prob)[0])
    assert vals["label-sorted"] > 3 * vals["iid"]


@pytest.mark.parametrize("fraction", [0.05, 0.3, 0.9])
def test_one_step_bounds_hold_along_noiseless_run(fraction):
    horizon = 40
    cfg = with_overrides(ExperimentConfig(), n=10, horizon=horizon, kind="quadratic", p=5,
                         alpha=0.01)
    env = build_environment(cfg)
    L, mu = estimate_L_mu(env.problem)
    g, steps = theory.horizon_constants(env.seq, env.pairs[:horizon], env.phi, env.pi, L, mu)
    a = fraction * 2 / (g.n * g.eta * (g.L + g.mu))
    b = 0.5 * a
    setup = RunSetup("dsgtm-tv", env.problem, env.pairs, env.phi, env.pi, OracleConfig(),
                     np.full(10, a), np.full(10, b), horizon, x_star=env.x_star,
                     keep_states=True)
    rec = run(setup)
    for k in range(horizon):
        ysq = metrics.y_pi_inv_sq(rec.states[k].y, env.pi[k])
        bound = metrics.one_step_bounds(rec.errors[k], ysq, steps[k], g, a, b)
        nxt = rec.errors[k + 1].as_array()
        assert (nxt <= bound * (1 + 1e-9) + 1e-300).all(), (k, nxt, bound)


def toy_record(seed, shift=0.0):
    rec = metrics.RunRecord(seed=seed)
    for k in range(3):
        ev = metrics.ErrorVector(k + shift, 2 * k, 3 * k, 4 * k)
        rec.append(k, ev, 0.5 + shift, float("nan"), 1e-16)
    return rec


def test_csv_columns_and_round_trip():
    text = toy_record(0).to_csv()
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == metrics.CSV_COLUMNS
    assert rows[0][:5] == ["iter", "opt_gap", "consensus", "state_diff", "tracking"]
    assert rows[3][0] == "2" and float(rows[3][4]) == 8.0
    assert np.isnan(float(rows[1][6]))


def test_aggregate_single_and_many():
    one = metrics.aggregate([toy_record(0)])
    assert np.array_equal(one["mean"], toy_record(0).table(), equal_nan=True)
    assert not one["stderr"][:, 1].any()
    agg = metrics.aggregate([toy_record(0, 0.0), toy_record(1, 1.0)])
    assert np.allclose(agg["mean"][:, 1], [0.5, 1.5, 2.5])
    assert np.allclose(agg["stderr"][:, 1], 0.5)
    header = metrics.aggregate_csv(agg).splitlines()[0].split(",")
    assert header[0] == "iter" and header[1] == "opt_gap_mean" and header[-1] == "sumgrad_residual_stderr"


@settings(max_examples=30, deadline=None)
@given(arrays(float, (5, 3), elements=st.floats(-1e3, 1e3)))
def test_weighted_average_inside_hull(xs):
    phi = np.full(5, 0.2)
    avg = metrics.weighted_average(xs, phi)
    assert (avg >= xs.min(axis=0) - 1e-9).all() and (avg <= xs.max(axis=0) + 1e-9).all()

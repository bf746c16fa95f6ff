from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsgtm.flows import FlowError, flow_floor, phi_sequence, pi_sequence, save_csv
from dsgtm.graph import Digraph, GeneratorSpec, generate_sequence
from dsgtm.mixing import build_mixing


def pairs_for(seq, rule="uniform"):
    return [build_mixing(g, rule) for g in seq.graphs]


def test_pi_uniform_on_symmetric_cycle():
    g = Digraph.from_edges(3, {(0, 1), (1, 2), (2, 0)})
    pair = build_mixing(g)
    pi = pi_sequence([pair.B] * 5)
    assert np.allclose(pi.vectors, 1 / 3, atol=1e-15)


def test_pi_hand_product():
    # 3-cycle plus the extra edge 1->3
    g = Digraph.from_edges(3, {(0, 1), (1, 2), (2, 0), (0, 2)})
    pi = pi_sequence([build_mixing(g).B])
    # exact rational product of the same uniform weights
    third, half = Fraction(1, 3), Fraction(1, 2)
    B = [[third, 0, half], [third, half, 0], [third, half, half]]
    expected = [sum(B[r][c] * third for c in range(3)) for r in range(3)]
    assert expected == [Fraction(5, 18), Fraction(5, 18), Fraction(8, 18)]
    assert np.allclose(pi[1], [float(v) for v in expected], atol=1e-15)


def test_single_node_flows():
    A = np.ones((1, 1))
    assert pi_sequence([A] * 4).vectors.tolist() == [[1.0]] * 5
    assert phi_sequence([A] * 4).vectors.tolist() == [[1.0]] * 5


def test_phi_uniform_for_doubly_stochastic():
    g = Digraph.from_edges(3, {(0, 1), (1, 2), (2, 0)})
    phi = phi_sequence([build_mixing(g).A] * 6)
    assert np.allclose(phi.vectors, 1 / 3, atol=1e-12)


def power_oracle(A, iters=20000):
    v = np.ones(len(A)) / len(A)
    for _ in range(iters):
        v = A.T @ v
        v /= v.sum()
    return v


@pytest.mark.parametrize("seed", range(5))
def test_phi_static_is_left_perron(seed):
    seq = generate_sequence(7, 10, GeneratorSpec(mode="static", density=0.2), seed)
    A = build_mixing(seq[0]).A
    phi = phi_sequence([A] * 10, tol=1e-14)
    oracle = power_oracle(A)
    for v in phi.vectors:
        assert np.abs(v - oracle).max() < 1e-12


def test_phi_recursion_residual():
    seq = generate_sequence(10, 200, GeneratorSpec(), 11)
    As = [p.A for p in pairs_for(seq)]
    phi = phi_sequence(As)
    for k, A in enumerate(As):
        assert np.abs(phi[k + 1] @ A - phi[k]).max() <= 1e-10
    assert phi.residuals.max() <= phi.approx_tol
    assert np.allclose(phi.vectors.sum(axis=1), 1, atol=1e-12)


def test_tail_extension_does_not_change_phi():
    seq = generate_sequence(6, 20, GeneratorSpec(), 3)
    As = [p.A for p in pairs_for(seq)]
    base = phi_sequence(As).vectors
    ext = phi_sequence(As, tail_extension=15).vectors
    assert base.shape == ext.shape
    assert np.abs(base - ext).max() < 1e-9


def test_phi_non_convergence_named():
    # periodic chain: the uniform start oscillates forever
    P = np.array([[0.0, 0.5, 0.5], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    with pytest.raises(FlowError, match="step 2"):
        phi_sequence([P] * 3, max_window=50)


def test_shape_mismatch():
    with pytest.raises(FlowError):
        pi_sequence([np.eye(2), np.eye(3)])


def test_flow_floor_values():
    assert flow_floor(1, 1, 1) == (1, 1)
    assert flow_floor(0.5, 0.5, 3) == pytest.approx((1 / 24, 1 / 24))
    with pytest.raises(FlowError):
        flow_floor(0, 0.5, 3)


def test_csv_export(tmp_path):
    seq = generate_sequence(3, 4, GeneratorSpec(), 0)
    pi = pi_sequence([p.B for p in pairs_for(seq)])
    save_csv(pi, tmp_path / "pi.csv")
    lines = (tmp_path / "pi.csv").read_text().splitlines()
    assert lines[0] == "step,c1,c2,c3,residual"
    assert len(lines) == 6


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), density=st.floats(0, 0.5))
def test_floors_hold(seed, density):
    seq = generate_sequence(10, 30, GeneratorSpec(density=density), seed)
    pairs = pairs_for(seq)
    pi = pi_sequence([p.B for p in pairs])
    phi = phi_sequence([p.A for p in pairs])
    fa, fb = flow_floor(min(p.a_floor for p in pairs), min(p.b_floor for p in pairs), 10)
    assert pi.floor >= fb and phi.floor >= fa
    assert pi.residuals.max() <= 1e-12
    assert np.allclose(pi.vectors.sum(axis=1), 1, atol=1e-12)

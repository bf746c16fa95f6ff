"""Row-stochastic pull weights A_k and column-stochastic push weights B_k."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Digraph

RULES = ("uniform", "random-stochastic", "metropolis")
STOCHASTIC_TOL = 1e-12


class MixingError(ValueError):
    pass


@dataclass(frozen=True)
class MixingPair:
    A: np.ndarray
    B: np.ndarray
    a_floor: float
    b_floor: float

    @property
    def n(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class Violation:
    kind: str  # row-sum | col-sum | alignment-A | alignment-B | floor-A | floor-B | negative
    index: tuple
    detail: str

    def __str__(self):
        return f"{self.kind} at {self.index}: {self.detail}"


def min_positive(M: np.ndarray) -> float:
    pos = M[M > 0]
    return float(pos.min()) if pos.size else 0.0


def _random_weights(count, floor, rng):
    if count * floor > 1.0 + 1e-15:
        raise MixingError(f"floor {floor} infeasible for {count} weights")
    w = rng.random(count) + 1e-3
    return floor + (1.0 - count * floor) * w / w.sum()


def build_mixing(g: Digraph, rule: str = "uniform", *, floor: float = 0.05,
                 rng: np.random.Generator | None = None) -> MixingPair:
    """Weights aligned with ``g``.

    ``uniform``: each agent splits evenly over its neighborhood plus itself.
    ``random-stochastic``: random positive weights, each at least ``floor``
    (clamped to what the degree permits).
    ``metropolis``: symmetric doubly stochastic weights, only for graphs
    whose edge set is symmetric; A and B are the same matrix.
    """
    if rule not in RULES:
        raise MixingError(f"unknown mixing rule {rule!r}; expected one of {RULES}")
    if not g.has_self_loops:
        raise MixingError("alignment requires a self-loop at every node")
    n = g.n
    A = np.zeros((n, n))
    B = np.zeros((n, n))
    ins = [g.in_neighbors(i) for i in range(n)]
    outs = [g.out_neighbors(i) for i in range(n)]

    if rule == "uniform":
        for i in range(n):
            A[i, ins[i] + [i]] = 1.0 / (len(ins[i]) + 1)
            B[outs[i] + [i], i] = 1.0 / (len(outs[i]) + 1)
    elif rule == "random-stochastic":
        rng = rng if rng is not None else np.random.default_rng(0)
        for i in range(n):
            support = ins[i] + [i]
            A[i, support] = _random_weights(len(support), min(floor, 1.0 / len(support)), rng)
            support = outs[i] + [i]
            B[support, i] = _random_weights(len(support), min(floor, 1.0 / len(support)), rng)
    else:
        if not g.is_symmetric():
            raise MixingError("metropolis weights need a symmetric edge set")
        deg = np.array([len(ins[i]) for i in range(n)])
        for i in range(n):
            for j in ins[i]:
                A[i, j] = 1.0 / (1 + max(deg[i], deg[j]))
            A[i, i] = 1.0 - A[i].sum()
        B = A.copy()
    return MixingPair(A, B, min_positive(A), min_positive(B))


def validate_mixing(pair: MixingPair, g: Digraph, tol: float = STOCHASTIC_TOL) -> list:
    """All violated invariants; an empty list means the pair is valid."""
    report = []
    A, B = pair.A, pair.B
    if A.shape != (g.n, g.n) or B.shape != (g.n, g.n):
        return [Violation("shape", (), f"expected {g.n}x{g.n}")]
    for name, M in (("A", A), ("B", B)):
        for i, j in zip(*np.nonzero(M < 0)):
            report.append(Violation("negative", (name, i + 1, j + 1), f"{M[i, j]:.3g}"))
    for i, s in enumerate(A.sum(axis=1)):
        if abs(s - 1.0) > tol:
            report.append(Violation("row-sum", (i + 1,), f"row of A sums to {s!r}"))
    for i, s in enumerate(B.sum(axis=0)):
        if abs(s - 1.0) > tol:
            report.append(Violation("col-sum", (i + 1,), f"column of B sums to {s!r}"))
    adj = g.adjacency()  # adj[i, j]: j -> i
    for i in range(g.n):
        for j in range(g.n):
            # A[i, j] > 0 iff j in N_in(i) + {i};  B[j, i] > 0 iff j in N_out(i) + {i}
            allowed_a = adj[i, j] or i == j
            if (A[i, j] > 0) != allowed_a:
                report.append(Violation("alignment-A", (i + 1, j + 1),
                                        "weight on a non-edge" if A[i, j] > 0 else "missing weight on an edge"))
            allowed_b = adj[j, i] or i == j
            if (B[j, i] > 0) != allowed_b:
                report.append(Violation("alignment-B", (j + 1, i + 1),
                                        "weight on a non-edge" if B[j, i] > 0 else "missing weight on an edge"))
    for name, M, fl in (("floor-A", A, pair.a_floor), ("floor-B", B, pair.b_floor)):
        if fl <= 0:
            report.append(Violation(name, (), f"floor must be positive, got {fl}"))
        low = (M > 0) & (M < fl - 1e-15)
        for i, j in zip(*np.nonzero(low)):
            report.append(Violation(name, (i + 1, j + 1), f"{M[i, j]:.3g} below floor {fl:.3g}"))
    return report


def is_doubly_stochastic(W: np.ndarray, tol: float = 1e-12) -> bool:
    W = np.asarray(W)
    return bool(
        W.ndim == 2 and W.shape[0] == W.shape[1] and (W >= 0).all()
        and np.abs(W.sum(axis=1) - 1).max() <= tol
        and np.abs(W.sum(axis=0) - 1).max() <= tol
    )


def save_csv(M: np.ndarray, path) -> None:
    np.savetxt(path, M, delimiter=",", fmt="%.17g")


def load_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=","))

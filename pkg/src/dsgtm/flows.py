"""Stochastic weight sequences for the pull (phi) and push (pi) matrices.

``pi`` is exact: a forward recursion through the column-stochastic B_k from
the uniform vector. ``phi`` satisfies ``phi_{k+1}^T A_k = phi_k^T`` and in
principle depends on the infinite future; over a finite horizon the tail
is completed by repeating the last matrix, whose left Perron vector is the
exact stationary solution there. Everything before the tail is then an
exact backward recursion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-10


class FlowError(ValueError):
    pass


@dataclass(frozen=True)
class StochasticFlow:
    vectors: np.ndarray  # (K + 1, n); row k is the vector at step k
    kind: str  # "phi" | "pi"
    approx_tol: float
    residuals: np.ndarray  # recursion residual per step, length K

    def __len__(self):
        return len(self.vectors)

    def __getitem__(self, k):
        return self.vectors[k]

    @property
    def floor(self) -> float:
        return float(self.vectors.min())


def _as_stack(mats):
    mats = [np.asarray(M, dtype=float) for M in mats]
    if not mats:
        raise FlowError("need at least one matrix")
    n = mats[0].shape[0]
    for k, M in enumerate(mats):
        if M.shape != (n, n):
            raise FlowError(f"matrix {k} has shape {M.shape}, expected {(n, n)}")
    return mats, n


def pi_sequence(Bs) -> StochasticFlow:
    Bs, n = _as_stack(Bs)
    vecs = np.empty((len(Bs) + 1, n))
    vecs[0] = 1.0 / n
    for k, B in enumerate(Bs):
        vecs[k + 1] = B @ vecs[k]
    res = np.array([np.abs(vecs[k + 1] - B @ vecs[k]).max() for k, B in enumerate(Bs)])
    return StochasticFlow(vecs, "pi", 0.0, res)


def left_perron(A: np.ndarray, tol: float = DEFAULT_TOL, max_iter: int = 1_000_000):
    """Stationary row vector of a row-stochastic matrix by repeated ``v <- v A``.

    Returns ``(v, iterations)``; raises FlowError if successive iterates
    still differ by ``tol`` after ``max_iter`` products.
    """
    v = np.full(A.shape[0], 1.0 / A.shape[0])
    for it in range(1, max_iter + 1):
        w = v @ A
        w /= w.sum()
        if np.abs(w - v).max() < tol:
            return w, it
        v = w
    raise FlowError(f"no convergence after {max_iter} products")


def phi_sequence(As, tail_extension: int = 0, tol: float = DEFAULT_TOL,
                 max_window: int = 1_000_000) -> StochasticFlow:
    """Backward-averaged phi_0..phi_K for matrices A_0..A_{K-1}.

    ``tail_extension`` extra copies of the last matrix are appended before
    the stationary completion; with the stationary completion they change
    nothing but are accepted so longer windows can be requested explicitly.
    """
    if tail_extension < 0:
        raise FlowError("tail_extension must be >= 0")
    As, n = _as_stack(As)
    As = As + [As[-1]] * tail_extension
    try:
        tail, _ = left_perron(As[-1], tol=tol, max_iter=max_window)
    except FlowError as exc:
        raise FlowError(f"phi did not settle at step {len(As) - 1}: {exc}") from None
    vecs = np.empty((len(As) + 1, n))
    vecs[-1] = tail
    for k in range(len(As) - 1, -1, -1):
        v = vecs[k + 1] @ As[k]
        vecs[k] = v / v.sum()
    K = len(As) - tail_extension
    vecs = vecs[: K + 1]
    res = np.array([np.abs(vecs[k + 1] @ As[k] - vecs[k]).max() for k in range(K)])
    # the stationary tail itself is only tol-accurate
    tail_res = float(np.abs(tail @ As[-1] - tail).max())
    return StochasticFlow(vecs, "phi", max(tol, tail_res), res)


def flow_floor(a: float, b: float, n: int):
    """Guaranteed entrywise lower bounds ``(a^n / n, b^n / n)`` for phi and pi."""
    if not (0 < a <= 1 and 0 < b <= 1) or n < 1:
        raise FlowError("need a, b in (0, 1] and n >= 1")
    return a**n / n, b**n / n


def save_csv(flow: StochasticFlow, path) -> None:
    n = flow.vectors.shape[1]
    header = "step," + ",".join(f"c{i + 1}" for i in range(n)) + ",residual"
    res = np.append(flow.residuals, np.nan)
    rows = np.column_stack([np.arange(len(flow.vectors)), flow.vectors, res])
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")

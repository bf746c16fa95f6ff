"""Synchronous-round steppers: DSGTm-TV, DSGT and DSGD.

Agent states are stacked row-wise, so ``x[i]`` is agent i's model. Every
update reads the round-k snapshot and writes a fresh round-(k+1) state;
stochastic gradients draw from a per-(seed, agent, iteration) stream, so a
result never depends on the order agents are evaluated in.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mixing import MixingPair, is_doubly_stochastic
from .problems import OracleConfig, sample_gradient


class EngineError(ValueError):
    pass


@dataclass(frozen=True)
class AgentState:
    x: np.ndarray
    x_prev: np.ndarray
    y: np.ndarray
    g_last: np.ndarray
    alpha: float
    beta: float


@dataclass(frozen=True)
class NetworkState:
    x: np.ndarray  # (n, d)
    x_prev: np.ndarray
    y: np.ndarray
    g: np.ndarray  # last sampled gradients g_i(x_k^i, xi_k^i)
    alpha: np.ndarray  # (n,)
    beta: np.ndarray
    k: int = 0

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def agent(self, i) -> AgentState:
        return AgentState(self.x[i], self.x_prev[i], self.y[i], self.g[i],
                          float(self.alpha[i]), float(self.beta[i]))


def _gradients(problem, x, oracle, seed, k):
    return np.stack([sample_gradient(problem, i, x[i], oracle, seed, k) for i in range(len(x))])


def init_state(problem, alpha, beta, oracle: OracleConfig, seed: int,
               x0=None, x_prev=None) -> NetworkState:
    """Round-0 state with ``y_0 = g_0``; ``x0`` defaults to zeros, ``x_{-1}`` to ``x0``."""
    n, d = problem.n, problem.dim
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (n,)).copy()
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (n,)).copy()
    if (alpha < 0).any() or (beta < 0).any():
        raise EngineError("stepsizes and momentum parameters must be nonnegative")
    if not (alpha > 0).any():
        raise EngineError("at least one stepsize must be positive")
    x = np.zeros((n, d)) if x0 is None else np.array(np.broadcast_to(x0, (n, d)), dtype=float)
    xp = x.copy() if x_prev is None else np.array(np.broadcast_to(x_prev, (n, d)), dtype=float)
    g = _gradients(problem, x, oracle, seed, 0)
    return NetworkState(x, xp, g.copy(), g, alpha, beta, 0)


def _check(state, M):
    if M.shape != (state.n, state.n):
        raise EngineError(f"mixing matrix {M.shape} does not match {state.n} agents")


def step_dsgtm_tv(state: NetworkState, pair: MixingPair, problem, oracle: OracleConfig,
                  seed: int) -> NetworkState:
    _check(state, pair.A)
    _check(state, pair.B)
    x, y = state.x, state.y
    x_new = (pair.A @ x - state.alpha[:, None] * y
             + state.beta[:, None] * (x - state.x_prev))
    g_new = _gradients(problem, x_new, oracle, seed, state.k + 1)
    y_new = pair.B @ y + g_new - state.g
    return replace(state, x=x_new, x_prev=x, y=y_new, g=g_new, k=state.k + 1)


def _require_doubly(W):
    if not is_doubly_stochastic(W):
        raise EngineError("W must be doubly stochastic")


def step_dsgt(state: NetworkState, W, problem, oracle: OracleConfig, seed: int) -> NetworkState:
    """DSGTm-TV with ``A = B = W`` and the momentum switched off."""
    _require_doubly(W)
    W = np.asarray(W, dtype=float)
    no_momentum = replace(state, beta=np.zeros_like(state.beta))
    out = step_dsgtm_tv(no_momentum, MixingPair(W, W, 0.0, 0.0), problem, oracle, seed)
    return replace(out, beta=state.beta)


def step_dsgd(state: NetworkState, W, problem, oracle: OracleConfig, seed: int,
              alpha_schedule: str = "constant") -> NetworkState:
    """``x_{k+1} = W x_k - alpha_k g_k``; ``y`` just mirrors the last gradient."""
    _require_doubly(W)
    _check(state, np.asarray(W))
    if alpha_schedule == "constant":
        alpha = state.alpha
    elif alpha_schedule == "one-over-k":
        alpha = state.alpha / (state.k + 1)
    else:
        raise EngineError(f"unknown stepsize schedule {alpha_schedule!r}")
    x_new = np.asarray(W) @ state.x - alpha[:, None] * state.g
    g_new = _gradients(problem, x_new, oracle, seed, state.k + 1)
    return replace(state, x=x_new, x_prev=state.x, y=g_new, g=g_new, k=state.k + 1)


ALGORITHMS = ("dsgtm-tv", "dsgt", "dsgd")


@dataclass
class RunSetup:
    """Everything a run needs, already realized.

    ``pairs[k]`` mixes step k; for ``dsgt``/``dsgd`` every pair must carry
    the same doubly stochastic matrix in both slots. ``phi``/``pi`` cover
    steps ``0..horizon``.
    """

    algorithm: str
    problem: object
    pairs: list
    phi: object
    pi: object
    oracle: OracleConfig
    alpha: np.ndarray
    beta: np.ndarray
    horizon: int
    seed: int = 0
    x_star: np.ndarray | None = None
    x0: np.ndarray | None = None
    cadence: int = 1
    alpha_schedule: str = "constant"
    config: dict | None = None
    keep_states: bool = False


def _sample(record, state, setup, states):
    from .metrics import error_vector, relative_sumgrad_residual, weighted_average

    k = state.k
    phi_k, pi_k = setup.phi[k], setup.pi[k]
    ev = error_vector(state.x, state.x_prev, phi_k, pi_k, state.y, setup.x_star)
    prob = setup.problem
    loss = float(np.mean([prob.local(i, state.x[i])[0] for i in range(state.n)]))
    acc = (prob.predict_accuracy(weighted_average(state.x, phi_k))
           if hasattr(prob, "predict_accuracy") else float("nan"))
    record.append(k, ev, loss, acc, relative_sumgrad_residual(state.y, state.g))
    if states is not None:
        states.append(state)


def run(setup: RunSetup):
    """Execute ``setup.horizon`` rounds and return a RunRecord.

    With ``keep_states`` the sampled NetworkStates are attached to the
    record as ``record.states``.
    """
    from .metrics import RunRecord
    from .problems import solve_reference

    if setup.algorithm not in ALGORITHMS:
        raise EngineError(f"unknown algorithm {setup.algorithm!r}")
    if setup.horizon < 0:
        raise EngineError("horizon must be >= 0")
    if len(setup.pairs) < setup.horizon:
        raise EngineError(f"{len(setup.pairs)} mixing pairs for horizon {setup.horizon}")
    if setup.x_star is None:
        setup.x_star = solve_reference(setup.problem)[0]
    record = RunRecord(config=dict(setup.config or {}), seed=setup.seed)
    states = [] if setup.keep_states else None
    state = init_state(setup.problem, setup.alpha, setup.beta, setup.oracle, setup.seed, setup.x0)
    _sample(record, state, setup, states)
    for k in range(setup.horizon):
        pair = setup.pairs[k]
        try:
            if setup.algorithm == "dsgtm-tv":
                state = step_dsgtm_tv(state, pair, setup.problem, setup.oracle, setup.seed)
            elif setup.algorithm == "dsgt":
                state = step_dsgt(state, pair.A, setup.problem, setup.oracle, setup.seed)
            else:
                state = step_dsgd(state, pair.A, setup.problem, setup.oracle, setup.seed,
                                  setup.alpha_schedule)
        except ValueError as exc:
            raise EngineError(f"step {k}: {exc}") from exc
        if state.k % setup.cadence == 0 or state.k == setup.horizon:
            _sample(record, state, setup, states)
    if states is not None:
        record.states = states
    return record

"""Error quantities of the Lyapunov analysis and run bookkeeping."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .problems import accuracy

CSV_COLUMNS = ("iter", "opt_gap", "consensus", "state_diff", "tracking",
               "loss", "accuracy", "sumgrad_residual")


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ErrorVector:
    opt_gap: float
    consensus: float
    state_diff: float
    tracking: float

    def as_array(self) -> np.ndarray:
        return np.array([self.opt_gap, self.consensus, self.state_diff, self.tracking])


def weighted_average(xs, phi) -> np.ndarray:
    xs = np.atleast_2d(xs)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (xs.shape[0],):
        raise MetricsError(f"{xs.shape[0]} states but {phi.size} weights")
    return phi @ xs


def weighted_sq_norm(u, a) -> float:
    """``sum_i a_i |u_i|^2`` for stacked rows ``u``."""
    return float(np.asarray(a) @ np.einsum("ij,ij->i", u, u))


def tracking_error_sq(ys, pi) -> float:
    """``S^2(y, pi) = sum_i pi_i |y_i / pi_i - sum_j y_j|^2``."""
    pi = np.asarray(pi, dtype=float)
    if (pi <= 0).any():
        raise MetricsError("tracking error needs a strictly positive pi")
    dev = ys / pi[:, None] - ys.sum(axis=0)
    return weighted_sq_norm(dev, pi)


def error_vector(xs, xs_prev, phi_k, pi_k, ys, x_star) -> ErrorVector:
    x_hat = weighted_average(xs, phi_k)
    gap = x_hat - x_star
    diff = xs - xs_prev
    return ErrorVector(
        opt_gap=float(gap @ gap),
        consensus=weighted_sq_norm(xs - x_hat, phi_k),
        state_diff=float(np.sum(diff * diff)),
        tracking=tracking_error_sq(ys, pi_k),
    )


def sumgrad_residual(ys, gs) -> float:
    """``|sum_i y_i - sum_i g_i|_inf``."""
    return float(np.abs(np.sum(ys, axis=0) - np.sum(gs, axis=0)).max())


def relative_sumgrad_residual(ys, gs) -> float:
    return sumgrad_residual(ys, gs) / (1.0 + float(np.abs(np.sum(gs, axis=0)).max()))


def heterogeneity(problem, x_star) -> float:
    """Mean squared local gradient norm at the optimum."""
    return float(np.mean([np.sum(problem.local(i, x_star)[1] ** 2) for i in range(problem.n)]))


def y_pi_inv_sq(ys, pi) -> float:
    """``|y|^2_{pi^{-1}} = sum_i |y_i|^2 / pi_i``."""
    return weighted_sq_norm(ys, 1.0 / np.asarray(pi))


def one_step_bounds(ev: ErrorVector, y_norm_sq: float, sc, g, alpha_bar, beta_bar) -> np.ndarray:
    """Right-hand sides of the four one-step recursions in the noiseless case.

    ``sc`` holds the constants of step k (``varphi_k``, ``varphi_k1``,
    ``gamma_k``, ``nu_k``, ``zeta_k``), ``g`` the horizon-wide ones
    (``n``, ``L``, ``mu``, ``eta``, ``c``, ``tau``).
    """
    a, b = alpha_bar, beta_bar
    V1, V2, V3, V4 = ev.as_array()
    c2, t2 = g.c**2, g.tau**2
    opt = ((1 - a * g.n * g.mu * g.eta / 2) * V1
           + 3 * a * g.L**2 * sc.varphi_k**2 / g.mu * V2
           + 6 * b**2 / (a * g.n * g.mu * g.eta) * V3
           + 6 * a / (g.n * g.mu * g.eta) * V4)
    cons = ((1 + c2) / 2 * V2
            + 2 * a**2 * (1 + c2) * sc.gamma_k**2 / (1 - c2) * y_norm_sq
            + 2 * b**2 * (1 + c2) / (1 - c2) * V3)
    diff = (3 * (g.c * sc.varphi_k1 + sc.varphi_k) ** 2 * V2
            + 3 * a**2 * y_norm_sq + 3 * b**2 * V3)
    track = ((1 + t2) / 2 * V4 + sc.zeta_k * V2
             + sc.nu_k * a**2 * y_norm_sq + sc.nu_k * b**2 * V3)
    return np.array([opt, cons, diff, track])


@dataclass
class RunRecord:
    """Metric series sampled every ``cadence`` iterations.

    ``sumgrad_residual`` is stored relative: ``|sum y - sum g|_inf / (1 + |sum g|_inf)``.
    """

    iters: list = field(default_factory=list)
    errors: list = field(default_factory=list)  # ErrorVector per sample
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    sumgrad_residual: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0

    def append(self, k, ev, loss, acc, resid):
        self.iters.append(k)
        self.errors.append(ev)
        self.loss.append(loss)
        self.accuracy.append(acc)
        self.sumgrad_residual.append(resid)

    def __len__(self):
        return len(self.iters)

    def column(self, name) -> np.ndarray:
        if name == "iter":
            return np.array(self.iters)
        if name in ("opt_gap", "consensus", "state_diff", "tracking"):
            return np.array([getattr(e, name) for e in self.errors])
        return np.array(getattr(self, name), dtype=float)

    def table(self) -> np.ndarray:
        return np.column_stack([self.column(c) for c in CSV_COLUMNS]) if self.iters else \
            np.empty((0, len(CSV_COLUMNS)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.table():
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()


def aggregate(records) -> dict:
    """Per-sample mean and standard error of every metric across records."""
    tables = np.stack([r.table() for r in records])
    mean = tables.mean(axis=0)
    if len(records) > 1:
        stderr = tables.std(axis=0, ddof=1) / np.sqrt(len(records))
    else:
        stderr = np.zeros_like(mean)
    return {"mean": mean, "stderr": stderr}


def aggregate_csv(agg) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = CSV_COLUMNS[1:]
    w.writerow(["iter"] + [f"{c}_mean" for c in cols] + [f"{c}_stderr" for c in cols])
    for m, s in zip(agg["mean"], agg["stderr"]):
        w.writerow([int(m[0])] + [repr(float(v)) for v in m[1:]] + [repr(float(v)) for v in s[1:]])
    return buf.getvalue()

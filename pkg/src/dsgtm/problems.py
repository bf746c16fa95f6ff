"""Local costs, datasets, partitions, stochastic oracles, reference optima."""

from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)

ORACLE_MODES = ("exact", "minibatch", "exact-plus-noise")
PARTITION_SCHEMES = ("iid", "label-sorted")


class ProblemError(ValueError):
    pass


# --------------------------------------------------------------------------
# data

@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (m, p)
    labels: np.ndarray  # (m,), entries in {+1, -1}
    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        if not np.isin(self.labels, (-1.0, 1.0)).all():
            raise ProblemError("labels must be +1 or -1")
        if not np.isfinite(self.features).all():
            raise ProblemError("non-finite feature values")

    @property
    def p(self) -> int:
        return self.features.shape[1]


def _split(m, n_test, rng):
    order = rng.permutation(m)
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def synthetic_two_gaussian(n_train=2000, n_test=500, p=784, separation=4.0, seed=0) -> Dataset:
    """Two unit-variance Gaussian classes in ``p`` dimensions.

    The class means sit at ``+-separation / 2`` along a random unit
    direction, so the Bayes accuracy is ``Phi(separation / 2)``.
    """
    rng = np.random.default_rng(seed)
    m = n_train + n_test
    labels = np.where(rng.random(m) < 0.5, 1.0, -1.0)
    direction = rng.standard_normal(p)
    direction /= np.linalg.norm(direction)
    X = rng.standard_normal((m, p)) + np.outer(labels, direction) * (separation / 2)
    train, test = _split(m, n_test, rng)
    return Dataset(X, labels, train, test)


def load_csv(path, n_test=None, test_fraction=0.2, seed=0) -> Dataset:
    """Rows ``label,f1,...,fp``; labels other than +-1 are mapped by sign (0 -> -1)."""
    raw = np.loadtxt(path, delimiter=",", ndmin=2)
    labels = np.where(raw[:, 0] > 0, 1.0, -1.0)
    m = len(labels)
    n_test = int(round(m * test_fraction)) if n_test is None else n_test
    train, test = _split(m, n_test, np.random.default_rng(seed))
    return Dataset(raw[:, 1:], labels, train, test)


def _read_idx(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        data = fh.read()
    _, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if dtype_code != 0x08:
        raise ProblemError(f"{path}: only unsigned-byte IDX files are supported")
    dims = struct.unpack(">" + "I" * ndim, data[4:4 + 4 * ndim])
    return np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim).reshape(dims)


def load_mnist_pair(images, labels, digits=(3, 5), n_train=2000, n_test=500, seed=0) -> Dataset:
    """Binary subset of raw MNIST IDX files; ``digits[0]`` is labelled +1."""
    X = _read_idx(images).reshape(-1, 28 * 28).astype(float) / 255.0
    y = _read_idx(labels)
    keep = np.flatnonzero(np.isin(y, digits))
    rng = np.random.default_rng(seed)
    if len(keep) < n_train + n_test:
        raise ProblemError(f"only {len(keep)} samples of digits {digits}")
    pick = rng.choice(keep, n_train + n_test, replace=False)
    lab = np.where(y[pick] == digits[0], 1.0, -1.0)
    m = len(pick)
    return Dataset(X[pick], lab, np.arange(n_test, m), np.arange(n_test))


def partition(ds: Dataset, n: int, scheme: str = "iid", seed: int = 0) -> list:
    """Disjoint per-agent shards covering the training indices."""
    m = len(ds.train)
    if n < 1 or n > m:
        raise ProblemError(f"cannot split {m} training samples over {n} agents")
    if scheme == "iid":
        order = np.random.default_rng(seed).permutation(ds.train)
    elif scheme == "label-sorted":
        order = ds.train[np.argsort(ds.labels[ds.train], kind="stable")]
    else:
        raise ProblemError(f"unknown partition scheme {scheme!r}")
    return [np.sort(s) for s in np.array_split(order, n)]


# --------------------------------------------------------------------------
# costs

def _augment(features):
    return np.hstack([np.ones((features.shape[0], 1)), features])


def loss_and_grad(x, features, labels, lam):
    """Mean logistic loss plus ``lam/2 |x|^2`` and its gradient.

    ``x[0]`` is the bias; ``features`` must already carry the leading
    column of ones.
    """
    if len(labels) == 0:
        raise ProblemError("empty batch")
    z = (features @ x) * labels
    loss = np.logaddexp(0.0, -z).mean() + 0.5 * lam * (x @ x)
    coef = -labels * expit(-z)
    grad = features.T @ coef / len(labels) + lam * x
    return float(loss), grad


class LogisticProblem:
    kind = "logistic-l2"

    def __init__(self, dataset: Dataset, shards, lam: float):
        if lam < 0:
            raise ProblemError("lambda must be >= 0")
        self.dataset = dataset
        self.lam = float(lam)
        self.shards = [np.asarray(s) for s in shards]
        aug = _augment(dataset.features)
        self._X = [aug[s] for s in self.shards]
        self._y = [dataset.labels[s] for s in self.shards]
        self.n = len(self.shards)
        self.dim = aug.shape[1]
        self._L = None

    def local_size(self, i):
        return len(self._y[i])

    def local(self, i, x, batch=None):
        X, y = self._X[i], self._y[i]
        if batch is not None:
            X, y = X[batch], y[batch]
        return loss_and_grad(x, X, y, self.lam)

    def loss(self, x):
        return float(np.mean([self.local(i, x)[0] for i in range(self.n)]))

    def grad(self, x):
        return np.mean([self.local(i, x)[1] for i in range(self.n)], axis=0)

    def hessian(self, x):
        H = np.zeros((self.dim, self.dim))
        for X, y in zip(self._X, self._y):
            s = expit(X @ x * y)
            w = s * (1 - s)
            H += (X.T * w) @ X / len(y)
        return H / self.n + self.lam * np.eye(self.dim)

    def local_gram_max(self, i, tol=1e-13, max_iter=100_000):
        """Largest eigenvalue of ``X_i^T X_i`` by power iteration."""
        X = self._X[i]
        v = np.ones(self.dim) / np.sqrt(self.dim)
        lam = 0.0
        for _ in range(max_iter):
            w = X.T @ (X @ v)
            new = float(v @ w)
            nw = np.linalg.norm(w)
            if nw == 0:
                return 0.0
            v = w / nw
            if abs(new - lam) <= tol * max(new, 1e-300):
                return new
            lam = new
        log.warning("power iteration stopped at %d iterations", max_iter)
        return lam

    def estimate_L_mu(self):
        if self._L is None:
            self._L = self.lam + max(
                self.local_gram_max(i) / (4 * self.local_size(i)) for i in range(self.n)
            )
        return self._L, self.lam

    def predict_accuracy(self, x, idx=None):
        idx = self.dataset.test if idx is None else idx
        return accuracy(x, self.dataset.features[idx], self.dataset.labels[idx])


class QuadraticProblem:
    """``f_i(x) = 1/2 |x - c_i|^2``; the optimum is the mean center."""

    kind = "quadratic"
    lam = 0.0

    def __init__(self, centers):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.n, self.dim = self.centers.shape

    def local_size(self, i):
        return 1

    def local(self, i, x, batch=None):
        d = x - self.centers[i]
        return 0.5 * float(d @ d), d

    def loss(self, x):
        return float(np.mean([self.local(i, x)[0] for i in range(self.n)]))

    def grad(self, x):
        return x - self.centers.mean(axis=0)

    def hessian(self, x):
        return np.eye(self.dim)

    def estimate_L_mu(self):
        return 1.0, 1.0


def estimate_L_mu(problem):
    """Smoothness of every local cost and strong convexity of their average.

    Logistic: ``L = lam + max_i lambda_max(X_i^T X_i) / (4 m_i)`` over agents
    (each f_i must be L-smooth) and ``mu = lam``.
    """
    return problem.estimate_L_mu()


def solve_reference(problem, tol=1e-12, max_iter=100):
    """Centralized minimizer ``(x_star, f_star)`` by damped Newton."""
    if isinstance(problem, QuadraticProblem):
        x = problem.centers.mean(axis=0)
        return x, problem.loss(x)
    L, mu = estimate_L_mu(problem)
    if mu <= 0:
        raise ProblemError("reference solution needs a strongly convex cost")
    x = np.zeros(problem.dim)
    f = problem.loss(x)
    g = problem.grad(x)
    for _ in range(max_iter):
        if np.linalg.norm(g) <= tol:
            return x, f
        step = np.linalg.solve(problem.hessian(x), g)
        t = 1.0
        while t > 1e-10:
            x_new = x - t * step
            f_new = problem.loss(x_new)
            if f_new <= f - 1e-4 * t * (g @ step):
                break
            t *= 0.5
        g_new = problem.grad(x_new)
        # near the optimum f is flat to rounding; accept full steps that shrink the gradient
        if f_new > f and np.linalg.norm(g_new) >= np.linalg.norm(g):
            break
        x, f, g = x_new, f_new, g_new
    if np.linalg.norm(g) <= tol:
        return x, f
    raise ProblemError(f"Newton stalled with gradient norm {np.linalg.norm(g):.3e}")


def accuracy(x, features, labels):
    """Fraction of correct signs of ``x0 + x1: . b``; a zero score counts as +1."""
    if len(labels) == 0:
        raise ProblemError("empty test set")
    score = features @ x[1:] + x[0]
    pred = np.where(score >= 0, 1.0, -1.0)
    return float((pred == labels).mean())


# --------------------------------------------------------------------------
# oracle

@dataclass(frozen=True)
class OracleConfig:
    mode: str = "exact"
    batch_size: int = 1
    sigma: float = 0.0

    def __post_init__(self):
        if self.mode not in ORACLE_MODES:
            raise ProblemError(f"unknown oracle mode {self.mode!r}")
        if self.sigma < 0:
            raise ProblemError("sigma must be >= 0")
        if self.batch_size < 1:
            raise ProblemError("batch_size must be >= 1")

    @property
    def deterministic(self) -> bool:
        return self.mode == "exact" or (self.mode == "exact-plus-noise" and self.sigma == 0)


def agent_rng(seed: int, agent: int, iteration: int) -> np.random.Generator:
    """Independent stream per (master seed, agent, iteration)."""
    return np.random.default_rng([seed, agent, iteration])


def sample_gradient(problem, agent: int, x, cfg: OracleConfig, seed: int, iteration: int):
    if cfg.deterministic:
        return problem.local(agent, x)[1]
    rng = agent_rng(seed, agent, iteration)
    if cfg.mode == "minibatch":
        m_i = problem.local_size(agent)
        size = cfg.batch_size
        if size > m_i:
            log.warning("batch size %d exceeds local data size %d of agent %d; clamping",
                        size, m_i, agent + 1)
            size = m_i
        batch = rng.choice(m_i, size=size, replace=False)
        return problem.local(agent, x, batch)[1]
    g = problem.local(agent, x)[1]
    return g + rng.standard_normal(g.shape) * (cfg.sigma / np.sqrt(g.size))

"""Experiment configuration, orchestration and persistence.

Configs are INI files (see ``recipes/`` for a complete example)::

    [run]        algorithm, horizon, cadence, seed, seeds, output, plots
    [graph]      n, mode, density, period, topology, file
    [mixing]     rule, floor
    [problem]    kind, lambda, dataset, path, images, labels, digits,
                 n_train, n_test, p, separation, data_seed, partition,
                 center_scale
    [oracle]     mode, batch_size, sigma
    [stepsize]   alpha, beta, alpha_multipliers, beta_multipliers,
                 multiplier_low, schedule, x0

The environment (graph sequence, mixing weights, data, per-agent stepsizes)
is realized from the master ``seed``; replicate ``s`` of ``seeds`` draws
its stochastic gradients from ``seed + s``. Output files contain no
timestamps, so they are a pure function of the config.
"""

from __future__ import annotations

import configparser
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import flows, graph, mixing, problems
from .engine import ALGORITHMS, RunSetup, run
from .metrics import CSV_COLUMNS, aggregate, aggregate_csv

log = logging.getLogger(__name__)

OUTPUT_ENV = "DSGTM_OUTPUT_ROOT"
DATASETS = ("synthetic", "csv", "mnist")
PROBLEM_KINDS = ("logistic-l2", "quadratic")
SCHEDULES = ("constant", "one-over-k")
RECIPES = Path(__file__).parent / "recipes"


class ConfigError(ValueError):
    """Invalid configuration; ``violations`` lists ``section.key: reason``."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass
class ExperimentConfig:
    algorithm: str = "dsgtm-tv"
    horizon: int = 100
    cadence: int = 1
    seed: int = 0
    seeds: int = 1
    output: str = ""
    plots: bool = False
    # graph
    n: int = 10
    graph_mode: str = "per-step-random"
    density: float = 0.3
    period: int = 1
    topology: str = "random"
    graph_file: str = ""
    # mixing
    rule: str = "uniform"
    floor: float = 0.05
    # problem
    kind: str = "logistic-l2"
    lam: float = 0.001
    dataset: str = "synthetic"
    path: str = ""
    images: str = ""
    labels: str = ""
    digits: tuple = (3, 5)
    n_train: int = 2000
    n_test: int = 500
    p: int = 784
    separation: float = 4.0
    data_seed: int = 0
    partition: str = "iid"
    center_scale: float = 1.0
    # oracle
    oracle_mode: str = "exact"
    batch_size: int = 1
    sigma: float = 0.0
    # stepsizes
    alpha: float = 0.1
    beta: float = 0.0
    alpha_multipliers: object = "ones"
    beta_multipliers: object = "ones"
    multiplier_low: float = 0.5
    schedule: str = "constant"
    x0: float = 0.0

    @property
    def oracle(self) -> problems.OracleConfig:
        return problems.OracleConfig(self.oracle_mode, self.batch_size, self.sigma)

    @property
    def generator(self) -> graph.GeneratorSpec:
        return graph.GeneratorSpec(self.graph_mode, self.density, self.period, self.topology)

    def output_dir(self) -> Path:
        if self.output:
            return Path(self.output)
        return Path(os.environ.get(OUTPUT_ENV, "runs")) / "experiment"

    def as_dict(self) -> dict:
        return asdict(self)


# ini (section, key) -> config attribute
_KEYS = {
    ("run", "algorithm"): "algorithm",
    ("run", "horizon"): "horizon",
    ("run", "cadence"): "cadence",
    ("run", "seed"): "seed",
    ("run", "seeds"): "seeds",
    ("run", "output"): "output",
    ("run", "plots"): "plots",
    ("graph", "n"): "n",
    ("graph", "mode"): "graph_mode",
    ("graph", "density"): "density",
    ("graph", "period"): "period",
    ("graph", "topology"): "topology",
    ("graph", "file"): "graph_file",
    ("mixing", "rule"): "rule",
    ("mixing", "floor"): "floor",
    ("problem", "kind"): "kind",
    ("problem", "lambda"): "lam",
    ("problem", "dataset"): "dataset",
    ("problem", "path"): "path",
    ("problem", "images"): "images",
    ("problem", "labels"): "labels",
    ("problem", "digits"): "digits",
    ("problem", "n_train"): "n_train",
    ("problem", "n_test"): "n_test",
    ("problem", "p"): "p",
    ("problem", "separation"): "separation",
    ("problem", "data_seed"): "data_seed",
    ("problem", "partition"): "partition",
    ("problem", "center_scale"): "center_scale",
    ("oracle", "mode"): "oracle_mode",
    ("oracle", "batch_size"): "batch_size",
    ("oracle", "sigma"): "sigma",
    ("stepsize", "alpha"): "alpha",
    ("stepsize", "beta"): "beta",
    ("stepsize", "alpha_multipliers"): "alpha_multipliers",
    ("stepsize", "beta_multipliers"): "beta_multipliers",
    ("stepsize", "multiplier_low"): "multiplier_low",
    ("stepsize", "schedule"): "schedule",
    ("stepsize", "x0"): "x0",
}
_ATTR_KEY = {attr: f"{sec}.{key}" for (sec, key), attr in _KEYS.items()}
_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(attr, raw):
    kind = _TYPES[attr]
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "yes", "true", "on"):
            return True
        if low in ("0", "no", "false", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if attr == "digits":
        return tuple(int(t) for t in raw.split(","))
    if attr in ("alpha_multipliers", "beta_multipliers"):
        raw = raw.strip()
        if raw in ("ones", "random"):
            return raw
        return tuple(float(t) for t in raw.split(","))
    return raw.strip()


def _multiplier_violations(cfg, name):
    mult = getattr(cfg, name)
    key = _ATTR_KEY[name]
    if isinstance(mult, str):
        return [] if mult in ("ones", "random") else [f"{key}: expected ones, random or a list"]
    out = []
    if len(mult) != cfg.n:
        out.append(f"{key}: {len(mult)} multipliers for {cfg.n} agents")
    if any(m < 0 or m > 1 for m in mult):
        out.append(f"{key}: multipliers must lie in [0, 1]")
    return out


def validate_config(cfg: ExperimentConfig) -> list:
    """Semantic problems with ``cfg`` as ``section.key: reason`` strings."""
    v = []

    def need(cond, attr, msg):
        if not cond:
            v.append(f"{_ATTR_KEY[attr]}: {msg}")

    need(cfg.algorithm in ALGORITHMS, "algorithm", f"must be one of {', '.join(ALGORITHMS)}")
    need(cfg.horizon >= 0, "horizon", "must be >= 0")
    need(cfg.cadence >= 1, "cadence", "must be >= 1")
    need(cfg.seeds >= 1, "seeds", "must be >= 1")
    need(cfg.n >= 1, "n", "must be >= 1")
    need(cfg.graph_mode in graph.MODES, "graph_mode", f"must be one of {', '.join(graph.MODES)}")
    need(cfg.topology in graph.TOPOLOGIES, "topology",
         f"must be one of {', '.join(graph.TOPOLOGIES)}")
    need(0 <= cfg.density <= 1, "density", "must be in [0, 1]")
    need(cfg.period >= 1, "period", "must be >= 1")
    need(cfg.rule in mixing.RULES, "rule", f"must be one of {', '.join(mixing.RULES)}")
    need(0 < cfg.floor <= 1, "floor", "must be in (0, 1]")
    need(cfg.kind in PROBLEM_KINDS, "kind", f"must be one of {', '.join(PROBLEM_KINDS)}")
    need(cfg.lam >= 0, "lam", "must be >= 0")
    need(cfg.dataset in DATASETS, "dataset", f"must be one of {', '.join(DATASETS)}")
    need(cfg.dataset != "csv" or cfg.path, "path", "required for dataset = csv")
    need(cfg.partition in problems.PARTITION_SCHEMES, "partition",
         f"must be one of {', '.join(problems.PARTITION_SCHEMES)}")
    need(cfg.oracle_mode in problems.ORACLE_MODES, "oracle_mode",
         f"must be one of {', '.join(problems.ORACLE_MODES)}")
    need(cfg.batch_size >= 1, "batch_size", "must be >= 1")
    need(cfg.sigma >= 0, "sigma", "must be >= 0")
    need(cfg.schedule in SCHEDULES, "schedule", f"must be one of {', '.join(SCHEDULES)}")
    need(cfg.schedule == "constant" or cfg.algorithm == "dsgd", "schedule",
         "one-over-k is only defined for dsgd")
    need(0 <= cfg.multiplier_low <= 1, "multiplier_low", "must be in [0, 1]")
    need(cfg.alpha >= 0, "alpha", "must be >= 0")
    need(cfg.beta >= 0, "beta", "must be >= 0")
    v += _multiplier_violations(cfg, "alpha_multipliers")
    v += _multiplier_violations(cfg, "beta_multipliers")
    mult = cfg.alpha_multipliers
    if cfg.alpha == 0 or (not isinstance(mult, str) and not any(m > 0 for m in mult)):
        v.append("stepsize.alpha: at least one stepsize positive is required")
    if cfg.kind == "quadratic" and cfg.oracle_mode == "minibatch":
        v.append("oracle.mode: minibatch sampling needs a data-backed problem")
    if cfg.algorithm in ("dsgt", "dsgd"):
        # a doubly stochastic W needs a static, symmetric graph with metropolis weights
        need(cfg.graph_mode == "static", "graph_mode", f"{cfg.algorithm} requires a static graph")
        need(cfg.rule == "metropolis", "rule",
             f"{cfg.algorithm} requires metropolis (doubly stochastic) weights")
    if cfg.rule == "metropolis" and not cfg.graph_file:
        need(cfg.topology in ("ring", "complete") and cfg.graph_mode == "static", "topology",
             "metropolis weights need a static ring or complete graph")
    if cfg.graph_mode == "C-periodic":
        need(cfg.period <= max(cfg.horizon, 1), "period", "exceeds the horizon")
    return v


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        if isinstance(exc, configparser.ParsingError):
            raise ConfigError([f"parse error in {source}, line {line}: cannot parse {text!r}"
                               for line, text in exc.errors]) from None
        line = getattr(exc, "lineno", None)
        where = f"{source}, line {line}" if line else source
        raise ConfigError([f"parse error in {where}: {exc.message.splitlines()[0]}"]) from None
    cfg = ExperimentConfig()
    violations = []
    for section in parser.sections():
        for key, raw in parser.items(section):
            attr = _KEYS.get((section, key))
            if attr is None:
                violations.append(f"{section}.{key}: unknown key")
                continue
            try:
                setattr(cfg, attr, _convert(attr, raw))
            except ValueError as exc:
                violations.append(f"{section}.{key}: {exc}")
    if violations:
        raise ConfigError(violations)
    violations = validate_config(cfg)
    if violations:
        raise ConfigError(violations)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError([f"{path}: no such file"])
    cfg = parse_config(path.read_text(), source=str(path))
    # relative data paths resolve against the config's directory
    for attr in ("path", "images", "labels", "graph_file"):
        value = getattr(cfg, attr)
        if value and not Path(value).is_absolute():
            setattr(cfg, attr, str(path.parent / value))
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical INI echo of every setting; ``parse_config`` reads it back."""
    sections = {}
    for (section, key), attr in _KEYS.items():
        value = getattr(cfg, attr)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(repr(t) for t in value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        sections.setdefault(section, []).append(f"{key} = {text}")
    return "\n".join(f"[{s}]\n" + "\n".join(lines) + "\n" for s, lines in sections.items())


# --------------------------------------------------------------------------
# realization

@dataclass
class Environment:
    """Everything fixed by the master seed."""

    cfg: ExperimentConfig
    problem: object
    seq: graph.DigraphSeq
    pairs: list
    phi: flows.StochasticFlow
    pi: flows.StochasticFlow
    alpha: np.ndarray
    beta: np.ndarray
    x_star: np.ndarray
    notes: list = field(default_factory=list)


def _dataset(cfg, notes):
    if cfg.dataset == "mnist":
        if cfg.images and cfg.labels and Path(cfg.images).exists() and Path(cfg.labels).exists():
            return problems.load_mnist_pair(cfg.images, cfg.labels, cfg.digits,
                                            cfg.n_train, cfg.n_test, cfg.data_seed)
        notes.append("MNIST files not found; using the synthetic two-Gaussian surrogate")
        log.warning(notes[-1])
    elif cfg.dataset == "csv":
        return problems.load_csv(cfg.path, n_test=cfg.n_test, seed=cfg.data_seed)
    return problems.synthetic_two_gaussian(cfg.n_train, cfg.n_test, cfg.p,
                                           cfg.separation, cfg.data_seed)


def build_problem(cfg: ExperimentConfig, notes=None):
    notes = [] if notes is None else notes
    if cfg.kind == "quadratic":
        rng = np.random.default_rng(cfg.data_seed)
        return problems.QuadraticProblem(cfg.center_scale * rng.standard_normal((cfg.n, cfg.p)))
    ds = _dataset(cfg, notes)
    shards = problems.partition(ds, cfg.n, cfg.partition, cfg.data_seed)
    return problems.LogisticProblem(ds, shards, cfg.lam)


def _per_agent(base, mult, n, low, rng):
    if isinstance(mult, str):
        m = np.ones(n) if mult == "ones" else rng.uniform(low, 1.0, n)
    else:
        m = np.asarray(mult, dtype=float)
    return base * m


def agent_parameters(cfg: ExperimentConfig):
    """Per-agent (alpha, beta) from base values and multipliers."""
    rng = np.random.default_rng([cfg.seed, 1])
    alpha = _per_agent(cfg.alpha, cfg.alpha_multipliers, cfg.n, cfg.multiplier_low, rng)
    beta = _per_agent(cfg.beta, cfg.beta_multipliers, cfg.n, cfg.multiplier_low, rng)
    return alpha, beta


def build_network(cfg: ExperimentConfig):
    """Graph sequence, mixing pairs and flows for ``max(horizon, 1)`` steps."""
    steps = max(cfg.horizon, 1)
    if cfg.graph_file:
        seq = graph.load(cfg.graph_file)
        if seq.n != cfg.n:
            raise ConfigError([f"graph.file: holds {seq.n} agents, config says {cfg.n}"])
        if seq.horizon < steps:
            raise ConfigError([f"graph.file: {seq.horizon} steps, horizon needs {steps}"])
    else:
        seq = graph.generate_sequence(cfg.n, steps, cfg.generator, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 2])
    cache = {}
    pairs = []
    for k in range(steps):
        g = seq[k]
        if cfg.rule == "random-stochastic":
            pairs.append(mixing.build_mixing(g, cfg.rule, floor=cfg.floor, rng=rng))
        else:
            if g not in cache:
                cache[g] = mixing.build_mixing(g, cfg.rule, floor=cfg.floor)
            pairs.append(cache[g])
    phi = flows.phi_sequence([p.A for p in pairs])
    pi = flows.pi_sequence([p.B for p in pairs])
    return seq, pairs, phi, pi


def build_environment(cfg: ExperimentConfig) -> Environment:
    notes = []
    problem = build_problem(cfg, notes)
    seq, pairs, phi, pi = build_network(cfg)
    if cfg.algorithm in ("dsgt", "dsgd") and not mixing.is_doubly_stochastic(pairs[0].A):
        raise ConfigError([f"mixing.rule: {cfg.algorithm} needs a doubly stochastic W"])
    alpha, beta = agent_parameters(cfg)
    x_star, _ = problems.solve_reference(problem)
    return Environment(cfg, problem, seq, pairs, phi, pi, alpha, beta, x_star, notes)


def run_seed(env: Environment, seed: int, horizon=None):
    cfg = env.cfg
    setup = RunSetup(
        algorithm=cfg.algorithm, problem=env.problem, pairs=env.pairs, phi=env.phi, pi=env.pi,
        oracle=cfg.oracle, alpha=env.alpha, beta=env.beta,
        horizon=cfg.horizon if horizon is None else horizon,
        seed=seed, x_star=env.x_star, x0=np.full(env.problem.dim, cfg.x0),
        cadence=cfg.cadence, alpha_schedule=cfg.schedule, config=cfg.as_dict(),
    )
    return run(setup)


@dataclass
class ExperimentResult:
    records: list
    summary: dict  # {"mean": array, "stderr": array}
    output: Path | None
    notes: list


def run_experiment(cfg: ExperimentConfig, write: bool = True, env: Environment | None = None):
    """One RunRecord per replicate seed plus the mean/stderr aggregate."""
    env = build_environment(cfg) if env is None else env
    records = []
    for s in range(cfg.seeds):
        seed = cfg.seed + s
        try:
            records.append(run_seed(env, seed))
        except ValueError as exc:
            raise ValueError(f"seed {seed}: {exc}") from exc
    summary = aggregate(records)
    out = None
    if write:
        out = cfg.output_dir()
        write_outputs(out, cfg, records, summary, env.notes)
    return ExperimentResult(records, summary, out, env.notes)


def write_outputs(out: Path, cfg, records, summary, notes=()):
    out.mkdir(parents=True, exist_ok=True)
    echo = dump_config(cfg)
    if notes:
        echo = "".join(f"# {n}\n" for n in notes) + echo
    (out / "config.ini").write_text(echo)
    for rec in records:
        (out / f"seed_{rec.seed}.csv").write_text(rec.to_csv())
    (out / "aggregate.csv").write_text(aggregate_csv(summary))
    if cfg.plots:
        iters = summary["mean"][:, 0]
        for j, name in enumerate(CSV_COLUMNS[1:], start=1):
            if name == "accuracy":
                continue
            (out / f"{name}.svg").write_text(svg_plot(iters, summary["mean"][:, j], name))


# --------------------------------------------------------------------------
# plots

def svg_plot(x, y, title, width=480, height=300, pad=48) -> str:
    """Single polyline of ``log10(y)`` against ``x``; nonpositive points are dropped."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(y) & (y > 0)
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n'
            f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>\n')
    if keep.sum() == 0:
        return head + '<text x="50%" y="50%" text-anchor="middle">no positive values</text>\n</svg>\n'
    xs, ly = x[keep], np.log10(y[keep])
    x0, x1 = xs.min(), max(xs.max(), xs.min() + 1)
    y0, y1 = math.floor(ly.min()), math.ceil(ly.max())
    if y1 == y0:
        y1 = y0 + 1

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [head,
             f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" '
             'stroke="black"/>\n',
             f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>\n']
    step = max(1, (y1 - y0) // 6)
    for e in range(y0, y1 + 1, step):
        parts.append(f'<text x="{pad - 6}" y="{py(e) + 4:.1f}" text-anchor="end" '
                     f'font-size="10">1e{e}</text>\n')
    parts.append(f'<text x="{pad}" y="{height - pad + 16}" font-size="10">{x0:g}</text>\n')
    parts.append(f'<text x="{width - pad}" y="{height - pad + 16}" text-anchor="end" '
                 f'font-size="10">{x1:g}</text>\n')
    pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xs, ly))
    parts.append(f'<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{pts}"/>\n')
    parts.append("</svg>\n")
    return "".join(parts)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    new = replace(cfg, **kw)
    violations = validate_config(new)
    if violations:
        raise ConfigError(violations)
    return new

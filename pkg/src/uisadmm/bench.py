"""Experiment harness: problem construction, per-algorithm defaults and
seeded suites that write CSV traces and a summary table.

Every algorithm is an instance of the outer ADMM loop. Literature step
sizes ``eta`` enter as proximal weights ``w1 = 1 / (beta eta)``.
"""

import csv
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .admm import DivergenceError, SolverConfig, read_trace_csv, run, write_trace_csv
from .inner import InnerSchedule
from .problem import (Dataset, ProblemSpec, RegularizerSpec, SigmoidLoss,
                      build_constraint, parse_libsvm)

__all__ = [
    "ALGORITHMS", "PROBE_COLUMNS", "SUMMARY_COLUMNS", "ConfigError",
    "ExperimentConfig", "default_config", "synth_data", "accuracy",
    "load_dataset", "build_problem", "solver_config", "run_experiment",
    "summarize_trace", "read_summary", "median_final_loss",
]

ALGORITHMS = ("SADMM", "SVRG-ADMM", "SPIDER-ADMM", "H-SADMM", "ASADMM", "AH-SADMM")
PROBE_COLUMNS = ("k", "stat_x", "stat_y", "stat_r", "xi_x", "bias_measured",
                 "bias_predicted")
SUMMARY_COLUMNS = ("algorithm", "seed", "status", "outer_iterations", "final_loss",
                   "final_accuracy", "grad_calls", "wall_time_s")

_INNER_KEYS = ("m", "M", "c1", "tau_momentum", "l3", "accelerate", "estimator_alpha",
               "pair_batch", "output")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One comparison: a problem, a list of algorithms and a list of seeds.

    ``dataset`` is ``{"kind": "synthetic", "n", "d", "seed", "noise"}`` or
    ``{"kind": "libsvm", "path"}``. ``overrides`` maps an algorithm name to
    ``SolverConfig`` fields or ``InnerSchedule`` fields that replace the
    defaults.
    """

    problem: str = "scad_classification"
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic", "n": 2000,
                                                   "d": 50, "seed": 0, "noise": 0.1})
    graph_spec: Optional[str] = None
    lambda1: float = 1e-5
    scad_c: float = 3.7
    scad_kappa: float = 0.1
    algorithms: tuple = ("SADMM", "AH-SADMM")
    epochs: int = 20
    seeds: tuple = (0,)
    overrides: dict = field(default_factory=dict)
    output_dir: str = "results"
    probe_interval: int = 10
    record_wall_time: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.problem not in ("scad_classification", "fused_lasso"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        self.algorithms = tuple(self.algorithms)
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}; choose from {ALGORITHMS}")
        for a in self.overrides:
            if a not in ALGORITHMS:
                raise ConfigError(f"override for unknown algorithm {a!r}")
        if int(self.epochs) < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        kind = self.dataset.get("kind")
        if kind not in ("synthetic", "libsvm"):
            raise ConfigError(f"unknown dataset kind {kind!r}")


def default_config(algorithm, N, L, beta=1.01, s=1.2):
    """Solver settings for ``algorithm`` on ``N`` samples with smoothness ``L``.

    SADMM: ``eta_k = 0.05 / (1 + ceil(k / N))``, batch ``ceil(sqrt N)``.
    SVRG-ADMM: ``eta = 1 / (3L)``, batch ``ceil(N^(2/3))``.
    SPIDER-ADMM: ``eta = 1 / (2L)``, batch ``ceil(sqrt N)``.
    H-SADMM, ASADMM, AH-SADMM: inner solver with ``M = ceil(N^(1/3))`` and
    momentum ``tau = 0.8``; H-SADMM drops the momentum schedule and ASADMM
    the recursive estimator term.
    """
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    if N < 1 or L <= 0:
        raise ConfigError("need N >= 1 and L > 0")
    base = dict(beta=beta, s=s, w2=0.0)
    sqrt_b = min(N, math.ceil(math.sqrt(N)))
    if algorithm == "SADMM":
        eta0 = 0.05
        return SolverConfig(**base, w1=1.0 / (beta * eta0), estimator="SGD", batch=sqrt_b,
                            w1_decay=1.0, decay_period=N)
    if algorithm == "SVRG-ADMM":
        b = min(N, math.ceil(N ** (2.0 / 3.0) - 1e-9))
        return SolverConfig(**base, w1=3.0 * L / beta, estimator="SVRG", batch=b)
    if algorithm == "SPIDER-ADMM":
        return SolverConfig(**base, w1=2.0 * L / beta, estimator="SPIDER", batch=sqrt_b)
    M = min(N, math.ceil(N ** (1.0 / 3.0) - 1e-9))
    inner = InnerSchedule(m=10, M=M, c1=1.0, tau_momentum=0.8,
                          accelerate=algorithm != "H-SADMM",
                          estimator_alpha=0.0 if algorithm == "ASADMM" else None)
    return SolverConfig(**base, w1=0.0, x_update_mode="inner_accel", batch=M, inner=inner)


def _with_overrides(cfg, opts):
    opts = dict(opts)
    inner_opts = {k: opts.pop(k) for k in _INNER_KEYS if k in opts}
    if inner_opts:
        if cfg.inner is None:
            raise ConfigError(f"inner settings {sorted(inner_opts)} need the inner solver")
        cfg = replace(cfg, inner=replace(cfg.inner, **inner_opts))
        if "M" in inner_opts and "batch" not in opts:
            opts["batch"] = inner_opts["M"]
    unknown = set(opts) - set(SolverConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown solver settings {sorted(unknown)}")
    return replace(cfg, **opts)


def synth_data(n, d, seed=0, noise=0.1):
    """Gaussian classification data with a planted weight vector.

    Features are ``N(0, 1/d)`` so rows have unit expected squared norm;
    labels are ``sign(a^T w* + noise * eps)`` with ``w* ~ N(0, I)``, and a
    zero score is labelled ``+1``. ``noise = 0`` gives data separated by
    ``w*``. Returns ``(dataset, w_star)``.
    """
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    if noise < 0:
        raise ValueError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal(d)
    X = rng.standard_normal((n, d)) / math.sqrt(d)
    score = X @ w_star + noise * rng.standard_normal(n)
    labels = np.where(score >= 0, 1.0, -1.0)
    return Dataset.from_dense(X, labels), w_star


def accuracy(dataset, x):
    """Fraction of samples with ``sign(a_i^T x) = b_i``; a zero score is wrong."""
    if dataset.n_samples == 0:
        raise ValueError("empty dataset")
    score = dataset.matrix @ np.asarray(x, dtype=float)
    return float(np.mean(score * dataset.labels > 0))


def load_dataset(spec):
    kind = spec.get("kind")
    if kind == "synthetic":
        return synth_data(int(spec["n"]), int(spec["d"]), int(spec.get("seed", 0)),
                          float(spec.get("noise", 0.1)))[0]
    if kind == "libsvm":
        path = spec["path"]
        with open(path) as fh:
            return parse_libsvm(fh, spec.get("n_features"))
    raise ConfigError(f"unknown dataset kind {kind!r}")


def build_problem(config, dataset):
    d = dataset.n_features
    if config.problem == "scad_classification":
        reg = RegularizerSpec("SCAD", config.lambda1, config.scad_c, config.scad_kappa)
        graph = config.graph_spec or "identity"
    else:
        reg = RegularizerSpec("L1", config.lambda1)
        graph = config.graph_spec or "chain_difference"
    if graph in ("identity", "chain_difference"):
        con = build_constraint(graph, d)
    else:
        kind, _, path = graph.partition(":")
        con = build_constraint((kind, path), d)
    return ProblemSpec(SigmoidLoss(dataset), reg, con)


def solver_config(config, algorithm, problem, seed):
    N = problem.loss.n_samples
    cfg = default_config(algorithm, N, problem.L)
    cfg = _with_overrides(cfg, config.overrides.get(algorithm, {}))
    budget = N * int(config.epochs)
    return replace(cfg, seed=int(seed), grad_budget=budget, outer_T=budget,
                   probe_interval=config.probe_interval,
                   record_wall_time=config.record_wall_time)


def summarize_trace(records):
    """Final loss, outer iteration count and gradient calls from trace rows."""
    if not records:
        return dict(outer_iterations=0, final_loss=None, grad_calls=0)
    last = records[-1]
    return dict(outer_iterations=last.k, final_loss=last.loss_F,
                grad_calls=last.grad_calls)


def _one_run(job):
    config, algorithm, seed, out_dir = job
    dataset = load_dataset(config.dataset)
    problem = build_problem(config, dataset)
    cfg = solver_config(config, algorithm, problem, seed)
    tag = f"{algorithm}_{seed}"
    t0 = time.perf_counter()
    try:
        res = run(problem, cfg)
        trace, probes, x, status = res.trace, res.probes, res.final.x, "ok"
    except DivergenceError as err:
        trace, probes, x, status = [], [], None, f"diverged at k={err.k}"
    wall = time.perf_counter() - t0
    write_trace_csv(trace, os.path.join(out_dir, f"{tag}.csv"))
    write_trace_csv(probes, os.path.join(out_dir, f"{tag}_probe.csv"), PROBE_COLUMNS)
    row = dict(algorithm=algorithm, seed=seed, status=status,
               final_accuracy=accuracy(dataset, x) if x is not None else None,
               wall_time_s=wall if config.record_wall_time else None)
    row.update(summarize_trace(trace))
    return row


def run_experiment(config, output_dir=None):
    """Run every (algorithm, seed) pair and write its CSV artifacts.

    Writes ``{algo}_{seed}.csv`` (trace), ``{algo}_{seed}_probe.csv`` and
    ``summary.csv`` into the output directory, which is returned. The budget
    is ``N * epochs`` sample gradients per run. A diverged run is recorded in
    the summary and the others continue.
    """
    out_dir = output_dir or config.output_dir
    if config.dataset.get("kind") == "libsvm" and not os.path.isfile(config.dataset["path"]):
        raise FileNotFoundError(f"dataset file not found: {config.dataset['path']}")
    os.makedirs(out_dir, exist_ok=True)
    jobs = [(config, a, s, out_dir) for a in config.algorithms for s in config.seeds]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(_one_run, jobs))
    else:
        rows = [_one_run(j) for j in jobs]
    write_trace_csv(rows, os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS)
    return out_dir


def read_summary(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def median_final_loss(out_dir, algorithm, seeds):
    vals = []
    for s in seeds:
        recs = read_trace_csv(os.path.join(out_dir, f"{algorithm}_{s}.csv"))
        vals.append(recs[-1].loss_F if recs else math.inf)
    return float(np.median(vals))

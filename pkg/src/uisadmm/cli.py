"""Command line entry point.

Subcommands: ``run``, ``sweep``, ``probe`` and ``validate-params``, each
taking a TOML config file with sections ``[problem]``,
``[problem.dataset]``, ``[algorithms.<name>]``, ``[run]`` and optionally
``[sweep]`` and ``[probe]``. See the README for the key list.
"""

import argparse
import csv
import itertools
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .admm import ParamError, validate_params
from .bench import (ConfigError, ExperimentConfig, build_problem,
                    load_dataset, read_summary, run_experiment, solver_config)

OUTPUT_ENV = "UISADMM_OUTPUT_DIR"

_RUN_KEYS = {"epochs", "seeds", "output_dir", "probe_interval", "record_wall_time",
             "workers"}
_PROBLEM_KEYS = {"kind", "lambda1", "scad_c", "scad_kappa", "graph", "dataset"}


def load_config(path):
    """Parse a TOML config file into an :class:`ExperimentConfig` and the raw table."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return config_from_dict(raw), raw


def config_from_dict(raw):
    unknown = set(raw) - {"problem", "algorithms", "run", "sweep", "probe"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    prob = dict(raw.get("problem", {}))
    bad = set(prob) - _PROBLEM_KEYS
    if bad:
        raise ConfigError(f"unknown [problem] keys {sorted(bad)}")
    runs = dict(raw.get("run", {}))
    bad = set(runs) - _RUN_KEYS
    if bad:
        raise ConfigError(f"unknown [run] keys {sorted(bad)}")
    algos = raw.get("algorithms", {})
    if not algos:
        raise ConfigError("config needs at least one [algorithms.<name>] section")
    kw = {}
    if "kind" in prob:
        kw["problem"] = prob["kind"]
    for key in ("lambda1", "scad_c", "scad_kappa"):
        if key in prob:
            kw[key] = float(prob[key])
    if "graph" in prob:
        kw["graph_spec"] = prob["graph"]
    if "dataset" in prob:
        kw["dataset"] = dict(prob["dataset"])
    out = runs.pop("output_dir", None) or os.environ.get(OUTPUT_ENV) or "results"
    return ExperimentConfig(algorithms=tuple(algos),
                            overrides={a: dict(v) for a, v in algos.items() if v},
                            output_dir=out, **kw, **runs)


def cmd_run(args):
    config, _ = load_config(args.config)
    if args.output_dir:
        config.output_dir = args.output_dir
    if args.workers is not None:
        config.workers = args.workers
    out = run_experiment(config)
    _print_summary(os.path.join(out, "summary.csv"))
    return 0


def cmd_sweep(args):
    """Cartesian grid over the ``[sweep]`` table, one subdirectory per point."""
    config, raw = load_config(args.config)
    grid = raw.get("sweep", {})
    base = args.output_dir or config.output_dir
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    keys = sorted(grid)
    points = list(itertools.product(*(grid[k] for k in keys))) if keys else [()]
    index_rows = []
    for i, values in enumerate(points):
        sub = dict(raw)
        sub["run"] = dict(raw.get("run", {}))
        sub["problem"] = dict(raw.get("problem", {}))
        for k, v in zip(keys, values):
            section, _, name = k.rpartition(".")
            section = section or "run"
            if section not in ("problem", "run"):
                raise ConfigError(f"sweep key {k!r} must target [problem] or [run]")
            sub[section][name] = v
        cfg = config_from_dict(sub)
        cfg.workers = workers
        out = os.path.join(base, f"point_{i:03d}")
        run_experiment(cfg, out)
        index_rows.append([str(i), out] + [repr(v) for v in values])
        print(f"point {i}: " + ", ".join(f"{k}={v!r}" for k, v in zip(keys, values)))
        _print_summary(os.path.join(out, "summary.csv"))
    os.makedirs(base, exist_ok=True)
    with open(os.path.join(base, "sweep_index.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "output_dir"] + keys)
        w.writerows(index_rows)
    return 0


def cmd_probe(args):
    """Enumeration-scale bias and variance checks of the hybrid estimator."""
    from .diagnostics import bias_probe, variance_bound_probe
    from .problem import SigmoidLoss
    from .bench import synth_data

    config, raw = load_config(args.config)
    opts = raw.get("probe", {})
    n, d = int(opts.get("n", 8)), int(opts.get("d", 4))
    steps, t_max = int(opts.get("steps", 5)), int(opts.get("t_max", 3))
    alphas = [float(a) for a in opts.get("alphas", [0.25, 0.5, 0.9])]
    seed = int(opts.get("seed", 0))
    rng = np.random.default_rng(seed)
    loss = SigmoidLoss(synth_data(n, d, seed)[0])
    points = np.cumsum(0.3 * rng.standard_normal((max(steps, t_max) + 1, d)), axis=0)
    out = args.output_dir or config.output_dir
    os.makedirs(out, exist_ok=True)
    worst = 0.0
    ok = True
    with open(os.path.join(out, "probe_bias.csv"), "w", newline="") as fb, \
            open(os.path.join(out, "probe_variance.csv"), "w", newline="") as fv:
        wb, wv = csv.writer(fb), csv.writer(fv)
        wb.writerow(["alpha", "t", "measured", "predicted"])
        wv.writerow(["alpha", "t", "measured", "bound"])
        for a in alphas:
            for t, (m, p) in enumerate(bias_probe(points[:steps + 1], loss, a, seed=seed), 1):
                worst = max(worst, abs(m - p))
                wb.writerow([repr(a), t, repr(m), repr(p)])
            if n <= 10:
                res = variance_bound_probe(points, loss, a, t_max, check=False)
                for t, (m, b) in enumerate(res):
                    ok &= m <= b * (1 + 1e-12)
                    wv.writerow([repr(a), t, repr(m), repr(b)])
    print(f"bias recursion: max |measured - predicted| = {worst:.3e}")
    print(f"variance bound: {'holds' if ok else 'VIOLATED'} at every t"
          if n <= 10 else "variance bound: skipped (needs n <= 10)")
    return 0 if ok and worst <= 1e-10 else 1


def cmd_validate(args):
    config, _ = load_config(args.config)
    problem = build_problem(config, load_dataset(config.dataset))
    print(f"N={problem.loss.n_samples} d={problem.loss.dim} L={problem.L!r} "
          f"sigma_A={problem.sigma_A!r}")
    status = 0
    for algo in config.algorithms:
        cfg = solver_config(config, algo, problem, config.seeds[0])
        try:
            p = validate_params(cfg, problem, cfg.c_x)
            verdict = "feasible"
        except ParamError as err:
            p, verdict, status = None, f"infeasible: {err}", 1
        print(f"[{algo}] beta={cfg.beta!r} s={cfg.s!r} w1={cfg.w1!r} w2={cfg.w2!r}")
        if p is not None:
            print(f"  A_hat={p.A_hat!r} B_hat={p.B_hat!r} mu={p.mu_floor!r} "
                  f"w1 in [{p.w1_min!r}, {p.w1_max!r}] w2 >= {p.w2_min!r}")
        print(f"  {verdict}")
    return status


def _print_summary(path):
    for row in read_summary(path):
        print(f"  {row['algorithm']:<12} seed={row['seed']:<4} {row['status']:<10} "
              f"loss={row['final_loss'] or '-':<22} acc={row['final_accuracy'] or '-':<8} "
              f"grad_calls={row['grad_calls']}")


def build_parser():
    ap = argparse.ArgumentParser(prog="uisadmm", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    specs = [("run", cmd_run, "run every algorithm and seed of a config"),
             ("sweep", cmd_sweep, "run a parameter grid in a worker pool"),
             ("probe", cmd_probe, "exact bias and variance checks of the hybrid estimator"),
             ("validate-params", cmd_validate, "report penalty-parameter feasibility")]
    for name, fn, help_ in specs:
        p = sub.add_parser(name, help=help_)
        p.add_argument("config")
        p.add_argument("-o", "--output-dir", default=None)
        if name in ("run", "sweep"):
            p.add_argument("-j", "--workers", type=int, default=None)
        p.set_defaults(func=fn)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, tomllib.TOMLDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

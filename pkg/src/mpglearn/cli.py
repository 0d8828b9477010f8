"""Experiment command line: run seeded experiments to CSV traces, compute
post-hoc policy-space accuracy, render SVG charts, and verify environments.

Subcommands: run, accuracy, plot, verify.  Artifacts are deterministic:
identical configs and seeds produce byte-identical CSVs and SVGs regardless
of thread count.  Set MPGLEARN_LOG=DEBUG|INFO|WARNING to control logging.
"""

import argparse
import configparser
import csv
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import svg
from .core import l1_accuracy, random_logits, uniform_logits, write_policy
from .dynamics import ALGORITHMS, AlgoConfig, run as run_dynamics
from .environments import (DistancingParams, build_cooperative,
                           build_distancing, build_scg, layered_dag,
                           parse_dag_spec)
from .sampling import SampleConfig
from .verify import verify_environment

log = logging.getLogger("mpglearn")

CSV_SCHEMA_VERSION = 1
TRACE_COLUMNS = ("run_id", "algorithm", "iteration", "max_policy_step_l1",
                 "potential", "nash_gap")
ACCURACY_COLUMNS = ("run_id", "algorithm", "iteration", "l1_accuracy")
SUMMARY_COLUMNS = ("run_id", "algorithm", "seed", "status", "iterations",
                   "snapshot_every")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    environment: dict
    algorithms: list
    algo: AlgoConfig            # template; algorithm field varies per run
    runs: int
    seed_base: int
    nash_gap_every: int
    snapshot_every: int
    init: str
    init_scale: float
    shared_init: bool
    base_dir: Path


def _get(section, key, cast, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"missing key {key!r} in section [{section.name}]")
        return default
    try:
        if cast is bool:
            return section.getboolean(key)
        return cast(section[key])
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r} in [{section.name}]: {exc}")


def load_config(path):
    """Parse an experiment config (INI format, sections described in README)."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        with open(path) as f:
            parser.read_file(f, source=str(path))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    if "environment" not in parser:
        raise ConfigError(f"{path}: missing [environment] section")
    if "algorithm" not in parser:
        raise ConfigError(f"{path}: missing [algorithm] section")
    env_sec = parser["environment"]
    alg_sec = parser["algorithm"]
    exp_sec = parser["experiment"] if "experiment" in parser else {}

    environment = dict(env_sec)
    if "dag" in env_sec:
        dag_path = (path.parent / env_sec["dag"]).resolve()
        if not dag_path.exists():
            raise ConfigError(f"{path}: referenced DAG file {dag_path} "
                              f"does not exist")
        environment["dag"] = str(dag_path)

    algorithms = _get(alg_sec, "algorithm", str, required=True).split()
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ConfigError(f"{path}: unknown algorithm {a!r}")
    eval_mode = _get(alg_sec, "eval_mode", str, default="exact")
    sample_cfg = None
    if eval_mode == "sampled":
        sample_cfg = SampleConfig(
            horizon=_get(alg_sec, "horizon", int, default=20),
            batch=_get(alg_sec, "batch", int, default=20),
            seed=0,
            estimator=_get(alg_sec, "estimator", str, default="first_visit"))
    algo = AlgoConfig(
        algorithm=algorithms[0],
        eta=_get(alg_sec, "eta", float, required=True),
        eval_mode=eval_mode,
        sample_cfg=sample_cfg,
        max_iters=_get(alg_sec, "max_iters", int, default=1000),
        convergence_threshold=_get(alg_sec, "convergence_threshold", float,
                                   default=1e-15),
        guard=_get(alg_sec, "guard", str, default=None))
    algo.check()

    def exp_get(key, cast, default):
        if not exp_sec or key not in exp_sec:
            return default
        if cast is bool:
            return parser["experiment"].getboolean(key)
        return cast(exp_sec[key])

    cfg = ExperimentConfig(
        environment=environment,
        algorithms=algorithms,
        algo=algo,
        runs=exp_get("runs", int, 1),
        seed_base=exp_get("seed_base", int, 0),
        nash_gap_every=exp_get("nash_gap_every", int, 0),
        snapshot_every=exp_get("snapshot_every", int, 1),
        init=exp_get("init", str, "uniform"),
        init_scale=exp_get("init_scale", float, 1.0),
        shared_init=exp_get("shared_init", bool, True),
        base_dir=path.parent)
    if cfg.runs < 1:
        raise ConfigError(f"{path}: runs must be >= 1")
    if cfg.init not in ("uniform", "random"):
        raise ConfigError(f"{path}: init must be 'uniform' or 'random'")
    return cfg


def build_environment(environment):
    """Construct the environment described by an [environment] section dict."""
    etype = environment.get("type")
    if etype == "scg":
        if "dag" in environment:
            with open(environment["dag"]) as f:
                spec = parse_dag_spec(f.read(), name=environment["dag"])
        elif "layers" in environment:
            sizes = [int(x) for x in environment["layers"].split()]
            spec = layered_dag(sizes,
                               default_base=float(environment.get("base", 1.0)))
        else:
            raise ConfigError("scg environment needs a 'dag' file or 'layers'")
        agents = environment.get("agents")
        return build_scg(
            spec,
            n_agents=int(agents) if agents is not None else None,
            gamma=float(environment.get("gamma", 0.99)),
            reachable_only=environment.get("reachable_only", "false").lower()
            in ("1", "true", "yes"),
            mu=environment.get("mu", "start"),
            goal=environment.get("goal", "absorb"),
            return_reward=float(environment.get("return_reward", 0.0)))
    if etype == "distancing":
        weights = environment.get("weights")
        params = DistancingParams(
            n_agents=int(environment.get("agents", 8)),
            n_facilities=int(environment.get("facilities", 4)),
            weights=tuple(float(w) for w in weights.split())
            if weights else None,
            penalty=float(environment.get("penalty", 0.5)),
            spread_trigger=int(environment.get("spread_trigger", 4)),
            return_trigger=int(environment.get("return_trigger", 2)),
            gamma=float(environment.get("gamma", 0.99)))
        return build_distancing(params, mu=environment.get("mu", "safe"))
    if etype == "cooperative":
        return build_cooperative(
            n_agents=int(environment.get("agents", 2)),
            n_states=int(environment.get("states", 3)),
            n_actions=int(environment.get("actions", 2)),
            gamma=float(environment.get("gamma", 0.9)),
            seed=int(environment.get("seed", 0)))
    raise ConfigError(f"unknown environment type {etype!r}")


def _fmt_cell(x):
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(x)


def _initial_for(env, cfg, seed):
    if cfg.init == "uniform":
        return uniform_logits(env.mdp)
    return random_logits(env.mdp, seed=(seed << 16) | 0xA5,
                         scale=cfg.init_scale)


def _execute_one(env, cfg, algorithm, run_id, out_dir):
    seed = cfg.seed_base + run_id
    init_seed = seed if cfg.shared_init else (seed * len(cfg.algorithms)
                                              + cfg.algorithms.index(algorithm))
    algo = AlgoConfig(
        algorithm=algorithm, eta=cfg.algo.eta, eval_mode=cfg.algo.eval_mode,
        sample_cfg=SampleConfig(
            horizon=cfg.algo.sample_cfg.horizon,
            batch=cfg.algo.sample_cfg.batch, seed=seed,
            estimator=cfg.algo.sample_cfg.estimator)
        if cfg.algo.sample_cfg is not None else None,
        max_iters=cfg.algo.max_iters,
        convergence_threshold=cfg.algo.convergence_threshold,
        guard=cfg.algo.guard)
    initial = _initial_for(env, cfg, init_seed)

    stem = f"{algorithm}_run{run_id:03d}"
    trace_path = out_dir / f"{stem}.csv"
    with open(trace_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_COLUMNS)

        def stream(rec):
            writer.writerow([run_id, algorithm, rec["iteration"],
                             repr(rec["max_policy_step_l1"]),
                             _fmt_cell(rec["potential"]),
                             _fmt_cell(rec["nash_gap"])])

        trace = run_dynamics(env, algo, initial,
                             nash_gap_every=cfg.nash_gap_every,
                             snapshot_every=cfg.snapshot_every,
                             on_iteration=stream)

    write_policy(trace.final_policy, out_dir / f"{stem}_final.txt")
    if trace.snapshots is not None:
        for i in range(env.mdp.n_agents):
            stack = np.stack([p.probs[i] for p in trace.snapshots])
            np.save(out_dir / f"{stem}_agent{i}.npy", stack)
    log.info("%s: %s after %d iterations", stem, trace.status,
             trace.n_iterations)
    return {"run_id": run_id, "algorithm": algorithm, "seed": seed,
            "status": trace.status, "iterations": trace.n_iterations,
            "snapshot_every": cfg.snapshot_every if trace.snapshots else 0}


def cmd_run(config_path, out_dir, seeds=None, threads=1, guard=None):
    """Execute the configured runs; one trace CSV per (algorithm, run)."""
    cfg = load_config(config_path)
    if guard is not None:
        cfg.algo = AlgoConfig(
            algorithm=cfg.algo.algorithm, eta=cfg.algo.eta,
            eval_mode=cfg.algo.eval_mode, sample_cfg=cfg.algo.sample_cfg,
            max_iters=cfg.algo.max_iters,
            convergence_threshold=cfg.algo.convergence_threshold, guard=guard)
    if seeds is not None:
        if "," in seeds:
            explicit = [int(s) for s in seeds.split(",")]
            cfg.seed_base = explicit[0]
            cfg.runs = len(explicit)
            if explicit != list(range(explicit[0],
                                      explicit[0] + len(explicit))):
                raise ConfigError("--seeds must be a single base or a "
                                  "contiguous ascending list")
        else:
            cfg.seed_base = int(seeds)
    env = build_environment(cfg.environment)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs = [(alg, r) for alg in cfg.algorithms for r in range(cfg.runs)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(
                lambda job: _execute_one(env, cfg, job[0], job[1], out_dir),
                jobs))
    else:
        rows = [_execute_one(env, cfg, alg, r, out_dir) for alg, r in jobs]

    rows.sort(key=lambda r: (r["algorithm"], r["run_id"]))
    with open(out_dir / "summary.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([row[c] for c in SUMMARY_COLUMNS])
    return rows


def read_trace(path):
    """Round-trip reader for trace CSVs."""
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames) != TRACE_COLUMNS:
            raise ConfigError(f"{path}: unexpected trace header "
                              f"{reader.fieldnames}")
        for rec in reader:
            rows.append({
                "run_id": int(rec["run_id"]),
                "algorithm": rec["algorithm"],
                "iteration": int(rec["iteration"]),
                "max_policy_step_l1": float(rec["max_policy_step_l1"]),
                "potential": float(rec["potential"])
                if rec["potential"] else None,
                "nash_gap": float(rec["nash_gap"])
                if rec["nash_gap"] else None})
    return rows


def cmd_accuracy(run_dir, out_dir=None):
    """Recompute policy-space L1 accuracy against each run's final policy."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir else run_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_path = run_dir / "summary.csv"
    if not summary_path.exists():
        raise ConfigError(f"{run_dir} has no summary.csv (run cmd_run first)")
    written = []
    with open(summary_path, newline="") as f:
        for rec in csv.DictReader(f):
            stem = f"{rec['algorithm']}_run{int(rec['run_id']):03d}"
            every = int(rec.get("snapshot_every", 1) or 0)
            agent_files = sorted(run_dir.glob(f"{stem}_agent*.npy"),
                                 key=lambda p: int(p.stem.split("agent")[1]))
            if every == 0 or not agent_files:
                raise ConfigError(f"{stem}: no policy snapshots stored; rerun "
                                  f"with snapshot_every > 0")
            stacks = [np.load(p) for p in agent_files]
            n_snaps = stacks[0].shape[0]
            n_iters = int(rec["iterations"])
            from .core import JointPolicy
            final = JointPolicy([s[-1] for s in stacks], validate=False)
            path = out_dir / f"accuracy_{stem}.csv"
            with open(path, "w", newline="") as g:
                writer = csv.writer(g)
                writer.writerow(ACCURACY_COLUMNS)
                for j in range(n_snaps):
                    iteration = n_iters if j == n_snaps - 1 else j * every
                    snap = JointPolicy([s[j] for s in stacks], validate=False)
                    writer.writerow([rec["run_id"], rec["algorithm"],
                                     iteration,
                                     repr(l1_accuracy(snap, final))])
            written.append(path)
    return written


def cmd_plot(inputs, out_path, band=False, log_y=True):
    """Render accuracy CSVs as one SVG; --band draws mean with a stdev region."""
    paths = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("accuracy_*.csv")))
        else:
            paths.append(p)
    if not paths:
        raise ConfigError("no accuracy CSVs to plot")
    by_algo = {}
    for path in paths:
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if tuple(reader.fieldnames) != ACCURACY_COLUMNS:
                raise ConfigError(f"{path}: unexpected accuracy header")
            for rec in reader:
                key = rec["algorithm"]
                run = int(rec["run_id"])
                by_algo.setdefault(key, {}).setdefault(run, []).append(
                    (int(rec["iteration"]), float(rec["l1_accuracy"])))
    chart = svg.LineChart(title="policy-space L1 accuracy",
                          y_label="L1 accuracy", log_y=log_y)
    colors = {}
    for k, algo in enumerate(sorted(by_algo)):
        colors[algo] = svg.PALETTE[k % len(svg.PALETTE)]
    if band:
        for algo in sorted(by_algo):
            runs = by_algo[algo]
            length = max(len(v) for v in runs.values())
            xs, mean, lo, hi = [], [], [], []
            for j in range(length):
                vals = [v[j][1] for v in runs.values() if j < len(v)]
                its = [v[j][0] for v in runs.values() if j < len(v)]
                m = float(np.mean(vals))
                s = float(np.std(vals))
                xs.append(float(np.mean(its)))
                mean.append(m)
                lo.append(max(m - s, 0.0))
                hi.append(m + s)
            chart.add_band(f"{algo} (stdev)", xs, lo, hi, color=colors[algo])
            chart.add_series(f"{algo} (mean)", xs, mean, color=colors[algo])
    else:
        for algo in sorted(by_algo):
            for run in sorted(by_algo[algo]):
                seq = by_algo[algo][run]
                label = algo if run == min(by_algo[algo]) else ""
                chart.add_series(label, [x for x, _ in seq],
                                 [y for _, y in seq], color=colors[algo])
    text = chart.render()
    with open(out_path, "w") as f:
        f.write(text)
    return Path(out_path)


def cmd_verify(config_path, out_path=None, seed=0, trials=100):
    """Run the verification suite against the configured environment."""
    cfg_parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    path = Path(config_path)
    try:
        with open(path) as f:
            cfg_parser.read_file(f, source=str(path))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    if "environment" not in cfg_parser:
        raise ConfigError(f"{path}: missing [environment] section")
    environment = dict(cfg_parser["environment"])
    if "dag" in environment:
        dag_path = (path.parent / environment["dag"]).resolve()
        if not dag_path.exists():
            raise ConfigError(f"{path}: referenced DAG file {dag_path} "
                              f"does not exist")
        environment["dag"] = str(dag_path)
    env = build_environment(environment)
    report = verify_environment(env, seed=seed, potential_trials=trials)
    text = report.text()
    if out_path:
        with open(out_path, "w") as f:
            f.write(text)
    return report


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("MPGLEARN_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s")
    parser = argparse.ArgumentParser(
        prog="mpglearn",
        description="Independent learning dynamics in Markov potential games")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute seeded experiment runs")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seeds", default=None,
                       help="seed base, or comma list of contiguous seeds")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--guard", choices=("enforce", "warn", "off"),
                       default=None)

    p_acc = sub.add_parser("accuracy", help="post-hoc L1 accuracy per run")
    p_acc.add_argument("--runs", required=True, help="directory with traces")
    p_acc.add_argument("--out", default=None)

    p_plot = sub.add_parser("plot", help="render accuracy CSVs to SVG")
    p_plot.add_argument("inputs", nargs="+",
                        help="accuracy CSVs or directories containing them")
    p_plot.add_argument("--out", required=True)
    p_plot.add_argument("--band", action="store_true",
                        help="mean with one-stdev shading instead of all runs")
    p_plot.add_argument("--linear-y", action="store_true",
                        help="linear instead of log y axis")

    p_ver = sub.add_parser("verify", help="check an environment's theory")
    p_ver.add_argument("--config", required=True)
    p_ver.add_argument("--out", default=None)
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--trials", type=int, default=100)

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            rows = cmd_run(args.config, args.out, seeds=args.seeds,
                           threads=args.threads, guard=args.guard)
            for row in rows:
                print(f"{row['algorithm']} run {row['run_id']}: "
                      f"{row['status']} after {row['iterations']} iterations")
            return 0
        if args.command == "accuracy":
            for path in cmd_accuracy(args.runs, args.out):
                print(path)
            return 0
        if args.command == "plot":
            print(cmd_plot(args.inputs, args.out, band=args.band,
                           log_y=not args.linear_y))
            return 0
        if args.command == "verify":
            report = cmd_verify(args.config, args.out, seed=args.seed,
                                trials=args.trials)
            print(report.text(), end="")
            return 0 if report.passed else 1
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

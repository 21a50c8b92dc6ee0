"""Command-line entry point.

Subcommands: ``run``, ``sweep``, ``bench``, ``validate``, ``emit-defaults``.
Errors print one line ``kinofab: error[<kind>]: <message>`` to stderr and
exit with the code of their kind (see ``EXIT_CODES``).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, build_scenario, default_config, dumps, parse_scenario
from .scenarios import COMBOS, benchmark_scenario, parse_combo, reactivity_scenario, select_behaviors
from .sim import DivergenceError, benchmark, run_scenario

EXIT_CODES = {"ok": 0, "usage": 2, "config": 3, "divergence": 4, "io": 5}
OUTPUT_ENV = "KINOFAB_OUTPUT_DIR"


class CLIError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError("usage", message.replace("\n", " "))


def parse_speeds(text: str) -> list:
    """``"1:10"`` (inclusive, step 1), ``"1:10:0.5"`` or ``"1,2.5,4"``."""
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            lo, hi = parts[0], parts[1]
            step = parts[2] if len(parts) == 3 else 1.0
            if step <= 0 or hi < lo:
                raise ValueError
            count = int(np.floor((hi - lo) / step + 1e-9)) + 1
            speeds = [lo + i * step for i in range(count)]
        else:
            speeds = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise CLIError("usage", f"bad speed range {text!r}") from None
    if not speeds or min(speeds) <= 0:
        raise CLIError("usage", f"speeds must be positive: {text!r}")
    return speeds


def _output_dir(args, cfg=None) -> Path:
    if getattr(args, "out", None):
        out = args.out
    elif os.environ.get(OUTPUT_ENV):
        out = os.environ[OUTPUT_ENV]
    elif cfg is not None:
        out = cfg.run["output_dir"]
    else:
        out = "out"
    path = Path(out)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CLIError("io", f"cannot create output directory {out}: {exc}") from None
    return path


def _load(path):
    try:
        return parse_scenario(path)
    except FileNotFoundError:
        raise CLIError("io", f"no such file: {path}") from None
    except OSError as exc:
        raise CLIError("io", str(exc)) from None
    except ConfigError as exc:
        raise CLIError("config", str(exc)) from None


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise CLIError("io", str(exc)) from None


# -- subcommands -----------------------------------------------------------------------

def cmd_run(args):
    cfg = _load(args.config)
    scenario = build_scenario(cfg)
    out = _output_dir(args, cfg)
    try:
        log = run_scenario(scenario)
    except DivergenceError as exc:
        raise CLIError("divergence", str(exc)) from None
    try:
        log.write_csv(out / f"{scenario.name}.csv")
        log.write_summary(out / f"{scenario.name}_summary.json")
    except OSError as exc:
        raise CLIError("io", str(exc)) from None
    print(json.dumps(log.summary, sort_keys=True))
    return 0


def _sweep_one(job):
    index, scenario = job
    try:
        return index, run_scenario(scenario).summary["min_distance"], None
    except DivergenceError as exc:
        return index, None, str(exc)


def sweep_scenarios(cfg, speeds, repeller_modes):
    """One scenario per (speed, repeller mode), in sweep-index order."""
    jobs = []
    for speed in speeds:
        for mode in repeller_modes:
            if cfg is None:
                scenario = reactivity_scenario(speed, repeller=mode)
            else:
                if not cfg.obstacles:
                    raise CLIError("config", "sweep needs at least one obstacle")
                base = build_scenario(cfg)
                obstacles = list(base.obstacles)
                obstacles[0] = replace(obstacles[0], launch_speed=speed)
                behaviors = [b for b in base.behaviors if mode or b.kind != "repeller"]
                names = {b.name for b in behaviors}
                nodes = _prune_nodes(base.nodes, names)
                scenario = replace(base, behaviors=behaviors, nodes=nodes, obstacles=obstacles,
                                   name=f"{base.name}[v={speed:g},{'on' if mode else 'off'}]")
            jobs.append((len(jobs), scenario))
    return jobs


def _prune_nodes(nodes, keep):
    names = {nd.name for nd in nodes}
    out = []
    for nd in nodes:
        children = [c for c in nd.children if c in keep or c in names]
        if children:
            out.append(replace(nd, children=children))
    return out


def cmd_sweep(args):
    cfg = _load(args.config) if args.config else None
    speeds = parse_speeds(args.speeds) if args.speeds else (
        cfg.run["sweep_speeds"] if cfg else [float(v) for v in range(1, 11)])
    modes = []
    for m in args.repeller.split(","):
        m = m.strip().lower()
        if m not in ("on", "off"):
            raise CLIError("usage", f"--repeller takes on/off, got {m!r}")
        modes.append(m == "on")
    jobs = sweep_scenarios(cfg, speeds, modes)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    errors = [r[2] for r in results if r[2]]
    if errors:
        raise CLIError("divergence", errors[0])

    table = {}
    for (index, dist, _), (_, scen) in zip(results, jobs):
        speed, mode = speeds[index // len(modes)], modes[index % len(modes)]
        table.setdefault(speed, {})[mode] = dist
    header = ["speed"] + [f"min_dist_{'on' if m else 'off'}" for m in modes]
    rows = [[repr(s)] + [repr(table[s][m]) for m in modes] for s in speeds]
    out = _output_dir(args, cfg)
    _write_csv(out / "sweep.csv", header, rows)
    print("  ".join(f"{h:>14}" for h in header))
    for s in speeds:
        print("  ".join([f"{s:>14.3g}"] + [f"{table[s][m]:>14.4f}" for m in modes]))
    return 0


def bench_table(cfg, combos, iterations):
    """Timing summary per behavior combination, in the order given."""
    rows = []
    for combo in combos:
        tags = parse_combo(combo)
        if cfg is None:
            scenario = benchmark_scenario(combo)
        else:
            base = build_scenario(cfg)
            behaviors = select_behaviors(base.behaviors, tags)
            nodes = _prune_nodes(base.nodes, {b.name for b in behaviors})
            scenario = replace(base, behaviors=behaviors, nodes=nodes, name=f"{base.name}[{combo}]")
        rows.append((combo, benchmark(scenario, iterations)))
    return rows


def cmd_bench(args):
    cfg = _load(args.config) if args.config else None
    combos = [c.strip() for c in args.combos.split(",") if c.strip()]
    try:
        for c in combos:
            parse_combo(c)
    except ValueError as exc:
        raise CLIError("usage", str(exc)) from None
    iterations = args.iterations or (cfg.run["bench_iterations"] if cfg else 1000)
    if iterations < 100:
        raise CLIError("usage", "--iterations must be >= 100")
    try:
        rows = bench_table(cfg, combos, iterations)
    except DivergenceError as exc:
        raise CLIError("divergence", str(exc)) from None
    out = _output_dir(args, cfg)
    _write_csv(out / "bench.csv", ["combo", "mean_ms", "std_ms", "median_ms", "p99_ms"],
               [[c, r["mean_ms"], r["std_ms"], r["median_ms"], r["p99_ms"]] for c, r in rows])
    width = max(len(c) for c in combos)
    for combo, r in rows:
        print(f"{combo:<{width}}  {r['mean_ms']:.2f} ± {r['std_ms']:.2f} ms  (median {r['median_ms']:.2f})")
    return 0


def cmd_validate(args):
    _load(args.config)
    print(f"{args.config}: ok")
    return 0


def cmd_emit_defaults(args):
    sys.stdout.write(dumps(default_config(), comments=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kinofab", description="Reactive fabric controller for planar chains.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one scenario, write CSV log and summary")
    run.add_argument("config")
    run.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV})")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="launch-speed sweep: min distance per speed")
    sweep.add_argument("config", nargs="?")
    sweep.add_argument("--speeds", help="e.g. 1:10, 1:10:0.5 or 1,2,5")
    sweep.add_argument("--repeller", default="on,off", help="on, off or on,off")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--out")
    sweep.set_defaults(func=cmd_sweep)

    bench = sub.add_parser("bench", help="control-step timing per behavior combination")
    bench.add_argument("config", nargs="?")
    bench.add_argument("--combos", default=",".join(COMBOS))
    bench.add_argument("--iterations", type=int)
    bench.add_argument("--out")
    bench.set_defaults(func=cmd_bench)

    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)

    emit = sub.add_parser("emit-defaults", help="print a commented reference config")
    emit.set_defaults(func=cmd_emit_defaults)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CLIError as exc:
        print(f"kinofab: error[{exc.kind}]: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.kind]


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``sdnr run | powerflow | reduce-scenarios | compare``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from sdnr import __version__
from sdnr._random import substream
from sdnr.netmodel import CaseError, Topology, base_topology, hourly_loads, is_connected, is_radial, load_case
from sdnr.objectives import OBJECTIVE_NAMES, OperationalState
from sdnr.optimizer import ICSAConfig, ProblemContext, run
from sdnr.powerflow import InjectionSet, max_voltage_deviation, solve
from sdnr.reliability import load_or_build
from sdnr.scenarios import build_tree, kantorovich_select
from sdnr.scheduler import DayConfig, DaySchedule, hour_scenarios, run_day

log = logging.getLogger("sdnr")


class UsageError(Exception):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _hour(text: str) -> int:
    v = int(text)
    if not 1 <= v <= 24:
        raise argparse.ArgumentTypeError(f"hour must be in 1..24, got {text}")
    return v


@dataclass(frozen=True)
class RunConfig:
    case_path: str
    seed: int = 0
    mode: str = "icsa"
    failure_modeling: bool = True
    n_mc_samples: int = 1000
    scenario_keep: int = 10
    population: int = 30
    iterations: int = 100
    fl: float = 2.0
    alpha_ap: float = 0.1
    tau: float = 1.5
    capacity: int = 50
    output_dir: str = "results"
    reliability_cache: str | None = None
    trace: bool = False

    def validate(self):
        if not Path(self.case_path).is_file():
            raise UsageError(f"case file not found: {self.case_path}")
        if self.mode not in ("csa", "icsa"):
            raise UsageError(f"unknown mode {self.mode!r}")
        for name in ("n_mc_samples", "scenario_keep", "population", "iterations", "fl", "alpha_ap", "tau", "capacity"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")

    def optimizer(self) -> ICSAConfig:
        return ICSAConfig(
            population=self.population,
            iterations=self.iterations,
            fl=self.fl,
            alpha_ap=self.alpha_ap,
            tau=self.tau,
            repository_capacity=self.capacity,
            seed=self.seed,
        )

    def day(self) -> DayConfig:
        return DayConfig(
            seed=self.seed,
            mode=self.mode,
            failure_modeling=self.failure_modeling,
            n_mc_samples=self.n_mc_samples,
            scenario_keep=self.scenario_keep,
            optimizer=self.optimizer(),
            reliability_cache=self.reliability_cache,
        )


# ---------------------------------------------------------------------------
# Output helpers


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_atomic(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def publish_dir(files: dict, output_dir: Path):
    """Write ``files`` into a temporary sibling directory, then swap it in."""
    output_dir = Path(output_dir)
    output_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(dir=output_dir.parent, prefix=f".{output_dir.name}."))
    try:
        for name, text in files.items():
            (staging / name).write_text(text)
        if output_dir.exists():
            old = output_dir.with_name(f".{output_dir.name}.old")
            shutil.rmtree(old, ignore_errors=True)
            output_dir.rename(old)
            staging.rename(output_dir)
            shutil.rmtree(old, ignore_errors=True)
        else:
            staging.rename(output_dir)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise


def schedule_files(schedule: DaySchedule, case, config: RunConfig) -> dict:
    hours = schedule.hours
    files = {}
    files["hourly_objectives.csv"] = _csv_text(
        ["hour", *OBJECTIVE_NAMES, "grid_import_kw", "v_min", "v_max", "feasible", "fallback"],
        [
            [h.hour, *map(_fmt, h.objectives.as_array()), _fmt(h.evaluation.grid_import),
             _fmt(h.evaluation.v_min), _fmt(h.evaluation.v_max), _fmt(h.evaluation.feasible), _fmt(h.fallback)]
            for h in hours
        ],
    )
    files["topologies.csv"] = _csv_text(
        ["hour", "open_branches"],
        [[h.hour, " ".join(map(str, h.decision.topology.open_ids))] for h in hours],
    )
    header = ["hour"]
    for g in case.dg_units:
        header += [f"{g.name}_commit", f"{g.name}_kw"]
    header += [f"DR{dr.node}_kw" for dr in case.dr_contracts]
    for e in case.ess_units:
        header += [f"{e.name}_kw", f"{e.name}_soc_kwh"]
    rows = []
    for h in hours:
        d = h.decision
        row = [h.hour]
        for k in range(len(case.dg_units)):
            row += [_fmt(bool(d.dg_commit[k])), _fmt(d.dg_power[k])]
        row += [_fmt(x) for x in d.dr_curtail]
        for k in range(len(case.ess_units)):
            row += [_fmt(d.ess_power[k]), _fmt(h.soc_after[k])]
        rows.append(row)
    files["dispatch.csv"] = _csv_text(header, rows)
    farm_names = [f.name for f in case.pv_farms]
    rows = []
    for h in hours:
        s = h.scenario_set
        for i in range(len(s)):
            rows.append([h.hour, i, _fmt(s.probability[i]), *map(int, s.units_up[i]), *map(_fmt, s.irradiance[i])])
    files["scenarios_used.csv"] = _csv_text(
        ["hour", "scenario", "probability", *[f"{n}_units_up" for n in farm_names], *[f"{n}_irradiance" for n in farm_names]],
        rows,
    )
    if config.trace:
        files["trace.csv"] = _csv_text(
            ["hour", "iteration", "repository", "feasible"],
            [[h.hour, r["iteration"], r["repository"], r["feasible"]] for h in hours for r in h.trace],
        )
    files["manifest.json"] = json.dumps(
        {
            "version": __version__,
            "case": case.name,
            "case_sha256": case.digest,
            "config": asdict(config),
            "daily_totals": schedule.totals,
            "daily_means": schedule.means,
            "fallback_hours": schedule.fallback_hours,
            "files": sorted(files),
        },
        indent=2,
        sort_keys=True,
    ) + "\n"
    return files


def summary_table(schedule: DaySchedule) -> str:
    lines = [f"{'hour':>4} {'of1':>10} {'of2':>10} {'of3':>8} {'of4':>12}  open branches"]
    for h in schedule.hours:
        f = h.objectives
        flag = "  (fallback)" if h.fallback else ""
        lines.append(
            f"{h.hour:>4} {f.of1:>10.4f} {f.of2:>10.4f} {f.of3:>8.4f} {f.of4:>12.2f}  "
            f"{' '.join(map(str, h.decision.topology.open_ids))}{flag}"
        )
    m = schedule.means
    lines.append(f"{'mean':>4} {m['of1']:>10.4f} {m['of2']:>10.4f} {m['of3']:>8.4f} {m['of4']:>12.2f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_run(config: RunConfig) -> int:
    config.validate()
    case = load_case(config.case_path)
    schedule = run_day(case, config.day())
    publish_dir(schedule_files(schedule, case, config), Path(config.output_dir))
    print(summary_table(schedule))
    print(f"results written to {config.output_dir}")
    return 0


def _topology_from_open(case, open_ids) -> Topology:
    ids = [int(x) for x in open_ids]
    bad = [i for i in ids if not 1 <= i <= case.n_branch]
    if bad:
        raise UsageError(f"unknown branch ids: {bad}")
    topo = Topology.from_open(case, ids)
    if not is_radial(topo, case):
        reason = "islands part of the network" if not is_connected(topo.closed, case) else "leaves a loop closed"
        raise UsageError(f"open set {sorted(ids)} is not radial: it {reason}")
    return topo


def cmd_powerflow(case_path: str, open_ids, hour: int | None = None) -> int:
    case = load_case(case_path)
    topo = base_topology(case) if open_ids is None else _topology_from_open(case, open_ids)
    if hour is None:
        p, q = case.peak_p, case.peak_q
    else:
        p, q = hourly_loads(case, hour)
    sol = solve(case, topo, InjectionSet(p, q))
    loading = sol.branch_current / case.ampacity
    worst = int(np.argmax(loading))
    print(f"case           {case.name}")
    print(f"open branches  {' '.join(map(str, topo.open_ids))}")
    print(f"converged      {sol.converged} ({sol.iterations} iterations)")
    print(f"total loss     {sol.total_loss:.4f} kW")
    print(f"grid import    {sol.grid_p:.4f} kW, {sol.grid_q:.4f} kVAr")
    print(f"min voltage    {sol.voltage.min():.6f} p.u. at bus {int(np.argmin(sol.voltage)) + 1}")
    print(f"max voltage    {sol.voltage.max():.6f} p.u. at bus {int(np.argmax(sol.voltage)) + 1}")
    print(f"max deviation  {float(max_voltage_deviation(sol)):.6f} p.u.")
    print(
        f"worst loading  branch {worst + 1}: {sol.branch_current[worst]:.2f} A "
        f"of {case.ampacity[worst]:.0f} A ({100 * loading[worst]:.1f}%)"
    )
    return 0 if sol.converged else 1


def cmd_reduce_scenarios(case_path: str, hour: int, keep: int, seed: int, output: str | None) -> int:
    case = load_case(case_path)
    full = build_tree(case.pv_farms, hour, rng=substream(seed, "scenarios", hour), elapsed=hour)
    if keep > len(full):
        raise UsageError(f"keep={keep} exceeds the {len(full)} scenarios available")
    unit_counts = [f.unit_count for f in case.pv_farms]
    selected, new_prob, distance = kantorovich_select(full.outcomes(unit_counts), full.probability, keep)
    reduced = dict(zip(selected, new_prob))
    names = [f.name for f in case.pv_farms]
    rows = []
    for i in range(len(full)):
        kept = i in reduced
        rows.append(
            [i, _fmt(full.probability[i]), _fmt(kept), _fmt(reduced.get(i, 0.0)),
             *map(int, full.units_up[i]), *map(_fmt, full.irradiance[i])]
        )
    text = _csv_text(
        ["scenario", "probability", "kept", "reduced_probability",
         *[f"{n}_units_up" for n in names], *[f"{n}_irradiance" for n in names]],
        rows,
    )
    if output:
        write_atomic(Path(output), text)
    else:
        sys.stdout.write(text)
    print(f"hour {hour}: {len(full)} -> {keep} scenarios, Kantorovich distance {distance:.6g}", file=sys.stderr)
    return 0


def _compare_one(args):
    case_path, mode, seed, hour, context_seed, opt_kwargs = args
    case = load_case(case_path)
    day = DayConfig(seed=context_seed)
    tensor = load_or_build(case, context_seed, day.n_mc_samples, day.horizon, substream(context_seed, "reliability"))
    scen = hour_scenarios(case, hour, day, substream(context_seed, "scenarios", hour))
    state = OperationalState.initial(case, base_topology(case))
    cfg = ICSAConfig(seed=seed, **opt_kwargs)
    start = time.process_time()
    result = run(ProblemContext(case, scen, tensor, hour, state), cfg, mode, rng=substream(seed, "optimizer", hour))
    elapsed = time.process_time() - start
    return mode, seed, result.best.evaluation.penalized.as_array(), elapsed


def compare_statistics(case_path, modes, seeds, hour=15, context_seed=0, threads=None, **opt_kwargs):
    """Per mode: (mean, std, mean CPU seconds) of the best-compromise objectives."""
    jobs = [(case_path, m, s, hour, context_seed, opt_kwargs) for m in modes for s in seeds]
    if threads == 1:
        results = [_compare_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_compare_one, jobs))
    out = {}
    for m in modes:
        vals = np.array([r[2] for r in results if r[0] == m])
        cpu = float(np.mean([r[3] for r in results if r[0] == m]))
        out[m] = (vals.mean(axis=0), vals.std(axis=0, ddof=1), cpu)
    return out


def cmd_compare(case_path, modes, seeds, hour, output, threads, context_seed, opt_kwargs) -> int:
    if len(seeds) < 2:
        raise UsageError("compare needs at least two seeds")
    load_case(case_path)
    stats = compare_statistics(case_path, modes, seeds, hour, context_seed, threads, **opt_kwargs)
    rows = []
    for m in modes:
        mean, std, cpu = stats[m]
        for k, name in enumerate(OBJECTIVE_NAMES):
            rows.append([m.upper(), _fmt(cpu), name.upper(), _fmt(mean[k]), _fmt(std[k])])
    text = _csv_text(["method", "average_cpu_time_s", "objective", "average", "standard_deviation"], rows)
    if output:
        write_atomic(Path(output), text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _add_optimizer_args(p):
    p.add_argument("--population", type=_positive_int, default=30)
    p.add_argument("--iterations", type=_positive_int, default=100)
    p.add_argument("--fl", type=_positive_float, default=2.0)
    p.add_argument("--alpha-ap", type=_positive_float, default=0.1)
    p.add_argument("--tau", type=_positive_float, default=1.5)
    p.add_argument("--capacity", type=_positive_int, default=50)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdnr", description="Stochastic day-ahead reconfiguration of distribution networks.")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--threads", type=_positive_int, default=None, help="cap on worker processes")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="schedule a full day")
    p.add_argument("--case", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("csa", "icsa"), default="icsa")
    p.add_argument("--failure-modeling", type=_bool, default=True, metavar="{true,false}")
    p.add_argument("--mc-samples", type=_positive_int, default=1000)
    p.add_argument("--keep", type=_positive_int, default=10, help="scenarios kept per hour")
    p.add_argument("--output-dir", default="results")
    p.add_argument("--reliability-cache", default=None, help="directory for cached reliability tensors")
    p.add_argument("--trace", action="store_true", help="also write per-iteration optimizer trace")
    _add_optimizer_args(p)

    p = sub.add_parser("powerflow", help="solve one topology at nominal (or hourly) load")
    p.add_argument("--case", required=True)
    p.add_argument("--open", nargs="+", type=int, default=None, help="1-based ids of open branches")
    p.add_argument("--hour", type=_hour, default=None)

    p = sub.add_parser("reduce-scenarios", help="build and reduce one hour's PV scenario set")
    p.add_argument("--case", required=True)
    p.add_argument("--hour", type=_hour, required=True)
    p.add_argument("--keep", type=_positive_int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", default=None)

    p = sub.add_parser("compare", help="CSA vs ICSA statistics at one hour")
    p.add_argument("--case", required=True)
    p.add_argument("--modes", nargs="+", choices=("csa", "icsa"), default=["csa", "icsa"])
    p.add_argument("--seeds", nargs="+", type=int, default=list(range(1, 11)))
    p.add_argument("--hour", type=_hour, default=15)
    p.add_argument("--context-seed", type=int, default=0, help="seed of the shared scenario set and tensor")
    p.add_argument("--output", default=None)
    _add_optimizer_args(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = RunConfig(
                case_path=args.case,
                seed=args.seed,
                mode=args.mode,
                failure_modeling=args.failure_modeling,
                n_mc_samples=args.mc_samples,
                scenario_keep=args.keep,
                population=args.population,
                iterations=args.iterations,
                fl=args.fl,
                alpha_ap=args.alpha_ap,
                tau=args.tau,
                capacity=args.capacity,
                output_dir=args.output_dir,
                reliability_cache=args.reliability_cache,
                trace=args.trace,
            )
            return cmd_run(cfg)
        if args.command == "powerflow":
            return cmd_powerflow(args.case, args.open, args.hour)
        if args.command == "reduce-scenarios":
            return cmd_reduce_scenarios(args.case, args.hour, args.keep, args.seed, args.output)
        if args.command == "compare":
            opt = dict(
                population=args.population,
                iterations=args.iterations,
                fl=args.fl,
                alpha_ap=args.alpha_ap,
                tau=args.tau,
                repository_capacity=args.capacity,
            )
            return cmd_compare(args.case, args.modes, args.seeds, args.hour, args.output, args.threads, args.context_seed, opt)
    except (UsageError, CaseError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())

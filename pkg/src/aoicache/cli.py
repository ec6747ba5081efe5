"""Command-line front end: ``aoicache run | compare | sweep-v``."""

from __future__ import annotations

import argparse
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import parse_config
from .harness import (
    STAGE1_POLICIES,
    STAGE2_POLICIES,
    V_PRESETS,
    ConfigError,
    MetricsLog,
    ScenarioConfig,
    preset,
    run_scenario,
)

# Reference magnitudes from the original study, printed for context only.
REFERENCE_COMPARE = {
    "proposed": {"updates": 260, "aoi_max_exceed": 638},
    "aoi-greedy": {"updates": 297, "aoi_max_exceed": 1018},
    "random": {"updates": 146, "aoi_max_exceed": 1741},
}
REFERENCE_SWEEP = {"light": (151, 141), "normal": (51, 245), "heavy": (38, 257)}


def base_config(args: argparse.Namespace, default_preset: str = "highway") -> ScenarioConfig:
    if args.config and args.preset:
        raise ConfigError("--config and --preset are mutually exclusive")
    cfg = parse_config(args.config) if args.config else preset(args.preset or default_preset)
    overrides: dict = {}
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if getattr(args, "stage1", None):
        overrides["stage1"] = {"policy": args.stage1}
    if getattr(args, "stage2", None):
        overrides["stage2"] = {"policy": args.stage2}
    return cfg.with_overrides(**overrides) if overrides else cfg


def seeds_of(args: argparse.Namespace, cfg: ScenarioConfig) -> list[int]:
    return list(dict.fromkeys(args.seed)) if args.seed else [cfg.seed]


def run_many(configs: list[ScenarioConfig], jobs: int) -> list[MetricsLog]:
    """Run independent scenarios, in worker processes when ``jobs > 1``.

    Each run owns its RNG streams, so results do not depend on ``jobs``.
    """
    if jobs <= 1 or len(configs) <= 1:
        return [run_scenario(c) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_scenario, configs))


def write_atomic(out: Path, files: dict[str, str]) -> None:
    """Write ``files`` into a fresh directory and move it to ``out`` in one rename."""
    out = out.resolve()
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        for name, text in files.items():
            (tmp / name).write_text(text)
        if out.exists():
            old = Path(tempfile.mkdtemp(prefix=f".{out.name}.old.", dir=out.parent))
            os.replace(out, old / "prev")
            os.replace(tmp, out)
            shutil.rmtree(old)
        else:
            os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def summary_text(cfg: ScenarioConfig, log: MetricsLog) -> str:
    lines = [
        f"seed: {cfg.seed}",
        f"horizon: {cfg.horizon}",
        f"stage1: {cfg.stage1.policy}",
        f"stage2: {cfg.stage2.policy}",
        f"w: {float(log.meta.get('w', 0.0)):.6g}",
        f"V: {float(log.meta.get('V', 0.0)):.6g}",
    ]
    width = max(len(k) for k in log.counters)
    for key, value in log.counters.items():
        shown = f"{value:.3f}" if isinstance(value, float) else str(value)
        lines.append(f"{key:<{width}}  {shown}")
    return "\n".join(lines) + "\n"


def log_files(cfg: ScenarioConfig, log: MetricsLog) -> dict[str, str]:
    return {
        "slots.csv": log.slots_csv(),
        "summary.csv": log.summary_csv(),
        "events.csv": log.events_csv(),
        "kind_stats.csv": log.kind_stats_csv(),
        "summary.txt": summary_text(cfg, log),
    }


def cmd_run(args: argparse.Namespace) -> int:
    cfg = base_config(args)
    seeds = seeds_of(args, cfg)
    configs = [cfg.with_overrides(seed=s) for s in seeds]
    logs = run_many(configs, args.jobs)
    for c, log in zip(configs, logs):
        if args.out:
            target = Path(args.out) if len(seeds) == 1 else Path(args.out) / f"seed-{c.seed}"
            write_atomic(target, log_files(c, log))
        print(summary_text(c, log), end="")
        if len(seeds) > 1:
            print()
    return 0


def compare_rows(policies: list[str], seeds: list[int], logs: dict) -> tuple[list[str], list[str]]:
    """Table lines and per-seed ordering verdict lines."""
    keys = ("updates", "uploads", "aoi_max_exceed", "caching_cost")
    table = [f"{'policy':<12}" + "".join(f"{k:>16}" for k in keys) + f"{'ref updates':>13}{'ref exceed':>12}"]
    for p in policies:
        means = [sum(logs[p, s].counters[k] for s in seeds) / len(seeds) for k in keys]
        ref = REFERENCE_COMPARE[p]
        table.append(f"{p:<12}" + "".join(f"{m:>16.1f}" for m in means)
                     + f"{ref['updates']:>13}{ref['aoi_max_exceed']:>12}")
    verdicts = []
    if set(STAGE1_POLICIES) <= set(policies):
        ex_ok = cost_ok = 0
        for s in seeds:
            ex = {p: logs[p, s].counters["aoi_max_exceed"] for p in STAGE1_POLICIES}
            co = {p: logs[p, s].counters["caching_cost"] for p in STAGE1_POLICIES}
            e = ex["random"] > ex["aoi-greedy"] > ex["proposed"]
            c = co["aoi-greedy"] > co["proposed"] > co["random"]
            ex_ok += e
            cost_ok += c
            verdicts.append(f"seed {s}: exceed random>greedy>proposed {'yes' if e else 'no'}; "
                            f"cost greedy>proposed>random {'yes' if c else 'no'}")
        verdicts.append(f"exceed ordering holds on {ex_ok}/{len(seeds)} seeds; "
                        f"cost ordering holds on {cost_ok}/{len(seeds)} seeds")
    return table, verdicts


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = base_config(args)
    seeds = seeds_of(args, cfg)
    policies = args.policy or list(STAGE1_POLICIES)
    grid = [(p, s) for p in policies for s in seeds]
    configs = [cfg.with_overrides(seed=s, stage1={"policy": p}) for p, s in grid]
    logs = dict(zip(grid, run_many(configs, args.jobs)))
    table, verdicts = compare_rows(policies, seeds, logs)
    text = "\n".join(table + [""] + verdicts) + "\n"
    print("reference columns are from the original study and are not asserted")
    print(text, end="")
    if args.out:
        rows = ["policy,seed,updates,uploads,aoi_max_exceed,caching_cost"]
        for p, s in grid:
            c = logs[p, s].counters
            rows.append(f"{p},{s},{c['updates']},{c['uploads']},{c['aoi_max_exceed']},{c['caching_cost']:.6f}")
        write_atomic(Path(args.out), {"compare.csv": "\n".join(rows) + "\n", "compare.txt": text})
    return 0


def parse_v(value: str) -> float | str:
    if value.lower() in V_PRESETS:
        return value.lower()
    try:
        v = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"V must be a number or one of {tuple(V_PRESETS)}") from None
    if v < 0 or v != v:
        raise argparse.ArgumentTypeError(f"V must be nonnegative, got {value}")
    return v


def monotone_verdict(success: list[int], save: list[int]) -> tuple[bool, bool, bool]:
    non_inc = all(a >= b for a, b in zip(success, success[1:]))
    non_dec = all(a <= b for a, b in zip(save, save[1:]))
    const = len({a + b for a, b in zip(success, save)}) <= 1
    return non_inc, non_dec, const


def cmd_sweep_v(args: argparse.Namespace) -> int:
    cfg = base_config(args, default_preset="single-rsu")
    seeds = seeds_of(args, cfg)
    values = args.v or list(V_PRESETS)
    grid = [(v, s) for s in seeds for v in values]
    configs = [cfg.with_overrides(seed=s, stage2={"V": v}) for v, s in grid]
    logs = dict(zip(grid, run_many(configs, args.jobs)))
    lines = ["reference columns are from the original study and are not asserted",
             f"{'seed':>5} {'V':>10} {'V value':>12} {'success':>8} {'cost_save':>10} {'ref':>10}"]
    csv_rows = ["seed,V,V_value,service_success,cost_save"]
    all_ok = True
    for s in seeds:
        resolved = sorted(((float(logs[v, s].meta["V"]), v) for v in values), key=lambda t: t[0])
        succ, save = [], []
        for vv, v in resolved:
            c = logs[v, s].counters
            succ.append(int(c["service_success"]))
            save.append(int(c["cost_save"]))
            ref = "/".join(map(str, REFERENCE_SWEEP[v])) if isinstance(v, str) else "-"
            lines.append(f"{s:>5} {str(v):>10} {vv:>12.4g} {succ[-1]:>8} {save[-1]:>10} {ref:>10}")
            csv_rows.append(f"{s},{v},{vv:.6f},{succ[-1]},{save[-1]}")
        a, b, c = monotone_verdict(succ, save)
        all_ok &= a and b and c
        lines.append(f"seed {s}: success non-increasing in V {'yes' if a else 'no'}; "
                     f"cost_save non-decreasing {'yes' if b else 'no'}; "
                     f"success+cost_save constant {'yes' if c else 'no'}")
    lines.append(f"monotonicity verdict: {'pass' if all_ok else 'fail'}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        write_atomic(Path(args.out), {"sweep_v.csv": "\n".join(csv_rows) + "\n", "sweep_v.txt": text})
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aoicache", description="AoI-aware vehicular caching simulator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML scenario file")
    common.add_argument("--preset", choices=("highway", "single-rsu"), help="built-in scenario")
    common.add_argument("--seed", type=int, action="append", metavar="N", help="seed (repeatable)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--horizon", type=int, metavar="N", help="number of slots")
    common.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes")
    common.add_argument("--stage2", choices=STAGE2_POLICIES, help="service policy")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="run one scenario per seed")
    run.add_argument("--stage1", choices=STAGE1_POLICIES, help="caching policy")
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", parents=[common], help="compare caching policies")
    cmp_.add_argument("--policy", choices=STAGE1_POLICIES, action="append",
                      help="policy to include (repeatable, default all)")
    cmp_.set_defaults(func=cmd_compare)

    sweep = sub.add_parser("sweep-v", parents=[common], help="sweep the service weight V")
    sweep.add_argument("--stage1", choices=STAGE1_POLICIES, help="caching policy")
    sweep.add_argument("--v", type=parse_v, action="append", metavar="V",
                       help="V value or light/normal/heavy (repeatable)")
    sweep.set_defaults(func=cmd_sweep_v)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"aoicache: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"aoicache: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: simulations, live endpoints, proxy, reports.

Experiment specs are flat key-value files with repeatable [station] blocks
and an optional [multiaccess] block; see the README for the format. Each
run writes its own directory with per-source CSVs and a manifest that
pins the seed, config snapshot and code version, so any run can be
reproduced exactly.
"""

import argparse
import hashlib
import json
import math
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .csvio import (
    SUMMARY_COLUMNS,
    read_ack_log,
    read_monitor_log,
    write_ack_log,
    write_epoch_log,
    write_monitor_log,
    write_rows,
    write_trace,
)
from .metrics import (
    age_trace_from_deliveries,
    age_trace_from_rtt_samples,
    default_horizon,
    jain_fairness,
    summarize,
    time_average_age,
)
from .netsim import (
    MultiaccessConfig,
    SimConfig,
    StationConfig,
    rtt_vs_load_curve,
    run_simulation,
    sweep_min_age,
)
from .transport import ProxyConfig, run_monitor, run_proxy, run_source

# -- spec file parsing


class SpecError(ValueError):
    pass


def _coerce(value):
    text = value.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "unbounded"):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_spec(text):
    """Flat key = value lines plus repeatable [station] / [multiaccess] blocks."""
    top = {}
    stations = []
    multiaccess = None
    section = top
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            name = line.strip("[]").strip().lower()
            if name == "station":
                stations.append({})
                section = stations[-1]
            elif name == "multiaccess":
                multiaccess = {}
                section = multiaccess
            else:
                raise SpecError(f"line {lineno}: unknown section [{name}]")
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        if "," in value:
            section[key] = [_coerce(v) for v in value.split(",")]
        else:
            section[key] = _coerce(value)
    return top, stations, multiaccess


def _station_from(block):
    return StationConfig(
        service=str(block.get("service", "deterministic")),
        rate=float(block["rate"]),
        buffer=block.get("buffer"),
        prop_delay=float(block.get("prop_delay", 0.0)),
    )


def _multiaccess_from(block):
    kw = {}
    for key in ("link_rate", "slot", "persistence", "per_source_loss"):
        if key in block:
            kw[key] = float(block[key])
    if "max_backoff_exp" in block:
        kw["max_backoff_exp"] = int(block["max_backoff_exp"])
    return MultiaccessConfig(**kw)


def _as_list(value):
    if value is None:
        return None
    return value if isinstance(value, list) else [value]


class ExperimentSpec:
    """One sweep: (sweep value x protocol x repetition) simulation runs."""

    def __init__(self, text):
        top, stations, multiaccess = parse_spec(text)
        if not stations:
            raise SpecError("at least one [station] block is required")
        self.text = text
        self.name = str(top.get("name", "experiment"))
        self.repetitions = int(top.get("repetitions", 1))
        if self.repetitions < 1:
            raise SpecError("repetitions must be >= 1")
        self.duration = float(top.get("duration", 10.0))
        self.seed = int(top.get("seed", 0))
        self.payload_bytes = int(top.get("payload_bytes", 1024))
        self.ack_path = str(top.get("ack_path", "symmetric"))
        self.warmup_frac = float(top.get("warmup_frac", 0.1))
        self.alpha = float(top.get("alpha", 0.875))
        self.record_trace = bool(top.get("record_trace", False))
        sweep = _as_list(top.get("sweep_sources"))
        self.source_counts = [int(v) for v in sweep] if sweep else [int(top.get("sources", 1))]
        if len(set(self.source_counts)) != len(self.source_counts):
            raise SpecError("sweep values must be distinct")
        protocols = _as_list(top.get("protocols", top.get("protocol", "acp+")))
        self.protocols = [str(p) for p in protocols]
        self.stations = tuple(_station_from(b) for b in stations)
        self.multiaccess = _multiaccess_from(multiaccess) if multiaccess is not None else None

    def runs(self):
        for n in self.source_counts:
            for proto in self.protocols:
                for rep in range(self.repetitions):
                    yield n, proto, rep

    def sim_config(self, n_sources, protocol, rep):
        seed_text = f"{self.name}/{self.seed}/{n_sources}/{protocol}/{rep}"
        seed = int.from_bytes(hashlib.sha256(seed_text.encode()).digest()[:8], "big")
        return SimConfig(
            stations=self.stations,
            n_sources=n_sources,
            protocol=protocol,
            duration=self.duration,
            seed=seed,
            payload_bytes=self.payload_bytes,
            multiaccess=self.multiaccess,
            ack_path=self.ack_path,
            alpha=self.alpha,
            record_trace=self.record_trace,
        )


# -- run execution and summaries


def _fmt(value, digits=6):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return round(value, digits)


def summarize_run(result, warmup_frac):
    """Run-level aggregates: one summary row plus per-source details."""
    cfg = result.cfg
    horizon = default_horizon(0.0, cfg.duration, warmup_frac)
    span = horizon[1] - horizon[0]
    ages, delays, backlogs, inter_acks, inter_deliveries = [], [], [], [], []
    throughput_total = 0.0
    for i in range(cfg.n_sources):
        rows = result.delivery_rows(i)
        stats = summarize(rows, horizon, cfg.payload_bytes, sent_count=None)
        if stats.delivered_count:
            ages.append(stats.avg_age)
            delays.append(stats.avg_delay)
            throughput_total += stats.throughput
            if not math.isnan(stats.avg_inter_delivery):
                inter_deliveries.append(stats.avg_inter_delivery)
        backlogs.append(result.backlog_average(i, horizon))
        acks = [t for t, _, _ in result.sources[i].ack_log if horizon[0] <= t <= horizon[1]]
        if len(acks) > 1:
            inter_acks.append((acks[-1] - acks[0]) / (len(acks) - 1))
    fairness = jain_fairness(ages) if len(ages) > 1 else 1.0
    return {
        "sources": cfg.n_sources,
        "avg_age_ms": statistics.mean(ages) * 1e3 if ages else math.nan,
        "avg_delay_ms": statistics.mean(delays) * 1e3 if delays else math.nan,
        "throughput_bps": throughput_total,
        "inter_delivery_ms": statistics.mean(inter_deliveries) * 1e3 if inter_deliveries else math.nan,
        "backlog_avg": statistics.mean(backlogs),
        "fairness": fairness,
        "inter_ack_ms": statistics.mean(inter_acks) * 1e3 if inter_acks else math.nan,
        "horizon": span,
    }


def _execute_run(args):
    spec_text, warmup_frac, n, proto, rep, run_dir = args
    spec = ExperimentSpec(spec_text)
    cfg = spec.sim_config(n, proto, rep)
    result = run_simulation(cfg)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    for i, (source, monitor) in enumerate(zip(result.sources, result.monitors)):
        write_monitor_log(run_dir / f"monitor_{i:03d}.csv", monitor.delivery_log)
        write_ack_log(run_dir / f"acks_{i:03d}.csv", source.ack_log)
        if source.epoch_rows:
            write_epoch_log(run_dir / f"source_{i:03d}.csv", source.epoch_rows)
    if cfg.record_trace:
        write_trace(run_dir / "trace.csv", result.trace)
    summary = summarize_run(result, warmup_frac)
    run_id = f"{spec.name}/N{n}/{proto}/rep{rep}"
    manifest = {
        "run_id": run_id,
        "seed": cfg.seed,
        "sources": n,
        "protocol": proto,
        "repetition": rep,
        "duration": cfg.duration,
        "version": __version__,
        "spec": spec_text,
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    row = [run_id, proto, n] + [
        _fmt(summary[k]) for k in ("avg_age_ms", "avg_delay_ms", "throughput_bps",
                                   "inter_delivery_ms", "backlog_avg", "fairness",
                                   "inter_ack_ms")
    ]
    write_rows(run_dir / "summary.csv", SUMMARY_COLUMNS, [row])
    return (n, proto, rep), row


def cmd_simulate(spec_path, out_dir, jobs=1):
    spec_text = Path(spec_path).read_text()
    spec = ExperimentSpec(spec_text)
    out = Path(out_dir) / spec.name
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for n, proto, rep in spec.runs():
        run_dir = out / f"sources-{n:03d}" / proto.replace(":", "-") / f"rep{rep:02d}"
        tasks.append((spec.text, spec.warmup_frac, n, proto, rep, str(run_dir)))
    rows, failures = [], []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for task, outcome in zip(tasks, pool.map(_run_safely, tasks)):
                _collect(task, outcome, rows, failures)
    else:
        for task in tasks:
            _collect(task, _run_safely(task), rows, failures)
    write_rows(out / "runs.csv", SUMMARY_COLUMNS, rows)
    rollup = _rollup(rows)
    write_rows(
        out / "rollup.csv",
        ("sources", "protocol", "runs") + tuple(
            f"{m}_{s}" for m in ("avg_age_ms", "avg_delay_ms", "throughput_bps",
                                 "inter_delivery_ms", "backlog_avg", "fairness")
            for s in ("mean", "std")
        ),
        rollup,
    )
    for task, err in failures:
        print(f"FAILED {task[2]}x{task[3]} rep{task[4]}: {err}", file=sys.stderr)
    print(f"{len(rows)} runs -> {out}")
    return 1 if failures else 0


def _run_safely(task):
    try:
        return _execute_run(task)
    except Exception as exc:  # recorded per run, reported at exit
        return exc


def _collect(task, outcome, rows, failures):
    if isinstance(outcome, Exception):
        failures.append((task, outcome))
    else:
        rows.append(outcome[1])


def _rollup(rows):
    groups = {}
    for row in rows:
        groups.setdefault((row[2], row[1]), []).append(row)
    out = []
    for (n, proto), members in sorted(groups.items()):
        entry = [n, proto, len(members)]
        for idx in range(3, 9):  # metric columns of SUMMARY_COLUMNS
            values = [float(m[idx]) for m in members if m[idx] != ""]
            if values:
                entry.append(round(statistics.mean(values), 6))
                entry.append(round(statistics.stdev(values), 6) if len(values) > 1 else 0.0)
            else:
                entry.extend(["", ""])
        out.append(entry)
    return out


# -- reports


def cmd_report(run_dir, warmup_frac=0.1):
    run_dir = Path(run_dir)
    monitor_files = sorted(run_dir.glob("monitor*.csv"))
    ack_files = sorted(run_dir.glob("*acks*.csv"))
    if not monitor_files and not ack_files:
        print(f"no endpoint CSVs found in {run_dir}", file=sys.stderr)
        return 1
    rows = []
    scatter = []
    errors = 0
    for path in monitor_files:
        try:
            log_rows = read_monitor_log(path)
        except (ValueError, KeyError, OSError) as exc:
            print(f"{path.name}: unreadable ({exc})", file=sys.stderr)
            errors += 1
            continue
        if not log_rows:
            rows.append((path.stem, "one-way", 0, "", "", "", ""))
            continue
        deliveries = [(r, s, g / 1e9) for r, s, g in log_rows]
        t0, t1 = deliveries[0][0], deliveries[-1][0]
        horizon = default_horizon(t0, t1, warmup_frac)
        stats = summarize(deliveries, horizon, payload_bytes=1024)
        trace = age_trace_from_deliveries([(r, g) for r, _, g in deliveries], horizon)
        _export_trace(run_dir / f"age_{path.stem}.csv", trace)
        rows.append((path.stem, "one-way", stats.delivered_count,
                     f"{stats.avg_age * 1e3:.3f}", f"{stats.avg_delay * 1e3:.3f}",
                     f"{stats.throughput:.0f}", f"{stats.loss_fraction:.4f}"))
        scatter.append((path.stem, stats.avg_delay * 1e3, stats.avg_age * 1e3, stats.throughput))
    for path in ack_files:
        try:
            acks = read_ack_log(path)
        except (ValueError, KeyError, OSError) as exc:
            print(f"{path.name}: unreadable ({exc})", file=sys.stderr)
            errors += 1
            continue
        if len(acks) < 2:
            continue
        samples = [(t, rtt) for t, _, rtt in acks]
        t0, t1 = samples[0][0], samples[-1][0]
        horizon = default_horizon(t0, t1, warmup_frac)
        trace = age_trace_from_rtt_samples(samples, horizon)
        age = time_average_age(trace, horizon)
        delay = statistics.mean(rtt for _, rtt in samples)
        _export_trace(run_dir / f"age_{path.stem}.csv", trace)
        rows.append((path.stem, "rtt-based", len(samples),
                     f"{age * 1e3:.3f}", f"{delay * 1e3:.3f}", "", ""))
    header = ("session", "age_mode", "delivered", "avg_age_ms", "avg_delay_ms",
              "throughput_bps", "loss_fraction")
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    for r in [header] + rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))
    ages = [float(r[3]) for r in rows if r[1] == "one-way" and r[3] != ""]
    if len(ages) > 1:
        print(f"jain_fairness_over_ages  {jain_fairness(ages):.4f}")
    if scatter:
        write_rows(run_dir / "delay_vs_age.csv",
                   ("session", "avg_delay_ms", "avg_age_ms"),
                   [(s, f"{d:.3f}", f"{a:.3f}") for s, d, a, _ in scatter])
        write_rows(run_dir / "throughput_vs_age.csv",
                   ("session", "throughput_bps", "avg_age_ms"),
                   [(s, f"{t:.0f}", f"{a:.3f}") for s, _, a, t in scatter])
    return 1 if errors else 0


def _export_trace(path, trace):
    write_rows(path, ("time", "age"), [(f"{t:.9f}", f"{a:.9f}") for t, a in trace.breakpoints])


# -- small subcommands


def cmd_sweep_min_age(args):
    mu = args.station_rate_bits / (8 * (19 + args.payload_bytes))
    rates = args.rates or [round(f * mu, 3) for f in
                           (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)]
    result = sweep_min_age(args.station_rate_bits, rates, args.duration,
                           seed=args.seed, payload_bytes=args.payload_bytes)
    rows = [(p.rate, f"{p.avg_age:.6f}", f"{p.avg_backlog:.4f}") for p in result.curve]
    if args.out:
        write_rows(args.out, ("rate", "avg_age", "avg_backlog"), rows)
    for r in rows:
        print(*r)
    print(f"best_rate={result.best_rate} best_age={result.best_age:.6f} "
          f"backlog_at_best={result.backlog_at_best:.4f}")
    return 0


def cmd_rtt_curve(args):
    station = StationConfig(service=args.service, rate=args.rate_bits, buffer=args.buffer)
    loads = args.loads
    if not loads:
        mu = args.rate_bits / (8 * (19 + args.payload_bytes))
        loads = [round(f * mu, 3) for f in (0.1, 0.3, 0.5, 0.7, 0.9, 1.1)]
    curve = rtt_vs_load_curve(station, args.rtt_base, loads, mode=args.mode,
                              packet_bits=8 * (19 + args.payload_bytes),
                              packets=args.packets, seed=args.seed)
    rows = [(load, "unstable" if math.isinf(rtt) else f"{rtt:.6f}") for load, rtt in curve]
    if args.out:
        write_rows(args.out, ("load", "mean_rtt"), rows)
    for r in rows:
        print(*r)
    return 0


def _parse_mode(text):
    if text in ("acp+", "lazy") or text.startswith("constant:"):
        return text
    raise argparse.ArgumentTypeError(f"bad mode {text!r}: use acp+, lazy or constant:<rate>")


def build_parser():
    parser = argparse.ArgumentParser(prog="agectl",
                                     description="age-control update transport toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run an experiment spec file")
    p.add_argument("spec")
    p.add_argument("--out", default="runs")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("source", help="run a live update source")
    p.add_argument("--peer", required=True)
    p.add_argument("--mode", type=_parse_mode, default="acp+")
    p.add_argument("--duration", type=float, required=True)
    p.add_argument("--payload-bytes", type=int, default=1024)
    p.add_argument("--listen", default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("monitor", help="run a live monitor")
    p.add_argument("--listen", required=True)
    p.add_argument("--duration", type=float, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("proxy", help="run the delay/loss proxy")
    p.add_argument("--listen", required=True)
    p.add_argument("--forward", required=True)
    p.add_argument("--delay-ms", type=float, default=0.0)
    p.add_argument("--delay-dist", choices=("constant", "exponential"), default="constant")
    p.add_argument("--loss", type=float, default=0.0)
    p.add_argument("--reorder", action="store_true")
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("sweep-min-age", help="find the age-minimizing constant rate")
    p.add_argument("--station-rate-bits", type=float, default=8.344e6)
    p.add_argument("--rates", type=float, nargs="*", default=None)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--payload-bytes", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("rtt-curve", help="round-trip time vs offered load for one station")
    p.add_argument("--service", choices=("deterministic", "exponential"), default="exponential")
    p.add_argument("--rate-bits", type=float, default=8.344e6)
    p.add_argument("--rtt-base", type=float, default=0.0)
    p.add_argument("--buffer", type=int, default=None)
    p.add_argument("--loads", type=float, nargs="*", default=None)
    p.add_argument("--mode", choices=("analytic", "simulate"), default="analytic")
    p.add_argument("--packets", type=int, default=200_000)
    p.add_argument("--payload-bytes", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("run_dir")
    p.add_argument("--warmup-frac", type=float, default=0.1)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(args.spec, args.out, jobs=args.jobs)
    if args.command == "source":
        return run_source(args.peer, args.mode, args.duration, args.out,
                          payload_bytes=args.payload_bytes, listen=args.listen)
    if args.command == "monitor":
        return run_monitor(args.listen, args.duration, args.out)
    if args.command == "proxy":
        cfg = ProxyConfig(listen=args.listen, forward=args.forward,
                          delay=args.delay_ms / 1e3, delay_dist=args.delay_dist,
                          loss=args.loss, reorder=args.reorder, seed=args.seed)
        return run_proxy(cfg, duration=args.duration)
    if args.command == "sweep-min-age":
        return cmd_sweep_min_age(args)
    if args.command == "rtt-curve":
        return cmd_rtt_curve(args)
    if args.command == "report":
        return cmd_report(args.run_dir, warmup_frac=args.warmup_frac)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

    gfmfreq run SCENARIO -o OUT [--dt S] [--duration S] [--window S]
    gfmfreq sweep SCENARIO -o OUT [--order G1,G2,...] [--jobs N]
    gfmfreq portrait SCENARIO -o OUT

SCENARIO is a YAML file, a directory holding ``scenario.yaml``, or a bundled
name (``data/ieee9``, ``ieee39``, ...). Exit codes: 0 success, 1 simulation
or solver failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .engine import SimulationError, read_csv, simulate, write_csv
from .metrics import MetricsReport, evaluate
from .network import NetworkError
from .scenarios import ScenarioError, load_scenario_file, make_substitution_series, resolve_path

log = logging.getLogger("gfmfreq")

EXIT_OK, EXIT_SIM, EXIT_USAGE = 0, 1, 2


@dataclass
class RunOutputs:
    timeseries: Path
    metrics: Path
    portrait: Path | None
    log: Path


def _apply_overrides(scen, args):
    sim = scen.sim
    changes = {}
    if args.dt is not None:
        changes["dt"] = args.dt
    if args.duration is not None:
        changes["duration"] = args.duration
    if args.window is not None:
        changes["rocof_window"] = args.window
    if changes:
        try:
            sim = replace(sim, **changes)
        except ValueError as exc:
            raise ScenarioError(f"override: {exc}") from None
        scen = replace(scen, sim=sim)
    return scen


def _open_log(out: Path, name: str) -> Path:
    path = out / name
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("gfmfreq")
    for h in list(root.handlers):
        if isinstance(h, logging.FileHandler):
            root.removeHandler(h)
            h.close()
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    return path


def _echo_config(scen, source):
    s = scen.sim
    log.info("scenario=%s source=%s", scen.name, source)
    log.info("dt=%g duration=%g record_stride=%d rocof_window=%g newton_tol=%g newton_max_iter=%d",
             s.dt, s.duration, s.record_stride, s.rocof_window, s.newton_tol, s.newton_max_iter)
    for ev in scen.events:
        log.info("event t=%g load_step bus=%d delta_p=%.9g pu (active part only)", ev.time, ev.bus, ev.delta_p)


def cmd_run(scenario_path, out_dir, args, plot=True) -> RunOutputs:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scen = _apply_overrides(load_scenario_file(scenario_path), args)
    log_path = _open_log(out, "run.log")
    _echo_config(scen, resolve_path(scenario_path))
    series = simulate(scen)
    report = evaluate(series, scen)
    ts_path = out / "timeseries.csv"
    series.to_csv(ts_path)
    m_path = out / "metrics.txt"
    m_path.write_text(report.to_text())
    (out / "metrics.csv").write_text(MetricsReport.csv_header() + "\n" + report.csv_row() + "\n")
    if plot:
        from .plotting import plot_run

        plot_run(series, out / "frequency.png", event_time=_event_time(scen))
    log.info("done: %s", report.csv_row())
    return RunOutputs(ts_path, m_path, None, log_path)


def _event_time(scen):
    return min((e.time for e in scen.events), default=None)


def _run_member(scen):
    series = simulate(scen)
    return series.t, series.avg_f, evaluate(series, scen)


def cmd_sweep(scenario_path, out_dir, args, order=None, plot=True, jobs=1):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = _apply_overrides(load_scenario_file(scenario_path), args)
    _open_log(out, "sweep.log")
    _echo_config(base, resolve_path(scenario_path))
    try:
        members = make_substitution_series(base, order)
    except ValueError as exc:
        raise ScenarioError(f"--order: {exc}") from None
    log.info("substitution order: %s", ",".join(order if order is not None else base.series_order) or "(none)")

    labels, traces, reports = [], [], []
    table = out / "sweep.csv"
    failure = None
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_member, s) for _, s in members]
            results = []
            for fut in futures:
                try:
                    results.append(fut.result())
                except (SimulationError, NetworkError) as exc:
                    failure = exc
                    break
    else:
        results = []
        for _, s in members:
            try:
                results.append(_run_member(s))
            except (SimulationError, NetworkError) as exc:
                failure = exc
                break
    for (label, _), (t, f, rep) in zip(members, results):
        rep.label = label
        labels.append(label)
        traces.append((t, f))
        reports.append(rep)
        log.info("member %s: %s", label, rep.csv_row())

    with open(table, "w") as fh:
        fh.write(MetricsReport.csv_header() + "\n")
        for rep in reports:
            fh.write(rep.csv_row() + "\n")
        if failure is not None:
            fh.write(f"# partial results: member {members[len(reports)][0]} failed: {failure}\n")
    if failure is not None:
        log.error("sweep aborted at member %s: %s", members[len(reports)][0], failure)
        raise SimulationError(f"sweep aborted at member {members[len(reports)][0]} "
                              f"after {len(reports)} complete rows: {failure}")
    if traces:
        t = traces[0][0]
        write_csv(out / "sweep_avg_f.csv", ["t"] + [f"avg_f:{lab}" for lab in labels],
                  np.column_stack([t] + [f for _, f in traces]))
    if plot and reports:
        from .plotting import plot_sweep

        plot_sweep(labels, traces, reports, out / "sweep.png", event_time=_event_time(base))
    return table, reports


def portrait_table(series):
    header = ["t"]
    cols = [series.t]
    for k, name in enumerate(series.names):
        header += [f"dev:{name}:pm", f"dev:{name}:f"]
        cols += [series.p_m[:, k], series.f[:, k]]
    return header, np.column_stack(cols)


def cmd_portrait(scenario_path, out_dir, args, plot=True) -> RunOutputs:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scen = _apply_overrides(load_scenario_file(scenario_path), args)
    log_path = _open_log(out, "portrait.log")
    _echo_config(scen, resolve_path(scenario_path))
    series = simulate(scen)
    header, data = portrait_table(series)
    path = out / "portrait.csv"
    write_csv(path, header, data)
    if plot:
        from .plotting import plot_portrait

        plot_portrait(series, out / "portrait.png")
    return RunOutputs(out / "timeseries.csv", out / "metrics.txt", path, log_path)


def read_portrait(path) -> dict:
    """``{device: (p_m, f)}`` from a portrait CSV."""
    header, data = read_csv(path)
    out = {}
    for k, col in enumerate(header):
        if col.endswith(":pm"):
            name = col.split(":")[1]
            out[name] = (data[:, k], data[:, header.index(f"dev:{name}:f")])
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfmfreq", description="Frequency response of SG / GFM fleets.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("scenario", help="scenario file, directory, or bundled name")
        p.add_argument("-o", "--out", required=True, help="output directory")
        p.add_argument("--dt", type=float, help="integration step (s)")
        p.add_argument("--duration", type=float, help="simulated horizon (s)")
        p.add_argument("--window", type=float, help="ROCOF window T_R (s)")
        p.add_argument("--no-plot", dest="plot", action="store_false", help="skip PNG figures")

    common(sub.add_parser("run", help="simulate one scenario and report metrics"))
    p = sub.add_parser("sweep", help="SG-to-GFM substitution ladder, one metrics row per member")
    common(p)
    p.add_argument("--order", help="comma-separated SG names to replace, in order")
    p.add_argument("--jobs", type=int, default=1, help="parallel member runs")
    common(sub.add_parser("portrait", help="frequency / pre-converter power portrait CSV"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            res = cmd_run(args.scenario, args.out, args, plot=args.plot)
            print(res.metrics.read_text(), end="")
        elif args.command == "sweep":
            order = None if args.order is None else [s for s in args.order.split(",") if s]
            table, _ = cmd_sweep(args.scenario, args.out, args, order=order, plot=args.plot,
                                 jobs=max(1, args.jobs))
            print(table.read_text(), end="")
        else:
            res = cmd_portrait(args.scenario, args.out, args, plot=args.plot)
            print(f"portrait written to {res.portrait}")
    except FileNotFoundError as exc:
        print(f"gfmfreq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, OSError) as exc:
        print(f"gfmfreq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SimulationError, NetworkError) as exc:
        print(f"gfmfreq: simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIM
    return EXIT_OK


def main_exit():
    sys.exit(main())

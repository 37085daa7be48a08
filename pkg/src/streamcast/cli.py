"""Command-line front end.

Subcommands: ``run`` replays a collection through one method, ``compare``
builds relative-performance reports from several run directories,
``generate`` writes synthetic streams and ``ingest-check`` validates an
input file.  Machine-readable summaries go to stdout; progress and
errors go to stderr as JSON lines.
"""

import argparse
import json
import math
import os
import sys
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import format_kv, read_kv
from .design import ModelSpec, default_platform_spec, hourly_24h_spec
from .engine import BreakEvent, EngineConfig, no_detection, run_naive, run_stream
from .errors import ContractError, DataError
from .evaluation import (
    MethodRun,
    compare,
    economic_gain,
    heatmap,
    write_breaks,
    write_comparison,
    write_gains,
)
from .losses import ALL_LOSSES, PLATFORM_ECON, evaluation_summary
from .timeseries_io import (
    Calendar,
    default_holidays,
    export_csv,
    generate_synthetic,
    ingest_csv,
    load_holidays,
    platform_like_config,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
CONFIG_ENV = "STREAMCAST_CONFIG"
REQUIRED_KEYS = ("hours_per_day", "first_hour", "initial_batches", "mode")
METHODS = ("domain", "data", "nodetect", "naive")
ENGINE_KEYS = ("w", "horizon", "detector", "penalty", "detection_loss", "break_date_policy",
               "fallback", "min_seglen", "min_losses_before_test", "clip_negative", "lambda_refresh")
RUN_KEYS = REQUIRED_KEYS + ENGINE_KEYS + ("method", "seed", "jobs", "model_spec", "holidays")


class UsageError(ContractError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


def _emit(stream, payload):
    stream.write(json.dumps(payload, sort_keys=True, default=str) + "\n")
    stream.flush()


def progress(**payload):
    _emit(sys.stderr, payload)


# -- configuration ------------------------------------------------------
def load_settings(args, keys):
    """Merge the config file (``--config`` or the env var) with flags."""
    settings = {}
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        if not Path(path).is_file():
            raise UsageError(f"config file not found: {path}")
        for key, value in read_kv(path):
            if key not in keys:
                raise UsageError(f"unknown config key {key!r}", key)
            settings[key] = value
    for key in keys:
        v = getattr(args, key, None)
        if v is not None:
            settings[key] = str(v)
    return settings


def _require(settings, key):
    if key not in settings:
        raise UsageError(f"missing required config key: {key}", key)
    return settings[key]


def _as_int(settings, key, default=None):
    if key not in settings:
        if default is None:
            raise UsageError(f"missing required config key: {key}", key)
        return default
    try:
        return int(settings[key])
    except ValueError:
        raise UsageError(f"config key {key} must be an integer, got {settings[key]!r}", key) from None


def _engine_config(settings):
    items = [(k, settings[k]) for k in ENGINE_KEYS if k in settings]
    items.append(("mode", settings["mode"]))
    return EngineConfig.from_items(items)


def _model_spec(settings, calendar, mode):
    if "model_spec" in settings:
        with open(settings["model_spec"], encoding="utf-8") as fh:
            spec = ModelSpec.from_text(fh.read())
    elif calendar.hours_per_day == 15:
        spec = default_platform_spec("data" if mode == "data" else "domain")
    elif calendar.hours_per_day == 24:
        spec = hourly_24h_spec()
    else:
        raise UsageError("no default model for this calendar; set model_spec", "model_spec")
    spec.validate(calendar)
    return spec


# -- run ----------------------------------------------------------------
def _replay(job):
    stream, spec, cfg, method, initial, seed = job
    events = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if method == "naive":
            rep = run_naive(stream, cfg.horizon, initial)
        else:
            rep = run_stream(stream, spec, no_detection(cfg) if method == "nodetect" else cfg, initial,
                             method=method, seed=seed,
                             on_event=lambda sid, ev: events.append(ev) if ev["type"] != "loss" else None)
    return rep, events


def _event_record(sid, ev):
    rec = {"event": ev["type"], "stream_id": sid}
    if ev["type"] == "break":
        b = ev["event"]
        rec.update(detection_batch=b.detection_batch, break_batch=b.break_batch)
    else:
        rec.update({k: v for k, v in ev.items() if k != "type"})
    return rec


def _fmt(x):
    return "nan" if not math.isfinite(x) else repr(float(x))


def _write_forecasts(path, reports, seed):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        fh.write("stream_id,issue_batch,step,forecast,full,post,weight,actual\n")
        for r in reports:
            for i, b in enumerate(r.issue_batches):
                for k in range(r.combined.shape[1]):
                    fh.write(f"{r.stream_id},{int(b)},{k + 1},{_fmt(r.combined[i, k])},{_fmt(r.full[i, k])},"
                             f"{_fmt(r.post[i, k])},{_fmt(r.weights[i])},{_fmt(r.actuals[i, k])}\n")


def read_forecasts(path):
    """Read a forecasts.csv back into {stream_id: (issue, forecast, actual)} arrays."""
    rows = {}
    with open(path, encoding="utf-8") as fh:
        header = None
        for line in fh:
            if line.startswith("#"):
                continue
            parts = line.rstrip("\n").split(",")
            if header is None:
                header = parts
                if header[:3] != ["stream_id", "issue_batch", "step"]:
                    raise DataError(f"{path}: not a forecasts file")
                continue
            rows.setdefault(parts[0], []).append((int(parts[1]), int(parts[2]), float(parts[3]), float(parts[7])))
    out = {}
    for sid, recs in rows.items():
        issue = np.array(sorted({r[0] for r in recs}), dtype=np.int64)
        h = max(r[1] for r in recs)
        f = np.full((issue.shape[0], h), np.nan)
        a = np.full((issue.shape[0], h), np.nan)
        pos = {b: i for i, b in enumerate(issue)}
        for b, k, fv, av in recs:
            f[pos[b], k - 1] = fv
            a[pos[b], k - 1] = av
        out[sid] = (issue, f, a)
    return out


def _write_losses(path, reports, seed):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        fh.write("stream_id,hour,day_ahead,loss_kind,value\n")
        for r in reports:
            for spec in ALL_LOSSES:
                table = evaluation_summary(r.actuals, r.combined, spec, r.hours_per_day)
                for hour, day, kind, value in table.to_rows():
                    fh.write(f"{r.stream_id},{hour},{day},{kind},{_fmt(value)}\n")


def _input_files(inputs):
    """Expand ``--input`` values: files as given, directories to their CSVs."""
    files = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            found = sorted(p.glob("*.csv"))
            if not found:
                raise DataError(f"no CSV files in {item}")
            files.extend(found)
        else:
            files.append(p)
    return files


def cmd_run(args):
    settings = load_settings(args, RUN_KEYS)
    for key in REQUIRED_KEYS:
        _require(settings, key)
    calendar = Calendar(_as_int(settings, "hours_per_day"), _as_int(settings, "first_hour"))
    initial = _as_int(settings, "initial_batches")
    seed = _as_int(settings, "seed", 0)
    jobs = max(1, _as_int(settings, "jobs", 1))
    cfg = _engine_config(settings)
    method = settings.get("method", cfg.mode)
    if method not in METHODS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(METHODS)}", "method")
    spec = None if method == "naive" else _model_spec(settings, calendar, cfg.mode)
    holidays = load_holidays(settings["holidays"]) if "holidays" in settings else default_holidays()
    streams = {}
    for path in _input_files(args.input):
        for sid, stream in ingest_csv(path, calendar, holidays).items():
            if sid in streams:
                raise DataError(f"stream {sid!r} appears in more than one input file")
            streams[sid] = stream
    streams = dict(sorted(streams.items()))
    if not streams:
        raise DataError("input contains no streams")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs_list = [(s, spec, cfg, method, initial, seed) for s in streams.values()]
    t0 = time.perf_counter()
    if jobs == 1 or len(jobs_list) == 1:
        results = map(_replay, jobs_list)
    else:
        pool = ProcessPoolExecutor(max_workers=jobs)
        results = pool.map(_replay, jobs_list)
    reports = []
    for rep, events in results:
        for ev in events:
            progress(**_event_record(rep.stream_id, ev))
        progress(event="stream_done", stream_id=rep.stream_id, breaks=len(rep.break_log))
        reports.append(rep)
    if jobs > 1 and len(jobs_list) > 1:
        pool.shutdown()
    seconds = time.perf_counter() - t0

    _write_forecasts(out / "forecasts.csv", reports, seed)
    _write_losses(out / "losses.csv", reports, seed)
    write_breaks(out / "breaks.csv", {r.stream_id: r.break_log for r in reports}, seed)
    ckdir = out / "checkpoints"
    ckdir.mkdir(exist_ok=True)
    for r in reports:
        (ckdir / f"{r.stream_id}.ckpt").write_bytes(r.checkpoint)
    effective = [("hours_per_day", calendar.hours_per_day), ("first_hour", calendar.first_hour),
                 ("initial_batches", initial), ("method", method), ("seed", seed), ("jobs", jobs)]
    effective += [(k, v) for k, v in cfg.to_items()]
    (out / "config.txt").write_text(f"# seed={seed}\n" + format_kv(effective), encoding="utf-8")
    _emit(sys.stdout, {
        "command": "run",
        "method": method,
        "streams": len(reports),
        "breaks": sum(len(r.break_log) for r in reports),
        "errors": sum(len(r.errors) for r in reports),
        "seconds": round(seconds, 3),
        "out": str(out),
    })
    return EXIT_OK


# -- compare ------------------------------------------------------------
def _load_run(name, directory):
    d = Path(directory)
    if not (d / "forecasts.csv").is_file() or not (d / "config.txt").is_file():
        raise DataError(f"{directory} is not a run directory")
    conf = dict(read_kv(d / "config.txt"))
    data = read_forecasts(d / "forecasts.csv")
    sids = sorted(data)
    issue = data[sids[0]][0]
    for sid in sids:
        if not np.array_equal(data[sid][0], issue) or data[sid][1].shape != data[sids[0]][1].shape:
            raise DataError(f"{directory}: stream {sid} is not aligned")
    breaks = {}
    bpath = d / "breaks.csv"
    if bpath.is_file():
        for line in bpath.read_text(encoding="utf-8").splitlines():
            if line.startswith("#") or line.startswith("stream_id"):
                continue
            sid, det, brk, start = line.split(",")
            breaks.setdefault(sid, []).append(BreakEvent(int(det), int(brk), int(start), "", []))
    return MethodRun(name, sids, np.stack([data[s][1] for s in sids]), np.stack([data[s][2] for s in sids]),
                     issue, int(conf["hours_per_day"]), break_logs=breaks), int(conf.get("seed", 0))


def _parse_named(text):
    if "=" not in text:
        raise UsageError(f"--run expects NAME=DIR, got {text!r}")
    name, d = text.split("=", 1)
    return name.strip(), d.strip()


def cmd_compare(args):
    runs, seeds = [], set()
    for text in args.run:
        run, seed = _load_run(*_parse_named(text))
        runs.append(run)
        seeds.add(seed)
    names = [r.name for r in runs]
    if len(set(names)) != len(names):
        raise UsageError("run names must be unique")
    ref_name = args.reference or names[0]
    if ref_name not in names:
        raise UsageError(f"reference {ref_name!r} is not among the runs")
    ref = runs[names.index(ref_name)]
    others = [r for r in runs if r is not ref]
    seed = min(seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = compare(ref, others, ALL_LOSSES, args.split_batch, args.max_days_ahead)
    write_comparison(out / "comparison.csv", rows, seed)
    for spec in ALL_LOSSES:
        with open(out / f"heatmap_{spec.kind}.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# seed={seed}\nmethod,hour,day_ahead,value\n")
            for run in runs:
                grid = heatmap(run, spec)
                for h in range(grid.shape[0]):
                    for k in range(grid.shape[1]):
                        fh.write(f"{run.name},{h + 1},{k + 1},{_fmt(grid[h, k])}\n")
    logs = {}
    for run in runs:
        for sid, events in run.break_logs.items():
            logs[f"{run.name}:{sid}"] = events
    write_breaks(out / "breaks.csv", logs, seed)
    first = int(ref.issue_batches[0]) + 1
    last = int(ref.issue_batches[-1]) + 1
    if args.gain_window:
        try:
            first, last = (int(x) for x in args.gain_window.split(":"))
        except ValueError:
            raise UsageError("--gain-window expects FIRST:LAST batch numbers") from None
    gains = [(ref.name, r.name, first, last, economic_gain(ref, r, PLATFORM_ECON, (first, last))) for r in others]
    write_gains(out / "gains.csv", gains, seed)
    _emit(sys.stdout, {
        "command": "compare",
        "reference": ref.name,
        "table": [{"method": m, "period": p, "loss": k, "relative": round(v, 4)} for m, p, k, v in rows],
        "gains": {g[1]: round(g[4], 4) for g in gains},
    })
    return EXIT_OK


# -- generate / ingest-check -------------------------------------------
def _parse_shocks(texts):
    shocks = []
    for text in texts or ():
        try:
            day, mult = text.split(":")
            shocks.append((int(day), float(mult)))
        except ValueError:
            raise UsageError(f"--shock expects DAY:MULTIPLIER, got {text!r}") from None
    return tuple(shocks)


def cmd_generate(args):
    if args.n < 1:
        raise UsageError("--n must be positive")
    calendar = Calendar(args.hours_per_day, args.first_hour)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(args.seed).spawn(args.n)
    width = len(str(args.n - 1))
    files = []
    for k, child in enumerate(children):
        sid = f"s{k:0{width}d}"
        profile = {} if args.hours_per_day == 15 else {"hour_profile": None}
        cfg = platform_like_config(days=args.days, calendar=calendar, shocks=_parse_shocks(args.shock),
                                   stream_id=sid, **profile)
        stream = generate_synthetic(cfg, int(child.generate_state(1)[0]))
        path = out / f"{sid}.csv"
        export_csv(stream, path, seed=args.seed)
        files.append(str(path))
    _emit(sys.stdout, {"command": "generate", "files": files, "seed": args.seed})
    return EXIT_OK


def cmd_ingest_check(args):
    calendar = Calendar(args.hours_per_day, args.first_hour)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        streams = ingest_csv(args.input, calendar)
    H = calendar.hours_per_day
    _emit(sys.stdout, {
        "command": "ingest-check",
        "streams": {sid: {"observations": len(s), "whole_days": len(s) // H, "start": str(s.origin)}
                    for sid, s in streams.items()},
        "warnings": [str(w.message) for w in caught],
    })
    return EXIT_OK


# -- entry point --------------------------------------------------------
def build_parser():
    p = argparse.ArgumentParser(prog="streamcast", description="Streaming demand forecasting.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="replay streams through one method")
    run.add_argument("--config", help=f"key=value config file (default: ${CONFIG_ENV})")
    run.add_argument("--input", required=True, action="append",
                     help="CSV of timestamp,stream_id,demand, or a directory of them (repeatable)")
    run.add_argument("--out", required=True, help="output directory")
    for key in RUN_KEYS:
        run.add_argument("--" + key.replace("_", "-"), dest=key, default=None)
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="compare run directories")
    cmp_.add_argument("--run", action="append", required=True, metavar="NAME=DIR")
    cmp_.add_argument("--reference", help="reference method name (default: first run)")
    cmp_.add_argument("--out", required=True)
    cmp_.add_argument("--split-batch", type=int, default=None, help="first batch of the later period")
    cmp_.add_argument("--max-days-ahead", type=int, default=None)
    cmp_.add_argument("--gain-window", default=None, metavar="FIRST:LAST")
    cmp_.set_defaults(func=cmd_compare)

    gen = sub.add_parser("generate", help="write synthetic streams")
    gen.add_argument("--out", required=True)
    gen.add_argument("--n", type=int, default=1)
    gen.add_argument("--days", type=int, default=180)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--shock", action="append", metavar="DAY:MULT")
    gen.add_argument("--hours-per-day", type=int, default=15)
    gen.add_argument("--first-hour", type=int, default=9)
    gen.set_defaults(func=cmd_generate)

    chk = sub.add_parser("ingest-check", help="validate an input file")
    chk.add_argument("--input", required=True)
    chk.add_argument("--hours-per-day", type=int, default=15)
    chk.add_argument("--first-hour", type=int, default=9)
    chk.set_defaults(func=cmd_ingest_check)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        _emit(sys.stderr, {"error": "usage", "message": str(exc), "key": exc.key})
        return EXIT_USAGE
    except ContractError as exc:
        _emit(sys.stderr, {"error": "usage", "message": str(exc)})
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        _emit(sys.stderr, {"error": "data", "type": type(exc).__name__, "message": str(exc),
                           "line": getattr(exc, "line", None)})
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        _emit(sys.stderr, {"error": "internal", "type": type(exc).__name__, "message": str(exc),
                           "trace": traceback.format_exc(limit=5)})
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())

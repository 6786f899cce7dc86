"""``botmesh`` command line: sim, crawl, analyze, report.

Exit codes: 0 ok, 2 config error, 3 IO error, 4 empty or missing input.
Errors go to stderr as a single ``ERROR:<CODE>:<message>`` line.
"""

from __future__ import annotations

import argparse
import csv
import glob
import hashlib
import json
import logging
import os
import signal
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .analytics import Mode, analyze, read_series
from .core import AsTable, MalformedLine, MalformedRow, ObservationLog, enrich_all, load_as_table, read_logs
from .crawler import Crawler, CrawlerConfigInvalid, load_crawler_config, run_crawlers
from .simnet import ConfigInvalid, SimTransport, load_sim_config, sim_init, sim_run_until, write_journal

log = logging.getLogger("botmesh")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_EMPTY = 0, 2, 3, 4
SEED_ENV = "BOTMESH_SEED"


class CliError(Exception):
    def __init__(self, exit_code: int, code: str, message: str):
        super().__init__(message)
        self.exit_code = exit_code
        self.code = code


@dataclass
class RunManifest:
    """Written as ``manifest.json`` next to the outputs of sim and crawl runs.

    Paths are recorded by file name plus a content digest so that two runs of
    the same inputs into different directories produce identical manifests.
    """

    run_id: str
    command: str
    sim_config: str
    sim_config_sha256: str
    crawler_configs: list = field(default_factory=list)
    output_dir: str = ""
    seed: int = 0
    created_ts: int = 0
    duration_s: float = 0.0
    version: str = __version__

    def write(self, directory: Path) -> None:
        with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def env_seed(default: int) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return default
    try:
        return int(raw, 0)
    except ValueError:
        raise CliError(EXIT_CONFIG, "CONFIG_INVALID", f"{SEED_ENV}={raw!r} is not an integer") from None


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_sim(path, seed_arg: Optional[int]):
    try:
        cfg = load_sim_config(path)
    except ConfigInvalid as exc:
        raise CliError(EXIT_CONFIG, "CONFIG_INVALID", f"{path}: {exc}") from None
    cfg.seed = env_seed(cfg.seed)
    if seed_arg is not None:
        cfg.seed = seed_arg
    return cfg


def _manifest(command: str, sim_path, crawler_paths, out: Path, seed: int, start_ts: int,
              duration: float) -> RunManifest:
    h = hashlib.sha256()
    h.update(command.encode())
    h.update(_digest(sim_path).encode())
    for p in crawler_paths:
        h.update(_digest(p).encode())
    h.update(str(seed).encode())
    h.update(repr(float(duration)).encode())
    created = os.environ.get("SOURCE_DATE_EPOCH")
    return RunManifest(
        run_id=h.hexdigest()[:16],
        command=command,
        sim_config=Path(sim_path).name,
        sim_config_sha256=_digest(sim_path),
        crawler_configs=[{"name": Path(p).name, "sha256": _digest(p)} for p in crawler_paths],
        output_dir=out.name,
        seed=seed,
        created_ts=int(created) if created else start_ts,
        duration_s=float(duration),
    )


def _fresh_dir(path) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        raise CliError(EXIT_IO, "IO", f"output directory {out} is not empty")
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- sim -----------------------------------------------------------------------


def cmd_sim(args) -> int:
    cfg = _load_sim(args.config, args.seed)
    out = _fresh_dir(args.out)
    world = sim_init(cfg)
    sim_run_until(world, cfg.duration_s)
    write_journal(world, out / "journal.csv")
    world.as_table().write(out / "as_table.csv")
    _manifest("sim", args.config, [], out, cfg.seed, cfg.start_ts, cfg.duration_s).write(out)
    log.info("journal: %d events -> %s", len(world.journal), out / "journal.csv")
    return EXIT_OK


# -- crawl ---------------------------------------------------------------------


def cmd_crawl(args) -> int:
    cfg = _load_sim(args.sim_config, args.seed)
    ccfgs = []
    for p in args.crawler:
        try:
            ccfgs.append(load_crawler_config(p))
        except CrawlerConfigInvalid as exc:
            raise CliError(EXIT_CONFIG, "CONFIG_INVALID", f"{p}: {exc}") from None
    ids = [c.crawler_id for c in ccfgs]
    if len(set(ids)) != len(ids):
        raise CliError(EXIT_CONFIG, "CONFIG_INVALID", "crawler_id values must be unique")
    duration = cfg.duration_s if args.duration is None else args.duration
    out = _fresh_dir(args.out)

    world = sim_init(cfg)
    transport = SimTransport(world)
    logs, crawlers = [], []
    for i, cc in enumerate(ccfgs):
        sink = ObservationLog(out, cc.family, cc.crawler_id).__enter__()
        logs.append(sink)
        crawlers.append(Crawler(cc, transport, sink, address=(f"198.51.100.{i + 1}", 6881),
                                bootstrap=None if cc.bootstrap else world.bootstrap,
                                hajime_config=cfg.hajime_config.encode(),
                                mozi_prefix_len=cfg.families["MZ"].prefix_len))

    stopped = {"flag": False}

    def on_signal(signum, frame):
        stopped["flag"] = True

    previous = {s: signal.signal(s, on_signal) for s in (signal.SIGINT, signal.SIGTERM)}
    try:
        completed = run_crawlers(crawlers, duration, stop=lambda: stopped["flag"],
                                 realtime=args.realtime, speed=args.speed)
        transport.advance(duration if completed else world.clock)
    finally:
        for s, h in previous.items():
            signal.signal(s, h)
        for sink in logs:
            sink.close()
    write_journal(world, out / "journal.csv")
    world.as_table().write(out / "as_table.csv")
    _manifest("crawl", args.sim_config, args.crawler, out, cfg.seed, cfg.start_ts, duration).write(out)
    for c, sink in zip(crawlers, logs):
        log.info("%s/%s: %d observations, %d tracked", c.cfg.family, c.cfg.crawler_id,
                 sink.count, len(c.state.identities()))
    if not completed:
        log.warning("crawl stopped early at t=%.0fs; logs are partial", world.clock)
    return EXIT_OK


# -- analyze -------------------------------------------------------------------


def _expand(patterns: list) -> list:
    paths = set()
    for pat in patterns:
        p = Path(pat)
        if p.is_dir():
            paths.update(str(x) for x in p.glob("obs_*.csv"))
        else:
            paths.update(glob.glob(pat))
    return sorted(paths)


def cmd_analyze(args) -> int:
    paths = _expand(args.logs)
    if not paths:
        raise CliError(EXIT_EMPTY, "EMPTY_INPUT", f"no log files match {args.logs}")
    table: Optional[AsTable] = None
    if args.as_table:
        try:
            table = load_as_table(args.as_table)
        except MalformedRow as exc:
            raise CliError(EXIT_CONFIG, "MALFORMED_ROW", f"{args.as_table}: {exc}") from None
    try:
        obs = read_logs(paths)
    except MalformedLine as exc:
        raise CliError(EXIT_IO, "MALFORMED_LINE", str(exc)) from None
    if not obs:
        raise CliError(EXIT_EMPTY, "EMPTY_INPUT", "log files contain no observations")
    mode = Mode(args.mode.upper())
    analyze(enrich_all(obs, table), args.out, bucket_s=args.bucket, mode=mode, snapshot_s=args.snapshot)
    log.info("analyzed %d observations from %d files -> %s", len(obs), len(paths), args.out)
    return EXIT_OK


# -- report --------------------------------------------------------------------

FIGURES = {
    # figure name -> (source files, y-axis label)
    "botnet_size": (("bincount.csv", "maxcount.csv"), "bots per day"),
    "size_change": (("churn.csv",), "keys per day"),
    "fail_rate": (("reply_ratio.csv",), "reply ratio"),
    "overlap": (("overlap.csv",), "overlap %"),
}

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _series_name(source: str, group: str) -> str:
    stem = source.rsplit(".", 1)[0]
    return f"{stem}_{group}".replace("/", "_").replace("&", "_")


def _figure_series(directory: Path, sources: tuple) -> dict:
    series = {}
    for src in sources:
        path = directory / src
        if path.stat().st_size == 0:
            continue
        for ts, group, value in read_series(path):
            if src == "maxcount.csv" and "/" in group:
                continue  # per-AS rows stay in the CSV; the figure shows totals
            series.setdefault(_series_name(src, group), []).append((ts, value))
    return {k: sorted(v) for k, v in sorted(series.items())}


def render_svg(title: str, ylabel: str, series: dict, width: int = 640, height: int = 320) -> str:
    """A minimal line chart: one polyline per series, shared axes, legend on the right."""
    left, right, top, bottom = 60, 160, 30, 40
    pw, ph = width - left - right, height - top - bottom
    pts = [p for s in series.values() for p in s]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
             f'<text x="{left}" y="18" font-size="13">{title}</text>',
             f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>',
             f'<text x="12" y="{top + ph / 2:.1f}" transform="rotate(-90 12 {top + ph / 2:.1f})">{ylabel}</text>']
    if pts:
        x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
        y0, y1 = min(0.0, min(p[1] for p in pts)), max(p[1] for p in pts)
        xs = (x1 - x0) or 1
        ys = (y1 - y0) or 1
        parts.append(f'<text x="{left - 4}" y="{top + 4}" text-anchor="end">{y1:g}</text>')
        parts.append(f'<text x="{left - 4}" y="{top + ph}" text-anchor="end">{y0:g}</text>')
        for i, (name, s) in enumerate(series.items()):
            color = PALETTE[i % len(PALETTE)]
            coords = " ".join(f"{left + (x - x0) / xs * pw:.2f},{top + ph - (y - y0) / ys * ph:.2f}" for x, y in s)
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
            ly = top + 12 + 14 * i
            parts.append(f'<line x1="{left + pw + 10}" y1="{ly - 4}" x2="{left + pw + 26}" y2="{ly - 4}" '
                         f'stroke="{color}" stroke-width="2"/>')
            parts.append(f'<text x="{left + pw + 30}" y="{ly}">{name}</text>')
    else:
        parts.append(f'<text x="{left + pw / 2:.1f}" y="{top + ph / 2:.1f}" text-anchor="middle">no data</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_report(args) -> int:
    src = Path(args.analysis)
    missing = [f for srcs, _ in FIGURES.values() for f in srcs if not (src / f).is_file()]
    if missing:
        raise CliError(EXIT_EMPTY, "MISSING_INPUT", f"{src} lacks {', '.join(missing)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for fig, (sources, ylabel) in FIGURES.items():
        try:
            series = _figure_series(src, sources)
        except (ValueError, csv.Error) as exc:
            raise CliError(EXIT_IO, "MALFORMED_LINE", str(exc)) from None
        fig_dir = out / fig
        fig_dir.mkdir(exist_ok=True)
        for name, pts in series.items():
            with open(fig_dir / f"{name}.dat", "w", encoding="utf-8") as fh:
                fh.write("x y\n")
                fh.writelines(f"{x} {y:.6f}\n" for x, y in pts)
        (out / f"{fig}.svg").write_text(render_svg(fig, ylabel, series), encoding="utf-8")
    log.info("report -> %s", out)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="botmesh", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"botmesh {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sim", help="run the simulator and export its journal")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sim)

    c = sub.add_parser("crawl", help="run crawlers against one simulated world")
    c.add_argument("--sim-config", required=True)
    c.add_argument("--crawler", action="append", required=True, help="crawler TOML (repeatable)")
    c.add_argument("--duration", type=float, help="simulated seconds (default: sim duration_s)")
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--realtime", action="store_true", help="pace the virtual clock with wall time")
    c.add_argument("--speed", type=float, default=1.0, help="virtual seconds per wall second with --realtime")
    c.set_defaults(func=cmd_crawl)

    a = sub.add_parser("analyze", help="compute metrics from observation logs")
    a.add_argument("--logs", action="append", required=True, help="glob or directory (repeatable)")
    a.add_argument("--as-table")
    a.add_argument("--out", required=True)
    a.add_argument("--bucket", type=int, default=3600, help="reply-ratio bucket width, seconds")
    a.add_argument("--mode", default="config_only", choices=["config_only", "any_reply", "CONFIG_ONLY", "ANY_REPLY"])
    a.add_argument("--snapshot", type=int, default=60, help="snapshot width for simultaneity, seconds")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("report", help="turn analysis output into plot data and SVG charts")
    r.add_argument("--analysis", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"ERROR:{exc.code}:{exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"ERROR:IO:{exc.filename}: not found", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"ERROR:IO:{exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

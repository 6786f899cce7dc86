"""Population metrics over observation logs.

All functions are pure: they take (enriched) observations plus parameters and
return plain values, so repeated runs over the same log are byte-identical.
Timestamps in observations are unix milliseconds; bucket starts in
:class:`MetricSeries` are unix seconds.
"""

from __future__ import annotations

import csv
import enum
import json
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .core import (
    HJ,
    MZ,
    FAMILIES,
    EnrichedObservation,
    Event,
    SUCCESS_EVENTS,
    bot_key,
    enrich,
)

SNAPSHOT_S = 60
DAY_S = 86400
TAKEOVER_WINDOW_S = 6 * 3600

ATTEMPT_EVENTS = frozenset({Event.REPLY_CONFIG, Event.REPLY_NODES, Event.TIMEOUT, Event.PROTOCOL_ERROR})


class Mode(str, enum.Enum):
    CONFIG_ONLY = "CONFIG_ONLY"
    ANY_REPLY = "ANY_REPLY"


class Verdict(str, enum.Enum):
    SHARING = "SHARING"
    POSSIBLE_TAKEOVER = "POSSIBLE_TAKEOVER"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass
class MetricSeries:
    """Rows of (bucket start in unix seconds, group, value) with one bucket width."""

    width_s: int
    rows: list = field(default_factory=list)

    def __post_init__(self):
        for ts, _, _ in self.rows:
            if ts % self.width_s:
                raise ValueError(f"bucket {ts} not aligned to width {self.width_s}")

    def groups(self) -> list:
        return sorted({g for _, g, _ in self.rows})

    def values(self, group: str) -> dict:
        return {ts: v for ts, g, v in self.rows if g == group}


@dataclass(frozen=True)
class OverlapVerdict:
    ip: str
    verdict: Verdict
    evidence: tuple  # ((ts_ms, botnet), ...) in time order


def _enriched(obs: Iterable) -> list:
    return [o if isinstance(o, EnrichedObservation) else enrich(o, None) for o in obs]


def _active(obs: Iterable, window=None, family: Optional[str] = None) -> list:
    """Success events, optionally restricted to [start_ms, end_ms) and one family."""
    out = []
    for e in _enriched(obs):
        if e.event not in SUCCESS_EVENTS:
            continue
        if family is not None and e.botnet != family:
            continue
        if window is not None and not window[0] <= e.ts < window[1]:
            continue
        out.append(e)
    return out


def _snapshot(ts_ms: int, width_s: int) -> int:
    return ts_ms // (width_s * 1000)


# -- size ----------------------------------------------------------------------


def bincount(obs: Iterable, window=None, family: Optional[str] = None) -> int:
    """Distinct IPs with successful contact in ``window`` (``(start_ms, end_ms)``, None = all)."""
    return len({e.ip for e in _active(obs, window, family)})


def maxcount_as(obs: Iterable, window=None, snapshot_s: int = SNAPSHOT_S,
                family: Optional[str] = None) -> tuple:
    """Sum over ASes of the largest number of IPs active together in one snapshot.

    Returns ``(total, {asn: max})``.
    """
    per = defaultdict(lambda: defaultdict(set))  # asn -> snapshot -> ips
    for e in _active(obs, window, family):
        per[e.asn][_snapshot(e.ts, snapshot_s)].add(e.ip)
    by_as = {asn: max(len(ips) for ips in snaps.values()) for asn, snaps in per.items()}
    return sum(by_as.values()), dict(sorted(by_as.items()))


def _days(obs: list) -> list:
    if not obs:
        return []
    first = min(e.ts for e in obs) // 1000 // DAY_S
    last = max(e.ts for e in obs) // 1000 // DAY_S
    return [d * DAY_S for d in range(first, last + 1)]


def daily_size(obs: Iterable, snapshot_s: int = SNAPSHOT_S) -> tuple:
    """Per-day BinCount and MaxCount_AS series, grouped by family (MaxCount also by family/asn)."""
    obs = _enriched(obs)
    bins, maxes = [], []
    for day in _days(obs):
        window = (day * 1000, (day + DAY_S) * 1000)
        for fam in FAMILIES:
            if not any(e.botnet == fam for e in obs):
                continue
            bins.append((day, fam, bincount(obs, window, fam)))
            total, by_as = maxcount_as(obs, window, snapshot_s, fam)
            maxes.append((day, fam, total))
            maxes.extend((day, f"{fam}/{asn}", n) for asn, n in by_as.items())
    return MetricSeries(DAY_S, bins), MetricSeries(DAY_S, maxes)


# -- overlap -------------------------------------------------------------------


def daily_overlap(obs_h: Iterable, obs_m: Iterable) -> MetricSeries:
    """Percent of IPs seen by both families per UTC day, over the union of both sets."""
    h = defaultdict(set)
    m = defaultdict(set)
    for e in _active(obs_h):
        h[e.ts // 1000 // DAY_S * DAY_S].add(e.ip)
    for e in _active(obs_m):
        m[e.ts // 1000 // DAY_S * DAY_S].add(e.ip)
    rows = []
    for day in sorted(set(h) | set(m)):
        union = h[day] | m[day]
        rows.append((day, "HJ&MZ", 100.0 * len(h[day] & m[day]) / len(union)))
    return MetricSeries(DAY_S, rows)


def classify_shared_ip(ip: str, events: Iterable, snapshot_s: int = SNAPSHOT_S,
                       window_s: int = TAKEOVER_WINDOW_S) -> OverlapVerdict:
    """Classify one IP seen by both families from its ``(ts_ms, botnet)`` activity."""
    ev = tuple(sorted((int(ts), fam) for ts, fam in events))
    families = {fam for _, fam in ev}
    if len(families) < 2:
        raise ValueError(f"{ip} is not observed by two families")
    snaps = defaultdict(set)
    for ts, fam in ev:
        snaps[_snapshot(ts, snapshot_s)].add(fam)
    runs = [ev[0][1]]
    for _, fam in ev[1:]:
        if fam != runs[-1]:
            runs.append(fam)
    if len(runs) >= 3 or any(len(f) > 1 for f in snaps.values()):
        return OverlapVerdict(ip, Verdict.SHARING, ev)
    a, b = runs
    last_a = max(ts for ts, fam in ev if fam == a)
    first_b = min(ts for ts, fam in ev if fam == b)
    if first_b - last_a <= window_s * 1000:
        return OverlapVerdict(ip, Verdict.POSSIBLE_TAKEOVER, ev)
    return OverlapVerdict(ip, Verdict.INCONCLUSIVE, ev)


def overlap_verdicts(obs: Iterable, snapshot_s: int = SNAPSHOT_S) -> list:
    """Verdicts for every IP that both families were seen on within one UTC day."""
    active = _active(obs)
    fams_by_day = defaultdict(set)
    per_ip = defaultdict(list)
    for e in active:
        fams_by_day[(e.ip, e.ts // 1000 // DAY_S)].add(e.botnet)
        per_ip[e.ip].append((e.ts, e.botnet))
    shared = sorted({ip for (ip, _), fams in fams_by_day.items() if len(fams) > 1})
    return [classify_shared_ip(ip, per_ip[ip], snapshot_s) for ip in shared]


# -- lifetimes and churn -------------------------------------------------------


@dataclass
class Lifetimes:
    hours: dict  # BotKey -> hours
    excluded: set  # keys seen at two IPs in one snapshot

    @property
    def mean(self) -> Optional[float]:
        return statistics.fmean(self.hours.values()) if self.hours else None

    @property
    def median(self) -> Optional[float]:
        return statistics.median(self.hours.values()) if self.hours else None


def lifetimes(obs: Iterable, family: str, snapshot_s: int = SNAPSHOT_S) -> Lifetimes:
    first, last = {}, {}
    ips = defaultdict(set)  # (key, snapshot) -> ips
    for e in _active(obs, family=family):
        k = bot_key(e)
        if k is None:
            continue
        first[k] = min(first.get(k, e.ts), e.ts)
        last[k] = max(last.get(k, e.ts), e.ts)
        ips[(k, _snapshot(e.ts, snapshot_s))].add(e.ip)
    excluded = {k for (k, _), s in ips.items() if len(s) > 1}
    hours = {k: (last[k] - first[k]) / 3_600_000 for k in sorted(first) if k not in excluded}
    return Lifetimes(hours, excluded)


@dataclass(frozen=True)
class ChurnDay:
    day_ts: int
    family: str
    births: int
    deaths: int
    stable: int
    carryover: int
    total: int


def churn_daily(obs: Iterable, family: Optional[str] = None) -> list:
    """Per-day births, deaths, stable and carried-over keys for each family.

    A key is *stable* on day d when active on d and first seen at least 24 h
    before d began; keys first seen earlier than d but more recently than that
    are *carryover*. Deaths on the final day of the log are suppressed.
    """
    all_obs = _enriched(obs)
    days = _days(all_obs)
    out = []
    for fam in FAMILIES if family is None else (family,):
        first, last = {}, {}
        active = defaultdict(set)
        for e in _active(all_obs, family=fam):
            k = bot_key(e)
            if k is None:
                continue
            first[k] = min(first.get(k, e.ts), e.ts)
            last[k] = max(last.get(k, e.ts), e.ts)
            active[e.ts // 1000 // DAY_S * DAY_S].add(k)
        if not first:
            continue
        born = defaultdict(int)
        died = defaultdict(int)
        for k in first:
            born[first[k] // 1000 // DAY_S * DAY_S] += 1
            died[last[k] // 1000 // DAY_S * DAY_S] += 1
        final = days[-1]
        for day in days:
            keys = active[day]
            stable = sum(1 for k in keys if first[k] <= (day - DAY_S) * 1000)
            births = born[day]
            out.append(ChurnDay(day, fam, births, died[day] if day != final else 0, stable,
                                len(keys) - stable - births, len(keys)))
    return out


# -- reply ratio ---------------------------------------------------------------


def reply_ratio(obs: Iterable, bucket_s: int = 3600, mode: Mode = Mode.CONFIG_ONLY,
                by: str = "botnet") -> MetricSeries:
    """Share of identified probes that got an answer, per bucket and group.

    Attempts are probes of a known bot (success or failure); the handshake that
    first identifies a Hajime bot is not an attempt. ``by`` is ``botnet``,
    ``asn`` or ``country``.
    """
    mode = Mode(mode)
    if by not in ("botnet", "asn", "country"):
        raise ValueError(f"unknown grouping {by!r}")
    ok = {Event.REPLY_CONFIG} if mode is Mode.CONFIG_ONLY else {Event.REPLY_CONFIG, Event.REPLY_NODES}
    att = defaultdict(int)
    hit = defaultdict(int)
    for e in _enriched(obs):
        if e.bot_id is None or e.event not in ATTEMPT_EVENTS:
            continue
        group = e.botnet if by == "botnet" else f"{e.botnet}/{getattr(e, by)}"
        key = (e.ts // 1000 // bucket_s * bucket_s, group)
        att[key] += 1
        if e.event in ok:
            hit[key] += 1
    return MetricSeries(bucket_s, [(ts, g, hit[(ts, g)] / n) for (ts, g), n in sorted(att.items())])


# -- output --------------------------------------------------------------------

SERIES_HEADER = ("bucket_ts", "group", "value")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def write_series(path, series: MetricSeries) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for ts, g, v in sorted(series.rows, key=lambda r: (r[0], r[1])):
            w.writerow([ts, g, _fmt(v)])


def read_series(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return []
        if tuple(header) != SERIES_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [(int(ts), g, float(v)) for ts, g, v in reader]


def churn_series(days: list) -> MetricSeries:
    rows = []
    for c in days:
        for name in ("births", "deaths", "stable", "carryover", "total"):
            rows.append((c.day_ts, f"{c.family}/{name}", getattr(c, name)))
    return MetricSeries(DAY_S, rows)


def analyze(obs: list, out_dir, bucket_s: int = 3600, mode: Mode = Mode.CONFIG_ONLY,
            snapshot_s: int = SNAPSHOT_S) -> dict:
    """Run every metric over enriched ``obs`` and write the result files into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    obs = sorted(_enriched(obs), key=lambda e: (e.ts, e.botnet, e.ip, e.obs.port, e.event.value))
    bins, maxes = daily_size(obs, snapshot_s)
    write_series(out / "bincount.csv", bins)
    write_series(out / "maxcount.csv", maxes)
    overlap = daily_overlap([e for e in obs if e.botnet == HJ], [e for e in obs if e.botnet == MZ])
    write_series(out / "overlap.csv", overlap)
    ratios = reply_ratio(obs, bucket_s, mode, by="botnet")
    ratios.rows += reply_ratio(obs, bucket_s, mode, by="asn").rows
    write_series(out / "reply_ratio.csv", ratios)
    churn = churn_daily(obs)
    write_series(out / "churn.csv", churn_series(churn))

    verdicts = overlap_verdicts(obs, snapshot_s)
    with open(out / "verdicts.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("ip", "verdict", "evidence"))
        for v in verdicts:
            w.writerow([v.ip, v.verdict.value, ";".join(f"{ts}:{fam}" for ts, fam in v.evidence)])

    life = {fam: lifetimes(obs, fam, snapshot_s) for fam in FAMILIES}
    with open(out / "lifetimes.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("family", "bot_id", "asn", "hours"))
        for fam in FAMILIES:
            for k, h in life[fam].hours.items():
                w.writerow([k.family, k.id, "" if k.asn is None else k.asn, f"{h:.6f}"])

    summary = {
        "observations": len(obs),
        "bucket_s": bucket_s,
        "mode": Mode(mode).value,
        "snapshot_s": snapshot_s,
        "families": {},
        "overlap_mean_pct": _mean([v for _, _, v in overlap.rows]),
        "verdicts": {v.value: sum(1 for x in verdicts if x.verdict is v) for v in Verdict},
    }
    for fam in FAMILIES:
        fam_obs = [e for e in obs if e.botnet == fam]
        if not fam_obs:
            continue
        total_max, _ = maxcount_as(fam_obs, None, snapshot_s)
        summary["families"][fam] = {
            "observations": len(fam_obs),
            "bincount_total": bincount(fam_obs),
            "maxcount_as_total": total_max,
            "bot_keys": len({bot_key(e) for e in _active(fam_obs) if e.bot_id is not None}),
            "lifetime_mean_h": life[fam].mean,
            "lifetime_median_h": life[fam].median,
            "lifetime_excluded": len(life[fam].excluded),
            "births_total": sum(c.births for c in churn if c.family == fam),
            "deaths_total": sum(c.deaths for c in churn if c.family == fam),
            "reply_ratio_mean": _mean([v for _, g, v in ratios.rows if g == fam]),
        }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(_round(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _mean(values: list) -> Optional[float]:
    return statistics.fmean(values) if values else None


def _round(obj):
    if isinstance(obj, float):
        return round(obj, 6)
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    return obj

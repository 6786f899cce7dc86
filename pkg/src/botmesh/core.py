"""Domain types, the observation log format and AS/geo enrichment."""

from __future__ import annotations

import csv
import enum
import io
import ipaddress
import re
import threading
from dataclasses import dataclass
from functools import lru_cache
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Optional

HJ = "HJ"
MZ = "MZ"
FAMILIES = (HJ, MZ)

LOG_HEADER = ("ts", "botnet", "ip", "port", "bot_id", "event", "details")
AS_HEADER = ("cidr", "asn", "country")

UNKNOWN_ASN = 0
UNKNOWN_COUNTRY = "ZZ"

_HEX40 = re.compile(r"^[0-9a-f]{40}$")


class Event(str, enum.Enum):
    REPLY_CONFIG = "REPLY_CONFIG"
    REPLY_NODES = "REPLY_NODES"
    HANDSHAKE_OK = "HANDSHAKE_OK"
    TIMEOUT = "TIMEOUT"
    PROTOCOL_ERROR = "PROTOCOL_ERROR"

    @property
    def failed(self) -> bool:
        return self in (Event.TIMEOUT, Event.PROTOCOL_ERROR)


SUCCESS_EVENTS = frozenset({Event.REPLY_CONFIG, Event.REPLY_NODES, Event.HANDSHAKE_OK})
FAILURE_EVENTS = frozenset({Event.TIMEOUT, Event.PROTOCOL_ERROR})


class MalformedLine(ValueError):
    """A log line that cannot be parsed into an Observation."""


class MalformedRow(ValueError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason


@dataclass(frozen=True)
class Observation:
    """One crawler-to-bot interaction.

    ``ts`` is unix milliseconds (UTC). ``bot_id`` is a 40-char lowercase hex
    identifier or None; ``details`` is opaque text (usually JSON).
    """

    ts: int
    botnet: str
    ip: str
    port: int
    bot_id: Optional[str]
    event: Event
    details: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.event, str) and not isinstance(self.event, Event):
            object.__setattr__(self, "event", Event(self.event))
        if self.bot_id is not None:
            object.__setattr__(self, "bot_id", self.bot_id.lower())
        if self.details == "":
            object.__setattr__(self, "details", None)
        _validate(self)

    @property
    def succeeded(self) -> bool:
        return self.event in SUCCESS_EVENTS


@lru_cache(maxsize=1 << 16)
def _check_ip(ip: str) -> None:
    ipaddress.IPv4Address(ip)


def _validate(o: Observation) -> None:
    if not isinstance(o.ts, int) or isinstance(o.ts, bool) or o.ts <= 0:
        raise ValueError(f"ts must be a positive int, got {o.ts!r}")
    if o.botnet not in FAMILIES:
        raise ValueError(f"unknown botnet tag {o.botnet!r}")
    _check_ip(o.ip)
    if not isinstance(o.port, int) or not 1 <= o.port <= 65535:
        raise ValueError(f"port out of range: {o.port!r}")
    if o.bot_id is not None and not _HEX40.match(o.bot_id):
        raise ValueError(f"bot_id must be 40 hex chars, got {o.bot_id!r}")


def serialize_observation(o: Observation) -> str:
    """Render one observation as a CSV line (with trailing newline)."""
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(
        [o.ts, o.botnet, o.ip, o.port, o.bot_id or "", o.event.value, o.details or ""]
    )
    return buf.getvalue()


def _from_row(row: list[str]) -> Observation:
    if len(row) != len(LOG_HEADER):
        raise MalformedLine(f"expected {len(LOG_HEADER)} columns, got {len(row)}")
    ts, botnet, ip, port, bot_id, event, details = row
    try:
        return Observation(
            ts=int(ts),
            botnet=botnet,
            ip=ip,
            port=int(port),
            bot_id=bot_id or None,
            event=Event(event),
            details=details or None,
        )
    except ValueError as exc:
        raise MalformedLine(str(exc)) from exc


def parse_observation(line: str) -> Observation:
    rows = list(csv.reader(io.StringIO(line)))
    if len(rows) != 1:
        raise MalformedLine(f"expected one record, got {len(rows)}")
    return _from_row(rows[0])


def iter_log(path) -> Iterator[Observation]:
    """Yield observations from one log file; raises MalformedLine with the line number."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        if tuple(header) != LOG_HEADER:
            raise MalformedLine(f"{path}: bad header {header!r}")
        for row in reader:
            try:
                yield _from_row(row)
            except MalformedLine as exc:
                raise MalformedLine(f"{path}:{reader.line_num}: {exc}") from exc


def read_logs(paths: Iterable) -> list[Observation]:
    out: list[Observation] = []
    for p in sorted(str(p) for p in paths):
        out.extend(iter_log(p))
    return out


def log_filename(family: str, day: str, crawler_id: str) -> str:
    return f"obs_{family}_{day}_{crawler_id}.csv"


def utc_day(ts_ms: int) -> str:
    return datetime.fromtimestamp(ts_ms // 1000, tz=timezone.utc).strftime("%Y%m%d")


class ObservationLog:
    """Append-only, day-rotated CSV writer for one crawler.

    Safe for several producers: each record is written as a whole line under a lock.
    """

    def __init__(self, directory, family: str, crawler_id: str):
        self.directory = Path(directory)
        self.family = family
        self.crawler_id = crawler_id
        self.paths: list[Path] = []
        self.count = 0
        self._lock = threading.Lock()
        self._day = None
        self._fh = None

    def _open(self, day: str):
        if self._fh is not None:
            self._fh.close()
        path = self.directory / log_filename(self.family, day, self.crawler_id)
        fresh = not path.exists() or path.stat().st_size == 0
        self._fh = open(path, "a", encoding="utf-8", newline="")
        if fresh:
            self._fh.write(",".join(LOG_HEADER) + "\n")
        if path not in self.paths:
            self.paths.append(path)
        self._day = day

    def write(self, o: Observation) -> None:
        line = serialize_observation(o)
        with self._lock:
            day = utc_day(o.ts)
            if day != self._day:
                self._open(day)
            self._fh.write(line)
            self._fh.flush()
            self.count += 1

    __call__ = write

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None
                self._day = None

    def __enter__(self):
        self.directory.mkdir(parents=True, exist_ok=True)
        return self

    def __exit__(self, *exc):
        self.close()


# -- AS / geolocation --------------------------------------------------------


@dataclass(frozen=True)
class AsRecord:
    cidr: ipaddress.IPv4Network
    asn: int
    country: str


class AsTable:
    """Longest-prefix-match table from IPv4 prefixes to (asn, country)."""

    def __init__(self, records: Iterable[AsRecord] = ()):
        # prefixlen -> {network int -> record}
        self._by_len: dict[int, dict[int, AsRecord]] = {}
        self.records: list[AsRecord] = []
        for rec in records:
            self.add(rec)

    def add(self, rec: AsRecord) -> None:
        bucket = self._by_len.setdefault(rec.cidr.prefixlen, {})
        key = int(rec.cidr.network_address)
        if key in bucket:
            raise ValueError(f"duplicate prefix {rec.cidr}")
        bucket[key] = rec
        self.records.append(rec)
        self._lens = sorted(self._by_len, reverse=True)

    def lookup(self, ip: str) -> tuple[int, str]:
        if not self._by_len:
            return UNKNOWN_ASN, UNKNOWN_COUNTRY
        addr = int(ipaddress.IPv4Address(ip))
        for plen in self._lens:
            mask = (0xFFFFFFFF << (32 - plen)) & 0xFFFFFFFF
            rec = self._by_len[plen].get(addr & mask)
            if rec is not None:
                return rec.asn, rec.country
        return UNKNOWN_ASN, UNKNOWN_COUNTRY

    def __len__(self):
        return len(self.records)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(AS_HEADER)
            for rec in sorted(self.records, key=lambda r: (int(r.cidr.network_address), r.cidr.prefixlen)):
                w.writerow([str(rec.cidr), rec.asn, rec.country])


def load_as_table(path) -> AsTable:
    """Read a ``cidr,asn,country`` CSV. IO errors propagate as OSError."""
    table = AsTable()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != AS_HEADER:
            raise MalformedRow(1, f"expected header {','.join(AS_HEADER)}")
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedRow(rowno, f"expected 3 columns, got {len(row)}")
            cidr, asn, country = (c.strip() for c in row)
            try:
                net = ipaddress.IPv4Network(cidr, strict=True)
                asn_i = int(asn)
            except ValueError as exc:
                raise MalformedRow(rowno, str(exc)) from exc
            if asn_i < 0 or not re.fullmatch(r"[A-Z]{2}", country):
                raise MalformedRow(rowno, f"bad asn/country {asn!r}/{country!r}")
            try:
                table.add(AsRecord(net, asn_i, country))
            except ValueError as exc:
                raise MalformedRow(rowno, str(exc)) from exc
    return table


@dataclass(frozen=True)
class EnrichedObservation:
    obs: Observation
    asn: int
    country: str

    # convenience pass-throughs used all over analytics
    @property
    def ts(self) -> int:
        return self.obs.ts

    @property
    def ip(self) -> str:
        return self.obs.ip

    @property
    def botnet(self) -> str:
        return self.obs.botnet

    @property
    def bot_id(self) -> Optional[str]:
        return self.obs.bot_id

    @property
    def event(self) -> Event:
        return self.obs.event


def enrich(o: Observation, table: Optional[AsTable]) -> EnrichedObservation:
    if table is None:
        return EnrichedObservation(o, UNKNOWN_ASN, UNKNOWN_COUNTRY)
    asn, country = table.lookup(o.ip)
    return EnrichedObservation(o, asn, country)


def enrich_all(obs: Iterable[Observation], table: Optional[AsTable]) -> list[EnrichedObservation]:
    return [enrich(o, table) for o in obs]


class BotKey(NamedTuple):
    """Bot identity used by analytics.

    Mozi IDs collide, so a Mozi bot is (id, asn); Hajime keys are unique and
    carry ``asn=None``.
    """

    family: str
    id: str
    asn: Optional[int]


def bot_key(e: EnrichedObservation) -> Optional[BotKey]:
    if e.bot_id is None:
        return None
    if e.botnet == MZ:
        return BotKey(MZ, e.bot_id, e.asn)
    return BotKey(e.botnet, e.bot_id, None)


"""Dual-loop botnet crawler.

A slow *discovery* loop walks the DHT to find candidate bots and verifies
them (Mozi: node-ID prefix on a find_node reply; Hajime: infohash lookup,
seeder enumeration and key handshake). Verified bots move to a fast
*tracking* loop. A tracked bot that stays silent for ``ttimeout_s`` drops
back to discovery; if it stays silent another ``dtimeout_s`` it is
forgotten.

Everything runs on a virtual clock. Each probe is a chain of scheduled
attempts (the retry schedule), so observations come out in time order and the
same crawler runs unchanged against the simulator or a recorded trace.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import time
from collections import OrderedDict
from dataclasses import dataclass, field, fields
from typing import Callable, Optional, Protocol

from .core import HJ, MZ, FAMILIES, Event, Observation
from .protocols import (
    DEFAULT_HAJIME_CONFIG,
    DecodeError,
    HandshakeMalformed,
    HandshakeTimeout,
    Kind,
    KrpcMessage,
    day_index,
    decode_krpc,
    encode_krpc,
    hajime_daily_infohash,
    hajime_fetch_config,
    hajime_handshake,
    key_fingerprint,
    mozi_is_bot_id,
)

try:
    import tomllib
except ModuleNotFoundError:  # py < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

DISCOVERY = "DISCOVERY"
TRACKING = "TRACKING"

CONFIG_KEYS = ("family", "dfreq_s", "tfreq_s", "dtimeout_s", "ttimeout_s", "nretry",
               "day_offset", "crawler_id", "bootstrap")

# extra find_node rounds towards a bot that answered with its config instead of nodes
MOZI_GOSSIP_ROUNDS = 3


class InvalidNretry(ValueError):
    pass


class CrawlerConfigInvalid(ValueError):
    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name


class TransportDown(RuntimeError):
    pass


class Transport(Protocol):
    def request(self, src: tuple, dst: tuple, payload: bytes, now: float) -> Optional[bytes]:
        """Send one datagram at virtual time ``now``; the reply, or None on timeout."""


@dataclass
class CrawlerConfig:
    family: str
    dfreq_s: float = 300.0
    tfreq_s: float = 60.0
    dtimeout_s: float = 900.0
    ttimeout_s: float = 900.0
    nretry: int = 5
    day_offset: int = 0
    crawler_id: str = "c0"
    bootstrap: list = field(default_factory=list)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise CrawlerConfigInvalid("family", f"must be one of {FAMILIES}")
        for name in ("dfreq_s", "tfreq_s", "dtimeout_s", "ttimeout_s"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
                raise CrawlerConfigInvalid(name, "must be a positive number")
        if isinstance(self.nretry, bool) or not isinstance(self.nretry, int) or self.nretry < 1:
            raise CrawlerConfigInvalid("nretry", "must be an integer >= 1")
        if self.day_offset not in (-1, 0, 1):
            raise CrawlerConfigInvalid("day_offset", "must be -1, 0 or +1")
        if not self.crawler_id or not all(c.isalnum() or c in "-_" for c in self.crawler_id):
            raise CrawlerConfigInvalid("crawler_id", "must be non-empty [A-Za-z0-9_-]")


def crawler_config_from_dict(data: dict) -> CrawlerConfig:
    extra = set(data) - set(CONFIG_KEYS)
    if extra:
        raise CrawlerConfigInvalid(sorted(extra)[0], "unknown key")
    if "family" not in data:
        raise CrawlerConfigInvalid("family", "missing")
    return CrawlerConfig(**data)


def load_crawler_config(path) -> CrawlerConfig:
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise CrawlerConfigInvalid("crawler.conf", str(exc)) from None
    return crawler_config_from_dict(data)


def retry_schedule(nretry: int) -> list:
    """Waits between attempts, doubling from two seconds: [2, 4, ..., 2**nretry]."""
    if isinstance(nretry, bool) or not isinstance(nretry, int) or nretry < 1:
        raise InvalidNretry(f"nretry must be an integer >= 1, got {nretry!r}")
    return [2 ** (i + 1) for i in range(nretry)]


@dataclass
class TargetState:
    address: tuple
    loop: str
    identity: Optional[str] = None
    last_success: Optional[float] = None
    unresponsive_since: Optional[float] = None
    demoted_at: Optional[float] = None
    busy: bool = False


@dataclass
class CrawlerState:
    targets: dict = field(default_factory=dict)  # address -> TargetState
    candidates: OrderedDict = field(default_factory=OrderedDict)  # address -> first enqueued
    dht_nodes: dict = field(default_factory=dict)  # address -> last reply (non-bot DHT peers)
    rejected: dict = field(default_factory=dict)  # address -> failed handshake time

    def in_loop(self, loop: str) -> list:
        return [t for t in self.targets.values() if t.loop == loop]

    def identities(self) -> set:
        return {t.identity for t in self.targets.values() if t.loop == TRACKING}


@dataclass(frozen=True)
class Transition:
    t: float
    address: tuple
    src: str
    dst: Optional[str]  # None: removed


def lifecycle_update(state: CrawlerState, clock: float, cfg: CrawlerConfig) -> list:
    """Demote long-silent tracked bots and drop long-silent discovery targets."""
    out = []
    for addr in list(state.targets):
        tgt = state.targets[addr]
        if tgt.unresponsive_since is None:
            continue
        if tgt.loop == TRACKING and clock - tgt.unresponsive_since > cfg.ttimeout_s:
            tgt.loop = DISCOVERY
            tgt.demoted_at = clock
            out.append(Transition(clock, addr, TRACKING, DISCOVERY))
        elif tgt.loop == DISCOVERY and tgt.demoted_at is not None and clock - tgt.demoted_at > cfg.dtimeout_s:
            del state.targets[addr]
            out.append(Transition(clock, addr, DISCOVERY, None))
    return out


@dataclass
class _Probe:
    purpose: str  # walk | handshake | track
    dst: tuple
    started: float
    payload: bytes = b""
    tid: bytes = b""
    attempt: int = 0


class Crawler:
    def __init__(self, cfg: CrawlerConfig, transport: Transport, sink: Callable,
                 *, epoch_ts: Optional[int] = None, address=("198.51.100.1", 6881),
                 start: float = 0.0, hajime_config: bytes = DEFAULT_HAJIME_CONFIG,
                 mozi_prefix_len: int = 6, bootstrap: Optional[list] = None):
        self.cfg = cfg
        self.transport = transport
        self.sink = sink
        self.epoch_ts = epoch_ts if epoch_ts is not None else getattr(transport, "epoch_ts")
        self.address = tuple(address)
        self.hajime_config = hajime_config
        self.mozi_prefix_len = mozi_prefix_len
        self.bootstrap = [tuple(b) for b in (bootstrap if bootstrap is not None else
                                             [_parse_addr(b) for b in cfg.bootstrap])]
        self.delays = retry_schedule(cfg.nretry)
        seed = hashlib.sha1(cfg.crawler_id.encode()).digest()
        if cfg.family == MZ:
            self.node_id = b"\x38" * 8 + seed[:12]
        else:
            self.node_id = hashlib.sha1(b"hj/" + seed).digest()
        self.state = CrawlerState()
        self.transitions: list = []
        self.observations = 0
        self.last_ts = 0
        self._queue: list = []
        self._seq = 0
        self._tid = 0
        self._visited: set = set()
        self._shaken: set = set()
        self._gossip: dict = {}
        self._schedule(start, "discovery")
        self._schedule(start + cfg.tfreq_s, "tracking")

    # -- scheduling ------------------------------------------------------------

    def _schedule(self, t: float, kind: str, payload=None) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (t, self._seq, kind, payload))

    def next_time(self) -> Optional[float]:
        return self._queue[0][0] if self._queue else None

    def step(self) -> None:
        t, _, kind, payload = heapq.heappop(self._queue)
        if kind == "discovery":
            self.discovery_tick(t)
            self._schedule(t + self.cfg.dfreq_s, "discovery")
        elif kind == "tracking":
            self.tracking_tick(t)
            self._schedule(t + self.cfg.tfreq_s, "tracking")
        else:
            self._attempt(payload, t)

    # -- observations ----------------------------------------------------------

    def _emit(self, t: float, addr: tuple, event: Event, bot_id=None, details=None) -> None:
        ts = int(round((self.epoch_ts + t) * 1000))
        assert ts >= self.last_ts, "observation timestamps must not go backwards"
        self.last_ts = ts
        self.observations += 1
        self.sink(Observation(ts, self.cfg.family, addr[0], addr[1], bot_id, event, details))

    # -- probes ----------------------------------------------------------------

    def _next_tid(self) -> bytes:
        self._tid = (self._tid + 1) % 65536
        return self._tid.to_bytes(2, "big")

    def _launch(self, purpose: str, dst: tuple, t: float) -> None:
        probe = _Probe(purpose, tuple(dst), t)
        if purpose == "handshake" or (purpose == "track" and self.cfg.family == HJ):
            probe.payload = b""  # Hajime frames are built by the protocol helpers
        else:
            probe.tid = self._next_tid()
            if self.cfg.family == MZ:
                msg = KrpcMessage(Kind.FIND_NODE, probe.tid, sender_id=self.node_id, target=self.node_id)
            else:
                msg = KrpcMessage(Kind.GET_PEERS, probe.tid, sender_id=self.node_id,
                                  info_hash=self.infohash(t))
            probe.payload = encode_krpc(msg)
        if purpose == "track":
            self.state.targets[probe.dst].busy = True
        self._schedule(t, "attempt", probe)

    def _attempt(self, probe: _Probe, t: float) -> None:
        if probe.purpose == "handshake":
            reply, result = self._hajime_exchange(probe, t, hajime_handshake, self._config_day(t))
        elif probe.purpose == "track" and self.cfg.family == HJ:
            reply, result = self._hajime_exchange(probe, t, hajime_fetch_config)
        else:
            reply = self.transport.request(self.address, probe.dst, probe.payload, t)
            result = reply
        if reply is not None:
            self._on_reply(probe, result, t)
        elif probe.attempt < len(self.delays):
            delay = self.delays[probe.attempt]
            probe.attempt += 1
            self._schedule(t + delay, "attempt", probe)
        else:
            self._on_timeout(probe, t)

    def _hajime_exchange(self, probe, t, fn, *args):
        """Run one Hajime exchange; returns (None, None) on timeout, else (b"", outcome)."""
        def exchange(frame):
            return self.transport.request(self.address, probe.dst, frame, t)

        try:
            return b"", fn(exchange, probe.dst, *args)
        except HandshakeMalformed as exc:
            return b"", exc
        except HandshakeTimeout:
            return None, None

    # -- discovery -------------------------------------------------------------

    def infohash(self, t: float) -> bytes:
        return hajime_daily_infohash(self.hajime_config, self._config_day(t))

    def _config_day(self, t: float) -> int:
        return day_index(self.epoch_ts + t) + self.cfg.day_offset

    def discovery_tick(self, t: float) -> None:
        st = self.state
        self.transitions += lifecycle_update(st, t, self.cfg)
        for addr, enq in list(st.candidates.items()):
            if t - enq > self.cfg.dtimeout_s:
                del st.candidates[addr]
        for table in (st.dht_nodes, st.rejected):
            for addr in [a for a, seen in table.items() if t - seen > self.cfg.dtimeout_s]:
                del table[addr]
        self._visited = set()
        self._shaken = set()
        self._gossip = {}
        seeds = list(self.bootstrap) + list(st.dht_nodes) + list(st.candidates)
        if self.cfg.family == MZ:
            seeds += [tg.address for tg in st.in_loop(DISCOVERY)]
        for addr in seeds:
            self._walk(addr, t)
        if self.cfg.family == HJ:
            for tg in st.in_loop(DISCOVERY):
                self._handshake(tg.address, t)

    def _walk(self, addr: tuple, t: float) -> None:
        addr = tuple(addr)
        if addr in self._visited or addr == self.address:
            return
        tgt = self.state.targets.get(addr)
        if self.cfg.family == MZ and tgt is not None and tgt.loop == TRACKING:
            return
        self._visited.add(addr)
        self._launch("walk", addr, t)

    def _handshake(self, addr: tuple, t: float) -> None:
        tgt = self.state.targets.get(addr)
        if addr in self._shaken or addr in self.state.rejected or (tgt and tgt.loop == TRACKING):
            return
        self._shaken.add(addr)
        self._launch("handshake", addr, t)

    def _learn(self, nodes, t: float, walk_now: bool) -> None:
        st = self.state
        for n in nodes:
            addr = (n.ip, n.port)
            if addr == self.address or addr in st.targets:
                continue
            if addr not in st.dht_nodes and addr not in st.candidates:
                st.candidates[addr] = t
            if walk_now:
                self._walk(addr, t)

    # -- tracking --------------------------------------------------------------

    def tracking_tick(self, t: float) -> None:
        self.transitions += lifecycle_update(self.state, t, self.cfg)
        for tg in self.state.in_loop(TRACKING):
            if not tg.busy:
                self._launch("track", tg.address, t)

    # -- outcomes --------------------------------------------------------------

    def _promote(self, addr: tuple, identity: str, t: float) -> None:
        st = self.state
        tgt = st.targets.get(addr)
        if tgt is None:
            tgt = st.targets[addr] = TargetState(addr, TRACKING)
        elif tgt.loop != TRACKING:
            self.transitions.append(Transition(t, addr, tgt.loop, TRACKING))
        tgt.loop = TRACKING
        self._succeed(tgt, identity, t)
        st.candidates.pop(addr, None)
        st.dht_nodes.pop(addr, None)

    @staticmethod
    def _succeed(tgt: TargetState, identity: str, t: float) -> None:
        tgt.identity = identity
        tgt.last_success = t
        tgt.unresponsive_since = None
        tgt.demoted_at = None

    def _failed(self, addr: tuple, t_started: float) -> Optional[str]:
        tgt = self.state.targets.get(addr)
        if tgt is None:
            return None
        if tgt.unresponsive_since is None:
            tgt.unresponsive_since = t_started
        return tgt.identity

    def _on_timeout(self, probe: _Probe, t: float) -> None:
        if probe.purpose == "track":
            self.state.targets[probe.dst].busy = False
        bot_id = self._failed(probe.dst, probe.started)
        self._emit(t, probe.dst, Event.TIMEOUT, bot_id)

    def _protocol_error(self, probe: _Probe, t: float, why: str) -> None:
        bot_id = self._failed(probe.dst, probe.started)
        self._emit(t, probe.dst, Event.PROTOCOL_ERROR, bot_id, json.dumps({"error": why}))

    def _on_reply(self, probe: _Probe, result, t: float) -> None:
        if probe.purpose == "track":
            tgt = self.state.targets.get(probe.dst)
            if tgt is not None:
                tgt.busy = False
        if self.cfg.family == HJ:
            self._on_reply_hajime(probe, result, t)
            return
        try:
            msg = decode_krpc(result)
        except DecodeError as exc:
            self._protocol_error(probe, t, str(exc))
            return
        if msg.transaction_id != probe.tid or msg.kind is Kind.ERROR or msg.is_query:
            self._protocol_error(probe, t, f"unexpected {msg.kind.value}")
            return
        self._on_reply_mozi(probe, msg, t)

    def _on_reply_mozi(self, probe: _Probe, msg: KrpcMessage, t: float) -> None:
        st = self.state
        is_bot = mozi_is_bot_id(msg.sender_id, self.mozi_prefix_len)
        if not is_bot:
            if probe.purpose == "track":
                self._protocol_error(probe, t, "sender is not a Mozi node")
                return
            st.candidates.pop(probe.dst, None)
            if probe.dst not in st.targets:
                st.dht_nodes[probe.dst] = t
            self._learn(msg.nodes, t, walk_now=True)
            return
        bot_id = msg.sender_id.hex()
        event = Event.REPLY_CONFIG if msg.kind is Kind.RESPONSE_CONFIG else Event.REPLY_NODES
        details = json.dumps({"size": len(msg.config)}) if msg.config is not None else None
        if probe.purpose == "track":
            self._succeed(st.targets[probe.dst], bot_id, t)
            self._emit(t, probe.dst, event, bot_id, details)
            self._learn(msg.nodes, t, walk_now=False)
            return
        self._promote(probe.dst, bot_id, t)
        self._emit(t, probe.dst, event, bot_id, details)
        self._learn(msg.nodes, t, walk_now=True)
        if event is Event.REPLY_CONFIG:
            rounds = self._gossip.get(probe.dst, 0)
            if rounds < MOZI_GOSSIP_ROUNDS:
                self._gossip[probe.dst] = rounds + 1
                self._launch("walk", probe.dst, t)

    def _on_reply_hajime(self, probe: _Probe, result, t: float) -> None:
        st = self.state
        if probe.purpose == "walk":
            try:
                msg = decode_krpc(result)
            except DecodeError as exc:
                self._protocol_error(probe, t, str(exc))
                return
            if msg.transaction_id != probe.tid or msg.is_query or msg.kind is Kind.ERROR:
                self._protocol_error(probe, t, f"unexpected {msg.kind.value}")
                return
            if probe.dst not in st.targets:
                st.candidates.pop(probe.dst, None)
                st.dht_nodes[probe.dst] = t
            self._learn(msg.nodes, t, walk_now=True)
            for peer in msg.peers:
                self._handshake(tuple(peer), t)
            return
        if isinstance(result, HandshakeMalformed):
            if probe.purpose == "handshake" and probe.dst not in st.targets:
                st.rejected[probe.dst] = t
            self._protocol_error(probe, t, str(result))
            return
        if probe.purpose == "handshake":
            session = result
            self._promote(probe.dst, session.bot_id, t)
            self._emit(t, probe.dst, Event.HANDSHAKE_OK, session.bot_id,
                       json.dumps({"day": session.config_day}))
        else:
            key, config = result
            bot_id = key_fingerprint(key)
            self._succeed(st.targets[probe.dst], bot_id, t)
            self._emit(t, probe.dst, Event.REPLY_CONFIG, bot_id, json.dumps({"size": len(config)}))


def _parse_addr(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return text[0], int(text[1])
    host, _, port = str(text).rpartition(":")
    return host, int(port)


def run_crawlers(crawlers: list, until: float, *, stop: Optional[Callable[[], bool]] = None,
                 realtime: bool = False, speed: float = 1.0) -> bool:
    """Interleave several crawlers on one virtual clock, processing events with t < until.

    Returns False if the run ended early (stop signal or transport failure).
    """
    wall0 = time.monotonic()
    while True:
        best = None
        for i, c in enumerate(crawlers):
            nt = c.next_time()
            if nt is not None and (best is None or nt < best[0]):
                best = (nt, i)
        if best is None or best[0] >= until:
            return True
        if stop is not None and stop():
            return False
        if realtime:
            lag = best[0] / speed - (time.monotonic() - wall0)
            if lag > 0:
                time.sleep(lag)
        try:
            crawlers[best[1]].step()
        except TransportDown as exc:
            log.warning("transport down, stopping crawl: %s", exc)
            return False


def run_crawler(cfg: CrawlerConfig, transport: Transport, until: float, *, sink=None,
                stop=None, **kwargs) -> list:
    """Run one crawler until virtual time ``until``; returns the observations it made."""
    collected: list = []

    def both(o):
        collected.append(o)
        if sink is not None:
            sink(o)

    run_crawlers([Crawler(cfg, transport, both, **kwargs)], until, stop=stop)
    return collected


class RecordingTransport:
    """Wraps a transport and keeps (now, dst, payload, reply) for later replay."""

    def __init__(self, inner):
        self.inner = inner
        self.trace: list = []

    @property
    def epoch_ts(self):
        return self.inner.epoch_ts

    def request(self, src, dst, payload, now):
        reply = self.inner.request(src, dst, payload, now)
        self.trace.append((now, tuple(dst), payload, reply))
        return reply


class ReplayTransport:
    """Answers from a recorded trace; any divergence from it means the transport is down."""

    def __init__(self, trace: list, epoch_ts: int):
        self.trace = list(trace)
        self.epoch_ts = epoch_ts
        self._pos = 0

    def request(self, src, dst, payload, now):
        if self._pos >= len(self.trace):
            raise TransportDown("trace exhausted")
        t, rdst, rpayload, reply = self.trace[self._pos]
        if (t, rdst, rpayload) != (now, tuple(dst), payload):
            raise TransportDown(f"trace diverged at record {self._pos}")
        self._pos += 1
        return reply

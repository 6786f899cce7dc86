"""Deterministic discrete-event simulator of a Hajime/Mozi infected population.

The world is a set of devices grouped into AS pools. Devices behind the same
NAT share one public IP and are told apart by port. Every source of
randomness is a named ``random.Random`` stream derived from the seed, so a
(config, seed) pair always produces the same journal and the same replies.

Population dynamics:

* reboots are exponential per family; a device stays down ``boot_s`` seconds
* a persistent family (Mozi) re-infects on wake with a fresh node ID
* a non-persistent family (Hajime) leaves the device clean; each family the
  device is vulnerable to then races to re-infect it ("scanner reach"),
  Hajime no earlier than ``reinfection_delay_s``
* NAT groups get a new public IP at exponential intervals per AS
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import ipaddress
import math
import random
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from typing import NamedTuple, Optional

from .core import HJ, MZ, AsRecord, AsTable
from .protocols import (
    DEFAULT_HAJIME_CONFIG,
    HJ_CONFIG,
    HJ_CONFIG_REQ,
    HJ_HELLO,
    HJ_KEY,
    DecodeError,
    Kind,
    KrpcMessage,
    MoziBotState,
    MoziIdParams,
    NodeInfo,
    closest_nodes,
    day_index,
    decode_krpc,
    encode_krpc,
    hajime_daily_infohash,
    hajime_decode,
    hajime_encode,
    is_hajime_frame,
    key_fingerprint,
    mozi_generate_id,
    mozi_is_bot_id,
    mozi_respond_find_node,
)

try:
    import tomllib
except ModuleNotFoundError:  # py < 3.11
    import tomli as tomllib

UNINFECTED = "UNINFECTED"
JOURNAL_HEADER = ("ts", "event", "device", "family", "node_id", "ip", "asn")
MOZI_DEFAULT_CLOCK = 946684800  # devices without RTC boot at 2000-01-01
MOZI_CONFIG = b"[ss]bot[/ss][hp]88888888[/hp][count]http://ia.51.la/go1?id=0[/count]"


class ConfigInvalid(ValueError):
    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name
        self.reason = reason


@dataclass
class FamilyParams:
    mean_uptime_s: float = 0.0  # 0 disables reboots
    boot_s: float = 60.0
    scan_mean_s: float = 1800.0
    reinfection_delay_s: float = 0.0
    persistent: bool = False
    prefix_len: int = 6  # Mozi only
    clock_reset_prob: float = 0.0  # Mozi only: boots with the default clock -> ID collisions
    clock_skew_s: float = 0.0  # Hajime only: max |skew| of the bot's day boundary


def default_families() -> dict:
    return {
        HJ: FamilyParams(mean_uptime_s=0.0, reinfection_delay_s=3600.0, persistent=False),
        MZ: FamilyParams(mean_uptime_s=0.0, persistent=True),
    }


@dataclass
class AsPool:
    asn: int
    country: str
    prefix: str
    device_count: int
    nat_group_size: int = 1
    hj_share: float = 0.5  # share of single-family devices vulnerable to Hajime
    loss: float = 0.0
    reassign_mean_s: float = 0.0  # 0 disables IP reassignment


@dataclass
class ThrottleWindow:
    """Extra loss towards ``asn`` during UTC hours [start_hour, end_hour)."""

    asn: int
    start_hour: int
    end_hour: int
    added_loss: float

    def active(self, hour: int) -> bool:
        if self.start_hour <= self.end_hour:
            return self.start_hour <= hour < self.end_hour
        return hour >= self.start_hour or hour < self.end_hour


@dataclass
class SimConfig:
    seed: int = 0
    duration_s: float = 86400.0
    start_ts: int = 1656633600  # 2022-07-01T00:00:00Z
    phi: float = 0.0
    as_pools: list = field(default_factory=list)
    families: dict = field(default_factory=default_families)
    throttle: list = field(default_factory=list)
    benign_peers: int = 16
    benign_seeders: int = 0
    benign_prefix: str = "100.64.0.0/16"
    bootstrap: list = field(default_factory=lambda: ["203.0.113.1:6881"])
    hajime_config: str = DEFAULT_HAJIME_CONFIG.decode()
    dht_neighbors: int = 4
    nat_infection: bool = False
    nat_infection_mean_s: float = 60.0

    def validate(self) -> "SimConfig":
        if self.duration_s < 0:
            raise ConfigInvalid("duration_s", "must be >= 0")
        if self.start_ts <= 0:
            raise ConfigInvalid("start_ts", "must be > 0")
        _prob("phi", self.phi)
        if set(self.families) != {HJ, MZ}:
            raise ConfigInvalid("families", "must define exactly HJ and MZ")
        for fam, fp in self.families.items():
            for name in ("mean_uptime_s", "boot_s", "scan_mean_s", "reinfection_delay_s", "clock_skew_s"):
                if getattr(fp, name) < 0:
                    raise ConfigInvalid(f"families.{fam}.{name}", "must be >= 0")
            _prob(f"families.{fam}.clock_reset_prob", fp.clock_reset_prob)
            if fp.prefix_len not in (6, 8):
                raise ConfigInvalid(f"families.{fam}.prefix_len", "must be 6 or 8")
        seen = set()
        for i, pool in enumerate(self.as_pools):
            where = f"as_pools[{i}]"
            try:
                net = ipaddress.IPv4Network(pool.prefix, strict=True)
            except ValueError as exc:
                raise ConfigInvalid(f"{where}.prefix", str(exc)) from None
            if net in seen:
                raise ConfigInvalid(f"{where}.prefix", "duplicate prefix")
            seen.add(net)
            if pool.device_count < 0:
                raise ConfigInvalid(f"{where}.device_count", "must be >= 0")
            if pool.nat_group_size < 1:
                raise ConfigInvalid(f"{where}.nat_group_size", "must be >= 1")
            groups = math.ceil(pool.device_count / pool.nat_group_size)
            if groups > max(1, net.num_addresses - 2) // 2 and groups:
                raise ConfigInvalid(f"{where}.prefix", f"too small for {groups} NAT groups")
            _prob(f"{where}.hj_share", pool.hj_share)
            _prob(f"{where}.loss", pool.loss)
            if pool.reassign_mean_s < 0:
                raise ConfigInvalid(f"{where}.reassign_mean_s", "must be >= 0")
            if not (len(pool.country) == 2 and pool.country.isalpha() and pool.country.isupper()):
                raise ConfigInvalid(f"{where}.country", "must be ISO-3166 alpha-2")
        for i, tw in enumerate(self.throttle):
            if not (0 <= tw.start_hour <= 23 and 0 <= tw.end_hour <= 24):
                raise ConfigInvalid(f"throttle[{i}]", "hours out of range")
            _prob(f"throttle[{i}].added_loss", tw.added_loss)
        if self.benign_peers < 0 or not 0 <= self.benign_seeders <= self.benign_peers:
            raise ConfigInvalid("benign_seeders", "must be between 0 and benign_peers")
        try:
            ipaddress.IPv4Network(self.benign_prefix)
            for b in self.bootstrap:
                parse_address(b)
        except ValueError as exc:
            raise ConfigInvalid("bootstrap", str(exc)) from None
        if self.dht_neighbors < 1:
            raise ConfigInvalid("dht_neighbors", "must be >= 1")
        return self


def _prob(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ConfigInvalid(name, f"probability {value} outside [0, 1]")


def parse_address(text: str) -> tuple:
    host, _, port = text.rpartition(":")
    ipaddress.IPv4Address(host)
    p = int(port)
    if not 1 <= p <= 65535:
        raise ValueError(f"port out of range in {text!r}")
    return host, p


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    extra = set(data) - known
    if extra:
        raise ConfigInvalid(f"{where}.{sorted(extra)[0]}", "unknown key")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigInvalid(where, str(exc)) from None


def sim_config_from_dict(data: dict) -> SimConfig:
    data = dict(data)
    pools = [_build(AsPool, p, f"as_pools[{i}]") for i, p in enumerate(data.pop("as_pools", []))]
    throttle = [_build(ThrottleWindow, t, f"throttle[{i}]") for i, t in enumerate(data.pop("throttle", []))]
    fams = default_families()
    for name, params in data.pop("families", {}).items():
        if name not in fams:
            raise ConfigInvalid(f"families.{name}", "unknown family")
        merged = {**fams[name].__dict__, **params}
        fams[name] = _build(FamilyParams, merged, f"families.{name}")
    cfg = _build(SimConfig, data, "sim")
    cfg.as_pools, cfg.throttle, cfg.families = pools, throttle, fams
    _check_types(cfg)
    return cfg.validate()


def _check_types(cfg: SimConfig) -> None:
    for name in ("seed", "start_ts", "benign_peers", "benign_seeders", "dht_neighbors"):
        if not isinstance(getattr(cfg, name), int) or isinstance(getattr(cfg, name), bool):
            raise ConfigInvalid(name, "must be an integer")
    for i, p in enumerate(cfg.as_pools):
        for name in ("asn", "device_count", "nat_group_size"):
            if not isinstance(getattr(p, name), int):
                raise ConfigInvalid(f"as_pools[{i}].{name}", "must be an integer")


def load_sim_config(path) -> SimConfig:
    """Read a TOML ``sim.conf``. Raises OSError for IO problems, ConfigInvalid otherwise."""
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigInvalid("sim.conf", str(exc)) from None
    return sim_config_from_dict(data)


# -- world state -------------------------------------------------------------


@dataclass
class SimBot:
    device: int
    pool: int
    asn: int
    country: str
    vulnerable: frozenset
    group: int
    port: int
    family: Optional[str] = None
    node_id: Optional[bytes] = None
    utp_key: Optional[bytes] = None
    pid: int = 0
    ppid: int = 0
    boot_time: int = 0
    up: bool = True
    epoch: int = 0
    clock_skew: float = 0.0

    @property
    def infected(self) -> bool:
        return self.up and self.family is not None

    @property
    def bot_id(self) -> Optional[str]:
        """Identity as a crawler records it (node ID for Mozi, key fingerprint for Hajime)."""
        if self.family == MZ:
            return self.node_id.hex()
        if self.family == HJ:
            return key_fingerprint(self.utp_key)
        return None


@dataclass
class NatGroup:
    index: int
    pool: int
    ip: str
    members: list


@dataclass
class BenignPeer:
    node_id: bytes
    ip: str
    port: int
    seeder: bool = False


class JournalEntry(NamedTuple):
    t: float
    event: str
    device: int
    family: str
    node_id: str
    ip: str
    asn: int
    bot_id: str  # crawler-visible identity, not exported


class GroundTruthBot(NamedTuple):
    device: int
    node_id: bytes
    public_ip: str
    asn: int


@dataclass
class SimWorld:
    cfg: SimConfig
    clock: float = 0.0
    bots: list = field(default_factory=list)
    groups: list = field(default_factory=list)
    benign: list = field(default_factory=list)
    journal: list = field(default_factory=list)
    queue: list = field(default_factory=list)
    rngs: dict = field(default_factory=dict)
    hosts: dict = field(default_factory=dict)  # (ip, port) -> SimBot | BenignPeer
    used_ips: list = field(default_factory=list)  # per pool: set of allocated ints
    _seq: int = 0
    _ring: Optional[list] = None
    _ring_keys: Optional[list] = None
    _ring_pos: Optional[dict] = None
    _infohash_cache: dict = field(default_factory=dict)

    @property
    def epoch_ts(self) -> int:
        return self.cfg.start_ts

    @property
    def bootstrap(self) -> list:
        return [parse_address(b) for b in self.cfg.bootstrap]

    def rng(self, name: str) -> random.Random:
        r = self.rngs.get(name)
        if r is None:
            r = self.rngs[name] = random.Random(f"{self.cfg.seed}/{name}")
        return r

    def ts_ms(self, t: float) -> int:
        return int(round((self.cfg.start_ts + t) * 1000))

    def address(self, bot: SimBot) -> tuple:
        return self.groups[bot.group].ip, bot.port

    def schedule(self, t: float, kind: str, *args) -> None:
        self._seq += 1
        heapq.heappush(self.queue, (t, self._seq, kind, args))

    def as_table(self) -> AsTable:
        return AsTable(AsRecord(ipaddress.IPv4Network(p.prefix), p.asn, p.country)
                       for p in self.cfg.as_pools)

    def counts(self) -> dict:
        out = {HJ: 0, MZ: 0, UNINFECTED: 0, "DOWN": 0}
        for b in self.bots:
            if not b.up:
                out["DOWN"] += 1
            elif b.family is None:
                out[UNINFECTED] += 1
            else:
                out[b.family] += 1
        return out


def _exp(rng: random.Random, mean: float) -> float:
    return rng.expovariate(1.0 / mean) if mean > 0 else 0.0


def _alloc_ip(w: SimWorld, pool_idx: int) -> str:
    net = ipaddress.IPv4Network(w.cfg.as_pools[pool_idx].prefix)
    used = w.used_ips[pool_idx]
    rng = w.rng("ip")
    base, size = int(net.network_address), net.num_addresses
    lo, hi = (1, size - 2) if size > 2 else (0, size - 1)
    while True:
        cand = base + rng.randint(lo, hi)
        if cand not in used:
            used.add(cand)
            return str(ipaddress.IPv4Address(cand))


def sim_init(cfg: SimConfig) -> SimWorld:
    cfg.validate()
    w = SimWorld(cfg=cfg)
    init = w.rng("init")
    ids = w.rng("ids")
    device = 0
    for pi, pool in enumerate(cfg.as_pools):
        w.used_ips.append(set())
        n = pool.device_count
        n_both = round(cfg.phi * n)
        rest = n - n_both
        n_hj = round(pool.hj_share * rest)
        vuln = ([frozenset({HJ, MZ})] * n_both + [frozenset({HJ})] * n_hj
                + [frozenset({MZ})] * (rest - n_hj))
        init.shuffle(vuln)
        for gi in range(0, n, pool.nat_group_size):
            group = NatGroup(len(w.groups), pi, _alloc_ip(w, pi), [])
            w.groups.append(group)
            ports = init.sample(range(1024, 65536), min(pool.nat_group_size, n - gi))
            for port, v in zip(ports, vuln[gi : gi + pool.nat_group_size]):
                bot = SimBot(device, pi, pool.asn, pool.country, v, group.index, port)
                group.members.append(device)
                w.bots.append(bot)
                w.hosts[(group.ip, port)] = bot
                device += 1
            if pool.reassign_mean_s > 0:
                w.schedule(_exp(w.rng("reassign"), pool.reassign_mean_s), "REASSIGN", group.index, False)
    # benign DHT participants: well-known routers first, then ordinary peers
    for addr in cfg.bootstrap:
        ip, port = parse_address(addr)
        peer = BenignPeer(ids.randbytes(20), ip, port)
        w.benign.append(peer)
        w.hosts[(ip, port)] = peer
    bnet = ipaddress.IPv4Network(cfg.benign_prefix)
    for i in range(cfg.benign_peers):
        while True:
            ip = str(bnet.network_address + ids.randint(1, max(1, bnet.num_addresses - 2)))
            port = ids.randint(1024, 65535)
            if (ip, port) not in w.hosts:
                break
        peer = BenignPeer(ids.randbytes(20), ip, port, seeder=i < cfg.benign_seeders)
        w.benign.append(peer)
        w.hosts[(ip, port)] = peer
    # initial infections
    for bot in w.bots:
        pool = cfg.as_pools[bot.pool]
        if len(bot.vulnerable) == 1:
            fam = next(iter(bot.vulnerable))
        else:
            fam = HJ if init.random() < pool.hj_share else MZ
        _infect(w, bot, fam, 0.0)
    return w


def _new_identity(w: SimWorld, bot: SimBot, fam: str, t: float) -> None:
    ids = w.rng("ids")
    fp = w.cfg.families[fam]
    if fam == MZ:
        if fp.clock_reset_prob and ids.random() < fp.clock_reset_prob:
            bot.boot_time = MOZI_DEFAULT_CLOCK + int(fp.boot_s)
            bot.pid, bot.ppid = ids.randint(100, 115), 1
        else:
            bot.boot_time = int(w.cfg.start_ts + t)
            bot.pid, bot.ppid = ids.randint(100, 32767), ids.randint(1, 99)
        bot.node_id = mozi_generate_id(MoziIdParams(bot.boot_time, bot.pid, bot.ppid, fp.prefix_len))
        bot.utp_key = None
    else:
        while True:
            nid = ids.randbytes(20)
            if not mozi_is_bot_id(nid):
                break
        bot.node_id = nid
        bot.utp_key = ids.randbytes(32)
        bot.clock_skew = ids.uniform(-fp.clock_skew_s, fp.clock_skew_s) if fp.clock_skew_s else 0.0


def _log(w: SimWorld, t: float, event: str, bot: SimBot) -> None:
    w.journal.append(JournalEntry(
        t, event, bot.device, bot.family or UNINFECTED,
        bot.node_id.hex() if (bot.node_id is not None and bot.family) else "",
        w.groups[bot.group].ip, bot.asn, bot.bot_id or ""))


def _infect(w: SimWorld, bot: SimBot, fam: str, t: float) -> None:
    bot.family = fam
    bot.up = True
    bot.epoch += 1
    _new_identity(w, bot, fam, t)
    _log(w, t, "INFECT", bot)
    w._ring = None
    fp = w.cfg.families[fam]
    if fp.mean_uptime_s > 0:
        w.schedule(t + _exp(w.rng("reboot"), fp.mean_uptime_s), "REBOOT", bot.device, bot.epoch)
    if w.cfg.nat_infection:
        for other in w.groups[bot.group].members:
            peer = w.bots[other]
            if peer.up and peer.family is None and fam in peer.vulnerable:
                w.schedule(t + _exp(w.rng("infect"), w.cfg.nat_infection_mean_s),
                           "INFECT", peer.device, fam, peer.epoch)


def _schedule_scans(w: SimWorld, bot: SimBot, t: float) -> None:
    rng = w.rng("infect")
    for fam in sorted(bot.vulnerable):
        fp = w.cfg.families[fam]
        w.schedule(t + fp.reinfection_delay_s + _exp(rng, fp.scan_mean_s), "INFECT",
                   bot.device, fam, bot.epoch)


def _process(w: SimWorld, t: float, kind: str, args: tuple) -> None:
    if kind == "REBOOT":
        dev, epoch = args
        bot = w.bots[dev]
        if (epoch is not None and bot.epoch != epoch) or not bot.infected:
            return
        bot.up = False
        bot.epoch += 1
        _log(w, t, "REBOOT", bot)
        w._ring = None
        w.schedule(t + w.cfg.families[bot.family].boot_s, "WAKE", dev, bot.epoch)
    elif kind == "WAKE":
        dev, epoch = args
        bot = w.bots[dev]
        if bot.epoch != epoch or bot.up:
            return
        fam = bot.family
        bot.up = True
        bot.epoch += 1
        if fam is not None and w.cfg.families[fam].persistent:
            _log(w, t, "WAKE", bot)
            _infect(w, bot, fam, t)
        else:
            bot.family = None
            _log(w, t, "WAKE", bot)
            _schedule_scans(w, bot, t)
    elif kind == "INFECT":
        dev, fam, epoch = args
        bot = w.bots[dev]
        if bot.epoch != epoch or not bot.up or bot.family is not None:
            return
        _infect(w, bot, fam, t)
    elif kind == "REASSIGN":
        gi, scripted = args
        group = w.groups[gi]
        pool = w.cfg.as_pools[group.pool]
        old = group.ip
        group.ip = _alloc_ip(w, group.pool)
        w.used_ips[group.pool].discard(int(ipaddress.IPv4Address(old)))
        for dev in group.members:
            bot = w.bots[dev]
            w.hosts.pop((old, bot.port), None)
            w.hosts[(group.ip, bot.port)] = bot
            _log(w, t, "REASSIGN", bot)
        w._ring = None
        if not scripted and pool.reassign_mean_s > 0:
            w.schedule(t + _exp(w.rng("reassign"), pool.reassign_mean_s), "REASSIGN", gi, False)
    else:
        raise ValueError(f"unknown event kind {kind}")


def sim_run_until(w: SimWorld, t: float) -> list:
    """Process every queued event with timestamp <= t; returns the new journal entries."""
    if t < w.clock:
        raise ValueError(f"cannot run backwards from {w.clock} to {t}")
    start = len(w.journal)
    while w.queue and w.queue[0][0] <= t:
        et, _, kind, args = heapq.heappop(w.queue)
        w.clock = et
        _process(w, et, kind, args)
    w.clock = t
    return w.journal[start:]


def script_reboot(w: SimWorld, device: int, at: float) -> None:
    """Force a reboot of ``device`` at time ``at`` (for scripted scenarios)."""
    w.schedule(at, "REBOOT", device, None)


def script_reassign(w: SimWorld, device: int, at: float) -> None:
    w.schedule(at, "REASSIGN", w.bots[device].group, True)


# -- ground truth ----------------------------------------------------------------


def _replay(journal, t: float) -> dict:
    state: dict = {}
    for e in journal:
        if e.t > t:
            break
        s = state.setdefault(e.device, {"family": None, "up": True})
        s["ip"], s["asn"] = e.ip, e.asn
        if e.event == "INFECT":
            s.update(family=e.family, node_id=e.node_id, bot_id=e.bot_id, up=True)
        elif e.event == "REBOOT":
            s["up"] = False
        elif e.event == "WAKE":
            s.update(up=True, family=None)
    return state


def ground_truth(w: SimWorld, t: float, family: str) -> set:
    """Exact infected population of ``family`` at time ``t``, rebuilt from the journal."""
    if t > w.clock:
        raise ValueError("ground truth requested beyond the simulated clock")
    return {GroundTruthBot(dev, bytes.fromhex(s["node_id"]), s["ip"], s["asn"])
            for dev, s in _replay(w.journal, t).items()
            if s["up"] and s["family"] == family}


def ground_truth_ids(w: SimWorld, t: float, family: str) -> set:
    """Crawler-visible identities (bot_id hex) of the infected population at ``t``."""
    return {s["bot_id"] for s in _replay(w.journal, t).values()
            if s["up"] and s["family"] == family}


def write_journal(w: SimWorld, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(JOURNAL_HEADER)
        for e in w.journal:
            out.writerow([w.ts_ms(e.t), e.event, e.device, e.family, e.node_id, e.ip, e.asn])


# -- network -----------------------------------------------------------------------


def _ring(w: SimWorld):
    if w._ring is None:
        entries = [(p.node_id, (p.ip, p.port)) for p in w.benign]
        entries += [(b.node_id, w.address(b)) for b in w.bots if b.infected]
        entries.sort()
        w._ring = entries
        w._ring_pos = {addr: i for i, (_, addr) in enumerate(entries)}
    return w._ring


def dht_neighbors(w: SimWorld, addr: tuple) -> list:
    """The DHT participants adjacent to ``addr`` in node-ID order (a converged routing table)."""
    ring = _ring(w)
    i = w._ring_pos.get(addr)
    if i is None or len(ring) < 2:
        return []
    k = w.cfg.dht_neighbors
    out, seen = [], {i}
    for off in range(1, k + 1):
        for j in ((i + off) % len(ring), (i - off) % len(ring)):
            if j not in seen:
                seen.add(j)
                nid, (ip, port) = ring[j]
                out.append(NodeInfo(nid, ip, port))
    return out


def _hj_infohash(w: SimWorld, bot: SimBot) -> bytes:
    day = day_index(w.cfg.start_ts + w.clock + bot.clock_skew)
    ih = w._infohash_cache.get(day)
    if ih is None:
        ih = w._infohash_cache[day] = hajime_daily_infohash(w.cfg.hajime_config.encode(), day)
    return ih


def _is_seeder(w: SimWorld, host, ih: bytes) -> bool:
    if isinstance(host, BenignPeer):
        return host.seeder
    return host.infected and host.family == HJ and _hj_infohash(w, host) == ih


def _loss(w: SimWorld, asn: Optional[int], base: float) -> float:
    hour = datetime.fromtimestamp(w.cfg.start_ts + w.clock, tz=timezone.utc).hour
    keep = 1.0 - base
    for tw in w.cfg.throttle:
        if tw.asn == asn and tw.active(hour):
            keep *= 1.0 - tw.added_loss
    return 1.0 - keep


def deliver(w: SimWorld, src: tuple, dst: tuple, payload: bytes) -> Optional[bytes]:
    """Deliver one UDP request at the current clock; returns the reply or None (lost / silent)."""
    host = w.hosts.get(tuple(dst))
    draw = w.rng("loss").random()
    if host is None:
        return None
    if isinstance(host, SimBot):
        p_loss = _loss(w, host.asn, w.cfg.as_pools[host.pool].loss)
    else:
        p_loss = 0.0
    if draw < p_loss:
        return None
    if isinstance(host, SimBot):
        if not host.infected:
            return None
        return _bot_reply(w, host, payload)
    return _benign_reply(w, host, payload)


def _bot_reply(w: SimWorld, bot: SimBot, payload: bytes) -> Optional[bytes]:
    if is_hajime_frame(payload):
        if bot.family != HJ:
            return None
        try:
            op, _ = hajime_decode(payload)
        except DecodeError:
            return None
        if op == HJ_HELLO:
            return hajime_encode(HJ_KEY, bot.utp_key)
        if op == HJ_CONFIG_REQ:
            day = day_index(w.cfg.start_ts + w.clock + bot.clock_skew)
            return hajime_encode(HJ_CONFIG, bot.utp_key + b"%s:%d" % (w.cfg.hajime_config.encode(), day))
        return None
    try:
        req = decode_krpc(payload)
    except DecodeError:
        return None
    if not req.is_query:
        return None
    addr = w.address(bot)
    if bot.family == MZ:
        if req.kind is Kind.FIND_NODE:
            state = MoziBotState(bot.node_id, dht_neighbors(w, addr), MOZI_CONFIG,
                                 w.cfg.families[MZ].prefix_len)
            return encode_krpc(mozi_respond_find_node(state, req, w.rng("mozi")))
        if req.kind is Kind.ANNOUNCE_PEER:
            return None
        target = req.info_hash if req.kind is Kind.GET_PEERS else bot.node_id
        nodes = closest_nodes(dht_neighbors(w, addr), target) if req.kind is not Kind.PING else ()
        return encode_krpc(KrpcMessage(Kind.RESPONSE_NODES, req.transaction_id,
                                       sender_id=bot.node_id, nodes=nodes))
    return _dht_reply(w, bot.node_id, addr, req)


def _benign_reply(w: SimWorld, peer: BenignPeer, payload: bytes) -> Optional[bytes]:
    try:
        if is_hajime_frame(payload):
            raise DecodeError("not KRPC")
        req = decode_krpc(payload)
    except DecodeError:
        return encode_krpc(KrpcMessage(Kind.ERROR, b"\x00\x00", error_code=203,
                                       error_message="Protocol Error"))
    if not req.is_query:
        return None
    return _dht_reply(w, peer.node_id, (peer.ip, peer.port), req)


def _dht_reply(w: SimWorld, own_id: bytes, addr: tuple, req: KrpcMessage) -> Optional[bytes]:
    tid = req.transaction_id
    if req.kind is Kind.PING:
        return encode_krpc(KrpcMessage(Kind.RESPONSE_NODES, tid, sender_id=own_id))
    if req.kind is Kind.ANNOUNCE_PEER:
        return encode_krpc(KrpcMessage(Kind.RESPONSE_NODES, tid, sender_id=own_id))
    neighbors = dht_neighbors(w, addr)
    if req.kind is Kind.FIND_NODE:
        return encode_krpc(KrpcMessage(Kind.RESPONSE_NODES, tid, sender_id=own_id,
                                       nodes=closest_nodes(neighbors, req.target)))
    ih = req.info_hash
    seeders = [addr] if _is_seeder(w, w.hosts[addr], ih) else []
    for n in neighbors:
        host = w.hosts.get((n.ip, n.port))
        if host is not None and _is_seeder(w, host, ih):
            seeders.append((n.ip, n.port))
    token = hashlib.sha1(own_id + ih).digest()[:4]
    if seeders:
        return encode_krpc(KrpcMessage(Kind.RESPONSE_PEERS, tid, sender_id=own_id, token=token,
                                       peers=tuple(seeders), nodes=tuple(neighbors)))
    return encode_krpc(KrpcMessage(Kind.RESPONSE_NODES, tid, sender_id=own_id,
                                   nodes=closest_nodes(neighbors, ih)))


class SimTransport:
    """Crawler transport bound to a world: advances the world clock, then delivers."""

    def __init__(self, world: SimWorld):
        self.world = world

    @property
    def epoch_ts(self) -> int:
        return self.world.epoch_ts

    def advance(self, now: float) -> None:
        if now > self.world.clock:
            sim_run_until(self.world, now)

    def request(self, src: tuple, dst: tuple, payload: bytes, now: float) -> Optional[bytes]:
        self.advance(now)
        return deliver(self.world, src, dst, payload)

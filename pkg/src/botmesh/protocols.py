"""Wire codecs and identifier algorithms for the Hajime and Mozi families.

Both families ride on the BitTorrent mainline DHT. Mozi marks its bots with a
run of 0x38 bytes at the start of the node ID and answers bot-to-bot
``find_node`` queries with its config file one time in three. Hajime finds its
config through a daily-rotating infohash and identifies bots by the public
key exchanged during the (uTP based) download handshake.
"""

from __future__ import annotations

import enum
import hashlib
import ipaddress
import re
import socket
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, NamedTuple, Optional

NODE_ID_LEN = 20
COMPACT_NODE_LEN = 26
COMPACT_PEER_LEN = 6
UTP_KEY_LEN = 32
MOZI_PREFIX_BYTE = 0x38
MOZI_CONFIG_PROBABILITY = 1 / 3
MAX_NODES_REPLY = 8

LCG_MULT = 1103515245
LCG_INC = 12345
LCG_MOD = 2**31

DEFAULT_HAJIME_CONFIG = b"atk.mipseb"


class DecodeError(ValueError):
    pass


class InvalidPrefixLen(ValueError):
    pass


class HandshakeTimeout(Exception):
    pass


class HandshakeMalformed(Exception):
    pass


# -- bencode -----------------------------------------------------------------


def bencode(obj) -> bytes:
    out: list[bytes] = []
    _benc(obj, out)
    return b"".join(out)


def _benc(obj, out: list) -> None:
    t = type(obj)
    if t is bytes:
        out.append(b"%d:%s" % (len(obj), obj))
    elif t is dict:
        out.append(b"d")
        keys = {(k.encode() if isinstance(k, str) else k): v for k, v in obj.items()}
        for k in sorted(keys):
            _benc(k, out)
            _benc(keys[k], out)
        out.append(b"e")
    elif t is bool:
        raise TypeError("bool is not bencodable")
    elif isinstance(obj, int):
        out.append(b"i%de" % obj)
    elif isinstance(obj, (bytes, bytearray)):
        out.append(b"%d:%s" % (len(obj), bytes(obj)))
    elif isinstance(obj, str):
        _benc(obj.encode("utf-8"), out)
    elif isinstance(obj, (list, tuple)):
        out.append(b"l")
        for item in obj:
            _benc(item, out)
        out.append(b"e")
    elif isinstance(obj, dict):
        _benc(dict(obj), out)
    else:
        raise TypeError(f"cannot bencode {type(obj).__name__}")


def bdecode(data: bytes):
    """Strict decoder: canonical integers, sorted keys, no trailing bytes."""
    if not isinstance(data, (bytes, bytearray)):
        raise DecodeError("input must be bytes")
    data = bytes(data)
    try:
        value, pos = _bdec(data, 0, 0)
    except DecodeError:
        raise
    except (IndexError, ValueError):
        raise DecodeError("truncated or malformed input") from None
    if pos != len(data):
        raise DecodeError(f"trailing data at offset {pos}")
    return value


_I, _L, _D, _E = b"ilde"
_CANON_INT = re.compile(rb"0|-?[1-9][0-9]*")


def _bdec(data: bytes, pos: int, depth: int):
    if depth > 32:
        raise DecodeError("nesting too deep")
    c = data[pos]  # IndexError on truncation is mapped to DecodeError by bdecode
    if 0x30 <= c <= 0x39:
        colon = data.index(b":", pos)
        raw = data[pos:colon]
        if not raw.isdigit() or (raw[0] == 0x30 and len(raw) > 1):
            raise DecodeError(f"bad string length {raw!r}")
        start = colon + 1
        end = start + int(raw)
        if end > len(data):
            raise DecodeError("truncated string")
        return data[start:end], end
    if c == _I:
        end = data.index(b"e", pos)
        raw = data[pos + 1 : end]
        if not _CANON_INT.fullmatch(raw):
            raise DecodeError(f"non-canonical integer {raw!r}")
        return int(raw), end + 1
    if c == _L:
        pos += 1
        items = []
        while data[pos] != _E:
            item, pos = _bdec(data, pos, depth + 1)
            items.append(item)
        return items, pos + 1
    if c == _D:
        pos += 1
        d = {}
        last = None
        while data[pos] != _E:
            key, pos = _bdec(data, pos, depth + 1)
            if not isinstance(key, bytes):
                raise DecodeError("dict key must be a byte string")
            if last is not None and key <= last:
                raise DecodeError("dict keys not sorted or duplicated")
            last = key
            d[key], pos = _bdec(data, pos, depth + 1)
        return d, pos + 1
    raise DecodeError(f"unexpected byte {c:#x} at offset {pos}")


# -- KRPC messages -------------------------------------------------------------


class Kind(str, enum.Enum):
    PING = "PING"
    FIND_NODE = "FIND_NODE"
    GET_PEERS = "GET_PEERS"
    ANNOUNCE_PEER = "ANNOUNCE_PEER"
    RESPONSE_NODES = "RESPONSE_NODES"
    RESPONSE_PEERS = "RESPONSE_PEERS"
    RESPONSE_CONFIG = "RESPONSE_CONFIG"
    ERROR = "ERROR"


_QUERY_NAMES = {
    Kind.PING: b"ping",
    Kind.FIND_NODE: b"find_node",
    Kind.GET_PEERS: b"get_peers",
    Kind.ANNOUNCE_PEER: b"announce_peer",
}
_QUERY_KINDS = {v: k for k, v in _QUERY_NAMES.items()}

# fields each kind must carry / may carry; everything else must stay at its default
_REQUIRED = {
    Kind.PING: {"sender_id"},
    Kind.FIND_NODE: {"sender_id", "target"},
    Kind.GET_PEERS: {"sender_id", "info_hash"},
    Kind.ANNOUNCE_PEER: {"sender_id", "info_hash", "port", "token"},
    Kind.RESPONSE_NODES: {"sender_id"},
    Kind.RESPONSE_PEERS: {"sender_id", "token"},
    Kind.RESPONSE_CONFIG: {"sender_id", "config"},
    Kind.ERROR: {"error_code", "error_message"},
}
_OPTIONAL = {
    Kind.RESPONSE_NODES: {"nodes"},
    Kind.RESPONSE_PEERS: {"nodes", "peers"},
}
_PAYLOAD_FIELDS = ("sender_id", "target", "info_hash", "port", "token", "nodes", "peers",
                   "config", "error_code", "error_message")


class NodeInfo(NamedTuple):
    node_id: bytes
    ip: str
    port: int


@dataclass(frozen=True)
class KrpcMessage:
    kind: Kind
    transaction_id: bytes
    sender_id: Optional[bytes] = None
    target: Optional[bytes] = None
    info_hash: Optional[bytes] = None
    port: Optional[int] = None
    token: Optional[bytes] = None
    nodes: tuple = ()
    peers: tuple = ()
    config: Optional[bytes] = None
    error_code: Optional[int] = None
    error_message: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "nodes", tuple(NodeInfo(*n) for n in self.nodes))
        object.__setattr__(self, "peers", tuple((ip, port) for ip, port in self.peers))
        if len(self.transaction_id) != 2:
            raise ValueError("transaction_id must be 2 bytes")
        allowed = _REQUIRED[self.kind] | _OPTIONAL.get(self.kind, set())
        for name in _PAYLOAD_FIELDS:
            value = getattr(self, name)
            empty = value is None or value == ()
            if name in _REQUIRED[self.kind] and value is None:
                raise ValueError(f"{self.kind.value} requires {name}")
            if name not in allowed and not empty:
                raise ValueError(f"{self.kind.value} does not carry {name}")
        for name in ("sender_id", "target", "info_hash"):
            v = getattr(self, name)
            if v is not None and len(v) != NODE_ID_LEN:
                raise ValueError(f"{name} must be {NODE_ID_LEN} bytes")
        if self.port is not None and not 1 <= self.port <= 65535:
            raise ValueError("port out of range")
        for n in self.nodes:
            if len(n.node_id) != NODE_ID_LEN or not 0 <= n.port <= 65535:
                raise ValueError(f"bad node entry {n!r}")
            _ip_bytes(n.ip)
        for ip, port in self.peers:
            _ip_bytes(ip)
            if not 0 <= port <= 65535:
                raise ValueError("peer port out of range")

    @property
    def is_query(self) -> bool:
        return self.kind in _QUERY_NAMES


@lru_cache(maxsize=1 << 16)
def _ip_bytes(ip: str) -> bytes:
    # strict dotted-quad check (ipaddress) once per distinct address
    return ipaddress.IPv4Address(ip).packed


def encode_nodes(nodes) -> bytes:
    return b"".join(n.node_id + _ip_bytes(n.ip) + n.port.to_bytes(2, "big") for n in nodes)


def decode_nodes(raw: bytes) -> tuple:
    if len(raw) % COMPACT_NODE_LEN:
        raise DecodeError(f"compact node list length {len(raw)} not a multiple of 26")
    out = []
    for i in range(0, len(raw), COMPACT_NODE_LEN):
        chunk = raw[i : i + COMPACT_NODE_LEN]
        out.append(NodeInfo(chunk[:20], socket.inet_ntoa(chunk[20:24]),
                            int.from_bytes(chunk[24:26], "big")))
    return tuple(out)


def _encode_peer(ip: str, port: int) -> bytes:
    return _ip_bytes(ip) + port.to_bytes(2, "big")


def encode_krpc(m: KrpcMessage) -> bytes:
    msg: dict = {b"t": m.transaction_id}
    if m.is_query:
        args = {b"id": m.sender_id}
        if m.kind is Kind.FIND_NODE:
            args[b"target"] = m.target
        elif m.kind is Kind.GET_PEERS:
            args[b"info_hash"] = m.info_hash
        elif m.kind is Kind.ANNOUNCE_PEER:
            args.update({b"info_hash": m.info_hash, b"port": m.port, b"token": m.token})
        msg.update({b"y": b"q", b"q": _QUERY_NAMES[m.kind], b"a": args})
    elif m.kind is Kind.ERROR:
        msg.update({b"y": b"e", b"e": [m.error_code, m.error_message.encode("utf-8")]})
    else:
        r = {b"id": m.sender_id}
        if m.kind is Kind.RESPONSE_NODES:
            r[b"nodes"] = encode_nodes(m.nodes)
        elif m.kind is Kind.RESPONSE_PEERS:
            r[b"token"] = m.token
            r[b"values"] = [_encode_peer(ip, port) for ip, port in m.peers]
            if m.nodes:
                r[b"nodes"] = encode_nodes(m.nodes)
        else:
            r[b"config"] = m.config
        msg.update({b"y": b"r", b"r": r})
    return bencode(msg)


def _get(d: dict, key: bytes, typ, what: str):
    if key not in d:
        raise DecodeError(f"missing {what}")
    v = d[key]
    if not isinstance(v, typ):
        raise DecodeError(f"{what} has wrong type")
    return v


def _node_id(d: dict, key: bytes, what: str) -> bytes:
    v = _get(d, key, bytes, what)
    if len(v) != NODE_ID_LEN:
        raise DecodeError(f"{what} must be 20 bytes")
    return v


def decode_krpc(data: bytes) -> KrpcMessage:
    msg = bdecode(data)
    if not isinstance(msg, dict):
        raise DecodeError("top level must be a dictionary")
    tid = _get(msg, b"t", bytes, "transaction id")
    if len(tid) != 2:
        raise DecodeError("transaction id must be 2 bytes")
    y = _get(msg, b"y", bytes, "message type")
    try:
        if y == b"q":
            name = _get(msg, b"q", bytes, "query name")
            if name not in _QUERY_KINDS:
                raise DecodeError(f"unsupported query {name!r}")
            kind = _QUERY_KINDS[name]
            a = _get(msg, b"a", dict, "arguments")
            kw = {"sender_id": _node_id(a, b"id", "id")}
            if kind is Kind.FIND_NODE:
                kw["target"] = _node_id(a, b"target", "target")
            elif kind is Kind.GET_PEERS:
                kw["info_hash"] = _node_id(a, b"info_hash", "info_hash")
            elif kind is Kind.ANNOUNCE_PEER:
                kw["info_hash"] = _node_id(a, b"info_hash", "info_hash")
                kw["port"] = _get(a, b"port", int, "port")
                kw["token"] = _get(a, b"token", bytes, "token")
            return KrpcMessage(kind, tid, **kw)
        if y == b"r":
            r = _get(msg, b"r", dict, "response body")
            sender = _node_id(r, b"id", "id")
            nodes = decode_nodes(_get(r, b"nodes", bytes, "nodes")) if b"nodes" in r else ()
            if b"config" in r:
                return KrpcMessage(Kind.RESPONSE_CONFIG, tid, sender_id=sender,
                                   config=_get(r, b"config", bytes, "config"))
            if b"values" in r:
                peers = []
                for v in _get(r, b"values", list, "values"):
                    if not isinstance(v, bytes) or len(v) != COMPACT_PEER_LEN:
                        raise DecodeError("bad compact peer")
                    peers.append((socket.inet_ntoa(v[:4]), int.from_bytes(v[4:], "big")))
                return KrpcMessage(Kind.RESPONSE_PEERS, tid, sender_id=sender,
                                   token=_get(r, b"token", bytes, "token"),
                                   peers=tuple(peers), nodes=nodes)
            return KrpcMessage(Kind.RESPONSE_NODES, tid, sender_id=sender, nodes=nodes)
        if y == b"e":
            e = _get(msg, b"e", list, "error body")
            if len(e) != 2 or not isinstance(e[0], int) or not isinstance(e[1], bytes):
                raise DecodeError("error body must be [int, bytes]")
            try:
                text = e[1].decode("utf-8")
            except UnicodeDecodeError:
                raise DecodeError("error message is not UTF-8") from None
            return KrpcMessage(Kind.ERROR, tid, error_code=e[0], error_message=text)
    except ValueError as exc:
        if isinstance(exc, DecodeError):
            raise
        raise DecodeError(str(exc)) from exc
    raise DecodeError(f"unknown message type {y!r}")


def xor_distance(a: bytes, b: bytes) -> int:
    return int.from_bytes(a, "big") ^ int.from_bytes(b, "big")


def closest_nodes(nodes, target: bytes, k: int = MAX_NODES_REPLY) -> list:
    return sorted(nodes, key=lambda n: (xor_distance(n.node_id, target), n.node_id))[:k]


# -- Mozi ----------------------------------------------------------------------


@dataclass(frozen=True)
class MoziIdParams:
    time: int
    pid: int
    ppid: int
    prefix_len: int = 6


def lcg_bytes(seed: int, n: int) -> bytes:
    """glibc-TYPE_0-like LCG; each step yields bits 16..23 of the state."""
    x = seed % LCG_MOD
    out = bytearray()
    for _ in range(n):
        x = (x * LCG_MULT + LCG_INC) % LCG_MOD
        out.append((x >> 16) & 0xFF)
    return bytes(out)


def mozi_generate_id(p: MoziIdParams) -> bytes:
    if p.prefix_len not in (6, 8):
        raise InvalidPrefixLen(f"prefix_len must be 6 or 8, got {p.prefix_len}")
    seed = p.time ^ (p.ppid ^ p.pid)
    return bytes([MOZI_PREFIX_BYTE]) * p.prefix_len + lcg_bytes(seed, NODE_ID_LEN - p.prefix_len)


def mozi_is_bot_id(node_id: Optional[bytes], prefix_len: int = 6) -> bool:
    if node_id is None or len(node_id) < prefix_len:
        return False
    return node_id[:prefix_len] == bytes([MOZI_PREFIX_BYTE]) * prefix_len


@dataclass
class MoziBotState:
    node_id: bytes
    peers: list = field(default_factory=list)
    config: bytes = b""
    prefix_len: int = 6


def mozi_respond_find_node(state: MoziBotState, req: KrpcMessage, rng) -> KrpcMessage:
    """Answer a find_node the way a Mozi bot does.

    Peers carrying the Mozi prefix get the config instead of nodes with
    probability 1/3 per request; everyone else gets a normal node list.
    """
    if req.kind is not Kind.FIND_NODE:
        raise ValueError("mozi_respond_find_node expects a FIND_NODE request")
    if mozi_is_bot_id(req.sender_id, state.prefix_len) and rng.random() < MOZI_CONFIG_PROBABILITY:
        return KrpcMessage(Kind.RESPONSE_CONFIG, req.transaction_id,
                           sender_id=state.node_id, config=state.config)
    return KrpcMessage(Kind.RESPONSE_NODES, req.transaction_id, sender_id=state.node_id,
                       nodes=tuple(closest_nodes(state.peers, req.target)))


# -- Hajime --------------------------------------------------------------------


def day_index(unix_seconds: float) -> int:
    return int(unix_seconds // 86400)


def hajime_daily_infohash(config_name: bytes, day: int) -> bytes:
    return hashlib.sha1(config_name + b"-" + str(day).encode("ascii")).digest()


def key_fingerprint(utp_key: bytes) -> str:
    """40-hex identity for a Hajime bot, so it fits the observation bot_id column."""
    return hashlib.sha1(utp_key).hexdigest()


# Minimal application framing on top of the (unmodelled) uTP transport.
HJ_MAGIC = b"HJ\x01"
HJ_HELLO = 0x01
HJ_KEY = 0x02
HJ_CONFIG_REQ = 0x03
HJ_CONFIG = 0x04


def hajime_encode(op: int, body: bytes = b"") -> bytes:
    return HJ_MAGIC + bytes([op]) + body


def hajime_decode(data: bytes) -> tuple[int, bytes]:
    if len(data) < len(HJ_MAGIC) + 1 or not data.startswith(HJ_MAGIC):
        raise DecodeError("not a Hajime frame")
    op = data[len(HJ_MAGIC)]
    body = data[len(HJ_MAGIC) + 1 :]
    if op == HJ_KEY and len(body) != UTP_KEY_LEN:
        raise DecodeError("key frame must carry 32 bytes")
    if op == HJ_CONFIG and len(body) < UTP_KEY_LEN:
        raise DecodeError("config frame too short")
    if op not in (HJ_HELLO, HJ_KEY, HJ_CONFIG_REQ, HJ_CONFIG):
        raise DecodeError(f"unknown Hajime op {op}")
    return op, body


def is_hajime_frame(data: bytes) -> bool:
    return data.startswith(HJ_MAGIC)


@dataclass(frozen=True)
class HajimeSession:
    peer: tuple
    utp_key: bytes
    config_day: int

    @property
    def bot_id(self) -> str:
        return key_fingerprint(self.utp_key)


Exchange = Callable[[bytes], Optional[bytes]]


def hajime_handshake(exchange: Exchange, peer, config_day: int) -> HajimeSession:
    """Run the key exchange against ``peer``; ``exchange`` sends one frame and returns the reply."""
    reply = exchange(hajime_encode(HJ_HELLO))
    if reply is None:
        raise HandshakeTimeout(f"no handshake reply from {peer}")
    try:
        op, body = hajime_decode(reply)
    except DecodeError as exc:
        raise HandshakeMalformed(str(exc)) from exc
    if op != HJ_KEY:
        raise HandshakeMalformed(f"expected key frame, got op {op}")
    return HajimeSession(tuple(peer), body, config_day)


def hajime_fetch_config(exchange: Exchange, peer) -> tuple[bytes, bytes]:
    """Request the config over an established session; returns (utp_key, config)."""
    reply = exchange(hajime_encode(HJ_CONFIG_REQ))
    if reply is None:
        raise HandshakeTimeout(f"no config reply from {peer}")
    try:
        op, body = hajime_decode(reply)
    except DecodeError as exc:
        raise HandshakeMalformed(str(exc)) from exc
    if op != HJ_CONFIG:
        raise HandshakeMalformed(f"expected config frame, got op {op}")
    return body[:UTP_KEY_LEN], body[UTP_KEY_LEN:]

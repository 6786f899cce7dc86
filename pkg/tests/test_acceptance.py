"""End-to-end acceptance checks, one test per criterion.

Each check returns ``(ok, detail)``; the runner times it, prints one PASS/FAIL
line and fails the test when the tolerance or the wall-clock budget is missed.
"""

import filecmp
import ipaddress
import itertools
import math
import random
import sqlite3
import time
import traceback
from collections import defaultdict

import pytest

from botmesh.analytics import (
    Mode,
    Verdict,
    bincount,
    churn_daily,
    classify_shared_ip,
    daily_overlap,
    maxcount_as,
    overlap_verdicts,
    reply_ratio,
)
from botmesh.cli import main
from botmesh.core import Event, Observation, bot_key, enrich_all
from botmesh.crawler import Crawler, CrawlerConfig, retry_schedule, run_crawlers
from botmesh.protocols import (
    HJ_CONFIG_REQ,
    Kind,
    KrpcMessage,
    NodeInfo,
    bdecode,
    bencode,
    decode_krpc,
    encode_krpc,
    hajime_encode,
)
from botmesh.simnet import (
    FamilyParams,
    SimTransport,
    ThrottleWindow,
    deliver,
    ground_truth,
    ground_truth_ids,
    script_reassign,
    script_reboot,
    sim_init,
    sim_run_until,
)

from conftest import CONFIGS, DAY_MS, T0, make_cfg, one_pool

pytestmark = pytest.mark.acceptance

HOUR_S = 3600
SUCCESS = (Event.REPLY_CONFIG, Event.REPLY_NODES, Event.HANDSHAKE_OK)


def run_check(criterion, n, title, budget, fn):
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # report as a FAIL line rather than a bare traceback
        ok, detail = False, f"raised {exc!r}"
        traceback.print_exc()
    criterion(n, title, ok, detail, time.perf_counter() - t0, budget)


def crawl_world(w, families=("HJ", "MZ"), until=600.0, **cfg):
    tr = SimTransport(w)
    outs = {f: [] for f in families}
    crawlers = [Crawler(CrawlerConfig(family=f, crawler_id=f.lower(), **cfg), tr, outs[f].append,
                        address=("198.51.100.1", 7000 + i), bootstrap=w.bootstrap)
                for i, f in enumerate(families)]
    run_crawlers(crawlers, until)
    return crawlers, outs


def within(x, p, n, k=5.0):
    return abs(x - p) <= k * math.sqrt(p * (1 - p) / n)


# -- 1 ---------------------------------------------------------------------------


def test_c01_retry_contract(criterion):
    def check():
        s = retry_schedule(5)
        return s == [2, 4, 8, 16, 32] and sum(s) == 62, f"schedule={s} total={sum(s)}s"

    run_check(criterion, 1, "retry contract", 1, check)


# -- 2 ---------------------------------------------------------------------------


def test_c02_mozi_config_probability(criterion):
    def check():
        w = sim_init(make_cfg([one_pool(1, hj_share=0.0)]))
        bot = w.bots[0]
        dst = w.address(bot)
        sender = b"\x38" * 8 + bytes(12)
        n, configs = 30_000, 0
        for i in range(n):
            req = KrpcMessage(Kind.FIND_NODE, i.to_bytes(2, "big") if i < 65536 else b"zz",
                              sender_id=sender, target=bytes(20))
            reply = decode_krpc(deliver(w, ("198.51.100.1", 6881), dst, encode_krpc(req)))
            configs += reply.kind is Kind.RESPONSE_CONFIG
        frac = configs / n
        return abs(frac - 1 / 3) <= 0.015, f"config fraction {frac:.4f} over {n} requests (target 0.3333 +/- 0.015)"

    run_check(criterion, 2, "Mozi config probability", 10, check)


# -- 3 ---------------------------------------------------------------------------


def test_c03_crawler_completeness(criterion):
    def check():
        w = sim_init(make_cfg([one_pool(1000, prefix="10.0.0.0/16")], benign_peers=50))
        crawlers, _ = crawl_world(w, until=600.0)
        parts = []
        ok = True
        for c in crawlers:
            truth = ground_truth_ids(w, w.clock, c.cfg.family)
            found = c.state.identities()
            ok &= found == truth
            parts.append(f"{c.cfg.family} {len(found & truth)}/{len(truth)} extra={len(found - truth)}")
        return ok, ", ".join(parts)

    run_check(criterion, 3, "crawler completeness by t=600s", 30, check)


# -- 4 ---------------------------------------------------------------------------


def _sql_oracle(raw, pools):
    """Brute-force BinCount / MaxCount_AS in SQL over the raw log, with its own prefix lookup."""
    db = sqlite3.connect(":memory:")
    db.execute("CREATE TABLE pfx (lo INTEGER, hi INTEGER, plen INTEGER, asn INTEGER)")
    db.execute("CREATE TABLE obs (ts INTEGER, botnet TEXT, ip TEXT, ipn INTEGER, event TEXT)")
    for p in pools:
        net = ipaddress.IPv4Network(p.prefix)
        db.execute("INSERT INTO pfx VALUES (?,?,?,?)",
                   (int(net.network_address), int(net.broadcast_address), net.prefixlen, p.asn))
    db.executemany("INSERT INTO obs VALUES (?,?,?,?,?)",
                   [(o.ts, o.botnet, o.ip, int(ipaddress.IPv4Address(o.ip)), o.event.value) for o in raw])
    db.execute("""CREATE VIEW act AS
        SELECT ts, botnet, ip,
               COALESCE((SELECT asn FROM pfx WHERE ipn BETWEEN lo AND hi ORDER BY plen DESC LIMIT 1), 0) AS asn
        FROM obs WHERE event IN ('REPLY_CONFIG','REPLY_NODES','HANDSHAKE_OK')""")

    def query(lo, hi, fam):
        where = "ts >= ? AND ts < ? AND (? IS NULL OR botnet = ?)"
        args = (lo, hi, fam, fam)
        b = db.execute(f"SELECT COUNT(DISTINCT ip) FROM act WHERE {where}", args).fetchone()[0]
        per_as = dict(db.execute(f"""SELECT asn, MAX(c) FROM (
                SELECT asn, ts / 60000 AS snap, COUNT(DISTINCT ip) AS c FROM act WHERE {where}
                GROUP BY asn, snap) GROUP BY asn""", args).fetchall())
        return b, sum(per_as.values()), per_as

    return query


def test_c04_metric_oracle_equivalence(criterion):
    def check():
        mismatches, windows, violations = 0, 0, 0
        for seed in range(50):
            r = random.Random(seed)
            fams = {"HJ": FamilyParams(mean_uptime_s=1800, reinfection_delay_s=300, scan_mean_s=600),
                    "MZ": FamilyParams(mean_uptime_s=3600, persistent=True, clock_reset_prob=0.2)}
            pools = [one_pool(120, nat_group_size=r.randint(1, 3), loss=r.uniform(0, 0.3),
                              reassign_mean_s=r.choice([0.0, 900.0])),
                     one_pool(80, asn=3320, country="DE", prefix="10.20.0.0/20", loss=r.uniform(0, 0.3),
                              reassign_mean_s=r.choice([0.0, 1800.0]))]
            w = sim_init(make_cfg(pools, phi=r.random(), families=fams, seed=seed, benign_peers=20))
            _, outs = crawl_world(w, until=1200.0)
            raw = outs["HJ"] + outs["MZ"]
            enriched = enrich_all(raw, w.as_table())
            oracle = _sql_oracle(raw, pools)
            start = w.ts_ms(0)
            spans = [(start, start + 1_200_000)] + [(start + k * 300_000, start + (k + 1) * 300_000) for k in range(4)]
            spans.append(tuple(sorted(r.sample(range(start, start + 1_200_000), 2))))
            for (lo, hi), fam in itertools.product(spans, (None, "HJ", "MZ")):
                windows += 1
                b = bincount(enriched, (lo, hi), fam)
                m, per_as = maxcount_as(enriched, (lo, hi), family=fam)
                if (b, m, per_as) != oracle(lo, hi, fam):
                    mismatches += 1
                violations += m > b
        return mismatches == 0 and violations == 0, \
            f"50 worlds, {windows} windows: {mismatches} mismatches, {violations} maxcount>bincount"

    run_check(criterion, 4, "metric oracle equivalence", 120, check)


# -- 5 ---------------------------------------------------------------------------


def test_c05_maxcount_robustness(criterion):
    def check():
        w = sim_init(make_cfg([one_pool(1, hj_share=0.0)], benign_peers=20))
        script_reassign(w, 0, 1800)
        _, outs = crawl_world(w, ("MZ",), until=3600.0)
        e = enrich_all(outs["MZ"], w.as_table())
        b, (m, _) = bincount(e), maxcount_as(e)
        ids = {o.bot_id for o in e if o.event in SUCCESS}
        return (b, m, len(ids)) == (2, 1, 1), f"one device, {len(ids)} id: BinCount={b} MaxCount_AS={m}"

    run_check(criterion, 5, "MaxCount robustness to reassignment", 1, check)


# -- 6 ---------------------------------------------------------------------------


def test_c06_overlap_heuristics(criterion):
    def check():
        notes, ok = [], True
        # NAT sharing from the simulator: mixed-family NAT groups must come out SHARING
        w = sim_init(make_cfg([one_pool(40, nat_group_size=2)], benign_peers=20))
        _, outs = crawl_world(w, until=1800.0)
        verdicts = overlap_verdicts(enrich_all(outs["HJ"] + outs["MZ"], w.as_table()))
        mixed = {g.ip for g in w.groups if len({w.bots[d].family for d in g.members}) == 2}
        got = {v.ip: v.verdict for v in verdicts}
        nat_ok = bool(mixed) and set(got) == mixed and set(got.values()) == {Verdict.SHARING}
        ok &= nat_ok
        notes.append(f"NAT: {len(mixed)} mixed groups -> {sorted(v.value for v in set(got.values()))}")
        h = 3_600_000
        takeover = classify_shared_ip("x", [(T0, "HJ")] + [(T0 + 3 * h + i * 60_000, "MZ") for i in range(10)])
        late = classify_shared_ip("x", [(T0, "HJ")] + [(T0 + 7 * h + i * 60_000, "MZ") for i in range(10)])
        ok &= takeover.verdict is Verdict.POSSIBLE_TAKEOVER and late.verdict is Verdict.INCONCLUSIVE
        notes.append(f"+3h {takeover.verdict.value}, +7h {late.verdict.value}")
        # every pattern over 6 slots (two share one snapshot) with none/HJ/MZ/both per slot
        slots = [T0, T0 + 20_000, T0 + 90_000, T0 + 2 * h, T0 + 5 * h, T0 + 12 * h]
        checked = bad = 0
        for pattern in itertools.product(range(4), repeat=len(slots)):
            ev = [(ts, f) for ts, p in zip(slots, pattern) for f in (("HJ",), ("MZ",), ("HJ", "MZ"))[p - 1] if p]
            if len({f for _, f in ev}) < 2:
                continue
            snaps = defaultdict(set)
            for ts, f in ev:
                snaps[ts // 60_000].add(f)
            if any(len(s) == 2 for s in snaps.values()):
                checked += 1
                bad += classify_shared_ip("x", ev).verdict is Verdict.POSSIBLE_TAKEOVER
        ok &= checked > 0 and bad == 0
        notes.append(f"exhaustive: {bad}/{checked} simultaneous traces called takeover")
        return ok, "; ".join(notes)

    run_check(criterion, 6, "overlap heuristics", 5, check)


# -- 7 ---------------------------------------------------------------------------


def _overlap_world(phi):
    fams = {"HJ": FamilyParams(mean_uptime_s=14400, reinfection_delay_s=1800, scan_mean_s=1800),
            "MZ": FamilyParams(mean_uptime_s=28800, scan_mean_s=1800)}
    pools = [one_pool(300), one_pool(4, asn=3320, country="DE", prefix="10.20.0.0/24", nat_group_size=2)]
    return sim_init(make_cfg(pools, phi=phi, families=fams, seed=21, benign_peers=30))


def test_c07_disjoint_population_overlap(criterion):
    def check():
        res = {}
        nat_only = True
        for phi in (0.0, 1.0):
            w = _overlap_world(phi)
            _, outs = crawl_world(w, until=2 * 86400.0, tfreq_s=900, dfreq_s=1800, ttimeout_s=2700,
                                  dtimeout_s=3600)
            h, m = (enrich_all(outs[f], w.as_table()) for f in ("HJ", "MZ"))
            res[phi] = [v for _, _, v in daily_overlap(h, m).rows]
            if phi == 0.0:
                shared_nat = {g.ip for g in w.groups if len(g.members) > 1}
                hj = {e.ip for e in h if e.event in SUCCESS}
                mz = {e.ip for e in m if e.event in SUCCESS}
                nat_only = (hj & mz) <= shared_nat
        lo, hi = res[0.0], res[1.0]
        ok = (len(lo) == len(hi) == 2 and max(lo) < 1.0 and nat_only and min(hi) > 0
              and min(hi) > 10 * max(lo))
        return ok, (f"phi=0 daily {[round(v, 3) for v in lo]}% (NAT-only={nat_only}); "
                    f"phi=1 daily {[round(v, 2) for v in hi]}%")

    run_check(criterion, 7, "disjoint-population overlap", 120, check)


# -- 8 ---------------------------------------------------------------------------


def _synthetic_trace(r):
    n_days = r.randint(1, 6)
    keys = [f"{k:040x}" for k in range(r.randint(1, 12))]
    out = []
    for _ in range(r.randint(1, 150)):
        out.append(Observation(T0 + r.randrange(n_days * DAY_MS), r.choice(["HJ", "MZ"]),
                               f"10.1.0.{r.randint(1, 5)}", 6881, r.choice(keys), "REPLY_CONFIG"))
    # boundary cases: activity exactly at midnight and exactly 24 h before a day
    out.append(Observation(T0, "MZ", "10.1.0.9", 6881, keys[0], "REPLY_NODES"))
    return enrich_all(out, None)


def test_c08_churn_accounting(criterion):
    def check():
        r = random.Random(8)
        bad = 0
        for _ in range(300):
            rows = _synthetic_trace(r)
            first, active = {}, defaultdict(set)
            for e in rows:
                k = bot_key(e)
                first[k] = min(first.get(k, e.ts), e.ts)
                active[(e.botnet, e.ts // DAY_MS * DAY_MS)].add(k)
            for c in churn_daily(rows):
                day = c.day_ts * 1000
                keys = active[(c.family, day)]
                prev = sum(1 for k in keys if day - DAY_MS < first[k] < day)
                bad += c.total != c.stable + c.births + prev or c.carryover != prev
        # scripted Mozi reboots: each one is a death of the old id and a birth of the new one
        fams = {"HJ": FamilyParams(), "MZ": FamilyParams(persistent=True)}
        w = sim_init(make_cfg([one_pool(40, hj_share=0.0)], benign_peers=20, families=fams, seed=5))
        rr = random.Random(1)
        for d in range(3):
            for dev in rr.sample(range(40), 8):
                script_reboot(w, dev, d * 86400 + rr.uniform(2 * 3600, 22 * 3600))
        truth = []
        tr = SimTransport(w)
        out = []
        c = Crawler(CrawlerConfig(family="MZ", tfreq_s=900, dfreq_s=900, ttimeout_s=2700, dtimeout_s=3600),
                    tr, out.append, bootstrap=w.bootstrap)
        for d in range(3):
            run_crawlers([c], (d + 1) * 86400.0)
            tr.advance((d + 1) * 86400.0 - 1)
            truth.append(len(ground_truth(w, w.clock, "MZ")))
        days = churn_daily(enrich_all(out, w.as_table()), "MZ")
        middle = days[1:-1]
        paired = bool(middle) and all(x.births == x.deaths == 8 for x in middle)
        no_drift = len(set(truth)) == 1 and len({x.total for x in days}) == 1
        ok = bad == 0 and paired and no_drift
        return ok, (f"300 synthetic traces, {bad} conservation errors; reboot scenario births/deaths "
                    f"{[(x.births, x.deaths) for x in days]}, live population {truth}")

    run_check(criterion, 8, "churn accounting", 10, check)


# -- 9 ---------------------------------------------------------------------------


def test_c09_reply_ratio_throttling(criterion):
    def check():
        base, added = 0.2, 0.8
        fams = {"HJ": FamilyParams(), "MZ": FamilyParams(persistent=True)}
        pools = [one_pool(100, hj_share=1.0, loss=base),
                 one_pool(100, asn=3320, country="DE", prefix="10.20.0.0/16", hj_share=1.0, loss=base)]
        cfg = dict(families=fams, benign_peers=20, throttle=[ThrottleWindow(4134, 2, 4, added)])

        # packet level: one config request per draw, inside vs outside the window
        w = sim_init(make_cfg(pools, **cfg))
        bot = next(b for b in w.bots if b.asn == 4134)
        frame = hajime_encode(HJ_CONFIG_REQ)
        n = 20_000
        rates = []
        for t in (1.5 * HOUR_S, 2.5 * HOUR_S):
            sim_run_until(w, t)
            rates.append(sum(deliver(w, ("198.51.100.1", 6881), w.address(bot), frame) is not None
                             for _ in range(n)) / n)
        packet_ok = within(rates[0], 1 - base, n) and within(rates[1], (1 - base) * (1 - added), n)

        # crawler level: each probe gets nretry+1 attempts, so a probe fails only if all are lost
        w = sim_init(make_cfg(pools, **cfg))
        _, outs = crawl_world(w, ("HJ",), until=6 * HOUR_S)
        rows = reply_ratio(enrich_all(outs["HJ"], w.as_table()), 3600, Mode.CONFIG_ONLY, by="asn").rows
        attempts = defaultdict(int)
        for o in enrich_all(outs["HJ"], w.as_table()):
            if o.bot_id and o.event in (Event.REPLY_CONFIG, Event.TIMEOUT, Event.PROTOCOL_ERROR):
                attempts[(o.ts // 1000 // 3600 * 3600, f"HJ/{o.asn}")] += 1
        start = w.epoch_ts
        in_win = {start + 2 * HOUR_S, start + 3 * HOUR_S}
        tries = 1 + CrawlerConfig(family="HJ").nretry
        p_out = 1 - base**tries
        p_in = 1 - (1 - (1 - base) * (1 - added)) ** tries
        # a probe's outcome is stamped when it ends, up to sum(retry_schedule) later, so the
        # bucket right after the window still carries failures of probes launched inside it
        spill = start + 4 * HOUR_S
        pooled = defaultdict(lambda: [0.0, 0])
        for ts, g, v in rows:
            if ts == spill:
                continue
            key = (g, ts in in_win)
            pooled[key][0] += v * attempts[(ts, g)]
            pooled[key][1] += attempts[(ts, g)]
        ratio = {k: s / n_ for k, (s, n_) in pooled.items()}
        n_in = pooled[("HJ/4134", True)][1]
        checks = {
            "throttled in": within(ratio[("HJ/4134", True)], p_in, n_in),
            "throttled out": within(ratio[("HJ/4134", False)], p_out, pooled[("HJ/4134", False)][1]),
            "other in": within(ratio[("HJ/3320", True)], p_out, pooled[("HJ/3320", True)][1]),
            "other out": within(ratio[("HJ/3320", False)], p_out, pooled[("HJ/3320", False)][1]),
        }
        factor = ratio[("HJ/4134", True)] / ratio[("HJ/4134", False)]
        ok = packet_ok and all(checks.values())
        return ok, (f"packet success {rates[0]:.3f}->{rates[1]:.3f} (configured x{1 - added:.2f}); "
                    f"probe ratio AS4134 {ratio[('HJ/4134', False)]:.4f}->{ratio[('HJ/4134', True)]:.4f} "
                    f"(x{factor:.3f}, expected x{p_in / p_out:.3f}, n={n_in}); "
                    f"AS3320 {ratio[('HJ/3320', False)]:.4f}/{ratio[('HJ/3320', True)]:.4f}; "
                    f"failed: {[k for k, v in checks.items() if not v] or 'none'}")

    run_check(criterion, 9, "reply-ratio throttling", 60, check)


# -- 10 --------------------------------------------------------------------------


def _pipeline(root, capsys):
    crawlers = sorted(CONFIGS.glob("crawler_*.toml"))
    steps = [
        ["sim", "--config", CONFIGS / "sim.conf", "--out", root / "sim", "--seed", 7],
        ["crawl", "--sim-config", CONFIGS / "sim.conf", *[x for c in crawlers for x in ("--crawler", c)],
         "--duration", 3600, "--out", root / "crawl", "--seed", 7],
        ["analyze", "--logs", root / "crawl", "--as-table", root / "crawl" / "as_table.csv",
         "--out", root / "analysis"],
        ["report", "--analysis", root / "analysis", "--out", root / "report"],
    ]
    for argv in steps:
        code = main([str(a) for a in argv])
        if code:
            raise RuntimeError(f"{argv[0]} exited {code}: {capsys.readouterr().err.strip()}")


def _tree_diff(a, b):
    cmp = filecmp.dircmp(a, b)
    diffs = cmp.left_only + cmp.right_only + cmp.funny_files
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    diffs += mismatch + errors
    for d in cmp.common_dirs:
        diffs += [f"{d}/{x}" for x in _tree_diff(a / d, b / d)]
    return diffs


def test_c10_determinism(criterion, tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("BOTMESH_SEED", raising=False)
    monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)

    def check():
        for run in ("run1", "run2"):
            _pipeline(tmp_path / run, capsys)
        files = sum(1 for p in (tmp_path / "run1").rglob("*") if p.is_file())
        diffs = _tree_diff(tmp_path / "run1", tmp_path / "run2")
        return files > 20 and not diffs, f"{files} files per tree, {len(diffs)} differ {diffs[:5]}"

    run_check(criterion, 10, "pipeline determinism", 180, check)


# -- 11 --------------------------------------------------------------------------

BENCODE_VECTORS = [
    (b"4:spam", b"spam"),
    (b"0:", b""),
    (b"i3e", 3),
    (b"i-3e", -3),
    (b"i0e", 0),
    (b"l4:spam4:eggse", [b"spam", b"eggs"]),
    (b"d3:cow3:moo4:spam4:eggse", {b"cow": b"moo", b"spam": b"eggs"}),
    (b"d4:spaml1:a1:bee", {b"spam": [b"a", b"b"]}),
    (b"le", []),
    (b"de", {}),
]


def _random_messages(n, seed=11):
    r = random.Random(seed)
    ids = [r.randbytes(20) for _ in range(512)]
    ips = [str(ipaddress.IPv4Address(r.getrandbits(32))) for _ in range(512)]
    tids = [r.randbytes(2) for _ in range(256)]

    def nodes():
        return tuple(NodeInfo(r.choice(ids), r.choice(ips), r.randrange(65536)) for _ in range(r.randrange(9)))

    makers = [
        lambda t: KrpcMessage(Kind.PING, t, sender_id=r.choice(ids)),
        lambda t: KrpcMessage(Kind.FIND_NODE, t, sender_id=r.choice(ids), target=r.choice(ids)),
        lambda t: KrpcMessage(Kind.GET_PEERS, t, sender_id=r.choice(ids), info_hash=r.choice(ids)),
        lambda t: KrpcMessage(Kind.ANNOUNCE_PEER, t, sender_id=r.choice(ids), info_hash=r.choice(ids),
                              port=r.randint(1, 65535), token=r.randbytes(r.randrange(9))),
        lambda t: KrpcMessage(Kind.RESPONSE_NODES, t, sender_id=r.choice(ids), nodes=nodes()),
        lambda t: KrpcMessage(Kind.RESPONSE_PEERS, t, sender_id=r.choice(ids), token=r.randbytes(4),
                              peers=tuple((r.choice(ips), r.randrange(65536)) for _ in range(r.randint(1, 5))),
                              nodes=nodes()),
        lambda t: KrpcMessage(Kind.RESPONSE_CONFIG, t, sender_id=r.choice(ids), config=r.randbytes(r.randrange(80))),
        lambda t: KrpcMessage(Kind.ERROR, t, error_code=r.choice([201, 202, 203, 204]),
                              error_message=r.choice(["Generic Error", "Server Error", "Protocol Error", "x"])),
    ]
    return [r.choice(makers)(r.choice(tids)) for _ in range(n)]


def test_c11_codec_soundness(criterion):
    from test_protocols import GOLDEN

    from conftest import TESTDATA

    msgs = _random_messages(100_000)  # input generation is not part of the timed round trip

    def check():
        broken = sum(decode_krpc(encode_krpc(m)) != m for m in msgs)
        kinds = len({m.kind for m in msgs})
        golden_bad = [name for name, m in GOLDEN.items()
                      if encode_krpc(m) != (TESTDATA / "krpc" / f"{name}.bin").read_bytes()]
        vec_bad = [raw for raw, obj in BENCODE_VECTORS if bencode(obj) != raw or bdecode(raw) != obj]
        ok = broken == 0 and kinds == 8 and not golden_bad and not vec_bad
        return ok, (f"{len(msgs)} messages over {kinds} kinds, {broken} round-trip failures; "
                    f"golden mismatches {golden_bad}; bencode vector mismatches {vec_bad}")

    run_check(criterion, 11, "codec soundness", 10, check)

#!/usr/bin/env python3
"""Daily IP overlap between the two families as the shared-vulnerability fraction phi varies.

At phi=0 no device can host both families, so any overlap comes from NAT
groups that put one bot of each family behind one address. Verdict counts
show how the sharing and takeover heuristics label the shared addresses.

    python scripts/overlap_sweep.py --phi 0 0.25 0.5 1 --days 2
"""

import argparse
import sys
from collections import Counter

from botmesh.analytics import daily_overlap, overlap_verdicts
from botmesh.core import enrich_all
from botmesh.crawler import Crawler, CrawlerConfig, run_crawlers
from botmesh.simnet import AsPool, FamilyParams, SimConfig, SimTransport, sim_init

# slower tracking keeps multi-day runs short; overlap is a per-day set measure
CRAWL = dict(tfreq_s=900, dfreq_s=1800, ttimeout_s=2700, dtimeout_s=3600)


def run(phi: float, days: float, devices: int, nat_devices: int, seed: int):
    fams = {"HJ": FamilyParams(mean_uptime_s=14400, reinfection_delay_s=1800, scan_mean_s=1800),
            "MZ": FamilyParams(mean_uptime_s=28800, scan_mean_s=1800)}
    pools = [AsPool(4134, "CN", "10.0.0.0/16", devices),
             AsPool(3320, "DE", "10.20.0.0/22", nat_devices, nat_group_size=2)]
    w = sim_init(SimConfig(seed=seed, phi=phi, as_pools=pools, families=fams, benign_peers=30).validate())
    tr = SimTransport(w)
    outs = {"HJ": [], "MZ": []}
    crawlers = [Crawler(CrawlerConfig(family=f, crawler_id=f.lower(), **CRAWL), tr, outs[f].append,
                        address=("198.51.100.1", 7000 + i), bootstrap=w.bootstrap)
                for i, f in enumerate(outs)]
    run_crawlers(crawlers, days * 86400)
    h, m = (enrich_all(outs[f], w.as_table()) for f in ("HJ", "MZ"))
    daily = [round(v, 2) for _, _, v in daily_overlap(h, m).rows]
    verdicts = Counter(v.verdict.value for v in overlap_verdicts(h + m))
    return daily, verdicts


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--phi", type=float, nargs="+", default=[0.0, 0.25, 0.5, 1.0])
    p.add_argument("--days", type=float, default=2.0)
    p.add_argument("--devices", type=int, default=300)
    p.add_argument("--nat-devices", type=int, default=4, help="devices placed in NAT groups of two")
    p.add_argument("--seed", type=int, default=21)
    args = p.parse_args(argv)

    print(f"{'phi':>5}  {'daily overlap %':<24} verdicts")
    for phi in args.phi:
        daily, verdicts = run(phi, args.days, args.devices, args.nat_devices, args.seed)
        print(f"{phi:>5.2f}  {str(daily):<24} {dict(sorted(verdicts.items()))}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

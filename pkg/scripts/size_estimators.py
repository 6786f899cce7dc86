#!/usr/bin/env python3
"""How far BinCount and MaxCount_AS drift from the true population as address churn grows.

For each mean address-holding time, build a static Mozi world (no reboots, so
the true population is fixed), crawl it for a day, and compare both
estimators against the number of infected devices.

    python scripts/size_estimators.py --devices 300 --hours 24 --out size.csv
"""

import argparse
import csv
import sys

from botmesh.analytics import bincount, maxcount_as
from botmesh.core import enrich_all
from botmesh.crawler import Crawler, CrawlerConfig, run_crawlers
from botmesh.simnet import AsPool, FamilyParams, SimConfig, SimTransport, ground_truth, sim_init


def one_run(devices: int, reassign_s: float, hours: float, seed: int) -> dict:
    fams = {"HJ": FamilyParams(), "MZ": FamilyParams(persistent=True)}
    pools = [AsPool(4134, "CN", "10.0.0.0/16", devices, hj_share=0.0, reassign_mean_s=reassign_s)]
    w = sim_init(SimConfig(seed=seed, as_pools=pools, families=fams, benign_peers=40).validate())
    out = []
    c = Crawler(CrawlerConfig(family="MZ", tfreq_s=300), SimTransport(w), out.append, bootstrap=w.bootstrap)
    run_crawlers([c], hours * 3600)
    obs = enrich_all(out, w.as_table())
    return {
        "reassign_mean_h": reassign_s / 3600 if reassign_s else float("inf"),
        "true": len(ground_truth(w, w.clock, "MZ")),
        "bincount": bincount(obs),
        "maxcount_as": maxcount_as(obs, snapshot_s=300)[0],
    }


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--devices", type=int, default=300)
    p.add_argument("--hours", type=float, default=24.0)
    p.add_argument("--holding", type=float, nargs="+", default=[0, 48, 24, 12, 6, 2],
                   help="mean address-holding times in hours (0 = never reassigned)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", help="optional CSV path")
    args = p.parse_args(argv)

    rows = [one_run(args.devices, h * 3600, args.hours, args.seed) for h in args.holding]
    print(f"{'holding_h':>10} {'true':>6} {'bincount':>9} {'maxcount':>9} {'bin/true':>9} {'max/true':>9}")
    for r in rows:
        print(f"{r['reassign_mean_h']:>10.1f} {r['true']:>6} {r['bincount']:>9} {r['maxcount_as']:>9} "
              f"{r['bincount'] / r['true']:>9.2f} {r['maxcount_as'] / r['true']:>9.2f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())

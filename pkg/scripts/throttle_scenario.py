#!/usr/bin/env python3
"""Hourly reply ratio per AS when one AS drops extra traffic during a window of UTC hours.

Prints the measured ratio next to the value predicted from the loss model:
a probe fails only if every one of its 1 + nretry attempts is lost.

    python scripts/throttle_scenario.py --added-loss 0.8 --start 2 --end 4 --hours 6
"""

import argparse
import sys

from botmesh.analytics import Mode, reply_ratio
from botmesh.core import enrich_all
from botmesh.crawler import Crawler, CrawlerConfig, run_crawlers
from botmesh.simnet import AsPool, FamilyParams, SimConfig, SimTransport, ThrottleWindow, sim_init


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--family", choices=["HJ", "MZ"], default="HJ")
    p.add_argument("--base-loss", type=float, default=0.2)
    p.add_argument("--added-loss", type=float, default=0.8)
    p.add_argument("--start", type=int, default=2)
    p.add_argument("--end", type=int, default=4)
    p.add_argument("--hours", type=int, default=6)
    p.add_argument("--devices", type=int, default=100, help="devices per AS")
    p.add_argument("--mode", choices=["CONFIG_ONLY", "ANY_REPLY"], default="CONFIG_ONLY")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    share = 1.0 if args.family == "HJ" else 0.0
    pools = [AsPool(4134, "CN", "10.0.0.0/16", args.devices, hj_share=share, loss=args.base_loss),
             AsPool(3320, "DE", "10.20.0.0/16", args.devices, hj_share=share, loss=args.base_loss)]
    cfg = SimConfig(seed=args.seed, as_pools=pools, benign_peers=20,
                    families={"HJ": FamilyParams(), "MZ": FamilyParams(persistent=True)},
                    throttle=[ThrottleWindow(4134, args.start, args.end, args.added_loss)]).validate()
    w = sim_init(cfg)
    out = []
    ccfg = CrawlerConfig(family=args.family)
    run_crawlers([Crawler(ccfg, SimTransport(w), out.append, bootstrap=w.bootstrap)], args.hours * 3600)
    series = reply_ratio(enrich_all(out, w.as_table()), 3600, Mode(args.mode), by="asn")

    tries = 1 + ccfg.nretry
    scale = 1 / 3 if args.family == "MZ" and args.mode == "CONFIG_ONLY" else 1.0
    groups = series.groups()
    print("hour  " + "  ".join(f"{g:>10} {'pred':>6}" for g in groups))
    for hour in range(args.hours):
        ts = cfg.start_ts + hour * 3600
        cells = []
        for g in groups:
            lost = args.base_loss
            if g.endswith("/4134") and args.start <= hour < args.end:
                lost = 1 - (1 - args.base_loss) * (1 - args.added_loss)
            v = series.values(g).get(ts)
            cells.append(f"{'-' if v is None else f'{v:.4f}':>10} {scale * (1 - lost ** tries):>6.3f}")
        print(f"{hour:>4}  " + "  ".join(cells))
    return 0


if __name__ == "__main__":
    sys.exit(main())

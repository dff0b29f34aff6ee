"""Rank every route of a small space by standalone training, then see where search lands.

    python scripts/oracle_agreement.py --seeds 0 1 2 3 4 --out runs/oracle.csv
"""

import argparse
import csv
from pathlib import Path

from routenas.experiments import AgreementConfig, oracle_agreement


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(5)))
    ap.add_argument("--per-route-steps", type=int, default=600)
    ap.add_argument("--search-steps", type=int, default=4000)
    ap.add_argument("--d", type=int, default=100)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--workers", type=int, default=0)
    ap.add_argument("--out", default="runs/oracle_agreement.csv")
    args = ap.parse_args()

    cfg = AgreementConfig(d=args.d, n=args.n, per_route_steps=args.per_route_steps,
                          search_steps=args.search_steps, workers=args.workers)
    ranked, found = oracle_agreement(args.seeds, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    hits = {tuple(u): s for s, u, _ in found}
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "route", "reward", "found_by_seed"])
        for i, (u, r) in enumerate(ranked):
            w.writerow([i, ";".join(map(str, u)), r, hits.get(tuple(u), "")])
    cutoff = cfg.top_fraction * len(ranked)
    for s, u, rank in found:
        print(f"seed {s}: route {list(u)} rank {rank}/{len(ranked)}{' (top)' if rank < cutoff else ''}")
    print(f"{sum(r < cutoff for _, _, r in found)}/{len(found)} seeds in the top {cfg.top_fraction:.0%}")


if __name__ == "__main__":
    main()

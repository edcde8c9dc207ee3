"""Traversal complexity sweep: expanded nodes against the r^h bound."""

import argparse
from dataclasses import dataclass

from g2cp.stats import bench_traversal, format_rows


@dataclass
class BenchConfig:
    sizes: tuple[int, ...] = (1_000, 10_000, 100_000)
    degrees: tuple[int, ...] = (2, 4, 8)
    depths: tuple[int, ...] = (1, 2, 3)
    via: int = 1
    seed: int = 0


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--quick", action="store_true", help="small sizes only")
    p.add_argument("--via", type=int, default=1)
    args = p.parse_args()
    cfg = BenchConfig(via=args.via)
    if args.quick:
        cfg.sizes = (1_000, 5_000)
    rows = list(bench_traversal(cfg.sizes, cfg.degrees, cfg.depths, cfg.via, cfg.seed))
    print(format_rows(rows, "table"), end="")
    print(f"all within bound: {all(r.within_bound for r in rows)}")


if __name__ == "__main__":
    main()

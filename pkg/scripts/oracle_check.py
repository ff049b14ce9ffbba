"""Quadrature against Monte Carlo for every c_s and M^l_{rs}, plus a node-count sweep."""
import argparse

import numpy as np

from netlim.cli import load_config
from netlim.limit_law import apply_Q, law_distance, oracle_table, solve_limit_law
from netlim.quadrature import QuadratureConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config")
    ap.add_argument("--samples", type=int, default=10**6)
    ap.add_argument("--nodes", type=int, nargs="+", default=[8, 16, 32, 64])
    args = ap.parse_args()

    cfg = load_config(args.config)
    laws = {k: solve_limit_law(cfg.params, QuadratureConfig(nodes_gh=k)) for k in args.nodes}
    ref = laws[max(args.nodes)]
    print("nodes  sup distance to finest rule")
    for k, law in laws.items():
        print(f"{k:5d}  {law_distance(law, ref):.2e}")
    law = laws[32] if 32 in laws else ref
    print(f"fixed-point residual {law_distance(apply_Q(law), law):.2e}")

    rows = oracle_table(law, args.samples, cfg.seed)
    z = np.array([r.z for r in rows])
    print(f"{'entry':>10} {'quadrature':>12} {'monte carlo':>12} {'z':>7}")
    for r in rows:
        print(f"{r.entry:>10} {r.quadrature:12.6f} {r.estimate:12.6f} {r.z:7.2f}")
    print(f"max |z| {np.abs(z).max():.2f}; beyond 3: {int(np.sum(np.abs(z) > 3))} of {z.size}")


if __name__ == "__main__":
    main()

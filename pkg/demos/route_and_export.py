"""Synthesize the routing scenario and write every export to demos/out/case1.

    python3 demos/route_and_export.py [--seed N]
"""
import argparse
from pathlib import Path

import numpy as np

from meshlight.reporting import bundled_scenario, run_scenario, run_summary


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(__file__).resolve().parent / "out" / "case1"
    bundle = run_scenario(bundled_scenario("case1_routing"), out, seed=args.seed, svg=True, fd_check=True)
    s = run_summary(bundle)
    a = bundle.responses[0]
    slope = np.polyfit(bundle.grid.normalized, np.unwrap(np.angle(a)), 1)[0]
    print(f"best cost {s['best_cost']:.3e} after {s['iterations']} iterations")
    print(f"A_(2,5): {s['outputs'][0]['min_mag_db']:.3f} .. {s['outputs'][0]['max_mag_db']:.3f} dB")
    print(f"phase turns once every {2 * np.pi / abs(slope):.4f} normalized units")
    print(f"gradient check (normwise) {s['fd_check']['normwise_error']:.2e}")
    print(f"exports in {out}")


if __name__ == "__main__":
    main()

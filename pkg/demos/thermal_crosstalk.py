"""Route light while every heater leaks onto every other phase shifter.

Optimizes heater powers p with phases h(Phi p), where Phi has ones on the
diagonal and a uniform crosstalk level elsewhere, and compares the result
with the crosstalk-free synthesis. Takes a few minutes on one core.

    python3 demos/thermal_crosstalk.py [--level 0.05] [--iters 2000]
"""
import argparse

import numpy as np

from meshlight.nonideality import ThermalModel, synthesize_thermal
from meshlight.optimizer import OptimizerOptions, synthesize
from meshlight.reporting import bundled_scenario, load_scenario


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--level", type=float, default=0.05)
    ap.add_argument("--iters", type=int, default=2000)
    args = ap.parse_args()
    sc = load_scenario(bundled_scenario("case1_routing"))
    spec = sc.spec_template
    opts = OptimizerOptions(max_iters=args.iters, seed=0)

    plain = synthesize(spec, sc.grid, sc.targets, sc.cost_kind, opts)
    tm = ThermalModel.uniform_crosstalk(spec.n_params, args.level)
    hot = synthesize_thermal(spec, sc.grid, sc.targets, sc.cost_kind, tm, opts)
    for label, res in (("no crosstalk", plain), (f"crosstalk {args.level:g}", hot)):
        db = 20 * np.log10(np.abs(res.final_responses[0]))
        print(f"{label:>16}: cost {res.best_cost:.3e}, A_(2,5) {db.min():.3f} .. {db.max():.3f} dB")
    p = np.array(hot.diagnostics["powers"])
    print(f"heater powers: {hot.diagnostics['negative_powers']} of {p.size} negative "
          f"(rerun with project_nonnegative=True to forbid them)")


if __name__ == "__main__":
    main()

"""Temperature-plant benchmark: synthesized delay-feedback tracker against PI."""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from delaybellman.plantbench import (HARDWARE_ENERGY_WH, HARDWARE_IAE, OptimalTracker, PiController, PlantModel,
                                     run_tracking, synthesize_plant_law)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", type=Path, default=Path("out/plant"))
    p.add_argument("--Q", type=float, default=15.0)
    p.add_argument("--R", type=float, nargs="+", default=[1e-4], help="one or more control weights to compare")
    p.add_argument("--continuous-ref", action="store_true")
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    plant = PlantModel()
    pi = run_tracking(plant, PiController(), continuous_ref=args.continuous_ref)
    pi.to_csv(args.out / "tracking_pi.csv")
    rows = {"pi": pi.summary()}
    for R in args.R:
        start = time.perf_counter()
        res = synthesize_plant_law(plant, args.Q, R)
        tr = run_tracking(plant, OptimalTracker(res.law, plant.h), continuous_ref=args.continuous_ref)
        tr.to_csv(args.out / f"tracking_optimal_R{R:g}.csv")
        rows[f"optimal_R{R:g}"] = dict(tr.summary(), synthesis_status=res.status,
                                       gamma0=float(res.law.gamma0[0, 0]), seconds=time.perf_counter() - start)
    (args.out / "summary.json").write_text(json.dumps(rows, indent=2))

    print(f"{'controller':16s} {'IAE':>9s} {'energy Wh':>10s}")
    for name, s in rows.items():
        extra = f"  ({s['synthesis_status']}, Gamma0={s['gamma0']:.2f})" if "gamma0" in s else ""
        print(f"{name:16s} {s['iae']:9.1f} {s['energy']:10.2f}{extra}")
    print(f"hardware, context only: IAE {HARDWARE_IAE}, energy {HARDWARE_ENERGY_WH}")


if __name__ == "__main__":
    main()

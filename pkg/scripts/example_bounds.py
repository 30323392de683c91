"""Lower-bound constants of the four-state example.

The closed-loop gains of this example are not available, so the supplied
intermediate constants are fed through the bound arithmetic.  For contrast
the constants implied by the scenario matrices under the zero law are shown.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from delaybellman.bounds import lower_bound_pipeline
from delaybellman.scenario import Scenario
from delaybellman.sysmodel import close_loop, spectral_norm

SCENARIO = Path(__file__).resolve().parent.parent / "scenarios" / "example_bounds.json"


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", type=Path, default=SCENARIO)
    p.add_argument("--out", type=Path, default=None, help="optional JSON output")
    args = p.parse_args()

    sc = Scenario.load(args.scenario)
    sys = sc.system()
    cl = close_loop(sys, sc.law(sys))
    conf = sc.data["bounds"]
    phi = sc.history(sys)
    Q = np.asarray(sc.data["Q"], float)

    supplied = lower_bound_pipeline(cl, conf["alpha"], conf["t_star"], Q, phi, overrides=conf["overrides"])
    print("with supplied intermediates")
    print(supplied.table())
    print()
    print(f"scenario B has spectral norm {spectral_norm(sys.B):.4f}; the supplied ||A1|| is "
          f"{conf['overrides']['norm_A1']}")
    bare = lower_bound_pipeline(cl, conf["alpha"], conf["t_star"], Q, phi)
    print("zero law, scenario matrices")
    print(bare.table())
    if args.out:
        args.out.write_text(json.dumps({"supplied": supplied.as_dict(), "zero_law": bare.as_dict()}, indent=2))


if __name__ == "__main__":
    main()

"""Distribution of toy relaxation energy drops on held-out synthetic crystals.

Real data should mostly count as stable under the chosen per-atom threshold;
this prints the pass fraction for a few candidate thresholds.

    python3 scripts/calibrate_stability.py --n 300
"""

import argparse
import json
import logging

import numpy as np

from crysflow.metrics import toy_relax
from crysflow.synthetic import train_test_family


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=300, help="held-out crystals to relax")
    ap.add_argument("--thresholds", type=float, nargs="+", default=[0.01, 0.03, 0.1, 0.3, 1.0])
    ap.add_argument("--relax-steps", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    _, test_set = train_test_family(2000, 500, seed=args.seed)
    drops = np.array([toy_relax(c, max_steps=args.relax_steps).delta_energy / c.n_atoms for c in test_set[: args.n]])
    result = {
        "n": len(drops),
        "quantiles": {q: float(np.quantile(drops, q)) for q in (0.1, 0.25, 0.5, 0.75, 0.9)},
        "pass_fraction": {t: float(np.mean(drops <= t)) for t in args.thresholds},
    }
    print(json.dumps(result, indent=2))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result, fh, indent=2)


if __name__ == "__main__":
    main()

"""Structural validity and template match rate against the number of Euler steps.

    python3 scripts/step_study.py --steps 10 25 50 100 250 --n 1000
"""

import argparse
import json
import logging

from crysflow.experiments import ExperimentConfig, score_generations, train_flow
from crysflow.synthetic import train_test_family


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, nargs="+", default=[10, 50, 250])
    ap.add_argument("--n", type=int, default=1000, help="generations per step count")
    ap.add_argument("--base", default="quantized", choices=["quantized", "uninformed"])
    ap.add_argument("--n-pairs", type=int, default=10_000)
    ap.add_argument("--anneal", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="write the result table as JSON here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    train_set, _ = train_test_family(2000, 500, seed=args.seed)
    flow = train_flow(train_set, ExperimentConfig(base=args.base, n_pairs=args.n_pairs, seed=args.seed))
    logging.info("trained %s model in %.0fs, loss ratio %.3f", args.base, flow.seconds, flow.loss_ratio)
    rows = []
    for n_steps in args.steps:
        s = score_generations(flow, args.n, n_steps, seed=args.seed + 1, anneal=args.anneal, match_templates=True)
        rows.append({"n_steps": n_steps, "validity": s.validity, "match_rate": s.match_rate, "seconds": s.seconds})
        logging.info("%4d steps: validity %.3f  match %.3f  (%.0fs)", n_steps, s.validity, s.match_rate, s.seconds)
    result = {"base": args.base, "loss_ratio": flow.loss_ratio, "rows": rows}
    print(json.dumps(result, indent=2))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result, fh, indent=2)


if __name__ == "__main__":
    main()

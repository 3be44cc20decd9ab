"""Structural validity after training and sampling with Gaussian coordinate noise.

    python3 scripts/noise_ablation.py --sigmas 0 0.01 0.02 0.04
"""

import argparse
import json
import logging

from crysflow.experiments import ExperimentConfig, score_generations, train_flow
from crysflow.synthetic import train_test_family


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sigmas", type=float, nargs="+", default=[0.0, 0.01, 0.02, 0.04])
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--n-pairs", type=int, default=10_000)
    ap.add_argument("--steps", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    train_set, _ = train_test_family(2000, 500, seed=args.seed)
    rows = []
    for sigma in args.sigmas:
        flow = train_flow(train_set, ExperimentConfig(n_pairs=args.n_pairs, noise=sigma, seed=args.seed))
        s = score_generations(flow, args.n, args.steps, seed=args.seed + 1)
        rows.append({"sigma": sigma, "loss_ratio": flow.loss_ratio, "validity": s.validity})
        logging.info("sigma %.3f: loss ratio %.3f validity %.3f", sigma, flow.loss_ratio, s.validity)
    vals = [r["validity"] for r in rows]
    result = {"rows": rows, "spread": max(vals) - min(vals)}
    print(json.dumps(result, indent=2))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result, fh, indent=2)


if __name__ == "__main__":
    main()

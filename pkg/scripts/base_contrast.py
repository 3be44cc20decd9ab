"""Learned (quantized) base against the uninformed base, trained identically.

Each model is scored at its own step count; the bootstrap interval is for
``learned - uninformed``.

    python3 scripts/base_contrast.py --learned-steps 50 --uninformed-steps 250
"""

import argparse
import json
import logging

from crysflow.experiments import ExperimentConfig, bootstrap_difference_ci, score_generations, train_flow
from crysflow.synthetic import train_test_family


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--learned-steps", type=int, default=50)
    ap.add_argument("--uninformed-steps", type=int, default=250)
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--n-pairs", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    train_set, _ = train_test_family(2000, 500, seed=args.seed)
    steps = {"quantized": args.learned_steps, "uninformed": args.uninformed_steps}
    scores, result = {}, {}
    for kind, n_steps in steps.items():
        flow = train_flow(train_set, ExperimentConfig(base=kind, n_pairs=args.n_pairs, seed=args.seed))
        s = score_generations(flow, args.n, n_steps, seed=args.seed + 1, match_templates=True)
        scores[kind] = s
        result[kind] = {"n_steps": n_steps, "loss_ratio": flow.loss_ratio, "validity": s.validity,
                        "match_rate": s.match_rate}
        logging.info("%-10s %3d steps: loss ratio %.3f validity %.3f match %.3f", kind, n_steps,
                     flow.loss_ratio, s.validity, s.match_rate)
    q, u = scores["quantized"], scores["uninformed"]
    result["validity_diff_ci"] = bootstrap_difference_ci(q.valid, u.valid)
    result["match_diff_ci"] = bootstrap_difference_ci(q.matched, u.matched, seed=1)
    print(json.dumps(result, indent=2))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result, fh, indent=2)


if __name__ == "__main__":
    main()

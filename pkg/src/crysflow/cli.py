"""Command-line entry point: ``crysflow <command> [options]``.

Settings come from three layers, later ones winning: built-in defaults, a
``--config`` file (sections ``[global]`` and ``[<command>]`` holding flat
``key = value`` lines, keys named like the long flags) and the command line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .base import base_from_dict, base_to_dict, fit_base
from .cif import CifError, parse_cif, read_mp20_csv
from .crystal import crystal_to_record
from .niggli import NiggliError, niggli_reduce_crystal
from .metrics import EvalConfig, evaluate, structure_match, toy_relax
from .pipeline import (
    PRESET_OVERRIDES,
    RunConfig,
    coerce,
    load_config_file,
    preset_config,
    read_crystals,
    read_json_artifact,
    run_pipeline,
    set_threads,
    write_crystals,
    write_json_artifact,
    write_report,
)
from .sampling import SampleConfig, generate
from .training import PairDataset, TrainConfig, build_pair_dataset, fit_standardization, train
from .velocity import PRESETS, VelocityNet, config_hash, load_checkpoint, save_checkpoint

log = logging.getLogger("crysflow")


class CliError(RuntimeError):
    pass


# ------------------------------------------------------------ commands


def cmd_ingest(args) -> dict:
    records, failed = [], 0
    for path in args.inputs:
        p = Path(path)
        if p.suffix.lower() == ".csv":
            sources = list(read_mp20_csv(p))
        else:
            sources = [(p.stem, p.read_text())]
        for rid, text in sources:
            try:
                c = niggli_reduce_crystal(parse_cif(text))
            except (CifError, NiggliError) as exc:
                log.warning("%s [%s]: %s", p, rid, exc)
                failed += 1
                continue
            if not all(60.0 <= a <= 120.0 for a in c.lattice.angles):
                log.warning("%s [%s]: reduced angles %s outside [60, 120], dropped", p, rid, c.lattice.angles)
                failed += 1
                continue
            records.append({**crystal_to_record(c), "source_id": rid})
    summary = {"total": len(records) + failed, "ok": len(records), "failed": failed}
    if not records:
        raise CliError(f"no record could be parsed ({failed} failures)")
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(args.out + ".summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    return summary


def cmd_synthetic(args) -> dict:
    from .synthetic import train_test_family

    tr, te = train_test_family(args.n_train, args.n_test, args.seed)
    spec = {"stage": "data", "n_train": args.n_train, "n_test": args.n_test, "seed": args.seed}
    header = {"config_hash": config_hash(spec), "config": spec}
    write_crystals(Path(args.out_dir) / "train.jsonl", tr, header)
    write_crystals(Path(args.out_dir) / "test.jsonl", te, header)
    return {"train": len(tr), "test": len(te)}


def cmd_fit_base(args) -> dict:
    data, header = read_crystals(args.data)
    base = fit_base(args.kind, data, args.smoothing)
    spec = {"stage": "base", "base": args.kind, "smoothing": args.smoothing, "data": header.get("config_hash")}
    h = write_json_artifact(args.out, "base", spec, base_to_dict(base))
    return {"kind": args.kind, "config_hash": h}


def cmd_build_pairs(args) -> dict:
    data, _ = read_crystals(args.data)
    art = read_json_artifact(args.base, "base")
    base = base_from_dict(art["payload"])
    pairs = build_pair_dataset(data, base, args.n_pairs, np.random.default_rng([args.seed, 2]), args.noise)
    spec = {"stage": "pairs", "n_pairs": args.n_pairs, "noise": args.noise, "seed": args.seed,
            "base": art["config_hash"]}
    h = config_hash(spec)
    pairs.save(args.out, {"config_hash": h, "config": spec, "provenance": pairs.provenance,
                          "rejections": pairs.rejections})
    return {"pairs": len(pairs), "config_hash": h, "rejections": pairs.rejections}


def _read_header(path) -> dict:
    with open(path) as fh:
        first = json.loads(fh.readline() or "{}")
    return first.get("header", {})


def cmd_train(args) -> dict:
    pairs = PairDataset.load(args.pairs)
    header = _read_header(args.pairs)
    tc = TrainConfig(lambda_f=args.lambda_f, lambda_l=args.lambda_l, batch_size=args.batch_size,
                     epochs=args.epochs, lr=args.lr, weight_decay=args.weight_decay, seed=args.seed,
                     patience=args.patience)
    spec = {"stage": "train", "train": asdict(tc), "net": asdict(PRESETS[args.preset]),
            "pairs": header.get("config_hash")}
    net = VelocityNet(PRESETS[args.preset], seed=args.seed)
    fit_standardization(net, pairs)
    net, hist = train(tc, pairs, net, progress=lambda e, tl, vl: log.info("epoch %d train %.4f val %.4f", e, tl, vl))
    h = config_hash(spec)
    save_checkpoint(net, args.out, {"config_hash": h, "config": spec,
                                    "base_hash": header.get("config", {}).get("base"), "history": hist.as_dict()})
    return {"config_hash": h, "initial_train_loss": hist.initial_train_loss,
            "final_train_loss": hist.final_train_loss, "best_epoch": hist.best_epoch}


def cmd_generate(args) -> dict:
    net, extra = load_checkpoint(args.checkpoint)
    art = read_json_artifact(args.base, "base")
    trained_on = extra.get("base_hash")
    if trained_on and trained_on != art["config_hash"] and not args.force:
        raise CliError(
            f"checkpoint was trained on base {trained_on} but {args.base} is {art['config_hash']} (use --force)"
        )
    sc = SampleConfig(n_steps=args.steps, anneal=args.anneal, base=art["payload"]["kind"], noise=args.noise,
                      seed=args.seed)
    crystals, stats = generate(net, base_from_dict(art["payload"]), args.n, sc)
    spec = {"stage": "generate", "sample": asdict(sc), "n": args.n, "model": extra.get("config_hash"),
            "base": art["config_hash"]}
    stats_d = stats.as_dict()
    write_crystals(args.out, crystals, {"config_hash": config_hash(spec), "config": spec, "stats": stats_d,
                                        "base_hash": art["config_hash"], "model_hash": extra.get("config_hash")})
    with open(args.out + ".stats.json", "w") as fh:
        json.dump(stats_d, fh, indent=1, sort_keys=True)
    return stats_d


def cmd_evaluate(args) -> dict:
    gen, header = read_crystals(args.generated)
    if args.checkpoint and args.base and not args.force:
        _, extra = load_checkpoint(args.checkpoint)
        base_hash = read_json_artifact(args.base, "base")["config_hash"]
        if extra.get("base_hash") and extra["base_hash"] != base_hash:
            raise CliError("checkpoint and base do not belong together (use --force)")
        if header.get("model_hash") and header["model_hash"] != extra.get("config_hash"):
            raise CliError("generations were not produced by this checkpoint (use --force)")
    test, _ = read_crystals(args.test)
    training, _ = read_crystals(args.train) if args.train else ([], {})
    ec = EvalConfig(d_struct=args.d_struct, d_comp=args.d_comp, ltol=args.ltol, stol=args.stol,
                    angle_tol=args.angle_tol, relax_steps=args.relax_steps,
                    stability_threshold=args.stability_threshold, novelty=not args.no_novelty)
    report, records = evaluate(gen, test, training, ec)
    spec = {"stage": "evaluate", "eval": asdict(ec), "generated": header.get("config_hash")}
    write_report(Path(args.out_dir), report, records, {"config_hash": config_hash(spec), "config": spec})
    return report.as_dict()


def cmd_relax(args) -> dict:
    crystals, _ = read_crystals(args.input)
    out, extra = [], []
    for c in crystals:
        r = toy_relax(c, args.max_steps)
        out.append(r.crystal)
        extra.append({"delta_energy": r.delta_energy, "relax_steps": r.steps, "converged": r.converged})
    write_crystals(args.out, out, {"relaxed_with": "toy soft-sphere proxy, NOT DFT", "max_steps": args.max_steps},
                   extra)
    return {"relaxed": len(out), "mean_steps": float(np.mean([e["relax_steps"] for e in extra])) if out else 0.0}


def _load_any(path):
    p = Path(path)
    if p.suffix.lower() == ".cif":
        return [parse_cif(p.read_text())]
    return read_crystals(p)[0]


def cmd_match(args) -> dict:
    a, b = _load_any(args.a), _load_any(args.b)
    if len(a) != len(b) and min(len(a), len(b)) != 1:
        raise CliError("inputs must hold the same number of crystals, or one of them exactly one")
    n = max(len(a), len(b))
    results = []
    for i in range(n):
        ca, cb = a[min(i, len(a) - 1)], b[min(i, len(b) - 1)]
        m = structure_match(ca, cb, ltol=args.ltol, stol=args.stol, angle_tol=args.angle_tol)
        results.append({"index": i, "match": m.match, "rmsd": m.rmsd if np.isfinite(m.rmsd) else None})
    return {"n": n, "match_rate": float(np.mean([r["match"] for r in results])), "pairs": results}


def cmd_pipeline(args) -> dict:
    raw = {k: v for k, v in vars(args).items() if k in RunConfig.__dataclass_fields__ and v is not None}
    cfg = preset_config(args.preset, **coerce(RunConfig, raw))
    return run_pipeline(cfg)["report"]


# ------------------------------------------------------------ parser


def _global_flags(suppress: bool = False) -> argparse.ArgumentParser:
    """Global flags. The copy attached to subcommands uses SUPPRESS defaults
    so it cannot overwrite values given before the subcommand name."""

    def d(value):
        return argparse.SUPPRESS if suppress else value

    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=d(None), help="settings file with [global] and per-command sections")
    g.add_argument("--seed", type=int, default=d(0))
    g.add_argument("--preset", choices=sorted(PRESETS), default=d("desk"))
    g.add_argument("--threads", type=int, default=d(0), help="torch threads; 0 uses all logical cores")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return g


def _match_flags(p):
    p.add_argument("--ltol", type=float, default=0.2)
    p.add_argument("--stol", type=float, default=0.3)
    p.add_argument("--angle-tol", type=float, default=5.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crysflow", description=__doc__.splitlines()[0], parents=[_global_flags()])
    g = _global_flags(suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[g], help="parse CIF files or MP-20 CSVs into crystal JSONL")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", default="data.jsonl")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synthetic", parents=[g], help="write the synthetic rock-salt/CsCl train and test sets")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("fit-base", parents=[g], help="fit a base distribution")
    p.add_argument("--data")
    p.add_argument("--kind", default="quantized", help="quantized | uninformed | external:<path>")
    p.add_argument("--smoothing", type=float, default=0.1)
    p.add_argument("--out", default="base.json")
    p.set_defaults(func=cmd_fit_base)

    p = sub.add_parser("build-pairs", parents=[g], help="draw (base sample, data) training pairs")
    p.add_argument("--data")
    p.add_argument("--base")
    p.add_argument("--n-pairs", type=int, default=10000)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", default="pairs.jsonl")
    p.set_defaults(func=cmd_build_pairs)

    p = sub.add_parser("train", parents=[g], help="train the velocity network")
    p.add_argument("--pairs")
    p.add_argument("--out", default="model.npz")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lambda-f", type=float, default=200.0)
    p.add_argument("--lambda-l", type=float, default=1.0)
    p.add_argument("--weight-decay", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=5)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[g], help="sample crystals")
    p.add_argument("--checkpoint")
    p.add_argument("--base")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--anneal", type=float, default=None)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", default="generated.jsonl")
    p.add_argument("--force", action="store_true", help="skip the checkpoint/base consistency check")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[g], help="compute the metrics report")
    p.add_argument("--generated")
    p.add_argument("--test")
    p.add_argument("--train")
    p.add_argument("--checkpoint")
    p.add_argument("--base")
    p.add_argument("--out-dir", default="report")
    p.add_argument("--d-struct", type=float, default=None)
    p.add_argument("--d-comp", type=float, default=None)
    p.add_argument("--relax-steps", type=int, default=500)
    p.add_argument("--stability-threshold", type=float, default=0.1)
    p.add_argument("--no-novelty", action="store_true")
    p.add_argument("--force", action="store_true")
    _match_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("relax", parents=[g], help="relax crystals under the toy potential (NOT DFT)")
    p.add_argument("--input")
    p.add_argument("--out", default="relaxed.jsonl")
    p.add_argument("--max-steps", type=int, default=500)
    p.set_defaults(func=cmd_relax)

    p = sub.add_parser("match", parents=[g], help="structure matching between two files")
    p.add_argument("a")
    p.add_argument("b")
    _match_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("pipeline", parents=[g], help="run every stage end to end (resumable)")
    for name, f in RunConfig.__dataclass_fields__.items():
        if name in ("seed", "preset", "threads"):
            continue
        p.add_argument("--" + name.replace("_", "-"), default=None)
    p.set_defaults(func=cmd_pipeline)
    return parser


_REQUIRED = {
    "fit-base": ("data",),
    "build-pairs": ("data", "base"),
    "train": ("pairs",),
    "generate": ("checkpoint", "base"),
    "evaluate": ("generated", "test"),
    "relax": ("input",),
}


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre, _ = parser.parse_known_args(argv)
    if pre.config:
        values = load_config_file(pre.config, pre.command)
        sub = parser._subparsers._group_actions[0].choices[pre.command]
        known = {a.dest: a for a in sub._actions}
        unknown = sorted(set(values) - set(known))
        if unknown:
            parser.error(f"unknown settings in {pre.config}: {', '.join(unknown)}")
        for k, v in values.items():
            if isinstance(known[k], argparse._StoreTrueAction):
                values[k] = v.strip().lower() in ("1", "true", "yes", "on")
        global_keys = ("seed", "preset", "threads", "verbose")
        sub.set_defaults(**{k: v for k, v in values.items() if k not in global_keys})
        parser.set_defaults(**{k: v for k, v in values.items() if k in global_keys})
    args = parser.parse_args(argv)
    # argparse only converts string defaults for flags that carry a type
    for k in ("seed", "threads"):
        setattr(args, k, int(getattr(args, k)))
    missing = [k for k in _REQUIRED.get(args.command, ()) if not getattr(args, k, None)]
    if missing:
        parser.error(f"{args.command}: missing --{', --'.join(m.replace('_', '-') for m in missing)}")
    if args.command == "generate":
        preset = PRESET_OVERRIDES[args.preset]
        args.steps = int(args.steps) if args.steps is not None else preset.get("n_steps", RunConfig.n_steps)
        args.anneal = float(args.anneal) if args.anneal is not None else preset.get("anneal", RunConfig.anneal)
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    set_threads(args.threads)
    try:
        result = args.func(args)
    except (CliError, CifError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"crysflow {args.command}: error: {exc}", file=sys.stderr)
        return 2
    json.dump(result, sys.stdout, indent=1, sort_keys=True, default=str)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Run configuration, self-describing artifacts and the resumable pipeline.

Every artifact embeds the hash of the configuration that produced it,
including the hashes of its inputs, so a stage whose output already exists
with a matching hash is skipped on rerun.
"""

from __future__ import annotations

import configparser
import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from .base import base_from_dict, base_to_dict, fit_base
from .crystal import Crystal, crystal_from_record, crystal_to_record, iter_jsonl
from .metrics import EvalConfig, evaluate
from .sampling import SampleConfig, generate
from .synthetic import train_test_family
from .training import PairDataset, TrainConfig, build_pair_dataset, fit_standardization, train
from .velocity import PRESETS, VelocityNet, config_hash, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    out_dir: str = "runs/desk"
    seed: int = 0
    preset: str = "desk"
    threads: int = 0  # 0 means all logical cores
    data: str = "synthetic"  # "synthetic" or a crystal JSONL path
    test_data: str = ""
    n_train: int = 2000
    n_test: int = 500
    base: str = "quantized"
    smoothing: float = 0.1
    n_pairs: int = 10000
    noise: float = 0.0
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 32
    lambda_f: float = 200.0
    lambda_l: float = 1.0
    weight_decay: float = 1e-3
    patience: int = 5
    n_samples: int = 1000
    n_steps: int = 50
    anneal: float = 1.0
    relax_steps: int = 500
    stability_threshold: float = 0.1
    novelty: bool = True

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")


PRESET_OVERRIDES = {
    "desk": {},
    "paper": {"n_steps": 250, "anneal": 5.0, "lr": 3e-4, "batch_size": 64},
}


def preset_config(preset: str, **overrides) -> RunConfig:
    return RunConfig(**{"preset": preset, **PRESET_OVERRIDES[preset], **overrides})


def load_config_file(path, section: str | None = None) -> dict:
    """Read flat ``key = value`` settings. ``[global]`` applies everywhere;
    a section named after ``section`` overrides it. Keys may use dashes."""
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    out = {}
    for name in ("global", section):
        if name and cp.has_section(name):
            out.update({k.replace("-", "_"): v for k, v in cp.items(name)})
    return out


def coerce(config_cls, raw: dict) -> dict:
    """Convert string values to the field types of a dataclass."""
    types = {f.name: f.type for f in fields(config_cls)}
    out = {}
    for k, v in raw.items():
        if k not in types:
            raise ValueError(f"unknown setting {k!r}")
        t = str(types[k])
        if not isinstance(v, str):
            out[k] = v
        elif "bool" in t:
            out[k] = v.strip().lower() in ("1", "true", "yes", "on")
        elif "int" in t:
            out[k] = int(v)
        elif "float" in t:
            out[k] = float(v)
        else:
            out[k] = v
    return out


def set_threads(n: int) -> None:
    torch.set_num_threads(n if n > 0 else (os.cpu_count() or 1))


# ------------------------------------------------------------ artifacts


def write_json_artifact(path, kind: str, config: dict, payload: dict) -> str:
    h = config_hash(config)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump({"kind": kind, "config_hash": h, "config": config, "payload": payload}, fh, indent=1, sort_keys=True)
    return h


def read_json_artifact(path, kind: str | None = None) -> dict:
    with open(path) as fh:
        art = json.load(fh)
    if kind is not None and art.get("kind") != kind:
        raise ValueError(f"{path} holds a {art.get('kind')!r} artifact, expected {kind!r}")
    return art


def write_crystals(path, crystals, header: dict | None = None, extra=None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        if header is not None:
            fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for i, c in enumerate(crystals):
            rec = crystal_to_record(c)
            if extra is not None:
                rec.update(extra[i])
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_crystals(path) -> tuple[list[Crystal], dict]:
    crystals, header = [], {}
    for rec in iter_jsonl(path):
        if "header" in rec:
            header = rec["header"]
        else:
            crystals.append(crystal_from_record(rec))
    return crystals, header


def _artifact_hash(path) -> str | None:
    p = Path(path)
    if not p.exists():
        return None
    try:
        if p.suffix == ".json":
            return read_json_artifact(p).get("config_hash")
        if p.suffix == ".npz":
            return load_checkpoint(p)[1].get("config_hash")
        with open(p) as fh:
            first = json.loads(fh.readline())
        return first.get("header", {}).get("config_hash")
    except (OSError, ValueError, KeyError):
        return None


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage


# ------------------------------------------------------------ stages


def stage_data(cfg: RunConfig, out: Path):
    spec = {"stage": "data", "data": cfg.data, "test_data": cfg.test_data, "n_train": cfg.n_train,
            "n_test": cfg.n_test, "seed": cfg.seed}
    h = config_hash(spec)
    train_p, test_p = out / "train.jsonl", out / "test.jsonl"
    if _artifact_hash(train_p) == h and _artifact_hash(test_p) == h:
        return h
    if cfg.data == "synthetic":
        tr, te = train_test_family(cfg.n_train, cfg.n_test, cfg.seed)
    else:
        tr, _ = read_crystals(cfg.data)
        te = read_crystals(cfg.test_data)[0] if cfg.test_data else tr
    header = {"config_hash": h, "config": spec}
    write_crystals(train_p, tr, header)
    write_crystals(test_p, te, header)
    return h


def stage_base(cfg: RunConfig, out: Path, data_hash: str):
    spec = {"stage": "base", "base": cfg.base, "smoothing": cfg.smoothing, "data": data_hash}
    path = out / "base.json"
    h = config_hash(spec)
    if _artifact_hash(path) != h:
        tr, _ = read_crystals(out / "train.jsonl")
        write_json_artifact(path, "base", spec, base_to_dict(fit_base(cfg.base, tr, cfg.smoothing)))
    return h


def stage_pairs(cfg: RunConfig, out: Path, base_hash: str):
    spec = {"stage": "pairs", "n_pairs": cfg.n_pairs, "noise": cfg.noise, "seed": cfg.seed, "base": base_hash}
    path = out / "pairs.jsonl"
    h = config_hash(spec)
    if _artifact_hash(path) != h:
        tr, _ = read_crystals(out / "train.jsonl")
        base = base_from_dict(read_json_artifact(out / "base.json", "base")["payload"])
        pairs = build_pair_dataset(tr, base, cfg.n_pairs, np.random.default_rng([cfg.seed, 2]), cfg.noise)
        pairs.save(path, {"config_hash": h, "config": spec, "provenance": pairs.provenance,
                          "rejections": pairs.rejections})
    return h


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(lambda_f=cfg.lambda_f, lambda_l=cfg.lambda_l, batch_size=cfg.batch_size, epochs=cfg.epochs,
                       lr=cfg.lr, weight_decay=cfg.weight_decay, seed=cfg.seed, patience=cfg.patience)


def stage_train(cfg: RunConfig, out: Path, pairs_hash: str, base_hash: str):
    tc = train_config(cfg)
    spec = {"stage": "train", "train": asdict(tc), "net": asdict(PRESETS[cfg.preset]), "pairs": pairs_hash}
    path = out / "model.npz"
    h = config_hash(spec)
    if _artifact_hash(path) != h:
        pairs = PairDataset.load(out / "pairs.jsonl")
        net = VelocityNet(PRESETS[cfg.preset], seed=cfg.seed)
        fit_standardization(net, pairs)
        net, hist = train(tc, pairs, net)
        save_checkpoint(net, path, {"config_hash": h, "config": spec, "base_hash": base_hash,
                                    "history": hist.as_dict()})
    return h


def stage_generate(cfg: RunConfig, out: Path, model_hash: str, base_hash: str):
    sc = SampleConfig(n_steps=cfg.n_steps, anneal=cfg.anneal, base=cfg.base, noise=cfg.noise, seed=cfg.seed)
    spec = {"stage": "generate", "sample": asdict(sc), "n": cfg.n_samples, "model": model_hash, "base": base_hash}
    path = out / "generated.jsonl"
    h = config_hash(spec)
    if _artifact_hash(path) != h:
        net, _ = load_checkpoint(out / "model.npz")
        base = base_from_dict(read_json_artifact(out / "base.json", "base")["payload"])
        crystals, stats = generate(net, base, cfg.n_samples, sc)
        stats_d = stats.as_dict()
        stats_d.pop("wall_time")
        write_crystals(path, crystals, {"config_hash": h, "config": spec, "stats": stats_d,
                                        "base_hash": base_hash, "model_hash": model_hash})
    return h


def eval_config(cfg: RunConfig) -> EvalConfig:
    return EvalConfig(relax_steps=cfg.relax_steps, stability_threshold=cfg.stability_threshold, novelty=cfg.novelty)


def write_report(out: Path, report, records, header: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump({**header, "report": report.as_dict()}, fh, indent=1, sort_keys=True)
    with open(out / "samples.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    with open(out / "nary_histogram.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n_ary", "count"])
        w.writerows(sorted(report.nary_histogram.items()))
    with open(out / "energy_proxy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "delta_energy_per_atom", "label"])
        for r in records:
            if r["delta_energy_per_atom"] is not None:
                w.writerow([r["index"], repr(r["delta_energy_per_atom"]), "toy proxy NOT DFT"])


def stage_evaluate(cfg: RunConfig, out: Path, gen_hash: str):
    ec = eval_config(cfg)
    spec = {"stage": "evaluate", "eval": asdict(ec), "generated": gen_hash}
    h = config_hash(spec)
    if _artifact_hash(out / "report.json") == h:
        return h
    gen, _ = read_crystals(out / "generated.jsonl")
    tr, _ = read_crystals(out / "train.jsonl")
    te, _ = read_crystals(out / "test.jsonl")
    report, records = evaluate(gen, te, tr, ec)
    write_report(out, report, records, {"config_hash": h, "config": spec})
    return h


STAGES = ("data", "base", "pairs", "train", "generate", "evaluate")


def run_pipeline(cfg: RunConfig) -> dict:
    """Run every stage, skipping those whose artifact is current. Returns
    the report JSON as a dict."""
    set_threads(cfg.threads)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "run_config.json", "w") as fh:
        json.dump(asdict(cfg), fh, indent=1, sort_keys=True)
    torch.manual_seed(cfg.seed)

    def run(name, fn, *args):
        log.info("stage %s", name)
        try:
            return fn(*args)
        except Exception as exc:
            raise StageError(name, exc) from exc

    dh = run("data", stage_data, cfg, out)
    bh = run("base", stage_base, cfg, out, dh)
    ph = run("pairs", stage_pairs, cfg, out, bh)
    mh = run("train", stage_train, cfg, out, ph, bh)
    gh = run("generate", stage_generate, cfg, out, mh, bh)
    run("evaluate", stage_evaluate, cfg, out, gh)
    with open(out / "report.json") as fh:
        return json.load(fh)



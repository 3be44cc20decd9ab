"""Pair-dataset construction and flow-matching training."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .base import BaseSampler, BaseSampleError, RejectionLog, add_noise, sample_base
from .crystal import Crystal, crystal_from_record, crystal_to_record, iter_jsonl
from .manifold import torus_log
from .velocity import DTYPE, VelocityNet, crystal_arrays

log = logging.getLogger(__name__)

T_MAX = 1.0 - 1e-4
LEARNING_RATES = (1e-3, 7e-4, 5e-4, 3e-4, 1e-4)
LOSS_WEIGHT_GRID = tuple({"lambda_f": lf, "lambda_l": 1.0} for lf in (100.0, 200.0, 300.0, 400.0))


@dataclass
class TrainConfig:
    lambda_f: float = 200.0
    lambda_l: float = 1.0
    batch_size: int = 64
    epochs: int = 20
    lr: float = 3e-4
    weight_decay: float = 1e-3
    seed: int = 0
    patience: int = 5
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.lambda_f <= 0 or self.lambda_l <= 0:
            raise ValueError("loss weights must be positive")


@dataclass
class PairDataset:
    pairs: list  # list of (c0, c1), c0 atoms aligned to c1 atoms
    provenance: str = ""
    rejections: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.pairs)

    def save(self, path, header: dict | None = None):
        with open(path, "w") as fh:
            if header is not None:
                fh.write(json.dumps({"header": header}) + "\n")
            for c0, c1 in self.pairs:
                fh.write(json.dumps({"c0": crystal_to_record(c0), "c1": crystal_to_record(c1)}) + "\n")

    @classmethod
    def load(cls, path) -> "PairDataset":
        pairs, header = [], {}
        for rec in iter_jsonl(path):
            if "header" in rec:
                header = rec["header"]
                continue
            pairs.append((crystal_from_record(rec["c0"]), crystal_from_record(rec["c1"])))
        return cls(pairs, header.get("provenance", ""), header.get("rejections", {}))


def atom_alignment(c0: Crystal, c1: Crystal) -> np.ndarray:
    """Permutation p such that ``c0.permuted(p)`` puts, at every position k, a
    c0 atom of the same species as c1's atom k. Within each species the
    assignment minimizes the summed squared torus distance."""
    s0, s1 = np.array(c0.species, dtype=object), np.array(c1.species, dtype=object)
    if sorted(c0.species) != sorted(c1.species):
        raise ValueError(f"composition mismatch: {c0.species} vs {c1.species}")
    perm = np.empty(len(s1), dtype=int)
    for el in sorted(set(c1.species)):
        idx0 = np.flatnonzero(s0 == el)
        idx1 = np.flatnonzero(s1 == el)
        d = torus_log(c0.frac_coords[idx0][:, None, :], c1.frac_coords[idx1][None, :, :])
        cost = (d**2).sum(-1)
        rows, cols = linear_sum_assignment(cost)
        perm[idx1[cols]] = idx0[rows]
    return perm


def align_pair(c0: Crystal, c1: Crystal) -> Crystal:
    return c0.permuted(atom_alignment(c0, c1))


def build_pair_dataset(
    dataset: Sequence[Crystal],
    base: BaseSampler,
    n_pairs: int,
    rng: np.random.Generator,
    noise: float = 0.0,
    max_rejections: int = 1000,
) -> PairDataset:
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if n_pairs < 1:
        raise ValueError("need at least one pair")
    stats = RejectionLog()
    pairs = []
    for _ in range(n_pairs):
        c1 = dataset[rng.integers(len(dataset))]
        try:
            c0 = sample_base(base, c1.species, rng, max_attempts=max_rejections, log_to=stats)
        except BaseSampleError as exc:
            raise BaseSampleError(f"base sampler failing repeatedly: {exc}") from exc
        c0 = add_noise(c0, noise, rng)
        pairs.append((align_pair(c0, c1), c1))
    return PairDataset(pairs, provenance=getattr(base, "kind", "unknown"), rejections=stats.as_dict())


# ------------------------------------------------------------------ batching


@dataclass
class PairBatch:
    f0: torch.Tensor
    l0: torch.Tensor
    f1: torch.Tensor
    l1: torch.Tensor
    z: torch.Tensor

    @property
    def size(self) -> int:
        return self.f0.shape[0]


def make_batch(pairs: Sequence[tuple[Crystal, Crystal]]) -> PairBatch:
    f0, l0, z = crystal_arrays([p[0] for p in pairs])
    f1, l1, z1 = crystal_arrays([p[1] for p in pairs])
    if not np.array_equal(z, z1):
        raise ValueError("pairs are not species-aligned")
    as_t = lambda a: torch.as_tensor(a, dtype=DTYPE)  # noqa: E731
    return PairBatch(as_t(f0), as_t(l0), as_t(f1), as_t(l1), torch.as_tensor(z, dtype=torch.long))


def _torus_log_t(f0: torch.Tensor, f1: torch.Tensor) -> torch.Tensor:
    w = 2 * np.pi * (f1 - f0)
    return torch.atan2(torch.sin(w), torch.cos(w)) / (2 * np.pi)


def interpolate(batch: PairBatch, t: torch.Tensor):
    """Geodesic point c_t and the constant target velocity along the path."""
    step = _torus_log_t(batch.f0, batch.f1)
    ft = batch.f0 + t[:, None, None] * step
    ft = ft - torch.floor(ft)
    lt = batch.l0 + t[:, None] * (batch.l1 - batch.l0)
    back = _torus_log_t(batch.f1, batch.f0)
    target_f = -(back - back.mean(dim=1, keepdim=True))
    target_l = batch.l1 - batch.l0
    return ft, lt, target_f, target_l


def rfm_loss_batch(net: VelocityNet, batch: PairBatch, t: torch.Tensor, lambda_f=200.0, lambda_l=1.0):
    """Per-example loss, shape (B,)."""
    ft, lt, target_f, target_l = interpolate(batch, t)
    vf, vl = net(ft, lt, batch.z, t)
    vf = vf - vf.mean(dim=1, keepdim=True)
    n = batch.f0.shape[1]
    coord_term = ((vf - target_f) ** 2).sum(dim=(1, 2)) * (lambda_f / (3 * n))
    lattice_term = ((vl - target_l) ** 2).sum(dim=1) * (lambda_l / 6)
    return coord_term + lattice_term


def rfm_loss(net: VelocityNet, pair: tuple[Crystal, Crystal], t: float, lambda_f=200.0, lambda_l=1.0) -> float:
    batch = make_batch([pair])
    with torch.no_grad():
        return float(rfm_loss_batch(net, batch, torch.tensor([t], dtype=DTYPE), lambda_f, lambda_l)[0])


# ------------------------------------------------------------------ training


def fit_standardization(net: VelocityNet, pairs: PairDataset) -> None:
    """Set input/output standardization from the pair dataset."""
    lat_in, coord_t, lat_t = [], [], []
    for c0, c1 in pairs.pairs:
        b = make_batch([(c0, c1)])
        _, _, tf, tl = interpolate(b, torch.zeros(1, dtype=DTYPE))
        lat_in.append(b.l0.numpy()[0])
        lat_in.append(b.l1.numpy()[0])
        coord_t.append(tf.numpy()[0])
        lat_t.append(tl.numpy()[0])
    lat_in = np.array(lat_in)
    coord_t = np.concatenate(coord_t)
    lat_t = np.array(lat_t)
    floor = 1e-6
    net.set_standardization(
        lat_in.mean(0),
        np.maximum(lat_in.std(0), floor),
        np.maximum(np.sqrt((coord_t**2).mean(0)), floor),
        lat_t.mean(0),
        np.maximum(lat_t.std(0), floor),
    )


def _record_hash(pair) -> int:
    rec = json.dumps([crystal_to_record(pair[0]), crystal_to_record(pair[1])], sort_keys=True)
    return int(hashlib.sha256(rec.encode()).hexdigest()[:8], 16)


def split_pairs(pairs: PairDataset, val_fraction: float, seed: int):
    """Hold out pairs by a seed-stable hash of the record."""
    train, val = [], []
    cut = int(val_fraction * 10_000)
    for p in pairs.pairs:
        h = (_record_hash(p) + seed * 7919) % 10_000
        (val if h < cut else train).append(p)
    if not train:
        train, val = val, []
    return train, val


def _batches(pairs: list, batch_size: int, rng: np.random.Generator | None):
    """Group by atom count, chunk, and (optionally) shuffle batch order."""
    groups: dict = {}
    order = rng.permutation(len(pairs)) if rng is not None else np.arange(len(pairs))
    for i in order:
        groups.setdefault(pairs[i][0].n_atoms, []).append(pairs[i])
    chunks = []
    for n in sorted(groups):
        g = groups[n]
        chunks.extend(g[k : k + batch_size] for k in range(0, len(g), batch_size))
    if rng is not None:
        chunks = [chunks[i] for i in rng.permutation(len(chunks))]
    return chunks


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_val: list = field(default_factory=list)
    initial_train_loss: float = float("nan")
    final_train_loss: float = float("nan")
    best_epoch: int = -1
    stopped_early: bool = False
    grad_norms: list = field(default_factory=list)
    wall_time: float = 0.0

    def as_dict(self):
        return asdict(self)


class TrainingError(RuntimeError):
    pass


def evaluate_loss(net, batches, ts, config: TrainConfig) -> float:
    total, count = 0.0, 0
    with torch.no_grad():
        for b, t in zip(batches, ts):
            loss = rfm_loss_batch(net, b, t, config.lambda_f, config.lambda_l)
            total += float(loss.sum())
            count += b.size
    return total / max(count, 1)


def train(config: TrainConfig, pairs: PairDataset, net: VelocityNet, progress=None):
    """AdamW on the flow-matching loss with early stopping on held-out pairs.

    Returns the parameters with the best validation loss and the history.
    """
    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    train_pairs, val_pairs = split_pairs(pairs, config.val_fraction, config.seed)
    monitor = val_pairs if val_pairs else train_pairs
    val_batches = [make_batch(c) for c in _batches(monitor, 256, None)]
    val_rng = np.random.default_rng([config.seed, 1])
    val_ts = [torch.as_tensor(val_rng.uniform(0, T_MAX, b.size), dtype=DTYPE) for b in val_batches]

    train_eval = [make_batch(c) for c in _batches(train_pairs, 256, None)]
    train_ts = [torch.as_tensor(val_rng.uniform(0, T_MAX, b.size), dtype=DTYPE) for b in train_eval]

    opt = torch.optim.AdamW(net.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    hist = TrainHistory()
    hist.initial_train_loss = evaluate_loss(net, train_eval, train_ts, config)
    best_state = copy.deepcopy(net.state_dict())
    best = evaluate_loss(net, val_batches, val_ts, config)
    if not np.isfinite(best):
        raise TrainingError(f"initial validation loss is not finite ({best})")
    hist.best_epoch = 0
    stale = 0
    for epoch in range(config.epochs):
        net.train()
        running, seen = 0.0, 0
        for chunk in _batches(train_pairs, config.batch_size, rng):
            b = make_batch(chunk)
            t = torch.as_tensor(rng.uniform(0, T_MAX, b.size), dtype=DTYPE)
            loss = rfm_loss_batch(net, b, t, config.lambda_f, config.lambda_l).mean()
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch + 1} (batch n_atoms={b.f0.shape[1]})")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            gnorm = torch.sqrt(sum((p.grad**2).sum() for p in net.parameters() if p.grad is not None))
            if not torch.isfinite(gnorm):
                raise TrainingError(f"non-finite gradient norm at epoch {epoch + 1}")
            hist.grad_norms.append(float(gnorm))
            opt.step()
            running += float(loss.detach()) * b.size
            seen += b.size
        net.eval()
        val = evaluate_loss(net, val_batches, val_ts, config)
        hist.train_loss.append(running / max(seen, 1))
        hist.val_loss.append(val)
        if val < best:
            best, stale = val, 0
            best_state = copy.deepcopy(net.state_dict())
            hist.best_epoch = epoch + 1
        else:
            stale += 1
        hist.best_val.append(best)
        if progress:
            progress(epoch + 1, hist.train_loss[-1], val)
        log.info("epoch %d train %.5f val %.5f", epoch + 1, hist.train_loss[-1], val)
        if stale >= config.patience:
            hist.stopped_early = True
            break
    net.load_state_dict(best_state)
    hist.final_train_loss = evaluate_loss(net, train_eval, train_ts, config)
    hist.wall_time = time.perf_counter() - started
    return net, hist

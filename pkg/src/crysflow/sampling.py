"""Generation: base sample -> Euler integration of the learned field -> crystal."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .base import BaseSampler, BaseSampleError, RejectionLog, add_noise, sample_base
from .crystal import Crystal, LatticeParams, wrap
from .manifold import TangentVector, unconstrained_to_angle
from .velocity import VelocityNet, crystal_arrays


@dataclass
class SampleConfig:
    n_steps: int = 50
    anneal: float = 1.0
    base: str = "quantized"
    noise: float = 0.0
    seed: int = 0
    batch_size: int = 512

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.anneal < 1:
            raise ValueError("anti-annealing scale must be >= 1")


def anti_anneal(v, t: float, scale: float):
    """Scale a velocity by the linear ramp 1 + (scale - 1) t."""
    if scale < 1:
        raise ValueError("anti-annealing scale must be >= 1")
    k = 1.0 + (scale - 1.0) * t
    if isinstance(v, TangentVector):
        return v.scaled(k)
    return v * k


class IntegrationError(FloatingPointError):
    def __init__(self, step: int, indices):
        super().__init__(f"non-finite state at step {step} for samples {list(indices)}")
        self.step = step
        self.indices = list(indices)


def _as_field(field_or_net) -> Callable:
    return field_or_net.field() if isinstance(field_or_net, VelocityNet) else field_or_net


def integrate_arrays(field_fn: Callable, frac, lattice, z, n_steps: int, anneal: float = 1.0):
    """Forward Euler on flow coordinates for a same-size batch.

    Returns final (frac, lattice) and a boolean mask of samples whose state
    stayed finite; non-finite samples are frozen at the step they failed.
    """
    frac = wrap(np.array(frac, float))
    lat = np.array(lattice, float)
    ok = np.ones(frac.shape[0], dtype=bool)
    failed_at = np.full(frac.shape[0], -1)
    dt = 1.0 / n_steps
    for k in range(n_steps):
        t = k * dt
        idx = np.flatnonzero(ok)
        if idx.size == 0:
            break
        vf, vl = field_fn(frac[idx], lat[idx], z[idx], t)
        scale = 1.0 + (anneal - 1.0) * t
        new_f = frac[idx] + dt * scale * vf
        new_l = lat[idx] + dt * scale * vl
        good = np.all(np.isfinite(new_f), axis=(1, 2)) & np.all(np.isfinite(new_l), axis=1)
        frac[idx[good]] = wrap(new_f[good])
        lat[idx[good]] = new_l[good]
        ok[idx[~good]] = False
        failed_at[idx[~good]] = k
    return frac, lat, ok, failed_at


def euler_integrate(field_or_net, c0: Crystal, config: SampleConfig) -> Crystal:
    frac, lat, z = crystal_arrays([c0])
    frac, lat, ok, failed = integrate_arrays(_as_field(field_or_net), frac, lat, z, config.n_steps, config.anneal)
    if not ok[0]:
        raise IntegrationError(int(failed[0]), [0])
    lengths = lat[0, :3]
    if np.any(lengths <= 0):
        raise ValueError(f"integration produced non-positive lattice lengths {lengths}")
    angles = unconstrained_to_angle(lat[0, 3:])
    return Crystal(c0.species, frac[0], LatticeParams(*lengths, *angles))


@dataclass
class GenerationStats:
    n_requested: int = 0
    n_generated: int = 0
    base_draws: int = 0
    base_rejections: int = 0
    base_rejection_reasons: dict = field(default_factory=dict)
    nonfinite_aborts: int = 0
    nonpositive_length_rejections: int = 0
    steps_per_sample: int = 0
    wall_time: float = 0.0

    def as_dict(self):
        return asdict(self)


def draw_initial(base: BaseSampler, n_samples: int, seed: int, noise: float = 0.0, compositions=None):
    """One independent random stream per sample, so sample i does not depend
    on how many others are drawn."""
    stats = RejectionLog()
    seqs = np.random.SeedSequence(seed).spawn(n_samples)
    out = []
    for i, ss in enumerate(seqs):
        rng = np.random.default_rng(ss)
        comp = compositions[i] if compositions is not None else base.sample_composition(rng)
        c0 = sample_base(base, comp, rng, log_to=stats)
        out.append(add_noise(c0, noise, rng))
    return out, stats


def integrate_many(field_or_net, initial: Sequence[Crystal], config: SampleConfig):
    """Integrate a list of crystals, batching equal atom counts. Returns a list
    aligned with ``initial`` holding a Crystal or a failure string."""
    fn = _as_field(field_or_net)
    results: list = [None] * len(initial)
    groups: dict = {}
    for i, c in enumerate(initial):
        groups.setdefault(c.n_atoms, []).append(i)
    for n in sorted(groups):
        members = groups[n]
        for s in range(0, len(members), config.batch_size):
            idx = members[s : s + config.batch_size]
            frac, lat, z = crystal_arrays([initial[i] for i in idx])
            frac, lat, ok, _ = integrate_arrays(fn, frac, lat, z, config.n_steps, config.anneal)
            for j, i in enumerate(idx):
                if not ok[j]:
                    results[i] = "nonfinite"
                elif np.any(lat[j, :3] <= 0):
                    results[i] = "nonpositive_length"
                else:
                    angles = unconstrained_to_angle(lat[j, 3:])
                    try:
                        results[i] = Crystal(initial[i].species, frac[j], LatticeParams(*lat[j, :3], *angles))
                    except ValueError:
                        results[i] = "degenerate_lattice"
    return results


def generate(field_or_net, base: BaseSampler, n_samples: int, config: SampleConfig, compositions=None):
    started = time.perf_counter()
    stats = GenerationStats(n_requested=n_samples, steps_per_sample=config.n_steps)
    if n_samples == 0:
        return [], stats
    initial, rej = draw_initial(base, n_samples, config.seed, config.noise, compositions)
    results = integrate_many(field_or_net, initial, config)
    crystals = [r for r in results if isinstance(r, Crystal)]
    stats.n_generated = len(crystals)
    stats.base_draws = rej.draws
    stats.base_rejections = rej.n_rejected
    stats.base_rejection_reasons = rej.as_dict()["reasons"]
    stats.nonfinite_aborts = sum(r == "nonfinite" for r in results)
    stats.nonpositive_length_rejections = sum(r in ("nonpositive_length", "degenerate_lattice") for r in results)
    stats.wall_time = time.perf_counter() - started
    return crystals, stats

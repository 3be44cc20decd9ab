"""Small-scale experiment helpers shared by the scripts and the acceptance tests.

These wrap the fit-base, build-pairs, train and generate steps in memory, so
that comparisons such as learned versus uninformed base, step-count sweeps and
noise ablations can be expressed in a few lines.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .base import BaseSampler, fit_base
from .crystal import Crystal, structural_validity
from .metrics import nearest_template_match
from .sampling import SampleConfig, generate
from .synthetic import templates
from .training import TrainConfig, TrainHistory, build_pair_dataset, fit_standardization, train
from .velocity import PRESETS, VelocityNet


@dataclass
class ExperimentConfig:
    base: str = "quantized"
    smoothing: float = 0.1
    n_pairs: int = 10_000
    noise: float = 0.0
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 32
    patience: int = 20
    preset: str = "desk"
    seed: int = 0


@dataclass
class TrainedFlow:
    net: VelocityNet
    base: BaseSampler
    history: TrainHistory
    config: ExperimentConfig
    seconds: float = 0.0

    @property
    def loss_ratio(self) -> float:
        """Final over initial training loss (lower is better)."""
        return self.history.final_train_loss / self.history.initial_train_loss


@dataclass
class GenerationScores:
    n_requested: int
    n_steps: int
    valid: np.ndarray
    matched: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    crystals: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def validity(self) -> float:
        return float(self.valid.mean())

    @property
    def match_rate(self) -> float:
        return float(self.matched.mean()) if self.matched.size else float("nan")


def train_flow(train_set: list[Crystal], config: ExperimentConfig) -> TrainedFlow:
    """Fit the base, draw the pair dataset and train a velocity network."""
    started = time.perf_counter()
    base = fit_base(config.base, train_set, config.smoothing)
    pairs = build_pair_dataset(train_set, base, config.n_pairs, np.random.default_rng([config.seed, 2]), config.noise)
    net = VelocityNet(PRESETS[config.preset], seed=config.seed)
    fit_standardization(net, pairs)
    tc = TrainConfig(epochs=config.epochs, lr=config.lr, batch_size=config.batch_size, patience=config.patience,
                     seed=config.seed)
    net, hist = train(tc, pairs, net)
    return TrainedFlow(net, base, hist, config, time.perf_counter() - started)


def score_generations(
    flow: TrainedFlow,
    n: int,
    n_steps: int,
    seed: int = 1,
    anneal: float = 1.0,
    match_templates: bool = False,
) -> GenerationScores:
    """Generate ``n`` crystals and score them per requested sample.

    Samples that fail integration count as invalid and unmatched, so every
    rate has ``n`` as its denominator.
    """
    started = time.perf_counter()
    sc = SampleConfig(n_steps=n_steps, anneal=anneal, base=flow.config.base, noise=flow.config.noise, seed=seed)
    crystals, _ = generate(flow.net, flow.base, n, sc)
    valid = np.zeros(n, bool)
    valid[: len(crystals)] = [structural_validity(c) for c in crystals]
    matched = np.zeros(0, bool)
    if match_templates:
        temps = templates()
        matched = np.zeros(n, bool)
        matched[: len(crystals)] = [nearest_template_match(c, temps) for c in crystals]
    return GenerationScores(n, n_steps, valid, matched, crystals, time.perf_counter() - started)


def bootstrap_difference_ci(a: np.ndarray, b: np.ndarray, n_boot: int = 2000, level: float = 0.95, seed: int = 0):
    """Percentile bootstrap CI for ``mean(a) - mean(b)`` with independent
    resampling of the two groups."""
    rng = np.random.default_rng(seed)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    da = a[rng.integers(len(a), size=(n_boot, len(a)))].mean(1)
    db = b[rng.integers(len(b), size=(n_boot, len(b)))].mean(1)
    lo, hi = np.quantile(da - db, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)

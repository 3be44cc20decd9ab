"""Base distributions for the flow.

The flow transports samples from a base distribution to the data. Three bases
are provided:

* ``QuantizedEmpiricalBase`` - independent per-coordinate histograms on the
  finite-precision grid a text generator would emit (two decimals for
  fractional coordinates, one for lengths, integer angles);
* ``UninformedBase`` - uniform coordinates, log-normal lengths and Gaussian
  unconstrained angles;
* ``ExternalSampleSource`` - pre-generated samples read from JSONL.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .crystal import Crystal, LatticeParams, GRAM_EPS, formula, gram_determinant, wrap
from .elements import is_element
from .manifold import angle_to_unconstrained, unconstrained_to_angle

log = logging.getLogger(__name__)

COORD_GRID = np.arange(100) / 100.0
LENGTH_STEP = 0.1
ANGLE_GRID = np.arange(60, 121, dtype=float)


class Rejection(str, enum.Enum):
    UNKNOWN_SPECIES = "unknown_species"
    EMPTY = "empty"
    MALFORMED = "malformed"
    NONFINITE = "nonfinite"
    NONPOSITIVE_LENGTH = "nonpositive_length"
    ANGLE_OUT_OF_RANGE = "angle_out_of_range"
    DEGENERATE_LATTICE = "degenerate_lattice"


@dataclass
class RawCrystal:
    """Unvalidated crystal as emitted by a base sampler."""

    species: tuple
    frac_coords: np.ndarray
    lengths: np.ndarray
    angles: np.ndarray

    @classmethod
    def from_record(cls, rec: Mapping) -> "RawCrystal":
        lat = rec["lattice"]
        return cls(
            tuple(rec["species"]),
            np.asarray(rec["frac_coords"], float).reshape(-1, 3),
            np.array([lat["a"], lat["b"], lat["c"]], float),
            np.array([lat["alpha"], lat["beta"], lat["gamma"]], float),
        )

    @classmethod
    def from_crystal(cls, c: Crystal) -> "RawCrystal":
        return cls(c.species, np.array(c.frac_coords), np.array(c.lattice.lengths), np.array(c.lattice.angles))

    def to_crystal(self) -> Crystal:
        return Crystal(self.species, self.frac_coords, LatticeParams(*self.lengths, *self.angles))


def reject_invalid(sample) -> Rejection | None:
    """Screen a raw sample. Returns None when it is a valid crystal, else the
    reason it was rejected."""
    if isinstance(sample, Crystal):
        sample = RawCrystal.from_crystal(sample)
    elif isinstance(sample, Mapping):
        try:
            sample = RawCrystal.from_record(sample)
        except (KeyError, TypeError, ValueError):
            return Rejection.MALFORMED
    species = sample.species
    if len(species) == 0:
        return Rejection.EMPTY
    if not all(isinstance(s, str) and is_element(s) for s in species):
        return Rejection.UNKNOWN_SPECIES
    frac = np.asarray(sample.frac_coords, float)
    lengths = np.asarray(sample.lengths, float)
    angles = np.asarray(sample.angles, float)
    if frac.shape != (len(species), 3) or lengths.shape != (3,) or angles.shape != (3,):
        return Rejection.MALFORMED
    if not (np.all(np.isfinite(frac)) and np.all(np.isfinite(lengths)) and np.all(np.isfinite(angles))):
        return Rejection.NONFINITE
    if np.any(lengths <= 0):
        return Rejection.NONPOSITIVE_LENGTH
    if np.any(angles <= 0) or np.any(angles >= 180):
        return Rejection.ANGLE_OUT_OF_RANGE
    if gram_determinant(*angles) <= GRAM_EPS:
        return Rejection.DEGENERATE_LATTICE
    return None


class BaseSampleError(RuntimeError):
    pass


@dataclass
class RejectionLog:
    draws: int = 0
    rejected: Counter = field(default_factory=Counter)
    resampled_values: int = 0

    @property
    def n_rejected(self) -> int:
        return sum(self.rejected.values())

    @property
    def rejection_rate(self) -> float:
        return self.n_rejected / self.draws if self.draws else 0.0

    def as_dict(self) -> dict:
        return {
            "draws": self.draws,
            "rejected": self.n_rejected,
            "rejection_rate": self.rejection_rate,
            "reasons": {k.value if isinstance(k, Rejection) else str(k): v for k, v in sorted(self.rejected.items())},
            "resampled_values": self.resampled_values,
        }


class BaseSampler:
    """Produces raw initial crystals for a requested species list."""

    kind = "abstract"
    quantized = False

    def draw(self, species: tuple, rng: np.random.Generator) -> RawCrystal:
        raise NotImplementedError

    def sample_composition(self, rng: np.random.Generator) -> tuple:
        raise NotImplementedError


def _species_from(composition) -> tuple:
    if isinstance(composition, Mapping):
        out = []
        for el in sorted(composition):
            out.extend([el] * int(composition[el]))
        return tuple(out)
    return tuple(composition)


def _canonical_order(species: Sequence[str]) -> np.ndarray:
    return np.argsort(np.asarray(species, dtype=object), kind="stable")


def sample_base(
    sampler: BaseSampler,
    composition,
    rng: np.random.Generator,
    max_attempts: int = 100,
    log_to: RejectionLog | None = None,
) -> Crystal:
    """Draw one valid initial crystal with exactly the requested composition.

    Whole samples failing ``reject_invalid`` are redrawn; angles that are
    valid but outside [60, 120] are redrawn value by value. Either loop gives
    up after ``max_attempts`` consecutive failures.
    """
    species = _species_from(composition)
    if not species:
        raise ValueError("composition must be nonempty")
    stats = log_to if log_to is not None else RejectionLog()
    for _ in range(max_attempts):
        raw = sampler.draw(species, rng)
        stats.draws += 1
        reason = reject_invalid(raw)
        if reason is None and Counter(raw.species) != Counter(species):
            reason = Rejection.MALFORMED
        if reason is not None:
            stats.rejected[reason] += 1
            continue
        break
    else:
        raise BaseSampleError(f"{max_attempts} consecutive invalid base draws for {formula(species)}")

    angles = np.array(raw.angles, float)
    for attempt in range(max_attempts + 1):
        bad = (angles < 60) | (angles > 120)
        if not bad.any() and gram_determinant(*angles) > GRAM_EPS:
            break
        if attempt == max_attempts:
            raise BaseSampleError(f"{max_attempts} consecutive out-of-range angle draws")
        fresh = sampler.draw(species, rng).angles
        if bad.any():
            angles[bad] = np.asarray(fresh, float)[bad]
        else:
            angles = np.asarray(fresh, float).copy()
        stats.resampled_values += int(bad.sum()) or 3
    crystal = Crystal(raw.species, raw.frac_coords, LatticeParams(*raw.lengths, *angles))
    return crystal


def add_noise(crystal: Crystal, sigma: float, rng: np.random.Generator) -> Crystal:
    """Gaussian noise of std ``sigma`` on coordinates (wrapped), lengths, and
    unconstrained angles. Values pushed past a boundary are reflected back
    (lengths about 0, unconstrained angles about 0, i.e. 120 degrees)."""
    if sigma < 0:
        raise ValueError("noise std must be nonnegative")
    if sigma == 0:
        return crystal
    n = crystal.n_atoms
    frac = wrap(crystal.frac_coords + sigma * rng.standard_normal((n, 3)))
    lengths = np.abs(np.array(crystal.lattice.lengths) + sigma * rng.standard_normal(3))
    u = angle_to_unconstrained(np.clip(crystal.lattice.angles, 60.0, 120.0)) + sigma * rng.standard_normal(3)
    angles = unconstrained_to_angle(-np.abs(u))
    return crystal.replace(frac_coords=frac, lattice=LatticeParams(*lengths, *angles))


# ------------------------------------------------------------ quantized base


def _smoothed(counts: np.ndarray, alpha: float) -> np.ndarray:
    p = counts.astype(float) + alpha
    total = p.sum(axis=-1, keepdims=True)
    return p / total


@dataclass
class _FormulaHist:
    coords: np.ndarray  # (n, 3, 100) probabilities per atom slot and axis
    lengths: np.ndarray  # (3, n_length_bins)
    angles: np.ndarray  # (3, 61)
    count: int


@dataclass
class QuantizedEmpiricalBase(BaseSampler):
    """Independent histograms over the quantization grid.

    Coordinates have one histogram per (atom slot, axis) for each formula seen
    in training, atoms within a formula being taken in species-sorted order.
    ``fit_quantized_base(..., per_slot=False)`` makes all slots of a formula
    share the same histograms.
    Formulas not seen in training fall back to pooled per-axis histograms.
    """

    length_grid: np.ndarray
    pooled_coords: np.ndarray  # (3, 100)
    pooled_lengths: np.ndarray  # (3, n_length_bins)
    pooled_angles: np.ndarray  # (3, 61)
    per_formula: dict
    compositions: list
    smoothing: float
    kind = "quantized"
    quantized = True

    def _hist_for(self, species: tuple):
        h = self.per_formula.get(formula(species))
        if h is None or h.coords.shape[0] != len(species):
            n = len(species)
            return np.broadcast_to(self.pooled_coords, (n, 3, 100)), self.pooled_lengths, self.pooled_angles
        return h.coords, h.lengths, h.angles

    def draw(self, species: tuple, rng: np.random.Generator) -> RawCrystal:
        order = _canonical_order(species)
        sorted_species = tuple(species[i] for i in order)
        coords_p, lengths_p, angles_p = self._hist_for(sorted_species)
        frac = _draw_categorical(coords_p, rng) / 100.0
        lengths = self.length_grid[_draw_categorical(lengths_p, rng)]
        angles = ANGLE_GRID[_draw_categorical(angles_p, rng)]
        return RawCrystal(sorted_species, frac, lengths, angles)

    def sample_composition(self, rng):
        return self.compositions[rng.integers(len(self.compositions))]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "smoothing": self.smoothing,
            "length_grid": self.length_grid.tolist(),
            "pooled_coords": self.pooled_coords.tolist(),
            "pooled_lengths": self.pooled_lengths.tolist(),
            "pooled_angles": self.pooled_angles.tolist(),
            "per_formula": {
                k: {"coords": v.coords.tolist(), "lengths": v.lengths.tolist(), "angles": v.angles.tolist(), "count": v.count}
                for k, v in sorted(self.per_formula.items())
            },
            "compositions": [list(s) for s in self.compositions],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantizedEmpiricalBase":
        return cls(
            length_grid=np.asarray(d["length_grid"], float),
            pooled_coords=np.asarray(d["pooled_coords"], float),
            pooled_lengths=np.asarray(d["pooled_lengths"], float),
            pooled_angles=np.asarray(d["pooled_angles"], float),
            per_formula={
                k: _FormulaHist(np.asarray(v["coords"]), np.asarray(v["lengths"]), np.asarray(v["angles"]), v["count"])
                for k, v in d["per_formula"].items()
            },
            compositions=[tuple(s) for s in d["compositions"]],
            smoothing=d["smoothing"],
        )


def _draw_categorical(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one index from each categorical distribution along the last axis."""
    cdf = np.cumsum(p, axis=-1)
    u = rng.random(p.shape[:-1] + (1,)) * cdf[..., -1:]
    idx = (cdf <= u).sum(axis=-1)
    return np.minimum(idx, p.shape[-1] - 1)


def quantize_coords(frac: np.ndarray) -> np.ndarray:
    """Index on the 0.01 grid, wrapping 1.00 back to 0.00."""
    return np.rint(np.asarray(frac) * 100).astype(int) % 100


def fit_quantized_base(
    dataset: Sequence[Crystal], smoothing: float = 0.1, per_slot: bool = True
) -> QuantizedEmpiricalBase:
    """Fit per-formula histograms on the quantization grid.

    Parameters
    ----------
    dataset : sequence of Crystal
    smoothing : float
        Laplace pseudo-count added to every bin. The default puts a few
        percent of each histogram's mass on off-site values, so base samples
        carry sporadic per-value errors for the flow to repair.
    per_slot : bool
        If True each atom slot (species-sorted order) gets its own histograms.
        If False every atom of a formula shares one histogram per axis and
        site assignment is left entirely to the flow.
    """
    if len(dataset) == 0:
        raise ValueError("cannot fit a base distribution to an empty dataset")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    max_len = max(max(c.lattice.lengths) for c in dataset)
    n_len = int(math.ceil(max_len * 1.25 / LENGTH_STEP)) + 2
    length_grid = np.round(np.arange(n_len) * LENGTH_STEP, 10)

    pooled_c = np.zeros((3, 100))
    pooled_l = np.zeros((3, n_len))
    pooled_a = np.zeros((3, len(ANGLE_GRID)))
    groups: dict = defaultdict(list)
    for c in dataset:
        groups[formula(c)].append(c)

    def length_bins(c):
        return np.clip(np.rint(np.array(c.lattice.lengths) / LENGTH_STEP).astype(int), 0, n_len - 1)

    def angle_bins(c):
        return np.clip(np.rint(c.lattice.angles).astype(int) - 60, 0, len(ANGLE_GRID) - 1)

    per_formula = {}
    for key, members in groups.items():
        n = members[0].n_atoms
        cc = np.zeros((n, 3, 100))
        lc = np.zeros((3, n_len))
        ac = np.zeros((3, len(ANGLE_GRID)))
        for c in members:
            q = quantize_coords(c.frac_coords[_canonical_order(c.species)])
            for axis in range(3):
                np.add.at(cc[:, axis], (np.arange(n), q[:, axis]), 1)
                np.add.at(pooled_c[axis], q[:, axis], 1)
            lb, ab = length_bins(c), angle_bins(c)
            lc[np.arange(3), lb] += 1
            ac[np.arange(3), ab] += 1
        pooled_l += lc
        pooled_a += ac
        if not per_slot:
            cc = np.broadcast_to(cc.sum(axis=0), cc.shape).copy()
        per_formula[key] = _FormulaHist(
            _smoothed(cc, smoothing), _smoothed(lc, smoothing), _smoothed(ac, smoothing), len(members)
        )
    return QuantizedEmpiricalBase(
        length_grid=length_grid,
        pooled_coords=_smoothed(pooled_c, smoothing),
        pooled_lengths=_smoothed(pooled_l, smoothing),
        pooled_angles=_smoothed(pooled_a, smoothing),
        per_formula=per_formula,
        compositions=[c.species for c in dataset],
        smoothing=smoothing,
    )


# ------------------------------------------------------------ uninformed base


@dataclass
class UninformedBase(BaseSampler):
    log_length_mean: np.ndarray
    log_length_std: np.ndarray
    angle_u_mean: np.ndarray
    angle_u_std: np.ndarray
    compositions: list
    kind = "uninformed"

    def draw(self, species, rng):
        n = len(species)
        frac = rng.random((n, 3))
        lengths = np.exp(self.log_length_mean + self.log_length_std * rng.standard_normal(3))
        angles = unconstrained_to_angle(self.angle_u_mean + self.angle_u_std * rng.standard_normal(3))
        return RawCrystal(tuple(species), frac, lengths, angles)

    def sample_composition(self, rng):
        return self.compositions[rng.integers(len(self.compositions))]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "log_length_mean": self.log_length_mean.tolist(),
            "log_length_std": self.log_length_std.tolist(),
            "angle_u_mean": self.angle_u_mean.tolist(),
            "angle_u_std": self.angle_u_std.tolist(),
            "compositions": [list(s) for s in self.compositions],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["log_length_mean"]),
            np.asarray(d["log_length_std"]),
            np.asarray(d["angle_u_mean"]),
            np.asarray(d["angle_u_std"]),
            [tuple(s) for s in d["compositions"]],
        )


def fit_uninformed_base(dataset: Sequence[Crystal]) -> UninformedBase:
    if len(dataset) == 0:
        raise ValueError("cannot fit a base distribution to an empty dataset")
    loglen = np.log([c.lattice.lengths for c in dataset])
    u = np.array([angle_to_unconstrained(np.array(c.lattice.angles)) for c in dataset])
    return UninformedBase(
        loglen.mean(axis=0),
        np.maximum(loglen.std(axis=0), 1e-3),
        u.mean(axis=0),
        np.maximum(u.std(axis=0), 1e-3),
        [c.species for c in dataset],
    )


# ------------------------------------------------------------ external samples


@dataclass
class ExternalSampleSource(BaseSampler):
    """Initial crystals generated elsewhere, keyed by formula.

    ``temperature``, ``nucleus`` and ``generator`` are provenance only.
    """

    path: str
    records: dict = field(default_factory=dict)
    n_loaded: int = 0
    n_rejected_at_load: int = 0
    temperature: float | None = None
    nucleus: float | None = None
    generator: str | None = None
    kind = "external"

    @classmethod
    def load(cls, path, temperature=None, nucleus=None, generator=None) -> "ExternalSampleSource":
        src = cls(str(path), temperature=temperature, nucleus=nucleus, generator=generator)
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    raw = RawCrystal.from_record(rec)
                    key = rec.get("composition_key") or formula(raw.species)
                except (ValueError, KeyError, TypeError) as exc:
                    log.warning("%s:%d: unparseable sample (%s)", path, lineno, exc)
                    src.n_rejected_at_load += 1
                    continue
                src.records.setdefault(key, []).append(raw)
                src.n_loaded += 1
        if not src.records:
            raise ValueError(f"no usable samples in {path}")
        return src

    def draw(self, species, rng):
        key = formula(species)
        pool = self.records.get(key)
        if not pool:
            raise BaseSampleError(f"external source has no samples for {key}")
        raw = pool[rng.integers(len(pool))]
        return RawCrystal(raw.species, raw.frac_coords.copy(), raw.lengths.copy(), raw.angles.copy())

    def sample_composition(self, rng):
        keys = sorted(self.records)
        pool = self.records[keys[rng.integers(len(keys))]]
        return pool[0].species


def base_to_dict(base: BaseSampler) -> dict:
    if isinstance(base, ExternalSampleSource):
        return {"kind": "external", "path": base.path, "temperature": base.temperature,
                "nucleus": base.nucleus, "generator": base.generator}
    return base.to_dict()


def base_from_dict(d: dict) -> BaseSampler:
    kind = d["kind"]
    if kind == "quantized":
        return QuantizedEmpiricalBase.from_dict(d)
    if kind == "uninformed":
        return UninformedBase.from_dict(d)
    if kind == "external":
        return ExternalSampleSource.load(d["path"], d.get("temperature"), d.get("nucleus"), d.get("generator"))
    raise ValueError(f"unknown base kind {kind!r}")


def fit_base(kind: str, dataset: Sequence[Crystal], smoothing: float = 0.1) -> BaseSampler:
    """``kind`` is ``quantized``, ``uninformed`` or ``external:<path>``."""
    if kind == "quantized":
        return fit_quantized_base(dataset, smoothing)
    if kind == "uninformed":
        return fit_uninformed_base(dataset)
    if kind.startswith("external:"):
        return ExternalSampleSource.load(kind.split(":", 1)[1])
    raise ValueError(f"unknown base kind {kind!r}")

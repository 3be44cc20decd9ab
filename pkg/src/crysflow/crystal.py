"""Crystal representation: species, fractional coordinates on the 3-torus, and
six lattice parameters.

Lattice matrices use rows as basis vectors, with ``a`` along x and ``b`` in the
xy-plane. Cartesian positions are ``x = f @ L``.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

from .elements import ELEMENTS, is_element

# Minimum interatomic distance (Angstrom) for a structurally valid crystal.
MIN_DISTANCE = 0.5
# cells whose normalized metric determinant is below this are treated as flat
GRAM_EPS = 1e-10

_IMAGES = np.array(
    [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)],
    dtype=float,
)


def gram_determinant(alpha: float, beta: float, gamma: float) -> float:
    """Normalized metric determinant for angles in degrees; positive iff the
    three angles span a nondegenerate cell."""
    ca, cb, cg = (math.cos(math.radians(x)) for x in (alpha, beta, gamma))
    return 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg


@dataclass(frozen=True)
class LatticeParams:
    a: float
    b: float
    c: float
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite lattice parameters {tuple(vals)}")
        if min(self.a, self.b, self.c) <= 0:
            raise ValueError(f"lattice lengths must be positive, got {self.lengths}")
        if not all(0.0 < x < 180.0 for x in self.angles):
            raise ValueError(f"lattice angles must lie in (0, 180), got {self.angles}")
        if gram_determinant(*self.angles) <= GRAM_EPS:
            raise ValueError(f"angles {self.angles} do not span a 3D cell")

    @property
    def lengths(self) -> tuple[float, float, float]:
        return (self.a, self.b, self.c)

    @property
    def angles(self) -> tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c, self.alpha, self.beta, self.gamma], dtype=float)

    @classmethod
    def from_array(cls, values) -> "LatticeParams":
        return cls(*(float(v) for v in values))

    def volume(self) -> float:
        return self.a * self.b * self.c * math.sqrt(gram_determinant(*self.angles))


def wrap(frac: np.ndarray) -> np.ndarray:
    """Map fractional coordinates into [0, 1)."""
    out = np.asarray(frac, dtype=float)
    out = out - np.floor(out)
    # x - floor(x) rounds up to exactly 1.0 for tiny negative x
    return np.where(out >= 1.0, 0.0, out)


@dataclass(frozen=True, eq=False)
class Crystal:
    species: tuple[str, ...]
    frac_coords: np.ndarray
    lattice: LatticeParams
    meta: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        species = tuple(self.species)
        if len(species) < 1:
            raise ValueError("crystal must contain at least one atom")
        unknown = [s for s in species if not is_element(s)]
        if unknown:
            raise ValueError(f"unknown element symbols {unknown}")
        frac = np.array(self.frac_coords, dtype=float)
        if frac.shape != (len(species), 3):
            raise ValueError(f"frac_coords shape {frac.shape} does not match {len(species)} atoms")
        if not np.all(np.isfinite(frac)):
            raise ValueError("non-finite fractional coordinates")
        frac = wrap(frac)
        frac.setflags(write=False)
        object.__setattr__(self, "species", species)
        object.__setattr__(self, "frac_coords", frac)

    @property
    def n_atoms(self) -> int:
        return len(self.species)

    def replace(self, **changes) -> "Crystal":
        kw = dict(species=self.species, frac_coords=self.frac_coords, lattice=self.lattice, meta=self.meta)
        kw.update(changes)
        return Crystal(**kw)

    def permuted(self, perm) -> "Crystal":
        perm = np.asarray(perm, dtype=int)
        return self.replace(species=tuple(self.species[i] for i in perm), frac_coords=self.frac_coords[perm])

    def matrix(self) -> np.ndarray:
        return params_to_matrix(self.lattice)

    def __repr__(self) -> str:
        l = self.lattice
        return (
            f"Crystal({formula(self)}, a={l.a:.3f} b={l.b:.3f} c={l.c:.3f} "
            f"alpha={l.alpha:.2f} beta={l.beta:.2f} gamma={l.gamma:.2f})"
        )


def params_to_matrix(lattice: LatticeParams) -> np.ndarray:
    a, b, c = lattice.lengths
    alpha, beta, gamma = (math.radians(x) for x in lattice.angles)
    ca, cb, cg = math.cos(alpha), math.cos(beta), math.cos(gamma)
    sg = math.sin(gamma)
    cy = (ca - cb * cg) / sg
    cz2 = 1.0 - cb * cb - cy * cy
    if cz2 <= 0:
        raise ValueError(f"angles {lattice.angles} do not span a 3D cell")
    return np.array(
        [
            [a, 0.0, 0.0],
            [b * cg, b * sg, 0.0],
            [c * cb, c * cy, c * math.sqrt(cz2)],
        ]
    )


def matrix_to_params(m: np.ndarray) -> LatticeParams:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"lattice matrix must be 3x3, got {m.shape}")
    det = np.linalg.det(m)
    if not det > 0:
        raise ValueError(f"lattice matrix must have positive determinant, got {det}")
    lengths = np.linalg.norm(m, axis=1)

    def angle(u, v):
        cos = np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v))
        return math.degrees(math.acos(min(1.0, max(-1.0, cos))))

    return LatticeParams(
        *lengths,
        angle(m[1], m[2]),
        angle(m[0], m[2]),
        angle(m[0], m[1]),
    )


def frac_to_cart(crystal: Crystal) -> np.ndarray:
    return crystal.frac_coords @ params_to_matrix(crystal.lattice)


def cart_to_frac(cart: np.ndarray, lattice: LatticeParams | np.ndarray) -> np.ndarray:
    m = params_to_matrix(lattice) if isinstance(lattice, LatticeParams) else np.asarray(lattice, float)
    if abs(np.linalg.det(m)) < 1e-12:
        raise ValueError("singular lattice matrix")
    return wrap(np.linalg.solve(m.T, np.asarray(cart, float).T).T)


def min_image_distance(crystal: Crystal, i: int, j: int) -> float:
    """Minimum distance from atom i to any image of atom j within the 27
    neighbouring cells; the zero translation is skipped when i == j."""
    m = crystal.matrix()
    diff = crystal.frac_coords[j] - crystal.frac_coords[i]
    shifts = diff[None, :] + _IMAGES
    if i == j:
        shifts = shifts[np.any(_IMAGES != 0, axis=1)]
    return float(np.min(np.linalg.norm(shifts @ m, axis=1)))


def distance_matrix(crystal: Crystal) -> np.ndarray:
    """All-pairs minimum-image distances; the diagonal holds self-image
    distances."""
    m = crystal.matrix()
    f = crystal.frac_coords
    diff = f[None, :, :] - f[:, None, :]
    cart = (diff[:, :, None, :] + _IMAGES[None, None]) @ m
    d = np.linalg.norm(cart, axis=-1)
    n = len(f)
    zero = 13  # index of (0, 0, 0) in _IMAGES
    d[np.arange(n), np.arange(n), zero] = np.inf
    return d.min(axis=-1)


def structural_validity(crystal: Crystal, cutoff: float = MIN_DISTANCE) -> bool:
    return bool(np.all(distance_matrix(crystal) > cutoff))


def composition(crystal_or_species) -> Counter:
    species = crystal_or_species.species if isinstance(crystal_or_species, Crystal) else crystal_or_species
    return Counter(species)


def n_ary(crystal_or_species) -> int:
    return len(composition(crystal_or_species))


def formula(crystal_or_species) -> str:
    """Canonical formula key, elements sorted alphabetically with explicit
    counts (``Cl1Na1``)."""
    comp = composition(crystal_or_species)
    return "".join(f"{el}{comp[el]}" for el in sorted(comp))


def parse_formula(key: str) -> Counter:
    parts = re.findall(r"([A-Z][a-z]?)(\d*)", key)
    if not parts or "".join(s + c for s, c in parts) != key:
        raise ValueError(f"cannot parse formula {key!r}")
    out: Counter = Counter()
    for sym, count in parts:
        if not is_element(sym):
            raise ValueError(f"unknown element {sym!r} in formula {key!r}")
        out[sym] += int(count) if count else 1
    return out


def density(crystal: Crystal) -> float:
    """Mass density in g/cm^3."""
    mass = sum(ELEMENTS[s].mass for s in crystal.species)
    return mass / crystal.lattice.volume() * 1.66053906660


# ---------------------------------------------------------------- JSONL records


def _round12(x: float) -> float:
    return float(f"{x:.12g}")


def crystal_to_record(crystal: Crystal) -> dict:
    lat = crystal.lattice
    return {
        "species": list(crystal.species),
        "frac_coords": [[_round12(v) for v in row] for row in crystal.frac_coords.tolist()],
        "lattice": {
            k: _round12(getattr(lat, k)) for k in ("a", "b", "c", "alpha", "beta", "gamma")
        },
    }


def crystal_from_record(record: Mapping) -> Crystal:
    try:
        lat = record["lattice"]
        lattice = LatticeParams(*(float(lat[k]) for k in ("a", "b", "c", "alpha", "beta", "gamma")))
        return Crystal(tuple(record["species"]), np.asarray(record["frac_coords"], float), lattice)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed crystal record: {exc}") from exc


def dumps_crystal(crystal: Crystal, **extra) -> str:
    rec = crystal_to_record(crystal)
    rec.update(extra)
    return json.dumps(rec)


def write_jsonl(path, crystals: Iterable[Crystal]) -> int:
    n = 0
    with open(path, "w") as fh:
        for c in crystals:
            fh.write(dumps_crystal(c) + "\n")
            n += 1
    return n


def iter_jsonl(path) -> Iterator[dict]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def read_jsonl(path) -> list[Crystal]:
    return [crystal_from_record(r) for r in iter_jsonl(path)]

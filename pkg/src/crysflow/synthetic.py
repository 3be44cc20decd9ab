"""Synthetic benchmark family: perturbed rock-salt and CsCl-type binaries.

Rock-salt uses the 8-atom conventional cubic cell, CsCl the 2-atom cubic
cell. Each record perturbs the lattice constant, the individual lengths, the
angles and the fractional coordinates, then Niggli-reduces the cell.
"""

from __future__ import annotations

import numpy as np

from .crystal import Crystal, LatticeParams
from .niggli import niggli_reduce_crystal

# formula (cation, anion) -> cubic lattice constant in Angstrom
ROCKSALT = {
    ("Na", "Cl"): 5.64,
    ("K", "Cl"): 6.29,
    ("Mg", "O"): 4.21,
    ("Li", "F"): 4.03,
    ("Ca", "O"): 4.81,
    ("K", "Br"): 6.60,
}
CSCL = {
    ("Cs", "Cl"): 4.12,
    ("Cs", "Br"): 4.29,
    ("Cs", "I"): 4.57,
    ("Tl", "Cl"): 3.84,
    ("Ni", "Al"): 2.88,
    ("Cu", "Zn"): 2.95,
}

_RS_CATION = [(0, 0, 0), (0, 0.5, 0.5), (0.5, 0, 0.5), (0.5, 0.5, 0)]
_RS_ANION = [(0.5, 0, 0), (0, 0.5, 0), (0, 0, 0.5), (0.5, 0.5, 0.5)]


def rocksalt(cation: str, anion: str, a: float) -> Crystal:
    return Crystal(
        (cation,) * 4 + (anion,) * 4,
        np.array(_RS_CATION + _RS_ANION, float),
        LatticeParams(a, a, a, 90.0, 90.0, 90.0),
        {"template": "rocksalt"},
    )


def cscl(a_site: str, b_site: str, a: float) -> Crystal:
    return Crystal(
        (a_site, b_site),
        np.array([(0, 0, 0), (0.5, 0.5, 0.5)], float),
        LatticeParams(a, a, a, 90.0, 90.0, 90.0),
        {"template": "cscl"},
    )


def templates() -> list[Crystal]:
    out = [rocksalt(c, x, a) for (c, x), a in ROCKSALT.items()]
    out += [cscl(c, x, a) for (c, x), a in CSCL.items()]
    return out


def perturb(
    template: Crystal,
    rng: np.random.Generator,
    scale_std: float = 0.02,
    strain_std: float = 0.01,
    angle_std: float = 1.0,
    coord_std: float = 0.01,
) -> Crystal:
    lat = template.lattice
    scale = 1.0 + scale_std * rng.standard_normal()
    lengths = np.array(lat.lengths) * scale * (1.0 + strain_std * rng.standard_normal(3))
    angles = np.array(lat.angles) + angle_std * rng.standard_normal(3)
    frac = template.frac_coords + coord_std * rng.standard_normal(template.frac_coords.shape)
    c = Crystal(template.species, frac, LatticeParams(*lengths, *angles), dict(template.meta))
    return canonical_order(niggli_reduce_crystal(c))


def canonical_order(c: Crystal) -> Crystal:
    """Sort atoms by species, then lexicographically by position rounded to a
    0.1 grid (wrapped, so 0.99 sorts with 0.0). The coarse grid keeps small
    displacements from reordering near-equal coordinates."""
    grid = np.round(c.frac_coords, 1) % 1.0
    keys = [(c.species[i], *grid[i], i) for i in range(c.n_atoms)]
    return c.permuted(sorted(range(c.n_atoms), key=keys.__getitem__))


def synthetic_family(n: int, seed: int = 0, **perturb_kw) -> list[Crystal]:
    """``n`` records cycling over templates in random order."""
    rng = np.random.default_rng(seed)
    temps = templates()
    picks = rng.integers(len(temps), size=n)
    return [perturb(temps[i], rng, **perturb_kw) for i in picks]


def train_test_family(n_train: int = 2000, n_test: int = 500, seed: int = 0):
    data = synthetic_family(n_train + n_test, seed)
    return data[:n_train], data[n_train:]

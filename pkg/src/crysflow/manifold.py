"""Geometry of the crystal manifold.

Fractional coordinates live on a product of flat unit tori; lattice lengths
are plain Euclidean (Angstrom); lattice angles are moved to an unconstrained
real coordinate through a logit map and treated as Euclidean there.

A point on the manifold in "flow coordinates" is the triple
``(frac (n, 3), lengths (3,), angle_u (3,))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .crystal import Crystal, LatticeParams, wrap

ANGLE_LOW = 60.0
ANGLE_SPAN = 120.0
ANGLE_NUDGE = 1e-9


@dataclass(frozen=True)
class TangentVector:
    coord_tangent: np.ndarray  # (n, 3)
    length_tangent: np.ndarray  # (3,)
    angle_tangent: np.ndarray  # (3,)

    @property
    def lattice_tangent(self) -> np.ndarray:
        return np.concatenate([self.length_tangent, self.angle_tangent])

    def scaled(self, s: float) -> "TangentVector":
        return TangentVector(self.coord_tangent * s, self.length_tangent * s, self.angle_tangent * s)


def torus_exp(f, v):
    """exp_f(v) = f + v - floor(f + v), element-wise."""
    return wrap(np.asarray(f, float) + np.asarray(v, float))


def torus_log(f0, f1):
    """Shortest signed displacement from f0 to f1 on the unit circle, in
    (-0.5, 0.5]; the antipodal tie resolves to +0.5."""
    omega = 2.0 * np.pi * (np.asarray(f1, float) - np.asarray(f0, float))
    return np.arctan2(np.sin(omega), np.cos(omega)) / (2.0 * np.pi)


def remove_mean_translation(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, float)
    return v - v.mean(axis=-2, keepdims=True)


def angle_to_unconstrained(eta):
    """logit((eta - 60) / 120); eta in [60, 120], 60 nudged up by 1e-9."""
    eta = np.asarray(eta, float)
    if np.any(eta < ANGLE_LOW) or np.any(eta > ANGLE_LOW + 0.5 * ANGLE_SPAN) or not np.all(np.isfinite(eta)):
        raise ValueError(f"angles must lie in [60, 120] degrees, got {eta}")
    eta = np.maximum(eta, ANGLE_LOW + ANGLE_NUDGE)
    p = (eta - ANGLE_LOW) / ANGLE_SPAN
    return np.log(p) - np.log1p(-p)


def unconstrained_to_angle(u):
    """120 * sigmoid(u) + 60; codomain (60, 180)."""
    u = np.asarray(u, float)
    return ANGLE_SPAN / (1.0 + np.exp(-u)) + ANGLE_LOW


def to_flow_coords(c: Crystal) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lat = c.lattice
    return (
        np.array(c.frac_coords),
        np.array(lat.lengths, float),
        angle_to_unconstrained(np.array(lat.angles, float)),
    )


def from_flow_coords(species, frac, lengths, angle_u, meta=None) -> Crystal:
    angles = unconstrained_to_angle(angle_u)
    return Crystal(tuple(species), wrap(frac), LatticeParams(*lengths, *angles), meta or {})


def _check_same_species(c0: Crystal, c1: Crystal):
    if c0.species != c1.species:
        raise ValueError(f"species mismatch: {c0.species} vs {c1.species}")


def geodesic_point(c0: Crystal, c1: Crystal, t: float) -> Crystal:
    _check_same_species(c0, c1)
    if t == 0:
        return c0
    f0, l0, u0 = to_flow_coords(c0)
    f1, l1, u1 = to_flow_coords(c1)
    f = torus_exp(f0, t * torus_log(f0, f1))
    lengths = l0 + t * (l1 - l0)
    angle_u = u0 + t * (u1 - u0)
    return from_flow_coords(c0.species, f, lengths, angle_u)


def conditional_target(c_t: Crystal, c1: Crystal, t: float) -> TangentVector:
    """-(1 / (1 - t)) log_{c1}(c_t), with the coordinate part mean-removed."""
    _check_same_species(c_t, c1)
    if not 0 <= t < 1:
        raise ValueError(f"conditional target needs t in [0, 1), got {t}")
    ft, lt, ut = to_flow_coords(c_t)
    f1, l1, u1 = to_flow_coords(c1)
    scale = -1.0 / (1.0 - t)
    coord = scale * remove_mean_translation(torus_log(f1, ft))
    return TangentVector(coord, scale * (lt - l1), scale * (ut - u1))


def endpoint_target(c0: Crystal, c1: Crystal) -> TangentVector:
    """Constant-in-t target along the geodesic from c0 to c1 (the regression
    target in the training loss)."""
    _check_same_species(c0, c1)
    f0, l0, u0 = to_flow_coords(c0)
    f1, l1, u1 = to_flow_coords(c1)
    coord = -remove_mean_translation(torus_log(f1, f0))
    return TangentVector(coord, l1 - l0, u1 - u0)

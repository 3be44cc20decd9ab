"""Niggli reduction of a lattice together with the atoms it carries.

Implements the Krivy-Gruber step sequence with the epsilon-guarded comparisons
of Grosse-Kunstleve, Sauter & Adams (2004). The integer change of basis is
accumulated exactly and applied once to the input matrix, so repeated steps do
not compound rounding error.
"""

from __future__ import annotations

import numpy as np

from .crystal import Crystal, LatticeParams, matrix_to_params, params_to_matrix, wrap

MAX_ITER = 1000
EPS_FACTOR = 1e-5


class NiggliError(RuntimeError):
    pass


def _reduce_matrix(m: np.ndarray, eps_factor: float, max_iter: int) -> np.ndarray:
    """Return the integer matrix T such that T @ m is Niggli reduced."""
    # scaled by V^(2/3) so that equivalent bases share one tolerance
    eps = eps_factor * abs(np.linalg.det(m)) ** (2 / 3)
    total = np.eye(3, dtype=np.int64)

    def lt(x, y):
        return x < y - eps

    def gt(x, y):
        return lt(y, x)

    def eq(x, y):
        return not (lt(x, y) or lt(y, x))

    def sign(x):
        return 1 if x > 0 else -1

    for _ in range(max_iter):
        cell = total @ m
        g = cell @ cell.T
        A, B, C = g[0, 0], g[1, 1], g[2, 2]
        xi, eta, zeta = 2 * g[1, 2], 2 * g[0, 2], 2 * g[0, 1]

        # N1
        if gt(A, B) or (eq(A, B) and gt(abs(xi), abs(eta))):
            total = np.array([[0, -1, 0], [-1, 0, 0], [0, 0, -1]]) @ total
            continue
        # N2
        if gt(B, C) or (eq(B, C) and gt(abs(eta), abs(zeta))):
            total = np.array([[-1, 0, 0], [0, 0, -1], [0, -1, 0]]) @ total
            continue

        # N3 / N4: make the off-diagonal terms all positive or all non-positive
        n_pos = sum(gt(x, 0) for x in (xi, eta, zeta))
        n_neg = sum(lt(x, 0) for x in (xi, eta, zeta))
        if n_pos + n_neg == 3 and n_neg % 2 == 0:
            flips = [sign(x) for x in (xi, eta, zeta)]
            if flips != [1, 1, 1]:
                # diag(i, j, k): xi' = j k xi, so flipping by sign(xi) etc. makes all positive
                total = np.diag(flips) @ total
                continue
        else:
            ijk = [1, 1, 1]
            free = None
            for idx, x in enumerate((xi, eta, zeta)):
                if gt(x, 0):
                    ijk[idx] = -1
                elif not lt(x, 0):
                    free = idx
            if ijk[0] * ijk[1] * ijk[2] < 0:
                if free is None:
                    raise NiggliError("inconsistent sign pattern in N4")
                ijk[free] = -1
            if ijk != [1, 1, 1]:
                # with ijk = 1, xi' = xi / i, so the chosen flips zero out positive terms
                total = np.diag(ijk) @ total
                continue

        # N5
        if gt(abs(xi), B) or (eq(xi, B) and lt(2 * eta, zeta)) or (eq(xi, -B) and lt(zeta, 0)):
            step = np.eye(3, dtype=np.int64)
            step[2, 1] = -sign(xi)
            total = step @ total
            continue
        # N6
        if gt(abs(eta), A) or (eq(eta, A) and lt(2 * xi, zeta)) or (eq(eta, -A) and lt(zeta, 0)):
            step = np.eye(3, dtype=np.int64)
            step[2, 0] = -sign(eta)
            total = step @ total
            continue
        # N7
        if gt(abs(zeta), A) or (eq(zeta, A) and lt(2 * xi, eta)) or (eq(zeta, -A) and lt(eta, 0)):
            step = np.eye(3, dtype=np.int64)
            step[1, 0] = -sign(zeta)
            total = step @ total
            continue
        # N8
        s = xi + eta + zeta + A + B
        if lt(s, 0) or (eq(s, 0) and gt(2 * (A + eta) + zeta, 0)):
            step = np.eye(3, dtype=np.int64)
            step[2, 0] = 1
            step[2, 1] = 1
            total = step @ total
            continue
        return total
    raise NiggliError(f"Niggli reduction did not converge in {max_iter} steps (degenerate cell?)")


def niggli_transform(m: np.ndarray, eps_factor: float = EPS_FACTOR, max_iter: int = MAX_ITER) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if not np.linalg.det(m) > 0:
        raise ValueError("lattice matrix must have positive determinant")
    return _reduce_matrix(m, eps_factor, max_iter)


def niggli_reduce(
    lattice: LatticeParams,
    frac_coords: np.ndarray,
    eps_factor: float = EPS_FACTOR,
    max_iter: int = MAX_ITER,
) -> tuple[LatticeParams, np.ndarray]:
    """Reduce the cell and re-express the fractional coordinates in the new basis."""
    m = params_to_matrix(lattice)
    t = niggli_transform(m, eps_factor, max_iter)
    reduced = matrix_to_params(t @ m)
    # x = f @ m = f' @ (t @ m)  =>  f' = f @ t^-1 ; t is unimodular so its inverse is integral
    t_inv = np.rint(np.linalg.inv(t))
    frac = wrap(np.asarray(frac_coords, float).reshape(-1, 3) @ t_inv)
    return reduced, frac


def niggli_reduce_crystal(crystal: Crystal, **kw) -> Crystal:
    lattice, frac = niggli_reduce(crystal.lattice, crystal.frac_coords, **kw)
    return crystal.replace(lattice=lattice, frac_coords=frac)


def is_niggli_angles(lattice: LatticeParams, tol: float = 1e-6) -> bool:
    """Angles all acute, or all non-acute and at most 120 degrees."""
    ang = np.array(lattice.angles)
    return bool(np.all(ang < 90 + tol) or np.all(ang > 90 - tol)) and bool(
        np.all(ang >= 60 - tol) and np.all(ang <= 120 + tol)
    )

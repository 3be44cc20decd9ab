import numpy as np
import pytest

from crysflow.crystal import LatticeParams, distance_matrix, frac_to_cart, matrix_to_params, params_to_matrix
from crysflow.niggli import NiggliError, is_niggli_angles, niggli_reduce, niggli_reduce_crystal, niggli_transform

from conftest import random_crystal


def random_unimodular(rng, n_moves=6):
    """Product of elementary shears and signed permutations with det +1."""
    t = np.eye(3, dtype=int)
    for _ in range(n_moves):
        i, j = rng.choice(3, 2, replace=False)
        e = np.eye(3, dtype=int)
        e[i, j] = rng.choice([-1, 1])
        t = e @ t
    return t


def test_reduced_cubic_unchanged():
    lat = LatticeParams(3, 3, 3, 90, 90, 90)
    out, frac = niggli_reduce(lat, np.array([[0.1, 0.2, 0.3]]))
    assert np.allclose(out.as_array(), lat.as_array(), atol=1e-10)
    assert np.allclose(frac, [[0.1, 0.2, 0.3]], atol=1e-12)


def test_shear_reduces_back():
    lat = LatticeParams(3, 4, 5, 90, 90, 90)
    m = np.array([[1, 1, 0], [0, 1, 0], [0, 0, 1]]) @ params_to_matrix(lat)
    out, _ = niggli_reduce(matrix_to_params(m), np.zeros((1, 3)))
    assert np.allclose(out.as_array(), lat.as_array(), atol=1e-8)


def test_reduced_angles_convention(rng):
    for _ in range(1000):
        m = random_unimodular(rng, 3) @ params_to_matrix(random_crystal(rng, 1).lattice)
        out, _ = niggli_reduce(matrix_to_params(m), np.zeros((1, 3)))
        assert is_niggli_angles(out)


def test_idempotent(rng):
    for _ in range(100):
        c = niggli_reduce_crystal(random_crystal(rng))
        again = niggli_reduce_crystal(c)
        assert np.allclose(again.lattice.as_array(), c.lattice.as_array(), atol=1e-8)


def test_same_point_set(rng):
    for _ in range(50):
        c = random_crystal(rng, 3)
        m = random_unimodular(rng) @ c.matrix()
        skew = c.replace(lattice=matrix_to_params(m), frac_coords=frac_to_cart(c) @ np.linalg.inv(m))
        r = niggli_reduce_crystal(skew)
        # the output orientation is conventional, so compare rotation-free quantities
        assert np.allclose(distance_matrix(niggli_reduce_crystal(c)), distance_matrix(r), atol=1e-8)
        assert r.lattice.volume() == pytest.approx(c.lattice.volume(), rel=1e-10)


def test_transform_is_unimodular(rng):
    for _ in range(50):
        m = random_unimodular(rng) @ random_crystal(rng, 1).matrix()
        t = niggli_transform(m)
        assert np.allclose(t, np.rint(t))
        assert round(abs(np.linalg.det(t))) == 1


def test_nonconvergence_raises():
    m = params_to_matrix(LatticeParams(1, 1, 1, 90, 90, 90))
    with pytest.raises(NiggliError):
        niggli_transform(np.array([[1, 0, 0], [1000, 1, 0], [0, 0, 1]]) @ m, max_iter=2)


def test_negative_determinant_rejected():
    with pytest.raises(ValueError):
        niggli_transform(-np.eye(3))

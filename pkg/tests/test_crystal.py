import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crysflow.crystal import (
    Crystal,
    LatticeParams,
    cart_to_frac,
    composition,
    crystal_from_record,
    crystal_to_record,
    distance_matrix,
    dumps_crystal,
    formula,
    gram_determinant,
    frac_to_cart,
    matrix_to_params,
    min_image_distance,
    n_ary,
    params_to_matrix,
    parse_formula,
    read_jsonl,
    structural_validity,
    wrap,
    write_jsonl,
)

from conftest import random_crystal


def cubic(a, frac, species=None):
    frac = np.atleast_2d(frac)
    species = species or ("Na",) * len(frac)
    return Crystal(species, frac, LatticeParams(a, a, a, 90, 90, 90))


def gram(m):
    return m @ m.T


angles_st = st.tuples(*[st.floats(62, 118)] * 3).filter(lambda t: gram_determinant(*t) > 1e-3)


lattice_st = st.builds(
    lambda l, a: LatticeParams(*l, *a),
    st.tuples(*[st.floats(0.5, 20)] * 3),
    angles_st,
)


class TestLatticeMatrix:
    def test_cubic_and_orthorhombic(self):
        assert np.allclose(params_to_matrix(LatticeParams(2, 2, 2, 90, 90, 90)), np.diag([2, 2, 2]), atol=1e-15)
        assert np.allclose(params_to_matrix(LatticeParams(1, 2, 3, 90, 90, 90)), np.diag([1, 2, 3]), atol=1e-15)

    def test_hexagonal(self):
        m = params_to_matrix(LatticeParams(1, 1, 2, 90, 90, 120))
        expect = np.array([[1, 0, 0], [-0.5, np.sqrt(3) / 2, 0], [0, 0, 2]])
        assert np.allclose(m, expect, atol=1e-12)

    def test_diag_to_params(self):
        lat = matrix_to_params(np.diag([2.0, 2.0, 2.0]))
        assert np.allclose(lat.as_array(), [2, 2, 2, 90, 90, 90])

    def test_degenerate_angles_rejected(self):
        with pytest.raises(ValueError):
            LatticeParams(1, 1, 1, 60, 60, 170)

    def test_nonpositive_length_rejected(self):
        with pytest.raises(ValueError):
            LatticeParams(0, 1, 1, 90, 90, 90)

    def test_singular_matrix_rejected(self):
        with pytest.raises(ValueError):
            matrix_to_params(np.array([[1, 0, 0], [2, 0, 0], [0, 0, 1.0]]))

    @settings(max_examples=300, deadline=None)
    @given(lattice_st)
    def test_round_trip(self, lat):
        back = matrix_to_params(params_to_matrix(lat))
        assert np.allclose(back.as_array(), lat.as_array(), rtol=1e-10, atol=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(lattice_st)
    def test_gram_reproduces_params(self, lat):
        g = gram(params_to_matrix(lat))
        lengths = np.sqrt(np.diag(g))
        assert np.allclose(lengths, lat.lengths, rtol=1e-10)
        cos = [g[1, 2] / (lengths[1] * lengths[2]), g[0, 2] / (lengths[0] * lengths[2]), g[0, 1] / (lengths[0] * lengths[1])]
        assert np.allclose(np.degrees(np.arccos(cos)), lat.angles, atol=1e-8)

    def test_rotation_invariance(self, rng):
        from scipy.spatial.transform import Rotation

        lat = LatticeParams(3.1, 4.2, 5.3, 80, 95, 110)
        m = params_to_matrix(lat)
        for r in Rotation.random(100, random_state=1).as_matrix():
            assert np.allclose(matrix_to_params(m @ r.T).as_array(), lat.as_array(), atol=1e-9)

    def test_right_handed(self, rng):
        for _ in range(100):
            assert np.linalg.det(random_crystal(rng).matrix()) > 0


class TestCoordinates:
    def test_examples(self):
        assert np.allclose(frac_to_cart(cubic(2, [0.5, 0.5, 0.5])), [[1, 1, 1]])
        c = Crystal(("C",), [[0, 0, 0]], LatticeParams(3, 4, 5, 70, 80, 100))
        assert np.allclose(frac_to_cart(c), 0)

    def test_hexagonal_matrix_product(self):
        lat = LatticeParams(1, 1, 2, 90, 90, 120)
        c = Crystal(("C",), [[1 / 3, 2 / 3, 0]], lat)
        assert np.allclose(frac_to_cart(c), np.array([[1 / 3, 2 / 3, 0]]) @ params_to_matrix(lat))

    def test_round_trip(self, rng):
        for _ in range(200):
            c = random_crystal(rng)
            back = wrap(cart_to_frac(frac_to_cart(c), c.lattice))
            d = np.abs(back - c.frac_coords)
            assert np.all(np.minimum(d, 1 - d) < 1e-10)

    @given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=30))
    def test_wrap_idempotent_and_in_range(self, xs):
        w = wrap(np.array(xs))
        assert np.all((w >= 0) & (w < 1))
        assert np.array_equal(wrap(w), w)

    def test_crystal_wraps_and_freezes(self):
        c = Crystal(("Na",), [[1.25, -0.25, 3.0]], LatticeParams(3, 3, 3, 90, 90, 90))
        assert np.allclose(c.frac_coords, [[0.25, 0.75, 0.0]])
        with pytest.raises(ValueError):
            c.frac_coords[0, 0] = 0.1

    @pytest.mark.parametrize(
        "species, frac",
        [((), np.zeros((0, 3))), (("Xx",), [[0, 0, 0]]), (("Na", "Cl"), [[0, 0, 0]]), (("Na",), [[np.nan, 0, 0]])],
    )
    def test_invalid_crystals(self, species, frac):
        with pytest.raises(ValueError):
            Crystal(species, frac, LatticeParams(3, 3, 3, 90, 90, 90))


class TestDistances:
    def test_examples(self):
        assert min_image_distance(cubic(2, [[0, 0, 0], [0.5, 0, 0]]), 0, 1) == pytest.approx(1.0, abs=1e-12)
        assert min_image_distance(cubic(2, [[0.05, 0, 0], [0.95, 0, 0]]), 0, 1) == pytest.approx(0.2, abs=1e-12)
        assert min_image_distance(cubic(2, [0, 0, 0]), 0, 0) == pytest.approx(2.0, abs=1e-12)

    def test_symmetric_and_rewrap_invariant(self, rng):
        for _ in range(100):
            c = random_crystal(rng, n=4)
            shifted = c.replace(frac_coords=c.frac_coords + rng.integers(-3, 4, (4, 3)))
            for i in range(4):
                for j in range(4):
                    d = min_image_distance(c, i, j)
                    assert d == pytest.approx(min_image_distance(c, j, i), abs=1e-12)
                    assert d == pytest.approx(min_image_distance(shifted, i, j), abs=1e-12)

    def test_distance_matrix_matches_pairwise(self, rng):
        c = random_crystal(rng, n=5)
        dm = distance_matrix(c)
        for i in range(5):
            for j in range(5):
                assert dm[i, j] == pytest.approx(min_image_distance(c, i, j), abs=1e-12)

    def test_validity_examples(self):
        assert not structural_validity(cubic(3, [[0, 0, 0], [0.1, 0, 0]]))  # 0.3 A apart
        assert structural_validity(cubic(3, [0, 0, 0]))
        assert not structural_validity(cubic(0.4, [0, 0, 0]))

    def test_validity_threshold_is_strict(self):
        assert not structural_validity(cubic(2, [[0, 0, 0], [0.25, 0, 0]]))
        assert structural_validity(cubic(2, [[0, 0, 0], [0.2500001, 0, 0]]))


class TestComposition:
    @pytest.mark.parametrize(
        "species, comp, n",
        [
            (("Na", "Cl"), {"Na": 1, "Cl": 1}, 2),
            (("O", "O", "Ti"), {"Ti": 1, "O": 2}, 2),
            (("Fe",) * 4, {"Fe": 4}, 1),
        ],
    )
    def test_examples(self, species, comp, n):
        assert dict(composition(species)) == comp
        assert n_ary(species) == n

    def test_formula_round_trip(self):
        for species in [("O", "O", "Ti"), ("Na", "Cl"), ("Fe",) * 4, ("Ba", "Ti", "O", "O", "O")]:
            assert parse_formula(formula(species)) == composition(species)


class TestRecords:
    def test_round_trip(self, rng, tmp_path):
        cs = [random_crystal(rng) for _ in range(20)]
        write_jsonl(tmp_path / "x.jsonl", cs)
        back = read_jsonl(tmp_path / "x.jsonl")
        for a, b in zip(cs, back):
            assert a.species == b.species
            assert np.allclose(a.frac_coords, b.frac_coords, atol=1e-11)
            assert np.allclose(a.lattice.as_array(), b.lattice.as_array(), rtol=1e-11)

    def test_schema(self, nacl):
        rec = json.loads(dumps_crystal(nacl))
        assert set(rec) >= {"species", "frac_coords", "lattice"}
        assert set(rec["lattice"]) == {"a", "b", "c", "alpha", "beta", "gamma"}
        assert crystal_from_record(crystal_to_record(nacl)).species == nacl.species

import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crysflow.cif import CifError, IDENTITY, SymmetryOp, parse_cif, parse_symop, read_mp20_csv, render_symop, write_cif
from crysflow.crystal import LatticeParams
from crysflow.manifold import torus_log

from conftest import random_crystal

CELL = """data_test
_cell_length_a 4.0
_cell_length_b 5.0
_cell_length_c 6.0
_cell_angle_alpha 90
_cell_angle_beta 90
_cell_angle_gamma 90
"""


def with_sites(sites, ops=None, extra=""):
    text = CELL + extra
    if ops:
        text += "loop_\n_symmetry_equiv_pos_as_xyz\n" + "".join(f"'{o}'\n" for o in ops)
    text += "loop_\n_atom_site_label\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n"
    text += "".join(f"{el}{i} {el} {x} {y} {z}\n" for i, (el, x, y, z) in enumerate(sites))
    return text


def fracs(*rows):
    return tuple(tuple(Fraction(v) for v in r) for r in rows)


class TestSymop:
    def test_identity(self):
        assert parse_symop("x, y, z") == IDENTITY
        assert IDENTITY.rotation == fracs((1, 0, 0), (0, 1, 0), (0, 0, 1))

    def test_example(self):
        op = parse_symop("-x, y+1/2, -z+1/2")
        assert op.rotation == fracs((-1, 0, 0), (0, 1, 0), (0, 0, -1))
        assert op.translation == (0, Fraction(1, 2), Fraction(1, 2))

    def test_mixed_terms(self):
        assert parse_symop("x+y, y, z").rotation == fracs((1, 1, 0), (0, 1, 0), (0, 0, 1))

    @pytest.mark.parametrize("expr", ["1/2+x,Y,-z", "x-y,x,z+1/3", " -x , -y , z+0.5 ", "x,y,z-1/4"])
    def test_accepted_forms(self, expr):
        parse_symop(expr)

    @pytest.mark.parametrize("expr", ["x,y", "x*y,y,z", "x,y,z,x", "x^2,y,z", "x,y,q", "", "x,y,z+", "x,x,z", "2x,y,z"])
    def test_rejected(self, expr):
        with pytest.raises(CifError) as info:
            parse_symop(expr)
        assert info.value.reason

    def test_translation_reduced(self):
        assert parse_symop("x+3/2, y-1/4, z").translation == (Fraction(1, 2), Fraction(3, 4), 0)

    def test_render_round_trip_exhaustive(self):
        quarter = [Fraction(k, 4) for k in range(4)]
        count = 0
        for perm in itertools.permutations(range(3)):
            for signs in itertools.product((1, -1), repeat=3):
                rot = [[0] * 3 for _ in range(3)]
                for i, (j, s) in enumerate(zip(perm, signs)):
                    rot[i][j] = Fraction(s)
                rot = tuple(tuple(r) for r in rot)
                for t in itertools.product(quarter, repeat=3):
                    op = SymmetryOp(rot, t)
                    assert parse_symop(render_symop(op)) == op
                    count += 1
        assert count == 48 * 64

    def test_apply(self):
        op = parse_symop("-x, y+1/2, -z+1/2")
        assert np.allclose(op.apply(np.array([[0.1, 0.2, 0.3]])), [[-0.1, 0.7, 0.2]])


class TestParse:
    def test_p1(self):
        c = parse_cif(with_sites([("Na", 0, 0, 0), ("Cl", 0.5, 0.5, 0.5)]))
        assert c.species == ("Na", "Cl") and c.lattice == LatticeParams(4, 5, 6, 90, 90, 90)

    def test_general_position_expanded(self):
        c = parse_cif(with_sites([("Na", 0.1, 0.2, 0.3)], ops=["x,y,z", "-x,-y,-z"]))
        assert c.n_atoms == 2
        assert np.allclose(sorted(c.frac_coords[:, 0]), [0.1, 0.9])

    def test_special_position_deduplicated(self):
        c = parse_cif(with_sites([("Na", 0.5, 0.0, 0.5)], ops=["x,y,z", "-x,-y,-z"]))
        assert c.n_atoms == 1

    def test_uncertainty_and_charges(self):
        text = with_sites([("Fe2+", 0, 0, 0), ("O2-", "0.5000(3)", "0.5", "0.5")])
        assert parse_cif(text).species == ("Fe", "O")

    def test_comments_and_quotes(self):
        text = "# header\n" + with_sites([("Na", 0, 0, 0)], extra="_chemical_name 'sodium chloride' # inline\n_note\n;\nfree text\n;\n")
        assert parse_cif(text).n_atoms == 1

    @pytest.mark.parametrize("tag", ["_cell_length_a", "_cell_angle_gamma"])
    def test_missing_tag_named(self, tag):
        text = "\n".join(l for l in with_sites([("Na", 0, 0, 0)]).splitlines() if not l.startswith(tag))
        with pytest.raises(CifError, match=tag):
            parse_cif(text)

    def test_missing_sites(self):
        with pytest.raises(CifError):
            parse_cif(CELL)

    def test_partial_occupancy_rejected(self):
        text = CELL + "loop_\n_atom_site_type_symbol\n_atom_site_fract_x\n_atom_site_fract_y\n_atom_site_fract_z\n_atom_site_occupancy\nNa 0 0 0 0.5\n"
        with pytest.raises(CifError, match="occupancy"):
            parse_cif(text)

    def test_unknown_element(self):
        with pytest.raises(CifError):
            parse_cif(with_sites([("Qq", 0, 0, 0)]))

    def test_non_text(self):
        with pytest.raises(CifError):
            parse_cif(b"data_x")


class TestWrite:
    def test_nacl_round_trip(self, nacl):
        back = parse_cif(write_cif(nacl))
        assert back.species == nacl.species
        assert np.allclose(back.frac_coords, nacl.frac_coords, atol=1e-6)
        assert np.allclose(back.lattice.as_array(), nacl.lattice.as_array(), atol=1e-6)

    def test_cell_tags_once(self, nacl):
        text = write_cif(nacl)
        for tag in ("_cell_length_a", "_cell_length_b", "_cell_length_c", "_cell_angle_alpha", "_cell_angle_beta", "_cell_angle_gamma"):
            assert sum(line.split()[0] == tag for line in text.splitlines() if line.strip()) == 1

    def test_atom_count_preserved(self, rng):
        for _ in range(100):
            c = random_crystal(rng)
            back = parse_cif(write_cif(c))
            assert back.n_atoms == c.n_atoms
            assert np.abs(torus_log(c.frac_coords, back.frac_coords)).max() < 1e-6

    @settings(max_examples=50, deadline=None)
    @given(st.text(max_size=300))
    def test_garbage_gives_structured_errors(self, text):
        try:
            parse_cif(text)
        except CifError:
            pass


def test_mp20_csv(tmp_path, nacl):
    import csv

    path = tmp_path / "mp20.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["material_id", "formula", "cif"])
        w.writerow(["mp-1", "NaCl", write_cif(nacl)])
        w.writerow(["mp-2", "bad", "data_x\n"])
    rows = list(read_mp20_csv(path))
    assert [r[0] for r in rows] == ["mp-1", "mp-2"]
    assert parse_cif(rows[0][1]).n_atoms == 8
    with pytest.raises(CifError):
        parse_cif(rows[1][1])
    with pytest.raises(CifError):
        list(read_mp20_csv(path, cif_column="nope"))

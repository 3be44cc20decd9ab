"""A small CIF subset: cell parameters, symmetry-operation loops and atom-site
loops. Enough to ingest MP-20 style records and to write P1 files."""

from __future__ import annotations

import csv
import re
import sys
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

import numpy as np

from .crystal import Crystal, LatticeParams, formula, wrap
from .elements import is_element
from .manifold import torus_log

DEDUP_TOL = 1e-3
CELL_TAGS = (
    "_cell_length_a",
    "_cell_length_b",
    "_cell_length_c",
    "_cell_angle_alpha",
    "_cell_angle_beta",
    "_cell_angle_gamma",
)
SYMOP_TAGS = ("_symmetry_equiv_pos_as_xyz", "_space_group_symop_operation_xyz")

log = logging.getLogger(__name__)


class CifError(ValueError):
    """Parse failure with an optional line number (1-based) or character
    position and a short reason."""

    def __init__(self, reason: str, line: int | None = None, position: int | None = None):
        where = f"line {line}: " if line is not None else ""
        where += f"position {position}: " if position is not None else ""
        super().__init__(where + reason)
        self.reason = reason
        self.line = line
        self.position = position


# ------------------------------------------------------------ symmetry ops


@dataclass(frozen=True)
class SymmetryOp:
    rotation: tuple  # 3 rows of 3 Fractions
    translation: tuple  # 3 Fractions in [0, 1)

    def __post_init__(self):
        r = np.array([[float(v) for v in row] for row in self.rotation])
        if round(abs(np.linalg.det(r)), 9) != 1.0:
            raise CifError(f"rotation part has determinant {np.linalg.det(r):g}, expected +-1")
        object.__setattr__(self, "translation", tuple(Fraction(t) % 1 for t in self.translation))

    def apply(self, frac: np.ndarray) -> np.ndarray:
        r = np.array([[float(v) for v in row] for row in self.rotation])
        t = np.array([float(v) for v in self.translation])
        return np.asarray(frac, float) @ r.T + t


_TERM = re.compile(r"[+-]?[^+-]+")
_NUMBER = r"(?:\d+(?:\.\d*)?|\.\d+)(?:/\d+)?"
_VAR_TERM = re.compile(rf"^(?P<coef>{_NUMBER})?\*?(?P<var>[xyz])$")
_CONST_TERM = re.compile(rf"^{_NUMBER}$")


def _parse_component(text: str, offset: int) -> tuple[list, Fraction]:
    coef = [Fraction(0)] * 3
    const = Fraction(0)
    compact = text.replace(" ", "").lower()
    if not compact:
        raise CifError("empty expression", position=offset)
    pos = 0
    for m in _TERM.finditer(compact):
        if m.start() != pos:
            raise CifError("dangling sign", position=offset + pos)
        pos = m.end()
        term = m.group()
        sign = -1 if term[0] == "-" else 1
        body = term.lstrip("+-")
        if not body:
            raise CifError("dangling sign", position=offset + m.start())
        vm = _VAR_TERM.match(body)
        try:
            if vm:
                c = Fraction(vm["coef"]) if vm["coef"] else Fraction(1)
                coef["xyz".index(vm["var"])] += sign * c
            elif _CONST_TERM.match(body):
                const += sign * Fraction(body)
            else:
                raise CifError(f"not a linear term: {body!r}", position=offset + m.start())
        except ZeroDivisionError:
            raise CifError(f"division by zero in {body!r}", position=offset + m.start()) from None
    if pos != len(compact):
        raise CifError("trailing sign", position=offset + pos)
    return coef, const


def parse_symop(expr: str) -> SymmetryOp:
    """Parse an operation such as ``"-x, y+1/2, -z+1/2"`` with exact
    rational coefficients."""
    text = expr.strip().strip("'\"")
    parts = text.split(",")
    if len(parts) != 3:
        raise CifError(f"expected 3 comma-separated components, got {len(parts)}")
    rows, trans, offset = [], [], 0
    for part in parts:
        c, t = _parse_component(part, offset)
        rows.append(tuple(c))
        trans.append(t)
        offset += len(part) + 1
    return SymmetryOp(tuple(rows), tuple(trans))


def _render_component(row, t) -> str:
    out = ""
    for c, var in zip(row, "xyz"):
        if c == 0:
            continue
        sign = "-" if c < 0 else "+"
        mag = "" if abs(c) == 1 else f"{abs(c)}*"
        out += f"{sign}{mag}{var}"
    if t != 0:
        out += f"+{t}"
    if not out:
        return "0"
    return out[1:] if out[0] == "+" else out


def render_symop(op: SymmetryOp) -> str:
    return ",".join(_render_component(row, t) for row, t in zip(op.rotation, op.translation))


IDENTITY = parse_symop("x,y,z")


# ------------------------------------------------------------ tokenizer


def _tokens(text: str) -> Iterator[tuple[str, int, bool]]:
    """Yield (token, line, quoted). Handles comments, quoted strings and
    semicolon text fields."""
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith(";"):
            start = i
            buf = [line[1:]]
            i += 1
            while i < len(lines) and not lines[i].startswith(";"):
                buf.append(lines[i])
                i += 1
            if i == len(lines):
                raise CifError("unterminated text field", line=start + 1)
            yield "\n".join(buf).strip(), start + 1, True
            i += 1
            continue
        pos = 0
        while pos < len(line):
            ch = line[pos]
            if ch.isspace():
                pos += 1
            elif ch == "#":
                break
            elif ch in "'\"":
                end = pos + 1
                while end < len(line) and not (line[end] == ch and (end + 1 == len(line) or line[end + 1].isspace())):
                    end += 1
                if end >= len(line):
                    raise CifError("unterminated quoted string", line=i + 1)
                yield line[pos + 1 : end], i + 1, True
                pos = end + 1
            else:
                end = pos
                while end < len(line) and not line[end].isspace():
                    end += 1
                yield line[pos:end], i + 1, False
                pos = end
        i += 1


def _parse_blocks(text: str):
    """Return (tags, loops) for the first data block.

    ``tags`` maps lowercase tag -> (value, line); ``loops`` is a list of
    (column tags, rows, line).
    """
    tags: dict = {}
    loops: list = []
    toks = list(_tokens(text))
    k = 0
    seen_block = False
    while k < len(toks):
        tok, line, quoted = toks[k]
        low = tok.lower()
        if not quoted and low.startswith("data_"):
            if seen_block:
                log.warning(f"line {line}: only the first data block is read")
                break
            seen_block = True
            k += 1
        elif not quoted and low == "loop_":
            k += 1
            cols = []
            while k < len(toks) and not toks[k][2] and toks[k][0].startswith("_"):
                cols.append(toks[k][0].lower())
                k += 1
            if not cols:
                raise CifError("loop_ without tags", line=line)
            values = []
            while k < len(toks):
                t, _, q = toks[k]
                tl = t.lower()
                if not q and (t.startswith("_") or tl == "loop_" or tl.startswith("data_")):
                    break
                values.append(t)
                k += 1
            if len(values) % len(cols):
                raise CifError(f"loop has {len(values)} values for {len(cols)} columns", line=line)
            rows = [values[r : r + len(cols)] for r in range(0, len(values), len(cols))]
            loops.append((cols, rows, line))
        elif not quoted and tok.startswith("_"):
            if k + 1 >= len(toks):
                raise CifError(f"tag {tok} has no value", line=line)
            val, _, q = toks[k + 1]
            if not q and (val.startswith("_") or val.lower() == "loop_"):
                raise CifError(f"tag {tok} has no value", line=line)
            tags[low] = (val, line)
            k += 2
        else:
            raise CifError(f"unexpected token {tok!r}", line=line)
    return tags, loops


_UNCERTAINTY = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)(?:\(\d+\))?$")


def _number(value: str, what: str, line: int | None = None) -> float:
    m = _UNCERTAINTY.match(value.strip())
    if not m:
        raise CifError(f"{what}: not a number: {value!r}", line=line)
    x = float(m.group(1))
    if not np.isfinite(x):
        raise CifError(f"{what}: non-finite value", line=line)
    return x


_SYMBOL = re.compile(r"^([A-Z][a-z]?)")


def _element(value: str, line: int) -> str:
    m = _SYMBOL.match(value.strip())
    if not m:
        raise CifError(f"cannot read an element from {value!r}", line=line)
    sym = m.group(1)
    if not is_element(sym):
        # "Co" vs "C": try the one-letter prefix before giving up
        if len(sym) == 2 and is_element(sym[0]):
            return sym[0]
        raise CifError(f"unknown element {sym!r}", line=line)
    return sym


# ------------------------------------------------------------ parse / write


def _parse(text: str) -> Crystal:
    tags, loops = _parse_blocks(text)
    cell = []
    for tag in CELL_TAGS:
        if tag not in tags:
            raise CifError(f"missing mandatory tag {tag}")
        val, line = tags[tag]
        cell.append(_number(val, tag, line))

    ops = [IDENTITY]
    site_loop = None
    for cols, rows, line in loops:
        sym_col = next((c for c in SYMOP_TAGS if c in cols), None)
        if sym_col is not None:
            j = cols.index(sym_col)
            ops = []
            for r in rows:
                try:
                    ops.append(parse_symop(r[j]))
                except CifError as exc:
                    raise CifError(f"bad symmetry operation {r[j]!r}: {exc}", line=line) from None
        elif any(c.startswith("_atom_site_fract_") for c in cols):
            if site_loop is not None:
                log.warning(f"line {line}: extra atom_site loop ignored")
                continue
            site_loop = (cols, rows, line)
        else:
            log.warning(f"line {line}: unsupported loop ({cols[0]}, ...) skipped")
    if site_loop is None:
        raise CifError("missing mandatory atom_site loop with _atom_site_fract_x/y/z")
    cols, rows, line = site_loop
    for tag in ("_atom_site_fract_x", "_atom_site_fract_y", "_atom_site_fract_z"):
        if tag not in cols:
            raise CifError(f"missing mandatory tag {tag}", line=line)
    if "_atom_site_type_symbol" in cols:
        sym_j = cols.index("_atom_site_type_symbol")
    elif "_atom_site_label" in cols:
        sym_j = cols.index("_atom_site_label")
    else:
        raise CifError("missing mandatory tag _atom_site_type_symbol", line=line)
    xyz_j = [cols.index(f"_atom_site_fract_{a}") for a in "xyz"]
    occ_j = cols.index("_atom_site_occupancy") if "_atom_site_occupancy" in cols else None

    species, positions = [], []
    for r in rows:
        el = _element(r[sym_j], line)
        if occ_j is not None and r[occ_j] not in (".", "?"):
            occ = _number(r[occ_j], "_atom_site_occupancy", line)
            if abs(occ - 1.0) > 1e-6:
                raise CifError(f"partial occupancy {occ:g} is not supported", line=line)
        site = np.array([_number(r[j], "fractional coordinate", line) for j in xyz_j])
        images: list = []
        for op in ops:
            p = wrap(op.apply(site))
            if all(np.max(np.abs(torus_log(q, p))) > DEDUP_TOL for q in images):
                images.append(p)
        species += [el] * len(images)
        positions += images
    if not species:
        raise CifError("no atom sites")
    try:
        lattice = LatticeParams(*cell)
    except ValueError as exc:
        raise CifError(f"invalid cell: {exc}") from None
    return Crystal(tuple(species), np.array(positions), lattice)


def parse_cif(text: str) -> Crystal:
    """Parse the first data block of ``text`` into a Crystal.

    Symmetry operations (if a symop loop is present) are applied to every
    site; images of one site closer than 1e-3 are merged. Every failure is
    raised as :class:`CifError`.
    """
    if not isinstance(text, str):
        raise CifError(f"expected text, got {type(text).__name__}")
    try:
        return _parse(text)
    except CifError:
        raise
    except (ValueError, ArithmeticError, IndexError, KeyError, np.linalg.LinAlgError) as exc:
        # last line of defence: the checks above should catch these first
        raise CifError(f"malformed input ({type(exc).__name__}: {exc})") from None


def write_cif(crystal: Crystal, name: str | None = None) -> str:
    """P1 CIF with the identity as the only symmetry operation."""
    lat = crystal.lattice
    title = name or formula(crystal)
    lines = [f"data_{title}", "_symmetry_space_group_name_H-M   'P 1'"]
    for tag, v in zip(CELL_TAGS, (*lat.lengths, *lat.angles)):
        lines.append(f"{tag}   {v:.10f}")
    lines += ["loop_", " _symmetry_equiv_pos_as_xyz", "  'x, y, z'"]
    lines += [
        "loop_",
        " _atom_site_label",
        " _atom_site_type_symbol",
        " _atom_site_fract_x",
        " _atom_site_fract_y",
        " _atom_site_fract_z",
        " _atom_site_occupancy",
    ]
    for i, (el, f) in enumerate(zip(crystal.species, crystal.frac_coords)):
        lines.append(f"  {el}{i} {el} {f[0]:.10f} {f[1]:.10f} {f[2]:.10f} 1")
    return "\n".join(lines) + "\n"


def read_mp20_csv(path, cif_column: str = "cif", id_column: str = "material_id") -> Iterator[tuple[str, str]]:
    """Yield (record id, CIF text) from an MP-20 style CSV."""
    csv.field_size_limit(min(sys.maxsize, 2**31 - 1))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or cif_column not in reader.fieldnames:
            raise CifError(f"CSV {path} has no {cif_column!r} column")
        for k, row in enumerate(reader):
            yield row.get(id_column) or f"row{k}", row[cif_column]

"""Static periodic table for Z = 1..103.

Masses are standard atomic weights (g/mol; mass number of the most stable
isotope for elements without a stable one). Covalent radii are the Cordero
et al. (2008) single-bond values in Angstrom; Bk..Lr have no tabulated value
and use 1.70. Oxidation states are the commonly observed ones, as used for
charge-neutrality screening.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Element:
    symbol: str
    number: int
    mass: float
    covalent_radius: float
    oxidation_states: tuple[int, ...]


_TABLE = [
    # symbol, mass, covalent radius, common oxidation states
    ("H", 1.008, 0.31, (-1, 1)),
    ("He", 4.0026, 0.28, ()),
    ("Li", 6.94, 1.28, (1,)),
    ("Be", 9.0122, 0.96, (2,)),
    ("B", 10.81, 0.84, (3,)),
    ("C", 12.011, 0.76, (-4, 4)),
    ("N", 14.007, 0.71, (-3, 3, 5)),
    ("O", 15.999, 0.66, (-2,)),
    ("F", 18.998, 0.57, (-1,)),
    ("Ne", 20.180, 0.58, ()),
    ("Na", 22.990, 1.66, (1,)),
    ("Mg", 24.305, 1.41, (2,)),
    ("Al", 26.982, 1.21, (3,)),
    ("Si", 28.085, 1.11, (-4, 4)),
    ("P", 30.974, 1.07, (-3, 3, 5)),
    ("S", 32.06, 1.05, (-2, 2, 4, 6)),
    ("Cl", 35.45, 1.02, (-1, 1, 3, 5, 7)),
    ("Ar", 39.948, 1.06, ()),
    ("K", 39.098, 2.03, (1,)),
    ("Ca", 40.078, 1.76, (2,)),
    ("Sc", 44.956, 1.70, (3,)),
    ("Ti", 47.867, 1.60, (4,)),
    ("V", 50.942, 1.53, (5,)),
    ("Cr", 51.996, 1.39, (3, 6)),
    ("Mn", 54.938, 1.39, (2, 4, 7)),
    ("Fe", 55.845, 1.32, (2, 3)),
    ("Co", 58.933, 1.26, (2, 3)),
    ("Ni", 58.693, 1.24, (2,)),
    ("Cu", 63.546, 1.32, (2,)),
    ("Zn", 65.38, 1.22, (2,)),
    ("Ga", 69.723, 1.22, (3,)),
    ("Ge", 72.630, 1.20, (-4, 2, 4)),
    ("As", 74.922, 1.19, (-3, 3, 5)),
    ("Se", 78.971, 1.20, (-2, 2, 4, 6)),
    ("Br", 79.904, 1.20, (-1, 1, 3, 5)),
    ("Kr", 83.798, 1.16, (2,)),
    ("Rb", 85.468, 2.20, (1,)),
    ("Sr", 87.62, 1.95, (2,)),
    ("Y", 88.906, 1.90, (3,)),
    ("Zr", 91.224, 1.75, (4,)),
    ("Nb", 92.906, 1.64, (5,)),
    ("Mo", 95.95, 1.54, (4, 6)),
    ("Tc", 98.0, 1.47, (4, 7)),
    ("Ru", 101.07, 1.46, (3, 4)),
    ("Rh", 102.91, 1.42, (3,)),
    ("Pd", 106.42, 1.39, (0, 2, 4)),
    ("Ag", 107.87, 1.45, (1,)),
    ("Cd", 112.41, 1.44, (2,)),
    ("In", 114.82, 1.42, (3,)),
    ("Sn", 118.71, 1.39, (-4, 2, 4)),
    ("Sb", 121.76, 1.39, (-3, 3, 5)),
    ("Te", 127.60, 1.38, (-2, 2, 4, 6)),
    ("I", 126.90, 1.39, (-1, 1, 3, 5, 7)),
    ("Xe", 131.29, 1.40, (2, 4, 6)),
    ("Cs", 132.91, 2.44, (1,)),
    ("Ba", 137.33, 2.15, (2,)),
    ("La", 138.91, 2.07, (3,)),
    ("Ce", 140.12, 2.04, (3, 4)),
    ("Pr", 140.91, 2.03, (3,)),
    ("Nd", 144.24, 2.01, (3,)),
    ("Pm", 145.0, 1.99, (3,)),
    ("Sm", 150.36, 1.98, (3,)),
    ("Eu", 151.96, 1.98, (2, 3)),
    ("Gd", 157.25, 1.96, (3,)),
    ("Tb", 158.93, 1.94, (3,)),
    ("Dy", 162.50, 1.92, (3,)),
    ("Ho", 164.93, 1.92, (3,)),
    ("Er", 167.26, 1.89, (3,)),
    ("Tm", 168.93, 1.90, (3,)),
    ("Yb", 173.05, 1.87, (3,)),
    ("Lu", 174.97, 1.87, (3,)),
    ("Hf", 178.49, 1.75, (4,)),
    ("Ta", 180.95, 1.70, (5,)),
    ("W", 183.84, 1.62, (4, 6)),
    ("Re", 186.21, 1.51, (4,)),
    ("Os", 190.23, 1.44, (4,)),
    ("Ir", 192.22, 1.41, (3, 4)),
    ("Pt", 195.08, 1.36, (2, 4)),
    ("Au", 196.97, 1.36, (3,)),
    ("Hg", 200.59, 1.32, (1, 2)),
    ("Tl", 204.38, 1.45, (1, 3)),
    ("Pb", 207.2, 1.46, (2, 4)),
    ("Bi", 208.98, 1.48, (3,)),
    ("Po", 209.0, 1.40, (-2, 2, 4)),
    ("At", 210.0, 1.50, (-1, 1)),
    ("Rn", 222.0, 1.50, (2,)),
    ("Fr", 223.0, 2.60, (1,)),
    ("Ra", 226.0, 2.21, (2,)),
    ("Ac", 227.0, 2.15, (3,)),
    ("Th", 232.04, 2.06, (4,)),
    ("Pa", 231.04, 2.00, (5,)),
    ("U", 238.03, 1.96, (6,)),
    ("Np", 237.0, 1.90, (5,)),
    ("Pu", 244.0, 1.87, (4,)),
    ("Am", 243.0, 1.80, (3,)),
    ("Cm", 247.0, 1.69, (3,)),
    ("Bk", 247.0, 1.70, (3,)),
    ("Cf", 251.0, 1.70, (3,)),
    ("Es", 252.0, 1.70, (3,)),
    ("Fm", 257.0, 1.70, (3,)),
    ("Md", 258.0, 1.70, (3,)),
    ("No", 259.0, 1.70, (3,)),
    ("Lr", 266.0, 1.70, (3,)),
]

ELEMENTS: dict[str, Element] = {
    sym: Element(sym, z, mass, radius, ox)
    for z, (sym, mass, radius, ox) in enumerate(_TABLE, start=1)
}
SYMBOLS: tuple[str, ...] = tuple(ELEMENTS)
N_ELEMENTS = len(SYMBOLS)


def is_element(symbol: str) -> bool:
    return symbol in ELEMENTS


def atomic_number(symbol: str) -> int:
    try:
        return ELEMENTS[symbol].number
    except KeyError:
        raise ValueError(f"unknown element symbol {symbol!r}") from None


def symbol_of(z: int) -> str:
    if not 1 <= z <= N_ELEMENTS:
        raise ValueError(f"atomic number {z} outside 1..{N_ELEMENTS}")
    return SYMBOLS[z - 1]

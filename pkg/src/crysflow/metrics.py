"""Proxy evaluation metrics for generated crystals.

Everything here is a cheap stand-in for the usual DFT-backed pipeline. The
toy potential in particular is a soft-sphere repulsion with covalent radii and
its "stability" labels are NOT DFT.
"""

from __future__ import annotations

import itertools
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from scipy.stats import wasserstein_distance

from .crystal import (
    Crystal,
    LatticeParams,
    composition,
    density,
    formula,
    matrix_to_params,
    n_ary,
    params_to_matrix,
    structural_validity,
    wrap,
)
from .elements import ELEMENTS, N_ELEMENTS, atomic_number
from .manifold import torus_log
from .niggli import niggli_reduce_crystal

log = logging.getLogger(__name__)

TOY_LABEL = "toy soft-sphere proxy, NOT DFT"
RDF_BINS = 64
RDF_CUTOFF = 8.0


# ------------------------------------------------------------ charge balance


def compositional_validity(crystal_or_species) -> bool:
    """True if one common oxidation state per element makes the cell neutral.

    Elemental compositions count as valid. Elements without tabulated
    oxidation states make the composition invalid.
    """
    comp = composition(crystal_or_species)
    if len(comp) == 1:
        return True
    states = []
    for el in comp:
        ox = ELEMENTS[el].oxidation_states
        if not ox:
            log.info("no oxidation states tabulated for %s; counted invalid", el)
            return False
        states.append(ox)
    counts = list(comp.values())
    return any(sum(q * n for q, n in zip(combo, counts)) == 0 for combo in itertools.product(*states))


# ------------------------------------------------------------ fingerprints


def _image_range(m: np.ndarray, cutoff: float) -> np.ndarray:
    """Integer image shifts covering every vector shorter than ``cutoff``
    between two points of the unit cell."""
    inv = np.linalg.inv(m)
    reach = np.ceil(cutoff * np.linalg.norm(inv, axis=0)).astype(int) + 1
    axes = [np.arange(-r, r + 1) for r in reach]
    return np.array(list(itertools.product(*axes)), dtype=float)


def _pair_distances(crystal: Crystal, cutoff: float) -> np.ndarray:
    """Every distance below ``cutoff`` from an atom in the cell to any image
    of any atom, self at zero shift excluded."""
    m = crystal.matrix()
    f = crystal.frac_coords
    images = _image_range(m, cutoff)
    diff = f[None, :, None, :] - f[:, None, None, :] + images[None, None]
    d = np.linalg.norm(diff @ m, axis=-1)
    n = len(f)
    zero = np.flatnonzero(~images.any(axis=1))[0]
    d[np.arange(n), np.arange(n), zero] = np.inf
    return d[d < cutoff]


def structure_fingerprint(crystal: Crystal) -> np.ndarray:
    """Radial distribution histogram (64 bins up to 8 Angstrom), counts per
    atom, L2-normalized. Computed on the Niggli cell."""
    c = niggli_reduce_crystal(crystal)
    counts, _ = np.histogram(_pair_distances(c, RDF_CUTOFF), bins=RDF_BINS, range=(0.0, RDF_CUTOFF))
    v = counts / c.n_atoms
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def composition_fingerprint(crystal_or_species) -> np.ndarray:
    """Element fractions (103) followed by mean and std of atomic number,
    both divided by the number of elements."""
    comp = composition(crystal_or_species)
    total = sum(comp.values())
    v = np.zeros(N_ELEMENTS + 2)
    z = []
    for el, k in comp.items():
        v[atomic_number(el) - 1] = k / total
        z += [atomic_number(el)] * k
    v[N_ELEMENTS] = np.mean(z) / N_ELEMENTS
    v[N_ELEMENTS + 1] = np.std(z) / N_ELEMENTS
    return v


def _fingerprints(crystals):
    s = np.array([structure_fingerprint(c) for c in crystals])
    c = np.array([composition_fingerprint(x) for x in crystals])
    return s, c


def _cdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)


def coverage_from_fingerprints(gen_fp, ref_fp, d_struct: float, d_comp: float) -> tuple[float, float]:
    close = (_cdist(gen_fp[0], ref_fp[0]) <= d_struct) & (_cdist(gen_fp[1], ref_fp[1]) <= d_comp)
    return float(close.any(axis=0).mean()), float(close.any(axis=1).mean())


def coverage(generated: Sequence[Crystal], reference: Sequence[Crystal], d_struct: float, d_comp: float):
    """(recall, precision). An item is covered when a single item on the
    other side is within both fingerprint thresholds."""
    if not generated or not reference:
        raise ValueError("coverage needs nonempty generated and reference lists")
    return coverage_from_fingerprints(_fingerprints(generated), _fingerprints(reference), d_struct, d_comp)


def calibrate_coverage_thresholds(reference: Sequence[Crystal], quantile: float = 0.99, seed: int = 0):
    """Thresholds from a random half split of ``reference``: the ``quantile``
    of nearest-neighbour fingerprint distances from one half to the other."""
    if len(reference) < 2:
        raise ValueError("need at least two reference crystals to calibrate")
    idx = np.random.default_rng(seed).permutation(len(reference))
    half = len(idx) // 2
    s, c = _fingerprints(reference)
    a, b = idx[:half], idx[half:]
    d_s = _cdist(s[a], s[b]).min(axis=1)
    d_c = _cdist(c[a], c[b]).min(axis=1)
    floor = 1e-9  # identical fingerprints sit at exactly zero distance
    return max(float(np.quantile(d_s, quantile)), floor), max(float(np.quantile(d_c, quantile)), floor)


def wasserstein_1d(samples_a, samples_b) -> float:
    a, b = np.asarray(samples_a, float).ravel(), np.asarray(samples_b, float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein_1d needs nonempty samples")
    return float(wasserstein_distance(a, b))


# ------------------------------------------------------------ toy potential


@dataclass
class RelaxResult:
    crystal: Crystal
    delta_energy: float
    steps: int
    energies: list = field(default_factory=list)
    converged: bool = False


class _ToyEnergy:
    """Soft-sphere repulsion ((r_i + r_j) / d)^12, truncated at contact with
    value and slope shifted to zero there.

    Variables are Cartesian-scaled coordinates ``u = frac * L0`` and the three
    lengths; angles stay fixed. The image set is frozen at construction so
    the energy is smooth in the variables.
    """

    def __init__(self, crystal: Crystal, relax_lengths: bool = True):
        self.species = crystal.species
        r = np.array([ELEMENTS[s].covalent_radius for s in crystal.species])
        self.sigma = torch.as_tensor(r[:, None] + r[None, :], dtype=torch.float64)
        self.angles = crystal.lattice.angles
        self.l0 = np.array(crystal.lattice.lengths)
        self.relax_lengths = relax_lengths
        # unit-length cell shape; rows scaled by the lengths below
        shape = params_to_matrix(LatticeParams(1.0, 1.0, 1.0, *self.angles))
        self.shape = torch.as_tensor(shape, dtype=torch.float64)
        reach = 1.5 * float(self.sigma.max())
        self.images = torch.as_tensor(_image_range(crystal.matrix(), reach), dtype=torch.float64)
        self.zero = int(np.flatnonzero(~self.images.numpy().any(axis=1))[0])
        n = crystal.n_atoms
        self.pair_weight = torch.full((n, n, len(self.images)), 0.5, dtype=torch.float64)
        self.pair_weight[torch.arange(n), torch.arange(n), self.zero] = 0.0

    def pack(self, crystal: Crystal) -> torch.Tensor:
        u = crystal.frac_coords * self.l0
        return torch.as_tensor(np.concatenate([u.ravel(), crystal.lattice.lengths]), dtype=torch.float64)

    def unpack(self, x: torch.Tensor):
        n = len(self.species)
        lengths = x[3 * n :] if self.relax_lengths else torch.as_tensor(self.l0, dtype=torch.float64)
        frac = x[: 3 * n].reshape(n, 3) / torch.as_tensor(self.l0, dtype=torch.float64)
        return frac, lengths

    def energy(self, x: torch.Tensor) -> torch.Tensor:
        frac, lengths = self.unpack(x)
        # the frozen image set only covers in-cell points; floor has zero gradient
        frac = frac - torch.floor(frac)
        m = self.shape * lengths[:, None]
        diff = frac[None, :, None, :] - frac[:, None, None, :] + self.images[None, None]
        d = torch.linalg.norm(diff @ m, dim=-1)
        d = torch.where(self.pair_weight > 0, d, torch.ones_like(d))
        s = self.sigma[:, :, None]
        overlap = d < s
        d_safe = torch.where(overlap, d, s)
        term = (s / d_safe) ** 12 - 1.0 + 12.0 * (d_safe - s) / s
        return (self.pair_weight * torch.where(overlap, term, torch.zeros_like(term))).sum()

    def value_and_grad(self, x: torch.Tensor):
        x = x.detach().clone().requires_grad_(True)
        e = self.energy(x)
        (g,) = torch.autograd.grad(e, x)
        if not self.relax_lengths:
            g[3 * len(self.species) :] = 0.0
        return e.item(), g.detach()

    def to_crystal(self, x: torch.Tensor, meta) -> Crystal:
        frac, lengths = self.unpack(x.detach())
        return Crystal(self.species, wrap(frac.numpy()), LatticeParams(*lengths.numpy(), *self.angles), dict(meta))


def toy_energy(crystal: Crystal) -> float:
    model = _ToyEnergy(crystal)
    return float(model.energy(model.pack(crystal)))


def toy_relax(
    crystal: Crystal,
    max_steps: int = 500,
    grad_tol: float = 1e-6,
    relax_lengths: bool = True,
    armijo: float = 1e-4,
) -> RelaxResult:
    """Gradient descent with backtracking line search.

    Every accepted step satisfies the Armijo condition, so the energy trace
    is non-increasing. Stops when the gradient norm drops below ``grad_tol``,
    when no step size in the search decreases the energy, or after
    ``max_steps`` accepted steps.
    """
    model = _ToyEnergy(crystal, relax_lengths)
    x = model.pack(crystal)
    e, g = model.value_and_grad(x)
    energies = [e]
    alpha, steps, converged = 1.0, 0, False
    while steps < max_steps:
        gn2 = float(g @ g)
        if gn2 < grad_tol**2:
            converged = True
            break
        while alpha > 1e-14:
            x_new = x - alpha * g
            e_new, g_new = model.value_and_grad(x_new)
            if np.all(x_new[3 * crystal.n_atoms :].numpy() > 0) and e_new <= e - armijo * alpha * gn2:
                break
            alpha *= 0.5
        else:
            converged = True  # no descent step left at machine resolution
            break
        x, e, g = x_new, e_new, g_new
        energies.append(e)
        steps += 1
        alpha = min(alpha * 2.0, 1.0)
    relaxed = model.to_crystal(x, crystal.meta)
    return RelaxResult(relaxed, energies[0] - energies[-1], steps, energies, converged)


# ------------------------------------------------------------ structure matcher


def _proper_signed_permutations() -> list[np.ndarray]:
    ops = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            s = np.zeros((3, 3))
            s[np.arange(3), perm] = signs
            if np.linalg.det(s) > 0:
                ops.append(s)
    return ops


_OPS = _proper_signed_permutations()


@dataclass(frozen=True)
class MatchResult:
    match: bool
    rmsd: float  # Angstrom; inf when no candidate passed the lattice test


def _match_oriented(a: Crystal, b: Crystal, ltol: float, stol: float, angle_tol: float):
    """Best RMSD mapping b onto a over the axis relabelings of b's cell."""
    la = np.array(a.lattice.lengths)
    aa = np.array(a.lattice.angles)
    mb = b.matrix()
    n = a.n_atoms
    sa = np.array(a.species, dtype=object)
    sb = np.array(b.species, dtype=object)
    groups = [(np.flatnonzero(sa == el), np.flatnonzero(sb == el)) for el in sorted(set(a.species))]
    anchor_a, anchor_b = min(groups, key=lambda g: len(g[0]))
    best = np.inf
    for op in _OPS:
        m = op @ mb
        p = matrix_to_params(m)
        lb, ab = np.array(p.lengths), np.array(p.angles)
        if np.any(np.abs(lb - la) > ltol * np.minimum(la, lb)) or np.any(np.abs(ab - aa) > angle_tol):
            continue
        fb = wrap(b.frac_coords @ np.linalg.inv(op))
        avg = 0.5 * (a.matrix() + params_to_matrix(p))
        for j in anchor_b:
            t = torus_log(fb[j], a.frac_coords[anchor_a[0]])
            for _ in range(2):
                shifted = fb + t
                total, perm = 0.0, np.empty(n, dtype=int)
                for ia, ib in groups:
                    d = torus_log(shifted[ib][None, :, :], a.frac_coords[ia][:, None, :]) @ avg
                    cost = (d**2).sum(-1)
                    r, c = linear_sum_assignment(cost)
                    perm[ia[r]] = ib[c]
                    total += cost[r, c].sum()
                # refine the translation for the chosen assignment
                t = t + torus_log(shifted[perm], a.frac_coords).mean(axis=0)
            shifted = fb + t
            d = torus_log(shifted[perm], a.frac_coords) @ avg
            best = min(best, float(np.sqrt((d**2).sum(-1).mean())), float(np.sqrt(total / n)))
    return best


def structure_match(
    c_a: Crystal, c_b: Crystal, ltol: float = 0.2, stol: float = 0.3, angle_tol: float = 5.0
) -> MatchResult:
    """Tolerance-based equivalence after Niggli reduction.

    Cells must agree in composition, lengths within relative ``ltol`` and
    angles within ``angle_tol`` degrees under some relabeling of axes. Atoms
    are then assigned per species under the best global translation; the
    pair matches when RMSD divided by ``(V / n)^(1/3)`` is at most ``stol``.
    Symmetric by construction (both orders are tried).
    """
    if composition(c_a) != composition(c_b):
        return MatchResult(False, float("inf"))
    a, b = niggli_reduce_crystal(c_a), niggli_reduce_crystal(c_b)
    rmsd = min(_match_oriented(a, b, ltol, stol, angle_tol), _match_oriented(b, a, ltol, stol, angle_tol))
    if not np.isfinite(rmsd):
        return MatchResult(False, float("inf"))
    scale = (0.5 * (a.lattice.volume() + b.lattice.volume()) / a.n_atoms) ** (1 / 3)
    return MatchResult(bool(rmsd / scale <= stol), rmsd)


def uniqueness_and_novelty(generated: Sequence[Crystal], training_set: Sequence[Crystal], **match_kw):
    """Greedy equivalence classes over ``generated``.

    Returns (uniqueness_rate, novelty_rate, classes, novel) where ``classes``
    lists member indices per class (first member is the representative) and
    ``novel`` flags each class whose representative matches nothing in
    ``training_set``.
    """
    if not generated:
        raise ValueError("uniqueness needs at least one generated crystal")
    classes: list[list[int]] = []
    by_formula: dict = {}
    for i, c in enumerate(generated):
        for k in by_formula.get(formula(c), []):
            if structure_match(generated[classes[k][0]], c, **match_kw).match:
                classes[k].append(i)
                break
        else:
            by_formula.setdefault(formula(c), []).append(len(classes))
            classes.append([i])
    train_by_formula: dict = {}
    for c in training_set:
        train_by_formula.setdefault(formula(c), []).append(c)
    novel = []
    for members in classes:
        rep = generated[members[0]]
        seen = any(structure_match(rep, t, **match_kw).match for t in train_by_formula.get(formula(rep), []))
        novel.append(not seen)
    return len(classes) / len(generated), float(np.mean(novel)), classes, novel


def nearest_template_match(crystal: Crystal, templates: Sequence[Crystal], **match_kw) -> bool:
    return any(structure_match(crystal, t, **match_kw).match for t in templates if formula(t) == formula(crystal))


# ------------------------------------------------------------ report


@dataclass
class EvalConfig:
    d_struct: float | None = None  # calibrated on the test set when None
    d_comp: float | None = None
    ltol: float = 0.2
    stol: float = 0.3
    angle_tol: float = 5.0
    relax_steps: int = 500
    stability_threshold: float = 0.1  # toy delta energy per atom
    relax: bool = True
    novelty: bool = True


@dataclass
class MetricsReport:
    n_generated: int
    structural_validity_rate: float
    compositional_validity_rate: float
    coverage_recall: float
    coverage_precision: float
    wdist_density: float
    wdist_nel: float
    nary_histogram: dict
    match_rate: float
    mean_rmsd: float
    mean_delta_energy: float
    mean_relax_steps: float
    uniqueness_rate: float
    novelty_rate: float
    proxy_sun_rate: float
    d_struct: float
    d_comp: float
    energy_label: str = TOY_LABEL

    def as_dict(self) -> dict:
        return asdict(self)


def _nan_mean(xs) -> float:
    xs = [x for x in xs if x is not None and np.isfinite(x)]
    return float(np.mean(xs)) if xs else float("nan")


def evaluate(generated: Sequence[Crystal], test_set: Sequence[Crystal], training_set: Sequence[Crystal], config=None):
    """Full proxy report plus per-sample records.

    Coverage, density and element-count distances are computed over the
    structurally valid generations. Match rate, RMSD, relaxation energy and
    steps compare each valid generation to its toy-relaxed self.
    """
    cfg = config or EvalConfig()
    if not generated or not test_set:
        raise ValueError("evaluate needs nonempty generated and test lists")
    d_s, d_c = cfg.d_struct, cfg.d_comp
    if d_s is None or d_c is None:
        cs, cc = calibrate_coverage_thresholds(test_set)
        d_s = cs if d_s is None else d_s
        d_c = cc if d_c is None else d_c
    match_kw = dict(ltol=cfg.ltol, stol=cfg.stol, angle_tol=cfg.angle_tol)

    records = []
    for i, c in enumerate(generated):
        rec = {
            "index": i,
            "formula": formula(c),
            "n_atoms": c.n_atoms,
            "n_ary": n_ary(c),
            "density": density(c),
            "structurally_valid": structural_validity(c),
            "compositionally_valid": compositional_validity(c),
            "delta_energy": None,
            "delta_energy_per_atom": None,
            "relax_steps": None,
            "relax_match": None,
            "relax_rmsd": None,
            "proxy_stable": False,
            "class": None,
            "novel": None,
        }
        if cfg.relax and rec["structurally_valid"]:
            r = toy_relax(c, cfg.relax_steps)
            m = structure_match(c, r.crystal, **match_kw)
            rec.update(
                delta_energy=r.delta_energy,
                delta_energy_per_atom=r.delta_energy / c.n_atoms,
                relax_steps=r.steps,
                relax_match=m.match,
                relax_rmsd=m.rmsd if m.match else None,
                proxy_stable=bool(r.delta_energy / c.n_atoms < cfg.stability_threshold and n_ary(c) >= 2),
            )
        records.append(rec)

    valid = [c for c, r in zip(generated, records) if r["structurally_valid"]]
    if valid:
        recall, precision = coverage_from_fingerprints(_fingerprints(valid), _fingerprints(test_set), d_s, d_c)
        w_rho = wasserstein_1d([density(c) for c in valid], [density(c) for c in test_set])
        w_nel = wasserstein_1d([n_ary(c) for c in valid], [n_ary(c) for c in test_set])
    else:
        recall = precision = 0.0
        w_rho = w_nel = float("nan")

    uniq = nov = sun = 0.0
    if cfg.novelty and valid:
        valid_idx = [i for i, r in enumerate(records) if r["structurally_valid"]]
        uniq, nov, classes, novel = uniqueness_and_novelty(valid, training_set, **match_kw)
        for k, (members, is_novel) in enumerate(zip(classes, novel)):
            for j in members:
                records[valid_idx[j]]["class"] = k
                records[valid_idx[j]]["novel"] = is_novel
        sun_classes = sum(
            1 for members, is_novel in zip(classes, novel) if is_novel and records[valid_idx[members[0]]]["proxy_stable"]
        )
        sun = sun_classes / len(generated)

    relaxed = [r for r in records if r["relax_steps"] is not None]
    report = MetricsReport(
        n_generated=len(generated),
        structural_validity_rate=float(np.mean([r["structurally_valid"] for r in records])),
        compositional_validity_rate=float(np.mean([r["compositionally_valid"] for r in records])),
        coverage_recall=recall,
        coverage_precision=precision,
        wdist_density=w_rho,
        wdist_nel=w_nel,
        nary_histogram=dict(sorted(Counter(r["n_ary"] for r in records).items())),
        match_rate=float(np.mean([r["relax_match"] for r in relaxed])) if relaxed else float("nan"),
        mean_rmsd=_nan_mean(r["relax_rmsd"] for r in relaxed),
        mean_delta_energy=_nan_mean(r["delta_energy"] for r in relaxed),
        mean_relax_steps=_nan_mean(r["relax_steps"] for r in relaxed),
        uniqueness_rate=uniq,
        novelty_rate=nov,
        proxy_sun_rate=sun,
        d_struct=d_s,
        d_comp=d_c,
    )
    return report, records

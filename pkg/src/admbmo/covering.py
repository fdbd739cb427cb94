"""Admissible coverings and the constructions that produce them."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from itertools import product
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .filtration import (AtomicPartition, Filtration, intersection_measures,
                         intersection_trivial)
from .space import MeasureSpace, WeightFamily, build_box_space, build_custom_space


# ---------------------------------------------------------------------------
# admissibility constant


@dataclass
class AdmissibilityResult:
    c: float
    side: str
    sup_a: float
    sup_b: float
    per_atom_a: np.ndarray
    per_atom_b: np.ndarray
    terminal_a: Optional[float] = None
    terminal_b: Optional[float] = None

    def table(self) -> list:
        rows = [{"side": "a", "atom": j, "sum": float(v)} for j, v in enumerate(self.per_atom_a)]
        rows += [{"side": "b", "atom": j, "sum": float(v)} for j, v in enumerate(self.per_atom_b)]
        return rows


def _side_sums(pa: AtomicPartition, pb: AtomicPartition):
    inc = intersection_measures(pa, pb)
    deg_a = np.diff(inc.indptr)  # |R_A|
    deg_b = np.bincount(inc.indices, minlength=pb.n_atoms)  # |R_B|
    sq = inc.multiply(inc).tocoo()
    val = sq.data / (pa.masses[sq.row] * pb.masses[sq.col])
    sum_a = np.bincount(sq.row, weights=val * deg_b[sq.col], minlength=pa.n_atoms)
    sum_b = np.bincount(sq.col, weights=val * deg_a[sq.row], minlength=pb.n_atoms)
    return sum_a, sum_b, deg_a, deg_b


def _sup_excluding(vals, excluded):
    keep = [v for j, v in enumerate(vals) if j not in excluded]
    return float(max(keep)) if keep else 0.0


def admissibility_constant(pa: AtomicPartition, pb: AtomicPartition,
                           space: Optional[MeasureSpace] = None,
                           check_roles: bool = True) -> AdmissibilityResult:
    """min over the two sides of sup_A sum_{B in R_A} |R_B| mu(A∩B)^2/(mu(A)mu(B)).

    Distinguished atoms are left out of the suprema; on truncated spaces the
    terminal remainder atoms are left out as well and their sums are
    reported in ``terminal_a`` / ``terminal_b``.
    """
    space = space or pa.space
    if pb.space.n_cells != pa.space.n_cells:
        raise ValueError("partitions live on different spaces")
    if check_roles:
        for p in (pa, pb):
            if space.truncated and p.distinguished is not None:
                raise ValueError("truncated infinite-measure spaces carry no distinguished atoms")
            if not space.truncated and p.distinguished is None:
                raise ValueError("finite-measure coverings need distinguished atoms")
    if not intersection_trivial(pa, pb):
        raise ValueError("covering invalid: the common sigma-algebra is nontrivial")
    if np.any(pa.masses <= 0) or np.any(pb.masses <= 0):
        raise ValueError("atom of zero measure")
    sum_a, sum_b, _, _ = _side_sums(pa, pb)
    sup_a = _sup_excluding(sum_a, pa.excluded)
    sup_b = _sup_excluding(sum_b, pb.excluded)
    side = "a" if sup_a <= sup_b else "b"
    return AdmissibilityResult(
        c=min(sup_a, sup_b), side=side, sup_a=sup_a, sup_b=sup_b,
        per_atom_a=sum_a, per_atom_b=sum_b,
        terminal_a=None if pa.terminal is None else float(sum_a[pa.terminal]),
        terminal_b=None if pb.terminal is None else float(sum_b[pb.terminal]),
    )


def incidence_degrees(pa: AtomicPartition, pb: AtomicPartition):
    """(|R_A| per a-atom, |R_B| per b-atom)."""
    _, _, da, db = _side_sums(pa, pb)
    return da, db


# ---------------------------------------------------------------------------
# covering object


@dataclass
class AdmissibleCovering:
    space: MeasureSpace
    pa: AtomicPartition
    pb: AtomicPartition
    filt_a: Optional[Filtration] = None
    filt_b: Optional[Filtration] = None
    construction: str = "custom"
    parameters: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    result: Optional[AdmissibilityResult] = None

    def __post_init__(self):
        if self.filt_a is None:
            self.filt_a = Filtration([self.pa])
        if self.filt_b is None:
            self.filt_b = Filtration([self.pb])
        if not self.filt_a.first.same_as(self.pa) or not self.filt_b.first.same_as(self.pb):
            raise ValueError("level 1 of each filtration must be the covering partition")
        self.trivial_intersection = intersection_trivial(self.pa, self.pb)
        if self.result is None and self.trivial_intersection:
            self.result = admissibility_constant(self.pa, self.pb, self.space)

    @property
    def c_value(self) -> float:
        return float("nan") if self.result is None else self.result.c

    @property
    def achieving_side(self) -> Optional[str]:
        return None if self.result is None else self.result.side

    @property
    def admissible(self) -> bool:
        return self.trivial_intersection and self.c_value < 1

    def side_constant(self, side: str) -> float:
        return self.result.sup_a if side == "a" else self.result.sup_b

    def partition(self, side: str) -> AtomicPartition:
        return self.pa if side == "a" else self.pb

    def filtration(self, side: str) -> Filtration:
        return self.filt_a if side == "a" else self.filt_b

    def metadata(self) -> dict:
        return {
            "c_value": self.c_value,
            "achieving_side": self.achieving_side,
            "construction": self.construction,
            "parameters": dict(self.parameters),
        }


def covering_from_atoms(space: MeasureSpace, atoms_a, atoms_b, a0=None, b0=None,
                        **kw) -> AdmissibleCovering:
    pa = AtomicPartition.from_atoms(space, atoms_a, distinguished=a0, label="a")
    pb = AtomicPartition.from_atoms(space, atoms_b, distinguished=b0, label="b")
    return AdmissibleCovering(space, pa, pb, **kw)


def three_cell_covering() -> AdmissibleCovering:
    """Smallest worked example: mu = (0.5, 0.3, 0.2)."""
    sp = build_custom_space([0.5, 0.3, 0.2])
    return covering_from_atoms(sp, [[0], [1, 2]], [[0, 1], [2]], a0=1, b0=0,
                               construction="three_cell")


# ---------------------------------------------------------------------------
# corona constructions


def corona_targets(lam: float, depth: int) -> list:
    """Cumulative masses a1, b1, a2, b2, ...: each step adds lam times the last set plus one."""
    t = [1.0]
    for _ in range(2 * depth):
        same = t[-2] if len(t) >= 2 else 0.0
        t.append(same + lam * t[-1] + 1.0)
    return t


def corona_covering_infinite(lam: float, depth: int, space: Optional[MeasureSpace] = None,
                             targets: Optional[Sequence[float]] = None) -> AdmissibleCovering:
    """Corona covering of a truncated infinite-measure space.

    Nested sets Ã1 ⊊ B̃1 ⊊ Ã2 ⊊ ... ⊊ B̃_depth with
    mu(B̃j∖B̃j-1) > lam mu(Ãj) and mu(Ãj+1∖Ãj) > lam mu(B̃j).  The cells beyond
    Ã_depth (resp. B̃_depth) form one terminal atom per side.
    """
    if not lam > 4:
        raise ValueError("lambda must exceed 4")
    depth = int(depth)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    n_sets = 2 * depth
    if targets is None:
        tg = corona_targets(lam, depth)
    else:
        tg = [float(x) for x in targets]
        while len(tg) < n_sets + 1:
            fam_prev = tg[-2] if len(tg) >= 2 else 0.0
            tg.append(fam_prev + lam * tg[-1] + 1.0)
    if space is None:
        rings = np.diff(np.concatenate([[0.0], tg[: n_sets + 1]]))
        space = build_custom_space(rings, truncated=True)
        ends = list(range(1, n_sets + 1))
    else:
        if not space.truncated:
            raise ValueError("space must be flagged as a truncated infinite-measure space")
        cum = np.cumsum(space.weights)
        ends = []
        for k in range(n_sets):
            j = int(np.searchsorted(cum, tg[k] * (1 - 1e-12), side="left")) + 1
            if ends:
                j = max(j, ends[-1] + 1)
            if j >= space.n_cells:
                raise ValueError(f"insufficient truncated mass: achievable depth {len(ends) // 2}")
            ends.append(j)
    if ends[-1] >= space.n_cells:
        raise ValueError(f"insufficient truncated mass: achievable depth {depth - 1}")
    w = space.weights
    set_mass = [math.fsum(w[:e]) for e in ends]
    a_sets, b_sets = set_mass[0::2], set_mass[1::2]
    ratios = []
    for j in range(depth):
        prev_b = b_sets[j - 1] if j > 0 else 0.0
        ratios.append((b_sets[j] - prev_b) / a_sets[j])
        if j + 1 < depth:
            ratios.append((a_sets[j + 1] - a_sets[j]) / b_sets[j])
    ratios.append((math.fsum(w) - a_sets[-1]) / b_sets[-1])
    if min(ratios[:-1]) <= lam:
        raise ValueError("the requested masses do not satisfy the ratio condition")
    lab_a = np.full(space.n_cells, depth, dtype=int)
    lab_b = np.full(space.n_cells, depth, dtype=int)
    a_ends, b_ends = ends[0::2], ends[1::2]
    start = 0
    for j, e in enumerate(a_ends):
        lab_a[start:e] = j
        start = e
    start = 0
    for j, e in enumerate(b_ends):
        lab_b[start:e] = j
        start = e
    pa = AtomicPartition(space, lab_a, terminal=depth, label="a")
    pb = AtomicPartition(space, lab_b, terminal=depth, label="b")
    inc = intersection_measures(pa, pb).toarray()
    terms = []
    for j in range(depth):
        t1 = 0.0 if j == 0 else inc[j, j - 1] ** 2 / (pa.masses[j] * pb.masses[j - 1])
        t2 = inc[j, j] ** 2 / (pa.masses[j] * pb.masses[j])
        terms.append((float(t1), float(t2)))
    cov = AdmissibleCovering(space, pa, pb, construction="corona_infinite",
                             parameters={"lambda": lam, "depth": depth})
    cov.checks = {"set_ratios": ratios, "per_term": terms,
                  "max_term": max(max(t) for t in terms), "paper_bound": 4.0 / lam}
    return cov


def corona_ring_masses(zeta: float, depth: int) -> np.ndarray:
    """Masses of Ã0, B̃0∖Ã0, Ã1∖B̃0, ..., B̃depth∖Ãdepth, then the tail."""
    k = np.arange(2 * depth + 2)
    rings = (1 - zeta) * zeta**k
    return np.concatenate([rings, [zeta ** (2 * depth + 2)]])


def corona_covering_finite(zeta: float, depth: int,
                           space: Optional[MeasureSpace] = None) -> AdmissibleCovering:
    """Corona covering of a probability space with parameter zeta < 1/3.

    The final a- and b-atoms absorb the tail so both partitions cover Ω.
    Without a space argument the cells are the rings themselves, so every
    mass identity is exact.  A normalized space is split by cumulative mass.
    """
    if not 0 < zeta < 1 / 3:
        raise ValueError("zeta must lie in (0, 1/3)")
    depth = int(depth)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    rings = corona_ring_masses(zeta, depth)
    if space is None:
        space = build_custom_space(rings)
        ring_of = np.arange(len(rings))
    else:
        if not space.normalized:
            raise ValueError("space must be normalized")
        cum = np.cumsum(space.weights) - space.weights / 2
        ring_of = np.searchsorted(np.cumsum(rings)[:-1], cum, side="right")
        if len(np.unique(ring_of)) != len(rings):
            raise ValueError("space too coarse to resolve the requested depth")
    # ring r: a-atom index, b-atom index
    r = np.arange(len(rings))
    ring_a = np.minimum((r + 1) // 2, depth + 1)
    ring_b = np.minimum(r // 2, depth)
    pa = AtomicPartition(space, ring_a[ring_of], distinguished=0, label="a")
    pb = AtomicPartition(space, ring_b[ring_of], distinguished=0, label="b")
    cov = AdmissibleCovering(space, pa, pb, construction="corona_finite",
                             parameters={"zeta": zeta, "depth": depth})
    inc = intersection_measures(pa, pb).toarray()
    brackets = []
    for j in range(1, depth + 1):
        t1 = inc[j, j - 1] ** 2 / (pa.masses[j] * pb.masses[j - 1])
        t2 = inc[j, j] ** 2 / (pa.masses[j] * pb.masses[j])
        brackets.append(float(t1 + t2))
    cov.checks = {"bracket_sup": max(brackets), "brackets": brackets,
                  "paper_bracket_bound": 2 * zeta / (1 + zeta),
                  "a_masses": pa.masses.tolist(), "b_masses": pb.masses.tolist()}
    return cov


def corona_mass_formulas(zeta: float, depth: int) -> dict:
    """Closed-form atom masses from the nested construction."""
    a = [1 - zeta, zeta * (1 - zeta**2)]
    for _ in range(2, depth + 1):
        a.append(zeta**2 * a[-1])
    b = [zeta ** (2 * j) * (1 - zeta**2) for j in range(depth)]
    return {"a": a, "b": b}


# ---------------------------------------------------------------------------
# box geometry helpers


Box = tuple  # (lo ndarray, hi ndarray)


def _cube(center, half):
    c = np.asarray(center, dtype=float)
    return (c - half, c + half)


def _grid_cubes(lo, hi, k):
    """Split the box [lo, hi] into k^n equal boxes."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    step = (hi - lo) / k
    out = []
    for idx in product(range(k), repeat=len(lo)):
        i = np.array(idx)
        out.append((lo + i * step, lo + (i + 1) * step))
    return out


def _inside(box, outer, tol=1e-12):
    return bool(np.all(box[0] >= outer[0] - tol) and np.all(box[1] <= outer[1] + tol))


def _dyadic_children(box):
    return _grid_cubes(box[0], box[1], 2)


def _punctured(outer, inner, k):
    """Cubes of the k-grid of ``outer`` that are not inside ``inner``."""
    return [c for c in _grid_cubes(*outer, k) if not _inside(c, inner)]


def _levels_from_pieces(atoms_pieces, n_levels):
    """Level 1: atom = union of pieces; level 2: one atom per piece; deeper: dyadic."""
    levels = [[list(p) for p in atoms_pieces]]
    if n_levels >= 2:
        levels.append([[b] for p in atoms_pieces for b in p])
    for _ in range(3, n_levels + 1):
        levels.append([[c] for atom in levels[-1] for c in _dyadic_children(atom[0])])
    return levels


def _breakpoints(all_levels, n):
    pts = [set() for _ in range(n)]
    for levels in all_levels:
        for atom in levels[-1]:
            for lo, hi in atom:
                for d in range(n):
                    pts[d].add(round(float(lo[d]), 12))
                    pts[d].add(round(float(hi[d]), 12))
        for atom in levels[0]:
            for lo, hi in atom:
                for d in range(n):
                    pts[d].add(round(float(lo[d]), 12))
                    pts[d].add(round(float(hi[d]), 12))
    return [np.array(sorted(p)) for p in pts]


def _refine(breaks, r):
    if r <= 1:
        return breaks
    out = []
    for b in breaks:
        fine = [np.linspace(b[i], b[i + 1], r + 1)[:-1] for i in range(len(b) - 1)]
        out.append(np.concatenate(fine + [b[-1:]]))
    return out


def _labels_for(space, atoms):
    c = space.centers
    lab = np.full(space.n_cells, -1, dtype=int)
    for j, atom in enumerate(atoms):
        for lo, hi in atom:
            hit = np.all((c > lo) & (c < hi), axis=1)
            lab[hit] = j
    if np.any(lab < 0):
        raise ValueError("grid misalignment: some cells are not covered by the construction")
    return lab


def _build_filtration(space, levels, **roles):
    parts = []
    for k, atoms in enumerate(levels):
        kw = roles if k == 0 else {}
        parts.append(AtomicPartition(space, _labels_for(space, atoms), **kw))
    # label ids follow the atom order because labels are assigned in order
    return Filtration(parts)


def _check_alignment(space, levels):
    # every box must be a union of cells
    lo, hi = space.lower, space.upper
    for atoms in levels:
        for atom in atoms:
            for blo, bhi in atom:
                ov = np.clip(np.minimum(hi, bhi) - np.maximum(lo, blo), 0, None)
                frac = np.prod(ov, axis=1) / space.volumes
                if np.any((frac > 1e-9) & (frac < 1 - 1e-9)):
                    raise ValueError("grid misalignment")


# ---------------------------------------------------------------------------
# doubling measure in the plane


def doubling_covering_r2(corona_levels: int = 3, filtration_levels: int = 3,
                         refine: int = 1) -> AdmissibleCovering:
    """Lebesgue covering of the plane by the squares Q_s = 3^s [-1/2, 1/2]^2.

    A1 = Q0, B1 = Q1, A_s = Q_{2s-2}∖Q_{2s-4}, B_s = Q_{2s-1}∖Q_{2s-3}.  The
    space is the truncation to Q_{2S-1}; the a-side remainder Q_{2S-1}∖Q_{2S-2}
    is the terminal atom.  Level 2 splits each atom into the 1/9-subcubes.
    """
    S = int(corona_levels)
    if S < 2:
        raise ValueError("levels must be >= 2")
    if filtration_levels < 1:
        raise ValueError("filtration_levels must be >= 1")
    half = lambda s: 0.5 * 3.0**s
    Q = lambda s: _cube([0, 0], half(s))
    a_pieces = [_grid_cubes(*Q(0), 9)]
    for s in range(2, S + 1):
        a_pieces.append(_punctured(Q(2 * s - 2), Q(2 * s - 4), 9))
    a_pieces.append(_punctured(Q(2 * S - 1), Q(2 * S - 2), 3))  # terminal
    b_pieces = [_grid_cubes(*Q(1), 9)]
    for s in range(2, S + 1):
        b_pieces.append(_punctured(Q(2 * s - 1), Q(2 * s - 3), 9))
    lv_a = _levels_from_pieces(a_pieces, filtration_levels)
    lv_b = _levels_from_pieces(b_pieces, filtration_levels)
    breaks = _refine(_breakpoints([lv_a, lv_b], 2), refine)
    space = build_box_space(breaks, WeightFamily.lebesgue(), truncated=True)
    _check_alignment(space, lv_a + lv_b)
    fa = _build_filtration(space, lv_a, terminal=len(a_pieces) - 1, label="a")
    fb = _build_filtration(space, lv_b, label="b")
    cov = AdmissibleCovering(space, fa.first, fb.first, fa, fb, construction="doubling_r2",
                             parameters={"corona_levels": S,
                                         "filtration_levels": filtration_levels})
    cov.checks = {"cells": space.n_cells}
    return cov


# ---------------------------------------------------------------------------
# power-law weight


def mu_beta_bound(n: int, beta: float) -> float:
    """8^n (sqrt(n) / (sqrt(n) + 1/8))^beta."""
    rn = math.sqrt(n)
    return 8.0**n * (rn / (rn + 0.125)) ** beta


def annuli_covering_mu_beta(n: int, beta: float, lam: float, levels: int,
                            filtration_levels: int = 2, refine: int = 1,
                            cell_side: Optional[float] = None) -> AdmissibleCovering:
    """Covering for the weight min{1, |x|^-beta} by the cubes Q_s = 2^s [-lam, lam]^n.

    (A0, B0) = (Q0, Q1) and (A_s, B_s) = (Q_{2s}∖Q_{2s-2}, Q_{2s+1}∖Q_{2s-1}) for
    s = 1..levels.  The space is the truncation to Q_{2S+1}; its a-side
    remainder Q_{2S+1}∖Q_{2S} is an ordinary last atom.  With ``cell_side``
    the cells form a uniform grid of that side instead of the coarsest
    common refinement.
    """
    if not lam > 1:
        raise ValueError("lambda must exceed 1")
    S = int(levels)
    if S < 1:
        raise ValueError("levels must be >= 1")
    zero = np.zeros(n)
    Q = lambda s: _cube(zero, lam * 2.0**s)
    a_pieces = [[Q(0)]] + [_punctured(Q(2 * s), Q(2 * s - 2), 8) for s in range(1, S + 1)]
    a_pieces.append(_punctured(Q(2 * S + 1), Q(2 * S), 4))
    b_pieces = [[Q(1)]] + [_punctured(Q(2 * s + 1), Q(2 * s - 1), 8) for s in range(1, S + 1)]
    lv_a = _levels_from_pieces(a_pieces, filtration_levels)
    lv_b = _levels_from_pieces(b_pieces, filtration_levels)
    if cell_side is not None:
        R = lam * 2.0 ** (2 * S + 1)
        k = int(round(2 * R / cell_side))
        if abs(k * cell_side - 2 * R) > 1e-9 * R:
            raise ValueError("grid misalignment: cell_side must divide the domain side")
        breaks = [np.linspace(-R, R, k + 1)] * n
    else:
        breaks = _refine(_breakpoints([lv_a, lv_b], n), refine)
    space = build_box_space(breaks, WeightFamily.power_law(beta))
    _check_alignment(space, lv_a + lv_b)
    fa = _build_filtration(space, lv_a, distinguished=0, label="a")
    fb = _build_filtration(space, lv_b, distinguished=0, label="b")
    cov = AdmissibleCovering(space, fa.first, fb.first, fa, fb, construction="annuli_mu_beta",
                             parameters={"n": n, "beta": beta, "lambda": lam, "levels": S,
                                         "filtration_levels": filtration_levels})
    inc = intersection_measures(cov.pa, cov.pb).toarray()
    ma, mb = cov.pa.masses, cov.pb.masses
    first = [float(inc[s, s - 1] / mb[s - 1]) for s in range(1, S + 1)]
    second = [float(inc[s, s] / ma[s]) for s in range(1, S + 1)]
    da, db = incidence_degrees(cov.pa, cov.pb)
    cov.checks = {
        "ratio_prev": first, "ratio_same": second,
        "max_ratio": max(first + second),
        "max_degree": int(max(da.max(), db.max())),
        "closed_form_bound": mu_beta_bound(n, beta),
        "cells": space.n_cells,
    }
    return cov


# ---------------------------------------------------------------------------
# exponential weights


def _maximal_cubes(top, excluded, K, alpha, min_side):
    """Maximal dyadic cubes below ``top`` avoiding ``excluded`` with l <= K|c|^(1-alpha)."""
    out = []
    stack = list(top)
    while stack:
        lo, hi = stack.pop()
        side = float(hi[0] - lo[0])
        if _inside((lo, hi), excluded):
            continue
        meets = np.all(hi > excluded[0] + 1e-12) and np.all(lo < excluded[1] - 1e-12)
        c = (lo + hi) / 2
        r = float(np.linalg.norm(c))
        if not meets and (r > 0 and side <= K * r ** (1 - alpha) * (1 + 1e-12)):
            out.append((lo, hi))
        elif side > min_side * (1 + 1e-12):
            stack.extend(_dyadic_children((lo, hi)))
        elif not meets:
            out.append((lo, hi))
    # largest first, then lexicographic lower corner
    out.sort(key=lambda b: (-(b[1][0] - b[0][0]), tuple(b[0])))
    return out


def _clip(box, dom):
    lo = np.maximum(box[0], dom[0])
    hi = np.minimum(box[1], dom[1])
    if np.any(hi <= lo + 1e-12):
        return None
    return (lo, hi)


def _exp_tail_extent(alpha, K, sign):
    if sign == "growth":
        return 4 * K
    E = 2 * K
    # radial tail beyond E below 1e-16 in relative terms
    while math.exp(-(E**alpha)) * max(E, 1.0) ** 2 > 1e-16 * math.exp(-(K**alpha)) and E < 2**30:
        E *= 2
    return E


def _exp_build(n, alpha, sign, K, extent, filtration_levels, refine, min_side):
    E = float(extent)
    dom = (-E * np.ones(n), E * np.ones(n))
    A0 = (-K * np.ones(n), K * np.ones(n))
    top_a = _grid_cubes(dom[0], dom[1], 2)
    a_cubes = _maximal_cubes(top_a, A0, K, alpha, min_side)
    if not a_cubes:
        raise ValueError("extent too small to contain A0 and one ring of atoms")
    dist = [float(np.linalg.norm((lo + hi) / 2)) for lo, hi in a_cubes]
    best = min(range(len(a_cubes)), key=lambda j: dist[j])
    L = float(a_cubes[best][1][0] - a_cubes[best][0][0])
    t = L / 3
    B0 = (A0[0] + t, A0[1] + t)
    top_b = []
    for idx in product((-2, -1, 0), repeat=n):
        lo = t + np.array(idx, dtype=float) * E
        top_b.append((lo, lo + E))
    b_raw = _maximal_cubes(top_b, B0, K, alpha, min_side)
    b_cubes = [c for c in (_clip(b, dom) for b in b_raw) if c is not None]
    b0c = _clip(B0, dom)
    a_pieces = [[A0]] + [[c] for c in a_cubes]
    b_pieces = [[b0c]] + [[c] for c in b_cubes]
    lv_a = [a_pieces]
    lv_b = [b_pieces]
    for _ in range(2, filtration_levels + 1):
        lv_a.append([[c] for atom in lv_a[-1] for c in _dyadic_children(atom[0])])
        lv_b.append([[c] for atom in lv_b[-1] for c in _dyadic_children(atom[0])])
    breaks = _refine(_breakpoints([lv_a, lv_b], n), refine)
    fam = WeightFamily.exp_decay(alpha) if sign == "decay" else WeightFamily.exp_growth(alpha)
    space = build_box_space(breaks, fam, truncated=(sign == "growth"))
    return space, lv_a, lv_b, L, a_cubes, b_cubes


def maximal_cube_covering_exp(n: int, alpha: float, sign: str = "decay",
                              K: Optional[float] = None, extent: Optional[float] = None,
                              filtration_levels: int = 2, refine: int = 1,
                              eps: Optional[float] = None, k_max: int = 10,
                              min_side: float = 2.0**-12) -> AdmissibleCovering:
    """Maximal dyadic cubes outside A0 = [-K, K]^n with l(A) <= K |c_A|^(1-alpha).

    The b-side uses the dyadic grid shifted by L/3 (1, ..., 1), L the side of
    the a-atom nearest to the origin, and B0 = A0 + (L/3)(1, ..., 1).  When
    ``K`` is omitted it is doubled from 2 until the mass and admissibility
    checks pass.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if sign not in ("decay", "growth"):
        raise ValueError("sign must be 'decay' or 'growth'")
    if K is not None:
        kk = math.log2(K)
        if K < 1 or abs(kk - round(kk)) > 1e-12:
            raise ValueError("K must be a power of two")
        candidates = [float(K)]
    else:
        candidates = [2.0**k for k in range(1, k_max + 1)]
    last = None
    for Kc in candidates:
        E = extent if extent is not None else _exp_tail_extent(alpha, Kc, sign)
        if E < 2 * Kc:
            raise ValueError("extent too small to contain A0 and one ring of atoms")
        cov = _exp_assemble(n, alpha, sign, Kc, E, filtration_levels, refine, eps, min_side)
        last = cov
        if K is not None or (cov.checks["mass_ok"] and cov.admissible):
            return cov
    if K is None:
        raise ValueError("K too small for requested epsilon (no K up to 2^k_max works)")
    return last


def _exp_assemble(n, alpha, sign, K, E, filtration_levels, refine, eps, min_side):
    space, lv_a, lv_b, L, a_cubes, b_cubes = _exp_build(
        n, alpha, sign, K, E, filtration_levels, refine, min_side)
    _check_alignment(space, lv_a + lv_b)
    if sign == "decay":
        fa = _build_filtration(space, lv_a, distinguished=0, label="a")
        fb = _build_filtration(space, lv_b, distinguished=0, label="b")
    else:
        fa = _build_filtration(space, lv_a, label="a")
        fb = _build_filtration(space, lv_b, label="b")
        fa, fb = _growth_terminals(space, fa, fb, E)
    cov = AdmissibleCovering(space, fa.first, fb.first, fa, fb, construction="maximal_cube_exp",
                             parameters={"n": n, "alpha": alpha, "sign": sign, "K": K,
                                         "extent": E, "filtration_levels": filtration_levels})
    da, db = incidence_degrees(cov.pa, cov.pb)
    Cn = int(max(da.max(), db.max()))
    eps_v = eps if eps is not None else 1.0 / (3 * Cn)
    inc = intersection_measures(cov.pa, cov.pb)
    frac = float(inc[0, 0] / space.total_mass)
    low = []
    for side, cubes in (("a", a_cubes), ("b", b_cubes)):
        for lo, hi in cubes:
            c = (lo + hi) / 2
            r = float(np.linalg.norm(c))
            ell = float(np.max(hi - lo))
            if ell < (K / 3) * r ** (1 - alpha) * (1 - 1e-12):
                clipped = bool(np.any(np.isclose(np.abs(lo), E)) or np.any(np.isclose(np.abs(hi), E)))
                low.append({"side": side, "center_norm": r, "side_length": ell,
                            "clipped": clipped})
    ratios = atom_dilation_ratios(cov, 3.0)
    cov.checks = {
        "K": K, "L": L, "eps": eps_v, "C_n": Cn, "mass_fraction_A0B0": frac,
        "mass_ok": frac > 1 - eps_v, "short_atoms": low, "cells": space.n_cells,
        "beta_hat": float(ratios.max()),
    }
    return cov


def _growth_terminals(space, fa, fb, E):
    """Merge boundary-touching atoms into one terminal atom per side."""
    out = []
    for f in (fa, fb):
        p = f.first
        touch = [j for j, a in enumerate(p.atoms)
                 if np.any(np.isclose(np.abs(space.lower[a]), E))
                 or np.any(np.isclose(np.abs(space.upper[a]), E))]
        lab = p.labels.copy()
        keep = sorted(set(range(p.n_atoms)) - set(touch))
        remap = {j: i for i, j in enumerate(keep)}
        term = len(keep)
        lab = np.array([remap.get(int(l), term) for l in lab])
        first = AtomicPartition(space, lab, terminal=term if touch else None, label=p.label)
        out.append(Filtration([first] + [lev for lev in f.levels[1:]]))
    return out


# ---------------------------------------------------------------------------
# orderings, coarsening, concentration


@dataclass
class AtomOrdering:
    a_seq: list
    b_seq: list
    a_witness: list
    b_witness: list

    def sequence(self, side: str) -> list:
        return self.a_seq if side == "a" else self.b_seq


def _bfs(inc_bool, start):
    """Order the row atoms so each new one shares a column atom with a predecessor."""
    n_rows = inc_bool.shape[0]
    rows_of_col = inc_bool.T.tocsr()
    seen = np.zeros(n_rows, dtype=bool)
    order, witness = [start], [None]
    seen[start] = True
    q = deque([start])
    while q:
        r = q.popleft()
        cols = np.sort(inc_bool[r].indices)
        for c in cols:
            for r2 in np.sort(rows_of_col[c].indices):
                if not seen[r2]:
                    seen[r2] = True
                    order.append(int(r2))
                    witness.append(int(c))
                    q.append(r2)
    if len(order) != n_rows:
        raise ValueError("incidence graph is disconnected")
    return order, witness


def atom_ordering(cov: AdmissibleCovering) -> AtomOrdering:
    """Breadth-first orderings starting from the distinguished atoms."""
    if not cov.trivial_intersection:
        raise ValueError("incidence graph is disconnected")
    inc = intersection_measures(cov.pa, cov.pb)
    inc.data[:] = 1.0
    sa = cov.pa.distinguished if cov.pa.distinguished is not None else 0
    sb = cov.pb.distinguished if cov.pb.distinguished is not None else 0
    a_seq, a_w = _bfs(inc, sa)
    b_seq, b_w = _bfs(inc.T.tocsr(), sb)
    return AtomOrdering(a_seq, b_seq, a_w, b_w)


def check_ordering(cov: AdmissibleCovering, ordering: AtomOrdering) -> bool:
    """Each new atom meets a partner atom that also meets the earlier union."""
    inc = intersection_measures(cov.pa, cov.pb).toarray() > 0
    for seq, mat in ((ordering.a_seq, inc), (ordering.b_seq, inc.T)):
        for m in range(1, len(seq)):
            prev = np.any(mat[seq[:m]], axis=0)
            if not np.any(prev & mat[seq[m]]):
                return False
    return True


def coarsen(p: AtomicPartition, m: int, order: Sequence[int]) -> AtomicPartition:
    """Merge the first m+1 atoms of ``order`` into a single distinguished atom."""
    if m < 0:
        raise ValueError("m must be >= 0")
    if m + 1 > p.n_atoms:
        raise ValueError("m exceeds the atom count")
    merged = set(int(j) for j in order[: m + 1])
    rest = [j for j in range(p.n_atoms) if j not in merged]
    remap = np.empty(p.n_atoms, dtype=int)
    for j in merged:
        remap[j] = 0
    for i, j in enumerate(rest, start=1):
        remap[j] = i
    term = None
    if p.terminal is not None and p.terminal not in merged:
        term = int(remap[p.terminal])
    return AtomicPartition(p.space, remap[p.labels], distinguished=0, terminal=term,
                           label=p.label)


def coarsen_covering(cov: AdmissibleCovering, m: int,
                     ordering: Optional[AtomOrdering] = None):
    ordering = ordering or atom_ordering(cov)
    return (coarsen(cov.pa, m, ordering.a_seq), coarsen(cov.pb, m, ordering.b_seq))


@dataclass
class ConcentrationResult:
    lhs: float
    rhs: float
    c: float
    holds: bool
    r_atoms: list


def concentration_check(cov: AdmissibleCovering, family: Sequence[int], side: str = "a",
                        c: Optional[float] = None) -> ConcentrationResult:
    """mu(F) <= c mu(R_F), R_F the union of opposite atoms meeting the family F."""
    p = cov.partition(side)
    family = sorted(set(int(j) for j in family))
    if p.distinguished is not None and p.distinguished in family:
        raise ValueError("the family must exclude the distinguished atom")
    c = cov.c_value if c is None else c
    if not family:
        return ConcentrationResult(0.0, 0.0, c, True, [])
    inc = intersection_measures(cov.pa, cov.pb)
    if side == "b":
        inc = inc.T.tocsr()
    q = cov.pb if side == "a" else cov.pa
    r = sorted(set(np.concatenate([inc[j].indices for j in family]).tolist()))
    lhs = math.fsum(p.masses[family])
    rhs = math.fsum(q.masses[r])
    return ConcentrationResult(lhs, rhs, c, lhs <= c * rhs * (1 + 1e-12), r)


# ---------------------------------------------------------------------------
# doubling atoms


@dataclass
class DoublingResult:
    holds: bool
    components: list


def _components(space: MeasureSpace, cells: np.ndarray) -> list:
    if space.grid_shape is not None:
        shape = space.grid_shape
        mask = np.zeros(space.n_cells, dtype=bool)
        mask[cells] = True
        lab, k = ndimage.label(mask.reshape(shape))
        lab = lab.ravel()
        return [np.flatnonzero(lab == j) for j in range(1, k + 1)]
    # generic: boxes touching along a face
    lo, hi = space.lower[cells], space.upper[cells]
    n = len(cells)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        ov = np.minimum(hi[i], hi) - np.maximum(lo[i], lo)
        touch = np.all(ov >= -1e-12, axis=1) & (np.sum(ov > 1e-12, axis=1) >= lo.shape[1] - 1)
        for j in np.flatnonzero(touch):
            a, b = find(i), find(j)
            if a != b:
                parent[a] = b
    roots = {}
    for i in range(n):
        roots.setdefault(find(i), []).append(cells[i])
    return [np.array(v) for v in roots.values()]


def enclosing_cube(space: MeasureSpace, cells) -> tuple:
    """Smallest l-infinity ball centered at the bounding-box center."""
    lo = space.lower[cells].min(axis=0)
    hi = space.upper[cells].max(axis=0)
    c = (lo + hi) / 2
    r = float(np.max(hi - lo)) / 2
    return c, r


def doubling_atom_check(space: MeasureSpace, cells, C0: float, alpha: float, beta: float,
                        pieces: Optional[list] = None) -> DoublingResult:
    """(C0, alpha, beta)-doubling test for a set of cells.

    The set is split into grid-connected components (or the given
    ``pieces``); each piece sits in its enclosing cube B, and the test asks
    for at most C0 pieces, mu(alpha B) <= beta mu(B) and mu(B) <= C0 mu(piece).
    """
    if not space.has_geometry:
        raise ValueError("doubling checks need geometry")
    cells = np.asarray(cells, dtype=int)
    comps = pieces if pieces is not None else _components(space, cells)
    rows = []
    ok = len(comps) <= C0
    for comp in comps:
        c, r = enclosing_cube(space, comp)
        mb = space.box_measure(c - r, c + r)
        mab = space.box_measure(c - alpha * r, c + alpha * r)
        mc = space.measure(comp)
        row = {"cells": len(comp), "mu_piece": mc, "mu_ball": mb, "mu_dilated": mab,
               "doubling_ratio": mab / mb, "comparability": mb / mc}
        row["ok"] = row["doubling_ratio"] <= beta * (1 + 1e-12) and row["comparability"] <= C0 * (1 + 1e-12)
        ok = ok and row["ok"]
        rows.append(row)
    return DoublingResult(bool(ok), rows)


def filtration_doubling_check(cov: AdmissibleCovering, C0: float, alpha: float,
                              beta: float, level1_children: bool = True) -> DoublingResult:
    """doubling_atom_check over every atom of both filtrations.

    With ``level1_children`` a level-1 atom is tested as the union of its
    level-2 children (the cube decomposition of the construction); other
    atoms are split into grid-connected components.
    """
    rows, ok = [], True
    for side in ("a", "b"):
        filt = cov.filtration(side)
        for k, j, cells in filt.all_atoms():
            pieces = None
            if level1_children and k == 1 and len(filt) >= 2:
                fine = filt.levels[1]
                pieces = [fine.atoms[i] for i in np.flatnonzero(filt.parent_of[1] == j)]
            res = doubling_atom_check(cov.space, cells, C0, alpha, beta, pieces=pieces)
            ok = ok and res.holds
            for r in res.components:
                rows.append(dict(r, side=side, level=k, atom=j, atom_ok=res.holds))
    return DoublingResult(bool(ok), rows)


def atom_dilation_ratios(cov: AdmissibleCovering, factor: float = 3.0) -> np.ndarray:
    """mu(factor Q)/mu(Q) for the bounding box Q of every filtration atom."""
    sp = cov.space
    out = []
    for side in ("a", "b"):
        for _, _, cells in cov.filtration(side).all_atoms():
            lo = sp.lower[cells].min(axis=0)
            hi = sp.upper[cells].max(axis=0)
            c, h = (lo + hi) / 2, (hi - lo) / 2
            out.append(sp.box_measure(c - factor * h, c + factor * h) / sp.box_measure(lo, hi))
    return np.array(out)

"""Atomic partitions, filtrations and conditional expectations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .space import MeasureSpace


class AtomicPartition:
    """Partition of the cells of ``space`` into atoms.

    ``labels[i]`` is the atom of cell ``i``; atom ids run over 0..k-1.
    ``distinguished`` is the index of A0 (or B0) for finite-measure spaces.
    ``terminal`` marks the remainder atom of a truncated infinite-measure
    space; it stands for the part of the space beyond the truncation.
    """

    def __init__(self, space: MeasureSpace, labels, distinguished: Optional[int] = None,
                 terminal: Optional[int] = None, label: str = "other"):
        lab = np.asarray(labels)
        if lab.shape != (space.n_cells,):
            raise ValueError("one label per cell is required")
        uniq, lab = np.unique(lab, return_inverse=True)
        lab = lab.astype(np.int64)
        lab.setflags(write=False)
        self.space = space
        self.labels = lab
        self.n_atoms = len(uniq)
        for name, v in (("distinguished", distinguished), ("terminal", terminal)):
            if v is not None and not 0 <= v < self.n_atoms:
                raise ValueError(f"{name} atom index out of range")
        self.distinguished = distinguished
        self.terminal = terminal
        self.label = label
        order = np.argsort(lab, kind="stable")
        bounds = np.searchsorted(lab[order], np.arange(self.n_atoms + 1))
        self._atoms = [order[bounds[j]:bounds[j + 1]] for j in range(self.n_atoms)]
        self._masses = np.array([math.fsum(space.weights[a]) for a in self._atoms])
        self._avg = None

    @classmethod
    def from_atoms(cls, space: MeasureSpace, atoms: Sequence[Sequence[int]], **kw):
        lab = np.full(space.n_cells, -1, dtype=np.int64)
        for j, a in enumerate(atoms):
            a = np.asarray(a, dtype=int)
            if len(a) == 0:
                raise ValueError("atoms must be nonempty")
            if np.any(lab[a] >= 0):
                raise ValueError("atoms overlap")
            lab[a] = j
        if np.any(lab < 0):
            raise ValueError("atoms do not cover every cell")
        return cls(space, lab, **kw)

    @classmethod
    def discrete(cls, space: MeasureSpace, **kw):
        return cls(space, np.arange(space.n_cells), **kw)

    @classmethod
    def trivial(cls, space: MeasureSpace, **kw):
        return cls(space, np.zeros(space.n_cells, dtype=int), **kw)

    @property
    def atoms(self) -> list:
        return self._atoms

    @property
    def masses(self) -> np.ndarray:
        return self._masses

    @property
    def excluded(self) -> set:
        """Atoms left out of suprema: distinguished and terminal atoms."""
        return {v for v in (self.distinguished, self.terminal) if v is not None}

    @property
    def is_discrete(self) -> bool:
        return self.n_atoms == self.space.n_cells

    def with_roles(self, distinguished=None, terminal=None, label=None):
        return AtomicPartition(self.space, self.labels, distinguished, terminal,
                               label or self.label)

    def averaging_matrix(self) -> sparse.csr_matrix:
        """Sparse (atoms x cells) matrix with rows mu_i / mu(A)."""
        if self._avg is None:
            w = self.space.weights / self._masses[self.labels]
            self._avg = sparse.csr_matrix(
                (w, (self.labels, np.arange(self.space.n_cells))),
                shape=(self.n_atoms, self.space.n_cells),
            )
        return self._avg

    def atom_averages(self, f) -> np.ndarray:
        """Averages of ``f`` over each atom; ``f`` has cells on axis 0."""
        f = np.asarray(f)
        flat = f.reshape(len(f), -1)
        m = self.averaging_matrix()
        avg = m @ flat
        # one correction pass against cancellation
        avg = avg + m @ (flat - avg[self.labels])
        return avg.reshape((self.n_atoms,) + f.shape[1:])

    def same_as(self, other: "AtomicPartition") -> bool:
        if self.n_atoms != other.n_atoms:
            return False
        # labels are canonical (sorted unique), so equal partitions match only up
        # to relabeling; compare through the pair map
        pairs = np.unique(np.stack([self.labels, other.labels]), axis=1)
        return pairs.shape[1] == self.n_atoms

    def __repr__(self):
        return (f"AtomicPartition(atoms={self.n_atoms}, label={self.label!r}, "
                f"distinguished={self.distinguished}, terminal={self.terminal})")


def conditional_expectation(f, p: AtomicPartition) -> np.ndarray:
    """E_p f: average of ``f`` on each atom, constant on atoms."""
    f = np.asarray(f)
    if f.shape[0] != p.space.n_cells:
        raise ValueError("function and partition live on different spaces")
    if np.any(p.masses <= 0):
        raise RuntimeError("atom of zero measure")
    return p.atom_averages(f)[p.labels]


@dataclass
class RefinementReport:
    valid: bool
    violations: list

    def __bool__(self):
        return self.valid


class Filtration:
    """Refinement chain of partitions; ``levels[0]`` is level 1."""

    def __init__(self, levels: Sequence[AtomicPartition]):
        if len(levels) == 0:
            raise ValueError("a filtration needs at least one level")
        sp = levels[0].space
        if any(l.space is not sp for l in levels):
            raise ValueError("all levels must live on the same space")
        self.levels = list(levels)
        self.space = sp
        self.parent_of = [None]
        for k in range(1, len(self.levels)):
            fine, coarse = self.levels[k], self.levels[k - 1]
            first = np.array([coarse.labels[a[0]] for a in fine.atoms], dtype=np.int64)
            self.parent_of.append(first)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, k: int) -> AtomicPartition:
        """Level ``k`` with the paper's 1-based indexing."""
        if k < 1:
            raise IndexError("levels start at 1")
        return self.levels[k - 1]

    @property
    def first(self) -> AtomicPartition:
        return self.levels[0]

    def completed(self) -> "Filtration":
        """Append the cell partition when the last level is coarser."""
        if self.levels[-1].is_discrete:
            return self
        return Filtration(self.levels + [AtomicPartition.discrete(self.space)])

    def all_atoms(self):
        """Yield (level, atom index, cells) over every level (1-based)."""
        for k, lev in enumerate(self.levels, start=1):
            for j, a in enumerate(lev.atoms):
                yield k, j, a

    def parent_cells(self, k: int, j: int) -> np.ndarray:
        if k == 1:
            return self.levels[0].atoms[j]
        return self.levels[k - 2].atoms[self.parent_of[k - 1][j]]


def validate_refinement(filt: Filtration) -> RefinementReport:
    """Check that every level refines the previous one; never raises."""
    bad = []
    for k in range(1, len(filt.levels)):
        fine, coarse = filt.levels[k], filt.levels[k - 1]
        for j, a in enumerate(fine.atoms):
            parents = np.unique(coarse.labels[a])
            if len(parents) > 1:
                bad.append({"level": k + 1, "atom": j, "parents": parents.tolist()})
    return RefinementReport(valid=not bad, violations=bad)


def regularity_constant(filt: Filtration) -> float:
    """sup over atoms A at levels >= 2 of mu(parent(A)) / mu(A)."""
    if len(filt) < 2:
        raise ValueError("no refinement")
    best = 0.0
    for k in range(1, len(filt.levels)):
        fine, coarse = filt.levels[k], filt.levels[k - 1]
        ratio = coarse.masses[filt.parent_of[k]] / fine.masses
        best = max(best, float(ratio.max()))
    return best


def intersection_measures(pa: AtomicPartition, pb: AtomicPartition) -> sparse.csr_matrix:
    """Sparse matrix of mu(A ∩ B) over a-atoms x b-atoms."""
    if pa.space is not pb.space and pa.space.n_cells != pb.space.n_cells:
        raise ValueError("partitions live on different spaces")
    m = sparse.coo_matrix((pa.space.weights, (pa.labels, pb.labels)),
                          shape=(pa.n_atoms, pb.n_atoms))
    return m.tocsr()


def intersection_trivial(pa: AtomicPartition, pb: AtomicPartition) -> bool:
    """True iff the only sets measurable for both partitions are ∅ and Ω."""
    inc = intersection_measures(pa, pb)
    na, nb = inc.shape
    adj = sparse.bmat([[None, inc], [inc.T, None]]).tocsr()
    n_comp, _ = connected_components(adj, directed=False)
    return n_comp == 1


def dyadic_filtration(space: MeasureSpace, levels: int, label: Optional[str] = None) -> Filtration:
    """Halving filtration of a 1-d grid; level 1 is the whole space."""
    n = space.n_cells
    if levels < 1 or n % (1 << (levels - 1)):
        raise ValueError("cell count must be divisible by 2^(levels-1)")
    idx = np.arange(n)
    return Filtration([AtomicPartition(space, idx // (n >> k), label=label) for k in range(levels)])

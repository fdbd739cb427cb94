"""Calderon-Zygmund type operators and their kernel and endpoint estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from .filtration import Filtration, conditional_expectation
from .norms import bmo_ab_norm_batch, lp_norm
from .space import MeasureSpace


# ---------------------------------------------------------------------------
# kernels


@dataclass
class Kernel:
    """Values k(x, y) on cell pairs; the diagonal is never used."""

    values: np.ndarray
    space: MeasureSpace

    def __post_init__(self):
        k = np.array(self.values, dtype=complex if np.iscomplexobj(self.values) else float)
        n = self.space.n_cells
        if k.shape != (n, n):
            raise ValueError("kernel must be cells x cells")
        off = ~np.eye(n, dtype=bool)
        if not np.all(np.isfinite(k[off])):
            raise ValueError("kernel entries must be finite off the diagonal")
        np.fill_diagonal(k, 0)
        self.values = k


def truncated_hilbert(space: MeasureSpace) -> Kernel:
    """k(x, y) = 1/(x - y) on a one-dimensional grid."""
    if space.dimension != 1:
        raise ValueError("the Hilbert kernel needs a one-dimensional space")
    x = space.centers[:, 0]
    d = x[:, None] - x[None, :]
    with np.errstate(divide="ignore"):
        k = np.where(d != 0, 1.0 / np.where(d != 0, d, 1.0), 0.0)
    return Kernel(k, space)


def kernel_of_matrix(m: np.ndarray, space: MeasureSpace) -> Kernel:
    """Kernel of the cell matrix m: (m f)_x = sum_y k(x, y) f_y mu_y."""
    return Kernel(np.asarray(m) / space.weights[None, :], space)


# ---------------------------------------------------------------------------
# operators


class CzOperator:
    kind = "abstract"

    def __init__(self, space: MeasureSpace):
        self.space = space

    def apply(self, f) -> np.ndarray:
        raise NotImplementedError

    def matrix(self) -> np.ndarray:
        return self.apply(np.eye(self.space.n_cells))

    def _check(self, f):
        f = np.asarray(f)
        if f.shape[0] != self.space.n_cells:
            raise ValueError("dimension mismatch")
        return f


class KernelOperator(CzOperator):
    kind = "kernel"

    def __init__(self, kernel: Kernel):
        super().__init__(kernel.space)
        self.kernel = kernel

    def apply(self, f):
        f = self._check(f)
        w = self.space.weights
        wf = w[:, None] * f if f.ndim > 1 else w * f
        return self.kernel.values @ wf


class MartingaleTransform(CzOperator):
    """T f = sum_k xi_k df_k with df_1 = E_1 f (E_0 = 0)."""

    kind = "martingale_transform"

    def __init__(self, filt: Filtration, xi: Sequence[complex], complete: bool = True):
        F = filt.completed() if complete else filt
        super().__init__(F.space)
        xi = np.asarray(xi)
        if len(xi) != len(F):
            raise ValueError(f"expected {len(F)} multipliers, one per level")
        if np.any(np.abs(xi) > 1 + 1e-12):
            raise ValueError("multipliers must satisfy |xi_k| <= 1")
        self.filtration = F
        self.xi = xi

    def differences(self, f):
        f = self._check(f)
        out, prev = [], np.zeros_like(f, dtype=float if not np.iscomplexobj(f) else complex)
        for lev in self.filtration.levels:
            cur = conditional_expectation(f, lev)
            out.append(cur - prev)
            prev = cur
        return out

    def apply(self, f):
        d = self.differences(f)
        return sum(x * dk for x, dk in zip(self.xi, d))


@dataclass
class HaarFunction:
    level: int  # level of the parent atom Q (1-based)
    atom: int  # index of Q at that level
    index: int  # position among the d-1 functions of Q
    support_level: int  # level of the child atom the function separates
    support_atom: int


class HaarSystem:
    """Nested-difference Haar basis attached to each atom with several children.

    For an atom Q with children Q_1..Q_d the i-th function is a multiple of
    1_{Q_i}/mu(Q_i) - 1_{Q_{i+1} ∪ ... ∪ Q_d}/mu(Q_{i+1} ∪ ... ∪ Q_d), normalized
    in L2(mu).  The functions are orthonormal because each one is constant
    where the later ones live.
    """

    def __init__(self, filt: Filtration, complete: bool = True):
        F = filt.completed() if complete else filt
        self.filtration = F
        self.space = F.space
        w = self.space.weights
        rows, cols, vals, meta = [], [], [], []
        for k in range(1, len(F)):
            coarse, fine = F.levels[k - 1], F.levels[k]
            for q in range(coarse.n_atoms):
                kids = np.flatnonzero(F.parent_of[k] == q)
                for i in range(len(kids) - 1):
                    a = fine.atoms[kids[i]]
                    rest = np.concatenate([fine.atoms[j] for j in kids[i + 1:]])
                    ma, mr = math.fsum(w[a]), math.fsum(w[rest])
                    # mean zero and unit norm
                    ca = math.sqrt(mr / (ma * (ma + mr)))
                    cr = -math.sqrt(ma / (mr * (ma + mr)))
                    r = len(meta)
                    rows += [r] * (len(a) + len(rest))
                    cols += list(a) + list(rest)
                    vals += [ca] * len(a) + [cr] * len(rest)
                    meta.append(HaarFunction(k, q, i, k + 1, int(kids[i])))
        self.functions = meta
        self.matrix = sparse.csr_matrix((vals, (rows, cols)),
                                        shape=(len(meta), self.space.n_cells))

    def __len__(self):
        return len(self.functions)

    def coefficients(self, f) -> np.ndarray:
        f = np.asarray(f)
        w = self.space.weights
        return self.matrix @ (w[:, None] * f if f.ndim > 1 else w * f)

    def synthesize(self, coef) -> np.ndarray:
        return self.matrix.T @ coef

    def reconstruct(self, f) -> np.ndarray:
        """E_1 f + sum <f, h> h."""
        return conditional_expectation(f, self.filtration.first) + self.synthesize(self.coefficients(f))

    def gram(self) -> np.ndarray:
        m = self.matrix
        return (m @ sparse.diags(self.space.weights) @ m.T).toarray()

    def atom_of(self, i: int) -> tuple:
        h = self.functions[i]
        return h.level, h.atom

    def descendants(self, level: int, atom: int, generations: int) -> list:
        """Indices of Haar functions whose parent atom lies exactly
        ``generations`` levels below (level, atom)."""
        F = self.filtration
        target = level + generations
        if target > len(F) - 1:
            return []
        # ancestor of each atom at `target` level
        anc = np.arange(F.levels[target - 1].n_atoms)
        for k in range(target - 1, level - 1, -1):
            anc = F.parent_of[k][anc]
        return [i for i, h in enumerate(self.functions)
                if h.level == target and anc[h.atom] == atom]


class HaarShift(CzOperator):
    """T f = sum over terms (Q, R, S, alpha) of alpha <f, h_R> h_S."""

    kind = "haar_shift"

    def __init__(self, haar: HaarSystem, terms: Sequence[tuple], complexity=(0, 0)):
        super().__init__(haar.space)
        self.haar = haar
        self.complexity = tuple(complexity)
        F = haar.filtration
        rows, cols, vals = [], [], []
        for (lq, q), r, s, alpha in terms:
            mq = F[lq].masses[q]
            mr = F[self._lvl(r)].masses[haar.functions[r].atom]
            ms = F[self._lvl(s)].masses[haar.functions[s].atom]
            if abs(alpha) > math.sqrt(mr * ms) / mq * (1 + 1e-12):
                raise ValueError("Haar shift coefficient exceeds sqrt(mu(R)mu(S))/mu(Q)")
            rows.append(s)
            cols.append(r)
            vals.append(alpha)
        n = len(haar)
        self.coef = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
        self.terms = list(terms)

    def _lvl(self, i):
        return self.haar.functions[i].level

    def apply(self, f):
        f = self._check(f)
        return self.haar.synthesize(self.coef @ self.haar.coefficients(f))


def random_haar_shift(haar: HaarSystem, r: int = 0, s: int = 0, seed: int = 0,
                      scale: float = 1.0) -> HaarShift:
    """Shift of complexity (r, s) with random signs and coefficients
    scale * sqrt(mu(R)mu(S))/mu(Q)."""
    rng = np.random.default_rng(seed)
    F = haar.filtration
    terms = []
    for lq in range(1, len(F)):
        for q in range(F[lq].n_atoms):
            R = haar.descendants(lq, q, r)
            S = haar.descendants(lq, q, s)
            mq = F[lq].masses[q]
            for i in R:
                mr = F[haar.functions[i].level].masses[haar.functions[i].atom]
                for j in S:
                    ms = F[haar.functions[j].level].masses[haar.functions[j].atom]
                    sign = 1.0 if rng.random() < 0.5 else -1.0
                    terms.append(((lq, q), i, j, sign * scale * math.sqrt(mr * ms) / mq))
    return HaarShift(haar, terms, (r, s))


def apply(op: CzOperator, f) -> np.ndarray:
    return op.apply(f)


# ---------------------------------------------------------------------------
# Hormander constants


def _pair_sup(kv: np.ndarray, inside: np.ndarray, outside: np.ndarray, w: np.ndarray) -> float:
    """sup over z1, z2 in ``inside`` of sum over x in ``outside`` of
    (|k(z1,x) - k(z2,x)| + |k(x,z1) - k(x,z2)|) mu_x."""
    if len(inside) < 2 or len(outside) == 0:
        return 0.0
    wo = w[outside]
    rows = kv[np.ix_(inside, outside)] * wo[None, :]
    cols = kv[np.ix_(outside, inside)].T * wo[None, :]
    if np.iscomplexobj(rows):
        d = _complex_l1(rows) + _complex_l1(cols)
    else:
        d = cdist(rows, rows, "cityblock") + cdist(cols, cols, "cityblock")
    return float(d.max())


def _complex_l1(m):
    return np.abs(m[:, None, :] - m[None, :, :]).sum(axis=2)


def metric_balls(space: MeasureSpace, radii: Optional[Sequence[float]] = None):
    """l-infinity balls around cell centers; each is the set of cells whose
    centers lie within the radius."""
    if not space.has_geometry:
        raise ValueError("metric balls need geometry")
    c = space.centers
    if radii is None:
        h = float(np.min(space.upper - space.lower))
        span = float(np.max(np.max(c, axis=0) - np.min(c, axis=0)))
        radii = (np.arange(0, int(span / h) + 1) + 0.5) * h
    out = []
    for i in range(space.n_cells):
        dist = np.max(np.abs(c - c[i]), axis=1)
        for r in radii:
            out.append((i, float(r), dist))
    return out


def hormander_constant_metric(ker: Kernel, alpha: float,
                              radii: Optional[Sequence[float]] = None) -> float:
    """sup over balls B and z1, z2 in B of the kernel differences integrated off alpha B."""
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    sp = ker.space
    w = sp.weights
    best = 0.0
    tol = 1e-12
    for _, r, dist in metric_balls(sp, radii):
        inside = np.flatnonzero(dist <= r + tol)
        outside = np.flatnonzero(dist > alpha * r + tol)
        best = max(best, _pair_sup(ker.values, inside, outside, w))
    return best


def hormander_constant_atomic(ker: Kernel, filtrations) -> float:
    """Same sup-sum over atoms A of the filtrations, integrating off the parent Â.

    Level-1 atoms have no parent, so Â = A and the integral runs over Ω∖A.
    ``filtrations`` is a covering (both filtrations) or a list of filtrations.
    """
    if hasattr(filtrations, "filt_a"):
        filtrations = [filtrations.filt_a, filtrations.filt_b]
    w = ker.space.weights
    n = ker.space.n_cells
    best = 0.0
    for F in filtrations:
        for k, j, cells in F.all_atoms():
            parent = F.parent_cells(k, j)
            mask = np.ones(n, dtype=bool)
            mask[parent] = False
            best = max(best, _pair_sup(ker.values, cells, np.flatnonzero(mask), w))
    return best


# ---------------------------------------------------------------------------
# endpoint and L_p estimates


@dataclass
class EndpointEstimate:
    lower_bound: float
    witness: np.ndarray
    exhaustive: bool
    evaluated: int


def _batch_values(M, cov, variant, signs):
    return bmo_ab_norm_batch(M @ signs.T, cov, variant)


def linfty_bmo_estimate(op: CzOperator, cov, trials: int = 1000, seed: int = 0,
                        variant="BMO", local_search: bool = True,
                        exhaustive: Optional[bool] = None, batch: int = 4096) -> EndpointEstimate:
    """Max of ||T f||_{BMO_ab} over sign vectors f (extreme points of the L∞ ball).

    With ``exhaustive`` (default when 2^cells <= max(trials, 2^16)) every
    sign vector with f_0 = +1 is evaluated, which gives the exact maximum
    over the L∞ unit ball because the norm is convex in f and even.
    """
    n = op.space.n_cells
    M = op.matrix()
    if exhaustive is None:
        exhaustive = n <= 16 or 2 ** n <= trials
    best, wit, count = -1.0, None, 0
    if exhaustive:
        total = 2 ** (n - 1)
        for start in range(0, total, batch):
            idx = np.arange(start, min(start + batch, total))
            bits = ((idx[:, None] >> np.arange(n - 1)[None, :]) & 1).astype(float)
            signs = np.hstack([np.ones((len(idx), 1)), 1 - 2 * bits])
            vals = _batch_values(M, cov, variant, signs)
            i = int(np.argmax(vals))
            if vals[i] > best:
                best, wit = float(vals[i]), signs[i]
            count += len(idx)
        return EndpointEstimate(best, wit, True, count)
    rng = np.random.default_rng(seed)
    done = 0
    while done < trials:
        k = min(batch, trials - done)
        signs = rng.choice([-1.0, 1.0], size=(k, n))
        vals = _batch_values(M, cov, variant, signs)
        i = int(np.argmax(vals))
        if vals[i] > best:
            best, wit = float(vals[i]), signs[i].copy()
        done += k
    count = done
    if local_search:
        improved = True
        while improved:
            flips = np.tile(wit, (n, 1))
            flips[np.arange(n), np.arange(n)] *= -1
            vals = _batch_values(M, cov, variant, flips)
            count += n
            i = int(np.argmax(vals))
            improved = vals[i] > best * (1 + 1e-14)
            if improved:
                best, wit = float(vals[i]), flips[i].copy()
    return EndpointEstimate(best, wit, False, count)


def lp_ratio_profile(op: CzOperator, p_list: Sequence[float], trials: int = 200,
                     seed: int = 0, mean_zero: Optional[bool] = None) -> list:
    """Sampled sup of ||T f||_p / ||f||_p for each p.

    On finite-measure spaces both f and T f are taken modulo constants
    (mean-zero inputs, mean-corrected outputs) unless ``mean_zero=False``.
    """
    sp = op.space
    if mean_zero is None:
        mean_zero = not sp.truncated
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((sp.n_cells, trials))
    if mean_zero:
        F = F - (sp.weights @ F)[None, :] / sp.total_mass
    TF = op.apply(F)
    if mean_zero:
        TF = TF - (sp.weights @ TF)[None, :] / sp.total_mass
    rows = []
    for p in p_list:
        best = 0.0
        for j in range(trials):
            den = lp_norm(F[:, j], sp, p)
            if den > 0:
                best = max(best, lp_norm(TF[:, j], sp, p) / den)
        rows.append({"p": float(p), "sup_ratio": best})
    return rows

"""Scalar norms: L_p and quotients, bmo/BMO, h_p, DBMO, John-Nirenberg profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .filtration import AtomicPartition, Filtration, conditional_expectation
from .space import MeasureSpace

KINDS = ("bmo", "BMO", "bmo_quotient", "BMO_quotient")


@dataclass(frozen=True)
class NormVariant:
    """Which oscillation norm to evaluate.

    Quotient variants subtract E_1 f first, which amounts to the convention
    E_0 f = E_1 f; plain BMO uses E_0 f = 0.
    """

    kind: str = "BMO"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown norm variant {self.kind!r}")

    @property
    def quotient(self) -> bool:
        return self.kind.endswith("_quotient")

    @property
    def martingale(self) -> bool:
        return self.kind.startswith("BMO")

    @classmethod
    def parse(cls, v) -> "NormVariant":
        return v if isinstance(v, NormVariant) else cls(str(v))


def _weights(space: MeasureSpace) -> np.ndarray:
    return space.weights


def _wsum(w, x) -> float:
    return math.fsum(w * x)


# ---------------------------------------------------------------------------
# L_p


def lp_norm(f, space: MeasureSpace, p: float, mode: str = "plain",
            partition: Optional[AtomicPartition] = None, tol: float = 1e-10) -> float:
    """L_p norm in one of three modes.

    ``plain``: (sum mu_i |f_i|^p)^(1/p).  ``quotient``: the norm of f - E f for
    the given partition.  ``circ``: inf over constants k of ||f - k||_p.
    ``p = inf`` gives the max over cells.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    f = np.asarray(f)
    w = _weights(space)
    if mode == "quotient":
        if partition is None:
            raise ValueError("quotient mode needs a partition")
        return lp_norm(f - conditional_expectation(f, partition), space, p)
    if mode == "circ":
        return lp_norm(f - best_constant(f, space, p, tol), space, p)
    if mode != "plain":
        raise ValueError(f"unknown mode {mode!r}")
    a = np.abs(f)
    if math.isinf(p):
        return float(a.max())
    top = a.max()
    if top == 0:
        return 0.0
    return float(top * _wsum(w, (a / top) ** p) ** (1.0 / p))


def weighted_median(x, w) -> float:
    order = np.argsort(x, kind="stable")
    cw = np.cumsum(w[order])
    j = int(np.searchsorted(cw, cw[-1] / 2))
    return float(x[order][j])


def best_constant(f, space: MeasureSpace, p: float, tol: float = 1e-10):
    """Minimizer k of ||f - k||_p (mean at p = 2, weighted median at p = 1)."""
    f = np.asarray(f)
    w = _weights(space)
    if p == 2:
        return np.sum(w * f) / space.total_mass
    if np.iscomplexobj(f):
        obj = lambda z: _wsum(w, np.abs(f - (z[0] + 1j * z[1])) ** p)
        m = np.sum(w * f) / space.total_mass
        res = optimize.minimize(obj, [m.real, m.imag], method="Nelder-Mead",
                                options={"xatol": tol, "fatol": 1e-14})
        return res.x[0] + 1j * res.x[1]
    if p == 1:
        return weighted_median(f, w)
    if math.isinf(p):
        return (f.max() + f.min()) / 2
    lo, hi = float(f.min()), float(f.max())
    if hi - lo <= tol:
        return lo
    res = optimize.minimize_scalar(lambda k: _wsum(w, np.abs(f - k) ** p),
                                   bounds=(lo, hi), method="bounded",
                                   options={"xatol": tol})
    return float(res.x)


# ---------------------------------------------------------------------------
# bmo / BMO


def _atom_osc(g, part: AtomicPartition, p: float) -> np.ndarray:
    """(avg_A |g - g_A|^p)^(1/p) per atom."""
    mean = part.atom_averages(g)
    dev = np.abs(g - mean[part.labels]) ** p
    return part.atom_averages(dev) ** (1.0 / p)


def _atom_pmean(g, part: AtomicPartition, p: float) -> np.ndarray:
    return part.atom_averages(np.abs(g) ** p) ** (1.0 / p)


def bmo_norm_batch(G, filt: Filtration, variant="BMO", p: float = 2.0,
                   complete: bool = True) -> np.ndarray:
    """bmo/BMO norms of the columns of ``G`` (cells x batch)."""
    v = NormVariant.parse(variant)
    G = np.asarray(G)
    if G.ndim == 1:
        G = G[:, None]
    F = filt.completed() if complete else filt
    first = F.first
    g = G - conditional_expectation(G, first) if v.quotient else G
    if not v.martingale:
        best = np.max([_atom_osc(g, lev, p).max(axis=0) for lev in F.levels], axis=0)
        if not v.quotient:
            best = best + np.abs(first.atom_averages(G)).max(axis=0)
        return best
    best = _atom_pmean(g, first, p).max(axis=0)
    prev = conditional_expectation(g, first)
    for lev in F.levels[1:]:
        best = np.maximum(best, _atom_pmean(g - prev, lev, p).max(axis=0))
        prev = conditional_expectation(g, lev)
    return best


def bmo_norm(f, filt: Filtration, variant="BMO", p: float = 2.0,
             complete: bool = True) -> float:
    """bmo or BMO norm of ``f`` along ``filt``.

    bmo: sup over atoms of every level of the p-oscillation, plus the
    sup of |f_A| over level-1 atoms for the plain variant.  BMO: sup over
    levels k of sup over level-k atoms of (E_k |f - E_{k-1} f|^p)^(1/p).
    By default the filtration is completed by the cell partition.
    """
    return float(bmo_norm_batch(np.asarray(f)[:, None], filt, variant, p, complete)[0])


def bmo_ab_norm_batch(G, cov, variant="BMO", p: float = 2.0) -> np.ndarray:
    if cov.filt_a is None or cov.filt_b is None:
        raise ValueError("missing filtrations")
    G = np.asarray(G)
    if G.ndim == 1:
        G = G[:, None]
    out = None
    for side in ("a", "b"):
        g = G - conditional_expectation(G, cov.partition(side))
        val = bmo_norm_batch(g, cov.filtration(side), variant, p)
        out = val if out is None else np.maximum(out, val)
    return out


def bmo_ab_norm(f, cov, variant="BMO", p: float = 2.0) -> float:
    """max of the a- and b-side norms of f - E_a f and f - E_b f."""
    return float(bmo_ab_norm_batch(np.asarray(f)[:, None], cov, variant, p)[0])


# ---------------------------------------------------------------------------
# h_p


def square_function(f, filt: Filtration, complete: bool = True) -> np.ndarray:
    """(|E_1 f|^2 + sum_{k>=2} E_{k-1}|df_k|^2)^(1/2) per cell."""
    f = np.asarray(f)
    F = filt.completed() if complete else filt
    prev = conditional_expectation(f, F.first)
    s = np.abs(prev) ** 2
    coarse = F.first
    for lev in F.levels[1:]:
        cur = conditional_expectation(f, lev)
        s = s + conditional_expectation(np.abs(cur - prev) ** 2, coarse)
        prev, coarse = cur, lev
    return np.sqrt(s)


def hp_norm(f, p: float, filt: Filtration, complete: bool = True) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    return lp_norm(square_function(f, filt, complete), filt.space, p)


# ---------------------------------------------------------------------------
# DBMO


@dataclass
class BallFamily:
    centers: np.ndarray  # (k, n)
    radii: np.ndarray  # (k,)
    mu_ball: np.ndarray
    mu_dilated: np.ndarray

    def __len__(self):
        return len(self.radii)


def _overlap(space, c, r):
    lo, hi = c - r, c + r
    ov = np.clip(np.minimum(space.upper, hi) - np.maximum(space.lower, lo), 0, None)
    return np.prod(ov, axis=1) / space.volumes


def default_radii(space: MeasureSpace, alpha: float) -> np.ndarray:
    h = float(np.min(space.upper - space.lower))
    dlo, dhi = (np.asarray(d) for d in space.domain)
    half = float(np.min(dhi - dlo)) / 2
    j = np.arange(0, int(half / (alpha * h)) + 1)
    r = (j + 0.5) * h
    return r[alpha * r <= half + 1e-12]


def doubling_balls(space: MeasureSpace, alpha: float, beta: float,
                   radii: Optional[Sequence[float]] = None) -> BallFamily:
    """l-infinity balls centered at cell centers whose alpha-dilation stays
    in the domain and which satisfy mu(alpha B) <= beta mu(B)."""
    if not space.has_geometry:
        raise ValueError("DBMO needs geometry")
    radii = default_radii(space, alpha) if radii is None else np.asarray(radii, float)
    dlo, dhi = (np.asarray(d, float) for d in space.domain)
    cs, rs, mb, md = [], [], [], []
    w = space.weights
    for c in space.centers:
        for r in radii:
            if np.any(c - alpha * r < dlo - 1e-12) or np.any(c + alpha * r > dhi + 1e-12):
                continue
            m1 = math.fsum(w * _overlap(space, c, r))
            m2 = math.fsum(w * _overlap(space, c, alpha * r))
            if m2 <= beta * m1 * (1 + 1e-12):
                cs.append(c)
                rs.append(r)
                mb.append(m1)
                md.append(m2)
    if not rs:
        raise ValueError("no doubling balls")
    return BallFamily(np.array(cs), np.array(rs), np.array(mb), np.array(md))


def dbmo_norm(f, space: MeasureSpace, alpha: float, beta: float,
              balls: Optional[BallFamily] = None, form: str = "mean",
              radii: Optional[Sequence[float]] = None) -> float:
    """sup over doubling balls of (mu(B)^-1 int_B |f - f_B|^2)^(1/2).

    ``form="inf"`` replaces f_B by the best constant, which for the
    quadratic oscillation is the same number up to rounding.
    """
    f = np.asarray(f)
    balls = balls or doubling_balls(space, alpha, beta, radii)
    best = 0.0
    for c, r in zip(balls.centers, balls.radii):
        wb = space.weights * _overlap(space, c, r)
        keep = wb > 0
        wk, fk = wb[keep], f[keep]
        m = math.fsum(wk)
        if form == "inf":
            k = optimize.minimize_scalar(lambda t: float(np.sum(wk * np.abs(fk - t) ** 2)),
                                         bounds=(float(np.min(fk.real)), float(np.max(fk.real)) + 1e-300),
                                         method="bounded", options={"xatol": 1e-12}).x \
                if not np.iscomplexobj(fk) else np.sum(wk * fk) / m
        else:
            k = np.sum(wk * fk) / m
        best = max(best, math.sqrt(math.fsum(wk * np.abs(fk - k) ** 2) / m))
    return best


# ---------------------------------------------------------------------------
# John-Nirenberg


@dataclass
class JNProfile:
    lam: np.ndarray
    ratio: np.ndarray
    norm: float
    c_hat: float
    intercept: float
    r2: float
    fit_mask: np.ndarray

    def dominated(self, prefactor: float = 1.0) -> bool:
        """ratio <= prefactor * exp(-c_hat lam / norm) on the fitted range."""
        lam, r = self.lam[self.fit_mask], self.ratio[self.fit_mask]
        bound = prefactor * np.exp(-self.c_hat * lam / self.norm)
        return bool(np.all(r <= bound * (1 + 1e-12)))

    def domination_constant(self) -> float:
        """Smallest C with ratio <= C exp(-c_hat lam / norm) on the fitted range."""
        lam, r = self.lam[self.fit_mask], self.ratio[self.fit_mask]
        return float(np.max(r * np.exp(self.c_hat * lam / self.norm)))

    def rows(self):
        return [(float(a), float(b)) for a, b in zip(self.lam, self.ratio)]


def jn_profile(f, filt: Filtration, lam_grid, quotient: bool = False,
               complete: bool = True) -> JNProfile:
    """sup over levels k and level-k atoms A of mu(A ∩ {|f - E_{k-1} f| > lam}) / mu(A).

    The decay rate c_hat comes from a least-squares fit of log(ratio)
    against lam / ||f||_BMO over the points with ratio in (1e-12, 1).
    """
    lam = np.asarray(lam_grid, dtype=float)
    if np.any(lam <= 0) or np.any(np.diff(lam) <= 0):
        raise ValueError("lambda grid must be positive and increasing")
    f = np.asarray(f)
    F = filt.completed() if complete else filt
    variant = "BMO_quotient" if quotient else "BMO"
    norm = bmo_norm(f, F, variant, complete=False)
    devs = []
    prev = conditional_expectation(f, F.first) if quotient else np.zeros_like(f)
    for lev in F.levels:
        devs.append((lev, np.abs(f - prev)))
        prev = conditional_expectation(f, lev)
    ratio = np.zeros(len(lam))
    for i, t in enumerate(lam):
        ratio[i] = max(float(lev.atom_averages((d > t).astype(float)).max()) for lev, d in devs)
    mask = (ratio > 1e-12) & (ratio < 1)
    c_hat, icpt, r2 = float("nan"), float("nan"), float("nan")
    if norm > 0 and mask.sum() >= 2:
        fit = stats.linregress(lam[mask] / norm, np.log(ratio[mask]))
        c_hat, icpt, r2 = -float(fit.slope), float(fit.intercept), float(fit.rvalue**2)
    return JNProfile(lam, ratio, norm, c_hat, icpt, r2, mask)


# ---------------------------------------------------------------------------
# h1 atoms


def validate_h1_atom(a, filt: Filtration, k: int, j: int, tol: float = 1e-12) -> bool:
    """supp a ⊂ A, E_k a = 0 and ||a||_2 <= mu(A)^(-1/2) for the level-k atom A = j."""
    a = np.asarray(a)
    part = filt[k]
    cells = part.atoms[j]
    outside = np.ones(part.space.n_cells, dtype=bool)
    outside[cells] = False
    if np.any(a[outside] != 0):
        return False
    muA = part.masses[j]
    scale = max(float(np.max(np.abs(a))), 1e-300)
    avg = part.atom_averages(a)
    if np.any(np.abs(avg) > tol * scale):
        return False
    return lp_norm(a, part.space, 2) <= muA ** -0.5 * (1 + tol)


def trivial_splitting_h1_bound(f, cov) -> float:
    """Upper bound for the two-sided h1 norm from the splittings f + 0 and 0 + f."""
    return min(hp_norm(f, 1, cov.filt_a), hp_norm(f, 1, cov.filt_b))


def rademacher_sum(space: MeasureSpace, k_max: int) -> np.ndarray:
    """sum_{k=1..k_max} r_k at the cell centers of a grid on [0, 1]."""
    x = space.centers[:, 0]
    return sum(np.where(np.floor(x * 2**k) % 2 == 0, 1.0, -1.0) for k in range(1, k_max + 1))

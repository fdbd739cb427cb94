"""Discretized measure spaces.

A space is a finite list of cells, each carrying a positive weight and,
optionally, an axis-aligned box in R^n.  Weights come from a density
evaluated at the cell center times the cell volume (midpoint rule).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

FAMILIES = ("lebesgue", "power_law", "exp_decay", "exp_growth", "custom")


@dataclass(frozen=True)
class WeightFamily:
    kind: str
    beta: Optional[float] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ValueError(f"unknown weight family {self.kind!r}")
        if self.kind == "power_law" and not (self.beta is not None and self.beta > 0):
            raise ValueError("power_law needs beta > 0")
        if self.kind in ("exp_decay", "exp_growth") and not (
            self.alpha is not None and self.alpha > 0
        ):
            raise ValueError(f"{self.kind} needs alpha > 0")

    @classmethod
    def lebesgue(cls):
        return cls("lebesgue")

    @classmethod
    def power_law(cls, beta):
        return cls("power_law", beta=float(beta))

    @classmethod
    def exp_decay(cls, alpha):
        return cls("exp_decay", alpha=float(alpha))

    @classmethod
    def exp_growth(cls, alpha):
        return cls("exp_growth", alpha=float(alpha))

    @classmethod
    def custom(cls):
        return cls("custom")

    @property
    def analytic(self) -> bool:
        return self.kind != "custom"

    def parameters(self) -> dict:
        out = {}
        if self.beta is not None:
            out["beta"] = self.beta
        if self.alpha is not None:
            out["alpha"] = self.alpha
        return out

    def density(self, x: np.ndarray) -> np.ndarray:
        """Density at points ``x`` of shape (k, n)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.sqrt(np.sum(x * x, axis=1))
        if self.kind == "lebesgue":
            return np.ones(len(x))
        if self.kind == "power_law":
            with np.errstate(divide="ignore"):
                return np.minimum(1.0, np.where(r > 0, r, 1.0) ** (-self.beta))
        if self.kind == "exp_decay":
            return np.exp(-(r**self.alpha))
        if self.kind == "exp_growth":
            return np.exp(r**self.alpha)
        raise ValueError("custom weights have no density")


@dataclass(frozen=True)
class Cell:
    index: int
    weight: float
    lower: Optional[tuple] = None
    upper: Optional[tuple] = None

    @property
    def center(self):
        if self.lower is None:
            return None
        return tuple((a + b) / 2 for a, b in zip(self.lower, self.upper))

    @property
    def sides(self):
        if self.lower is None:
            return None
        return tuple(b - a for a, b in zip(self.lower, self.upper))


@dataclass(frozen=True, eq=False)
class MeasureSpace:
    """Immutable weighted cell complex.

    ``lower``/``upper`` hold the box corners of each cell (shape
    (cells, n)) or are ``None`` for spaces without geometry.  ``grid_shape``
    is set for tensor grids (row-major cell order).  The
    ``truncated`` flag marks a finite piece of an infinite-measure space.
    """

    weights: np.ndarray
    family: WeightFamily = field(default_factory=WeightFamily.custom)
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    domain: Optional[tuple] = None
    grid_shape: Optional[tuple] = None
    truncated: bool = False

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or len(w) == 0:
            raise ValueError("weights must be a nonempty 1-d array")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("cell weights must be finite and positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if (self.lower is None) != (self.upper is None):
            raise ValueError("lower and upper must be given together")
        if self.lower is not None:
            lo = np.array(self.lower, dtype=float)
            hi = np.array(self.upper, dtype=float)
            if lo.ndim == 1:
                lo, hi = lo[:, None], hi[:, None]
            if lo.shape != hi.shape or lo.shape[0] != len(w):
                raise ValueError("box arrays do not match the cell count")
            if np.any(hi <= lo):
                raise ValueError("cell boxes must have positive side lengths")
            lo.setflags(write=False)
            hi.setflags(write=False)
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
            if self.domain is None:
                object.__setattr__(
                    self, "domain", (tuple(lo.min(axis=0)), tuple(hi.max(axis=0)))
                )

    # basic views -------------------------------------------------------
    @property
    def n_cells(self) -> int:
        return len(self.weights)

    def __len__(self):
        return self.n_cells

    @property
    def has_geometry(self) -> bool:
        return self.lower is not None

    @property
    def dimension(self) -> Optional[int]:
        return None if self.lower is None else self.lower.shape[1]

    @property
    def centers(self) -> np.ndarray:
        self._need_geometry()
        return (self.lower + self.upper) / 2

    @property
    def volumes(self) -> np.ndarray:
        self._need_geometry()
        return np.prod(self.upper - self.lower, axis=1)

    @property
    def total_mass(self) -> float:
        return total_measure(self)

    @property
    def normalized(self) -> bool:
        return abs(self.total_mass - 1.0) <= 1e-12

    @property
    def cells(self) -> list:
        out = []
        for i, w in enumerate(self.weights):
            if self.lower is None:
                out.append(Cell(i, float(w)))
            else:
                out.append(Cell(i, float(w), tuple(self.lower[i]), tuple(self.upper[i])))
        return out

    def _need_geometry(self):
        if self.lower is None:
            raise ValueError("space has no geometry")

    def measure(self, cells) -> float:
        idx = np.asarray(cells, dtype=int)
        return math.fsum(self.weights[idx])

    def normalized_copy(self) -> "MeasureSpace":
        t = self.total_mass
        return MeasureSpace(
            self.weights / t,
            family=self.family,
            lower=self.lower,
            upper=self.upper,
            domain=self.domain,
            grid_shape=self.grid_shape,
            truncated=self.truncated,
        )

    # geometric measure of arbitrary boxes --------------------------------
    def box_measure(self, lo, hi, quad_points: int = 64) -> float:
        """Measure of the box [lo, hi].

        The part inside the domain is the exact measure of the discretized
        space (cells are treated as carrying constant density).  When the
        box leaves the domain and the family has a density, the outside
        part is added by a midpoint rule with ``quad_points`` nodes per axis.
        """
        self._need_geometry()
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        sides = self.upper - self.lower
        ov = np.clip(np.minimum(self.upper, hi) - np.maximum(self.lower, lo), 0, None)
        # snap rounding slivers at box faces
        ov = np.where(ov <= 1e-9 * sides, 0.0, ov)
        ov = np.where(ov >= (1 - 1e-9) * sides, sides, ov)
        frac = np.prod(ov, axis=1) / np.prod(sides, axis=1)
        inside = math.fsum(self.weights * frac)
        dlo, dhi = (np.asarray(d, dtype=float) for d in self.domain)
        clo, chi = np.maximum(lo, dlo), np.minimum(hi, dhi)
        if (np.all(lo >= dlo) and np.all(hi <= dhi)) or not self.family.analytic:
            return inside
        outside = _quad(self.family, lo, hi, quad_points)
        if np.all(chi > clo):
            outside -= _quad(self.family, clo, chi, quad_points)
        return inside + max(outside, 0.0)


def _quad(family: WeightFamily, lo, hi, k) -> float:
    axes = [lo[d] + (np.arange(k) + 0.5) * (hi[d] - lo[d]) / k for d in range(len(lo))]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lo))
    vol = np.prod((hi - lo) / k)
    return float(np.sum(family.density(mesh)) * vol)


def total_measure(space: MeasureSpace) -> float:
    """Sum of the cell weights (compensated)."""
    return math.fsum(space.weights)


def _parse_domain(domain) -> tuple:
    d = np.asarray(domain, dtype=float)
    if d.ndim == 1:
        if d.shape != (2,):
            raise ValueError("a 1-d domain is [lo, hi]")
        d = d[None, :]
    if d.ndim != 2 or d.shape[1] != 2:
        raise ValueError("domain must be a list of [lo, hi] pairs")
    if np.any(d[:, 1] <= d[:, 0]):
        raise ValueError("domain has zero volume")
    return d[:, 0].copy(), d[:, 1].copy()


def build_grid_space(domain, cells_per_side: int, family: WeightFamily,
                     truncated: bool = False) -> MeasureSpace:
    """Uniform grid on a box; ``domain`` is [lo, hi] or a list of such pairs."""
    if int(cells_per_side) < 1:
        raise ValueError("cells_per_side must be >= 1")
    lo, hi = _parse_domain(domain)
    k = int(cells_per_side)
    breaks = [np.linspace(lo[d], hi[d], k + 1) for d in range(len(lo))]
    sp = build_box_space(breaks, family, truncated=truncated)
    return MeasureSpace(
        sp.weights, family=family, lower=sp.lower, upper=sp.upper,
        domain=(tuple(lo), tuple(hi)), grid_shape=(k,) * len(lo), truncated=truncated,
    )


def build_box_space(breakpoints: Sequence[Sequence[float]], family: WeightFamily,
                    truncated: bool = False) -> MeasureSpace:
    """Tensor grid with arbitrary sorted breakpoints per axis (row-major cells)."""
    if family.kind == "custom":
        raise ValueError("box spaces need an analytic weight family")
    br = [np.unique(np.asarray(b, dtype=float)) for b in breakpoints]
    if any(len(b) < 2 for b in br):
        raise ValueError("each axis needs at least two breakpoints")
    los = np.meshgrid(*[b[:-1] for b in br], indexing="ij")
    his = np.meshgrid(*[b[1:] for b in br], indexing="ij")
    lower = np.stack([a.ravel() for a in los], axis=1)
    upper = np.stack([a.ravel() for a in his], axis=1)
    centers = (lower + upper) / 2
    w = family.density(centers) * np.prod(upper - lower, axis=1)
    domain = (tuple(b[0] for b in br), tuple(b[-1] for b in br))
    return MeasureSpace(w, family=family, lower=lower, upper=upper, domain=domain,
                        grid_shape=tuple(len(b) - 1 for b in br), truncated=truncated)


def build_custom_space(weights, truncated: bool = False) -> MeasureSpace:
    """Space without geometry from explicit cell weights."""
    return MeasureSpace(np.asarray(weights, dtype=float), family=WeightFamily.custom(),
                        truncated=truncated)


def cells_in_box(space: MeasureSpace, lo, hi, tol: float = 1e-9) -> np.ndarray:
    """Indices of cells whose box lies inside [lo, hi]."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    ok = np.all(space.lower >= lo - tol, axis=1) & np.all(space.upper <= hi + tol, axis=1)
    return np.flatnonzero(ok)

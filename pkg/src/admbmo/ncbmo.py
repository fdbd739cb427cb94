"""Matrix-valued functions: entrywise expectations and operator-valued bmo norms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .filtration import AtomicPartition, Filtration, conditional_expectation
from .interpolation import _mean_zero_norm, _sym, _unit_constant, averaging_operator, contraction_norm
from .norms import NormVariant


@dataclass
class MatrixFunction:
    """One m x m complex matrix per cell, stored as an array (cells, m, m)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim != 3 or v.shape[1] != v.shape[2] or v.shape[1] < 1:
            raise ValueError("matrix function must have shape (cells, m, m)")
        if not np.all(np.isfinite(v)):
            raise ValueError("matrix entries must be finite")
        self.values = v

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    def adjoint(self) -> "MatrixFunction":
        return MatrixFunction(np.conj(np.swapaxes(self.values, 1, 2)))

    @classmethod
    def scalar(cls, f) -> "MatrixFunction":
        return cls(np.asarray(f, dtype=complex)[:, None, None])

    @classmethod
    def diagonal(cls, f, m: int) -> "MatrixFunction":
        f = np.asarray(f, dtype=complex)
        return cls(f[:, None, None] * np.eye(m)[None])

    @classmethod
    def random(cls, n_cells: int, m: int, rng) -> "MatrixFunction":
        return cls(rng.standard_normal((n_cells, m, m)) + 1j * rng.standard_normal((n_cells, m, m)))

    def embed(self, size: int) -> "MatrixFunction":
        """Top-left block of a larger zero matrix."""
        if size < self.m:
            raise ValueError("cannot embed into a smaller matrix algebra")
        out = np.zeros((self.n_cells, size, size), dtype=complex)
        out[:, :self.m, :self.m] = self.values
        return MatrixFunction(out)


def _values(F):
    return F.values if isinstance(F, MatrixFunction) else MatrixFunction(F).values


def m_conditional_expectation(F, p: AtomicPartition) -> MatrixFunction:
    """Entrywise E_p applied to a matrix function."""
    v = _values(F)
    if v.shape[0] != p.space.n_cells:
        raise ValueError("matrix function and partition have different cell counts")
    return MatrixFunction(conditional_expectation(v, p))


# ---------------------------------------------------------------------------
# Hermitian eigenvalues


def jacobi_eigh(H, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigenvalues (ascending) and eigenvectors of a Hermitian matrix by cyclic Jacobi.

    Sweeps stop once the off-diagonal Frobenius mass drops below
    ``tol`` times max(1, ||H||_F).
    """
    A = np.array(H, dtype=complex)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("square matrix expected")
    A = (A + A.conj().T) / 2
    V = np.eye(n, dtype=complex)
    scale = max(1.0, float(np.linalg.norm(A)))
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(A[~np.eye(n, dtype=bool)]))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                b = abs(A[p, q])
                if b <= 1e-300:
                    continue
                phase = A[p, q] / b
                theta = (A[q, q].real - A[p, p].real) / (2 * b)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1 / math.hypot(t, 1.0)
                s = t * c
                # phase fix then real rotation, both on columns (p, q)
                J = np.array([[c, s], [-s * np.conj(phase), c * np.conj(phase)]])
                idx = [p, q]
                A[:, idx] = A[:, idx] @ J
                A[idx, :] = J.conj().T @ A[idx, :]
                V[:, idx] = V[:, idx] @ J
    w = np.real(np.diag(A))
    order = np.argsort(w)
    return w[order], V[:, order]


def _lam_max(H, method: str) -> float:
    if H.shape[0] == 1:
        return float(H[0, 0].real)
    if method == "jacobi":
        return float(jacobi_eigh(H)[0][-1])
    if method == "lapack":
        return float(linalg.eigvalsh(H)[-1])
    raise ValueError(f"unknown eigen method {method!r}")


def _lam_min(H, method: str) -> float:
    if H.shape[0] == 1:
        return float(H[0, 0].real)
    if method == "jacobi":
        return float(jacobi_eigh(H)[0][0])
    return float(linalg.eigvalsh(H)[0])


def _sq_avg(G, part: AtomicPartition):
    """Per-atom average of G_i^* G_i (atoms, m, m)."""
    gram = np.einsum("nji,njk->nik", np.conj(G), G)
    return part.atom_averages(gram)


def _sup_sqrt_lmax(mats, method) -> float:
    return math.sqrt(max(0.0, max(_lam_max(M, method) for M in mats)))


# ---------------------------------------------------------------------------
# norms


def _column_norm(G, F: Filtration, v: NormVariant, method: str) -> float:
    first = F.first
    g = G - conditional_expectation(G, first) if v.quotient else G
    if not v.martingale:
        best = 0.0
        for lev in F.levels:
            dev = g - conditional_expectation(g, lev)
            best = max(best, _sup_sqrt_lmax(_sq_avg(dev, lev), method))
        if not v.quotient:
            means = first.atom_averages(G)
            best += _sup_sqrt_lmax(np.einsum("nji,njk->nik", np.conj(means), means), method)
        return best
    best = _sup_sqrt_lmax(_sq_avg(g, first), method)
    prev = conditional_expectation(g, first)
    for lev in F.levels[1:]:
        best = max(best, _sup_sqrt_lmax(_sq_avg(g - prev, lev), method))
        prev = conditional_expectation(g, lev)
    return best


def matrix_bmo_norm(F, filt: Filtration, variant="BMO", side: str = "max",
                    complete: bool = True, method: str = "jacobi") -> float:
    """Column, row or max operator-valued bmo/BMO norm (p = 2).

    Column: sup over atoms of ||avg_A (F - F_A)^*(F - F_A)||^(1/2); row: the
    column norm of F^*.  The plain bmo variant adds sup over level-1 atoms
    of the operator norm of F_A, as in the scalar case.
    """
    v = NormVariant.parse(variant)
    G = _values(F)
    Fl = filt.completed() if complete else filt
    if G.shape[0] != Fl.space.n_cells:
        raise ValueError("matrix function and filtration have different cell counts")
    if side not in ("column", "row", "max"):
        raise ValueError("side must be column, row or max")
    out = []
    if side in ("column", "max"):
        out.append(_column_norm(G, Fl, v, method))
    if side in ("row", "max"):
        out.append(_column_norm(np.conj(np.swapaxes(G, 1, 2)), Fl, v, method))
    return max(out)


# ---------------------------------------------------------------------------
# structural checks


@dataclass
class TensorCheck:
    m: int
    sigma_matrix: float
    sigma_scalar: float
    sampled_ratio: float
    match: bool


def tensor_contraction_check(cov, m: int, seed: int = 0, samples: int = 64,
                             tol: float = 1e-9) -> TensorCheck:
    """Norm of E_a E_b (x) id_m on mean-zero matrix-valued L2 against the scalar sigma.

    The matrix side is computed from a dense operator on the real
    representation (2 m^2 real coordinates per cell) and never uses the
    scalar value; random samples give an additional lower bound.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    sp = cov.space
    scalar = contraction_norm(cov).sigma if cov.admissible else _scalar_sigma(cov)
    S = _sym(averaging_operator(cov.pa) @ averaging_operator(cov.pb), sp)
    k = 2 * m * m
    big = np.kron(S, np.eye(k))
    u = _unit_constant(sp)
    # mean-zero means every real coordinate integrates to zero
    U = np.kron(u[:, None], np.eye(k))
    P = np.eye(len(big)) - U @ U.T
    sig_m = float(linalg.svdvals(P @ big @ P)[0])
    rng = np.random.default_rng(seed)
    ea, eb = cov.pa, cov.pb
    w = sp.weights
    best = 0.0
    for _ in range(samples):
        X = MatrixFunction.random(sp.n_cells, m, rng).values
        X = X - np.tensordot(w, X, axes=1)[None] / sp.total_mass
        Y = conditional_expectation(conditional_expectation(X, eb), ea)
        Y = Y - np.tensordot(w, Y, axes=1)[None] / sp.total_mass
        num = math.sqrt(float(np.tensordot(w, np.abs(Y) ** 2, axes=1).sum()))
        den = math.sqrt(float(np.tensordot(w, np.abs(X) ** 2, axes=1).sum()))
        best = max(best, num / den)
    return TensorCheck(m, sig_m, scalar, best, abs(sig_m - scalar) <= tol and best <= sig_m + tol)


def _scalar_sigma(cov) -> float:
    sp = cov.space
    S = _sym(averaging_operator(cov.pa) @ averaging_operator(cov.pb), sp)
    return _mean_zero_norm(S, _unit_constant(sp))


@dataclass
class KadisonSchwarz:
    holds: bool
    min_eigenvalue: float


def kadison_schwarz_check(F, p: AtomicPartition, tol: float = 1e-10,
                          method: str = "jacobi") -> KadisonSchwarz:
    """E(F)^* E(F) <= E(F^* F) on every atom, by the smallest eigenvalue of the gap."""
    G = _values(F)
    mean = p.atom_averages(G)
    lhs = np.einsum("nji,njk->nik", np.conj(mean), mean)
    rhs = _sq_avg(G, p)
    gap = rhs - lhs
    lo = min(_lam_min((M + M.conj().T) / 2, method) for M in gap)
    scale = max(1.0, float(np.max(np.abs(rhs))))
    return KadisonSchwarz(lo >= -tol * scale, lo)

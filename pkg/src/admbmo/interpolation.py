"""Contraction of composed conditional expectations and the norm equivalence it implies."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize, sparse

from .covering import AdmissibleCovering, atom_ordering, coarsen
from .filtration import (AtomicPartition, conditional_expectation, intersection_measures,
                         intersection_trivial)
from .norms import lp_norm

DENSE_LIMIT = 2048


@dataclass
class ContractionReport:
    sigma: float
    sigma_adjoint: float
    c_value: float
    bound: float
    equivalence_bound_p2: float
    method: str
    admissible: bool

    @property
    def certificate(self) -> bool:
        return self.sigma <= self.bound + 1e-9 and self.sigma < 1

    def as_dict(self) -> dict:
        return {
            "sigma": self.sigma, "sigma_adjoint": self.sigma_adjoint, "c": self.c_value,
            "bound": self.bound, "equivalence_bound_p2": self.equivalence_bound_p2,
            "method": self.method, "admissible": self.admissible,
        }


def averaging_operator(p: AtomicPartition) -> np.ndarray:
    """Dense matrix of E_p acting on cell values."""
    return p.averaging_matrix().toarray()[p.labels]


def _unit_constant(space) -> np.ndarray:
    return np.sqrt(space.weights) / math.sqrt(space.total_mass)


def _sym(op: np.ndarray, space) -> np.ndarray:
    """D^(1/2) op D^(-1/2): the weighted operator in Euclidean coordinates."""
    s = np.sqrt(space.weights)
    return (s[:, None] * op) / s[None, :]


def _mean_zero_norm(sym: np.ndarray, u: np.ndarray) -> float:
    proj = sym - np.outer(sym @ u, u)
    proj = proj - np.outer(u, u @ proj)
    return float(linalg.svdvals(proj)[0])


def contraction_dense(pa: AtomicPartition, pb: AtomicPartition):
    """Norms of E_a E_b and E_b E_a on mean-zero L2, each from its own dense matrix."""
    sp = pa.space
    ea, eb = averaging_operator(pa), averaging_operator(pb)
    u = _unit_constant(sp)
    s_ab = _mean_zero_norm(_sym(ea @ eb, sp), u)
    s_ba = _mean_zero_norm(_sym(eb @ ea, sp), u)
    return s_ab, s_ba


def _atom_bases(pa: AtomicPartition, pb: AtomicPartition):
    """Orthonormal indicator bases (in D^(1/2) coordinates) as sparse matrices."""
    sp = pa.space
    s = np.sqrt(sp.weights)

    def basis(p):
        vals = s / np.sqrt(p.masses[p.labels])
        return sparse.csc_matrix((vals, (np.arange(sp.n_cells), p.labels)),
                                 shape=(sp.n_cells, p.n_atoms))

    return basis(pa), basis(pb)


def reduced_overlap(pa: AtomicPartition, pb: AtomicPartition) -> np.ndarray:
    """mu(A∩B)/sqrt(mu(A)mu(B)) - sqrt(mu(A)mu(B))/mu(Omega)."""
    inc = intersection_measures(pa, pb).toarray()
    ma, mb = pa.masses, pb.masses
    tot = pa.space.total_mass
    return inc / np.sqrt(np.outer(ma, mb)) - np.sqrt(np.outer(ma, mb)) / tot


def contraction_reduced(pa: AtomicPartition, pb: AtomicPartition):
    m = reduced_overlap(pa, pb)
    return float(linalg.svdvals(m)[0]), float(linalg.svdvals(m.T)[0])


def contraction_norm(cov: AdmissibleCovering, method: str = "auto") -> ContractionReport:
    """Exact norm sigma of E_a E_b on mean-zero L2(mu).

    Truncated infinite-measure spaces are treated on the mean-zero subspace
    as well, since constants are fixed by both expectations there.
    """
    if not cov.admissible:
        warnings.warn("covering is not admissible; computing sigma anyway", RuntimeWarning)
    if method == "auto":
        method = "dense" if cov.space.n_cells <= DENSE_LIMIT else "reduced"
    if method == "dense":
        s_ab, s_ba = contraction_dense(cov.pa, cov.pb)
    elif method == "reduced":
        s_ab, s_ba = contraction_reduced(cov.pa, cov.pb)
    else:
        raise ValueError(f"unknown method {method!r}")
    c = cov.c_value
    return ContractionReport(
        sigma=s_ab, sigma_adjoint=s_ba, c_value=c, bound=math.sqrt(c) if c == c else float("nan"),
        equivalence_bound_p2=1.0 / (1.0 - s_ab) if s_ab < 1 else float("inf"),
        method=method, admissible=cov.admissible,
    )


# ---------------------------------------------------------------------------
# exact p = 2 equivalence


@dataclass
class ExactEquivalence:
    sup_ratio: float
    t_opt: float
    witness: Optional[np.ndarray]
    bound: float
    gap: float


def _reduced_quadratics(pa: AtomicPartition, pb: AtomicPartition):
    """Matrices of Q_a = I - P_a and Q_b on V = span(indicators) ∩ constants^⊥."""
    xa, xb = _atom_bases(pa, pb)
    u = _unit_constant(pa.space)
    span = np.hstack([xa.toarray(), xb.toarray()])
    span = span - np.outer(u, u @ span)
    q, r, _ = linalg.qr(span, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    rank = int(np.sum(d > d[0] * 1e-10)) if len(d) else 0
    w = q[:, :rank]
    pa_w = xa.T @ w
    pb_w = xb.T @ w
    qa = np.eye(rank) - pa_w.T @ pa_w
    qb = np.eye(rank) - pb_w.T @ pb_w
    return w, (qa + qa.T) / 2, (qb + qb.T) / 2


def _lam_min(qa, qb, t):
    return float(linalg.eigh(qa / t + qb / (1 - t), eigvals_only=True, subset_by_index=[0, 0])[0])


def _edge_limit(q0, q1, tol: float = 1e-10):
    """min of x^T q1 x over unit x with q0 x = 0, with its minimizer."""
    if q0.shape[0] == 0:
        return None
    vals, vecs = linalg.eigh(q0)
    ker = vecs[:, vals <= tol]
    if ker.shape[1] == 0:
        return None
    lv, lx = linalg.eigh(ker.T @ q1 @ ker, subset_by_index=[0, 0])
    return float(lv[0]), ker @ lx[:, 0]


def equivalence_exact_p2(cov: AdmissibleCovering, sigma: Optional[float] = None,
                         grid: int = 401) -> ExactEquivalence:
    """sup over mean-zero phi of ||phi|| / (||phi - E_a phi|| + ||phi - E_b phi||) at p = 2.

    Uses (||u|| + ||v||)^2 = min_t ||u||^2/t + ||v||^2/(1-t): the inverse
    square of the sup is min_t of the smallest eigenvalue of Q_a/t + Q_b/(1-t).
    On the orthogonal complement of all atom indicators that eigenvalue is
    1/t + 1/(1-t) >= 4.
    """
    w, qa, qb = _reduced_quadratics(cov.pa, cov.pb)
    n = cov.space.n_cells
    best_t, best = 0.5, 4.0
    if qa.shape[0]:
        ts = np.linspace(0, 1, grid + 2)[1:-1]
        vals = np.array([_lam_min(qa, qb, t) for t in ts])
        i = int(np.argmin(vals))
        lo, hi = ts[max(i - 1, 0)], ts[min(i + 1, len(ts) - 1)]
        res = optimize.minimize_scalar(lambda t: _lam_min(qa, qb, t), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-13})
        cand_t, cand = (float(res.x), float(res.fun)) if res.fun < vals[i] else (float(ts[i]), float(vals[i]))
        if cand < best:
            best_t, best = cand_t, cand
    # t -> 0 and t -> 1: vectors annihilated by one quotient
    edge_vec = None
    for t_edge, q0, q1 in ((0.0, qa, qb), (1.0, qb, qa)):
        lim = _edge_limit(q0, q1)
        if lim is not None and lim[0] < best:
            best_t, best, edge_vec = t_edge, lim[0], lim[1]
    witness = None
    if edge_vec is not None:
        witness = (w @ edge_vec) / np.sqrt(cov.space.weights)
    elif best < 4.0:
        _, vec = linalg.eigh(qa / best_t + qb / (1 - best_t), subset_by_index=[0, 0])
        witness = (w @ vec[:, 0]) / np.sqrt(cov.space.weights)
    elif n > w.shape[1] + 1:
        # any vector orthogonal to the indicators and constants
        rng = np.random.default_rng(0)
        z = rng.standard_normal(n)
        xa, xb = _atom_bases(cov.pa, cov.pb)
        basis = np.hstack([xa.toarray(), xb.toarray()])
        qz, _ = linalg.qr(basis, mode="economic")
        z = z - qz @ (qz.T @ z)
        witness = z / np.sqrt(cov.space.weights)
    sup = 1.0 / math.sqrt(best) if best > 1e-14 else float("inf")
    if sigma is None:
        sigma = contraction_norm(cov).sigma
    bound = 1.0 / (1.0 - sigma) if sigma < 1 else float("inf")
    return ExactEquivalence(sup, best_t, witness, bound, bound - sup)


def quotient_ratio(phi, cov: AdmissibleCovering, p: float) -> Optional[float]:
    """||phi - E phi||_p / (||phi - E_a phi||_p + ||phi - E_b phi||_p); None for constants."""
    sp = cov.space
    phi = np.asarray(phi)
    mean = np.sum(sp.weights * phi) / sp.total_mass
    num = lp_norm(phi - mean, sp, p)
    da = lp_norm(phi - conditional_expectation(phi, cov.pa), sp, p)
    db = lp_norm(phi - conditional_expectation(phi, cov.pb), sp, p)
    scale = max(float(np.max(np.abs(phi))), 1e-300)
    if da + db <= 1e-14 * scale:
        return None
    return num / (da + db)


@dataclass
class EquivalenceResult:
    sup_ratio: float
    min_ratio: float
    witness: Optional[np.ndarray]
    samples: int
    skipped: int
    lower_ok: bool
    lower_bound: float
    ratios: list = field(default_factory=list, repr=False)


def _sample(rng, n, sampler):
    if sampler == "sign-vectors":
        return rng.choice([-1.0, 1.0], size=n)
    return rng.standard_normal(n)


def _coordinate_ascent(phi, cov, p, rounds=20):
    best = quotient_ratio(phi, cov, p) or 0.0
    step = float(np.std(phi)) or 1.0
    phi = phi.copy()
    for _ in range(rounds):
        improved = False
        for i in range(len(phi)):
            for d in (step, -step):
                phi[i] += d
                r = quotient_ratio(phi, cov, p)
                if r is not None and r > best:
                    best, improved = r, True
                    break
                phi[i] -= d
        if not improved:
            step /= 2
    return phi, best


def equivalence_ratio(cov: AdmissibleCovering, p: float, sampler: str = "random-gaussian",
                      trials: int = 1000, seed: int = 0) -> EquivalenceResult:
    """Sampled sup of the Step-2 ratio with the exact per-sample lower bound check.

    The lower bound is 1/2 at p = 2 (the quotients are orthogonal projections
    of phi - E phi) and 1/4 otherwise (each quotient norm is at most
    2 ||phi - E phi||_p).
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if sampler not in ("random-gaussian", "sign-vectors", "optimizer"):
        raise ValueError(f"unknown sampler {sampler!r}")
    rng = np.random.default_rng(seed)
    n = cov.space.n_cells
    lower = 0.5 if p == 2 else 0.25
    best, worst, wit, skipped, ratios = -1.0, float("inf"), None, 0, []
    for _ in range(trials):
        phi = _sample(rng, n, "sign-vectors" if sampler == "sign-vectors" else "gaussian")
        r = quotient_ratio(phi, cov, p)
        if r is None:
            skipped += 1
            continue
        ratios.append(r)
        worst = min(worst, r)
        if r > best:
            best, wit = r, phi
    if sampler == "optimizer" and wit is not None:
        wit, best = _coordinate_ascent(wit, cov, p)
    ok = worst >= lower * (1 - 1e-12)
    return EquivalenceResult(best, worst, wit, trials, skipped, bool(ok), lower, ratios)


# ---------------------------------------------------------------------------
# Step-5 parameters


def _eps_gap(eps, p):
    lhs = math.sqrt(1 - 2 * 4.0**-p)
    rhs = (1 - 4.0**-p) ** (1 / (2 * p)) * math.sqrt(1 - eps**3) - eps**1.5
    return rhs - lhs


def mass_threshold(p: float) -> float:
    q = 4.0**-p
    return max((2 * q / (1 - 2 * q)) ** (1 / (p - 1)), (1 - q) ** (1 / p))


def choose_m_eps(p: float):
    """(mass threshold, largest admissible epsilon) for the given p >= 2.

    The epsilon condition's right side decreases in epsilon, so the
    feasible set is an interval (0, eps*]; eps* is found by bisection.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    thr = mass_threshold(p)
    if _eps_gap(0.0, p) < 0:
        raise ValueError("no epsilon in (0, 1) satisfies the condition")
    if _eps_gap(1.0, p) >= 0:
        return thr, 1.0
    eps = optimize.bisect(_eps_gap, 0.0, 1.0, args=(p,), xtol=1e-12, maxiter=200)
    # stay on the feasible side
    while _eps_gap(eps, p) < 0:
        eps = math.nextafter(eps, 0.0)
    return thr, eps


def eps_feasible(eps: float, p: float) -> bool:
    return _eps_gap(eps, p) >= 0


# ---------------------------------------------------------------------------
# mass absorption


@dataclass
class AbsorptionStats:
    m: int
    p: float
    min: float
    max: float
    mean: float
    samples: int
    skipped: int
    lower_ok: bool
    trivial_after_coarsening: bool
    merged_mass_a: float
    merged_mass_b: float


def mass_absorption_check(cov: AdmissibleCovering, m: int, p: float, trials: int = 1000,
                          seed: int = 0) -> AbsorptionStats:
    """Ratio (||f - E_a(m) f|| + ||f - E_b(m) f||) / (||f - E_a f|| + ||f - E_b f||).

    Coarsening only merges atoms, so E_a E_a(m) = E_a(m) and each original
    quotient is at most twice the coarsened one; the ratio is therefore
    >= 1/2 for every sample, which is asserted.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    order = atom_ordering(cov)
    pam, pbm = coarsen(cov.pa, m, order.a_seq), coarsen(cov.pb, m, order.b_seq)
    triv = intersection_trivial(pam, pbm)
    sp = cov.space
    rng = np.random.default_rng(seed)
    vals, skipped = [], 0
    for _ in range(trials):
        f = rng.standard_normal(sp.n_cells)
        den = (lp_norm(f - conditional_expectation(f, cov.pa), sp, p)
               + lp_norm(f - conditional_expectation(f, cov.pb), sp, p))
        num = (lp_norm(f - conditional_expectation(f, pam), sp, p)
               + lp_norm(f - conditional_expectation(f, pbm), sp, p))
        if den <= 1e-14:
            skipped += 1
            continue
        vals.append(num / den)
    v = np.array(vals) if vals else np.array([float("nan")])
    return AbsorptionStats(
        m=m, p=p, min=float(v.min()), max=float(v.max()), mean=float(v.mean()),
        samples=trials, skipped=skipped, lower_ok=bool(np.all(v >= 0.5 * (1 - 1e-12))),
        trivial_after_coarsening=triv,
        merged_mass_a=float(pam.masses[0]), merged_mass_b=float(pbm.masses[0]),
    )

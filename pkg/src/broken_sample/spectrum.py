"""Singular value decompositions of the likelihood-ratio operator.

For a joint law P_{X,Y} with marginals P_X, P_Y, the kernel
L(x, y) = dP_{X,Y} / d(P_X x P_Y) defines a conditional-mean operator
from L2(P_Y) to L2(P_X).  When L is square integrable the operator is
Hilbert-Schmidt and decomposes as

    L(x, y) = sum_k lambda_k * phi_k(x) * psi_k(y),

with orthonormal eigenfunction families and singular values
1 = lambda_0 >= lambda_1 >= ... >= 0.  The trivial pair
(lambda_0, phi_0, psi_0) = (1, 1, 1) carries no signal and is excluded
from the Spectrum container; values[k-1] is lambda_k.

Two information measures derive from the decomposition: the
chi-square information sum_{k>=1} lambda_k^2 and the maximal
correlation lambda_1.

Supported families: the bivariate-Gaussian product kernel in d
dimensions (diagonalized by normalized probabilists' Hermite
polynomials with singular values rho^degree), the d-coordinate
correlated Bernoulli kernel (rank d, all singular values |rho|), and
arbitrary finite joint pmf matrices (dense SVD).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# Singular values below this are treated as exact zeros in the dense SVD.
RANK_CUTOFF = 1e-12
# Slack allowed above 1.0 before a singular value is considered invalid.
UNIT_SLACK = 1e-9


@dataclass(frozen=True)
class Spectrum:
    """Materialized top of a likelihood-ratio operator spectrum.

    values[k-1] holds lambda_k (the unit lambda_0 is implicit and
    excluded); values are non-increasing and lie in [0, 1].  phi and
    psi evaluate the k-th eigenfunctions (k is 1-based) at an array of
    points and return one float per point.
    """

    values: np.ndarray
    phi: Callable[[int, np.ndarray], np.ndarray]
    psi: Callable[[int, np.ndarray], np.ndarray]
    truncation_rank: int
    meta: dict = field(default_factory=dict)
    # Optional vectorized evaluators (points, r) -> (n, r); same result as
    # stacking phi/psi but in one pass.
    phi_block_fn: Callable | None = None
    psi_block_fn: Callable | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if vals.size:
            if np.any(np.diff(vals) > 1e-12):
                raise ValueError("singular values must be non-increasing")
            if vals[-1] < -1e-12 or vals[0] > 1.0 + UNIT_SLACK:
                raise ValueError("singular values must lie in [0, 1]")

    def phi_block(self, points: np.ndarray, r: int | None = None) -> np.ndarray:
        """Stack phi_1..phi_r evaluated at points into an (n, r) matrix."""
        r = self.truncation_rank if r is None else r
        if self.phi_block_fn is not None:
            return self.phi_block_fn(points, r)
        return np.column_stack([self.phi(k, points) for k in range(1, r + 1)])

    def psi_block(self, points: np.ndarray, r: int | None = None) -> np.ndarray:
        r = self.truncation_rank if r is None else r
        if self.psi_block_fn is not None:
            return self.psi_block_fn(points, r)
        return np.column_stack([self.psi(k, points) for k in range(1, r + 1)])


@dataclass(frozen=True)
class GaussianSpectrumIndex:
    """One Hermite-product eigenfunction of the d-dimensional Gaussian kernel.

    The eigenfunction is the product of normalized probabilists'
    Hermite polynomials, one per coordinate, with degrees given by the
    multi-index; its singular value is rho ** total_degree.
    """

    multi_index: tuple
    total_degree: int
    value: float


def hermite_normalized(k: int, x) -> np.ndarray:
    """Evaluate He_k(x) / sqrt(k!) for the probabilists' Hermite polynomial.

    Uses the normalized three-term recurrence
    h_{k+1} = (x * h_k - sqrt(k) * h_{k-1}) / sqrt(k + 1),
    which avoids factorial overflow; finite for k <= 200, |x| <= 20.
    """
    if k < 0:
        raise ValueError("Hermite degree must be non-negative")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if k == 0:
        return prev
    curr = x.copy()
    for j in range(1, k):
        prev, curr = curr, (x * curr - math.sqrt(j) * prev) / math.sqrt(j + 1)
    return curr


def hermite_normalized_block(x, k_max: int) -> np.ndarray:
    """All normalized Hermite values h_0..h_{k_max} at x, shape (..., k_max+1).

    The recurrence runs over contiguous degree slabs; the returned view
    keeps each fixed-degree slice contiguous.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((k_max + 1,) + x.shape)
    out[0] = 1.0
    if k_max >= 1:
        out[1] = x
    tmp = np.empty_like(x)
    # Same operation order as hermite_normalized, so both paths round
    # identically and agree bit-for-bit.
    for j in range(1, k_max):
        np.multiply(x, out[j], out=out[j + 1])
        np.multiply(out[j - 1], math.sqrt(j), out=tmp)
        out[j + 1] -= tmp
        out[j + 1] /= math.sqrt(j + 1)
    return np.moveaxis(out, 0, -1)


def mehler_kernel(rho: float, a, b) -> np.ndarray:
    """Pointwise likelihood ratio of the correlated bivariate Gaussian pair.

    ell(a, b) = (1 - rho^2)^{-1/2} exp[(-(a^2 + b^2) rho^2 + 2 a b rho)
    / (2 (1 - rho^2))]; equals sum_k rho^k h_k(a) h_k(b) with normalized
    Hermite polynomials h_k.
    """
    if not abs(rho) < 1:
        raise ValueError("mehler_kernel requires |rho| < 1")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    one_minus = 1.0 - rho * rho
    expo = (-(a * a + b * b) * rho * rho + 2.0 * a * b * rho) / (2.0 * one_minus)
    return np.exp(expo) / math.sqrt(one_minus)


def _compositions_reverse_lex(total: int, parts: int):
    """Multi-indices of the given total degree, largest first coordinate first."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions_reverse_lex(total - first, parts - 1):
            yield (first,) + rest


def gaussian_spectrum_indices(d: int, rho: float, r: int) -> list[GaussianSpectrumIndex]:
    """First r multi-indices, enumerated by total degree.

    Within a degree, ties are broken by lexicographic comparison with the
    larger leading coordinate first, so the degree-1 block maps the k-th
    eigenfunction to the k-th coordinate.
    """
    if d < 1 or r < 1:
        raise ValueError("d and r must be positive")
    out: list[GaussianSpectrumIndex] = []
    degree = 1
    while len(out) < r:
        for idx in _compositions_reverse_lex(degree, d):
            out.append(GaussianSpectrumIndex(idx, degree, rho**degree))
            if len(out) == r:
                break
        degree += 1
    return out


def gaussian_spectrum(d: int, rho: float, r: int) -> Spectrum:
    """Top-r singular pairs of the d-dimensional Gaussian product kernel.

    Singular values are rho^{|k|} over multi-indices k enumerated by
    total degree; eigenfunctions are the matching Hermite products.  For
    r = d and rho > 0 the result is the linear block: all values rho and
    phi_k(x) = x_k.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("gaussian_spectrum requires rho in [0, 1)")
    indices = gaussian_spectrum_indices(d, rho, r)
    values = np.array([ix.value for ix in indices])

    def _points(x: np.ndarray) -> np.ndarray:
        pts = np.asarray(x, dtype=float)
        if pts.ndim == 0:
            pts = pts.reshape(1)
        if pts.ndim == 1:
            if d == 1:
                pts = pts[:, None]
            else:
                pts = pts[None, :]
        if pts.shape[1] != d:
            raise ValueError(f"points must have {d} coordinates")
        return pts

    def evaluate(k: int, x) -> np.ndarray:
        pts = _points(x)
        mk = indices[k - 1].multi_index
        out = np.ones(pts.shape[0])
        for j, deg in enumerate(mk):
            if deg:
                out *= hermite_normalized(deg, pts[:, j])
        return out

    def evaluate_block(x, r_req: int) -> np.ndarray:
        # One Hermite recurrence pass per coordinate covers every degree.
        pts = _points(x)
        active = indices[:r_req]
        if d == 1:
            # Degrees are exactly 1..r in enumeration order.
            table = hermite_normalized_block(pts[:, 0], r_req)
            return table[:, 1 : r_req + 1]
        max_deg = [max(ix.multi_index[j] for ix in active) for j in range(d)]
        tables = [hermite_normalized_block(pts[:, j], max_deg[j]) for j in range(d)]
        out = np.ones((pts.shape[0], r_req))
        for k, ix in enumerate(active):
            for j, deg in enumerate(ix.multi_index):
                if deg:
                    out[:, k] *= tables[j][:, deg]
        return out

    meta = {"family": "gaussian", "d": d, "rho": rho,
            "multi_indices": [ix.multi_index for ix in indices]}
    return Spectrum(values=values, phi=evaluate, psi=evaluate,
                    truncation_rank=r, meta=meta,
                    phi_block_fn=evaluate_block, psi_block_fn=evaluate_block)


def bernoulli_admissible_rho(q: float) -> tuple[float, float]:
    """Admissible correlation range for the Bernoulli pair model."""
    return (-min(q / (1 - q), (1 - q) / q), 1.0)


def bernoulli_spectrum(d: int, q: float, rho: float) -> Spectrum:
    """Rank-d spectrum of the d-coordinate correlated Bernoulli kernel.

    Each coordinate contributes the standardized indicator
    g(a) = (a - q) / sqrt(q (1 - q)) with singular value |rho|; a
    negative rho is folded into psi so values stay non-negative.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("bernoulli_spectrum requires q strictly inside (0, 1)")
    lo, hi = bernoulli_admissible_rho(q)
    if not lo - 1e-12 <= rho <= hi + 1e-12:
        raise ValueError(f"rho={rho} outside admissible range [{lo}, {hi}] for q={q}")
    if d < 1:
        raise ValueError("d must be positive")
    scale = math.sqrt(q * (1 - q))
    sign = -1.0 if rho < 0 else 1.0

    def _points(x: np.ndarray) -> np.ndarray:
        pts = np.asarray(x)
        if pts.ndim == 1:
            pts = pts[:, None] if d == 1 else pts[None, :]
        if pts.shape[1] != d:
            raise ValueError(f"points must have {d} coordinates")
        return pts

    def phi(k: int, x) -> np.ndarray:
        pts = _points(x)
        return (pts[:, k - 1] - q) / scale

    def psi(k: int, y) -> np.ndarray:
        pts = _points(y)
        return sign * (pts[:, k - 1] - q) / scale

    values = np.full(d, abs(rho), dtype=float)
    meta = {"family": "bernoulli", "d": d, "q": q, "rho": rho}
    return Spectrum(values=values, phi=phi, psi=psi, truncation_rank=d, meta=meta)


def _validate_joint(joint: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    joint = np.asarray(joint, dtype=float)
    if joint.ndim != 2:
        raise ValueError("joint pmf must be a 2-d matrix")
    if np.any(joint < -1e-15):
        raise ValueError("joint pmf entries must be non-negative")
    total = joint.sum()
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"joint pmf must sum to 1 (got {total!r})")
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    if np.any(px <= 0):
        raise ValueError("degenerate marginal: a row of the joint pmf sums to zero")
    if np.any(py <= 0):
        raise ValueError("degenerate marginal: a column of the joint pmf sums to zero")
    return joint, px, py


def discrete_spectrum(joint) -> Spectrum:
    """Spectrum of a finite joint pmf given as a matrix P(x, y).

    Performs an SVD of K(x, y) = P(x, y) / sqrt(P_X(x) P_Y(y)) after
    removing the exact leading triple (1, sqrt(P_X), sqrt(P_Y)) by
    rank-one deflation, so a second unit singular value (perfect
    correlation) survives.  Eigenfunctions are returned as lookup
    tables over the alphabet indices; signs are fixed by making the
    first non-negligible entry of each left vector positive.
    """
    joint, px, py = _validate_joint(joint)
    sqrt_px = np.sqrt(px)
    sqrt_py = np.sqrt(py)
    kernel = joint / np.outer(sqrt_px, sqrt_py)
    deflated = kernel - np.outer(sqrt_px, sqrt_py)
    u, s, vt = np.linalg.svd(deflated, full_matrices=False)

    if s.size and s[0] > 1.0 + UNIT_SLACK:
        raise ValueError(f"singular value {s[0]!r} exceeds 1 beyond tolerance")
    keep = s > RANK_CUTOFF
    s = np.minimum(s[keep], 1.0)
    u = u[:, keep]
    v = vt[keep, :].T

    # Sign convention: first entry of each left vector with magnitude
    # above tolerance is made positive; the joint flip leaves all
    # statistics unchanged.
    for k in range(s.size):
        col = u[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-10)
        if nz.size and col[nz[0]] < 0:
            u[:, k] = -col
            v[:, k] = -v[:, k]

    phi_table = u / sqrt_px[:, None]
    psi_table = v / sqrt_py[:, None]

    def _states(x) -> np.ndarray:
        pts = np.asarray(x)
        if pts.ndim == 2:
            if pts.shape[1] != 1:
                raise ValueError("discrete points are single integer states")
            pts = pts[:, 0]
        return pts.astype(int)

    def phi(k: int, x) -> np.ndarray:
        return phi_table[_states(x), k - 1]

    def psi(k: int, y) -> np.ndarray:
        return psi_table[_states(y), k - 1]

    meta = {"family": "discrete", "phi_table": phi_table, "psi_table": psi_table}
    return Spectrum(values=s, phi=phi, psi=psi, truncation_rank=int(s.size), meta=meta)


def chi2_information(spectrum_or_model) -> float:
    """Chi-square information sum_{k>=1} lambda_k^2.

    Models with a closed form answer for themselves; a Spectrum yields
    the truncated sum over its materialized values.
    """
    obj = spectrum_or_model
    if hasattr(obj, "chi2_information"):
        return float(obj.chi2_information())
    if isinstance(obj, Spectrum):
        return float(np.sum(obj.values**2))
    raise TypeError(f"cannot compute chi-square information for {type(obj)!r}")


def maximal_correlation(spectrum: Spectrum) -> float:
    """Largest non-trivial singular value lambda_1 (0 for independence)."""
    if spectrum.values.size == 0:
        return 0.0
    return float(spectrum.values[0])


def gaussian_power_sums(d: int, rho: float, m_max: int) -> np.ndarray:
    """Exact power sums p_j = sum_k lambda_k^{2j} of the full Gaussian spectrum.

    Includes the unit lambda_0.  Counting multi-indices of each degree
    gives the closed form p_j = (1 - rho^{2j})^{-d}.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("requires rho in [0, 1)")
    j = np.arange(1, m_max + 1, dtype=float)
    return (1.0 - rho ** (2.0 * j)) ** (-float(d))


def gaussian_values_truncated(d: int, rho: float, tol: float = 1e-14):
    """Distinct Gaussian singular values with lambda^2 >= tol, plus multiplicities.

    Returns (values, multiplicities, info) where values[t-1] = rho^t for
    degrees t = 1..T, multiplicities count the multi-indices of each
    degree, and info records the truncation level.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("requires rho in [0, 1)")
    values = []
    mult = []
    t = 1
    while rho > 0 and (rho**t) ** 2 >= tol:
        values.append(rho**t)
        mult.append(math.comb(t + d - 1, d - 1))
        t += 1
    info = {"dropped_below_sq": tol, "kept_degrees": t - 1}
    return np.array(values), np.array(mult, dtype=float), info

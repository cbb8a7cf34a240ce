"""Permutation-blind test statistics for correlation between unlinked samples.

Every detector consumes only the empirical distributions of the two
samples (sums, histograms, sorted order, optimal matchings), never the
hidden pairing, and returns a DetectorReport with a documented
rejection side:

* t_top       reject below: squared difference of the leading spectral
              embeddings; small when the samples are strongly coupled.
* t_inner     reject above: singular-value-weighted inner product of the
              rank-r spectral embeddings, computed in O((n+m) r).
* t_eigen     reject above: Gaussian likelihood-ratio (QDA) statistic of
              the rank-r spectral embeddings under their limiting
              covariance.
* t_means     reject above: the same QDA statistic specialized to sample
              means (degree-1 embeddings).
* t_hist      reject above: QDA statistic of standardized histogram
              vectors on marginal-quantile cells.
* wasserstein reject below: p-Wasserstein distance between the two
              empirical distributions.

Thresholds: where a closed-form choice exists it is the default;
calibrated thresholds from null limit laws can be passed in, and the
report records which was used.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import DegenerateStatisticError, UnsupportedCaseError
from .models import BernoulliModel, Dataset, DiscreteModel, GaussianModel, JointModel

# Degenerate-direction guard for sqrt(alpha) * mu_1 in the histogram QDA.
_UNIT_TOL = 1e-12


@dataclass
class DetectorReport:
    """Outcome of one test on one dataset.

    reject_h0 is True when the statistic falls on the rejection side of
    the threshold; aux["rejects"] names that side.  A missing threshold
    (Wasserstein without calibration) leaves reject_h0 as None.
    """

    name: str
    statistic: float
    threshold: float | None
    reject_h0: bool | None
    aux: dict = field(default_factory=dict)


def _report(name, statistic, threshold, rejects_below, aux, threshold_source):
    aux = dict(aux)
    aux["rejects"] = "below" if rejects_below else "above"
    aux["threshold_source"] = threshold_source
    if threshold is None:
        reject = None
    elif rejects_below:
        reject = bool(statistic < threshold)
    else:
        reject = bool(statistic > threshold)
    return DetectorReport(name=name, statistic=float(statistic),
                          threshold=None if threshold is None else float(threshold),
                          reject_h0=reject, aux=aux)


def _sum_sorted(columns: np.ndarray) -> np.ndarray:
    # Summing each column in sorted order makes the statistics exactly
    # invariant under sample shuffles (identical multisets give
    # bit-identical sums).  Column-major layout keeps the sorts and the
    # reductions contiguous.
    cols = np.array(columns, dtype=float, order="F", copy=True)
    cols.sort(axis=0)
    return cols.sum(axis=0)


def _embeddings(dataset: Dataset, model: JointModel, r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    spectrum = model.spectrum(r)
    phi = spectrum.phi_block(dataset.xs, r)
    psi = spectrum.psi_block(dataset.ys, r)
    big_phi = _sum_sorted(phi) / math.sqrt(dataset.n)
    big_psi = _sum_sorted(psi) / math.sqrt(dataset.m)
    return big_phi, big_psi, spectrum.values[:r]


def t_top(dataset: Dataset, model: JointModel, threshold: float | None = None) -> DetectorReport:
    """Squared gap of the leading embeddings, (Phi_1 - Psi_1)^2.

    Mean 2 under independence and 2 - 2 sqrt(m/n) lambda_1 under the
    planted alternative, so small values indicate coupling.  The default
    threshold is sqrt(eps) with eps = 1 - sqrt(m/n) lambda_1.
    """
    big_phi, big_psi, values = _embeddings(dataset, model, 1)
    statistic = float((big_phi[0] - big_psi[0]) ** 2)
    lam1 = float(values[0])
    eps = 1.0 - math.sqrt(dataset.m / dataset.n) * lam1
    source = "user"
    if threshold is None:
        threshold = math.sqrt(max(eps, 0.0))
        source = "analytic"
    aux = {"lambda1": lam1, "epsilon": eps, "alpha": dataset.alpha}
    return _report("t_top", statistic, threshold, True, aux, source)


def t_inner(dataset: Dataset, model: JointModel, r: int, threshold: float | None = None) -> DetectorReport:
    """Weighted inner product sum_k lambda_k Phi_k Psi_k of rank-r embeddings.

    Equals (nm)^{-1/2} sum_{ij} sum_{k<=r} lambda_k phi_k(X_i) psi_k(Y_j)
    but is evaluated in factored form.  Centered under independence with
    variance sum lambda_k^2; mean sqrt(m/n) sum lambda_k^2 under the
    alternative.  Default threshold: half that mean.
    """
    big_phi, big_psi, values = _embeddings(dataset, model, r)
    statistic = float(np.dot(values, big_phi * big_psi))
    i_r = float(np.sum(values**2))
    source = "user"
    if threshold is None:
        threshold = 0.5 * math.sqrt(dataset.m / dataset.n) * i_r
        source = "analytic"
    aux = {"r": r, "i_chi2_r": i_r, "alpha": dataset.alpha}
    return _report("t_inner", statistic, threshold, False, aux, source)


def _qda_quadratic(u: np.ndarray, v: np.ndarray, s: np.ndarray) -> float:
    """Quadratic part of the QDA statistic for block covariance [[1, s], [s, 1]].

    Each block inverts in closed form; the summand is
    [s^2 (u^2 + v^2) - 2 s u v] / (1 - s^2).
    """
    return float(np.sum((s**2 * (u**2 + v**2) - 2.0 * s * u * v) / (1.0 - s**2)))


def t_eigen(dataset: Dataset, model: JointModel, r: int, threshold: float | None = None) -> DetectorReport:
    """QDA statistic of the rank-r spectral embeddings.

    -1/2 (Phi, Psi)^T (Sigma^{-1} - I)(Phi, Psi) - 1/2 log det Sigma with
    Sigma the limiting alternative covariance (off-diagonal blocks
    sqrt(alpha) lambda_k).  Rejects above 0 by the likelihood-ratio
    convention.  Degenerate when sqrt(alpha) lambda_k = 1 for some k.
    """
    alpha = dataset.alpha
    big_phi, big_psi, values = _embeddings(dataset, model, r)
    s = math.sqrt(alpha) * values
    if np.any(s >= 1.0 - _UNIT_TOL):
        raise DegenerateStatisticError(
            "sqrt(alpha) * lambda_k reaches 1; the limiting covariance is singular")
    log_det = float(np.sum(np.log1p(-alpha * values**2)))
    statistic = -0.5 * _qda_quadratic(big_phi, big_psi, s) - 0.5 * log_det
    source = "user"
    if threshold is None:
        threshold = 0.0
        source = "analytic"
    aux = {"r": r, "alpha": alpha, "lambdas": values.tolist()}
    return _report("t_eigen", statistic, threshold, False, aux, source)


def t_means(dataset: Dataset, alpha: float, rho: float, d: int,
            threshold: float | None = None) -> DetectorReport:
    """QDA test on scaled sample means, for per-coordinate correlation rho.

    With Xbar = n^{-1/2} sum X_i and Ybar = m^{-1/2} sum Y_i the statistic is

        -(alpha rho^2) / (2 (1 - alpha rho^2)) ||Xbar - Ybar||^2
        + sqrt(alpha) rho / (1 + sqrt(alpha) rho) <Xbar, Ybar>
        - (d / 2) log(1 - alpha rho^2),

    which is algebraically the rank-d spectral QDA statistic, since the
    degree-1 eigenfunctions are the coordinates.  Requires alpha rho^2 < 1.
    """
    if alpha * rho**2 >= 1.0:
        raise DegenerateStatisticError("requires alpha * rho^2 < 1")
    xbar = _sum_sorted(np.asarray(dataset.xs, dtype=float)) / math.sqrt(dataset.n)
    ybar = _sum_sorted(np.asarray(dataset.ys, dtype=float)) / math.sqrt(dataset.m)
    sqa = math.sqrt(alpha)
    statistic = (
        -(alpha * rho**2) / (2.0 * (1.0 - alpha * rho**2)) * float(np.sum((xbar - ybar) ** 2))
        + (sqa * rho) / (1.0 + sqa * rho) * float(np.dot(xbar, ybar))
        - (d / 2.0) * math.log1p(-alpha * rho**2)
    )
    source = "user"
    if threshold is None:
        threshold = 0.0
        source = "analytic"
    aux = {"alpha": alpha, "rho": rho, "d": d}
    return _report("t_means", statistic, threshold, False, aux, source)


# ---------------------------------------------------------------------------
# Histogram embedding

@dataclass
class HistogramStructure:
    """Data-independent part of the histogram embedding for (model, w).

    Cell probabilities r (X side) and z (Y side), the discretized joint
    P(I_k x J_l), the standardization matrices, and the SVD of
    C = Ptilde - gamma beta^T restricted to the complement of the
    trivial direction: C^T gamma = 0 and C beta = 0, and the smallest
    singular value (the stripped direction) is exactly zero.
    """

    r: np.ndarray
    z: np.ndarray
    joint: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    a_mat: np.ndarray
    b_mat: np.ndarray
    c_mat: np.ndarray
    mu: np.ndarray          # descending, final entry 0.0
    u_tilde: np.ndarray     # (wx, k) left singular vectors, orthogonal to gamma
    v_tilde: np.ndarray
    assign_x: Callable[[np.ndarray], np.ndarray]
    assign_y: Callable[[np.ndarray], np.ndarray]
    meta: dict


@dataclass
class HistogramEmbedding:
    """Histogram structure plus the standardized vectors of one dataset."""

    structure: HistogramStructure
    s: np.ndarray
    t: np.ndarray
    s_tilde: np.ndarray
    t_tilde: np.ndarray

    def __getattr__(self, item):
        return getattr(self.structure, item)


def _complement_basis(unit: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the hyperplane orthogonal to a unit vector."""
    w = unit.size
    m = np.column_stack([unit, np.eye(w)[:, : w - 1]])
    q, _ = np.linalg.qr(m)
    return q[:, 1:]


def _gaussian_cell_joint(rho: float, w: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quantile edges and exact cell joint for the bivariate Gaussian pair.

    The joint rectangle masses are accumulated from the kernel's Hermite
    expansion: P(I x J) = r z + sum_{t>=1} (rho^t / t) v_t(I) v_t(J) with
    v_t(I) the increment of phi * h_{t-1} over the cell edges.  The
    series converges geometrically for |rho| < 1.
    """
    edges = stats.norm.ppf(np.linspace(0.0, 1.0, w + 1))
    cells = np.full(w, 1.0 / w)
    joint = np.outer(cells, cells)
    if rho != 0.0:
        finite = edges[1:-1]
        pdf = stats.norm.pdf(finite)
        h_prev = np.ones_like(finite)   # h_0
        h_curr = finite.copy()          # h_1
        t = 1
        coef = rho
        while abs(coef) / t > 1e-16:
            if t > 500_000:
                raise RuntimeError("Hermite series for cell masses failed to converge")
            full = np.zeros(w + 1)
            full[1:-1] = pdf * h_prev
            v = full[:-1] - full[1:]
            joint += (coef / t) * np.outer(v, v)
            h_prev, h_curr = h_curr, (finite * h_curr - math.sqrt(t) * h_prev) / math.sqrt(t + 1)
            t += 1
            coef *= rho
        np.clip(joint, 0.0, None, out=joint)
    assign = lambda pts: np.searchsorted(edges[1:-1], np.asarray(pts, dtype=float).reshape(-1), side="right")
    return cells, joint, assign


def _group_atoms(p: np.ndarray, w: int) -> np.ndarray:
    """Map alphabet atoms to at most w contiguous cells of comparable mass.

    Zero-probability cells are merged into a neighbor so every returned
    cell has positive mass.
    """
    a = p.size
    if a > w:
        mid = np.cumsum(p) - p / 2.0
        groups = np.minimum((mid * w).astype(int), w - 1)
    else:
        groups = np.arange(a)
    # Relabel consecutively, then fold zero-mass groups into a neighbor.
    _, groups = np.unique(groups, return_inverse=True)
    mass = np.bincount(groups, weights=p)
    while np.any(mass <= 0.0):
        g = int(np.flatnonzero(mass <= 0.0)[0])
        target = g - 1 if g > 0 else g + 1
        groups[groups == g] = target
        _, groups = np.unique(groups, return_inverse=True)
        mass = np.bincount(groups, weights=p)
    return groups


def _partition(model: JointModel, w: int):
    """Cells, their probabilities, the discretized joint, and assigners.

    Gaussian models (d = 1) use w marginal-quantile intervals; Bernoulli
    and discrete models use their atoms, grouped to at most w cells of
    comparable marginal mass.
    """
    if w < 2:
        raise ValueError("requires w >= 2")
    meta: dict = {"w": w, "model": model.config()["kind"]}
    if isinstance(model, GaussianModel):
        if model.d != 1:
            raise UnsupportedCaseError("histogram cells are implemented for 1-d Gaussian models")
        r, joint, assign_x = _gaussian_cell_joint(model.rho, w)
        z, assign_y = r, assign_x
    else:
        if isinstance(model, BernoulliModel):
            flat = model.to_discrete()
            weights = 2 ** np.arange(model.d - 1, -1, -1, dtype=np.int64)
            to_state = lambda pts: np.atleast_2d(np.asarray(pts)) @ weights
        elif isinstance(model, DiscreteModel):
            flat = model
            to_state = lambda pts: DiscreteModel._flat(pts)
        else:
            raise UnsupportedCaseError(f"no histogram cells for model kind {model.kind!r}")
        gx = _group_atoms(flat.px, w)
        gy = _group_atoms(flat.py, w)
        wx, wy = gx.max() + 1, gy.max() + 1
        ind_x = np.zeros((wx, flat.px.size))
        ind_x[gx, np.arange(flat.px.size)] = 1.0
        ind_y = np.zeros((wy, flat.py.size))
        ind_y[gy, np.arange(flat.py.size)] = 1.0
        joint = ind_x @ flat.joint @ ind_y.T
        r = ind_x @ flat.px
        z = ind_y @ flat.py
        assign_x = lambda pts, _g=gx, _f=to_state: _g[_f(pts)]
        assign_y = lambda pts, _g=gy, _f=to_state: _g[_f(pts)]
        meta["cells_x"], meta["cells_y"] = int(wx), int(wy)
    return r, z, joint, assign_x, assign_y, meta


_STRUCTURE_CACHE: dict = {}


def histogram_structure(model: JointModel, w: int) -> HistogramStructure:
    """Cells, discretized joint, and the SVD machinery for (model, w).

    Data-independent, so results are cached per (model config, w);
    treat the returned arrays as read-only.
    """
    key = (json.dumps(model.config(), sort_keys=True), w)
    cached = _STRUCTURE_CACHE.get(key)
    if cached is not None:
        return cached
    structure = _build_histogram_structure(model, w)
    if len(_STRUCTURE_CACHE) >= 64:
        _STRUCTURE_CACHE.clear()
    _STRUCTURE_CACHE[key] = structure
    return structure


def _build_histogram_structure(model: JointModel, w: int) -> HistogramStructure:
    r, z, joint, assign_x, assign_y, meta = _partition(model, w)
    gamma = np.sqrt(r)
    beta = np.sqrt(z)
    p_tilde = joint / np.outer(gamma, beta)
    c_mat = p_tilde - np.outer(gamma, beta)
    a_mat = np.eye(r.size) - np.outer(gamma, gamma)
    b_mat = np.eye(z.size) - np.outer(beta, beta)

    qx = _complement_basis(gamma)
    qy = _complement_basis(beta)
    c_red = qx.T @ c_mat @ qy
    u_red, svals, vt_red = np.linalg.svd(c_red)
    k = min(r.size, z.size) - 1
    u_tilde = qx @ u_red[:, :k]
    v_tilde = (qy @ vt_red.T)[:, :k]
    for j in range(k):
        col = u_tilde[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-10)
        if nz.size and col[nz[0]] < 0:
            u_tilde[:, j] = -col
            v_tilde[:, j] = -v_tilde[:, j]
    mu = np.concatenate([np.minimum(svals[:k], 1.0), [0.0]])
    return HistogramStructure(r=r, z=z, joint=joint, gamma=gamma, beta=beta,
                              a_mat=a_mat, b_mat=b_mat, c_mat=c_mat, mu=mu,
                              u_tilde=u_tilde, v_tilde=v_tilde,
                              assign_x=assign_x, assign_y=assign_y, meta=meta)


def discretized_chi2(model: JointModel, w: int) -> float:
    """Chi-square divergence of the discretized joint from the product of
    its marginals; equals the sum of squared histogram singular values."""
    r, z, joint, _, _, _ = _partition(model, w)
    return float(np.sum(joint**2 / np.outer(r, z)) - 1.0)


def build_histogram_embedding(dataset: Dataset, model: JointModel, w: int) -> HistogramEmbedding:
    """Standardized histogram vectors of the dataset on the (model, w) cells.

    s_k = (count_k - n r_k) / sqrt(n r_k) and likewise t_l; the reduced
    coordinates are their projections on the non-trivial singular
    directions.
    """
    struct = histogram_structure(model, w)
    counts_x = np.bincount(struct.assign_x(dataset.xs), minlength=struct.r.size)
    counts_y = np.bincount(struct.assign_y(dataset.ys), minlength=struct.z.size)
    s = (counts_x - dataset.n * struct.r) / np.sqrt(dataset.n * struct.r)
    t = (counts_y - dataset.m * struct.z) / np.sqrt(dataset.m * struct.z)
    return HistogramEmbedding(structure=struct, s=s, t=t,
                              s_tilde=struct.u_tilde.T @ s,
                              t_tilde=struct.v_tilde.T @ t)


def t_hist(dataset: Dataset, model: JointModel, w: int,
           threshold: float | None = None) -> DetectorReport:
    """QDA statistic of the standardized histogram vectors.

    On the reduced coordinates the alternative covariance has
    eigenvalues 1 +- sqrt(alpha) mu_k.  When sqrt(alpha) mu_1 = 1 that
    covariance is singular and the statistic degrades to the exact
    coincidence test on the leading coordinate pair.
    """
    emb = build_histogram_embedding(dataset, model, w)
    alpha = dataset.alpha
    mu = emb.mu
    s_top = math.sqrt(alpha) * mu[0] if mu.size else 0.0
    source = "user"
    if s_top >= 1.0 - _UNIT_TOL:
        # Degenerate leading direction: under the alternative the two
        # reduced coordinates coincide; test equality within tolerance.
        statistic = float(abs(emb.s_tilde[0] - emb.t_tilde[0]))
        if threshold is None:
            threshold = 1e-9
            source = "analytic"
        aux = {"w": w, "alpha": alpha, "case": "degenerate_top", "mu1": float(mu[0])}
        return _report("t_hist", statistic, threshold, True, aux, source)
    active = emb.mu[:-1]
    s = math.sqrt(alpha) * active
    log_det = float(np.sum(np.log1p(-alpha * mu**2)))
    statistic = -0.5 * _qda_quadratic(emb.s_tilde, emb.t_tilde, s) - 0.5 * log_det
    if threshold is None:
        threshold = 0.0
        source = "analytic"
    aux = {"w": w, "alpha": alpha, "case": "qda", "mu1": float(mu[0]) if mu.size else 0.0}
    return _report("t_hist", statistic, threshold, False, aux, source)


# ---------------------------------------------------------------------------
# Wasserstein distance between the empirical distributions

def _sorted_1d(points: np.ndarray) -> np.ndarray:
    return np.sort(points.reshape(-1), kind="stable")


def _partial_matching_cost_1d(xs: np.ndarray, ys: np.ndarray, p: int) -> float:
    """Minimum cost of matching all of ys into xs (both sorted), order-preserving.

    The optimal partial matching of sorted sequences under |x - y|^p is
    monotone, so a rolling dynamic program over (x index, y index) with
    skip-or-match transitions finds it in O(n m).
    """
    n, m = xs.size, ys.size
    best = np.full(m + 1, np.inf)
    best[0] = 0.0
    for i in range(1, n + 1):
        hi = min(i, m)
        cost = np.abs(xs[i - 1] - ys[:hi]) ** p
        best[1 : hi + 1] = np.minimum(best[1 : hi + 1], best[:hi] + cost)
    return float(best[m])


def wasserstein_test(dataset: Dataset, p: int, threshold: float | None = None) -> DetectorReport:
    """p-Wasserstein distance between the two empirical distributions.

    Intended for identical marginals.  Equal sizes in one dimension sort
    both samples; unequal sizes in one dimension use the monotone partial
    matching; equal sizes in d >= 2 solve the assignment problem on the
    p-th power cost matrix.  Unequal sizes with d >= 2 are unsupported.
    Cost is averaged over the m matched pairs; rejects below threshold
    (calibration required, no analytic default).
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    xs, ys = np.asarray(dataset.xs, dtype=float), np.asarray(dataset.ys, dtype=float)
    n, m, d = dataset.n, dataset.m, xs.shape[1]
    if d == 1:
        sx, sy = _sorted_1d(xs), _sorted_1d(ys)
        if m == n:
            total = float(np.sum(np.abs(sx - sy) ** p))
        else:
            total = _partial_matching_cost_1d(sx, sy, p)
        method = "sort" if m == n else "partial_dp"
    else:
        if m != n:
            raise UnsupportedCaseError(
                "Wasserstein with d >= 2 requires equal sample sizes")
        cost = cdist(xs, ys) ** p
        rows, cols = linear_sum_assignment(cost)
        total = float(cost[rows, cols].sum())
        method = "assignment"
    statistic = (total / m) ** (1.0 / p)
    aux = {"p": p, "method": method, "alpha": dataset.alpha}
    source = "user" if threshold is not None else "none"
    return _report("wasserstein", statistic, threshold, True, aux, source)

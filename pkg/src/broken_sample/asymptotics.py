"""Limiting null and alternative laws of the test statistics.

Fix alpha = m/n and singular values lambda_1 >= lambda_2 >= ... of the
likelihood-ratio operator.  The log of the all-injections likelihood
ratio converges under the null to

    xi = -1/2 sum_{k>=1} [ s_k/(1-s_k) U_k^2 - s_k/(1+s_k) V_k^2
                           + log(1 - alpha lambda_k^2) ],

with s_k = sqrt(alpha) lambda_k and independent standard normals U_k,
V_k; the rank-r spectral QDA statistic converges to the first r terms
(xi_r), and the histogram QDA statistic converges to the same form
with the discretized singular values mu_k.  Under the alternative the
same quadratic forms are evaluated on correlated pairs with covariance
[[1, s_k], [s_k, 1]] per index.

All laws are delivered by Monte-Carlo sampling: they are weighted sums
of chi-square variables with no convenient closed density.  Draws are
reproducible from (law parameters, count, seed).  Equal singular
values are aggregated into chi-square draws with matching degrees of
freedom, which leaves every law unchanged while keeping high-degree
spectra cheap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateStatisticError
from .models import derive_rng

DRAWS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class LimitLawSample:
    """Monte-Carlo draws from one limit law; reproducible from (law_id, count, seed)."""

    draws: np.ndarray
    law_id: str
    count: int
    seed: int


def _clean_values(values, multiplicities=None) -> tuple[np.ndarray, np.ndarray]:
    vals = np.asarray(values, dtype=float).reshape(-1)
    if multiplicities is None:
        mult = np.ones_like(vals)
    else:
        mult = np.asarray(multiplicities, dtype=float).reshape(-1)
        if mult.shape != vals.shape:
            raise ValueError("multiplicities must match values")
    keep = vals > 0.0
    return vals[keep], mult[keep]


def _check_alpha(values: np.ndarray, alpha: float) -> None:
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    # Tolerance matches the detectors: a singular value within 1e-12 of 1
    # is numerically indistinguishable from the degenerate case.
    if values.size and math.sqrt(alpha) * float(np.max(values)) >= 1.0 - 1e-12:
        raise DegenerateStatisticError(
            "sqrt(alpha) * lambda_1 >= 1: the limit law is degenerate")


def _chi2_draw(rng, dof: float, count: int) -> np.ndarray:
    if dof == 1.0:
        z = rng.standard_normal(count)
        return z * z
    return rng.chisquare(dof, count)


def _null_draws(values, mult, alpha, count, rng) -> np.ndarray:
    s = math.sqrt(alpha) * values
    const = -0.5 * float(np.dot(mult, np.log1p(-alpha * values**2)))
    out = np.full(count, const)
    for sk, g in zip(s, mult):
        u2 = _chi2_draw(rng, g, count)
        v2 = _chi2_draw(rng, g, count)
        out += -0.5 * (sk / (1.0 - sk) * u2 - sk / (1.0 + sk) * v2)
    return out


def _alt_draws(values, mult, alpha, count, rng) -> np.ndarray:
    """Evaluate the null QDA form on pairs drawn under the alternative
    covariance [[1, s], [s, 1]] per index."""
    s = math.sqrt(alpha) * values
    const = -0.5 * float(np.dot(mult, np.log1p(-alpha * values**2)))
    out = np.full(count, const)
    for sk, g in zip(s, mult):
        for _ in range(int(g)):
            z1 = rng.standard_normal(count)
            z2 = rng.standard_normal(count)
            u = z1
            v = sk * z1 + math.sqrt(1.0 - sk * sk) * z2
            out += -0.5 * (sk * sk * (u * u + v * v) - 2.0 * sk * u * v) / (1.0 - sk * sk)
    return out


def sample_xi(values, alpha: float, count: int, seed: int,
              tail_tol: float = 1e-14, multiplicities=None,
              log_tail: float = 0.0) -> LimitLawSample:
    """Null law of the log likelihood ratio, truncated at lambda_k^2 < tail_tol.

    `values` excludes the unit lambda_0.  `log_tail` may carry the
    closed-form sum of the deterministic log terms beyond the
    truncation; the discarded stochastic terms have mean below tail_tol
    each, which is reported in the law id.
    """
    vals, mult = _clean_values(values, multiplicities)
    keep = vals**2 >= tail_tol
    vals, mult = vals[keep], mult[keep]
    _check_alpha(vals, alpha)
    rng = derive_rng(seed)
    draws = _null_draws(vals, mult, alpha, count, rng) - 0.5 * log_tail
    law_id = f"xi(K={vals.size},alpha={alpha!r},tail_tol={tail_tol!r})"
    return LimitLawSample(draws=draws, law_id=law_id, count=count, seed=seed)


def sample_xi_r(values, alpha: float, r: int, count: int, seed: int) -> LimitLawSample:
    """Null law of the rank-r spectral QDA statistic: exactly the first r terms."""
    vals = np.asarray(values, dtype=float).reshape(-1)
    if r < 0 or r > vals.size:
        raise ValueError("r must lie in [0, len(values)]")
    vals, mult = _clean_values(vals[:r])
    _check_alpha(vals, alpha)
    rng = derive_rng(seed)
    draws = _null_draws(vals, mult, alpha, count, rng)
    law_id = f"xi_r(r={r},alpha={alpha!r})"
    return LimitLawSample(draws=draws, law_id=law_id, count=count, seed=seed)


def sample_hist_null(mu, alpha: float, count: int, seed: int) -> LimitLawSample:
    """Null law of the histogram QDA statistic (xi form on the mu_k)."""
    vals, mult = _clean_values(mu)
    _check_alpha(vals, alpha)
    rng = derive_rng(seed)
    draws = _null_draws(vals, mult, alpha, count, rng)
    law_id = f"hist(w_eff={vals.size},alpha={alpha!r})"
    return LimitLawSample(draws=draws, law_id=law_id, count=count, seed=seed)


def h1_limit_law(detector_id: str, values, alpha: float, count: int, seed: int,
                 multiplicities=None) -> LimitLawSample:
    """Alternative law of a QDA-form statistic.

    Draws the embedding pairs from the alternative covariance (blocks
    [[1, s_k], [s_k, 1]]) and evaluates the statistic.  `values` are the
    singular values entering the statistic: lambda's for the spectral
    and sample-mean tests, mu's for the histogram test, the full
    truncated sequence for the likelihood ratio itself.
    """
    vals, mult = _clean_values(values, multiplicities)
    _check_alpha(vals, alpha)
    rng = derive_rng(seed)
    draws = _alt_draws(vals, mult, alpha, count, rng)
    law_id = f"h1({detector_id},K={vals.size},alpha={alpha!r})"
    return LimitLawSample(draws=draws, law_id=law_id, count=count, seed=seed)


def xi_mean(values, alpha: float, multiplicities=None) -> float:
    """Closed-form E[xi] obtained termwise from E[U^2] = E[V^2] = 1."""
    vals, mult = _clean_values(values, multiplicities)
    s = math.sqrt(alpha) * vals
    terms = s / (1.0 - s) - s / (1.0 + s) + np.log1p(-alpha * vals**2)
    return float(-0.5 * np.dot(mult, terms))


def xi_prefix_laws(values, alpha: float, ranks, count: int, seed: int,
                   hypothesis: str = "H0", multiplicities=None) -> dict:
    """Coupled draws of xi_r for every rank in `ranks` plus the full xi.

    One pass accumulates the per-index terms and snapshots the partial
    sums, so each snapshot is exactly distributed as its law while the
    whole family shares randomness (which tightens power comparisons
    across ranks).  Returns {rank: draws, ...} with key "full" for xi.
    """
    vals = np.asarray(values, dtype=float).reshape(-1)
    if multiplicities is None:
        mult = np.ones_like(vals)
    else:
        mult = np.asarray(multiplicities, dtype=float).reshape(-1)
    _check_alpha(vals[vals > 0], alpha)
    ranks = sorted(set(int(r) for r in ranks))
    if any(mult[: max(ranks, default=0)] != 1.0):
        raise ValueError("prefix snapshots need unit multiplicities up to max(ranks)")
    rng = derive_rng(seed)
    out: dict = {}
    total = np.zeros(count)
    log_terms = np.log1p(-alpha * vals**2)
    next_snap = 0
    if ranks and ranks[next_snap] == 0:
        out[0] = total.copy()
        next_snap += 1
    for k in range(vals.size):
        sk = math.sqrt(alpha) * vals[k]
        g = mult[k]
        if sk > 0.0:
            if hypothesis == "H0":
                u2 = _chi2_draw(rng, g, count)
                v2 = _chi2_draw(rng, g, count)
                total += -0.5 * (sk / (1.0 - sk) * u2 - sk / (1.0 + sk) * v2)
            else:
                for _ in range(int(g)):
                    z1 = rng.standard_normal(count)
                    z2 = rng.standard_normal(count)
                    v = sk * z1 + math.sqrt(1.0 - sk * sk) * z2
                    total += -0.5 * (sk * sk * (z1 * z1 + v * v) - 2.0 * sk * z1 * v) / (1.0 - sk * sk)
        total += -0.5 * g * log_terms[k]
        if next_snap < len(ranks) and ranks[next_snap] == k + 1:
            out[k + 1] = total.copy()
            next_snap += 1
    out["full"] = total
    return out


def calibrate_threshold(law: LimitLawSample, type1: float,
                        reject_below: bool = False) -> float:
    """Empirical quantile threshold at the requested type-I level.

    Order statistics, no smoothing: the (1 - type1) quantile for
    reject-above detectors, the type1 quantile for reject-below ones.
    """
    if not 0.0 < type1 < 1.0:
        raise ValueError("type1 must lie in (0, 1)")
    draws = law.draws if isinstance(law, LimitLawSample) else np.asarray(law, dtype=float)
    if reject_below:
        return float(np.quantile(draws, type1, method="lower"))
    return float(np.quantile(draws, 1.0 - type1, method="higher"))


def limit_power(law0: LimitLawSample, law1: LimitLawSample, type1: float,
                reject_below: bool = False) -> float:
    """Fraction of alternative draws on the rejection side of the
    null-calibrated threshold."""
    thr = calibrate_threshold(law0, type1, reject_below=reject_below)
    draws1 = law1.draws if isinstance(law1, LimitLawSample) else np.asarray(law1, dtype=float)
    if reject_below:
        return float(np.mean(draws1 < thr))
    return float(np.mean(draws1 > thr))


# ---------------------------------------------------------------------------
# Draw files: one JSON header line, then a raw little-endian float64 stream.

def write_draws(path, law: LimitLawSample) -> None:
    header = {"schema_version": DRAWS_SCHEMA_VERSION, "law_id": law.law_id,
              "count": law.count, "seed": law.seed, "dtype": "<f8"}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(law.draws.astype("<f8").tobytes())


def read_draws(path) -> LimitLawSample:
    with open(Path(path), "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("schema_version") != DRAWS_SCHEMA_VERSION:
            raise ValueError(f"unsupported draws schema version {header.get('schema_version')!r}")
        draws = np.frombuffer(fh.read(), dtype="<f8")
    if draws.size != header["count"]:
        raise ValueError("draw file length does not match its header")
    return LimitLawSample(draws=draws, law_id=header["law_id"],
                          count=header["count"], seed=header["seed"])

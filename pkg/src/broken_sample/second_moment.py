"""Exact null second moment of the all-injections likelihood ratio.

With two unlinked samples of sizes n >= m, the optimal test averages
the pairwise likelihood ratio over every injection of [m] into [n].
Under independence the second moment of that average has the closed
form

    E0[Lbar^2] = sum_{l=0}^{m} t_l * a_l,

where t_l = binom(n-l-1, m-l) / binom(n, m) is a probability mass
function over the size of the 2-core of the random injection graph and
a_l is the l-th coefficient of the power series of
prod_{k>=0} 1 / (1 - z lambda_k^2), taken over the full singular value
sequence including the unit lambda_0.

This module computes both ingredients, the combinatorial objects
behind them (2-core of an injection, extension counts), geometric
convergence diagnostics of a_l toward prod_{k>=1} (1 - lambda_k^2)^{-1},
and a tiny brute-force oracle that evaluates E0[Lbar^2] by exhaustive
enumeration for finite alphabets.

Convention: `values` arguments here include the leading unit singular
value, i.e. values[0] == 1.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PowerSeriesCoeffs:
    """Coefficients a_0..a_M of prod_k 1/(1 - z lambda_k^2) plus the power sums used."""

    a: np.ndarray
    power_sums: np.ndarray  # p_j = sum_k lambda_k^{2j}, j = 1..M, unit included
    truncation: dict | None = None


@dataclass(frozen=True)
class TwoCoreDecomposition:
    """2-core of the bipartite multigraph with edges (i, i) and (i, pi(i)).

    core_set is the largest I subset of [m] with pi(I) = I (0-based
    indices); the restriction of pi to I is a permutation whose cycle
    type is summarized in cycle_counts[length] = count.
    """

    core_set: tuple
    cycle_counts: dict
    injection: tuple

    @property
    def core_size(self) -> int:
        return len(self.core_set)


@dataclass(frozen=True)
class SecondMomentResult:
    value: float
    limit_product: float
    diverges: bool
    n: int
    m: int
    truncation: dict | None = None


@dataclass(frozen=True)
class LimitGapResult:
    gaps: np.ndarray
    limit_product: float
    fitted_rate: float


def _log_binom(a: int, b: int) -> float:
    """log binom(a, b) with the conventions binom(a, 0) = 1 for a >= -1
    and binom(a, b) = 0 for b > a >= 0."""
    if b == 0:
        return 0.0
    if b < 0 or a < 0:
        return -math.inf
    if b > a:
        return -math.inf
    return math.lgamma(a + 1) - math.lgamma(b + 1) - math.lgamma(a - b + 1)


def t_weights(n: int, m: int) -> np.ndarray:
    """Core-size pmf t_0..t_m; sums to 1 within 1e-12 for n up to ~10^4.

    t_l = binom(n-l-1, m-l) / binom(n, m), with binom(-1, 0) = 1 so the
    m = n case collapses onto t_m = 1.  Evaluated by the exact ratio
    recurrence t_0 = (n-m)/n, t_{l+1} = t_l (m-l)/(n-l-1): every factor
    is a small-integer ratio, so no binomial ever overflows and the
    accumulated error stays at ~m units in the last place.
    """
    if not 1 <= m <= n:
        raise ValueError("requires 1 <= m <= n")
    out = np.zeros(m + 1)
    if m == n:
        out[m] = 1.0
        return out
    # Cumulative product of the per-step ratios, vectorized.
    ell = np.arange(m, dtype=float)
    ratios = (m - ell) / (n - ell - 1.0)
    out[0] = (n - m) / n
    out[1:] = out[0] * np.cumprod(ratios)
    return out


def unit_prepended(values) -> np.ndarray:
    """Insert the implicit unit lambda_0 ahead of a spectrum's values."""
    return np.concatenate([[1.0], np.asarray(values, dtype=float)])


def a_coefficients_from_power_sums(power_sums, m_max: int,
                                   truncation: dict | None = None) -> PowerSeriesCoeffs:
    """a_l from the power sums p_j via the log-derivative recursion
    l * a_l = sum_{j=1}^{l} p_j a_{l-j}; all terms non-negative, so the
    recursion is numerically stable."""
    p = np.asarray(power_sums, dtype=float)
    if p.size < m_max:
        raise ValueError("need power sums p_1..p_M")
    a = np.empty(m_max + 1)
    a[0] = 1.0
    for ell in range(1, m_max + 1):
        a[ell] = np.dot(p[:ell], a[ell - 1 :: -1]) / ell
    return PowerSeriesCoeffs(a=a, power_sums=p[:m_max], truncation=truncation)


def a_coefficients(values, m_max: int, truncation: dict | None = None) -> PowerSeriesCoeffs:
    """Coefficients a_0..a_M for an explicit singular value list.

    `values` must include the unit lambda_0 (values[0] == 1); entries
    lie in [0, 1].  Coefficients are finite for any finite list even
    when several values equal 1.
    """
    vals = np.asarray(values, dtype=float)
    if vals.size == 0 or abs(vals[0] - 1.0) > 1e-12:
        raise ValueError("values must start with the unit singular value lambda_0 = 1")
    if np.any(vals < -1e-12) or np.any(vals > 1 + 1e-12):
        raise ValueError("singular values must lie in [0, 1]")
    sq = vals**2
    p = np.array([np.sum(sq**j) for j in range(1, m_max + 1)])
    return a_coefficients_from_power_sums(p, m_max, truncation=truncation)


def limit_product(values) -> float:
    """prod_{k>=1} (1 - lambda_k^2)^{-1} for values including the unit lambda_0."""
    vals = np.asarray(values, dtype=float)
    tail = vals[1:]
    if np.any(tail >= 1.0):
        return math.inf
    return float(np.exp(-np.sum(np.log1p(-(tail**2)))))


def second_moment(n: int, m: int, values=None, *, power_sums=None,
                  limit: float | None = None,
                  truncation: dict | None = None) -> SecondMomentResult:
    """E0[Lbar^2] = sum_l t_l a_l for an injection of [m] into [n].

    Provide either an explicit value list (unit included) or
    precomputed power sums p_1..p_m (with `limit` for the reported
    infinite product).  Flags divergence of the coefficient sequence
    when a second unit singular value is present and m = n.
    """
    t = t_weights(n, m)
    if power_sums is not None:
        coeffs = a_coefficients_from_power_sums(power_sums, m, truncation=truncation)
        if limit is None:
            raise ValueError("limit must accompany power_sums")
        lim = limit
        diverges = math.isinf(lim) and m == n
    else:
        vals = np.asarray(values, dtype=float)
        coeffs = a_coefficients(vals, m, truncation=truncation)
        lim = limit_product(vals)
        diverges = bool(vals.size > 1 and vals[1] >= 1.0 and m == n)
    value = float(math.fsum(t[ell] * coeffs.a[ell] for ell in range(m + 1)))
    return SecondMomentResult(value=value, limit_product=lim, diverges=diverges,
                              n=n, m=m, truncation=truncation)


def proportional_product_bound(n: int, m: int, values) -> float:
    """prod_{k>=0} (1 - (m/n) lambda_k^2)^{-1}, the proportional-regime bound."""
    vals = np.asarray(values, dtype=float)
    ratio = m / n
    scaled = ratio * vals**2
    if np.any(scaled >= 1.0):
        return math.inf
    return float(np.exp(-np.sum(np.log1p(-scaled))))


def limit_product_from_tail(values, multiplicities) -> float:
    """prod_{k>=1} (1 - lambda_k^2)^{-mult_k} for non-unit values with counts."""
    vals = np.asarray(values, dtype=float)
    mult = np.asarray(multiplicities, dtype=float)
    if np.any(vals >= 1.0):
        return math.inf
    return float(np.exp(-np.dot(mult, np.log1p(-(vals**2)))))


def proportional_bound_from_tail(n: int, m: int, values, multiplicities) -> float:
    """The proportional-regime bound from non-unit values with counts;
    the unit lambda_0 contributes the leading factor (1 - m/n)^{-1}."""
    vals = np.asarray(values, dtype=float)
    mult = np.asarray(multiplicities, dtype=float)
    ratio = m / n
    if ratio >= 1.0 or np.any(ratio * vals**2 >= 1.0):
        return math.inf
    lead = -math.log1p(-ratio)
    return float(np.exp(lead - np.dot(mult, np.log1p(-ratio * vals**2))))


def brute_force_second_moment(n: int, m: int, joint) -> float:
    """Exact E0[Lbar^2] by enumerating every sample configuration.

    Lbar(x, y) averages prod_i L(x_{pi(i)}, y_i) over all injections pi;
    the expectation runs over the product law P_X^n x P_Y^m on finite
    alphabets.  Independent of the power-series route; guarded to
    |X|^n * |Y|^m * #injections <= 1e7.
    """
    joint = np.asarray(joint, dtype=float)
    px = joint.sum(axis=1)
    py = joint.sum(axis=0)
    if np.any(px <= 0) or np.any(py <= 0):
        raise ValueError("degenerate marginal")
    ax, ay = joint.shape
    n_inj = math.perm(n, m)
    if ax**n * ay**m * max(n_inj, 1) > 10**7:
        raise ValueError("brute-force size guard exceeded")
    lr = joint / np.outer(px, py)

    x_configs = np.array(list(itertools.product(range(ax), repeat=n)), dtype=int)
    y_configs = np.array(list(itertools.product(range(ay), repeat=m)), dtype=int)
    wx = px[x_configs].prod(axis=1)
    wy = py[y_configs].prod(axis=1)

    acc = np.zeros((len(x_configs), len(y_configs)))
    for pi in itertools.permutations(range(n), m):
        term = np.ones_like(acc)
        for i in range(m):
            term *= lr[x_configs[:, pi[i]][:, None], y_configs[:, i][None, :]]
        acc += term
    lbar = acc / max(n_inj, 1)
    return float(wx @ (lbar**2) @ wy)


def two_core(pi) -> TwoCoreDecomposition:
    """Peel the injection graph down to its 2-core.

    pi maps [m] into [n], 0-based.  The core is the largest subset I of
    [m] with pi(I) = I, found by repeatedly discarding indices whose
    image has left [m] or a discarded index; cycle counts describe the
    permutation pi restricted to I.
    """
    pi = tuple(int(v) for v in pi)
    m = len(pi)
    if len(set(pi)) != m:
        raise ValueError("pi must be injective")
    alive = [v < m for v in pi]
    # An index survives iff its whole forward orbit stays inside [m].
    changed = True
    while changed:
        changed = False
        for i in range(m):
            if alive[i] and not alive[pi[i]]:
                alive[i] = False
                changed = True
    core = tuple(i for i in range(m) if alive[i])

    cycle_counts: dict[int, int] = {}
    seen = set()
    for start in core:
        if start in seen:
            continue
        length = 0
        j = start
        while j not in seen:
            seen.add(j)
            j = pi[j]
            length += 1
        cycle_counts[length] = cycle_counts.get(length, 0) + 1
    return TwoCoreDecomposition(core_set=core, cycle_counts=cycle_counts, injection=pi)


def count_extensions(n: int, m: int, core_size: int) -> int:
    """Number of injections sharing a fixed 2-core restriction.

    Equals (n - l - 1)(n - l - 2) ... (n - m) for core size l < m, and 1
    when the core is all of [m].
    """
    if not 0 <= core_size <= m <= n:
        raise ValueError("requires 0 <= core_size <= m <= n")
    if core_size == m:
        return 1
    out = 1
    for j in range(core_size + 1, m + 1):
        out *= n - j
    return out


def a_limit_gap(values, ell_max: int) -> LimitGapResult:
    """Gaps |a_l - prod_{k>=1}(1 - lambda_k^2)^{-1}| and their fitted decay.

    Requires lambda_1 < 1.  The geometric rate r in gap ~ C r^{-l} is
    estimated by log-linear regression over l in [ell_max/2, ell_max];
    an all-zero gap sequence reports an infinite rate.
    """
    vals = np.asarray(values, dtype=float)
    if vals.size > 1 and vals[1] >= 1.0:
        raise ValueError("requires lambda_1 < 1")
    coeffs = a_coefficients(vals, ell_max)
    lim = limit_product(vals)
    gaps = np.abs(coeffs.a - lim)
    lo = ell_max // 2
    window = gaps[lo : ell_max + 1]
    # Gaps at the double-precision floor are converged, not informative.
    floor = lim * 1e-13
    ells = np.arange(lo, ell_max + 1, dtype=float)
    mask = window > floor
    if mask.sum() < 2:
        rate = math.inf
    else:
        slope = np.polyfit(ells[mask], np.log(window[mask]), 1)[0]
        rate = float(np.exp(-slope))
    return LimitGapResult(gaps=gaps, limit_product=lim, fitted_rate=rate)


def cycle_index_average(values, ell: int) -> float:
    """(1/l!) sum over permutations of prod_i (sum_k lambda_k^{2i})^{N_i}.

    Exhaustive enumeration over S_l; agrees with a_l.  Intended as an
    independent oracle for small l.
    """
    vals = np.asarray(values, dtype=float)
    sq = vals**2
    power = [None] + [float(np.sum(sq**i)) for i in range(1, ell + 1)]
    total = 0.0
    for perm in itertools.permutations(range(ell)):
        counts = two_core(perm).cycle_counts
        term = 1.0
        for length, cnt in counts.items():
            term *= power[length] ** cnt
        total += term
    return total / math.factorial(ell)

"""Joint models and samplers for the two-sample detection problem.

Under the null, the two samples are independent draws from the
marginals.  Under the alternative, a uniform random injection pi of
[m] into [n] places m correlated pairs (X_{pi(i)}, Y_i); the remaining
n - m points of the X sample are independent marginal draws.

Three joint laws are provided: the d-dimensional correlated Gaussian
(per-coordinate correlation rho), the d-coordinate correlated
Bernoulli (success probability q, correlation rho, four-cell pmf per
coordinate), and an arbitrary finite joint pmf matrix.

All randomness flows through explicit numpy Generators derived from a
64-bit seed plus an optional stream key, so replications are
bit-reproducible regardless of execution order.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import spectrum as spectrum_mod
from .errors import UnsupportedCaseError
from .spectrum import Spectrum, bernoulli_admissible_rho, discrete_spectrum

DATA_SCHEMA_VERSION = 1


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key...); the key tuple acts as a
    counter so parallel replicates never share a stream."""
    return np.random.default_rng(np.random.SeedSequence((int(seed),) + tuple(int(k) for k in key)))


class JointModel:
    """Common interface of the joint laws.

    Points are arrays of shape (count, d): floats for the Gaussian
    family, small non-negative ints for Bernoulli and discrete models.
    """

    kind: str = ""

    def sample_x(self, rng: np.random.Generator, count: int) -> np.ndarray:
        raise NotImplementedError

    def sample_y(self, rng: np.random.Generator, count: int) -> np.ndarray:
        raise NotImplementedError

    def sample_pair(self, rng: np.random.Generator, count: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def likelihood_ratio(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spectrum(self, r: int | None = None) -> Spectrum:
        raise NotImplementedError

    def chi2_information(self) -> float:
        raise NotImplementedError

    def config(self) -> dict:
        raise NotImplementedError

    def lr_power_sums(self, m_max: int) -> np.ndarray:
        """p_j = sum_{k>=0} lambda_k^{2j} for j = 1..m_max, unit value included."""
        raise NotImplementedError

    def spectrum_tail(self, tol: float = 1e-14):
        """(values, multiplicities, info) for all non-unit singular values
        with lambda^2 >= tol."""
        raise NotImplementedError

    @property
    def point_dtype(self):
        return float


class GaussianModel(JointModel):
    """Standard Gaussian marginals on R^d, per-coordinate correlation rho."""

    kind = "gaussian"

    def __init__(self, d: int, rho: float):
        if d < 1:
            raise ValueError("d must be positive")
        if not 0.0 <= rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        self.d = int(d)
        self.rho = float(rho)

    def sample_x(self, rng, count):
        return rng.standard_normal((count, self.d))

    sample_y = sample_x

    def sample_pair(self, rng, count):
        x = rng.standard_normal((count, self.d))
        noise = rng.standard_normal((count, self.d))
        y = self.rho * x + math.sqrt(max(1.0 - self.rho**2, 0.0)) * noise
        return x, y

    def likelihood_ratio(self, x, y):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        out = np.ones(x.shape[0])
        for j in range(self.d):
            out *= spectrum_mod.mehler_kernel(self.rho, x[:, j], y[:, j])
        return out

    def spectrum(self, r=None):
        return spectrum_mod.gaussian_spectrum(self.d, self.rho, self.d if r is None else r)

    def chi2_information(self):
        if self.rho >= 1.0:
            return math.inf
        return (1.0 - self.rho**2) ** (-self.d) - 1.0

    def lr_power_sums(self, m_max):
        # Counting Hermite multi-indices per degree gives (1 - rho^{2j})^{-d}.
        return spectrum_mod.gaussian_power_sums(self.d, self.rho, m_max)

    def spectrum_tail(self, tol=1e-14):
        return spectrum_mod.gaussian_values_truncated(self.d, self.rho, tol)

    def config(self):
        return {"kind": self.kind, "d": self.d, "rho": self.rho}


class BernoulliModel(JointModel):
    """d independent coordinates of a correlated Bernoulli pair.

    Each coordinate follows the four-cell pmf
        p(0,0) = (1-q)(1-q+rho q),  p(0,1) = p(1,0) = q(1-q)(1-rho),
        p(1,1) = q(q + rho(1-q)),
    whose marginals are Bernoulli(q) and whose correlation is rho.
    """

    kind = "bernoulli"

    def __init__(self, d: int, q: float, rho: float):
        if d < 1:
            raise ValueError("d must be positive")
        if not 0.0 < q < 1.0:
            raise ValueError("q must lie strictly inside (0, 1)")
        lo, hi = bernoulli_admissible_rho(q)
        if not lo - 1e-12 <= rho <= hi + 1e-12:
            raise ValueError(f"rho={rho} outside admissible range [{lo}, {hi}]")
        self.d = int(d)
        self.q = float(q)
        self.rho = float(rho)

    @property
    def point_dtype(self):
        return int

    def cell_pmf(self) -> np.ndarray:
        """Single-coordinate joint pmf, rows x in {0,1}, columns y in {0,1}."""
        q, rho = self.q, self.rho
        pmf = np.array([
            [(1 - q) * (1 - q + rho * q), q * (1 - q) * (1 - rho)],
            [q * (1 - q) * (1 - rho), q * (q + rho * (1 - q))],
        ])
        if np.any(pmf < -1e-15):
            raise ValueError("pmf has negative cells; rho outside admissible range")
        return np.clip(pmf, 0.0, None)

    def sample_x(self, rng, count):
        return (rng.random((count, self.d)) < self.q).astype(np.int64)

    sample_y = sample_x

    def sample_pair(self, rng, count):
        # Inverse-CDF over the four cells, per coordinate.
        cum = np.cumsum(self.cell_pmf().reshape(-1))
        cells = np.searchsorted(cum, rng.random((count, self.d)), side="right")
        cells = np.minimum(cells, 3)
        return (cells // 2).astype(np.int64), (cells % 2).astype(np.int64)

    def likelihood_ratio(self, x, y):
        x = np.atleast_2d(np.asarray(x))
        y = np.atleast_2d(np.asarray(y))
        scale = self.q * (1 - self.q)
        gx = (x - self.q) / math.sqrt(scale)
        gy = (y - self.q) / math.sqrt(scale)
        return np.prod(1.0 + self.rho * gx * gy, axis=1)

    def spectrum(self, r=None):
        spectrum = spectrum_mod.bernoulli_spectrum(self.d, self.q, self.rho)
        if r is not None and r > spectrum.truncation_rank:
            raise ValueError(f"Bernoulli spectrum materializes only the top {self.d} pairs")
        return spectrum

    def chi2_information(self):
        return (1.0 + self.rho**2) ** self.d - 1.0

    def lr_power_sums(self, m_max):
        # The full kernel expands over coordinate subsets S with value
        # |rho|^{|S|}, so p_j = (1 + rho^{2j})^d.
        j = np.arange(1, m_max + 1, dtype=float)
        return (1.0 + self.rho ** (2.0 * j)) ** float(self.d)

    def spectrum_tail(self, tol=1e-14):
        values, mult = [], []
        for k in range(1, self.d + 1):
            v = abs(self.rho) ** k
            if v * v < tol:
                break
            values.append(v)
            mult.append(math.comb(self.d, k))
        return np.array(values), np.array(mult, dtype=float), {"dropped_below_sq": tol}

    def to_discrete(self) -> "DiscreteModel":
        """Flatten the d binary coordinates into one alphabet of size 2^d
        (most significant coordinate first)."""
        if self.d > 12:
            raise UnsupportedCaseError("flattening beyond d=12 is not supported")
        joint = self.cell_pmf()
        for _ in range(self.d - 1):
            joint = np.kron(joint, self.cell_pmf())
        return DiscreteModel(joint)

    def config(self):
        return {"kind": self.kind, "d": self.d, "q": self.q, "rho": self.rho}


class DiscreteModel(JointModel):
    """Arbitrary joint pmf over finite alphabets; points are state indices."""

    kind = "discrete"

    def __init__(self, joint):
        self.joint = np.asarray(joint, dtype=float)
        self._spectrum = None
        # Validation (shape, mass, marginals) is shared with the SVD path.
        spectrum_mod._validate_joint(self.joint)
        self.px = self.joint.sum(axis=1)
        self.py = self.joint.sum(axis=0)
        self._lr = self.joint / np.outer(self.px, self.py)

    @property
    def point_dtype(self):
        return int

    @staticmethod
    def _flat(points) -> np.ndarray:
        pts = np.asarray(points)
        if pts.ndim == 2:
            pts = pts[:, 0]
        return pts.astype(int)

    def sample_x(self, rng, count):
        cum = np.cumsum(self.px)
        states = np.minimum(np.searchsorted(cum, rng.random(count), side="right"),
                            len(self.px) - 1)
        return states[:, None].astype(np.int64)

    def sample_y(self, rng, count):
        cum = np.cumsum(self.py)
        states = np.minimum(np.searchsorted(cum, rng.random(count), side="right"),
                            len(self.py) - 1)
        return states[:, None].astype(np.int64)

    def sample_pair(self, rng, count):
        cum = np.cumsum(self.joint.reshape(-1))
        flat = np.minimum(np.searchsorted(cum, rng.random(count), side="right"),
                          self.joint.size - 1)
        xs, ys = np.unravel_index(flat, self.joint.shape)
        return xs[:, None].astype(np.int64), ys[:, None].astype(np.int64)

    def likelihood_ratio(self, x, y):
        return self._lr[self._flat(x), self._flat(y)]

    def spectrum(self, r=None):
        if self._spectrum is None:
            self._spectrum = discrete_spectrum(self.joint)
        spectrum = self._spectrum
        if r is not None and r > spectrum.truncation_rank:
            raise ValueError(f"joint pmf has rank {spectrum.truncation_rank} after the trivial pair")
        return spectrum

    def chi2_information(self):
        return float(np.sum(self.spectrum().values ** 2))

    def lr_power_sums(self, m_max):
        sq = self.spectrum().values ** 2
        j = np.arange(1, m_max + 1, dtype=float)
        return 1.0 + np.sum(sq[None, :] ** j[:, None], axis=1)

    def spectrum_tail(self, tol=1e-14):
        values = self.spectrum().values
        keep = values**2 >= tol
        return values[keep], np.ones(int(keep.sum())), None

    def config(self):
        return {"kind": self.kind, "joint": self.joint.tolist()}


def model_from_config(cfg: dict) -> JointModel:
    kind = cfg.get("kind")
    if kind == "gaussian":
        return GaussianModel(cfg["d"], cfg["rho"])
    if kind == "bernoulli":
        return BernoulliModel(cfg["d"], cfg["q"], cfg["rho"])
    if kind == "discrete":
        return DiscreteModel(np.asarray(cfg["joint"], dtype=float))
    raise ValueError(f"unknown model kind {kind!r}")


@dataclass
class Dataset:
    """Two unlinked samples plus hidden synthesis metadata.

    The hypothesis label and the planted injection exist only for
    diagnostics and scoring; test statistics must not read them, so
    access goes through truth(), which insists on an explicit flag.
    """

    xs: np.ndarray
    ys: np.ndarray
    seed: int
    _hypothesis: str = "H0"
    _injection: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.xs.shape[0]

    @property
    def m(self) -> int:
        return self.ys.shape[0]

    @property
    def alpha(self) -> float:
        return self.m / self.n

    def truth(self, diagnostics: bool = False) -> tuple[str, np.ndarray | None]:
        if not diagnostics:
            raise PermissionError("ground truth is diagnostics-only; pass diagnostics=True")
        return self._hypothesis, self._injection


def sample_injection(m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform injection of [m] into [n].

    A partial Fisher-Yates shuffle when m is a small fraction of n; a
    full vectorized shuffle otherwise (both uniform over the
    n!/(n-m)! ordered selections).
    """
    if m > n:
        raise ValueError("requires m <= n")
    if m < 0:
        raise ValueError("m must be non-negative")
    if m == 0:
        return np.arange(0)
    if 8 * m >= n:
        return rng.permutation(n)[:m].copy()
    pool = np.arange(n)
    draws = rng.random(m)
    for i in range(m):
        j = i + int(draws[i] * (n - i))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:m].copy()


def sample_dataset(model: JointModel, n: int, m: int, hypothesis: str,
                   seed: int, stream: tuple[int, ...] = ()) -> Dataset:
    """Draw one dataset under H0 (all independent) or H1 (planted injection).

    Under H1 the correlated pairs are placed at (pi(i), i) and the
    complement of pi's range is filled with independent marginal draws.
    The draw order is fixed (injection, pairs, complement) so equal
    seeds give bit-identical datasets.
    """
    if not 1 <= m <= n:
        raise ValueError("requires 1 <= m <= n")
    if hypothesis not in ("H0", "H1"):
        raise ValueError("hypothesis must be 'H0' or 'H1'")
    rng = derive_rng(seed, *stream)
    if hypothesis == "H0":
        xs = model.sample_x(rng, n)
        ys = model.sample_y(rng, m)
        return Dataset(xs=xs, ys=ys, seed=seed, _hypothesis="H0", _injection=None)
    pi = sample_injection(m, n, rng)
    x_pair, ys = model.sample_pair(rng, m)
    complement = np.setdiff1d(np.arange(n), pi, assume_unique=True)
    xs = np.empty((n,) + x_pair.shape[1:], dtype=x_pair.dtype)
    xs[pi] = x_pair
    if complement.size:
        xs[complement] = model.sample_x(rng, complement.size)
    return Dataset(xs=xs, ys=ys, seed=seed, _hypothesis="H1", _injection=pi)


# ---------------------------------------------------------------------------
# Serialization: a CSV per sample plus a JSON sidecar for replay.

def _write_points(path: Path, points: np.ndarray, as_int: bool) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j + 1}" for j in range(points.shape[1])])
        for row in points:
            writer.writerow([int(v) if as_int else repr(float(v)) for v in row])


def save_dataset(dataset: Dataset, model: JointModel, directory) -> dict:
    """Write xs.csv, ys.csv and meta.json under `directory`; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    as_int = model.point_dtype is int
    xs_path, ys_path = directory / "xs.csv", directory / "ys.csv"
    meta_path = directory / "meta.json"
    _write_points(xs_path, dataset.xs, as_int)
    _write_points(ys_path, dataset.ys, as_int)
    hypothesis, _ = dataset.truth(diagnostics=True)
    meta = {
        "schema_version": DATA_SCHEMA_VERSION,
        "model": model.config(),
        "seed": dataset.seed,
        "hypothesis": hypothesis,
        "n": dataset.n,
        "m": dataset.m,
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"xs": str(xs_path), "ys": str(ys_path), "meta": str(meta_path)}


def _read_points(path, as_int: bool) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or not header[0].startswith("x"):
            raise ValueError(f"{path}: missing column header row")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ValueError(f"{path}: row {lineno} has {len(row)} fields, expected {width}")
            try:
                rows.append([int(v) if as_int else float(v) for v in row])
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
    dtype = np.int64 if as_int else float
    return np.asarray(rows, dtype=dtype)


def load_dataset(xs_path, ys_path, meta_path) -> tuple[Dataset, JointModel]:
    """Load a dataset written by save_dataset; raises on malformed rows."""
    with open(meta_path) as fh:
        meta = json.load(fh)
    if meta.get("schema_version") != DATA_SCHEMA_VERSION:
        raise ValueError(f"unsupported dataset schema version {meta.get('schema_version')!r}")
    model = model_from_config(meta["model"])
    as_int = model.point_dtype is int
    xs = _read_points(xs_path, as_int)
    ys = _read_points(ys_path, as_int)
    if xs.shape[0] != meta["n"] or ys.shape[0] != meta["m"]:
        raise ValueError("sample sizes do not match the sidecar")
    dataset = Dataset(xs=xs, ys=ys, seed=meta["seed"],
                      _hypothesis=meta["hypothesis"], _injection=None)
    return dataset, model

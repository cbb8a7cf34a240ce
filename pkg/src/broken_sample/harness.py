"""Experiment orchestration: ROC sweeps, power sweeps, reports, replay.

Curves come from one of two sources.  `limit_law` samples the
asymptotic null and alternative laws of a detector (supported for the
likelihood ratio and the spectral, sample-mean, and histogram QDA
statistics).  `finite_n` replicates synthetic datasets and evaluates
the detector on each (supported for every detector, and the only
source for the Wasserstein test).

Every emitted CSV row carries the schema version, the sweep
coordinates, the Monte-Carlo size, and the seed, so any row can be
reproduced in isolation.  Replicate r of a run with seed s draws from
the stream (s, task index), which makes outputs independent of
execution order and worker count.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__ as PACKAGE_VERSION
from . import asymptotics, detectors
from .errors import ConfigError
from .models import Dataset, JointModel, load_dataset, model_from_config, sample_dataset
from .second_moment import (
    proportional_bound_from_tail,
    limit_product_from_tail,
    second_moment as exact_second_moment,
)

CSV_SCHEMA_VERSION = 1
REPORT_SCHEMA_VERSION = 1

ROC_COLUMNS = ["schema_version", "detector", "params", "alpha", "rho",
               "fpr", "tpr", "tpr_stderr", "draws", "seed", "source"]
POWER_COLUMNS = ["schema_version", "detector", "params", "alpha", "rho",
                 "type1_nominal", "type1_rate", "type1_stderr",
                 "power", "power_stderr", "draws", "seed", "source"]

# Detector registry: rejection side and which sources can drive it.
_DETECTORS = {
    "t_top": {"reject_below": True, "sources": {"finite_n"}},
    "t_inner": {"reject_below": False, "sources": {"finite_n"}},
    "t_eigen": {"reject_below": False, "sources": {"finite_n", "limit_law"}},
    "t_means": {"reject_below": False, "sources": {"finite_n", "limit_law"}},
    "t_hist": {"reject_below": False, "sources": {"finite_n", "limit_law"}},
    "wasserstein": {"reject_below": True, "sources": {"finite_n"}},
    "lr": {"reject_below": False, "sources": {"limit_law"}},
    "trivial": {"reject_below": False, "sources": {"finite_n", "limit_law"}},
}

DEFAULT_RHO_GRID = [round(float(v), 6) for v in np.linspace(0.2, 0.99, 25)]
DEFAULT_FPR_GRID = [round(float(v), 6) for v in np.linspace(0.01, 0.99, 50)]


@dataclass
class CurvePoint:
    detector: str
    params: str
    sweep_value: float
    type1_nominal: float
    type1_rate: float
    type1_stderr: float
    power: float
    power_stderr: float
    source: str
    seed: int
    draws: int
    alpha: float


@dataclass
class ExperimentConfig:
    """Validated description of one sweep; see validate() for the rules."""

    model: dict
    n: int
    m: int
    detectors: list = field(default_factory=list)
    sweep: dict = field(default_factory=dict)
    replicates: int = 1000
    type1: float = 0.05
    seed: int = 0
    source: str = "limit_law"
    out: str | None = None

    @staticmethod
    def from_json(path) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        allowed = {"model", "n", "m", "detectors", "sweep", "replicates",
                   "type1", "seed", "source", "out"}
        unknown = set(raw) - allowed
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return ExperimentConfig(**raw)

    def validate(self) -> None:
        def fail(path, msg):
            raise ConfigError(f"{path}: {msg}")

        if not isinstance(self.model, dict) or "kind" not in self.model:
            fail("model", "must be an object with a 'kind'")
        try:
            model_from_config(self.model)
        except (ValueError, KeyError) as exc:
            fail("model", str(exc))
        if not (isinstance(self.n, int) and self.n >= 1):
            fail("n", "must be a positive integer")
        if not (isinstance(self.m, int) and 1 <= self.m <= self.n):
            fail("m", "must satisfy 1 <= m <= n")
        if not (isinstance(self.replicates, int) and self.replicates >= 1):
            fail("replicates", "must be a positive integer")
        if not (0.0 < self.type1 < 1.0):
            fail("type1", "must lie in (0, 1)")
        if self.source not in ("finite_n", "limit_law"):
            fail("source", "must be 'finite_n' or 'limit_law'")
        if not self.detectors:
            fail("detectors", "must name at least one detector")
        for i, det in enumerate(self.detectors):
            name = det.get("name") if isinstance(det, dict) else None
            if name not in _DETECTORS:
                fail(f"detectors[{i}].name", f"unknown detector {name!r}")
            if name in ("t_inner", "t_eigen") and not det.get("r"):
                fail(f"detectors[{i}].r", f"{name} requires a positive rank r")
            if name == "t_means" and self.model.get("kind") == "discrete":
                fail(f"detectors[{i}]", "t_means needs a coordinate model (gaussian/bernoulli)")
            if name == "t_hist" and not (isinstance(det.get("w"), int) and det["w"] >= 2):
                fail(f"detectors[{i}].w", "t_hist requires an integer w >= 2")
            if name == "wasserstein" and det.get("p", 1) not in (1, 2):
                fail(f"detectors[{i}].p", "p must be 1 or 2")
            if self.source not in _DETECTORS[name]["sources"]:
                fail(f"detectors[{i}]", f"{name} does not support source {self.source!r}")
        grid = self.sweep.get("grid")
        if grid is not None:
            if not grid or list(grid) != sorted(grid):
                fail("sweep.grid", "must be non-empty and sorted")


def _params_str(det: dict) -> str:
    keys = [k for k in ("r", "w", "p") if k in det]
    return ",".join(f"{k}={det[k]}" for k in keys) if keys else "-"


def _binom_stderr(p: float, count: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / count)


def _model_at_rho(base: dict, rho: float) -> JointModel:
    cfg = dict(base)
    if "rho" in cfg:
        cfg["rho"] = float(rho)
    else:
        raise ConfigError("sweep.variable=rho requires a model with a rho parameter")
    return model_from_config(cfg)


def _finite_statistic(det: dict, dataset: Dataset, model: JointModel) -> float:
    name = det["name"]
    if name == "t_top":
        return detectors.t_top(dataset, model).statistic
    if name == "t_inner":
        return detectors.t_inner(dataset, model, det["r"]).statistic
    if name == "t_eigen":
        return detectors.t_eigen(dataset, model, det["r"]).statistic
    if name == "t_means":
        return detectors.t_means(dataset, dataset.alpha, model.rho, model.d).statistic
    if name == "t_hist":
        return detectors.t_hist(dataset, model, det["w"]).statistic
    if name == "wasserstein":
        return detectors.wasserstein_test(dataset, det.get("p", 1)).statistic
    raise ConfigError(f"detector {name!r} has no finite-n statistic")


def _finite_laws(det: dict, model: JointModel, n: int, m: int,
                 replicates: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Null and alternative statistic replicates; stream (seed, hyp, task)."""
    stats0 = np.empty(replicates)
    stats1 = np.empty(replicates)
    for task in range(replicates):
        ds0 = sample_dataset(model, n, m, "H0", seed, stream=(0, task))
        stats0[task] = _finite_statistic(det, ds0, model)
        ds1 = sample_dataset(model, n, m, "H1", seed, stream=(1, task))
        stats1[task] = _finite_statistic(det, ds1, model)
    return stats0, stats1


def _limit_laws(det: dict, model: JointModel, alpha: float,
                count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    name = det["name"]
    if name == "lr":
        values, mult, _ = model.spectrum_tail(1e-14)
        law0 = asymptotics.sample_xi(values, alpha, count, seed,
                                     multiplicities=mult).draws
        law1 = asymptotics.h1_limit_law("lr", values, alpha, count, seed + 1,
                                        multiplicities=mult).draws
        return law0, law1
    if name in ("t_eigen", "t_means"):
        r = det["r"] if name == "t_eigen" else model.d
        values = model.spectrum(r).values
        law0 = asymptotics.sample_xi_r(values, alpha, r, count, seed).draws
        law1 = asymptotics.h1_limit_law(name, values[:r], alpha, count, seed + 1).draws
        return law0, law1
    if name == "t_hist":
        mu = detectors.histogram_structure(model, det["w"]).mu
        law0 = asymptotics.sample_hist_null(mu, alpha, count, seed).draws
        law1 = asymptotics.h1_limit_law(name, mu, alpha, count, seed + 1).draws
        return law0, law1
    raise ConfigError(f"detector {name!r} has no implemented limit law")


def _curve_point(det, law0, law1, fpr, sweep_value, source, seed, alpha) -> CurvePoint:
    reject_below = _DETECTORS[det["name"]]["reject_below"]
    thr = asymptotics.calibrate_threshold(law0, fpr, reject_below=reject_below)
    if reject_below:
        realized = float(np.mean(law0 < thr))
        power = float(np.mean(law1 < thr))
    else:
        realized = float(np.mean(law0 > thr))
        power = float(np.mean(law1 > thr))
    count = len(law0)
    return CurvePoint(detector=det["name"], params=_params_str(det),
                      sweep_value=sweep_value, type1_nominal=fpr,
                      type1_rate=realized, type1_stderr=_binom_stderr(realized, count),
                      power=power, power_stderr=_binom_stderr(power, len(law1)),
                      source=source, seed=seed, draws=count, alpha=alpha)


def _trivial_point(fpr, sweep_value, source, seed, draws, alpha) -> CurvePoint:
    # Rejecting with probability fpr independently of the data.
    return CurvePoint(detector="trivial", params="-", sweep_value=sweep_value,
                      type1_nominal=fpr, type1_rate=fpr, type1_stderr=0.0,
                      power=fpr, power_stderr=0.0, source=source,
                      seed=seed, draws=draws, alpha=alpha)


def run_roc(config: ExperimentConfig) -> list[CurvePoint]:
    """ROC curves: for each detector and FPR grid point, calibrate on the
    null law and evaluate power on the alternative law."""
    config.validate()
    grid = config.sweep.get("grid") or DEFAULT_FPR_GRID
    if config.sweep.get("variable", "fpr") != "fpr":
        raise ConfigError("sweep.variable: run_roc sweeps 'fpr'")
    model = model_from_config(config.model)
    alpha = config.m / config.n
    rho = float(config.model.get("rho", math.nan))
    points: list[CurvePoint] = []
    for d_idx, det in enumerate(config.detectors):
        seed = config.seed + 1000 * d_idx
        if det["name"] == "trivial":
            for fpr in grid:
                points.append(_trivial_point(fpr, rho, config.source, seed,
                                             config.replicates, alpha))
            continue
        if config.source == "limit_law":
            law0, law1 = _limit_laws(det, model, alpha, config.replicates, seed)
        else:
            law0, law1 = _finite_laws(det, model, config.n, config.m,
                                      config.replicates, seed)
        for fpr in grid:
            points.append(_curve_point(det, law0, law1, fpr, rho,
                                       config.source, seed, alpha))
    if config.out:
        write_curves_csv(config.out, "roc", points)
    return points


def run_power_sweep(config: ExperimentConfig) -> list[CurvePoint]:
    """Power against the sweep grid of rho at a fixed type-I level,
    including the trivial baseline."""
    config.validate()
    if config.sweep.get("variable", "rho") != "rho":
        raise ConfigError("sweep.variable: run_power_sweep sweeps 'rho'")
    grid = config.sweep.get("grid") or DEFAULT_RHO_GRID
    alpha = config.m / config.n
    points: list[CurvePoint] = []
    for g_idx, rho in enumerate(grid):
        model = _model_at_rho(config.model, rho)
        for d_idx, det in enumerate(config.detectors):
            seed = config.seed + 1000 * d_idx + 101 * g_idx
            if det["name"] == "trivial":
                points.append(_trivial_point(config.type1, rho, config.source,
                                             seed, config.replicates, alpha))
                continue
            if config.source == "limit_law":
                law0, law1 = _limit_laws(det, model, alpha, config.replicates, seed)
            else:
                law0, law1 = _finite_laws(det, model, config.n, config.m,
                                          config.replicates, seed)
            points.append(_curve_point(det, law0, law1, config.type1, rho,
                                       config.source, seed, alpha))
    if config.out:
        write_curves_csv(config.out, "power", points)
    return points


def run_second_moment_report(config: ExperimentConfig) -> dict:
    """Exact E0[Lbar^2] plus the proportional-regime bound and the
    equal-size limit product for the configured model and sizes."""
    if not isinstance(config.model, dict) or "kind" not in config.model:
        raise ConfigError("model: must be an object with a 'kind'")
    model = model_from_config(config.model)
    n, m = config.n, config.m
    if not 1 <= m <= n:
        raise ConfigError("m: must satisfy 1 <= m <= n")
    tail_values, tail_mult, truncation = model.spectrum_tail(1e-14)
    limit = limit_product_from_tail(tail_values, tail_mult)
    result = exact_second_moment(
        n, m, power_sums=model.lr_power_sums(m), limit=limit, truncation=truncation)
    bound = proportional_bound_from_tail(n, m, tail_values, tail_mult)
    # Non-finite values are serialized as strings; "Infinity" is not JSON.
    as_json = lambda v: v if math.isfinite(v) else repr(v)
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "package_version": PACKAGE_VERSION,
        "n": n,
        "m": m,
        "alpha": m / n,
        "spectrum_source": config.model,
        "E0L2": as_json(result.value),
        "limit_product": as_json(limit),
        "proportional_bound": as_json(bound),
        "regime": "equal_sizes" if m == n else "proportional",
        "diverges": result.diverges,
        "truncation": truncation,
    }
    if config.out:
        with open(config.out, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return report


def write_curves_csv(path_or_file, kind: str, points: list) -> None:
    if hasattr(path_or_file, "write"):
        _write_curves(path_or_file, kind, points)
        return
    with open(path_or_file, "w", newline="") as fh:
        _write_curves(fh, kind, points)


def _write_curves(fh, kind: str, points: list) -> None:
    num = lambda v: repr(float(v))
    writer = csv.writer(fh)
    writer.writerow(ROC_COLUMNS if kind == "roc" else POWER_COLUMNS)
    for pt in points:
        if kind == "roc":
            row = [CSV_SCHEMA_VERSION, pt.detector, pt.params, num(pt.alpha),
                   num(pt.sweep_value), num(pt.type1_nominal), num(pt.power),
                   num(pt.power_stderr), pt.draws, pt.seed, pt.source]
        else:
            row = [CSV_SCHEMA_VERSION, pt.detector, pt.params, num(pt.alpha),
                   num(pt.sweep_value), num(pt.type1_nominal),
                   num(pt.type1_rate), num(pt.type1_stderr), num(pt.power),
                   num(pt.power_stderr), pt.draws, pt.seed, pt.source]
        writer.writerow(row)


# ---------------------------------------------------------------------------
# Detector reports and byte-stable replay

def detect_reports(dataset: Dataset, model: JointModel, detector_specs: list,
                   model_config: dict) -> list[dict]:
    """One JSON-ready report per requested detector."""
    out = []
    for det in detector_specs:
        name = det.get("name")
        if name not in _DETECTORS or name in ("lr", "trivial"):
            raise ConfigError(f"detector: cannot run {name!r} on a dataset")
        if name == "t_hist":
            rep = detectors.t_hist(dataset, model, det["w"])
        elif name == "t_inner":
            rep = detectors.t_inner(dataset, model, det["r"])
        elif name == "t_eigen":
            rep = detectors.t_eigen(dataset, model, det["r"])
        elif name == "t_top":
            rep = detectors.t_top(dataset, model)
        elif name == "t_means":
            rep = detectors.t_means(dataset, dataset.alpha, model.rho, model.d)
        else:
            rep = detectors.wasserstein_test(dataset, det.get("p", 1),
                                             det.get("threshold"))
        out.append({
            "schema_version": REPORT_SCHEMA_VERSION,
            "package_version": PACKAGE_VERSION,
            "model": model_config,
            "dataset": {"n": dataset.n, "m": dataset.m, "seed": dataset.seed},
            "detector": name,
            "params": {k: det[k] for k in ("r", "w", "p") if k in det},
            "statistic": rep.statistic,
            "threshold": rep.threshold,
            "reject_h0": rep.reject_h0,
            "aux": rep.aux,
        })
    return out


def replay(xs_path, ys_path, meta_path, report_path) -> list[dict]:
    """Recompute archived reports from their dataset files.

    Refuses when the sidecar model differs from the archived one; a
    package-version difference only downgrades the outcome to a warning.
    Returns one {status, detector, ...} entry per archived report.
    """
    dataset, model = load_dataset(xs_path, ys_path, meta_path)
    model_config = model.config()
    results = []
    with open(report_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            archived = json.loads(line)
            if archived.get("model") != model_config:
                raise ConfigError(
                    "report/model mismatch: archived reports were computed for "
                    f"{archived.get('model')!r} but the sidecar declares {model_config!r}")
            det = dict(archived.get("params", {}))
            det["name"] = archived["detector"]
            fresh = detect_reports(dataset, model, [det], model_config)[0]
            same = fresh["statistic"] == archived["statistic"]
            entry = {
                "detector": archived["detector"],
                "status": "ok" if same else "mismatch",
                "statistic": fresh["statistic"],
                "archived_statistic": archived["statistic"],
            }
            if archived.get("package_version") != PACKAGE_VERSION:
                entry["warning"] = (
                    f"version mismatch: archived {archived.get('package_version')!r}, "
                    f"current {PACKAGE_VERSION!r}")
            results.append(entry)
    return results

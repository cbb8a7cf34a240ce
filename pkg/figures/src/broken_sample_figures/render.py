"""Render harness curve CSVs into ROC and power figures.

Expected CSV schema (version 1), one header row then data rows:

    power: schema_version, detector, params, alpha, rho, type1_nominal,
           type1_rate, type1_stderr, power, power_stderr, draws, seed, source
    roc:   schema_version, detector, params, alpha, rho, fpr, tpr,
           tpr_stderr, draws, seed, source

The figure has one panel per alpha value and one curve per
(detector, params) pair, with shaded one-standard-error bands.  Power
figures carry a horizontal baseline at the nominal type-I level.
Rendering is a pure function of the CSV rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

SCHEMA_VERSION = "1"

REQUIRED_COLUMNS = {
    "power": ["schema_version", "detector", "params", "alpha", "rho",
              "type1_nominal", "power", "power_stderr"],
    "roc": ["schema_version", "detector", "params", "alpha", "rho",
            "fpr", "tpr", "tpr_stderr"],
}

X_COLUMN = {"power": "rho", "roc": "fpr"}
Y_COLUMN = {"power": "power", "roc": "tpr"}
BAND_COLUMN = {"power": "power_stderr", "roc": "tpr_stderr"}


@dataclass
class FigureSpec:
    kind: str                     # "power" or "roc"
    inputs: list = field(default_factory=list)
    out: str = "figure.png"
    title: str | None = None


def load_rows(paths, kind: str) -> list[dict]:
    """Read and validate curve rows from one or more CSV files."""
    if kind not in REQUIRED_COLUMNS:
        raise ValueError(f"unknown figure kind {kind!r}")
    required = REQUIRED_COLUMNS[kind]
    rows: list[dict] = []
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in required if c not in header]
            if missing:
                raise ValueError(f"{path}: missing columns {missing}")
            for lineno, raw in enumerate(reader, start=2):
                if raw["schema_version"] != SCHEMA_VERSION:
                    raise ValueError(
                        f"{path}: row {lineno}: unsupported schema version "
                        f"{raw['schema_version']!r}")
                try:
                    rows.append({
                        "detector": raw["detector"],
                        "params": raw["params"],
                        "alpha": float(raw["alpha"]),
                        "x": float(raw[X_COLUMN[kind]]),
                        "y": float(raw[Y_COLUMN[kind]]),
                        "band": float(raw[BAND_COLUMN[kind]]),
                        "type1": float(raw.get("type1_nominal", 0.05) or 0.05),
                    })
                except ValueError as exc:
                    raise ValueError(f"{path}: row {lineno}: {exc}") from None
    return rows


def _curve_label(detector: str, params: str) -> str:
    return detector if params in ("", "-") else f"{detector} ({params})"


def build_figure(rows: list[dict], kind: str, title: str | None = None):
    """One panel per alpha, one series per (detector, params)."""
    if not rows:
        raise ValueError("no data rows to plot")
    alphas = sorted({row["alpha"] for row in rows}, reverse=True)
    fig, axes = plt.subplots(1, len(alphas), figsize=(6 * len(alphas), 4.5),
                             squeeze=False)
    for ax, alpha in zip(axes[0], alphas):
        panel = [row for row in rows if row["alpha"] == alpha]
        series = sorted({(row["detector"], row["params"]) for row in panel})
        for detector, params in series:
            pts = sorted((row["x"], row["y"], row["band"]) for row in panel
                         if row["detector"] == detector and row["params"] == params)
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            bands = [p[2] for p in pts]
            label = _curve_label(detector, params)
            (line,) = ax.plot(xs, ys, marker="o", markersize=2.5, label=label)
            ax.fill_between(xs, [y - b for y, b in zip(ys, bands)],
                            [y + b for y, b in zip(ys, bands)],
                            alpha=0.2, color=line.get_color())
        if kind == "power":
            level = sorted({row["type1"] for row in panel})[0]
            ax.axhline(level, color="gray", linestyle=":", linewidth=1,
                       label=f"type-I level {level:g}")
            ax.set_xlabel("correlation")
            ax.set_ylabel("power")
        else:
            ax.plot([0, 1], [0, 1], color="gray", linestyle=":", linewidth=1)
            ax.set_xlabel("false positive rate")
            ax.set_ylabel("true positive rate")
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"alpha = {alpha:g}")
        ax.legend(fontsize=8, loc="best")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig


def render(spec: FigureSpec) -> str:
    """Load the CSVs, build the figure, write the image; returns the path."""
    rows = load_rows(spec.inputs, spec.kind)
    fig = build_figure(rows, spec.kind, spec.title)
    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return str(out)

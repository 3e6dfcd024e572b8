"""Render the three sweep figures from their CSV files.

Pure consumers: every plotted value comes from the CSV, no recomputation.
Rendering is deterministic (fixed hashsalt, no embedded timestamps), so the
same CSV and style options reproduce the output byte for byte on a given
platform.

CSV schemas (headers must match exactly):
  blocksize: tier,N,L_km,S_final,n,ell,rate_per_round,rate_bps,abort
  distance:  tier,L_km,tau_s,V_eff,S_analytic,S_final,Q,ell,rate_bps,abort
  landscape: p_r,gamma_p,L_km,V_eff,S
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

SCHEMAS = {
    "blocksize": ("tier", "N", "L_km", "S_final", "n", "ell", "rate_per_round", "rate_bps", "abort"),
    "distance": ("tier", "L_km", "tau_s", "V_eff", "S_analytic", "S_final", "Q", "ell", "rate_bps", "abort"),
    "landscape": ("p_r", "gamma_p", "L_km", "V_eff", "S"),
}

TIER_STYLES = {
    "conservative": {"color": "#b2182b", "linestyle": ":", "marker": "^"},
    "target": {"color": "#2166ac", "linestyle": "-", "marker": "o"},
    "optimistic": {"color": "#1b7837", "linestyle": "--", "marker": "s"},
}
_FALLBACK_STYLE = {"color": "#555555", "linestyle": "-", "marker": "x"}

_HASHSALT = "figplots"


class SchemaError(ValueError):
    """CSV header does not match the documented schema."""


@dataclass(frozen=True)
class PlotJob:
    """One figure request: input CSV, figure kind, output image, style."""

    input_csv: str | Path
    kind: str  # blocksize | distance | landscape
    output: str | Path
    log_y: bool = True
    shade_cliff: bool = True
    mark_cutoffs: bool = True
    contour_level: float = 2.0
    dpi: int = 150

    def __post_init__(self) -> None:
        if self.kind not in SCHEMAS:
            raise ValueError(f"unknown figure kind {self.kind!r}")


@dataclass
class RenderInfo:
    """What the renderer drew; used by tests and batch logs."""

    kind: str
    rows: int
    output: Path
    shaded_region: tuple[float, float] | None = None
    cutoff_markers: dict = field(default_factory=dict)
    contour_drawn: bool = False


def read_rows(path: str | Path, kind: str) -> list[dict]:
    """Load and schema-check a sweep CSV; numeric fields become floats."""
    expected = SCHEMAS[kind]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected header {','.join(expected)}")
        if header != expected:
            for i, want in enumerate(expected):
                got = header[i] if i < len(header) else "<missing>"
                if got != want:
                    raise SchemaError(
                        f"{path}: column {i + 1} is {got!r}, expected {want!r}"
                    )
            raise SchemaError(
                f"{path}: {len(header) - len(expected)} unexpected trailing column(s), "
                f"first is {header[len(expected)]!r}"
            )
        rows = []
        for raw in reader:
            row = {}
            for name, value in zip(expected, raw):
                row[name] = value if name == "tier" else float(value)
            rows.append(row)
    return rows


def _new_figure():
    plt.rcParams["svg.hashsalt"] = _HASHSALT
    return plt.subplots(figsize=(6.4, 4.2), constrained_layout=True)


def _save(fig, job: PlotJob) -> None:
    out = Path(job.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fmt = out.suffix.lstrip(".").lower() or "svg"
    metadata = {"Date": None} if fmt == "svg" else None
    fig.savefig(out, format=fmt, dpi=job.dpi, metadata=metadata)
    plt.close(fig)


def _tiers_in(rows: list[dict]) -> list[str]:
    seen = []
    for row in rows:
        if row["tier"] not in seen:
            seen.append(row["tier"])
    return seen


def _style(tier: str) -> dict:
    return TIER_STYLES.get(tier, _FALLBACK_STYLE)


def _render_blocksize(rows: list[dict], job: PlotJob, info: RenderInfo) -> None:
    fig, ax = _new_figure()
    all_n = sorted({row["N"] for row in rows})
    for tier in _tiers_in(rows):
        sub = [r for r in rows if r["tier"] == tier and r["ell"] > 0]
        if sub:
            ax.plot(
                [r["N"] for r in sub],
                [r["rate_per_round"] for r in sub],
                label=tier,
                markersize=3.5,
                **_style(tier),
            )
    if job.shade_cliff and all_n:
        zero_n = [r["N"] for r in rows if r["ell"] == 0]
        if zero_n:
            info.shaded_region = (min(all_n), max(zero_n))
            ax.axvspan(*info.shaded_region, color="0.85", zorder=0)
    ax.set_xscale("log")
    if job.log_y:
        ax.set_yscale("log")
    ax.set_xlabel("block size N (valid rounds)")
    ax.set_ylabel("secret key rate (bits / attempt)")
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    _save(fig, job)


def _render_distance(rows: list[dict], job: PlotJob, info: RenderInfo) -> None:
    fig, ax = _new_figure()
    for tier in _tiers_in(rows):
        sub = [r for r in rows if r["tier"] == tier and r["ell"] > 0]
        if not sub:
            continue
        style = _style(tier)
        ax.plot(
            [r["L_km"] for r in sub],
            [r["rate_bps"] for r in sub],
            label=tier,
            markersize=3,
            **style,
        )
        cutoff = max(r["L_km"] for r in sub)
        info.cutoff_markers[tier] = cutoff
        if job.mark_cutoffs:
            ax.axvline(cutoff, color=style["color"], linestyle=":", alpha=0.6)
            ax.annotate(
                f"{cutoff:g} km",
                xy=(cutoff, sub[-1]["rate_bps"]),
                xytext=(3, 10),
                textcoords="offset points",
                color=style["color"],
                fontsize=8,
            )
    if job.log_y:
        ax.set_yscale("log")
    ax.set_xlabel("fiber distance L (km)")
    ax.set_ylabel("secret key rate (bits/s)")
    if ax.get_legend_handles_labels()[0]:
        ax.legend()
    _save(fig, job)


def _render_landscape(rows: list[dict], job: PlotJob, info: RenderInfo) -> None:
    fig, ax = _new_figure()
    pr = np.array(sorted({row["p_r"] for row in rows}))
    gp = np.array(sorted({row["gamma_p"] for row in rows}))
    grid = np.full((gp.size, pr.size), np.nan)
    pr_index = {v: i for i, v in enumerate(pr)}
    gp_index = {v: i for i, v in enumerate(gp)}
    for row in rows:
        grid[gp_index[row["gamma_p"]], pr_index[row["p_r"]]] = row["S"]
    mesh = ax.pcolormesh(pr, gp, grid, shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="CHSH S")
    finite = grid[np.isfinite(grid)]
    if finite.size and finite.min() < job.contour_level < finite.max():
        cs = ax.contour(
            pr, gp, grid, levels=[job.contour_level], colors="white", linewidths=1.5
        )
        ax.clabel(cs, fmt=lambda _: "classical bound", fontsize=7)
        info.contour_drawn = True
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("readout error p_r")
    ax.set_ylabel("poisoning rate (1/s)")
    _save(fig, job)


def render(job: PlotJob) -> RenderInfo:
    """Render one figure; returns what was drawn."""
    rows = read_rows(job.input_csv, job.kind)
    info = RenderInfo(kind=job.kind, rows=len(rows), output=Path(job.output))
    {
        "blocksize": _render_blocksize,
        "distance": _render_distance,
        "landscape": _render_landscape,
    }[job.kind](rows, job, info)
    return info

"""Render trajectory CSVs into figure-style images.

Input files follow the simulation CSV schema
    path_id,t,w,tau,rho,rho0,rho1
with one row per (path, grid node); rho1 is zero before the default time by
the emitter's convention.  The renderer draws one panel per quantity, one
pinned color per path, a dashed vertical marker at each finite default time
and a legend listing every path with its default time.  Styling is a fixed
embedded table so repeated renders of the same CSV are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

EXPECTED_HEADER = ["path_id", "t", "w", "tau", "rho", "rho0", "rho1"]

# pinned style table: golden-image tests depend on every entry
STYLE = {
    "colors": ("#2a9d8f", "#4059ad", "#9b5de5", "#e07a5f", "#2b9720",
               "#b08968", "#d62828", "#457b9d"),
    "linewidth": 1.4,
    "marker_linewidth": 0.9,
    "figsize": (8.0, 9.0),
    "dpi": 110,
    "font_size": 9.0,
}

PANELS = (("rho", "reconstructed risk value"),
          ("rho0", "pre-default component"),
          ("rho1", "post-default component (0 before default)"))


class SchemaError(ValueError):
    """The CSV does not follow the trajectory schema."""


@dataclass
class Trajectories:
    """Parsed CSV: per-path time series keyed by path id."""

    t: dict[int, list[float]]
    series: dict[str, dict[int, list[float]]]
    tau: dict[int, float]

    @property
    def path_ids(self) -> list[int]:
        return sorted(self.t)


@dataclass
class FigureSpec:
    csv_path: Path
    out_path: Path


@dataclass
class RenderResult:
    out_path: Path
    markers: dict[int, float] = field(default_factory=dict)  # path id -> tau drawn
    legend_labels: list[str] = field(default_factory=list)


def parse_trajectories(csv_path: Path) -> Trajectories:
    with csv_path.open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{csv_path}: empty file, expected header "
                              f"{','.join(EXPECTED_HEADER)}") from None
        if header != EXPECTED_HEADER:
            raise SchemaError(
                f"{csv_path}: header {','.join(header)!r} does not match the "
                f"trajectory schema {','.join(EXPECTED_HEADER)!r}")
        t: dict[int, list[float]] = {}
        series = {name: {} for name, _ in PANELS}
        tau: dict[int, float] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(EXPECTED_HEADER):
                raise SchemaError(f"{csv_path}:{lineno}: expected "
                                  f"{len(EXPECTED_HEADER)} fields, got {len(row)}")
            try:
                pid = int(row[0])
                values = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise SchemaError(f"{csv_path}:{lineno}: {exc}") from None
            t.setdefault(pid, []).append(values[0])
            series["rho"].setdefault(pid, []).append(values[3])
            series["rho0"].setdefault(pid, []).append(values[4])
            series["rho1"].setdefault(pid, []).append(values[5])
            tau[pid] = values[2]
    if not t:
        raise SchemaError(f"{csv_path}: no data rows")
    return Trajectories(t=t, series=series, tau=tau)


def _path_label(pid: int, tau: float, horizon: float) -> str:
    if math.isfinite(tau) and tau <= horizon:
        return f"path {pid} (tau = {tau:.4f})"
    return f"path {pid} (no default)"


def render(spec: FigureSpec) -> RenderResult:
    """One stacked panel per quantity, overlaid per-path series."""
    data = parse_trajectories(spec.csv_path)
    colors = STYLE["colors"]
    if len(data.path_ids) > len(colors):
        raise SchemaError(f"{spec.csv_path}: more paths than pinned colors "
                          f"({len(data.path_ids)} > {len(colors)})")
    horizon = max(max(ts) for ts in data.t.values())

    plt.rcParams.update({"font.size": STYLE["font_size"], "svg.hashsalt": "riskplots"})
    fig, axes = plt.subplots(len(PANELS), 1, sharex=True, figsize=STYLE["figsize"])
    result = RenderResult(out_path=spec.out_path)
    for ax, (column, title) in zip(axes, PANELS):
        for slot, pid in enumerate(data.path_ids):
            color = colors[slot]
            label = _path_label(pid, data.tau[pid], horizon)
            ax.plot(data.t[pid], data.series[column][pid], color=color,
                    linewidth=STYLE["linewidth"],
                    label=label if column == "rho" else None)
            tau = data.tau[pid]
            if math.isfinite(tau) and tau <= horizon:
                ax.axvline(tau, color=color, linestyle="--",
                           linewidth=STYLE["marker_linewidth"])
                result.markers[pid] = tau
        ax.set_ylabel(column)
        ax.set_title(title, fontsize=STYLE["font_size"] + 1)
        ax.grid(True, alpha=0.3)
    axes[0].legend(loc="upper right", fontsize=STYLE["font_size"] - 1)
    result.legend_labels = [text.get_text() for text in axes[0].legend_.get_texts()]
    axes[-1].set_xlabel("t")
    fig.tight_layout()
    spec.out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.out_path, dpi=STYLE["dpi"],
                metadata={"Software": "riskplots"})
    plt.close(fig)
    return result


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="render", description="Render a defaultrisk trajectory CSV to an image")
    parser.add_argument("--csv", required=True, help="input trajectory CSV")
    parser.add_argument("--out", required=True, help="output image path (PNG)")
    args = parser.parse_args(argv)
    try:
        result = render(FigureSpec(csv_path=Path(args.csv), out_path=Path(args.out)))
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {result.out_path} ({len(result.legend_labels)} paths, "
          f"{len(result.markers)} default markers)")
    return 0


if __name__ == "__main__":
    sys.exit(main())

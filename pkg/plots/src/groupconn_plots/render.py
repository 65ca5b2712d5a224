"""Render figures from groupconn result CSV files.

The scripts consume only the documented CSV schemas (leading ``#`` comment
lines are ignored) and never import the inference library. Five panel
kinds are supported:

- ``trajectory``: specificity and sensitivity against test count.
- ``roc``: one ROC curve per input file (or per group column value).
- ``ci_band``: seed-averaged trajectories with a 95% confidence band.
- ``sweep_facets``: one facet per value of a grouping column.
- ``compare``: overlaid trajectories labeled by a grouping column.

Rendering is deterministic under the pinned style: the same inputs produce
byte-identical image files.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

PANELS = ("trajectory", "roc", "ci_band", "sweep_facets", "compare")
STYLE = Path(__file__).with_name("style.mplstyle")

# t distribution 97.5% quantiles for small seed counts (df 1..30)
_T975 = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
    2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
]


@dataclass(frozen=True)
class PlotSpec:
    """What to draw: input CSVs, panel kind, grouping columns, output path."""

    inputs: tuple
    panel: str
    output: str
    group_by: tuple = ()

    def __post_init__(self):
        if self.panel not in PANELS:
            raise ValueError(f"panel must be one of {PANELS}, got {self.panel!r}")
        if not self.inputs:
            raise ValueError("at least one input CSV is required")


# the per-run trajectory log uses short column names; map them onto the
# results-table schema so both files feed the same panels
_SCHEMA_ALIASES = {
    "test_index": "test_count",
    "spec": "specificity",
    "sens": "sensitivity",
    "design_kind": "design",
}


def _load(spec: PlotSpec) -> pd.DataFrame:
    frames = []
    for path in spec.inputs:
        frame = pd.read_csv(path, comment="#")
        if frame.empty:
            raise ValueError(f"{path}: no data rows")
        frame = frame.rename(
            columns={k: v for k, v in _SCHEMA_ALIASES.items() if v not in frame.columns}
        )
        frame["source"] = Path(path).stem
        frames.append(frame)
    data = pd.concat(frames, ignore_index=True)
    return data


def _require(data: pd.DataFrame, columns, context: str) -> None:
    missing = [c for c in columns if c not in data.columns]
    if missing:
        raise ValueError(
            f"{context}: missing columns {missing}; found {sorted(data.columns)}"
        )


def _ci95(values: np.ndarray) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    t = _T975[min(n - 1, len(_T975)) - 1]
    return t * values.std(ddof=1) / np.sqrt(n)


def _trajectory_axes(axes, groups, label_fn):
    for label, frame in groups:
        frame = frame.sort_values("test_count")
        axes[0].plot(frame["test_count"], frame["specificity"], label=label_fn(label))
        axes[1].plot(frame["test_count"], frame["sensitivity"], label=label_fn(label))
    for ax, name in zip(axes, ("specificity", "sensitivity")):
        ax.set_xlabel("tests")
        ax.set_ylabel(name)
        ax.set_ylim(-0.02, 1.02)


def _render_trajectory(data: pd.DataFrame, spec: PlotSpec, fig):
    _require(data, ["test_count", "specificity", "sensitivity"], "trajectory")
    axes = fig.subplots(1, 2)
    _trajectory_axes(axes, [("run", data)], lambda label: None)
    fig.suptitle("recovery trajectory")


def _render_roc(data: pd.DataFrame, spec: PlotSpec, fig):
    _require(data, ["fpr", "sensitivity"], "roc")
    ax = fig.subplots(1, 1)
    keys = list(spec.group_by) or ["source"]
    _require(data, keys, "roc grouping")
    for label, frame in data.groupby(keys, sort=True):
        frame = frame.sort_values("fpr")
        name = ", ".join(str(v) for v in (label if isinstance(label, tuple) else (label,)))
        ax.plot(frame["fpr"], frame["sensitivity"], marker="o", label=name)
    ax.plot([0, 1], [0, 1], linestyle=":", color="gray", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("sensitivity")
    ax.set_title("ROC")
    ax.legend()


def _render_ci_band(data: pd.DataFrame, spec: PlotSpec, fig):
    _require(data, ["test_count", "specificity", "sensitivity", "seed"], "ci_band")
    axes = fig.subplots(1, 2)
    for ax, metric in zip(axes, ("specificity", "sensitivity")):
        stats = data.groupby("test_count")[metric].agg(["mean", list])
        x = stats.index.to_numpy()
        mean = stats["mean"].to_numpy()
        half = np.array([_ci95(np.asarray(v, dtype=float)) for v in stats["list"]])
        ax.plot(x, mean)
        ax.fill_between(x, mean - half, mean + half, alpha=0.25)
        ax.set_xlabel("tests")
        ax.set_ylabel(metric)
        ax.set_ylim(-0.02, 1.02)
    n_seeds = data["seed"].nunique()
    fig.suptitle(f"mean over {n_seeds} seeds, 95% CI")


def _render_sweep_facets(data: pd.DataFrame, spec: PlotSpec, fig):
    _require(data, ["test_count", "specificity", "sensitivity"], "sweep_facets")
    keys = list(spec.group_by)
    if not keys:
        raise ValueError("sweep_facets requires at least one grouping column")
    _require(data, keys, "sweep_facets grouping")
    groups = list(data.groupby(keys, sort=True))
    fig.set_size_inches(8.0, 2.6 * len(groups))
    axes = fig.subplots(len(groups), 2, squeeze=False)
    for row, (label, frame) in enumerate(groups):
        name = ", ".join(
            f"{k}={v}" for k, v in zip(keys, label if isinstance(label, tuple) else (label,))
        )
        agg = frame.groupby("test_count")[["specificity", "sensitivity"]].mean()
        for col, metric in enumerate(("specificity", "sensitivity")):
            ax = axes[row][col]
            ax.plot(agg.index, agg[metric])
            ax.set_ylim(-0.02, 1.02)
            ax.set_ylabel(metric)
            ax.set_title(name)
            ax.set_xlabel("tests")
    fig.tight_layout()


def _render_compare(data: pd.DataFrame, spec: PlotSpec, fig):
    _require(data, ["test_count", "specificity", "sensitivity"], "compare")
    keys = list(spec.group_by) or ["source"]
    _require(data, keys, "compare grouping")
    axes = fig.subplots(1, 2)
    groups = [
        (", ".join(str(v) for v in (label if isinstance(label, tuple) else (label,))), frame)
        for label, frame in data.groupby(keys, sort=True)
    ]
    merged = [
        (name, frame.groupby("test_count")[["specificity", "sensitivity"]].mean().reset_index())
        for name, frame in groups
    ]
    _trajectory_axes(axes, merged, lambda label: label)
    axes[0].legend()
    fig.suptitle("paired comparison")


_RENDERERS = {
    "trajectory": _render_trajectory,
    "roc": _render_roc,
    "ci_band": _render_ci_band,
    "sweep_facets": _render_sweep_facets,
    "compare": _render_compare,
}


def render(spec: PlotSpec) -> Path:
    """Draw the panel and write the image file; returns the output path."""
    data = _load(spec)
    out = Path(spec.output)
    with plt.style.context(str(STYLE)):
        fig = plt.figure()
        try:
            _RENDERERS[spec.panel](data, spec, fig)
            if spec.panel not in ("sweep_facets",):
                fig.tight_layout()
            metadata = {"Software": None}
            if out.suffix == ".svg":
                metadata = {"Date": None, "Creator": None}
            fig.savefig(out, metadata=metadata)
        finally:
            plt.close(fig)
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="groupconn-plots", description="Render figures from result CSV files"
    )
    parser.add_argument("panel", choices=PANELS, help="panel kind")
    parser.add_argument("inputs", nargs="+", help="input CSV paths")
    parser.add_argument("--out", required=True, help="output image path (.png or .svg)")
    parser.add_argument(
        "--group-by",
        default="",
        help="comma-separated grouping columns (roc/compare/sweep_facets)",
    )
    args = parser.parse_args(argv)
    group_by = tuple(c for c in args.group_by.split(",") if c)
    try:
        spec = PlotSpec(
            inputs=tuple(args.inputs), panel=args.panel, output=args.out, group_by=group_by
        )
        path = render(spec)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

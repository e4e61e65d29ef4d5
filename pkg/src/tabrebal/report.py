"""Figures and summary tables for grid results and sampling diagnostics.

Everything renders to SVG through matplotlib's Agg backend with a fixed hash
salt and no date metadata, so identical inputs produce identical bytes.
Tables come out as Markdown (mirroring the benchmark's section layout:
baseline, undersampling, classic oversampling, generative oversampling)
plus a machine-readable CSV.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
from matplotlib.patches import Wedge

import numpy as np

from .data import Dataset
from .errors import ConfigError
from .projections import SomGrid
from .protocol import (
    BASELINE_METHOD,
    UNDERSAMPLE_METHOD,
    ExperimentRecord,
    SummaryRow,
    format_ratio,
    heatmap_cells,
    summarize,
)
from .resampling import CLASSIC_OVERSAMPLERS, METHOD_LABELS

plt.rcParams["svg.hashsalt"] = "tabrebal"

TAG_COLORS = {"negative": "#4878cf", "positive": "#d65f5f", "synthetic": "#6acc65"}
SAMPLING_LABELS = {"minority": "Minority", "conditional": "Conditional",
                   "rejection": "Rejection", "": ""}
CLASSIFIER_NOTE = (
    "Classifier: gradient-boosted trees (GBT stand-in). "
    "SVM-SMOTE is excluded from the resampler family (needs an SVM trainer)."
)


def save_figure(fig, path: str | Path) -> Path:
    """Write a deterministic SVG and release the figure."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return path


def slug(*parts: str) -> str:
    cleaned = []
    for part in parts:
        if not part:
            continue
        cleaned.append("".join(c if c.isalnum() or c in "-_" else "-" for c in str(part)))
    return "__".join(cleaned)


# -- figures -------------------------------------------------------------------------


def heatmap_figure(cells: dict[tuple[float, float], float], usr_grid: list[float],
                   osr_grid: list[float], title: str):
    """Mean test f1 over the (USR, OSR) grid, masked where osr < usr."""
    usr_grid = sorted(usr_grid)
    osr_grid = sorted(osr_grid)
    matrix = np.full((len(osr_grid), len(usr_grid)), np.nan)
    for (usr, osr), value in cells.items():
        if usr in usr_grid and osr in osr_grid:
            matrix[osr_grid.index(osr), usr_grid.index(usr)] = value
    masked = np.ma.masked_invalid(matrix)
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    image = ax.imshow(masked, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(usr_grid)), [format_ratio(u) for u in usr_grid])
    ax.set_yticks(range(len(osr_grid)), [format_ratio(o) for o in osr_grid])
    ax.set_xlabel("USR")
    ax.set_ylabel("OSR")
    ax.set_title(title)
    fig.colorbar(image, ax=ax, label="mean test f1")
    fig.tight_layout()
    return fig, masked


def scatter_figure(coords: np.ndarray, tags: list[str], title: str):
    """2-D embedding scatter colored by sample tag."""
    coords = np.asarray(coords)
    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    for tag in ("negative", "positive", "synthetic"):
        mask = np.array([t == tag for t in tags])
        if mask.any():
            ax.scatter(coords[mask, 0], coords[mask, 1], s=12, alpha=0.75,
                       color=TAG_COLORS[tag], label=tag, linewidths=0)
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    return fig


def som_figure(som: SomGrid, title: str):
    """Pie glyph per SOM cell showing the tag mix assigned to that unit.

    Returns (figure, per-cell wedge spans in degrees) so tests can check that
    every non-empty cell's wedges close the full circle.
    """
    if not som.counts:
        raise ConfigError("SOM has no assigned counts; call som_assign first")
    g_rows, g_cols = som.shape
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    ax.set_xlim(-0.6, g_cols - 0.4)
    ax.set_ylim(-0.6, g_rows - 0.4)
    ax.set_aspect("equal")
    totals = sum(som.counts.values())
    max_total = max(1, int(totals.max()))
    wedge_spans: dict[tuple[int, int], list[float]] = {}
    for i in range(g_rows):
        for j in range(g_cols):
            total = int(totals[i, j])
            if total == 0:
                continue
            radius = 0.15 + 0.3 * np.sqrt(total / max_total)
            start = 90.0
            spans = []
            for tag in sorted(som.counts):
                count = int(som.counts[tag][i, j])
                if count == 0:
                    continue
                span = 360.0 * count / total
                ax.add_patch(Wedge((j, i), radius, start, start + span,
                                   facecolor=TAG_COLORS.get(tag, "#999999"),
                                   edgecolor="white", linewidth=0.3))
                spans.append(span)
                start += span
            wedge_spans[(i, j)] = spans
    handles = [plt.Line2D([], [], marker="o", linestyle="", color=TAG_COLORS.get(t, "#999999"),
                          label=t) for t in sorted(som.counts)]
    ax.legend(handles=handles, loc="upper right", fontsize=8)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    return fig, wedge_spans


def diagnostic_sample(dataset: Dataset, oversampler, n_real: int = 200,
                      n_synth: int = 200, seed: int = 0) -> tuple[np.ndarray, list[str]]:
    """Real rows tagged by class plus synthetic rows from ``oversampler``.

    ``oversampler`` is any callable (n, rng) -> rows in the encoded space.
    """
    rng = np.random.default_rng([int(seed), 0xD1A6])
    n_real = min(n_real, dataset.n_rows)
    picks = rng.choice(dataset.n_rows, size=n_real, replace=False)
    rows = [dataset.features[picks]]
    tags = ["positive" if dataset.labels[i] == 1 else "negative" for i in picks]
    if n_synth > 0:
        synthetic = oversampler(n_synth, rng)
        rows.append(np.asarray(synthetic, dtype=np.float64))
        tags.extend(["synthetic"] * len(synthetic))
    return np.concatenate(rows, axis=0), tags


# -- tables --------------------------------------------------------------------------


def _fmt_pm(mean: float | None, std: float | None) -> str:
    if mean is None:
        return ""
    return f"{mean:.3f} ± {(std or 0.0):.3f}"


def _display_method(name: str) -> str:
    return METHOD_LABELS.get(name, name)


def summary_markdown(summaries: list[SummaryRow], dataset_name: str) -> str:
    """Markdown tables mirroring the benchmark layout, one dataset per file."""
    rows = [s for s in summaries if s.dataset == dataset_name]
    if not rows:
        raise ConfigError(f"no summary rows for dataset {dataset_name!r}")
    by_method = {(s.method, s.sampling): s for s in rows}
    out = io.StringIO()
    out.write(f"# Results: {dataset_name}\n\n{CLASSIFIER_NOTE}\n")

    baseline = by_method.get((BASELINE_METHOD, ""))
    if baseline:
        out.write("\n## Only classifier\n\n")
        out.write("| IR | Train f1 | Test f1 |\n|---|---|---|\n")
        out.write(f"| {format_ratio(baseline.usr)} | {_fmt_pm(baseline.train_mean, baseline.train_std)}"
                  f" | {_fmt_pm(baseline.test_mean, baseline.test_std)} |\n")

    under = by_method.get((UNDERSAMPLE_METHOD, ""))
    if under:
        out.write("\n## Undersampling and classifier\n\n")
        out.write("| USR | Train f1 | Test f1 |\n|---|---|---|\n")
        out.write(f"| {format_ratio(under.usr)} | {_fmt_pm(under.train_mean, under.train_std)}"
                  f" | {_fmt_pm(under.test_mean, under.test_std)} |\n")

    classic = [s for s in rows if s.method in CLASSIC_OVERSAMPLERS]
    if classic:
        out.write("\n## Oversampling\n\n")
        out.write("| Oversampling | USR | OSR | Train f1 | Test f1 |\n|---|---|---|---|---|\n")
        for s in sorted(classic, key=lambda r: _display_method(r.method)):
            out.write(_method_row(_display_method(s.method), s))

    generative = [
        s for s in rows
        if s.method not in CLASSIC_OVERSAMPLERS
        and s.method not in (BASELINE_METHOD, UNDERSAMPLE_METHOD)
    ]
    if generative:
        out.write("\n## Oversampling with deep generative models\n\n")
        out.write("| DGM | Sampling | USR | OSR | Train f1 | Test f1 |\n|---|---|---|---|---|---|\n")
        order = {"minority": 0, "conditional": 1, "rejection": 2}
        for s in sorted(generative, key=lambda r: (order.get(r.sampling, 9), r.method)):
            out.write(_dgm_row(s))
    return out.getvalue()


def _method_row(label: str, s: SummaryRow) -> str:
    if s.status != "ok":
        return f"| {label} | Timeout | | | |\n"
    return (f"| {label} | {format_ratio(s.usr)} | {format_ratio(s.osr)} | "
            f"{_fmt_pm(s.train_mean, s.train_std)} | {_fmt_pm(s.test_mean, s.test_std)} |\n")


def _dgm_row(s: SummaryRow) -> str:
    sampling = SAMPLING_LABELS.get(s.sampling, s.sampling)
    if s.status != "ok":
        return f"| {s.method} | {sampling} | Timeout | | | |\n"
    return (f"| {s.method} | {sampling} | {format_ratio(s.usr)} | {format_ratio(s.osr)} | "
            f"{_fmt_pm(s.train_mean, s.train_std)} | {_fmt_pm(s.test_mean, s.test_std)} |\n")


def summary_csv(summaries: list[SummaryRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["dataset", "method", "sampling", "usr", "osr",
                     "train_mean", "train_std", "test_mean", "test_std", "status"])
    for s in summaries:
        writer.writerow([
            s.dataset, s.method, s.sampling,
            "" if s.usr is None else format_ratio(s.usr),
            "" if s.osr is None else format_ratio(s.osr),
            "" if s.train_mean is None else f"{s.train_mean:.6f}",
            "" if s.train_std is None else f"{s.train_std:.6f}",
            "" if s.test_mean is None else f"{s.test_mean:.6f}",
            "" if s.test_std is None else f"{s.test_std:.6f}",
            s.status,
        ])
    return buf.getvalue()


# -- emission --------------------------------------------------------------------------


def emit_report(records: list[ExperimentRecord], out_dir: str | Path,
                heatmaps: bool = True) -> list[Path]:
    """summary.md + summary.csv + one USR/OSR heatmap per oversampling method."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    summaries = summarize(records)
    datasets = sorted({r.dataset for r in records})
    md_parts = [summary_markdown(summaries, ds) for ds in datasets]
    md_path = out / "summary.md"
    md_path.write_text("\n".join(md_parts), encoding="utf-8")
    written.append(md_path)
    csv_path = out / "summary.csv"
    csv_path.write_text(summary_csv(summaries), encoding="utf-8")
    written.append(csv_path)
    if heatmaps:
        for ds in datasets:
            ds_records = [r for r in records if r.dataset == ds]
            usr_grid = sorted({r.usr for r in ds_records if r.method not in (BASELINE_METHOD,)})
            osr_grid = sorted({r.osr for r in ds_records if r.method not in (BASELINE_METHOD,)})
            methods = sorted({
                (r.method, r.sampling) for r in ds_records
                if r.method not in (BASELINE_METHOD, UNDERSAMPLE_METHOD)
            })
            for method, sampling in methods:
                cells = heatmap_cells(ds_records, method, sampling)
                if not cells:
                    continue
                title = _display_method(method)
                if sampling:
                    title += f" ({SAMPLING_LABELS.get(sampling, sampling)})"
                fig, _ = heatmap_figure(cells, usr_grid, osr_grid, f"{ds}: {title}")
                written.append(save_figure(
                    fig, out / f"{slug(ds, method, sampling, 'heatmap')}.svg"
                ))
    return written

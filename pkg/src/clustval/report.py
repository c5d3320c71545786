"""Serialization of results: delimited files, prediction records and figures.

Every measure's primary output is plot-ready CSV plus a JSON prediction
record; the figure writers render the same curves to PNG next to the
delimited output so a report directory is self-contained.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .cluster import Dendrogram
from .data import DataMatrix, GoldStandard, Partition
from .measures import CurveSeries, Prediction
from .stability import ConsensusResult, MeResult, consensus_cdf

__all__ = [
    "write_matrix_csv",
    "write_labels",
    "write_partition",
    "write_dendrogram_csv",
    "write_curve_csv",
    "prediction_record",
    "write_prediction_json",
    "write_me_histograms_csv",
    "write_consensus_csv",
    "save_curve_figure",
    "save_consensus_figure",
    "save_me_figure",
]


def write_matrix_csv(D: DataMatrix, path) -> None:
    np.savetxt(path, D.values, delimiter=",", fmt="%.17g")


def write_labels(labels, path) -> None:
    labels = labels.labels if isinstance(labels, GoldStandard) else np.asarray(labels, dtype=int)
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def write_partition(P: Partition, path) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in P.assignment))


def read_labels(path) -> np.ndarray:
    values = [int(line) for line in Path(path).read_text().split()]
    return np.asarray(values, dtype=int)


def write_dendrogram_csv(dend: Dendrogram, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["left", "right", "height"])
        for left, right, height in dend.merges:
            writer.writerow([int(left), int(right), f"{height:.17g}"])


def write_curve_csv(curve: CurveSeries, path, value_name: str = "value") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if curve.dispersion is None:
            writer.writerow(["k", value_name])
            for k, v in zip(curve.k_values, curve.values):
                writer.writerow([int(k), f"{v:.17g}"])
        else:
            writer.writerow(["k", value_name, "dispersion"])
            for k, v, s in zip(curve.k_values, curve.values, curve.dispersion):
                writer.writerow([int(k), f"{v:.17g}", f"{s:.17g}"])


def prediction_record(measure: str, prediction: Prediction, parameters: dict) -> dict:
    return {
        "measure": measure,
        "rule": prediction.rule,
        "k_star": prediction.k_star,
        "parameters": parameters,
        "low_confidence": prediction.low_confidence,
    }


def write_prediction_json(record: dict, path) -> None:
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def write_factorization_csv(fact, directory, prefix: str = "nmf") -> None:
    """Basis W, coefficients H and the (iteration, value) objective trace."""
    directory = Path(directory)
    np.savetxt(directory / f"{prefix}_W.csv", fact.W, delimiter=",", fmt="%.17g")
    np.savetxt(directory / f"{prefix}_H.csv", fact.H, delimiter=",", fmt="%.17g")
    with open(directory / f"{prefix}_objective.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "value"])
        for i, value in enumerate(fact.objective_trace, start=1):
            writer.writerow([i, f"{value:.17g}"])


def write_me_histograms_csv(result: MeResult, path, bins: int = 20) -> None:
    """(k, bin_low, bin_high, count) rows of the per-k agreement histograms."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "bin_low", "bin_high", "count"])
        for k in sorted(result.values):
            counts, edges = result.histogram(k, bins)
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                writer.writerow([k, f"{lo:.6g}", f"{hi:.6g}", int(c)])


def write_consensus_csv(result: ConsensusResult, directory, prefix: str = "consensus",
                        matrices: bool = False) -> None:
    """A/delta/delta' CSVs, optionally the per-k consensus matrices."""
    directory = Path(directory)
    write_curve_csv(result.area, directory / f"{prefix}_area.csv", "area")
    write_curve_csv(result.delta, directory / f"{prefix}_delta.csv", "delta")
    write_curve_csv(result.delta_prime, directory / f"{prefix}_delta_prime.csv", "delta_prime")
    if matrices:
        for k, matrix in result.consensus.items():
            np.savetxt(directory / f"{prefix}_matrix_k{k}.csv", matrix, delimiter=",", fmt="%.8g")


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def save_curve_figure(curve: CurveSeries, path, title: str = "", ylabel: str = "value",
                      mark_k: int | None = None) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    if curve.dispersion is not None:
        ax.errorbar(curve.k_values, curve.values, yerr=curve.dispersion,
                    marker="o", capsize=3, lw=1.2)
    else:
        ax.plot(curve.k_values, curve.values, marker="o", lw=1.2)
    if mark_k is not None and mark_k in curve.k_values:
        ax.axvline(mark_k, color="crimson", ls="--", lw=1, label=f"k* = {mark_k}")
        ax.legend(frameon=False)
    ax.set_xlabel("number of clusters k")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_consensus_figure(result: ConsensusResult, path, title: str = "") -> None:
    """CDF family, area curve and delta curve in one panel row."""
    fig, axes = plt.subplots(1, 3, figsize=(14, 4))
    iu = None
    for k in sorted(result.consensus):
        matrix = result.consensus[k]
        if iu is None:
            iu = np.triu_indices(matrix.shape[0], 1)
        entries = matrix[iu]
        entries = entries[~np.isnan(entries)]
        grid, cdf = consensus_cdf(entries)
        axes[0].plot(grid, cdf, lw=1, label=f"k={k}")
    axes[0].set_xlabel("consensus value")
    axes[0].set_ylabel("CDF")
    axes[0].legend(fontsize=7, frameon=False, ncols=2)
    axes[1].plot(result.area.k_values, result.area.values, marker="o")
    axes[1].set_xlabel("k")
    axes[1].set_ylabel("area under CDF")
    axes[2].plot(result.delta.k_values, result.delta.values, marker="o", label="delta")
    axes[2].plot(result.delta_prime.k_values, result.delta_prime.values,
                 marker="s", ms=3, lw=0.8, label="delta'")
    axes[2].axvline(result.prediction.k_star, color="crimson", ls="--", lw=1,
                    label=f"k* = {result.prediction.k_star}")
    axes[2].set_xlabel("k")
    axes[2].set_ylabel("relative area change")
    axes[2].legend(frameon=False, fontsize=8)
    for ax in axes:
        ax.grid(alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_me_figure(result: MeResult, path, bins: int = 20, title: str = "") -> None:
    ks = sorted(result.values)
    cols = min(4, len(ks))
    rows = (len(ks) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.6 * rows), squeeze=False)
    for ax in axes.ravel():
        ax.set_axis_off()
    for idx, k in enumerate(ks):
        ax = axes[idx // cols][idx % cols]
        ax.set_axis_on()
        counts, edges = result.histogram(k, bins)
        ax.bar(edges[:-1], counts, width=np.diff(edges), align="edge")
        ax.set_title(f"k = {k}", fontsize=9)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

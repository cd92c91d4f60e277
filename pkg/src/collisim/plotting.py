"""Figure rendering for result tables.

The estimation core never plots. This module turns a written results table
(CSV file or the equivalent row dicts) into a small set of matplotlib
figures saved next to the table: per-quantity trial summaries, and error
scaling against whichever run parameter varies. It can be run directly:

    python3 -m collisim.plotting results.csv

"""

from __future__ import annotations

import csv
import math
import os
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  backend must be pinned first

_SCALING_CANDIDATES = ("N_M", "N_U", "n", "n_ancilla", "beta", "depolarize", "t_max")
_LOG_AXES = ("N_M", "N_U")


def load_rows(csv_path: str) -> list:
    """Rows of a results CSV with numeric fields parsed."""
    rows = []
    with open(csv_path, "r", encoding="utf-8", newline="") as handle:
        for raw in csv.DictReader(handle):
            row = dict(raw)
            for key in ("estimate", "exact_value", "beta", "depolarize"):
                if row.get(key):
                    row[key] = float(row[key])
                elif key in row:
                    row[key] = None
            for key in ("trial", "n", "N_U", "N_M", "seed", "n_ancilla", "t_max"):
                if row.get(key) not in (None, ""):
                    row[key] = int(row[key])
            if row.get("order") not in (None, ""):
                row["order"] = int(row["order"])
            else:
                row["order"] = None
            rows.append(row)
    return rows


def _quantity_groups(rows) -> dict:
    groups: dict = {}
    for row in rows:
        estimate = row.get("estimate")
        if estimate is None or not math.isfinite(estimate):
            continue
        label = row["quantity"]
        if row["order"] is not None:
            label = f"{label}[{row['order']}]"
        groups.setdefault(label, []).append(row)
    return groups


def _mean(values) -> float:
    return sum(values) / len(values)


def _std(values) -> float:
    if len(values) < 2:
        return 0.0
    mu = _mean(values)
    return math.sqrt(sum((v - mu) ** 2 for v in values) / (len(values) - 1))


def render_summary_figure(rows, path: str) -> bool:
    """One panel per quantity: estimates by trial, exact value as a line."""
    groups = _quantity_groups(rows)
    groups.pop("detected", None)
    if not groups:
        return False
    labels = sorted(groups)
    n_cols = min(3, len(labels))
    n_rows = (len(labels) + n_cols - 1) // n_cols
    fig, axes = plt.subplots(
        n_rows, n_cols, figsize=(4.2 * n_cols, 3.0 * n_rows), squeeze=False
    )
    for ax in axes.flat[len(labels):]:
        ax.set_axis_off()
    for ax, label in zip(axes.flat, labels):
        bucket = groups[label]
        trials = [r["trial"] for r in bucket]
        estimates = [r["estimate"] for r in bucket]
        ax.plot(trials, estimates, ".", markersize=3, color="tab:blue")
        mu = _mean(estimates)
        ax.axhline(mu, color="tab:blue", linewidth=0.8,
                   label=f"mean {mu:.4g}")
        exact = bucket[0].get("exact_value")
        if exact is not None:
            ax.axhline(exact, color="tab:red", linestyle="--", linewidth=0.8,
                       label=f"exact {exact:.4g}")
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("trial", fontsize=8)
        ax.tick_params(labelsize=7)
        ax.legend(fontsize=6, loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def _varying_column(rows) -> str | None:
    for column in _SCALING_CANDIDATES:
        values = {row.get(column) for row in rows if row.get(column) is not None}
        if len(values) > 1:
            return column
    return None


def render_scaling_figure(rows, path: str) -> bool:
    """Mean absolute error against the run parameter that varies.

    Only quantities with an exact reference participate. Axes go
    logarithmic for shot and unitary counts, which makes power-law error
    decay read as a straight line.
    """
    column = _varying_column(rows)
    if column is None:
        return False
    series: dict = {}
    for row in rows:
        estimate, exact = row.get("estimate"), row.get("exact_value")
        if exact is None or estimate is None or not math.isfinite(estimate):
            continue
        label = row["quantity"]
        if row["order"] is not None:
            label = f"{label}[{row['order']}]"
        series.setdefault(label, {}).setdefault(row[column], []).append(
            abs(estimate - exact)
        )
    series = {label: pts for label, pts in series.items() if len(pts) > 1}
    if not series:
        return False
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for label in sorted(series):
        points = sorted(series[label].items())
        xs = [x for x, _ in points]
        ys = [_mean(errs) for _, errs in points]
        yerr = [_std(errs) / math.sqrt(len(errs)) for _, errs in points]
        ax.errorbar(xs, ys, yerr=yerr, marker="o", markersize=3,
                    linewidth=1.0, capsize=2, label=label)
    if column in _LOG_AXES:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(column)
    ax.set_ylabel("mean |estimate - exact|")
    ax.legend(fontsize=7, loc="best")
    ax.grid(True, which="both", linewidth=0.3, alpha=0.5)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return True


def render_rows(rows, columns, out_dir: str, stem: str) -> list:
    """Render all applicable figures for in-memory rows; returns paths."""
    normalized = []
    for row in rows:
        entry = {col: row.get(col) for col in columns}
        estimate = entry.get("estimate")
        entry["estimate"] = None if estimate is None else float(estimate)
        exact = entry.get("exact_value")
        entry["exact_value"] = None if exact in (None, "") else float(exact)
        entry["order"] = None if entry.get("order") in (None, "") else int(entry["order"])
        normalized.append(entry)
    written = []
    summary_path = os.path.join(out_dir, f"{stem}_estimates.png")
    if render_summary_figure(normalized, summary_path):
        written.append(summary_path)
    scaling_path = os.path.join(out_dir, f"{stem}_scaling.png")
    if render_scaling_figure(normalized, scaling_path):
        written.append(scaling_path)
    return written


def render_csv(csv_path: str, out_dir: str | None = None) -> list:
    """Render figures from a results CSV written by the command line."""
    rows = load_rows(csv_path)
    if out_dir is None:
        out_dir = os.path.dirname(os.path.abspath(csv_path))
    stem = os.path.splitext(os.path.basename(csv_path))[0]
    columns = list(rows[0].keys()) if rows else []
    return render_rows(rows, columns, out_dir, stem)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) not in (1, 2):
        print("usage: python3 -m collisim.plotting RESULTS_CSV [OUT_DIR]",
              file=sys.stderr)
        return 2
    out_dir = argv[1] if len(argv) == 2 else None
    for path in render_csv(argv[0], out_dir):
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Deterministic output writers: CSV, JSON metrics, SVG quick-look plots.

Every CSV starts with one comment line carrying the tool version and the
config digest, then the header row, then data.  Floats are written with
``repr`` (shortest round-trip form) and nothing here embeds a timestamp,
so a rerun with the same config and seed produces byte-identical files.
The SVG plots are conveniences for eyeballing a run; the CSVs are the
record.
"""
from __future__ import annotations

import json
import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from ._version import __version__  # noqa: E402
from .config import SCHEMA_VERSION, config_digest  # noqa: E402


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def comment_line(cfg) -> str:
    return f"# vcosim {__version__} schema {SCHEMA_VERSION} config {config_digest(cfg)}"


def write_csv(path, columns, rows, cfg) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(comment_line(cfg) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else None
    return v


def write_metrics(path, metrics: dict, cfg) -> None:
    doc = {
        "schema": SCHEMA_VERSION,
        "version": __version__,
        "config_digest": config_digest(cfg),
    }
    doc.update(_jsonable(metrics))
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _save(fig, path, cfg) -> None:
    with matplotlib.rc_context({"svg.hashsalt": config_digest(cfg)}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def save_lines_figure(
    path,
    cfg,
    x,
    series,
    labels,
    xlabel: str,
    ylabel: str,
    title: str = "",
    logx: bool = True,
) -> None:
    """Overlayed line plot; ``series`` is a list of y arrays on a shared x,
    or a list of (x, y) pairs when the grids differ."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for ys, label in zip(series, labels):
        if isinstance(ys, tuple):
            ax.plot(ys[0], ys[1], label=label, linewidth=0.9)
        else:
            ax.plot(x, ys, label=label, linewidth=0.9)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    if any(labels):
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path, cfg)


def save_trace_figure(path, cfg, d_out, n_show: int = 512) -> None:
    head = np.asarray(d_out[:n_show])
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    ax.step(np.arange(len(head)), head, where="post", linewidth=0.8)
    ax.set_xlabel("sample")
    ax.set_ylabel("D_out (counts)")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path, cfg)


def save_sweep_figure(path, cfg, rows) -> None:
    lv = [r["level_dbv"] for r in rows]
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    ax.plot(lv, [r["snr_dba"] for r in rows], marker="o", label="SNR (dB-A)")
    ax.plot(lv, [r["sndr_dba"] for r in rows], marker="s", label="SNDR (dB-A)")
    ax.set_xlabel("input level (dBV)")
    ax.set_ylabel("dB-A")
    ax.grid(True, alpha=0.3)
    ax2 = ax.twinx()
    ax2.semilogy(lv, [max(r["thd_pct"], 1e-6) for r in rows], color="tab:red",
                 linestyle="--", marker=".", label="THD (%)")
    ax2.set_ylabel("THD (%)")
    lines, names = ax.get_legend_handles_labels()
    l2, n2 = ax2.get_legend_handles_labels()
    ax.legend(lines + l2, names + n2, loc="lower center", fontsize=8)
    fig.tight_layout()
    _save(fig, path, cfg)

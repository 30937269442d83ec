"""Training-curve rendering: figures plus a delimited summary table.

Consumes the metrics log written during training and emits one PNG per
tracked quantity (loss, dev F1, violation count) along with a summary
TSV, so a run directory is self-describing without a notebook.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import DataError
from .training import MetricsLog

_STYLE = {"local": dict(color="tab:blue", marker="o"),
          "global": dict(color="tab:red", marker="s")}


def _by_stage(log: MetricsLog) -> dict[str, list[dict]]:
    stages: dict[str, list[dict]] = {}
    for row in log.rows:
        stages.setdefault(row["stage"], []).append(row)
    return stages


def _curve(stages: dict[str, list[dict]], column: str, title: str,
           ylabel: str, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    for stage, rows in stages.items():
        xs = [r["epoch"] for r in rows]
        ys = [r[column] for r in rows]
        style = _STYLE.get(stage, {})
        ax.plot(xs, ys, label=stage, markersize=3, linewidth=1.2, **style)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_metrics_report(log: MetricsLog, out_dir: str | Path,
                          stem: str = "training") -> list[Path]:
    """Write summary TSV and curve figures; returns the created paths."""
    if not log.rows:
        raise DataError("metrics log is empty; nothing to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stages = _by_stage(log)

    paths = [out / f"{stem}_summary.tsv"]
    with open(paths[0], "w", encoding="utf-8") as fh:
        fh.write("stage\tepochs\tbest_dev_f1\tbest_epoch\t"
                 "final_train_loss\tfinal_violations\n")
        for stage, rows in stages.items():
            best = max(rows, key=lambda r: r["dev_f1"])
            fh.write(f"{stage}\t{len(rows)}\t{best['dev_f1']:.6f}\t"
                     f"{best['epoch']}\t{rows[-1]['train_loss']:.6f}\t"
                     f"{rows[-1]['violations']}\n")

    for column, title, ylabel, suffix in (
            ("train_loss", "training loss", "mean instance loss", "loss"),
            ("dev_f1", "dev micro-F1", "F1", "dev_f1"),
            ("violations", "constraint violations on dev", "count",
             "violations")):
        path = out / f"{stem}_{suffix}.png"
        _curve(stages, column, title, ylabel, path)
        paths.append(path)
    return paths

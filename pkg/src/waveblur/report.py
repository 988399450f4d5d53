"""
Experiment report rows, CSV output and run manifests.
"""

import json
import platform
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
import pywt
import scipy

CSV_COLUMNS = (
    "experiment",
    "method",
    "budget_ops",
    "budget_over_N",
    "metric_name",
    "value",
    "wall_ms",
)


@dataclass(frozen=True)
class ReportRow:
    """One measurement: a metric of a method at a budget."""

    experiment: str
    method: str
    budget_ops: float
    budget_over_N: float
    metric_name: str
    value: float
    wall_ms: float = 0.0


def rows_to_frame(rows: list[ReportRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(row) for row in rows], columns=list(CSV_COLUMNS))


def append_rows(path: str | Path, rows: list[ReportRow]) -> None:
    """Append rows to a CSV file, writing the header when the file is new."""
    path = Path(path)
    frame = rows_to_frame(rows)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)


def read_report(path: str | Path) -> pd.DataFrame:
    return pd.read_csv(path)


def average_over(rows: list[ReportRow], metric_name: str) -> list[ReportRow]:
    """
    Average rows sharing experiment, method and budget into one row named ``metric_name``.

    Used to report per-image measurements as a mean over the image set.
    """
    if not rows:
        return []
    frame = rows_to_frame(rows)
    grouped = frame.groupby(
        ["experiment", "method", "budget_ops", "budget_over_N"], sort=False, as_index=False
    ).agg(value=("value", "mean"), wall_ms=("wall_ms", "mean"))
    return [
        ReportRow(
            experiment=record["experiment"],
            method=record["method"],
            budget_ops=float(record["budget_ops"]),
            budget_over_N=float(record["budget_over_N"]),
            metric_name=metric_name,
            value=float(record["value"]),
            wall_ms=float(record["wall_ms"]),
        )
        for record in grouped.to_dict("records")
    ]


def library_versions() -> dict[str, str]:
    from . import __version__

    return {
        "waveblur": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pywt": pywt.__version__,
        "pandas": pd.__version__,
    }


def write_manifest(path: str | Path, manifest: dict[str, Any]) -> None:
    """Write a run manifest as indented, key-sorted JSON."""
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")

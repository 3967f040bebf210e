"""
CSV artifacts, summary and manifest.

Frames are staged in memory while an experiment runs and written in one
finalisation pass; a failure removes whatever was already written.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from .. import metrics
from ..errors import ScorsError
from ..optimizer import RunTrace

logger = structlog.get_logger(__name__)

FLOAT_FORMAT = "%.17g"
SUMMARY_FILE = "summary.txt"
MANIFEST_FILE = "manifest.txt"
METRICS_FILE = "metrics.prom"


def write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Locale-independent CSV with 17 significant digits and LF line endings."""
    path = Path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def emit_trace_csv(trace: RunTrace, path: Union[str, Path]) -> Path:
    """Columns n, cumulative_cost, dist, dist_sq, gamma_n; one row per snapshot."""
    return write_frame(trace.to_frame(), path)


def read_trace_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip")


def format_value(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return FLOAT_FORMAT % value
    return str(value)


def write_summary(path: Union[str, Path], summary: Dict[str, Any]) -> Path:
    path = Path(path)
    lines = [f"{key}={format_value(summary[key])}" for key in sorted(summary)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_manifest(path: Union[str, Path], files: List[Tuple[str, Path]]) -> Path:
    path = Path(path)
    lines = [f"{role}\t{file.name}" for role, file in files]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path: Union[str, Path]) -> List[Tuple[str, str]]:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            role, name = line.split("\t", 1)
            entries.append((role, name))
    return entries


@dataclass
class ExperimentArtifacts:
    """Files produced by one experiment with their roles, plus the summary key-values"""
    output_dir: Path
    summary: Dict[str, Any] = field(default_factory=dict)
    files: List[Tuple[str, Path]] = field(default_factory=list)
    _pending: List[Tuple[str, str, Callable[[Path], Path]]] = field(default_factory=list, repr=False)
    _written: List[Path] = field(default_factory=list, repr=False)

    def add_export(self, role: str, name: str, writer: Callable[[Path], Path]) -> None:
        """Stage a file produced by `writer(path)` at finalisation."""
        if any(pending_name == name for _, pending_name, _ in self._pending):
            raise ScorsError(f"artifact {name} staged twice")
        self._pending.append((role, name, writer))

    def add_frame(self, role: str, name: str, frame: pd.DataFrame) -> None:
        self.add_export(role, name, lambda path: write_frame(frame, path))

    def add_trace(self, role: str, name: str, trace: RunTrace) -> None:
        self.add_frame(role, name, trace.to_frame())

    def record(self, key: str, value: Any) -> None:
        self.summary[key] = value

    def update(self, values: Dict[str, Any]) -> None:
        self.summary.update(values)

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def finalize(self) -> "ExperimentArtifacts":
        """Write staged CSVs, summary, metrics and manifest; every listed file must be non-empty."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        try:
            for role, name, writer in self._pending:
                self._written.append(writer(self.path(name)))
                self.files.append((role, self.path(name)))
            self._pending.clear()

            self._written.append(write_summary(self.path(SUMMARY_FILE), self.summary))
            self.files.append(("summary", self.path(SUMMARY_FILE)))
            self._written.append(metrics.write_metrics(self.path(METRICS_FILE)))
            self.files.append(("metrics", self.path(METRICS_FILE)))

            missing = [str(path) for _, path in self.files if not path.exists() or path.stat().st_size == 0]
            if missing:
                raise ScorsError(f"artifacts missing or empty: {missing}")
            self._written.append(write_manifest(self.path(MANIFEST_FILE), self.files))
        except Exception:
            self.discard()
            raise
        logger.info("artifacts_written", output_dir=str(self.output_dir), files=len(self.files) + 1)
        return self

    def discard(self) -> None:
        """Remove partial output of a failed experiment."""
        for path in self._written:
            try:
                path.unlink()
            except FileNotFoundError:
                pass
        self._written.clear()
        self._pending.clear()
        self.files.clear()
        try:
            self.output_dir.rmdir()
        except OSError:
            pass

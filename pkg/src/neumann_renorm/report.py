#!/usr/bin/env python3
"""
Run reports: one JSON document per run plus one CSV per curve.

File names are ``<experiment>_<hash12>.json`` and
``<experiment>_<hash12>_<curve>.csv`` where the hash is the SHA-256 of the
canonical config text without the output directory; reports hold no
timestamps unless wall-clock timings are requested.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Union

import polars as pl

from .errors import NumericError, ReportIOError

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
CSV_FLOAT_PRECISION = 16   # digits after the point in scientific notation: 17 significant


def config_hash(canonical_text: str) -> str:
    return hashlib.sha256(canonical_text.encode('utf-8')).hexdigest()


@dataclass(frozen=True, slots=True)
class RunReport:
    """
    Everything a run writes.

    ``blocks`` holds the per-experiment results (``solution``, ``estimates``,
    ``continuation``, ``stability``, ``assumptions`` ...); ``curves`` maps a
    curve name to (parameter, value) pairs.
    """

    experiment: str
    config: dict[str, Any]
    config_hash: str
    version: str
    seed: int
    blocks: dict[str, Any]
    timings: dict[str, Any]
    curves: dict[str, tuple[tuple[float, float], ...]] = field(default_factory=dict)

    @property
    def stem(self) -> str:
        return f"{self.experiment}_{self.config_hash[:12]}"

    def document(self) -> dict[str, Any]:
        doc = {
            'schema_version': REPORT_SCHEMA_VERSION,
            'experiment': self.experiment,
            'version': self.version,
            'seed': self.seed,
            'config_hash': self.config_hash,
            'config': self.config,
            'timings': self.timings,
            'curves': sorted(self.curves),
        }
        doc.update(self.blocks)
        return doc


def find_non_finite(value: Any, path: str = '$') -> Optional[str]:
    """Path of the first NaN or infinity in a JSON-like value, or None."""
    if isinstance(value, float):
        return None if math.isfinite(value) else path
    if isinstance(value, dict):
        for key in sorted(value, key=str):
            found = find_non_finite(value[key], f"{path}.{key}")
            if found:
                return found
    elif isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            found = find_non_finite(item, f"{path}[{i}]")
            if found:
                return found
    return None


def render_document(report: RunReport) -> str:
    doc = report.document()
    bad = find_non_finite(doc)
    if bad is not None:
        raise NumericError(f"Report contains a non-finite number at {bad}", path=bad)
    for name, points in report.curves.items():
        for parameter, value in points:
            if not (math.isfinite(parameter) and math.isfinite(value)):
                raise NumericError(f"Curve {name} contains a non-finite number", curve=name)
    return json.dumps(doc, sort_keys=True, indent=2) + '\n'


def emit_report(
    report: RunReport,
    directory: Union[str, Path],
    formats: Iterable[str] = ('json', 'csv'),
) -> list[Path]:
    """
    Write the JSON document and, when requested and present, the curve CSVs.

    Returns:
        Written paths, document first, curves in name order

    Raises:
        NumericError: a number in the report is not finite
        ReportIOError: the directory cannot be created or written
    """
    text = render_document(report)
    out_dir = Path(directory)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        doc_path = out_dir / f"{report.stem}.json"
        doc_path.write_text(text, encoding='utf-8')
        written = [doc_path]
        if 'csv' in set(formats):
            for name in sorted(report.curves):
                points = report.curves[name]
                frame = pl.DataFrame(
                    {
                        'parameter': [float(p) for p, _ in points],
                        'value': [float(v) for _, v in points],
                    },
                    schema={'parameter': pl.Float64, 'value': pl.Float64},
                )
                csv_path = out_dir / f"{report.stem}_{name}.csv"
                frame.write_csv(csv_path, float_scientific=True, float_precision=CSV_FLOAT_PRECISION)
                written.append(csv_path)
    except OSError as exc:
        raise ReportIOError(f"Cannot write report to {out_dir}: {exc}", directory=str(out_dir)) from None
    logger.info(f"Report written: {', '.join(str(p) for p in written)}")
    return written

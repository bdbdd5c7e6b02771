"""Formatters for converting reports to JSON and CSV output."""

import csv
import io
import json
import math
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .core import hard_predict, softmax
from .models import ChoiceVector, PredictionBundle

SIGNIFICANT_DIGITS = 6


class ReportFormatter:
    """Render report dictionaries with fixed float formatting."""

    @staticmethod
    def format_float(value: float) -> float:
        """Round to six significant digits."""
        if not math.isfinite(value):
            return value
        return float(f"{value:.{SIGNIFICANT_DIGITS}g}")

    @staticmethod
    def normalize(obj: Any) -> Any:
        """
        Convert a report into plain JSON types.

        numpy scalars and arrays become Python numbers and lists, enums become
        their values, objects with ``to_dict`` are expanded, and floats are
        rounded.
        """
        if hasattr(obj, "to_dict"):
            return ReportFormatter.normalize(obj.to_dict())
        if isinstance(obj, Enum):
            return obj.value
        if isinstance(obj, dict):
            return {str(k): ReportFormatter.normalize(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple, set, frozenset)):
            items = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
            return [ReportFormatter.normalize(v) for v in items]
        if isinstance(obj, np.ndarray):
            return ReportFormatter.normalize(obj.tolist())
        if isinstance(obj, (bool, np.bool_)):
            return bool(obj)
        if isinstance(obj, (int, np.integer)):
            return int(obj)
        if isinstance(obj, (float, np.floating)):
            return ReportFormatter.format_float(float(obj))
        if isinstance(obj, Path):
            return str(obj)
        return obj

    @staticmethod
    def to_json(report: Any) -> str:
        """Sorted keys, two-space indent."""
        return json.dumps(ReportFormatter.normalize(report), indent=2, sort_keys=True)

    @staticmethod
    def csv_value(value: Any) -> str:
        if isinstance(value, (bool, np.bool_)):
            return str(int(value))
        if isinstance(value, (float, np.floating)):
            return f"{float(value):.{SIGNIFICANT_DIGITS}g}"
        if isinstance(value, Enum):
            return str(value.value)
        return str(value)

    @staticmethod
    def to_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([ReportFormatter.csv_value(v) for v in row])
        return buf.getvalue()


class ChoiceFormatter:
    """Per-sample selection audit table."""

    HEADER = ("index", "choice", "conf_base", "conf_new", "pred_base", "pred_new", "label")

    @staticmethod
    def rows(bundle: PredictionBundle, choices: ChoiceVector, extra: Optional[dict] = None):
        conf_b = softmax(bundle.base).data.max(axis=1)
        conf_n = softmax(bundle.new).data.max(axis=1)
        pred_b = hard_predict(bundle.base).labels
        pred_n = hard_predict(bundle.new).labels
        y = bundle.labels.labels
        extra = extra or {}
        for i in range(bundle.n):
            row = [i, choices[i].value, conf_b[i], conf_n[i], pred_b[i], pred_n[i], y[i]]
            row.extend(values[i] for values in extra.values())
            yield row

    @staticmethod
    def to_csv(bundle: PredictionBundle, choices: ChoiceVector, extra: Optional[dict] = None) -> str:
        """One row per sample; `extra` maps column names to per-sample arrays."""
        header = list(ChoiceFormatter.HEADER) + list((extra or {}).keys())
        return ReportFormatter.to_csv(header, ChoiceFormatter.rows(bundle, choices, extra))

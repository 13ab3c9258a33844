"""Check verdicts and deterministic JSON serialization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = "mvconvex-report/1"
MAX_WITNESSES = 20


@dataclass
class CheckReport:
    """Verdict of a grid-based check.

    ``witnesses`` holds the worst failing cases (at most ``MAX_WITNESSES``),
    ordered by margin and then lexicographically, so the report does not
    depend on evaluation order. ``worst_margin`` is the smallest slack seen
    over all evaluated cases (negative on failure).
    """

    name: str
    passed: bool
    checked: int = 0
    worst_margin: float | None = None
    witnesses: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return self.passed

    @property
    def verdict(self):
        return "pass" if self.passed else "fail"

    def to_dict(self):
        return {
            "name": self.name,
            "verdict": self.verdict,
            "checked": self.checked,
            "worst_margin": self.worst_margin,
            "witnesses": self.witnesses,
            "notes": self.notes,
            "details": self.details,
        }


def worst_cases(margins, columns, limit=MAX_WITNESSES, failing_only=True):
    """Rows of *columns* with the smallest margins, as dicts.

    *columns* maps names to arrays aligned with *margins*. Ties are broken
    by the column values in order, giving the lexicographically smallest
    witness first.
    """
    margins = np.asarray(margins, dtype=float).ravel()
    cols = {k: np.asarray(v, dtype=float).ravel() for k, v in columns.items()}
    idx = np.arange(margins.size)
    if failing_only:
        idx = idx[margins[idx] < 0]
    if idx.size == 0:
        return []
    keys = [cols[k][idx] for k in reversed(list(cols))] + [margins[idx]]
    order = idx[np.lexsort(keys)][:limit]
    rows = []
    for i in order:
        row = {k: float(v[i]) for k, v in cols.items()}
        row["margin"] = float(margins[i])
        rows.append(row)
    return rows


def _format_float(x):
    if math.isnan(x) or math.isinf(x):
        return "null"
    text = f"{x:.17g}"
    if all(c not in text for c in ".eEn"):
        text += ".0"
    return text


def _escape(s):
    out = ['"']
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\t":
            out.append("\\t")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def _dump(obj, indent, level, parts):
    pad = " " * (indent * (level + 1))
    end_pad = " " * (indent * level)
    if obj is None:
        parts.append("null")
    elif isinstance(obj, (bool, np.bool_)):
        parts.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(_format_float(float(obj)))
    elif isinstance(obj, str):
        parts.append(_escape(obj))
    elif isinstance(obj, dict):
        if not obj:
            parts.append("{}")
            return
        parts.append("{\n")
        items = sorted(obj.items(), key=lambda kv: str(kv[0]))
        for i, (k, v) in enumerate(items):
            parts.append(pad + _escape(str(k)) + ": ")
            _dump(v, indent, level + 1, parts)
            parts.append(",\n" if i < len(items) - 1 else "\n")
        parts.append(end_pad + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            parts.append("[]")
            return
        parts.append("[\n")
        for i, v in enumerate(seq):
            parts.append(pad)
            _dump(v, indent, level + 1, parts)
            parts.append(",\n" if i < len(seq) - 1 else "\n")
        parts.append(end_pad + "]")
    elif hasattr(obj, "to_dict"):
        _dump(obj.to_dict(), indent, level, parts)
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent=2):
    """JSON text with sorted keys and floats at 17 significant digits.

    Non-finite floats serialize as ``null``.
    """
    parts = []
    _dump(obj, indent, 0, parts)
    parts.append("\n")
    return "".join(parts)

"""CSV ingestion and the serialisable detection report."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .model import InvalidInputError, TimeSeries

REPORT_VERSION = 1


class DataError(InvalidInputError):
    """Malformed input file; the message carries the offending line number."""


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _split(line: str) -> List[str]:
    for sep in (",", "\t", ";"):
        if sep in line:
            return [tok.strip() for tok in line.split(sep)]
    return line.split()


def parse_series(text: str, source: str = "<input>") -> TimeSeries:
    """Parse one-column values or two-column ``time,value`` records.

    A non-numeric first line is taken as a header.  In two-column input the
    integer times must never decrease; repeated times collect replicate
    samples of one instant.
    """
    rows: List[Tuple[int, List[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        rows.append((lineno, _split(line)))
    if rows and not all(_is_number(tok) for tok in rows[0][1]):
        rows = rows[1:]
    if not rows:
        raise DataError(f"{source}: empty file, no data rows")

    width = len(rows[0][1])
    if width not in (1, 2):
        raise DataError(f"{source}: line {rows[0][0]}: expected 1 or 2 columns, found {width}")
    for lineno, toks in rows:
        if len(toks) != width:
            raise DataError(f"{source}: line {lineno}: expected {width} columns, found {len(toks)}")
        for tok in toks:
            if not _is_number(tok) or not math.isfinite(float(tok)):
                raise DataError(f"{source}: line {lineno}: non-numeric value {tok!r}")

    if width == 1:
        return TimeSeries(np.array([float(t[0]) for _, t in rows]))

    groups: List[List[float]] = []
    last_time: Optional[int] = None
    for lineno, (t_tok, v_tok) in rows:
        t_val = float(t_tok)
        if t_val != int(t_val):
            raise DataError(f"{source}: line {lineno}: time {t_tok!r} is not an integer")
        t_int = int(t_val)
        if last_time is not None and t_int < last_time:
            raise DataError(f"{source}: line {lineno}: time not increasing ({t_int} after {last_time})")
        if t_int == last_time:
            groups[-1].append(float(v_tok))
        else:
            groups.append([float(v_tok)])
        last_time = t_int
    if all(len(g) == 1 for g in groups):
        return TimeSeries(np.array([g[0] for g in groups]))
    return TimeSeries.from_groups(groups)


def ingest(path) -> TimeSeries:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: cannot read file ({exc.strerror})") from exc
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from exc
    return parse_series(text, source=str(path))


def write_series_csv(path, values, times=None) -> None:
    """Write ``time,value`` rows (1-based times unless ``times`` is given)."""
    values = np.asarray(values, dtype=float)
    times = np.arange(1, values.size + 1) if times is None else np.asarray(times)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "y"])
        for t, v in zip(times, values):
            w.writerow([int(t), repr(float(v))])


@dataclass
class EffectRecord:
    effect: int
    status: str
    estimate: int
    credible_set: List[int]
    total_mass: float
    peak: float
    alpha: Optional[List[float]] = None


@dataclass
class ReportDocument:
    """Everything ``prisca detect`` reports about one series.

    Field names are a compatibility surface; ``from_dict(to_dict(x)) == x``.
    """

    input: Dict[str, Any]
    config: Dict[str, Any]
    effects: List[EffectRecord]
    k_hat: int
    elbo_trace: List[float]
    converged: bool
    iterations: int
    meta: Optional[Dict[str, Any]] = None
    version: int = REPORT_VERSION

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        if d["meta"] is None:
            del d["meta"]
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ReportDocument":
        d = dict(d)
        d["effects"] = [EffectRecord(**e) for e in d["effects"]]
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ReportDocument":
        return cls.from_dict(json.loads(text))


def flatten(obj: Any, prefix: str = "") -> List[Tuple[str, Any]]:
    """Dotted-path leaves of nested dicts/lists, in document order."""
    if isinstance(obj, dict):
        out = []
        for k, v in obj.items():
            out.extend(flatten(v, f"{prefix}{k}."))
        return out
    if isinstance(obj, list):
        if not obj:
            return [(prefix[:-1], "[]")]
        out = []
        for i, v in enumerate(obj):
            out.extend(flatten(v, f"{prefix}{i}."))
        return out
    return [(prefix[:-1], obj)]


def _format_leaf(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(payload: Any) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    for key, value in flatten(payload):
        w.writerow([key, _format_leaf(value)])
    return buf.getvalue()


def read_csv_report(text: str) -> Dict[str, str]:
    rows = list(csv.reader(io.StringIO(text)))
    return {k: v for k, v in rows[1:]}

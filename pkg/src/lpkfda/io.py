"""CSV ingestion, report serialization and atomic file output."""

import csv
import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import DataError, DuplicateTimePoint, EmptyAfterFilter, ParseError
from .flm import DesignMatrix
from .inference import TestReport
from .smoothing import FunctionalDataset, Subject

OBS_HEADER = ("subject_id", "t", "y")
SEASONS = {
    "whole": (1.0, 365.0),
    "spring": (60.0, 151.0),
    "summer": (152.0, 243.0),
    "autumn": (244.0, 334.0),
}


@dataclass
class IngestionReport:
    rows: int
    subjects: int
    dropped: List[str] = field(default_factory=list)

    @property
    def n_dropped(self):
        return len(self.dropped)


def _natural_key(s):
    return [(0, int(tok), "") if tok.isdigit() else (1, 0, tok) for tok in re.split(r"(\d+)", s) if tok]


def _parse_float(text, what, line):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"{what} {text!r} is not a number", line) from None
    if not math.isfinite(value):
        raise ParseError(f"{what} {text!r} is not finite", line)
    return value


def _open_csv(path):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.reader(fh)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        fh.close()
        raise ParseError("empty file", 1) from None
    return fh, reader, header


def load_dataset(path, min_points=None, drop_below_min=False, interval=None):
    """Read long-format observations ``subject_id,t,y`` into a dataset.

    Subjects come back sorted by id (natural order) with times sorted, so
    row order in the file does not matter. With ``drop_below_min`` set,
    subjects with fewer than ``min_points`` observations are removed and
    listed in the report.

    Returns
    -------
    (FunctionalDataset, IngestionReport)
    """
    fh, reader, header = _open_csv(path)
    with fh:
        if tuple(header[:3]) != OBS_HEADER:
            raise ParseError(f"header must start with {','.join(OBS_HEADER)}, got {','.join(header)}", 1)
        obs = {}
        rows = 0
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line)
            sid = row[0].strip()
            if not sid:
                raise ParseError("empty subject_id", line)
            t = _parse_float(row[1].strip(), "t", line)
            y = _parse_float(row[2].strip(), "y", line)
            bucket = obs.setdefault(sid, {})
            if t in bucket:
                raise DuplicateTimePoint(f"line {line}: subject {sid} has two observations at t={t!r}")
            bucket[t] = y
            rows += 1
    if not obs:
        raise EmptyAfterFilter("no observations in file")
    dropped = []
    subjects = []
    for sid in sorted(obs, key=_natural_key):
        times = np.array(sorted(obs[sid]))
        if drop_below_min and min_points is not None and times.size < min_points:
            dropped.append(sid)
            continue
        subjects.append(Subject(sid, times, np.array([obs[sid][t] for t in times])))
    if not subjects:
        raise EmptyAfterFilter(f"all {len(obs)} subjects have fewer than {min_points} points")
    if interval is None:
        lo = min(s.times[0] for s in subjects)
        hi = max(s.times[-1] for s in subjects)
        interval = (lo, hi)
        if not lo < hi:
            raise DataError(f"all observations share the time {lo!r}; no interval to smooth over")
    dataset = FunctionalDataset(tuple(subjects), (float(interval[0]), float(interval[1])))
    return dataset, IngestionReport(rows=rows, subjects=len(subjects), dropped=dropped)


def load_covariates(path, ids):
    """Design matrix with rows aligned to ``ids``.

    Numeric columns ``subject_id,x1,...,xq`` are used as given. A single
    non-numeric column (e.g. ``subject_id,group``) becomes group
    indicators, levels in order of first appearance in the file.
    """
    fh, reader, header = _open_csv(path)
    with fh:
        if not header or header[0] != "subject_id" or len(header) < 2:
            raise ParseError("covariate header must be subject_id,x1,...,xq", 1)
        records = {}
        order = []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
            sid = row[0].strip()
            if sid in records:
                raise ParseError(f"subject {sid} listed twice", line)
            records[sid] = (line, [c.strip() for c in row[1:]])
            order.append(sid)
    missing = [i for i in ids if i not in records]
    if missing:
        raise DataError(f"no covariates for subjects {missing[:5]}{'...' if len(missing) > 5 else ''}")
    labels = header[1:]
    if len(labels) == 1 and not _all_numeric(records[s][1][0] for s in order):
        levels = []
        for s in order:
            g = records[s][1][0]
            if g not in levels:
                levels.append(g)
        return DesignMatrix.groups([records[i][1][0] for i in ids], levels)
    X = np.array([[_parse_float(v, labels[j], records[i][0]) for j, v in enumerate(records[i][1])]
                  for i in ids])
    return DesignMatrix(X, labels)


def _all_numeric(values):
    for v in values:
        try:
            float(v)
        except ValueError:
            return False
    return True


def parse_matrix(text):
    """Inline matrix: rows separated by ``;``, entries by ``,``."""
    try:
        rows = [[float(x) for x in r.split(",")] for r in text.split(";") if r.strip()]
    except ValueError:
        raise ParseError(f"cannot parse matrix {text!r}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ParseError(f"ragged or empty matrix {text!r}")
    return np.array(rows)


def load_contrast(spec):
    """Contrast matrix from an inline string or a headerless CSV file."""
    if os.path.exists(spec):
        with open(spec, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
        return parse_matrix(";".join(",".join(r) for r in rows))
    return parse_matrix(spec)


def load_c_function(spec, grid_points, k):
    """``c(t)`` on the grid: inline constant vector, or CSV ``t,c1..ck`` interpolated linearly."""
    if spec is None:
        return None
    if not os.path.exists(spec):
        c = parse_matrix(spec).ravel()
        if c.size != k:
            raise DataError(f"c has {c.size} entries, contrast has {k} rows")
        return c
    fh, reader, header = _open_csv(spec)
    with fh:
        data = [[_parse_float(v, header[j], line) for j, v in enumerate(row)]
                for line, row in enumerate(reader, start=2) if row]
    arr = np.array(data)
    if arr.ndim != 2 or arr.shape[1] != k + 1:
        raise DataError(f"c(t) file needs columns t,c1..c{k}")
    order = np.argsort(arr[:, 0])
    arr = arr[order]
    return np.vstack([np.interp(grid_points, arr[:, 0], arr[:, j + 1]) for j in range(k)])


def atomic_write_text(path, text):
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_table(header, rows):
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_table(path, header, rows):
    atomic_write_text(path, format_table(header, rows))


def report_json(report):
    return json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n"


def write_report(report, path):
    atomic_write_text(path, report_json(report))


def read_report(path) -> TestReport:
    with open(path, encoding="utf-8") as fh:
        return TestReport.from_dict(json.load(fh))


def read_table(path) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def parse_interval(text: Optional[str]):
    if text is None:
        return None
    if text in SEASONS:
        return SEASONS[text]
    try:
        a, b = (float(x) for x in text.split(","))
    except ValueError:
        raise ParseError(f"interval must be 'a,b' or one of {sorted(SEASONS)}, got {text!r}") from None
    if not a < b:
        raise ParseError(f"interval {text!r} is empty")
    return a, b

"""CSV ingestion and emission.

Glucose files have header ``patient_id,time_h,glucose``; meal files
``patient_id,time_h,carbs_g,fat_g`` followed by optional ``<name>_g``
columns for further components. Times are decimal hours from study start.
"""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path

import numpy as np

from .data import Dataset, PatientRecord
from .exceptions import DataValidationError, ParseError, SchemaError

GLUCOSE_HEADER = ("patient_id", "time_h", "glucose")
MEAL_PREFIX = ("patient_id", "time_h", "carbs_g", "fat_g")


def _fmt(x):
    return repr(float(x))


def _read_rows(path):
    path = Path(path)
    if not path.is_file():
        raise DataValidationError(f"{path}: no such file")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("empty file", path)
    return path, [c.strip() for c in rows[0]], rows[1:]


def _number(text, path, line, what):
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{what} {text!r} is not a number", path, line) from None
    if not math.isfinite(v):
        raise ParseError(f"{what} {text!r} is not finite", path, line)
    return v


def _records(path, header, rows, n_values):
    """Group data rows by patient: ``{pid: [(line, time, values...)]}``."""
    out = defaultdict(list)
    for k, row in enumerate(rows):
        line = k + 2
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, line)
        pid = row[0].strip()
        if not pid:
            raise ParseError("empty patient_id", path, line)
        t = _number(row[1], path, line, "time_h")
        vals = [_number(c, path, line, header[2 + i]) for i, c in enumerate(row[2 : 2 + n_values])]
        out[pid].append((line, t, vals))
    return out


def _check_times(pid, entries, path, what):
    times = [e[1] for e in entries]
    for a, b, e in zip(times, times[1:], entries[1:]):
        if b == a:
            raise DataValidationError(f"{path}:{e[0]}: duplicate {what} timestamp {b} for patient {pid}")
        if b < a:
            raise DataValidationError(f"{path}:{e[0]}: {what} times for patient {pid} are not increasing")


def read_meals(path):
    """Parse a meal diary; returns ``(components, {pid: (times, dosages)})``."""
    path, header, rows = _read_rows(path)
    if tuple(header[:4]) != MEAL_PREFIX:
        raise SchemaError(f"{path}: meal header must start with {','.join(MEAL_PREFIX)}, got {','.join(header)}")
    extra = header[4:]
    if any(not c.endswith("_g") or len(c) < 3 for c in extra):
        raise SchemaError(f"{path}: extra component columns must be named <name>_g, got {extra}")
    comps = tuple(c[:-2] for c in header[2:])
    if len(set(comps)) != len(comps):
        raise SchemaError(f"{path}: duplicate component columns")
    out = {}
    for pid, entries in _records(path, header, rows, len(comps)).items():
        _check_times(pid, entries, path, "meal")
        dos = np.array([e[2] for e in entries], dtype=float).reshape(-1, len(comps))
        if np.any(dos < 0):
            line = entries[int(np.argwhere(dos < 0)[0, 0])][0]
            raise DataValidationError(f"{path}:{line}: negative dosage for patient {pid}")
        out[pid] = (np.array([e[1] for e in entries]), dos)
    return comps, out


def read_glucose(path):
    """Parse a glucose file; returns ``{pid: (times, values, line numbers)}``."""
    path, header, rows = _read_rows(path)
    if tuple(header) != GLUCOSE_HEADER:
        raise SchemaError(f"{path}: glucose header must be {','.join(GLUCOSE_HEADER)}, got {','.join(header)}")
    out = {}
    for pid, entries in _records(path, header, rows, 1).items():
        _check_times(pid, entries, path, "glucose")
        out[pid] = (np.array([e[1] for e in entries]), np.array([e[2][0] for e in entries]),
                    np.array([e[0] for e in entries]))
    return out


def ingest(glucose_csv, meals_csv) -> Dataset:
    """Build a :class:`Dataset` from a glucose file and a meal diary.

    Row ids are the source line numbers of the glucose file.
    """
    glucose = read_glucose(glucose_csv)
    comps, meals = read_meals(meals_csv)
    unknown = sorted(set(meals) - set(glucose))
    if unknown:
        raise DataValidationError(f"{meals_csv}: meals for patients without glucose data: {unknown}")
    recs = []
    for pid, (t, y, lines) in glucose.items():
        mt, dos = meals.get(pid, (np.zeros(0), np.zeros((0, len(comps)))))
        recs.append(PatientRecord(pid, t, y, mt, dos, lines))
    return Dataset(tuple(recs), comps)


def _write(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_glucose(data: Dataset, path):
    return _write(path, GLUCOSE_HEADER, ((r.patient_id, _fmt(t), _fmt(y)) for r in data.records
                                         for t, y in zip(r.times, r.values)))


def write_meals(data: Dataset, path):
    header = ("patient_id", "time_h") + tuple(f"{c}_g" for c in data.components)
    return _write(path, header, ((r.patient_id, _fmt(t), *map(_fmt, m)) for r in data.records
                                 for t, m in zip(r.meal_times, r.dosages)))


def write_truth(truth, path):
    Q = truth.components.shape[1]
    header = ("patient_id", "time_h", "baseline") + tuple(f"comp_{q + 1}" for q in range(Q)) + ("total",)
    rows = ((p, _fmt(t), _fmt(b), *map(_fmt, c), _fmt(s)) for p, t, b, c, s in
            zip(truth.patient_ids, truth.times, truth.baseline, truth.components, truth.total))
    return _write(path, header, rows)


def write_predictions(dec, path):
    """``patient_id,time_h,total_mean,total_sd,baseline_mean,comp_1_mean,...`` per query row."""
    Q = dec.component_means.shape[1]
    header = ("patient_id", "time_h", "total_mean", "total_sd", "baseline_mean") + tuple(
        f"comp_{q + 1}_mean" for q in range(Q))
    sd = np.sqrt(dec.total_var_noisy)
    rows = ((p, _fmt(t), _fmt(m), _fmt(s), _fmt(b), *map(_fmt, c)) for p, t, m, s, b, c in
            zip(dec.patient_ids, dec.times, dec.total_mean, sd, dec.baseline_mean, dec.component_means))
    return _write(path, header, rows)


def read_table(path):
    """Read any emitted CSV into ``(header, rows)`` with numeric columns as floats."""
    path, header, rows = _read_rows(path)
    out = []
    for k, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, k + 2)
        out.append([row[0]] + [_number(c, path, k + 2, header[i + 1]) for i, c in enumerate(row[1:])])
    return header, out

"""Containers for meal/glucose records."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .exceptions import DataValidationError


class Observation(NamedTuple):
    patient_id: str
    time: float
    value: float = 0.0


class MealEvent(NamedTuple):
    patient_id: str
    time: float
    dosages: tuple


@dataclass(frozen=True, eq=False)
class PatientRecord:
    """One patient's glucose series and meal diary.

    ``dosages`` has shape ``(n_meals, Q)`` with the driving component in
    column 0. ``row_ids`` identify observations in the source file and are
    kept through every subset so data access can be audited.
    """

    patient_id: str
    times: np.ndarray
    values: np.ndarray
    meal_times: np.ndarray
    dosages: np.ndarray
    row_ids: np.ndarray = None

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("patient_id", str(self.patient_id))
        times = np.asarray(self.times, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float).reshape(-1)
        meal_times = np.asarray(self.meal_times, dtype=float).reshape(-1)
        dosages = np.asarray(self.dosages, dtype=float)
        if dosages.ndim == 1:
            dosages = dosages.reshape(meal_times.size, -1) if meal_times.size else dosages.reshape(0, max(dosages.size, 1))
        row_ids = np.arange(times.size) if self.row_ids is None else np.asarray(self.row_ids).reshape(-1)

        pid = self.patient_id
        if times.shape != values.shape or row_ids.shape != times.shape:
            raise DataValidationError(f"patient {pid}: times, values and row ids differ in length")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise DataValidationError(f"patient {pid}: non-finite observation time or value")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise DataValidationError(f"patient {pid}: observation times must be strictly increasing")
        if dosages.shape[0] != meal_times.size:
            raise DataValidationError(f"patient {pid}: {meal_times.size} meal times but {dosages.shape[0]} dosage rows")
        if not np.all(np.isfinite(meal_times)):
            raise DataValidationError(f"patient {pid}: non-finite meal time")
        if not np.all(np.isfinite(dosages)) or np.any(dosages < 0):
            raise DataValidationError(f"patient {pid}: dosages must be finite and non-negative")
        if meal_times.size > 1 and np.any(np.diff(meal_times) < 0):
            order = np.argsort(meal_times, kind="stable")
            meal_times, dosages = meal_times[order], dosages[order]
        if meal_times.size > 1 and np.any(np.diff(meal_times) == 0):
            raise DataValidationError(f"patient {pid}: duplicate meal time")
        for k, v in (("times", times), ("values", values), ("meal_times", meal_times), ("dosages", dosages), ("row_ids", row_ids)):
            v.setflags(write=False)
            set_(k, v)

    @property
    def n_obs(self):
        return self.times.size

    @property
    def n_meals(self):
        return self.meal_times.size

    def observations(self):
        return [Observation(self.patient_id, float(t), float(y)) for t, y in zip(self.times, self.values)]

    def meals(self):
        return [MealEvent(self.patient_id, float(t), tuple(m)) for t, m in zip(self.meal_times, self.dosages)]


@dataclass(frozen=True, eq=False)
class Dataset:
    """A collection of :class:`PatientRecord` sharing one component schema.

    Records are kept sorted by patient id so that stacked observation arrays
    are in (patient, time) lexicographic order.
    """

    records: tuple
    components: tuple = ("carbs", "fat")
    _index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        recs = tuple(sorted(self.records, key=lambda r: r.patient_id))
        ids = [r.patient_id for r in recs]
        if len(set(ids)) != len(ids):
            raise DataValidationError("duplicate patient ids")
        comps = tuple(str(c) for c in self.components)
        if len(comps) < 1:
            raise DataValidationError("at least one treatment component is required")
        for r in recs:
            if r.dosages.shape[1] != len(comps) and r.n_meals:
                raise DataValidationError(
                    f"patient {r.patient_id}: {r.dosages.shape[1]} dosage columns, expected {len(comps)}"
                )
        object.__setattr__(self, "records", recs)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "_index", {pid: i for i, pid in enumerate(ids)})

    # -- shape ----------------------------------------------------------
    @property
    def patient_ids(self):
        return tuple(r.patient_id for r in self.records)

    @property
    def n_components(self):
        return len(self.components)

    @property
    def n_obs(self):
        return sum(r.n_obs for r in self.records)

    @property
    def n_meals(self):
        return sum(r.n_meals for r in self.records)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, patient_id):
        try:
            return self.records[self._index[str(patient_id)]]
        except KeyError:
            raise KeyError(patient_id) from None

    def __contains__(self, patient_id):
        return str(patient_id) in self._index

    # -- stacked views --------------------------------------------------
    @property
    def obs_patient(self):
        """Patient id of every stacked observation row."""
        return np.concatenate([np.full(r.n_obs, r.patient_id, dtype=object) for r in self.records]) if self.records else np.array([], dtype=object)

    @property
    def times(self):
        return np.concatenate([r.times for r in self.records]) if self.records else np.array([])

    @property
    def values(self):
        return np.concatenate([r.values for r in self.records]) if self.records else np.array([])

    @property
    def row_ids(self):
        return np.concatenate([r.row_ids for r in self.records]) if self.records else np.array([], dtype=int)

    @property
    def span(self):
        t = self.times
        return (float(t.min()), float(t.max())) if t.size else (np.nan, np.nan)

    # -- derived datasets -----------------------------------------------
    def with_values(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_obs,):
            raise DataValidationError(f"expected {self.n_obs} values, got shape {values.shape}")
        out, start = [], 0
        for r in self.records:
            out.append(replace(r, values=values[start : start + r.n_obs]))
            start += r.n_obs
        return Dataset(tuple(out), self.components)

    def select_time(self, start=-np.inf, stop=np.inf, drop_empty=True):
        """Observations with ``start <= time < stop``; meals before ``stop``.

        Meals earlier than ``start`` are kept because their responses can
        reach into the selected period.
        """
        out = []
        for r in self.records:
            keep = (r.times >= start) & (r.times < stop)
            meals = r.meal_times < stop
            if drop_empty and not keep.any():
                continue
            out.append(PatientRecord(r.patient_id, r.times[keep], r.values[keep], r.meal_times[meals],
                                     r.dosages[meals], r.row_ids[keep]))
        return Dataset(tuple(out), self.components)

    def select_patients(self, patient_ids):
        wanted = {str(p) for p in patient_ids}
        return Dataset(tuple(r for r in self.records if r.patient_id in wanted), self.components)

    def select_components(self, names):
        """Keep only the named components (in the given order); drives an ablation."""
        names = [names] if isinstance(names, str) else list(names)
        try:
            idx = [self.components.index(n) for n in names]
        except ValueError as e:
            raise DataValidationError(str(e)) from None
        recs = tuple(replace(r, dosages=r.dosages[:, idx]) if r.n_meals else
                     replace(r, dosages=np.zeros((0, len(idx)))) for r in self.records)
        return Dataset(recs, tuple(names))

    def with_meals(self, patient_id, meal_times, dosages):
        """Replace one patient's meal diary, e.g. with hypothetical meals."""
        recs = tuple(replace(r, meal_times=meal_times, dosages=dosages) if r.patient_id == str(patient_id) else r
                     for r in self.records)
        return Dataset(recs, self.components)


def make_queries(data: Dataset, times):
    """Query dataset at ``times`` (shared by all patients) with each patient's meals."""
    times = np.asarray(times, dtype=float)
    recs = tuple(PatientRecord(r.patient_id, times, np.zeros_like(times), r.meal_times, r.dosages,
                               np.full(times.size, -1)) for r in data.records)
    return Dataset(recs, data.components)


def check_same_schema(a: Dataset, b: Dataset):
    if tuple(a.components) != tuple(b.components):
        raise DataValidationError(f"component mismatch: {a.components} vs {b.components}")


"""Per-patient normalization of glucose values."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .data import Dataset
from .exceptions import ConfigError, UnknownPatientError
from .validation import check_dataset

CENTER_MODES = ("mean", "zscore")


class Centerer(TransformerMixin, BaseEstimator):
    """Subtract each patient's training mean (and divide by its sd for ``zscore``).

    Parameters
    ----------
    mode : {"mean", "zscore"}
    """

    def __init__(self, mode="mean"):
        self.mode = mode

    def fit(self, data: Dataset, y=None):
        if self.mode not in CENTER_MODES:
            raise ConfigError(f"center mode must be one of {CENTER_MODES}, got {self.mode!r}")
        check_dataset(data)
        self.offsets_ = {r.patient_id: float(r.values.mean()) for r in data.records}
        if self.mode == "zscore":
            # a flat series cannot be scaled; keep it in original units
            self.scales_ = {r.patient_id: float(r.values.std()) or 1.0 for r in data.records}
        else:
            self.scales_ = {r.patient_id: 1.0 for r in data.records}
        return self

    def row_offsets(self, data: Dataset):
        """Per-row ``(offset, scale)`` arrays for the rows of ``data``."""
        check_is_fitted(self, "offsets_")
        try:
            off = np.array([self.offsets_[p] for p in data.obs_patient], dtype=float)
            sc = np.array([self.scales_[p] for p in data.obs_patient], dtype=float)
        except KeyError as e:
            raise UnknownPatientError(f"patient {e.args[0]!r} was not seen during fit") from None
        return off, sc

    def transform(self, data: Dataset):
        off, sc = self.row_offsets(data)
        return data.with_values((data.values - off) / sc)

    def inverse_transform(self, data: Dataset):
        off, sc = self.row_offsets(data)
        return data.with_values(data.values * sc + off)

    def to_dict(self):
        check_is_fitted(self, "offsets_")
        return {"mode": self.mode, "offsets": dict(self.offsets_), "scales": dict(self.scales_)}

    @classmethod
    def from_dict(cls, d):
        c = cls(d["mode"])
        c.offsets_ = {str(k): float(v) for k, v in d["offsets"].items()}
        c.scales_ = {str(k): float(v) for k, v in d["scales"].items()}
        return c

"""Gaussian-process models of glucose responses to composite meals.

Glucose is modeled as a smooth per-patient baseline plus the sum of
per-component meal responses. Responses share information across meals and
patients through a coregionalized covariance.
"""
from .data import Dataset, MealEvent, Observation, PatientRecord, make_queries
from .estimators import GPLFM, PIDR, GPConv, GPResp, PResp, make_estimator
from .metrics import MetricReport, compute_metrics
from .simdata import SimConfig, SyntheticTruth, generate_dataset, oracle_predict

__version__ = "0.1.0"

__all__ = [
    "Dataset", "MealEvent", "Observation", "PatientRecord", "make_queries",
    "GPResp", "GPLFM", "GPConv", "PResp", "PIDR", "make_estimator",
    "MetricReport", "compute_metrics",
    "SimConfig", "SyntheticTruth", "generate_dataset", "oracle_predict",
]

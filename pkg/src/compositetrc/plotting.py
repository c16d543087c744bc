"""Static SVG figures of a posterior decomposition, one per patient."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import Dataset
from .inference import PosteriorDecomposition


def plot_patient(dec: PosteriorDecomposition, data: Dataset, patient_id, path):
    """Write an SVG with the total band, baseline, component curves and meal markers.

    ``data`` supplies the observed glucose and the meal diary of the patient.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed hash salt keeps the SVG bytes reproducible
    plt.rcParams["svg.hashsalt"] = "compositetrc"
    m = dec.patient_ids == patient_id
    t = dec.times[m]
    order = np.argsort(t)
    t = t[order]
    mean = dec.total_mean[m][order]
    sd = np.sqrt(dec.total_var_noisy[m][order])
    base = dec.baseline_mean[m][order]
    comps = dec.component_means[m][order]

    fig, (ax, axc) = plt.subplots(2, 1, figsize=(10, 6), sharex=True, gridspec_kw={"height_ratios": [2, 1]})
    ax.fill_between(t, mean - 2 * sd, mean + 2 * sd, color="C0", alpha=0.2, lw=0, label="total ±2 sd")
    ax.plot(t, mean, color="C0", lw=1.5, label="total")
    ax.plot(t, base, color="0.4", lw=1.2, ls="--", label="baseline")
    rec = data[patient_id] if patient_id in data else None
    if rec is not None:
        ax.plot(rec.times, rec.values, "k.", ms=2.5, label="observed")
    ax.set_ylabel("glucose")
    ax.legend(loc="upper right", fontsize=8, ncol=4)
    for q, name in enumerate(dec.components):
        axc.plot(t, comps[:, q], color=f"C{q + 1}", lw=1.3, label=name)
    if rec is not None and rec.n_meals:
        for a in (ax, axc):
            for mt in rec.meal_times:
                a.axvline(mt, color="0.7", lw=0.6, zorder=0)
        axc.plot(rec.meal_times, np.zeros(rec.n_meals), "v", color="0.3", ms=5, label="meal")
    axc.set_xlabel("time (h)")
    axc.set_ylabel("response")
    axc.legend(loc="upper right", fontsize=8, ncol=len(dec.components) + 1)
    ax.set_title(f"patient {patient_id}")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path

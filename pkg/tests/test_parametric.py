import numpy as np
import pytest

from compositetrc.covariance import BaselineParams
from compositetrc.data import Dataset, PatientRecord
from compositetrc.exceptions import ConfigError, ParameterDomainError, UnknownPatientError
from compositetrc.parametric import (
    BellParams,
    bell_components,
    bell_response,
    fit_parametric_map,
    pidr_predict,
    presp_predict,
)
from compositetrc.simdata import SimConfig, generate_dataset


@pytest.mark.parametrize("tau, expected", [
    (3.0, 2.0),                     # peak at t_j + 3 l
    (0.0, 2.0 * np.exp(-4.5)),      # value at the meal time
    (4.0, 2.0 * np.exp(-0.5)),      # one width past the peak
])
def test_bell_values(tau, expected):
    assert bell_response(tau, 0.0, 2.0, 1.0) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("l", [0.0, -0.2, np.nan])
def test_bell_rejects_bad_width(l):
    with pytest.raises(ParameterDomainError):
        bell_response(1.0, 0.0, 1.0, l)


def test_bell_linear_in_height():
    tau = np.linspace(0, 5, 11)
    np.testing.assert_allclose(bell_response(tau, 1.0, 3.0, 0.4), 3.0 * bell_response(tau, 1.0, 1.0, 0.4),
                               rtol=1e-15)


def one_patient(meals=(1.0,), dosages=((30.0, 10.0),), times=None):
    times = np.arange(0.0, 10.0, 0.05) if times is None else np.asarray(times)
    rec = PatientRecord("a", times, np.zeros_like(times), list(meals), [list(d) for d in dosages])
    return Dataset((rec,), ("carbs", "fat"))


def test_pidr_coupled_peak_location():
    data = one_patient(times=np.arange(0.0, 10.0, 0.01))
    l = 0.5
    p = BellParams("p-idr", ("a",), ("carbs", "fat"), [[0.02, 0.03]], [[l]], 0.1, coupling=[2.0])
    comps = bell_components(data, p)
    assert data.times[np.argmax(comps[:, 0])] == pytest.approx(1.0 + 3 * l, abs=1e-9)
    assert data.times[np.argmax(comps[:, 1])] == pytest.approx(1.0 + 6 * l, abs=1e-9)
    assert comps[:, 1].max() == pytest.approx(0.03 * 10.0, rel=1e-12)


def test_pidr_unit_coupling_equals_presp():
    rng = np.random.default_rng(0)
    rec = PatientRecord("a", np.arange(0, 24, 0.25), np.zeros(96), [2.0, 8.0, 13.5], rng.uniform(5, 60, (3, 2)))
    data = Dataset((rec,), ("carbs", "fat"))
    mags, w = [[0.02, 0.01]], 0.37
    a = presp_predict(data, BellParams("p-resp", ("a",), data.components, mags, [[w, w]], 0.1))
    b = pidr_predict(data, BellParams("p-idr", ("a",), data.components, mags, [[w]], 0.1, coupling=[1.0]))
    np.testing.assert_allclose(a, b, atol=1e-12, rtol=0)


def test_components_sum_over_meals():
    data = one_patient(meals=(1.0, 2.0), dosages=((30.0, 0.0), (10.0, 5.0)))
    p = BellParams("p-resp", ("a",), data.components, [[0.02, 0.05]], [[0.4, 0.7]], 0.1)
    c = bell_components(data, p)
    t = data.times
    ref0 = bell_response(t, 1.0, 0.6, 0.4) + bell_response(t, 2.0, 0.2, 0.4)
    ref1 = bell_response(t, 2.0, 0.25, 0.7)
    np.testing.assert_allclose(c[:, 0], ref0, atol=1e-15)
    np.testing.assert_allclose(c[:, 1], ref1, atol=1e-15)


class TestBellParams:
    def test_round_trip(self):
        p = BellParams("p-idr", ("a", "b"), ("carbs", "fat"), [[0.1, 0.2], [0.3, 0.4]], [[0.5], [0.6]], 0.1,
                       coupling=[1.5], hyper={"mag_mu": np.array([1.0, 2.0])})
        q = BellParams.from_dict(p.to_dict())
        assert q.to_dict() == p.to_dict()

    @pytest.mark.parametrize("kw", [
        {"magnitudes": [[-0.1, 0.2]]}, {"widths": [[0.0, 0.5]]}, {"noise_variance": 0.0},
        {"magnitudes": [[0.1, 0.2, 0.3]]},
    ])
    def test_invalid(self, kw):
        args = dict(kind="p-resp", patients=("a",), components=("carbs", "fat"), magnitudes=[[0.1, 0.2]],
                    widths=[[0.5, 0.5]], noise_variance=0.1)
        args.update(kw)
        with pytest.raises(ParameterDomainError):
            BellParams(**args)

    def test_bad_coupling(self):
        with pytest.raises(ParameterDomainError):
            BellParams("p-idr", ("a",), ("carbs", "fat"), [[0.1, 0.2]], [[0.5]], 0.1, coupling=[-1.0])

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            BellParams("p-foo", ("a",), ("carbs",), [[0.1]], [[0.5]], 0.1)

    def test_unknown_patient(self):
        p = BellParams("p-resp", ("zz",), ("carbs", "fat"), [[0.1, 0.2]], [[0.5, 0.5]], 0.1)
        with pytest.raises(UnknownPatientError):
            bell_components(one_patient(), p)


def low_noise_cohort(kind, n_patients=1, seed=3):
    cfg = SimConfig(n_patients=n_patients, days=2, kind=kind, noise_variance=0.001,
                    baseline=BaselineParams(10.0, 1e-12), level_sd=0.0, seed=seed)
    data, truth = generate_dataset(cfg)
    return data.with_values(data.values - cfg.level_mean), truth


@pytest.mark.parametrize("kind", ["p-resp", "p-idr"])
def test_map_recovers_heights_and_widths(kind):
    data, truth = low_noise_cohort(kind)
    p, info = fit_parametric_map(data, kind, random_state=0)
    assert info["objective"] >= info["initial_objective"]
    np.testing.assert_allclose(p.magnitudes, truth.params.magnitudes, rtol=0.1)
    np.testing.assert_allclose(p.effective_widths(), truth.params.effective_widths(), rtol=0.1)


def test_hierarchy_shrinks_towards_population():
    cfg = SimConfig(n_patients=4, days=1, kind="p-resp", noise_variance=0.3, seed=5)
    data, _ = generate_dataset(cfg)
    data = data.with_values(data.values - cfg.level_mean)
    hier, _ = fit_parametric_map(data, "p-resp", random_state=0, n_restarts=1)
    flat, _ = fit_parametric_map(data, "p-resp", random_state=0, n_restarts=1, hierarchical=False)
    spread = lambda p: np.log(p.magnitudes).std(axis=0).sum()  # noqa: E731
    assert spread(hier) <= spread(flat)
    assert flat.hyper == {}


def test_map_deterministic():
    data, _ = low_noise_cohort("p-idr")
    a, _ = fit_parametric_map(data, "p-idr", random_state=1, n_restarts=2, max_evals=500)
    b, _ = fit_parametric_map(data, "p-idr", random_state=1, n_restarts=2, max_evals=500)
    assert a.to_dict() == b.to_dict()


def test_map_unknown_kind():
    with pytest.raises(ConfigError):
        fit_parametric_map(one_patient(), "gp-resp")

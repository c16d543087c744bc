import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from compositetrc.estimators import ESTIMATORS, GPConv, GPResp, PIDR, make_estimator
from compositetrc.exceptions import ConfigError, UnknownPatientError
from compositetrc.preprocessing import Centerer
from compositetrc.simdata import SimConfig, generate_dataset


@pytest.fixture(scope="module")
def cohort():
    data, _ = generate_dataset(SimConfig(n_patients=2, days=2, kind="gp-resp", seed=0))
    return data.select_time(0, 24), data.select_time(24, 48)


@pytest.mark.parametrize("kind", sorted(ESTIMATORS))
def test_params_and_clone(kind):
    est = make_estimator(kind, random_state=3, n_restarts=2)
    c = clone(est)
    assert c.get_params() == est.get_params()
    assert c.get_params()["random_state"] == 3


def test_make_estimator_maps_grid_point():
    est = make_estimator("gp-resp", window=2.5, lengthscales=(0.35, 0.75), baseline_lengthscale=5.0)
    assert (est.window, est.driving_lengthscale, est.secondary_lengthscale, est.baseline_lengthscale) == (
        2.5, 0.35, 0.75, 5.0)
    conv = make_estimator("gp-conv", lengthscales=(0.4,))
    assert isinstance(conv, GPConv) and conv.lengthscale == 0.4
    with pytest.raises(ConfigError):
        make_estimator("gp-nope")


def test_predict_before_fit(cohort):
    with pytest.raises(NotFittedError):
        GPResp().predict(cohort[1])


@pytest.mark.parametrize("kw", [{"center": "median"}, {"n_restarts": 0}])
def test_bad_settings(kw, cohort):
    with pytest.raises(ConfigError):
        GPResp(**kw).fit(cohort[0])


@pytest.mark.parametrize("kind", ["gp-resp", "p-idr"])
def test_fit_predict_restore(kind, cohort):
    train, test = cohort
    est = make_estimator(kind, n_restarts=1, max_evals=150, random_state=0).fit(train)
    mean, sd = est.predict(test, return_std=True)
    assert mean.shape == sd.shape == (test.n_obs,)
    assert np.all(sd > 0)
    dec = est.predict_decomposition(test)
    assert dec.additivity_error() <= 1e-8
    back = ESTIMATORS[kind].restore(est.to_dict(), train)
    np.testing.assert_array_equal(back.predict(test), mean)
    assert est.score(test) == pytest.approx(-np.sqrt(np.mean((mean - test.values) ** 2)))


def test_predictions_in_original_units(cohort):
    train, test = cohort
    shifted = train.with_values(train.values + 100.0)
    a = PIDR(n_restarts=1, random_state=0).fit(train).predict(test)
    b = PIDR(n_restarts=1, random_state=0).fit(shifted).predict(test)
    np.testing.assert_allclose(b - a, 100.0, atol=1e-6)


def test_unknown_patient(cohort):
    train, test = cohort
    est = PIDR(n_restarts=1, random_state=0).fit(train.select_patients(["P01"]))
    with pytest.raises(UnknownPatientError):
        est.predict(test)


class TestCenterer:
    @pytest.mark.parametrize("mode", ["mean", "zscore"])
    def test_round_trip(self, mode, cohort):
        train = cohort[0]
        c = Centerer(mode).fit(train)
        z = c.transform(train)
        for r in z.records:
            assert abs(r.values.mean()) < 1e-12
            if mode == "zscore":
                assert r.values.std() == pytest.approx(1.0)
        np.testing.assert_allclose(c.inverse_transform(z).values, train.values, atol=1e-12)
        d = Centerer.from_dict(c.to_dict())
        np.testing.assert_array_equal(d.transform(train).values, z.values)

    def test_bad_mode(self, cohort):
        with pytest.raises(ConfigError):
            Centerer("robust").fit(cohort[0])

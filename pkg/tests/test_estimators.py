import numpy as np
import pytest
from sklearn.base import clone

from snnaccel import fixtures, oracle
from snnaccel.errors import ConfigError, DivergenceError, ShapeError
from snnaccel.estimators import (
    BitWidthCalibrator,
    SpikingAcceleratorClassifier,
    check_spike_batch,
)
from snnaccel.ir import SpikeTensor, save_manifest
import snnaccel.estimators as est


@pytest.fixture
def net():
    return fixtures.demo_network(0)


def _batch(net, k=3):
    return np.stack([fixtures.fixture_input(net, s).data for s in range(k)])


def test_params_round_trip(net):
    clf = SpikingAcceleratorClassifier(net, par="8,8,4,4", mode="compare")
    params = clf.get_params()
    assert params["par"] == "8,8,4,4" and params["mode"] == "compare"
    assert clone(clf).get_params()["fast_mhz"] == 500.0


def test_predict_matches_oracle(net):
    X = _batch(net)
    clf = SpikingAcceleratorClassifier(net, par="8,8,4,4", mode="compare").fit(X)
    scores = clf.decision_function(X)
    ref = np.stack([oracle.run_reference(net, SpikeTensor(x, 1))[1] for x in X])
    assert np.array_equal(scores, ref)
    assert np.array_equal(clf.predict(X), ref.argmax(axis=1))
    assert clf.perf_.dsp_count == 2 * 4 * 2 * 4
    assert list(clf.classes_) == list(range(10))
    oracle_clf = SpikingAcceleratorClassifier(net, mode="oracle").fit()
    assert np.array_equal(oracle_clf.decision_function(X), ref)


def test_fit_from_manifest_path(tmp_path, net):
    path = save_manifest(net, tmp_path / "net.json")
    clf = SpikingAcceleratorClassifier(str(path), par="8,8,4,4").fit()
    assert clf.network_ == net


def test_validation(net):
    with pytest.raises(ConfigError):
        SpikingAcceleratorClassifier(net, mode="fast").fit()
    with pytest.raises(ConfigError):
        SpikingAcceleratorClassifier(net, par="6,8,4,4").fit()
    with pytest.raises(ConfigError):
        SpikingAcceleratorClassifier().fit()
    clf = SpikingAcceleratorClassifier(net).fit()
    with pytest.raises(ShapeError):
        clf.predict(np.zeros((2, 1, 1, 1, 1)))
    with pytest.raises(ValueError):
        check_spike_batch([], net)


def test_compare_mode_raises_on_divergence(net, monkeypatch):
    def broken(network, x, par, compare=True):
        run = real(network, x, par, compare)
        out = run.outputs["l0"]
        out.data[0, 0, 0, 0] ^= 1
        from snnaccel.pipeline import first_divergence
        run.divergences.append(first_divergence("l0", oracle.run_reference(network, x)[0]["l0"],
                                                out))
        return run

    real = est.run_network_accel
    monkeypatch.setattr(est, "run_network_accel", broken)
    clf = SpikingAcceleratorClassifier(net, par="8,8,4,4", mode="compare").fit()
    with pytest.raises(DivergenceError):
        clf.predict(_batch(net, 1))


def test_calibrator_on_values():
    cal = BitWidthCalibrator(cutoff=0.1).fit([np.array([4, 0, 0, 0])])
    assert cal.policy_.mode == "shift"
    assert cal.transform(np.array([4, 3, 1])).tolist() == [2, 1, 0]
    cal = BitWidthCalibrator().fit([np.array([1, 2, 3])])
    assert cal.transform(np.array([4, 3])).tolist() == [3, 3]
    with pytest.raises(ConfigError):
        BitWidthCalibrator(cutoff=2).fit([np.array([1])])


def test_calibrator_on_network():
    net = fixtures.avgpool_shift_network(0)
    X = _batch(net, 4)
    cal = BitWidthCalibrator(network=net).fit(X)
    calibrated = cal.transform()
    assert set(cal.policies_) == {"l0", "l1"}
    assert BitWidthCalibrator(network=calibrated).fit(X).transform() == calibrated

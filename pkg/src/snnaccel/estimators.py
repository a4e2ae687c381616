"""scikit-learn style wrappers around the simulator.

``SpikingAcceleratorClassifier`` treats a fixed, already-trained network as
a classifier: ``fit`` only validates the network and builds the
performance estimate, ``predict`` runs the oracle or accelerator path.
``BitWidthCalibrator`` learns saturate-or-shift policies from samples.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import oracle
from .decompose import DEFAULT_CUTOFF, calibrate_network, calibrate_policy
from .errors import ConfigError, ShapeError
from .ir import NetworkDesc, ParallelismConfig, SpikeTensor, load_manifest, validate_chain
from .pipeline import run_network_accel
from .schedperf import estimate

MODES = ("oracle", "accel", "compare")


def check_spike_batch(X, net):
    """Coerce X to a list of SpikeTensors shaped like the network input.

    Accepts a single SpikeTensor, a list of them, or an integer array of
    shape (samples,) + input_shape.
    """
    if isinstance(X, SpikeTensor):
        X = [X]
    if isinstance(X, np.ndarray):
        if X.shape[1:] != tuple(net.input_shape):
            raise ShapeError(f"expected samples of shape {net.input_shape}, got {X.shape[1:]}")
        X = [SpikeTensor(x, net.input_bits) for x in X]
    out = []
    for x in X:
        if not isinstance(x, SpikeTensor):
            x = SpikeTensor(np.asarray(x), net.input_bits)
        if x.shape != tuple(net.input_shape) or x.bit_width != net.input_bits:
            raise ShapeError(f"sample {x.shape}/{x.bit_width}-bit does not match network "
                             f"input {net.input_shape}/{net.input_bits}-bit")
        out.append(x)
    if not out:
        raise ValueError("no samples given")
    return out


def check_network(network):
    """Load a manifest path or validate a NetworkDesc."""
    if isinstance(network, NetworkDesc):
        diags = validate_chain(network)
        if diags:
            raise ShapeError("; ".join(diags))
        return network
    return load_manifest(network)


def _parallelism(par, fast_mhz):
    if isinstance(par, ParallelismConfig):
        return par
    return ParallelismConfig.parse(par, fast_mhz)


class SpikingAcceleratorClassifier(ClassifierMixin, BaseEstimator):
    """Classify spike inputs with a fixed network on the simulated accelerator.

    Parameters
    ----------
    network : NetworkDesc or path to a manifest
    par : "m,v,n,s" string or ParallelismConfig
    fast_mhz : fast clock frequency
    mode : "oracle", "accel" or "compare"; compare raises DivergenceError
        on the first mismatch between the two paths.
    """

    def __init__(self, network=None, par="16,16,8,4", fast_mhz=500.0, mode="accel"):
        self.network = network
        self.par = par
        self.fast_mhz = fast_mhz
        self.mode = mode

    def fit(self, X=None, y=None):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.network is None:
            raise ConfigError("no network given")
        self.network_ = check_network(self.network)
        self.par_ = _parallelism(self.par, self.fast_mhz)
        self.perf_ = estimate(self.network_, self.par_)
        self.n_classes_ = self.network_.layer(self.network_.classifier_layer).shape.c_o
        self.classes_ = np.arange(self.n_classes_)
        return self

    def _scores(self, x):
        if self.mode == "oracle":
            return oracle.run_reference(self.network_, x)[1]
        run = run_network_accel(self.network_, x, self.par_, compare=self.mode == "compare")
        if not run.ok:
            raise run.divergences[0].as_error()
        return run.scores

    def decision_function(self, X):
        """Spike counts per class, one row per sample."""
        check_is_fitted(self, "network_")
        return np.stack([self._scores(x) for x in check_spike_batch(X, self.network_)])

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class BitWidthCalibrator(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Learn saturate-or-shift policies.

    With ``network`` set, ``fit`` calibrates every policy-bearing layer on
    the spike samples X and ``transform`` returns the calibrated network.
    Without it, X is a batch of pre-policy value arrays, ``fit`` learns a
    single policy and ``transform`` applies it elementwise.
    """

    def __init__(self, cutoff=DEFAULT_CUTOFF, network=None):
        self.cutoff = cutoff
        self.network = network

    def fit(self, X, y=None):
        if not 0 <= self.cutoff <= 1:
            raise ConfigError(f"cutoff {self.cutoff} outside [0, 1]")
        if self.network is not None:
            net = check_network(self.network)
            self.network_, self.policies_ = calibrate_network(
                net, check_spike_batch(X, net), self.cutoff)
            self.policy_ = None
        else:
            self.policy_ = calibrate_policy(list(X) if not isinstance(X, np.ndarray) else X,
                                            self.cutoff)
            self.network_, self.policies_ = None, {}
        return self

    def transform(self, X=None):
        check_is_fitted(self, "policies_")
        if self.network_ is not None:
            return self.network_
        return oracle.apply_width_policy(X, self.policy_.mode)


__all__ = ["BitWidthCalibrator", "SpikingAcceleratorClassifier", "check_network",
           "check_spike_batch"]

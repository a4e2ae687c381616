"""Seeded builders for fixture networks and random test layers.

Weights are drawn under a per-channel budget on sum(|w|) so that no engine
psum can leave 12 bits and no merged current gets near the 18-bit limit.
Thresholds are then set from the oracle's own currents so layers fire at
a useful rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import oracle
from .constants import CODING_BITS, ENGINE_PSUM_LIMIT
from .errors import PsumOverflowError
from .ir import (
    LayerConfig,
    LayerShape,
    NetworkDesc,
    NeuronParams,
    ParallelismConfig,
    ResidualConfig,
    SpikeTensor,
    WeightTensor,
    coding_for_bits,
)

NEURONS = ("IF", "LIF", "RMP")
CURRENT_BUDGET = 12000


def weight_budget(bits, post_shift_left=0):
    """Largest per-channel sum(|w|) that keeps every stage in range."""
    merged = CURRENT_BUDGET // ((1 << bits) - 1) >> post_shift_left
    return max(1, min(ENGINE_PSUM_LIMIT - 1, merged))


def draw_weights(rng, c_o, c_i, k, budget, wmax=None):
    wmax = wmax if wmax is not None else int(rng.choice([1, 2, 3, 7, 31, 127]))
    w = rng.integers(-wmax, wmax + 1, size=(c_o, c_i, k, k))
    flat = w.reshape(c_o, -1)
    for row in flat:
        while np.abs(row).sum() > budget:
            nz = np.flatnonzero(row)
            row[rng.choice(nz, size=max(1, len(nz) // 4), replace=False)] = 0
    return WeightTensor(flat.reshape(w.shape))


def pick_threshold(rng, current):
    pos = np.asarray(current)[np.asarray(current) > 0]
    if pos.size == 0:
        return 1
    return max(1, int(np.percentile(pos, rng.uniform(20, 90))))


def random_spikes(rng, shape, bits, density=None):
    if bits == 1:
        density = rng.uniform(0.1, 0.7) if density is None else density
        return SpikeTensor((rng.random(shape) < density).astype(np.uint8), 1)
    return SpikeTensor(rng.integers(0, 1 << bits, size=shape), bits)


def random_parallelism(rng):
    return ParallelismConfig(
        m=int(rng.choice([4, 8, 16])), v=int(rng.choice([4, 8, 16])),
        n=int(rng.choice([1, 2, 4, 8])), s=4, f_fast_mhz=500.0,
    )


@dataclass
class LayerCase:
    layer: LayerConfig
    spikes: SpikeTensor
    weights: WeightTensor
    bias: np.ndarray
    par: ParallelismConfig
    shortcut: Optional[SpikeTensor] = None
    iand_negate: str = "backbone"


def random_layer_case(rng, max_hw=16, max_channels=24, k=None, stride=None, pad=None,
                      t=None, bits=None, neuron=None, pool=None, residual=None):
    """One random legal layer with input, weights and (maybe) a shortcut.

    Keyword arguments pin individual choices; anything left as None is drawn.
    ``residual`` may be None (draw), False (no residual) or a function name.
    """
    k = int(rng.choice([1, 3, 5, 7])) if k is None else k
    stride = int(rng.choice([1, 2])) if stride is None else stride
    pad = int(rng.integers(0, 4)) if pad is None else pad
    t = int(rng.choice([1, 2, 4, 8])) if t is None else t
    bits = int(rng.choice([1, 2, 4, 8])) if bits is None else bits
    neuron = str(rng.choice(NEURONS)) if neuron is None else neuron
    pool = str(rng.choice(["none", "none", "max2x2", "avg2x2"])) if pool is None else pool
    pad = min(pad, k - 1) if k > 1 else 0

    c_i = int(rng.integers(1, max_channels + 1))
    c_o = int(rng.integers(1, max_channels + 1))
    lo = max(1, k - 2 * pad)
    h_i = int(rng.integers(lo, max(lo, max_hw) + 1))
    w_i = int(rng.integers(lo, max(lo, max_hw) + 1))
    shape = LayerShape.conv(t, c_i, h_i, w_i, c_o, k, stride, pad)
    if pool != "none" and (shape.h_o % 2 or shape.w_o % 2):
        pool = "none"

    if residual is None:
        residual = str(rng.choice(["none", "ADD", "IAND"])) if pool != "avg2x2" else "none"
    res_cfg = None
    if residual and residual != "none" and pool != "avg2x2":
        if residual == "IAND":
            res_cfg = ResidualConfig("IAND", 1, "saturate2")
        else:
            res_cfg = ResidualConfig("ADD", int(rng.choice([1, 2, 4])),
                                     str(rng.choice(["extend4", "saturate2", "shift2"])))

    coding = coding_for_bits(bits)
    post_shift = int(rng.integers(0, 2)) if bits in (1, 2) else 0
    t_in = 1 if coding == "direct8bit" else t
    spikes = random_spikes(rng, (t_in, c_i, h_i, w_i), bits)
    weights = draw_weights(rng, c_o, c_i, k, weight_budget(bits, post_shift))
    bias = rng.integers(-8, 9, size=c_o)

    probe = LayerConfig("probe", shape, coding, NeuronParams(neuron, 1), post_shift_left=post_shift)
    current = oracle.layer_currents(probe, spikes, weights, bias)
    params = NeuronParams(neuron, pick_threshold(rng, current),
                          int(rng.integers(1, 5)) if neuron == "LIF" else 0)
    layer = LayerConfig(f"rand_k{k}s{stride}p{pad}", shape, coding, params, pool,
                        str(rng.choice(["saturate", "shift"])), res_cfg, post_shift)
    shortcut = None
    if res_cfg is not None:
        shortcut = random_spikes(rng, layer.output_shape, res_cfg.shortcut_bit_width)
    return LayerCase(layer, spikes, weights, bias, random_parallelism(rng), shortcut,
                     str(rng.choice(["backbone", "shortcut"])))


# -- networks ------------------------------------------------------------------

class NetworkBuilder:
    """Append layers while tracking the running output shape and bit width."""

    def __init__(self, rng, input_shape, input_bits, name="network", t=None, simulate=True):
        self.rng = rng
        self.input_shape = tuple(input_shape)
        self.input_bits = input_bits
        self.name = name
        self.t = t if t is not None else input_shape[0]
        self.layers, self.weights, self.biases = [], {}, {}
        self.tensors = {"input": (self.input_shape, input_bits)}
        self._shape = self.input_shape
        self._bits = input_bits
        self._shifted = False
        # without simulation thresholds must be given and no sample is traced
        self.simulate = simulate
        self._sample = random_spikes(rng, self.input_shape, input_bits)
        self._values = {"input": self._sample}

    @property
    def last(self):
        return self.layers[-1].name if self.layers else "input"

    def add(self, c_o, k=3, stride=1, pad=None, neuron="IF", pool="none",
            pool_policy="saturate", residual=None, leak_shift=2, wmax=None,
            threshold=None):
        pad = k // 2 if pad is None else pad
        _, c_i, h_i, w_i = self._shape
        coding = coding_for_bits(self._bits)
        shape = LayerShape.conv(self.t, c_i, h_i, w_i, c_o, k, stride, pad)
        name = f"l{len(self.layers)}"
        post_shift = int(self._shifted)
        weights = draw_weights(self.rng, c_o, c_i, k,
                               weight_budget(self._bits, post_shift), wmax)
        bias = self.rng.integers(-4, 5, size=c_o)
        if threshold is None:
            probe = LayerConfig(name, shape, coding, NeuronParams(neuron, 1),
                                post_shift_left=post_shift)
            current = oracle.layer_currents(probe, self._sample, weights, bias)
            threshold = pick_threshold(self.rng, current)
        layer = LayerConfig(name, shape, coding,
                            NeuronParams(neuron, threshold, leak_shift if neuron == "LIF" else 0),
                            pool, pool_policy, residual, post_shift)
        if self.simulate:
            shortcut = self._values[residual.source] if residual else None
            out, _ = oracle.run_layer_reference(layer, self._sample, weights, bias, shortcut)
            self._values[name] = self._sample = out
        self.layers.append(layer)
        self.weights[name] = weights
        self.biases[name] = bias
        self._shape, self._bits = layer.output_shape, layer.output_bits
        self._shifted = layer.output_shifted
        return name

    def build(self, classifier=None, ann_flops=None):
        return NetworkDesc(self.layers, self.weights, self.biases, self.input_shape,
                           self.input_bits, self.name, classifier, "backbone", ann_flops)


def demo_network(seed=0):
    """Three binary layers, T=4, ending in a 10-way spike-count readout."""
    rng = np.random.default_rng(seed)
    b = NetworkBuilder(rng, (4, 2, 8, 8), 1, "demo3")
    b.add(8, k=3, neuron="IF")
    b.add(8, k=3, neuron="RMP", pool="max2x2")
    b.add(10, k=4, pad=0, neuron="LIF")
    return b.build()


def sew_network(seed=0, function="ADD", policy="saturate2"):
    """Direct-coded stem followed by a SEW residual block."""
    rng = np.random.default_rng(seed)
    b = NetworkBuilder(rng, (1, 3, 8, 8), 8, "sew_" + function.lower(), t=4)
    stem = b.add(8, k=3, neuron="IF")
    b.add(8, k=3, neuron="RMP")
    b.add(8, k=3, neuron="IF", residual=ResidualConfig(function, 1, policy, stem))
    b.add(10, k=8, pad=0, neuron="IF")
    return b.build()


def avgpool_shift_network(seed=0):
    """Average pooling under the shift policy, so the next layer compensates."""
    rng = np.random.default_rng(seed)
    b = NetworkBuilder(rng, (4, 3, 8, 8), 1, "avgpool_shift")
    b.add(8, k=3, neuron="IF", pool="avg2x2", pool_policy="shift")
    b.add(8, k=3, neuron="RMP", pool="avg2x2", pool_policy="saturate")
    b.add(10, k=2, pad=0, neuron="IF")
    return b.build()


def snn7_network(seed=0):
    """Seven-layer CIFAR-10 style network, T=4, for performance modelling.

    Weights are random and thresholds fixed, so its outputs carry no meaning.
    """
    rng = np.random.default_rng(seed)
    b = NetworkBuilder(rng, (1, 3, 32, 32), 8, "snn7", t=4, simulate=False)
    for c_o, pool in ((64, "none"), (128, "max2x2"), (256, "none"), (256, "max2x2"),
                      (512, "none"), (512, "max2x2")):
        b.add(c_o, k=3, pool=pool, wmax=1, threshold=8)
    b.add(10, k=4, pad=0, wmax=1, threshold=8)
    net = b.build()
    net.ann_flops = sum(2 * l.shape.c_o * l.shape.h_o * l.shape.w_o * l.shape.fan_in
                        for l in net.layers)
    return net


def random_network(rng, max_layers=4, max_hw=12, max_channels=16):
    """A random legal chain, with residual blocks where shapes allow."""
    t = int(rng.choice([1, 2, 4, 8]))
    bits = int(rng.choice([1, 2, 4, 8]))
    c = int(rng.integers(1, max_channels + 1))
    hw = int(rng.integers(4, max_hw + 1)) & ~1
    t_in = 1 if bits == 8 else t
    b = NetworkBuilder(rng, (t_in, c, hw, hw), bits, "random", t=t)
    for _ in range(int(rng.integers(1, max_layers + 1))):
        _, c_i, h, w = b._shape
        neuron = str(rng.choice(NEURONS))
        block_in, block_bits = b.last, b._bits
        residual = None
        keep_shape = rng.random() < 0.5 and block_bits in (1, 2, 4)
        if keep_shape:
            function = "IAND" if block_bits == 1 and rng.random() < 0.4 else "ADD"
            policy = str(rng.choice(["extend4", "saturate2", "shift2"]))
            residual = ResidualConfig(function, block_bits, policy, block_in)
            b.add(c_i, k=int(rng.choice([1, 3])), neuron=neuron, residual=residual)
            continue
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.choice([1, 2]))
        pad = min(int(rng.integers(0, 3)), k - 1)
        if k > h + 2 * pad:
            k, pad = 1, 0
        h_o = (h + 2 * pad - k) // stride + 1
        w_o = (w + 2 * pad - k) // stride + 1
        pool = "none"
        if h_o % 2 == 0 and w_o % 2 == 0 and h_o >= 2 and rng.random() < 0.4:
            pool = str(rng.choice(["max2x2", "avg2x2"]))
        b.add(int(rng.integers(1, max_channels + 1)), k=k, stride=stride, pad=pad,
              neuron=neuron, pool=pool, pool_policy=str(rng.choice(["saturate", "shift"])))
    return b.build(), b._values["input"]


FIXTURES = {
    "demo3": demo_network,
    "sew_add": lambda seed=0: sew_network(seed, "ADD", "saturate2"),
    "sew_iand": lambda seed=0: sew_network(seed, "IAND"),
    "avgpool_shift": avgpool_shift_network,
    "snn7": snn7_network,
}


def fixture_input(net, seed=0):
    rng = np.random.default_rng(seed + 1)
    return random_spikes(rng, net.input_shape, net.input_bits)


def safe_case(rng, **kw):
    """Draw random layer cases until one stays inside every fixed-point range."""
    while True:
        case = random_layer_case(rng, **kw)
        try:
            oracle.run_layer_reference(case.layer, case.spikes, case.weights, case.bias,
                                       case.shortcut, case.iand_negate)
        except PsumOverflowError:
            continue
        return case


__all__ = [
    "CODING_BITS", "FIXTURES", "LayerCase", "NetworkBuilder", "avgpool_shift_network",
    "demo_network", "fixture_input", "random_layer_case", "random_network", "safe_case",
    "sew_network", "snn7_network",
]

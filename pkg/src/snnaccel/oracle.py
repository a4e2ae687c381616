"""Naive reference implementation of every network-level computation.

Nothing here knows about tiling, bit planes or lanes. Convolutions are
plain nested loops over the kernel window, neurons step strictly serially
through time. Everything else in the package is checked against this.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import MERGED_PSUM_LIMIT, check_range
from .errors import BitWidthError, ConfigError, ShapeError
from .ir import SpikeTensor


@dataclass
class NeuronState:
    """Membrane potentials, one per neuron, in merged-psum scale."""

    v: np.ndarray

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape, dtype=np.int64))


def conv_integrate(spikes, weights, shape):
    """Exact integer convolution of every time step, zero padded.

    Returns psums shaped (t, c_o, h_o, w_o) where t is the number of steps
    carried by ``spikes``.
    """
    x = spikes.data if isinstance(spikes, SpikeTensor) else np.asarray(spikes)
    w = weights.data if hasattr(weights, "data") else np.asarray(weights)
    t, c_i, h_i, w_i = x.shape
    if (c_i, h_i, w_i) != (shape.c_i, shape.h_i, shape.w_i):
        raise ShapeError(f"input {x.shape} does not match layer shape {shape}")
    if w.shape != (shape.c_o, shape.c_i, shape.k_h, shape.k_w):
        raise ShapeError(f"weights {w.shape} do not match layer shape {shape}")

    p, st = shape.pad, shape.stride
    xp = np.pad(x.astype(np.int64), ((0, 0), (0, 0), (p, p), (p, p)))
    w = w.astype(np.int64)
    out = np.zeros((t, shape.c_o, shape.h_o, shape.w_o), dtype=np.int64)
    for kh in range(shape.k_h):
        for kw in range(shape.k_w):
            window = xp[:, :, kh:kh + st * (shape.h_o - 1) + 1:st,
                        kw:kw + st * (shape.w_o - 1) + 1:st]
            out += np.einsum("tchw,oc->tohw", window, w[:, :, kh, kw])
    return check_range(out, MERGED_PSUM_LIMIT, "convolution psum")


def neuron_serial(currents, params, state=None):
    """Step neurons one time step at a time.

    ``currents`` has time as its first axis. Returns binary spikes of the
    same shape and the state after the last step.
    """
    currents = np.asarray(currents, dtype=np.int64)
    theta = params.threshold
    v = (np.zeros(currents.shape[1:], dtype=np.int64) if state is None
         else np.array(state.v, dtype=np.int64, copy=True))
    check_range(v, MERGED_PSUM_LIMIT, "membrane potential")
    spikes = np.zeros(currents.shape, dtype=np.uint8)
    for t in range(currents.shape[0]):
        if params.neuron_type == "LIF":
            v = v - (v >> params.leak_shift)
        v = v + currents[t]
        check_range(v, MERGED_PSUM_LIMIT, "membrane potential")
        fire = v >= theta
        spikes[t] = fire
        if params.neuron_type == "RMP":
            v = np.where(fire, v - theta, v)
        else:
            v = np.where(fire, 0, v)
    return spikes, NeuronState(v)


def _pool_view(x):
    t, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"2x2 pooling needs even height and width, got {h}x{w}")
    return x.reshape(t, c, h // 2, 2, w // 2, 2)


def avg_pool_2x2(spikes):
    """Window sums of binary spikes: 0..4, carried as 3-bit spikes.

    The sum is four times the true average; whoever consumes it owes a
    right shift by two in psum scale (see ``rescale_avg_psum``).
    """
    if spikes.bit_width != 1:
        raise BitWidthError("average pooling expects binary spikes")
    sums = _pool_view(spikes.data.astype(np.int64)).sum(axis=(3, 5))
    return SpikeTensor(sums, 3)


def rescale_avg_psum(psum):
    return np.asarray(psum, dtype=np.int64) >> 2


def max_pool_2x2(spikes):
    return SpikeTensor(_pool_view(spikes.data).max(axis=(3, 5)), spikes.bit_width)


def apply_width_policy(values, policy):
    """Confine spike values to 2 bits by saturating at 3 or halving."""
    values = np.asarray(values, dtype=np.int64)
    if policy in ("saturate", "saturate2"):
        return np.minimum(values, 3)
    if policy in ("shift", "shift2"):
        return np.minimum(values >> 1, 3)
    raise ConfigError(f"unknown width policy {policy!r}")


def sew_residual(backbone, shortcut, function, overflow_policy="saturate2",
                 negate="backbone", return_raw=False):
    """Spike-element-wise combination of backbone and shortcut spikes.

    IAND yields ``shortcut AND NOT backbone`` by default; ``negate="shortcut"``
    swaps the roles. ADD sums and then applies ``overflow_policy``.
    """
    if backbone.shape != shortcut.shape:
        raise ShapeError(f"backbone {backbone.shape} and shortcut {shortcut.shape} differ")
    b = backbone.data.astype(np.int64)
    s = shortcut.data.astype(np.int64)
    if function == "IAND":
        if backbone.bit_width != 1 or shortcut.bit_width != 1:
            raise BitWidthError("IAND needs binary backbone and shortcut spikes")
        if negate == "backbone":
            out = s & (1 - b)
        elif negate == "shortcut":
            out = b & (1 - s)
        else:
            raise ConfigError(f"negate must be 'backbone' or 'shortcut', got {negate!r}")
        return SpikeTensor(out, 1)
    if function != "ADD":
        raise ConfigError(f"unknown residual function {function!r}")
    raw = b + s
    if return_raw:
        return raw
    if overflow_policy == "extend4":
        return SpikeTensor(np.minimum(raw, 15), 4)
    return SpikeTensor(apply_width_policy(raw, overflow_policy), 2)


def layer_currents(layer, spikes, weights, bias=None):
    """Per-step synaptic current of a layer: conv, replicate, shift, bias."""
    psum = conv_integrate(spikes, weights, layer.shape)
    if layer.coding == "direct8bit":
        psum = np.repeat(psum[:1], layer.shape.t, axis=0)
    current = psum << layer.post_shift_left
    if bias is not None:
        current = current + np.asarray(bias, dtype=np.int64)[None, :, None, None]
    return check_range(current, MERGED_PSUM_LIMIT, "biased psum")


def direct_encode(image, weights, shape, params, bias=None):
    """First-layer encoding of a static 8-bit image into spikes over T."""
    if image.bit_width != 8 or image.shape[0] != 1:
        raise BitWidthError("direct encoding takes one 8-bit frame")
    psum = conv_integrate(image, weights, shape)
    current = np.repeat(psum, shape.t, axis=0)
    if bias is not None:
        current = current + np.asarray(bias, dtype=np.int64)[None, :, None, None]
    spikes, _ = neuron_serial(current, params)
    return SpikeTensor(spikes, 1)


def pool_with_policy(layer, spikes):
    """Pooling stage of a layer, returning (spikes, pre-policy values or None)."""
    if layer.pool == "max2x2":
        return max_pool_2x2(spikes), None
    if layer.pool == "avg2x2":
        raw = avg_pool_2x2(spikes).data.astype(np.int64)
        return SpikeTensor(apply_width_policy(raw, layer.pool_policy), 2), raw
    return spikes, None


def run_layer_reference(layer, spikes, weights, bias=None, shortcut=None,
                        iand_negate="backbone"):
    """One layer end to end. Returns (output spikes, pre-policy values or None)."""
    current = layer_currents(layer, spikes, weights, bias)
    fired, _ = neuron_serial(current, layer.neuron)
    out, pre_policy = pool_with_policy(layer, SpikeTensor(fired, 1))
    res = layer.residual
    if res is not None:
        if shortcut is None:
            raise ConfigError(f"layer {layer.name} needs shortcut spikes")
        if res.function == "ADD" and res.overflow_policy != "extend4":
            pre_policy = sew_residual(out, shortcut, "ADD", return_raw=True)
        out = sew_residual(out, shortcut, res.function, res.overflow_policy, iand_negate)
    return out, pre_policy


def spike_counts(spikes):
    """Per-channel sum of spike values over time and space."""
    data = spikes.data if isinstance(spikes, SpikeTensor) else np.asarray(spikes)
    return data.astype(np.int64).sum(axis=(0, 2, 3))


def run_reference(net, spikes, capture_pre_policy=False):
    """Execute ``net`` layer by layer.

    Returns ``(outputs, scores)`` where outputs maps layer name to its output
    SpikeTensor. With ``capture_pre_policy`` a third item maps layer names
    to the values seen before their saturate-or-shift policy.
    """
    if not isinstance(spikes, SpikeTensor):
        spikes = SpikeTensor(spikes, net.input_bits)
    tensors = {"input": spikes}
    outputs, pre = {}, {}
    x = spikes
    for layer in net.layers:
        shortcut = tensors[layer.residual.source] if layer.residual else None
        x, raw = run_layer_reference(layer, x, net.weights[layer.name],
                                     net.biases.get(layer.name), shortcut,
                                     net.iand_negate)
        outputs[layer.name] = tensors[layer.name] = x
        if raw is not None:
            pre[layer.name] = raw
    scores = spike_counts(outputs[net.classifier_layer])
    if capture_pre_policy:
        return outputs, scores, pre
    return outputs, scores

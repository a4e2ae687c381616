"""Accelerator-path execution of layers and networks, diffed against the oracle."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import oracle
from .constants import LANES, merge_lane_order
from .decompose import bitplane_decompose
from .engine import EngineGeometry, collect_psums, run_tile
from .errors import ConfigError, DivergenceError, ShapeError
from .ir import SpikeTensor
from .postproc import (
    PsumMerger,
    bias_shift,
    merge_case_for,
    pool_unit,
    residual_unit,
    spike_accumulate,
    two_phase_neurodynamics,
)
from .schedperf import (
    BankLayout,
    estimate,
    estimate_layer,
    im2col_addresses,
    pad_stream,
    plan_loop_nest,
)


@dataclass
class LayerTrace:
    """What the engine actually did for one layer."""

    tiles: int = 0
    accumulate_cycles: int = 0
    neuron_batches: int = 0


def _pad_axis(a, axis, size):
    extra = size - a.shape[axis]
    if extra <= 0:
        return a
    widths = [(0, 0)] * a.ndim
    widths[axis] = (0, extra)
    return np.pad(a, widths)


def run_layer_accel(layer, spikes, weights, par, bias=None, shortcut=None,
                    iand_negate="backbone", trace=None):
    """Run one layer through decompose, engine and post-processing.

    Returns (output spikes, LayerPerf row).
    """
    if par.s != LANES:
        raise ConfigError(f"the merge and neuron units are built for s={LANES}")
    s = layer.shape
    bits = layer.input_bits
    if spikes.bit_width != bits:
        raise ShapeError(f"{layer.name}: got {spikes.bit_width}-bit spikes, "
                         f"layer takes {bits}-bit")
    if spikes.shape != (layer.input_steps, s.c_i, s.h_i, s.w_i):
        raise ShapeError(f"{layer.name}: input {spikes.shape} does not match layer")
    trace = trace if trace is not None else LayerTrace()
    geom = EngineGeometry.from_parallelism(par)
    m, v, n = par.m, par.v, par.n
    nest = plan_loop_nest(layer, par)
    trips, padded = nest.trips, nest.padded

    planes = spikes.data if bits == 1 else bitplane_decompose(spikes)[0].data
    planes = _pad_axis(_pad_axis(planes, 0, padded["t_e"]), 1, padded["c_i"])
    stream = pad_stream(planes, layer, n)
    layout = BankLayout(n, s.stride, stream.aligned_width)
    banks = layout.store(stream.data)  # (n, t_e, c_i, rows * depth)

    w = np.asarray(weights.data, dtype=np.int64)
    w = _pad_axis(_pad_axis(w, 0, padded["c_o"]), 1, padded["c_i"])
    cb = trips["c_i/v"]
    kk = s.k_h * s.k_w
    steps = kk * cb
    b = np.zeros(padded["c_o"], dtype=np.int64)
    if bias is not None:
        b[:s.c_o] = bias

    tb_count = trips["t/s"]
    t_out = s.t
    batches = -(-t_out // LANES)
    case = merge_case_for(bits)
    lane_order = merge_lane_order(bits)
    out = np.zeros((t_out, padded["c_o"], s.h_o, padded["w_o"]), dtype=np.uint8)

    def fire(currents, batch, state, co, y, xb):
        valid = min(LANES, t_out - batch * LANES)
        bias_blk = b[co * m:(co + 1) * m][:, None, None]
        cur = bias_shift(currents, bias_blk, layer.post_shift_left)
        spk, nxt = two_phase_neurodynamics(cur, state, layer.neuron, valid)
        t0 = batch * LANES
        out[t0:t0 + valid, co * m:(co + 1) * m, y, xb * n:(xb + 1) * n] = \
            np.moveaxis(spk[..., :valid], -1, 0)
        trace.neuron_batches += 1
        return nxt

    for co in range(trips["c_o/m"]):
        wblk = w[co * m:(co + 1) * m].reshape(m, cb, v, s.k_h, s.k_w)
        wstream = wblk.transpose(3, 4, 1, 0, 2).reshape(steps, m, v)
        for y in range(s.h_o):
            for xb in range(trips["w_o/n"]):
                gathered = np.empty((kk, n) + banks.shape[1:3], dtype=np.int64)
                for kh in range(s.k_h):
                    for kw in range(s.k_w):
                        fetch = im2col_addresses(layer, par, y, xb, kh, kw, layout)
                        # port j reads bank routing[j]
                        gathered[kh * s.k_w + kw] = banks[fetch.routing, :, :, fetch.addresses]
                blocks = gathered.reshape(kk, n, tb_count, LANES, cb, v)
                blocks = blocks.transpose(2, 0, 4, 5, 1, 3).reshape(tb_count, steps, v, n, LANES)

                merger = PsumMerger(case)
                state = np.zeros((m, n), dtype=np.int64)
                batch = 0
                for tb in range(tb_count):
                    tile, cycles = run_tile(blocks[tb], wstream, geom, expected_steps=steps)
                    trace.tiles += 1
                    trace.accumulate_cycles += cycles.accumulate
                    records = collect_psums(tile)
                    merged = merger.push(records.to_tile(m, n)[..., lane_order])
                    if merged is None:
                        continue
                    if case == "direct8bit":
                        # the static image's current repeats for every time batch
                        for batch in range(batches):
                            state = fire(merged, batch, state, co, y, xb)
                        batch = batches
                    else:
                        state = fire(merged, batch, state, co, y, xb)
                        batch += 1
                leftover = merger.flush()
                if leftover is not None and batch < batches:
                    fire(leftover[0], batch, state, co, y, xb)

    fired = SpikeTensor(out[:, :s.c_o, :, :s.w_o], 1)
    result, _ = pool_unit(fired, layer.pool, layer.pool_policy)
    if layer.residual is not None:
        if shortcut is None:
            raise ConfigError(f"layer {layer.name} needs shortcut spikes")
        result = residual_unit(result, shortcut, layer.residual, iand_negate)
    return result, estimate_layer(layer, par)


@dataclass
class Divergence:
    layer: str
    index: tuple
    expected: int
    actual: int

    def as_error(self):
        return DivergenceError(self.layer, self.index, self.expected, self.actual)


def first_divergence(name, expected, actual):
    if expected.shape != actual.shape:
        return Divergence(name, ("shape",), expected.shape, actual.shape)
    diff = np.argwhere(expected.data != actual.data)
    if diff.size == 0:
        if expected.bit_width != actual.bit_width:
            return Divergence(name, ("bit_width",), expected.bit_width, actual.bit_width)
        return None
    idx = tuple(int(i) for i in diff[0])
    return Divergence(name, idx, int(expected.data[idx]), int(actual.data[idx]))


@dataclass
class NetworkRun:
    scores: np.ndarray
    outputs: dict
    report: object
    divergences: list = field(default_factory=list)
    oracle_scores: Optional[np.ndarray] = None
    traces: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not self.divergences


def run_network_accel(net, spikes, par, compare=True):
    """Run every layer on the accelerator path; optionally diff against the oracle.

    Both paths run their own layer chain, so once a layer diverges later
    layers usually do too; the first entry of ``divergences`` is the one
    to debug.
    """
    if not isinstance(spikes, SpikeTensor):
        spikes = SpikeTensor(spikes, net.input_bits)
    ref_outputs = oracle.run_reference(net, spikes)[0] if compare else {}
    tensors = {"input": spikes}
    outputs, traces, divergences = {}, {}, []
    x = spikes
    for layer in net.layers:
        shortcut = tensors[layer.residual.source] if layer.residual else None
        traces[layer.name] = LayerTrace()
        x, _ = run_layer_accel(layer, x, net.weights[layer.name], par,
                               net.biases.get(layer.name), shortcut, net.iand_negate,
                               traces[layer.name])
        outputs[layer.name] = tensors[layer.name] = x
        if compare:
            d = first_divergence(layer.name, ref_outputs[layer.name], x)
            if d is not None:
                divergences.append(d)
    scores = spike_accumulate(outputs[net.classifier_layer])
    oracle_scores = None
    if compare:
        oracle_scores = oracle.spike_counts(ref_outputs[net.classifier_layer])
    return NetworkRun(scores, outputs, estimate(net, par), divergences, oracle_scores, traces)

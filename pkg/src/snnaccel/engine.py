"""Spike computing engine: gearboxes, output-stationary systolic array, psum collection.

Functional results are exact integers. Cycle counts live in the fast
clock domain; one V x N x S spike block and one M x V weight block enter
the array per fast cycle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import ENGINE_PSUM_LIMIT, check_range
from .errors import ShapeError


@dataclass(frozen=True)
class EngineGeometry:
    sa_h: int
    sa_w: int
    pe_h: int
    pe_w: int

    @classmethod
    def from_parallelism(cls, par):
        return cls(sa_h=par.m // 4, sa_w=par.n, pe_h=par.v // 4, pe_w=par.s)

    @property
    def m(self):
        return 4 * self.sa_h

    @property
    def v(self):
        return 4 * self.pe_h

    @property
    def n(self):
        return self.sa_w

    @property
    def s(self):
        return self.pe_w

    @property
    def dsp_count(self):
        return self.sa_h * self.sa_w * self.pe_h * self.pe_w

    @property
    def ops_per_cycle(self):
        return self.m * self.v * self.n * self.s

    @property
    def pipeline_fill(self):
        # Linear skew through the array and one PE cascade. Timing only.
        return self.sa_h + self.sa_w + self.pe_h


@dataclass
class PsumTile:
    values: np.ndarray  # (m, n, s)
    valid_at_cycle: int = 0

    @classmethod
    def zeros(cls, geom):
        return cls(np.zeros((geom.m, geom.n, geom.s), dtype=np.int64))


def gearbox_in(stream):
    """Slow-to-fast conversion: each slow word of 2k elements becomes two fast words.

    ``stream`` is indexed (slow_cycle, element, ...). The first half of a
    slow word goes out first.
    """
    stream = np.asarray(stream)
    if stream.shape[0] == 0:
        return stream.reshape((0,) + (stream.shape[1] // 2 if stream.ndim > 1 else 0,)
                              + stream.shape[2:])
    width = stream.shape[1]
    if width % 2:
        raise ShapeError(f"slow word width {width} is odd")
    return stream.reshape((stream.shape[0] * 2, width // 2) + stream.shape[2:])


def gearbox_out(stream):
    """Fast-to-slow conversion, the inverse of ``gearbox_in``."""
    stream = np.asarray(stream)
    if stream.shape[0] % 2:
        raise ShapeError("fast stream must hold an even number of words")
    if stream.shape[0] == 0:
        return stream.reshape((0, stream.shape[1] * 2) + stream.shape[2:])
    return stream.reshape((stream.shape[0] // 2, stream.shape[1] * 2) + stream.shape[2:])


class CrossbarCell:
    """One DSP slice used as a 2x4 synaptic crossbar.

    Two binary spikes select rows of a 2x4 weight matrix; the selected rows
    are added to the cascade input, giving four SIMD partial sums.
    """

    def step(self, spikes, weights, cascade_in):
        spikes = np.asarray(spikes, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.int64)
        out = np.asarray(cascade_in, dtype=np.int64) + spikes @ weights
        return check_range(out, ENGINE_PSUM_LIMIT, "DSP SIMD lane")


def systolic_step(spike_block, weight_block, tile):
    """One accumulation step: tile[m, n, s] += sum_v spike[v, n, s] * weight[m, v]."""
    spike_block = np.asarray(spike_block, dtype=np.int64)
    weight_block = np.asarray(weight_block, dtype=np.int64)
    m, n, s = tile.values.shape
    v = weight_block.shape[1]
    if spike_block.shape != (v, n, s) or weight_block.shape != (m, v):
        raise ShapeError(f"blocks {spike_block.shape} x {weight_block.shape} do not fit "
                         f"a {tile.values.shape} tile")
    values = tile.values + np.einsum("vns,mv->mns", spike_block, weight_block)
    check_range(values, ENGINE_PSUM_LIMIT, "engine psum")
    return PsumTile(values, tile.valid_at_cycle + 1)


def structural_step(spike_block, weight_block, tile, geom):
    """``systolic_step`` computed cell by cell through the PE grid.

    Each PE (row i, column j) owns output channels 4i..4i+3 and pixel j. Its
    ``pe_w`` DSP columns handle one time lane each; a column is a cascade of
    ``pe_h`` crossbar cells. The V spike lanes pass a gearbox, so every cell
    sees two spikes in each of the two fast half-steps.
    """
    spike_block = np.asarray(spike_block, dtype=np.int64)
    weight_block = np.asarray(weight_block, dtype=np.int64)
    halves = gearbox_in(spike_block[None])  # (2, v/2, n, s)
    w_halves = gearbox_in(weight_block.T[None])  # (2, v/2, m)
    cell = CrossbarCell()
    values = tile.values.copy()
    for i in range(geom.sa_h):
        for j in range(geom.sa_w):
            for lane in range(geom.pe_w):
                acc = values[4 * i:4 * i + 4, j, lane]
                for phase in range(2):
                    cascade = np.zeros(4, dtype=np.int64)
                    for r in range(geom.pe_h):
                        rows = slice(2 * r, 2 * r + 2)
                        cascade = cell.step(halves[phase, rows, j, lane],
                                            w_halves[phase, rows, 4 * i:4 * i + 4],
                                            cascade)
                    acc = check_range(acc + cascade, ENGINE_PSUM_LIMIT, "engine psum")
                values[4 * i:4 * i + 4, j, lane] = acc
    return PsumTile(values, tile.valid_at_cycle + 1)


@dataclass(frozen=True)
class TileCycles:
    accumulate: int
    fill: int

    @property
    def total(self):
        return self.accumulate + self.fill


def run_tile(spike_stream, weight_stream, geom, expected_steps=None, fill=None):
    """Accumulate a whole output tile.

    ``spike_stream`` is (steps, v, n, s) and ``weight_stream`` (steps, m, v),
    one entry per (k_h, k_w, c_i/v) step. Every intermediate sum is range
    checked, exactly as repeated ``systolic_step`` calls would be.
    """
    spike_stream = np.asarray(spike_stream, dtype=np.int64)
    weight_stream = np.asarray(weight_stream, dtype=np.int64)
    steps = spike_stream.shape[0]
    if weight_stream.shape[0] != steps:
        raise ShapeError(f"{steps} spike blocks but {weight_stream.shape[0]} weight blocks")
    if expected_steps is not None and steps != expected_steps:
        raise ShapeError(f"stream has {steps} blocks, expected {expected_steps}")
    if spike_stream.shape[1:] != (geom.v, geom.n, geom.s):
        raise ShapeError(f"spike block {spike_stream.shape[1:]} does not match geometry")
    if weight_stream.shape[1:] != (geom.m, geom.v):
        raise ShapeError(f"weight block {weight_stream.shape[1:]} does not match geometry")
    partial = np.einsum("kvns,kmv->kmns", spike_stream, weight_stream)
    running = np.cumsum(partial, axis=0)
    check_range(running, ENGINE_PSUM_LIMIT, "engine psum")
    values = running[-1] if steps else np.zeros((geom.m, geom.n, geom.s), np.int64)
    cycles = TileCycles(steps, geom.pipeline_fill if fill is None else fill)
    return PsumTile(values, cycles.total), cycles


@dataclass
class PsumRecords:
    """Psums in emission order: pixel-group major, channels aligned within it."""

    pixel: np.ndarray
    channel: np.ndarray
    values: np.ndarray  # (records, s)

    def to_tile(self, m, n):
        out = np.zeros((m, n, self.values.shape[1]), dtype=np.int64)
        out[self.channel, self.pixel] = self.values
        return out

    def slow_words(self):
        """Records as seen after the 2:1 fast-to-slow crossing."""
        return gearbox_out(self.values)


def collect_psums(tile):
    m, n, s = tile.values.shape
    pixel = np.repeat(np.arange(n), m)
    channel = np.tile(np.arange(m), n)
    values = tile.values.transpose(1, 0, 2).reshape(n * m, s)
    return PsumRecords(pixel, channel, values)

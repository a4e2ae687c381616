"""Loop-nest planning, im2col addressing, bandwidth arbitration and performance reports.

The dataflow visits (C_o/M, H_o, W_o/N, T_e/S, K_h, K_w, C_i/V) with
[M, V, N, S] unrolled in the engine. Cycle figures are in the fast clock
domain unless a name says otherwise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from math import ceil
from typing import Optional

import numpy as np

from .engine import EngineGeometry
from .errors import BankConflictError, ConfigError
from .ir import LayerConfig, NetworkDesc

PERF_SCHEMA = "snnaccel-perf/1"
ZYNQ_BANDWIDTH_CEILING_GBPS = 19.2
APPROXIMATION_NOTE = (
    "Cycle figures come from an analytical model: latency = max(compute, "
    "bandwidth) + pipeline fill per layer. DRAM timing, host and DMA "
    "overheads are not modeled, so measured board latencies and power are "
    "not reproduced; treat latency and achieved GOP/s as estimates."
)


def cdiv(a, b):
    return -(-a // b)


def equivalent_steps(layer):
    """Binary time steps the engine runs for one layer (bits x input steps)."""
    return layer.input_bits * layer.input_steps


@dataclass
class LoopNest:
    loops: list  # [(name, trip count)] outermost first
    unrolled: tuple  # (m, v, n, s)
    padded: dict  # padded extents of c_o, w_o, t_e, c_i
    notes: list = field(default_factory=list)
    membrane_buffer_entries: int = 0

    @property
    def trips(self):
        return dict(self.loops)

    @property
    def tile_count(self):
        t = self.trips
        return t["c_o/m"] * t["h_o"] * t["w_o/n"] * t["t/s"]

    @property
    def steps_per_tile(self):
        t = self.trips
        return t["k_h"] * t["k_w"] * t["c_i/v"]

    @property
    def total_ops(self):
        total = int(np.prod(self.unrolled))
        for _, trip in self.loops:
            total *= trip
        return total

    def iterate(self):
        """Yield folded loop indices in execution order."""
        t = self.trips
        for co in range(t["c_o/m"]):
            for y in range(t["h_o"]):
                for xb in range(t["w_o/n"]):
                    for tb in range(t["t/s"]):
                        for kh in range(t["k_h"]):
                            for kw in range(t["k_w"]):
                                for cb in range(t["c_i/v"]):
                                    yield co, y, xb, tb, kh, kw, cb


def plan_loop_nest(layer, par):
    s = layer.shape
    t_e = equivalent_steps(layer)
    m, v, n, lanes = par.m, par.v, par.n, par.s
    loops = [
        ("c_o/m", cdiv(s.c_o, m)),
        ("h_o", s.h_o),
        ("w_o/n", cdiv(s.w_o, n)),
        ("t/s", cdiv(t_e, lanes)),
        ("k_h", s.k_h),
        ("k_w", s.k_w),
        ("c_i/v", cdiv(s.c_i, v)),
    ]
    trips = dict(loops)
    padded = {
        "c_o": trips["c_o/m"] * m,
        "w_o": trips["w_o/n"] * n,
        "t_e": trips["t/s"] * lanes,
        "c_i": trips["c_i/v"] * v,
    }
    notes = []
    if s.w_o % n:
        notes.append(
            f"w_o={s.w_o} not aligned to n={n}: {padded['w_o'] - s.w_o} padded "
            f"pixels per row, pixel efficiency {s.w_o / padded['w_o']:.3f}")
    if s.c_o % m:
        notes.append(f"c_o={s.c_o} padded to {padded['c_o']}")
    if s.c_i % v:
        notes.append(f"c_i={s.c_i} zero-padded to {padded['c_i']}")
    if t_e % lanes:
        notes.append(f"{t_e} equivalent time steps padded to {padded['t_e']}")
    return LoopNest(loops, (m, v, n, lanes), padded, notes, membrane_buffer_entries=m * n)


# -- im2col ----------------------------------------------------------------

@dataclass(frozen=True)
class BankLayout:
    """Stride-aware column interleave across ``n`` banks.

    Column c = q*stride + r lives in bank q mod n at in-row offset
    (q // n)*stride + r. For stride 1 this is plain ``c mod n``. Any n
    outputs that are adjacent in x read columns with consecutive q, so one
    fetch never hits a bank twice.
    """

    n: int
    stride: int
    width: int

    @property
    def row_depth(self):
        return cdiv(self.width, self.stride * self.n) * self.stride

    def bank(self, col):
        return (np.asarray(col) // self.stride) % self.n

    def address(self, row, col):
        col = np.asarray(col)
        q = col // self.stride
        return np.asarray(row) * self.row_depth + (q // self.n) * self.stride + col % self.stride

    def store(self, data):
        """Scatter (..., rows, width) data into banks shaped (n, ..., rows * row_depth)."""
        rows, width = data.shape[-2:]
        banks = np.zeros((self.n,) + data.shape[:-2] + (rows * self.row_depth,), data.dtype)
        rr, cc = np.meshgrid(np.arange(rows), np.arange(width), indexing="ij")
        b = self.bank(cc).ravel()
        a = self.address(rr, cc).ravel()
        banks[b, ..., a] = np.moveaxis(data.reshape(data.shape[:-2] + (-1,)), -1, 0)
        return banks


@dataclass(frozen=True)
class Im2colFetch:
    rows: np.ndarray
    cols: np.ndarray
    banks: np.ndarray
    addresses: np.ndarray
    routing: np.ndarray  # routing[port] = bank feeding that engine port


def im2col_addresses(layer, par, y, x_block, kh, kw, layout=None):
    """Bank addresses for the n output pixels of one fetch.

    Coordinates are in the padded input frame. Raises BankConflictError if
    two ports would read the same bank.
    """
    s = layer.shape
    n = par.n
    if layout is None:
        layout = BankLayout(n, s.stride, aligned_width(layer, n))
    xs = x_block * n + np.arange(n)
    cols = xs * s.stride + kw
    rows = np.full(n, y * s.stride + kh)
    banks = layout.bank(cols)
    if len(np.unique(banks)) != n:
        raise BankConflictError(f"fetch at y={y} x_block={x_block} kh={kh} kw={kw} "
                                f"hits banks {banks.tolist()}")
    return Im2colFetch(rows, cols, banks, layout.address(rows, cols), banks.copy())


def aligned_width(layer, n):
    """Padded row width after coalescing to whole n-pixel fetch groups."""
    s = layer.shape
    padded = s.w_i + 2 * s.pad
    need = (cdiv(s.w_o, n) * n - 1) * s.stride + s.k_w
    unit = n * s.stride
    return cdiv(max(padded, need), unit) * unit


@dataclass
class PaddedStream:
    data: np.ndarray
    valid_region: tuple  # (row0, row1, col0, col1) of the original pixels
    padded_hw: tuple  # after zero padding, before width alignment
    aligned_width: int

    @property
    def valid_pixels(self):
        r0, r1, c0, c1 = self.valid_region
        return (r1 - r0) * (c1 - c0)

    @property
    def padded_pixels(self):
        return self.padded_hw[0] * self.padded_hw[1]

    def crop(self):
        r0, r1, c0, c1 = self.valid_region
        return self.data[..., r0:r1, c0:c1]


def pad_stream(data, layer, n):
    """Zero pad a (t, c, h, w) tensor and widen rows to whole fetch groups."""
    s = layer.shape
    p = s.pad
    data = np.asarray(data)
    h, w = data.shape[-2:]
    width = aligned_width(layer, n)
    need_h = (s.h_o - 1) * s.stride + s.k_h
    height = max(h + 2 * p, need_h)
    out = np.zeros(data.shape[:-2] + (height, width), dtype=data.dtype)
    out[..., p:p + h, p:p + w] = data
    return PaddedStream(out, (p, p + h, p, p + w), (h + 2 * p, w + 2 * p), width)


# -- bandwidth ---------------------------------------------------------------

@dataclass
class ArbiterPhase:
    cycles: int
    grants: dict  # (port, stream) -> bytes granted per cycle
    last_cycle_grants: Optional[dict] = None


@dataclass
class ArbiterTrace:
    phases: list
    demanded: dict
    granted: dict
    port_busy: list

    @property
    def cycles(self):
        return sum(p.cycles for p in self.phases)


@dataclass(frozen=True)
class ArbiterModel:
    """Two read ports shared by the spike and weight streams.

    Each port has a home stream (port 0: spikes, port 1: weights). A port
    whose home stream is drained serves the other stream, so no port idles
    while any demand is pending. Capacities are bytes per slow cycle.
    """

    capacity: tuple = (16, 16)
    home: tuple = ("spikes", "weights")

    def simulate(self, demands):
        remaining = {k: int(v) for k, v in demands.items()}
        for name in self.home:
            remaining.setdefault(name, 0)
        granted = {k: 0 for k in remaining}
        busy = [0] * len(self.capacity)
        phases = []
        if any(v < 0 for v in remaining.values()):
            raise ValueError("demands must be non-negative")
        if sum(remaining.values()) and not any(self.capacity):
            raise ConfigError("all read ports disabled")
        while any(remaining.values()):
            assign = {}
            for port, cap in enumerate(self.capacity):
                if cap <= 0:
                    continue
                home = self.home[port]
                if remaining.get(home, 0) > 0:
                    assign[port] = home
                else:
                    pending = [k for k, v in remaining.items() if v > 0]
                    assign[port] = max(pending, key=lambda k: remaining[k])
            rate = {}
            for port, stream in assign.items():
                rate[stream] = rate.get(stream, 0) + self.capacity[port]
            full = min(remaining[k] // r for k, r in rate.items())
            if full > 0:
                grants = {(p, st): self.capacity[p] for p, st in assign.items()}
                phases.append(ArbiterPhase(full, grants))
                for (p, st), g in grants.items():
                    remaining[st] -= g * full
                    granted[st] += g * full
                    busy[p] += full
                continue
            # one cycle in which at least one stream finishes with a short grant
            grants = {}
            for p, st in sorted(assign.items()):
                g = min(self.capacity[p], remaining[st])
                if g > 0:
                    grants[(p, st)] = g
                    remaining[st] -= g
                    granted[st] += g
                    busy[p] += 1
            phases.append(ArbiterPhase(1, grants))
        return ArbiterTrace(phases, {k: int(v) for k, v in demands.items()}, granted, busy)


def _bits_bytes(count_bits):
    return cdiv(int(count_bits), 8)


def layer_demands(layer, par, weight_cache_bytes=None):
    """Bytes read over each stream for one layer."""
    s = layer.shape
    nest = plan_loop_nest(layer, par)
    trips = nest.trips
    passes = trips["c_o/m"]
    spikes = passes * _bits_bytes(layer.input_steps * s.c_i * s.h_i * s.w_i * layer.input_bits)
    if layer.residual is not None:
        t, c, h, w = layer.output_shape
        spikes += _bits_bytes(t * c * h * w * layer.residual.shortcut_bit_width)
    block = min(par.m, s.c_o) * s.c_i * s.k_h * s.k_w
    weights = s.c_o * s.c_i * s.k_h * s.k_w
    if weight_cache_bytes is not None and block > weight_cache_bytes:
        weights *= trips["h_o"] * trips["w_o/n"] * trips["t/s"]
    weights += 4 * s.c_o + 4  # bias words and threshold
    return {"spikes": spikes, "weights": weights}


def model_bandwidth(layer, par, arbiter=None, weight_cache_bytes=None):
    """Arbiter trace for one layer; trace.cycles is in slow cycles."""
    arbiter = arbiter or ArbiterModel()
    return arbiter.simulate(layer_demands(layer, par, weight_cache_bytes))


# -- performance report ------------------------------------------------------

@dataclass
class LayerPerf:
    name: str
    tiles: int
    steps_per_tile: int
    compute_cycles: int
    bandwidth_cycles: int
    port_cycles: list
    fill_cycles: int
    modeled_cycles: int
    synaptic_ops: int
    ann_macs: int
    demanded_bytes: dict
    granted_bytes: dict
    bound: str
    notes: list


@dataclass
class PerfReport:
    m: int
    v: int
    n: int
    s: int
    f_fast_mhz: float
    dsp_count: int
    peak_gops: float
    gops_per_dsp: float
    layers: list = field(default_factory=list)
    time_steps: int = 1
    ann_ops: Optional[int] = None
    approximate: bool = True
    note: str = APPROXIMATION_NOTE

    @property
    def total_cycles(self):
        return sum(r.modeled_cycles for r in self.layers)

    @property
    def latency_us(self):
        return self.total_cycles / self.f_fast_mhz

    @property
    def achieved_gops(self):
        """ANN-equivalent throughput: manifest FLOPs (or MACs) times T over latency."""
        if not self.layers or not self.total_cycles:
            return 0.0
        ops = self.ann_ops if self.ann_ops is not None else sum(r.ann_macs for r in self.layers)
        return ops * self.time_steps / (self.latency_us * 1e3)

    @property
    def synaptic_gops(self):
        """Useful synaptic ops per second, in the same unit as the peak."""
        if not self.total_cycles:
            return 0.0
        return sum(r.synaptic_ops for r in self.layers) / (self.latency_us * 1e3)

    @property
    def utilization(self):
        """Useful synaptic ops over engine slots; at most 1 by construction."""
        if not self.total_cycles:
            return 0.0
        useful = sum(r.synaptic_ops for r in self.layers)
        return useful / (self.m * self.v * self.n * self.s * self.total_cycles)

    def to_dict(self):
        return {
            "schema": PERF_SCHEMA,
            "header": {"approximate": self.approximate, "note": self.note},
            "config": {"m": self.m, "v": self.v, "n": self.n, "s": self.s,
                       "f_fast_mhz": self.f_fast_mhz, "f_slow_mhz": self.f_fast_mhz / 2},
            "peak": {"peak_gops": self.peak_gops, "dsp_count": self.dsp_count,
                     "gops_per_dsp": self.gops_per_dsp},
            "layers": [asdict(r) for r in self.layers],
            "totals": {
                "cycles": self.total_cycles,
                "latency_us": self.latency_us,
                "synaptic_gops": self.synaptic_gops,
                "utilization": self.utilization,
                "ann_equivalent_gops": self.achieved_gops,
                "ann_equivalent_gops_per_dsp": self.achieved_gops / self.dsp_count,
            },
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), indent=2, **kw)


def peak_figures(par):
    """(peak GOP/s, DSP count, GOP/s per DSP), exact decimal arithmetic."""
    geom = EngineGeometry.from_parallelism(par)
    peak = Fraction(geom.ops_per_cycle) * Fraction(str(par.f_fast_mhz)) / 1000
    return float(peak), geom.dsp_count, float(peak / geom.dsp_count)


def estimate_layer(layer, par, arbiter=None, weight_cache_bytes=None):
    s = layer.shape
    geom = EngineGeometry.from_parallelism(par)
    nest = plan_loop_nest(layer, par)
    steps = nest.steps_per_tile
    # psums of a tile drain one pixel group per cycle through the clock-crossing FIFO
    interval = max(steps, par.n)
    compute = nest.tile_count * interval
    trace = model_bandwidth(layer, par, arbiter, weight_cache_bytes)
    bandwidth = 2 * trace.cycles
    fill = geom.pipeline_fill
    modeled = max(compute, bandwidth) + fill
    macs = s.c_o * s.h_o * s.w_o * s.c_i * s.k_h * s.k_w
    notes = list(nest.notes)
    if interval > steps:
        notes.append(f"psum collection bound: {steps} accumulation steps < n={par.n}")
    return LayerPerf(
        name=layer.name, tiles=nest.tile_count, steps_per_tile=steps,
        compute_cycles=compute, bandwidth_cycles=bandwidth,
        port_cycles=[2 * b for b in trace.port_busy], fill_cycles=fill,
        modeled_cycles=modeled, synaptic_ops=macs * equivalent_steps(layer),
        ann_macs=macs, demanded_bytes=trace.demanded, granted_bytes=trace.granted,
        bound="compute" if compute >= bandwidth else "bandwidth", notes=notes,
    )


def estimate(target, par, arbiter=None, weight_cache_bytes=None):
    """Performance report for a LayerConfig, a NetworkDesc, or None (peak only)."""
    arbiter = arbiter or ArbiterModel()
    ceiling = sum(arbiter.capacity) * (par.f_fast_mhz / 2) / 1e3
    if ceiling > ZYNQ_BANDWIDTH_CEILING_GBPS:
        raise ConfigError(f"read ports provide {ceiling:.1f} GB/s, above the "
                          f"{ZYNQ_BANDWIDTH_CEILING_GBPS} GB/s device ceiling")
    peak, dsp, per_dsp = peak_figures(par)
    report = PerfReport(par.m, par.v, par.n, par.s, par.f_fast_mhz, dsp, peak, per_dsp)
    if isinstance(target, LayerConfig):
        layers = [target]
        report.time_steps = target.shape.t
    elif isinstance(target, NetworkDesc):
        layers = target.layers
        report.time_steps = target.time_steps
        report.ann_ops = target.ann_flops
    elif target is None:
        layers = []
    else:
        raise TypeError(f"cannot estimate {type(target).__name__}")
    report.layers = [estimate_layer(l, par, arbiter, weight_cache_bytes) for l in layers]
    return report

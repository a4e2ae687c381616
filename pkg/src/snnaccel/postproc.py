"""Post-engine pipeline: psum merge, bias/shift, two-phase neurodynamics,
pooling, residual connection and spike accumulation.

Per-neuron values carry their time lanes on the last axis.
"""

from __future__ import annotations

import numpy as np

from . import oracle
from .constants import (
    ENGINE_PSUM_LIMIT,
    LANES,
    MERGED_PSUM_LIMIT,
    check_range,
)
from .errors import BitWidthError, ConfigError, ShapeError
from .ir import SpikeTensor

MERGE_CASES = {1: "bypass1bit", 2: "merge2bit", 4: "merge4bit", 8: "direct8bit"}

# rounds of LANES engine psums consumed per emitted batch
_ROUNDS = {"bypass1bit": 1, "merge2bit": 2, "merge4bit": 4, "direct8bit": 2}


def merge_case_for(bits):
    try:
        return MERGE_CASES[bits]
    except KeyError:
        raise BitWidthError(f"no merge case for {bits}-bit spikes") from None


def psum_merge(p, case, prev_r0=None):
    """Shift-merge one round of four psums P0..P3 (P0 least significant).

    Returns this round's merged values along the last axis: four for
    ``bypass1bit``, [Q0, Q1] for ``merge2bit``, [R0] for ``merge4bit``. For
    ``direct8bit`` the first round returns [R0] (still pending); passing it
    back as ``prev_r0`` on the next round returns R1 replicated four times.
    """
    p = check_range(np.asarray(p, dtype=np.int64), ENGINE_PSUM_LIMIT, "engine psum")
    if p.shape[-1] != LANES:
        raise ShapeError(f"merge unit takes {LANES} lanes, got {p.shape[-1]}")
    if case == "bypass1bit":
        return p.copy()
    q0 = p[..., 0] + (p[..., 1] << 1)
    q1 = p[..., 2] + (p[..., 3] << 1)
    if case == "merge2bit":
        out = np.stack([q0, q1], axis=-1)
    else:
        r0 = q0 + (q1 << 2)
        if case == "merge4bit" or (case == "direct8bit" and prev_r0 is None):
            out = r0[..., None]
        elif case == "direct8bit":
            r1 = r0 + (np.asarray(prev_r0, dtype=np.int64).reshape(r0.shape) << 4)
            out = np.repeat(r1[..., None], LANES, axis=-1)
        else:
            raise ConfigError(f"unknown merge case {case!r}")
    return check_range(out, MERGED_PSUM_LIMIT, "merged psum")


class PsumMerger:
    """Stateful wrapper that collects rounds until four merged lanes are ready."""

    def __init__(self, case):
        if case not in _ROUNDS:
            raise ConfigError(f"unknown merge case {case!r}")
        self.case = case
        self._pending = []
        self._prev_r0 = None

    @property
    def rounds_per_batch(self):
        return _ROUNDS[self.case]

    def push(self, p):
        if self.case == "direct8bit":
            out = psum_merge(p, self.case, self._prev_r0)
            if self._prev_r0 is None:
                self._prev_r0 = out[..., 0]
                return None
            self._prev_r0 = None
            return out
        self._pending.append(psum_merge(p, self.case))
        merged = np.concatenate(self._pending, axis=-1)
        if merged.shape[-1] < LANES:
            return None
        self._pending = []
        return merged

    def flush(self):
        """Emit a partial batch padded with zeros, as (batch, valid_lanes)."""
        if self.case == "direct8bit":
            if self._prev_r0 is None:
                return None
            # a missing low nibble round is an all-zero round
            zero = np.zeros(self._prev_r0.shape + (LANES,), dtype=np.int64)
            return self.push(zero), LANES
        if not self._pending:
            return None
        merged = np.concatenate(self._pending, axis=-1)
        self._pending = []
        valid = merged.shape[-1]
        pad = np.zeros(merged.shape[:-1] + (LANES - valid,), dtype=np.int64)
        return np.concatenate([merged, pad], axis=-1), valid


def bias_shift(merged, bias, post_shift_left=0):
    """(merged << post_shift_left) + bias, shift first."""
    out = (np.asarray(merged, dtype=np.int64) << post_shift_left) + np.asarray(bias, np.int64)
    return check_range(out, MERGED_PSUM_LIMIT, "biased psum")


def _hard_reset_trajectories(currents, v_pre, params):
    """Phase 1 for IF/LIF: potential at each lane assuming the last reset at r.

    Row r = 0 means "no reset in this batch, start from v_pre"; row r >= 1
    means a reset happened at lane r - 1. Rows are independent of each other.
    """
    s = currents.shape[-1]
    traj = np.zeros(currents.shape[:-1] + (s + 1, s), dtype=np.int64)
    leaky = params.neuron_type == "LIF"
    for r in range(s + 1):
        u = v_pre.copy() if r == 0 else np.zeros_like(v_pre)
        for j in range(r, s):
            if leaky:
                u = u - (u >> params.leak_shift)
            u = u + currents[..., j]
            traj[..., r, j] = u
    return traj


def two_phase_neurodynamics(currents, v_pre, params, valid=None):
    """Generate spikes for a batch of time lanes in two phases.

    Phase 1 precomputes, for every possible reset history, the membrane
    potential at each lane and compares it to the threshold, giving spike
    candidates with no lane-to-lane dependency. Phase 2 walks the lanes and
    picks the candidate that matches the spikes already selected. The result
    equals ``oracle.neuron_serial`` over the same lanes.
    """
    currents = np.asarray(currents, dtype=np.int64)
    v_pre = np.asarray(v_pre, dtype=np.int64)
    s = currents.shape[-1]
    valid = s if valid is None else valid
    if not 0 < valid <= s:
        raise ShapeError(f"valid lanes {valid} outside 1..{s}")
    check_range(v_pre, MERGED_PSUM_LIMIT, "membrane potential")
    theta = params.threshold
    spikes = np.zeros(currents.shape, dtype=np.uint8)

    if params.neuron_type == "RMP":
        # Potential after k earlier spikes is v_pre + prefix - k*theta.
        prefix = v_pre[..., None] + np.cumsum(currents, axis=-1)
        ks = np.arange(s)
        candidates = prefix[..., None, :] - (ks[:, None] * theta) >= theta
        fired = np.zeros(v_pre.shape, dtype=np.int64)
        for j in range(valid):
            v = prefix[..., j] - fired * theta
            check_range(v, MERGED_PSUM_LIMIT, "membrane potential")
            pick = np.take_along_axis(candidates[..., j], fired[..., None], axis=-1)[..., 0]
            spikes[..., j] = pick
            fired = fired + pick
        return spikes, prefix[..., valid - 1] - fired * theta

    traj = _hard_reset_trajectories(currents, v_pre, params)
    candidates = traj >= theta
    last = np.zeros(v_pre.shape, dtype=np.int64)  # row index into traj
    for j in range(valid):
        v = np.take_along_axis(traj[..., j], last[..., None], axis=-1)[..., 0]
        check_range(v, MERGED_PSUM_LIMIT, "membrane potential")
        pick = np.take_along_axis(candidates[..., j], last[..., None], axis=-1)[..., 0]
        spikes[..., j] = pick
        last = np.where(pick, j + 1, last)
    v_end = np.take_along_axis(traj[..., valid - 1], last[..., None], axis=-1)[..., 0]
    v_next = np.where(last == valid, 0, v_end)
    return spikes, v_next


def pool_unit(spikes, mode, policy="saturate"):
    """Pooling stage; returns (spikes, pre-policy window sums or None)."""
    if mode == "none":
        return spikes, None
    if spikes.bit_width != 1:
        raise BitWidthError("pooling unit receives binary spikes from the neurons")
    if mode == "max2x2":
        return oracle.max_pool_2x2(spikes), None
    if mode == "avg2x2":
        sums = oracle.avg_pool_2x2(spikes).data
        return SpikeTensor(oracle.apply_width_policy(sums, policy), 2), sums.astype(np.int64)
    raise ConfigError(f"unknown pool mode {mode!r}")


def residual_unit(backbone, shortcut, cfg, negate="backbone"):
    if backbone.bit_width != 1:
        raise BitWidthError("residual unit needs a binary backbone")
    if shortcut.bit_width != cfg.shortcut_bit_width:
        raise BitWidthError(f"shortcut is {shortcut.bit_width}-bit, "
                            f"configured {cfg.shortcut_bit_width}-bit")
    return oracle.sew_residual(backbone, shortcut, cfg.function, cfg.overflow_policy, negate)


def spike_accumulate(spikes):
    """Stream spikes step by step into one counter per channel."""
    data = spikes.data if isinstance(spikes, SpikeTensor) else np.asarray(spikes)
    counts = np.zeros(data.shape[1], dtype=np.int64)
    for frame in data:
        counts += frame.reshape(frame.shape[0], -1).sum(axis=1, dtype=np.int64)
    return counts

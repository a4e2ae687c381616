"""Bit-plane decomposition of multi-bit spikes and the saturate-or-shift policy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import MERGED_PSUM_LIMIT, check_range, plane_shifts
from .errors import BitWidthError, ShapeError
from .ir import SpikeTensor

DEFAULT_CUTOFF = 0.01


@dataclass(frozen=True)
class BitPlanePlan:
    b: int
    t: int
    plane_weights: tuple = field(default=())

    def __post_init__(self):
        if not self.plane_weights:
            object.__setattr__(self, "plane_weights", tuple(plane_shifts(self.b) * self.t))
        if len(self.plane_weights) != self.t_e:
            raise ShapeError("plane_weights must have one entry per equivalent step")

    @property
    def t_e(self):
        return self.b * self.t


def bitplane_decompose(x):
    """Split B-bit spikes over T steps into binary spikes over B*T steps.

    Planes of one source step are consecutive, most significant first.
    """
    if not isinstance(x, SpikeTensor):
        raise TypeError("bitplane_decompose expects a SpikeTensor")
    b = x.bit_width
    if b not in (1, 2, 4, 8):
        raise BitWidthError(f"cannot decompose {b}-bit spikes")
    t = x.shape[0]
    shifts = np.asarray(plane_shifts(b), dtype=np.uint8)
    planes = (x.data[:, None] >> shifts[None, :, None, None, None]) & 1
    planes = planes.reshape((t * b,) + x.shape[1:])
    return SpikeTensor(planes, 1), BitPlanePlan(b, t)


def reconstruct(psums, plan):
    """Shift-merge equivalent-step psums back into ``plan.t`` real steps."""
    psums = np.asarray(psums, dtype=np.int64)
    if psums.shape[0] != plan.t_e:
        raise ShapeError(f"expected {plan.t_e} equivalent steps, got {psums.shape[0]}")
    shifts = np.asarray(plan.plane_weights, dtype=np.int64)
    scaled = psums << shifts.reshape((-1,) + (1,) * (psums.ndim - 1))
    out = scaled.reshape((plan.t, plan.b) + psums.shape[1:]).sum(axis=1)
    return check_range(out, MERGED_PSUM_LIMIT, "reconstructed psum")


@dataclass(frozen=True)
class BitWidthPolicy:
    """Offline decision on how to squeeze 3-bit spike values into 2 bits."""

    mode: str
    threshold_exceeded_count: int = 0
    shifted_mass: int = 0
    total: int = 0
    cutoff: float = DEFAULT_CUTOFF

    @property
    def exceeded_fraction(self):
        return self.threshold_exceeded_count / self.total if self.total else 0.0


def calibrate_policy(samples, cutoff=DEFAULT_CUTOFF):
    """Pick ``saturate`` unless more than ``cutoff`` of the values exceed 3.

    ``samples`` is an iterable of arrays of pre-policy spike values. A
    fraction exactly equal to the cutoff still saturates.
    """
    if isinstance(samples, np.ndarray):
        samples = [samples]
    arrays = [np.asarray(s, dtype=np.int64).ravel() for s in samples]
    total = sum(a.size for a in arrays)
    if total == 0:
        raise ValueError("calibration needs at least one sample value")
    values = np.concatenate(arrays)
    exceeded = int((values > 3).sum())
    mode = "shift" if exceeded > cutoff * total else "saturate"
    return BitWidthPolicy(
        mode=mode,
        threshold_exceeded_count=exceeded,
        shifted_mass=int((values & 1).sum()),
        total=total,
        cutoff=cutoff,
    )


def policy_targets(layer):
    """Name of the field a calibrated policy writes to, or None."""
    if layer.residual is not None:
        res = layer.residual
        if res.function == "ADD" and res.overflow_policy != "extend4":
            return "residual"
        return None
    return "pool_policy" if layer.pool == "avg2x2" else None


def calibrate_network(net, samples, cutoff=DEFAULT_CUTOFF):
    """Choose saturate or shift for every policy-bearing layer of ``net``.

    Layers are calibrated in order on the oracle path: a layer's decision
    fixes the ``post_shift_left`` of the next layer before that layer's
    own statistics are gathered. The outcome does not depend on the
    policies already stored in ``net``, so calibrating twice is a no-op.
    Returns ``(calibrated net, {layer name: BitWidthPolicy})``.
    """
    from dataclasses import replace

    from .ir import with_layer
    from .oracle import run_layer_reference

    samples = [s if isinstance(s, SpikeTensor) else SpikeTensor(s, net.input_bits)
               for s in samples]
    if not samples:
        raise ValueError("calibration needs at least one sample")
    tensors = [{"input": s} for s in samples]
    current = [s for s in samples]
    policies = {}
    for i, layer in enumerate(net.layers):
        target = policy_targets(layer)
        args = (net.weights[layer.name], net.biases.get(layer.name))
        if target is not None:
            raw = []
            for k, x in enumerate(current):
                sc = tensors[k][layer.residual.source] if layer.residual else None
                raw.append(run_layer_reference(layer, x, *args, sc, net.iand_negate)[1])
            policy = calibrate_policy(raw, cutoff)
            policies[layer.name] = policy
            if target == "residual":
                mode = "shift2" if policy.mode == "shift" else "saturate2"
                layer = replace(layer, residual=replace(layer.residual, overflow_policy=mode))
            else:
                layer = replace(layer, pool_policy=policy.mode)
            net = with_layer(net, i, **{f: getattr(layer, f) for f in ("residual", "pool_policy")})
            if i + 1 < len(net.layers):
                net = with_layer(net, i + 1, post_shift_left=int(layer.output_shifted))
        for k, x in enumerate(current):
            sc = tensors[k][layer.residual.source] if layer.residual else None
            current[k] = run_layer_reference(layer, x, *args, sc, net.iand_negate)[0]
            tensors[k][layer.name] = current[k]
    return net, policies

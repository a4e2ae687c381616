"""Bit widths, plane ordering and fixed-point ranges used by every stage."""

import numpy as np

# Signed range limits: a value v is legal iff |v| < LIMIT.
ENGINE_PSUM_BITS = 12
MERGED_PSUM_BITS = 18
ENGINE_PSUM_LIMIT = 1 << (ENGINE_PSUM_BITS - 1)
MERGED_PSUM_LIMIT = 1 << (MERGED_PSUM_BITS - 1)

# Time-step lanes per neurodynamics batch; the merge unit is wired for it.
LANES = 4

CODING_BITS = {
    "binary_spike": 1,
    "spike2bit": 2,
    "spike4bit": 4,
    "direct8bit": 8,
}
BITS_CODING = {b: c for c, b in CODING_BITS.items()}

SHORTCUT_BITS = (1, 2, 4)

# Bit planes leave `decompose` most-significant first inside each source
# time step. The merge formulas index lanes least-significant first, so
# the merge unit reverses each plane group on entry (see merge_lane_order).
PLANE_ORDER = "msb_first"


def plane_shifts(bits):
    """Left-shift amount of each plane of one source step, in stream order."""
    return list(range(bits - 1, -1, -1))


def merge_lane_order(bits):
    """Permutation taking one round of engine lanes to merge-unit lanes.

    A round carries ``LANES`` equivalent steps. For 2- and 4-bit spikes
    each group of ``min(bits, LANES)`` lanes holds one source step,
    MSB plane first; the merge unit wants the LSB plane in lane 0 of the
    group. Binary spikes need no reordering.
    """
    group = min(bits, LANES)
    order = []
    for base in range(0, LANES, group):
        order.extend(range(base + group - 1, base - 1, -1))
    return np.asarray(order)


def check_range(values, limit, what):
    from .errors import PsumOverflowError

    arr = np.asarray(values)
    if arr.size and int(np.abs(arr).max()) >= limit:
        worst = int(arr.flat[np.abs(arr).argmax()])
        raise PsumOverflowError(
            f"{what} value {worst} outside signed range |v| < {limit}"
        )
    return values

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scalar_neuron
from snnaccel import oracle
from snnaccel.constants import merge_lane_order
from snnaccel.decompose import bitplane_decompose, reconstruct
from snnaccel.errors import BitWidthError, PsumOverflowError, ShapeError
from snnaccel.ir import NeuronParams, ResidualConfig, SpikeTensor
from snnaccel.postproc import (
    PsumMerger,
    bias_shift,
    pool_unit,
    psum_merge,
    residual_unit,
    spike_accumulate,
    two_phase_neurodynamics,
)


def test_merge_bypass():
    assert psum_merge([5, -3, 0, 7], "bypass1bit").tolist() == [5, -3, 0, 7]


def test_merge2bit():
    assert psum_merge([1, 1, 0, 1], "merge2bit").tolist() == [3, 2]


def test_merge4bit_nine():
    planes, plan = bitplane_decompose(SpikeTensor(np.full((1, 1, 1, 1), 9), 4))
    p = planes.data.ravel()
    assert p.tolist() == [1, 0, 0, 1]
    r0 = psum_merge(p[merge_lane_order(4)], "merge4bit")
    assert r0.tolist() == [9] == reconstruct(p, plan).tolist()


def test_direct8bit_replicates():
    hi, lo = [1, 0, 1, 1], [0, 1, 1, 0]  # 0b1101, 0b0110 least significant lane first
    pending = psum_merge(hi, "direct8bit")
    assert pending.tolist() == [13]
    assert psum_merge(lo, "direct8bit", pending).tolist() == [13 * 16 + 6] * 4


def test_merge_input_range():
    with pytest.raises(PsumOverflowError):
        psum_merge([2048, 0, 0, 0], "merge2bit")
    with pytest.raises(ShapeError):
        psum_merge([1, 2, 3], "merge2bit")


@pytest.mark.parametrize("bits", [1, 2, 4, 8])
def test_merger_matches_reconstruct(rng, bits):
    t = 1 if bits == 8 else 4
    psums = rng.integers(-2047, 2048, size=(bits * t, 3, 5))
    if bits == 8:
        psums = rng.integers(-200, 200, size=(8, 3, 5))
    plan = bitplane_decompose(SpikeTensor(np.zeros((t, 1, 1, 1)), bits))[1]
    expected = reconstruct(psums, plan)
    merger = PsumMerger({1: "bypass1bit", 2: "merge2bit", 4: "merge4bit",
                         8: "direct8bit"}[bits])
    order = merge_lane_order(bits)
    batches = []
    for r in range(0, bits * t, 4):
        out = merger.push(np.moveaxis(psums[r:r + 4], 0, -1)[..., order])
        if out is not None:
            batches.append(out)
    merged = np.concatenate(batches, axis=-1)
    if bits == 8:
        assert np.array_equal(merged, np.repeat(expected[0][..., None], 4, axis=-1))
    else:
        assert np.array_equal(np.moveaxis(merged, -1, 0), expected)


def test_merger_flush_partial():
    m = PsumMerger("merge4bit")
    assert m.push(np.array([1, 0, 0, 0])) is None
    batch, valid = m.flush()
    assert valid == 1 and batch.tolist() == [1, 0, 0, 0]
    assert m.flush() is None


@pytest.mark.parametrize("case, bits", [("bypass1bit", 1), ("merge2bit", 2),
                                         ("merge4bit", 4)])
@pytest.mark.parametrize("extreme", [2047, -2047])
def test_merge_static_bound(case, bits, extreme):
    merged = psum_merge(np.full(4, extreme), case)
    assert abs(merged).max() == (2047 * ((1 << bits) - 1) if bits > 1 else 2047)
    for bias in (-(2**15) + 1, 2**15 - 1):
        assert abs(bias_shift(merged, bias)).max() < 2**17


def test_direct8bit_full_range_overflows():
    # 2047 * 255 does not fit 18 bits; 8-bit layers rely on the range check
    top = np.full(4, 2047)
    with pytest.raises(PsumOverflowError):
        psum_merge(top, "direct8bit", psum_merge(top, "direct8bit"))
    ok = np.full(4, 2**17 // 256)
    assert psum_merge(ok, "direct8bit", psum_merge(ok, "direct8bit"))[0] == 512 * 255


def test_bias_shift():
    assert bias_shift(np.array([5, -2]), 0, 0).tolist() == [5, -2]
    assert bias_shift(np.array([3]), -2, 1).tolist() == [4]


@given(st.integers(-(2**15), 2**15), st.integers(-(2**14), 2**14), st.integers(0, 1))
def test_bias_shift_formula(m, b, s):
    assert bias_shift(np.array([m]), b, s).item() == m * 2**s + b


def _two_phase(currents, kind, theta, v_pre=0, leak=2):
    spikes, v = two_phase_neurodynamics(np.array([currents]), np.array([v_pre]),
                                        NeuronParams(kind, theta, leak))
    return spikes[0].tolist(), int(v[0])


def test_two_phase_if_example():
    # hard reset: fires at step 3, then integrates 4 from zero
    assert _two_phase([4, 4, 4, 4], "IF", 10) == ([0, 0, 1, 0], 4)


def test_two_phase_rmp_example():
    assert _two_phase([4, 4, 4, 4], "RMP", 10) == ([0, 0, 1, 0], 6)


def test_two_phase_zero_currents():
    assert _two_phase([0] * 4, "IF", 5) == ([0] * 4, 0)
    assert _two_phase([0] * 4, "RMP", 5) == ([0] * 4, 0)
    spikes, v = _two_phase([0] * 4, "LIF", 50, v_pre=40, leak=1)
    assert spikes == [0] * 4 and 0 <= v < 40


@pytest.mark.parametrize("kind", ["IF", "LIF", "RMP"])
@pytest.mark.parametrize("theta", [1, 5, 10])
def test_two_phase_matches_scalar_sample(kind, theta):
    grid = np.array(list(itertools.product(range(-2, 13, 3), repeat=4)))
    v_pre = np.arange(-4, 13)
    cur = np.repeat(grid, len(v_pre), axis=0)
    vp = np.tile(v_pre, len(grid))
    spikes, v_next = two_phase_neurodynamics(cur, vp, NeuronParams(kind, theta, 2))
    for i in range(0, len(cur), 37):
        ref = scalar_neuron(cur[i], kind, theta, 2, int(vp[i]))
        assert (spikes[i].tolist(), int(v_next[i])) == ref


def test_two_phase_valid_lanes():
    spikes, v = two_phase_neurodynamics(np.array([[6, 6, 99, 99]]), np.array([0]),
                                        NeuronParams("RMP", 10), valid=2)
    assert spikes[0].tolist() == [0, 1, 0, 0] and v[0] == 2


def test_pool_unit():
    x = SpikeTensor(np.ones((1, 1, 2, 2)), 1)
    assert pool_unit(x, "none")[0] is x
    sat, pre = pool_unit(x, "avg2x2", "saturate")
    assert sat.data.item() == 3 and pre.item() == 4
    assert pool_unit(x, "avg2x2", "shift")[0].data.item() == 2
    # shift then compensating left shift restores the window sum
    assert bias_shift(pool_unit(x, "avg2x2", "shift")[0].data, 0, 1).item() == 4
    with pytest.raises(BitWidthError):
        pool_unit(SpikeTensor(np.ones((1, 1, 2, 2)), 2), "avg2x2")


def test_residual_unit():
    one = SpikeTensor(np.ones((1, 1, 1, 1)), 1)
    two = SpikeTensor(np.full((1, 1, 1, 1), 3), 2)
    assert residual_unit(one, one, ResidualConfig("ADD", 1, "extend4")).data.item() == 2
    assert residual_unit(one, two, ResidualConfig("ADD", 2, "saturate2")).data.item() == 3
    assert residual_unit(one, one, ResidualConfig("IAND", 1)).data.item() == 0
    with pytest.raises(BitWidthError):
        residual_unit(two, one, ResidualConfig("ADD", 1))
    with pytest.raises(BitWidthError):
        residual_unit(one, two, ResidualConfig("ADD", 1))


def test_spike_accumulate(rng):
    assert spike_accumulate(SpikeTensor(np.zeros((4, 3, 2, 2)), 1)).tolist() == [0, 0, 0]
    assert spike_accumulate(SpikeTensor(np.ones((4, 2, 1, 1)), 1)).tolist() == [4, 4]
    x = rng.integers(0, 4, size=(5, 6, 3, 3))
    counts = [sum(int(x[t, c, i, j]) for t in range(5) for i in range(3) for j in range(3))
              for c in range(6)]
    assert spike_accumulate(SpikeTensor(x, 2)).tolist() == counts


@settings(max_examples=30)
@given(seed=st.integers(0, 2**31 - 1), kind=st.sampled_from(["IF", "LIF", "RMP"]))
def test_chunked_two_phase_over_eight_steps(seed, kind):
    rng = np.random.default_rng(seed)
    currents = rng.integers(-5, 20, size=(16, 8))
    params = NeuronParams(kind, int(rng.integers(1, 20)), 1)
    serial, state = oracle.neuron_serial(currents.T[:, :, None, None], params)
    v = np.zeros(16, dtype=np.int64)
    parts = []
    for b in range(2):
        s, v = two_phase_neurodynamics(currents[:, 4 * b:4 * b + 4], v, params)
        parts.append(s)
    assert np.array_equal(np.concatenate(parts, axis=1), serial[:, :, 0, 0].T)
    assert np.array_equal(v, state.v[:, 0, 0])

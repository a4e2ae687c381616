import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scalar_conv, scalar_neuron
from snnaccel import fixtures, oracle
from snnaccel.errors import BitWidthError, PsumOverflowError, ShapeError
from snnaccel.ir import LayerConfig, LayerShape, NeuronParams, SpikeTensor, WeightTensor

# 1-bit 2x4x4 input and 2x2x3x3 kernel (seed 2024), pad 1; psums computed
# once with the nested-loop scalar convolution in conftest and frozen here.
FROZEN_X = [[[[0, 1, 1, 0], [0, 1, 1, 1], [1, 1, 0, 0], [1, 0, 1, 1]],
             [[0, 0, 0, 1], [1, 1, 1, 0], [1, 1, 0, 1], [1, 1, 1, 1]]]]
FROZEN_W = [[[[-1, 4, 1], [-2, -1, 2], [-1, 0, 0]], [[0, 0, 4], [-2, 4, -3], [-4, -2, -2]]],
            [[[1, -3, -3], [4, 3, 0], [4, -1, -4]], [[3, -4, -1], [0, 2, -3], [-2, -4, -4]]]]
FROZEN_PSUM = [[[[-2, -7, -13, -3], [0, -2, 1, -8], [3, -1, -11, 0], [9, 2, 3, -1]],
                [[-12, -12, -3, 7], [-17, -7, 4, 0], [-15, -9, -20, 0], [-9, 0, 5, 5]]]]


def _spikes(values, bits=1):
    return SpikeTensor(np.asarray(values), bits)


def test_conv_zero_input():
    shape = LayerShape.conv(2, 3, 5, 5, 4, 3, 1, 1)
    w = WeightTensor(np.ones((4, 3, 3, 3)))
    assert not oracle.conv_integrate(_spikes(np.zeros((2, 3, 5, 5))), w, shape).any()


def test_conv_identity():
    shape = LayerShape.conv(1, 1, 1, 1, 1, 1)
    out = oracle.conv_integrate(_spikes([[[[1]]]]), WeightTensor([[[[-7]]]]), shape)
    assert out.tolist() == [[[[-7]]]]


def test_conv_frozen_fixture():
    shape = LayerShape.conv(1, 2, 4, 4, 2, 3, 1, 1)
    out = oracle.conv_integrate(_spikes(FROZEN_X), WeightTensor(FROZEN_W), shape)
    assert out.tolist() == FROZEN_PSUM


@settings(max_examples=40)
@given(seed=st.integers(0, 2**31 - 1), k=st.sampled_from([1, 2, 3]),
       stride=st.sampled_from([1, 2]), pad=st.integers(0, 2), bits=st.sampled_from([1, 2, 4, 8]))
def test_conv_matches_scalar_loops(seed, k, stride, pad, bits):
    rng = np.random.default_rng(seed)
    h = int(rng.integers(max(1, k - 2 * pad), 7))
    x = rng.integers(0, 1 << bits, size=(2, 2, h, h))
    w = rng.integers(-128, 128, size=(3, 2, k, k))
    shape = LayerShape.conv(2, 2, h, h, 3, k, stride, pad)
    out = oracle.conv_integrate(_spikes(x, bits), WeightTensor(w), shape)
    assert np.array_equal(out, scalar_conv(x, w, stride, pad))


@settings(max_examples=40)
@given(seed=st.integers(0, 2**31 - 1))
def test_conv_is_linear_in_weights(seed):
    rng = np.random.default_rng(seed)
    x = _spikes(rng.integers(0, 2, size=(2, 3, 5, 5)))
    w1 = rng.integers(-64, 64, size=(2, 3, 3, 3))
    w2 = rng.integers(-64, 64, size=(2, 3, 3, 3))
    shape = LayerShape.conv(2, 3, 5, 5, 2, 3, 1, 1)
    conv = lambda w: oracle.conv_integrate(x, WeightTensor(w), shape)
    assert np.array_equal(conv(w1 + w2), conv(w1) + conv(w2))


def test_conv_overflow_is_an_error():
    shape = LayerShape.conv(1, 64, 3, 3, 1, 3, 1, 1)
    x = _spikes(np.full((1, 64, 3, 3), 255), 8)
    with pytest.raises(PsumOverflowError):
        oracle.conv_integrate(x, WeightTensor(np.full((1, 64, 3, 3), 127)), shape)


def _serial(currents, kind, theta, leak=0, v=0):
    spikes, state = oracle.neuron_serial(
        np.asarray(currents).reshape(-1, 1, 1, 1), NeuronParams(kind, theta, leak),
        oracle.NeuronState(np.full((1, 1, 1), v)))
    return spikes.ravel().tolist(), int(state.v.ravel()[0])


def test_if_hard_reset_trace():
    # fires on the third step and resets to zero
    assert _serial([4, 4, 4], "IF", 10) == ([0, 0, 1], 0)


def test_rmp_keeps_residual_potential():
    assert _serial([4, 4, 4], "RMP", 10) == ([0, 0, 1], 2)


def test_always_fire():
    assert _serial([1, 3, 7, 1], "IF", 1)[0] == [1, 1, 1, 1]


def test_rmp_subtracts_once_per_step():
    assert _serial([25, 0], "RMP", 10) == ([1, 1], 5)


def test_lif_leak():
    # v: 0 -> 8; 8 - 2 + 8 = 14; 14 - 3 + 0 = 11 (no fire at 20)
    assert _serial([8, 8, 0], "LIF", 20, leak=2) == ([0, 0, 0], 11)


@settings(max_examples=60)
@given(currents=st.lists(st.integers(-20, 40), min_size=1, max_size=8),
       kind=st.sampled_from(["IF", "LIF", "RMP"]), theta=st.integers(1, 30),
       leak=st.integers(1, 4), v0=st.integers(-10, 30))
def test_serial_matches_scalar_trace(currents, kind, theta, leak, v0):
    assert _serial(currents, kind, theta, leak, v0) == scalar_neuron(currents, kind, theta, leak, v0)


@pytest.mark.parametrize("kind", ["IF", "LIF", "RMP"])
def test_split_at_every_position(rng, kind):
    currents = rng.integers(-6, 15, size=(8, 3, 4, 4))
    params = NeuronParams(kind, 9, 2)
    whole, end = oracle.neuron_serial(currents, params)
    for cut in range(9):
        a, state = oracle.neuron_serial(currents[:cut], params)
        b, state = oracle.neuron_serial(currents[cut:], params, state)
        assert np.array_equal(np.concatenate([a, b]), whole)
        assert np.array_equal(state.v, end.v)


def test_avg_pool_examples():
    x = np.zeros((1, 1, 2, 6), dtype=np.uint8)
    x[0, 0, :, 0:2] = [[1, 1], [1, 0]]
    x[0, 0, :, 4:6] = 1
    pooled = oracle.avg_pool_2x2(_spikes(x))
    assert pooled.data.ravel().tolist() == [3, 0, 4]
    with pytest.raises(BitWidthError):
        oracle.avg_pool_2x2(_spikes(x * 2, 2))


def test_avg_pool_rescale_is_exact_on_multiples_of_four(rng):
    x = np.repeat(np.repeat(rng.integers(0, 2, size=(2, 3, 4, 4)), 2, axis=2), 2, axis=3)
    sums = oracle.avg_pool_2x2(_spikes(x)).data
    assert set(np.unique(sums)) <= {0, 4}
    assert np.array_equal(oracle.rescale_avg_psum(sums) * 4, sums)
    assert np.array_equal(oracle.rescale_avg_psum(sums), sums // 4)


def test_max_pool_examples():
    assert not oracle.max_pool_2x2(_spikes(np.zeros((1, 1, 2, 2)))).data.any()
    assert oracle.max_pool_2x2(_spikes([[[[0, 1], [0, 0]]]])).data.item() == 1
    out = oracle.max_pool_2x2(_spikes([[[[2, 3], [1, 0]]]], 2))
    assert out.data.item() == 3 and out.bit_width == 2
    with pytest.raises(ShapeError):
        oracle.max_pool_2x2(_spikes(np.zeros((1, 1, 3, 2))))


def _one(v, bits=1):
    return _spikes(np.full((1, 1, 1, 1), v), bits)


def test_sew_add():
    out = oracle.sew_residual(_one(1), _one(1), "ADD", "extend4")
    assert out.data.item() == 2 and out.bit_width == 4
    assert oracle.sew_residual(_one(1), _one(3, 2), "ADD", "saturate2").data.item() == 3
    assert oracle.sew_residual(_one(1), _one(3, 2), "ADD", "shift2").data.item() == 2
    assert oracle.sew_residual(_one(1), _one(15, 4), "ADD", "extend4").data.item() == 15


def test_sew_iand_truth_table():
    table = {(b, s): oracle.sew_residual(_one(b), _one(s), "IAND").data.item()
             for b, s in itertools.product([0, 1], repeat=2)}
    assert table == {(0, 0): 0, (0, 1): 1, (1, 0): 0, (1, 1): 0}
    swapped = oracle.sew_residual(_one(1), _one(0), "IAND", negate="shortcut")
    assert swapped.data.item() == 1
    with pytest.raises(BitWidthError):
        oracle.sew_residual(_one(1), _one(2, 2), "IAND")


@pytest.mark.parametrize("n", range(1, 16))
def test_add_chain_growth(rng, n):
    x = _spikes(rng.integers(0, 2, size=(2, 2, 3, 3)))
    for _ in range(n):
        x = oracle.sew_residual(_spikes(rng.integers(0, 2, size=x.shape)), x, "ADD",
                                "extend4")
        x = _spikes(x.data, 4)
    assert x.data.max() <= n + 1


def test_direct_encode_examples():
    shape = LayerShape.conv(2, 1, 1, 1, 1, 1)
    out = oracle.direct_encode(_one(255, 8), WeightTensor([[[[1]]]]), shape,
                               NeuronParams("IF", 256))
    assert out.data.ravel().tolist() == [0, 1]
    shape = LayerShape.conv(3, 1, 1, 1, 1, 1)
    out = oracle.direct_encode(_one(2, 8), WeightTensor([[[[3]]]]), shape,
                               NeuronParams("RMP", 5))
    assert out.data.ravel().tolist() == [1, 1, 1]
    zero = oracle.direct_encode(_spikes(np.zeros((1, 1, 2, 2)), 8),
                                WeightTensor(np.ones((2, 1, 1, 1))),
                                LayerShape.conv(4, 1, 2, 2, 2, 1), NeuronParams("IF", 1))
    assert not zero.data.any()


def test_single_layer_network_is_conv_then_neuron(rng):
    net = fixtures.demo_network(3)
    net.layers[:] = net.layers[:1]
    layer = net.layers[0]
    x = fixtures.fixture_input(net)
    psum = oracle.conv_integrate(x, net.weights[layer.name], layer.shape)
    current = psum + net.biases[layer.name][None, :, None, None]
    expected, _ = oracle.neuron_serial(current, layer.neuron)
    outputs, scores = oracle.run_reference(net, x)
    assert np.array_equal(outputs[layer.name].data, expected)
    assert scores.tolist() == expected.sum(axis=(0, 2, 3)).tolist()


def test_two_layer_chain_is_manual_composition():
    net = fixtures.demo_network(5)
    x = fixtures.fixture_input(net)
    a, _ = oracle.run_layer_reference(net.layers[0], x, net.weights["l0"], net.biases["l0"])
    b, _ = oracle.run_layer_reference(net.layers[1], a, net.weights["l1"], net.biases["l1"])
    outputs, _ = oracle.run_reference(net, x)
    assert outputs["l1"] == b


def test_fixture_network_frozen_scores():
    net = fixtures.demo_network(0)
    _, scores = oracle.run_reference(net, fixtures.fixture_input(net))
    assert scores.tolist() == [3, 0, 0, 0, 0, 3, 0, 3, 1, 4]


def test_direct_layer_currents_replicate_and_bias():
    shape = LayerShape.conv(3, 1, 1, 1, 1, 1)
    layer = LayerConfig("d", shape, "direct8bit", NeuronParams("IF", 100))
    cur = oracle.layer_currents(layer, _one(7, 8), WeightTensor([[[[2]]]]), np.array([-1]))
    assert cur.ravel().tolist() == [13, 13, 13]

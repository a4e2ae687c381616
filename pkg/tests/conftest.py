import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def scalar_conv(x, w, stride, pad):
    """Nested-loop convolution over plain Python ints, (t, c, h, w) layout."""
    x = np.asarray(x).tolist()
    w = np.asarray(w).tolist()
    t_n, c_i, h_i, w_i = len(x), len(x[0]), len(x[0][0]), len(x[0][0][0])
    c_o, k = len(w), len(w[0][0])
    h_o = (h_i + 2 * pad - k) // stride + 1
    w_o = (w_i + 2 * pad - k) // stride + 1
    out = np.zeros((t_n, c_o, h_o, w_o), dtype=np.int64)
    for t in range(t_n):
        for o in range(c_o):
            for y in range(h_o):
                for xo in range(w_o):
                    acc = 0
                    for c in range(c_i):
                        for kh in range(k):
                            for kw in range(k):
                                yy = y * stride + kh - pad
                                xx = xo * stride + kw - pad
                                if 0 <= yy < h_i and 0 <= xx < w_i:
                                    acc += x[t][c][yy][xx] * w[o][c][kh][kw]
                    out[t, o, y, xo] = acc
    return out


def scalar_neuron(currents, kind, theta, leak_shift=0, v=0):
    """Serial neuron trace for one neuron; returns (spikes, final v)."""
    spikes = []
    for i in currents:
        if kind == "LIF":
            v -= v >> leak_shift
        v += int(i)
        fire = v >= theta
        spikes.append(int(fire))
        if fire:
            v = v - theta if kind == "RMP" else 0
    return spikes, v


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

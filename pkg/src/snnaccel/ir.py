"""Network intermediate representation, tensor containers and manifest I/O.

All tensors use the axis order (t, c, h, w). A manifest is a JSON document
next to a set of binary tensor blobs; see ``docs/formats.md``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .constants import BITS_CODING, CODING_BITS, MERGED_PSUM_LIMIT, SHORTCUT_BITS
from .errors import BitWidthError, ConfigError, ManifestError, ShapeError

NEURON_TYPES = ("IF", "LIF", "RMP")
POOL_MODES = ("none", "max2x2", "avg2x2")
POOL_POLICIES = ("saturate", "shift")
RESIDUAL_FUNCTIONS = ("ADD", "IAND")
OVERFLOW_POLICIES = ("extend4", "saturate2", "shift2")
SPIKE_BITS = (1, 2, 3, 4, 8)

MANIFEST_FORMAT = "snnaccel-manifest"
MANIFEST_VERSION = 1


def derive_output_shape(h_i, w_i, k, stride, pad):
    """Output (h, w) of a square-kernel convolution with zero padding."""
    if min(h_i, w_i, k, stride) < 1 or pad < 0:
        raise ShapeError(f"illegal geometry h_i={h_i} w_i={w_i} k={k} "
                         f"stride={stride} pad={pad}")
    if k > h_i + 2 * pad or k > w_i + 2 * pad:
        raise ShapeError(f"kernel {k} larger than padded input "
                         f"{h_i + 2 * pad}x{w_i + 2 * pad}")
    return ((h_i + 2 * pad - k) // stride + 1,
            (w_i + 2 * pad - k) // stride + 1)


@dataclass(frozen=True)
class LayerShape:
    t: int
    c_i: int
    h_i: int
    w_i: int
    c_o: int
    h_o: int
    w_o: int
    k_h: int
    k_w: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        dims = (self.t, self.c_i, self.h_i, self.w_i, self.c_o,
                self.h_o, self.w_o, self.k_h, self.k_w, self.stride)
        if min(dims) < 1 or self.pad < 0:
            raise ShapeError(f"non-positive dimension in {self}")
        for name, size_i, k, size_o in (("h", self.h_i, self.k_h, self.h_o),
                                        ("w", self.w_i, self.k_w, self.w_o)):
            padded = size_i + 2 * self.pad
            if k > padded:
                raise ShapeError(f"kernel {k} larger than padded {name} {padded}")
            expected = (padded - k) // self.stride + 1
            if size_o != expected:
                raise ShapeError(f"{name}_o={size_o} inconsistent with stride "
                                 f"formula (expected {expected})")

    @classmethod
    def conv(cls, t, c_i, h_i, w_i, c_o, k, stride=1, pad=0):
        h_o, w_o = derive_output_shape(h_i, w_i, k, stride, pad)
        return cls(t, c_i, h_i, w_i, c_o, h_o, w_o, k, k, stride, pad)

    @property
    def fan_in(self):
        return self.c_i * self.k_h * self.k_w


@dataclass
class SpikeTensor:
    """Unsigned multi-bit spikes over time, laid out (t, c, h, w)."""

    data: np.ndarray
    bit_width: int = 1

    def __post_init__(self):
        if self.bit_width not in SPIKE_BITS:
            raise BitWidthError(f"unsupported spike bit width {self.bit_width}")
        data = np.asarray(self.data)
        if data.ndim != 4:
            raise ShapeError(f"spike tensor must be 4-d (t, c, h, w), got {data.shape}")
        if data.size and (data.min() < 0 or data.max() >= (1 << self.bit_width)):
            raise BitWidthError(
                f"spike values must lie in [0, {(1 << self.bit_width) - 1}]")
        self.data = data.astype(np.uint8, copy=False)

    @property
    def shape(self):
        return self.data.shape

    def __eq__(self, other):
        return (isinstance(other, SpikeTensor) and self.bit_width == other.bit_width
                and np.array_equal(self.data, other.data))


@dataclass
class WeightTensor:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 4:
            raise ShapeError(f"weights must be (c_o, c_i, k_h, k_w), got {data.shape}")
        if data.size and (data.min() < -128 or data.max() > 127):
            raise BitWidthError("weights must be signed 8-bit")
        self.data = data.astype(np.int8, copy=False)

    @property
    def shape(self):
        return self.data.shape

    def __eq__(self, other):
        return isinstance(other, WeightTensor) and np.array_equal(self.data, other.data)


@dataclass(frozen=True)
class NeuronParams:
    """Per-layer neuron configuration; values are in merged-psum scale."""

    neuron_type: str = "IF"
    threshold: int = 1
    leak_shift: int = 0

    def __post_init__(self):
        if self.neuron_type not in NEURON_TYPES:
            raise ConfigError(f"unknown neuron type {self.neuron_type!r}")
        if self.threshold <= 0:
            raise ConfigError("threshold must be positive")
        if not 0 <= self.leak_shift <= 17:
            raise ConfigError("leak_shift must lie in [0, 17]")


@dataclass(frozen=True)
class ResidualConfig:
    function: str = "ADD"
    shortcut_bit_width: int = 1
    overflow_policy: str = "saturate2"
    # name of the layer whose output feeds the shortcut, or "input"
    source: str = "input"

    def __post_init__(self):
        if self.function not in RESIDUAL_FUNCTIONS:
            raise ConfigError(f"unknown residual function {self.function!r}")
        if self.overflow_policy not in OVERFLOW_POLICIES:
            raise ConfigError(f"unknown overflow policy {self.overflow_policy!r}")
        if self.shortcut_bit_width not in SHORTCUT_BITS:
            raise BitWidthError("shortcut bit width must be 1, 2 or 4")

    @property
    def output_bits(self):
        if self.function == "IAND":
            return 1
        return 4 if self.overflow_policy == "extend4" else 2


@dataclass(frozen=True)
class LayerConfig:
    name: str
    shape: LayerShape
    coding: str = "binary_spike"
    neuron: NeuronParams = field(default_factory=NeuronParams)
    pool: str = "none"
    pool_policy: str = "saturate"
    residual: Optional[ResidualConfig] = None
    post_shift_left: int = 0

    def __post_init__(self):
        if self.coding not in CODING_BITS:
            raise ConfigError(f"unknown coding {self.coding!r}")
        if self.pool not in POOL_MODES:
            raise ConfigError(f"unknown pool mode {self.pool!r}")
        if self.pool_policy not in POOL_POLICIES:
            raise ConfigError(f"unknown pool policy {self.pool_policy!r}")
        if self.post_shift_left not in (0, 1):
            raise ConfigError("post_shift_left must be 0 or 1")
        if self.pool != "none" and (self.shape.h_o % 2 or self.shape.w_o % 2):
            raise ShapeError(f"{self.name}: 2x2 pooling needs even output size")

    @property
    def input_bits(self):
        return CODING_BITS[self.coding]

    @property
    def input_steps(self):
        """Time steps carried by the input tensor (1 for a static image)."""
        return 1 if self.coding == "direct8bit" else self.shape.t

    @property
    def pooled_hw(self):
        if self.pool == "none":
            return self.shape.h_o, self.shape.w_o
        return self.shape.h_o // 2, self.shape.w_o // 2

    @property
    def output_shape(self):
        return (self.shape.t, self.shape.c_o) + self.pooled_hw

    @property
    def output_bits(self):
        if self.residual is not None:
            return self.residual.output_bits
        return 2 if self.pool == "avg2x2" else 1

    @property
    def output_shifted(self):
        """True when this layer halves its output spikes (shift policy)."""
        if self.residual is not None:
            return (self.residual.function == "ADD"
                    and self.residual.overflow_policy == "shift2")
        return self.pool == "avg2x2" and self.pool_policy == "shift"


@dataclass
class NetworkDesc:
    layers: list
    weights: dict
    biases: dict
    input_shape: tuple  # (t, c, h, w) of the network input tensor
    input_bits: int = 1
    name: str = "network"
    classifier: Optional[str] = None  # layer whose spikes are counted; default last
    iand_negate: str = "backbone"
    ann_flops: Optional[int] = None

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    @property
    def time_steps(self):
        return self.layers[0].shape.t if self.layers else self.input_shape[0]

    @property
    def classifier_layer(self):
        return self.classifier or self.layers[-1].name

    def __eq__(self, other):
        if not isinstance(other, NetworkDesc):
            return NotImplemented
        same_arrays = (
            self.weights.keys() == other.weights.keys()
            and self.biases.keys() == other.biases.keys()
            and all(self.weights[k] == other.weights[k] for k in self.weights)
            and all(np.array_equal(self.biases[k], other.biases[k]) for k in self.biases)
        )
        return same_arrays and (
            self.layers, tuple(self.input_shape), self.input_bits, self.name,
            self.classifier, self.iand_negate, self.ann_flops,
        ) == (
            other.layers, tuple(other.input_shape), other.input_bits, other.name,
            other.classifier, other.iand_negate, other.ann_flops,
        )


@dataclass(frozen=True)
class ParallelismConfig:
    m: int = 16
    v: int = 16
    n: int = 8
    s: int = 4
    f_fast_mhz: float = 500.0
    f_slow_mhz: Optional[float] = None
    allow_s_override: bool = False

    def __post_init__(self):
        if min(self.m, self.v, self.n, self.s) < 1:
            raise ConfigError("parallelism factors must be positive")
        if self.m % 4 or self.v % 4:
            raise ConfigError(f"m={self.m} and v={self.v} must be multiples of 4")
        if self.s != 4 and not self.allow_s_override:
            raise ConfigError("s must be 4 unless allow_s_override is set")
        if self.f_fast_mhz <= 0:
            raise ConfigError("clock frequency must be positive")
        if self.f_slow_mhz is None:
            object.__setattr__(self, "f_slow_mhz", self.f_fast_mhz / 2)
        elif self.f_fast_mhz != 2 * self.f_slow_mhz:
            raise ConfigError("fast clock must run at exactly twice the slow clock")

    @classmethod
    def parse(cls, text, f_fast_mhz=500.0):
        try:
            m, v, n, s = (int(x) for x in text.split(","))
        except ValueError as exc:
            raise ConfigError(f"expected m,v,n,s but got {text!r}") from exc
        return cls(m, v, n, s, f_fast_mhz=f_fast_mhz)

    @property
    def ops_per_cycle(self):
        return self.m * self.v * self.n * self.s


def validate_chain(net):
    """Return human-readable diagnostics; an empty list means the chain is legal."""
    diags = []
    outputs = {"input": (tuple(net.input_shape), net.input_bits)}
    prev_shape, prev_bits, prev_shifted = tuple(net.input_shape), net.input_bits, False
    names = set()
    for i, layer in enumerate(net.layers):
        s = layer.shape
        tag = f"layer {i} ({layer.name})"
        if layer.name in names or layer.name == "input":
            diags.append(f"{tag}: duplicate or reserved layer name")
        names.add(layer.name)

        if layer.coding == "direct8bit" and i != 0:
            diags.append(f"{tag}: direct8bit coding only allowed on the input layer")
        expected_in = (layer.input_steps, s.c_i, s.h_i, s.w_i)
        if prev_shape != expected_in:
            diags.append(f"{tag}: input shape {expected_in} does not match "
                         f"upstream output {prev_shape}")
        if layer.input_bits != prev_bits:
            diags.append(f"{tag}: declared {layer.input_bits}-bit input but upstream "
                         f"produces {prev_bits}-bit spikes")
        if layer.post_shift_left != int(prev_shifted):
            diags.append(f"{tag}: post_shift_left={layer.post_shift_left} but upstream "
                         f"{'does' if prev_shifted else 'does not'} right-shift its spikes")
        if i > 0 and s.t != net.layers[0].shape.t:
            diags.append(f"{tag}: time steps {s.t} differ from network T")

        if layer.name in net.weights:
            if net.weights[layer.name].shape != (s.c_o, s.c_i, s.k_h, s.k_w):
                diags.append(f"{tag}: weight tensor shape mismatch")
        else:
            diags.append(f"{tag}: missing weight tensor")
        bias = net.biases.get(layer.name)
        if bias is not None and np.shape(bias) != (s.c_o,):
            diags.append(f"{tag}: bias must have one entry per output channel")
        elif bias is not None and np.size(bias) and np.abs(bias).max() >= MERGED_PSUM_LIMIT:
            diags.append(f"{tag}: bias outside the 18-bit psum range")

        res = layer.residual
        if res is not None:
            if layer.pool == "avg2x2":
                diags.append(f"{tag}: residual connection after average pooling "
                             "is not supported")
            if res.function == "IAND" and res.shortcut_bit_width != 1:
                diags.append(f"{tag}: IAND needs a binary shortcut")
            src = outputs.get(res.source)
            if src is None:
                diags.append(f"{tag}: shortcut source {res.source!r} is not an "
                             "earlier tensor")
            else:
                src_shape, src_bits = src
                if src_shape != layer.output_shape:
                    diags.append(f"{tag}: shortcut shape {src_shape} differs from "
                                 f"backbone {layer.output_shape}")
                if src_bits != res.shortcut_bit_width:
                    diags.append(f"{tag}: shortcut declared {res.shortcut_bit_width}-bit "
                                 f"but source produces {src_bits}-bit spikes")

        prev_shape, prev_bits = layer.output_shape, layer.output_bits
        prev_shifted = layer.output_shifted
        outputs[layer.name] = (prev_shape, prev_bits)

    if net.classifier is not None and net.classifier not in names:
        diags.append(f"classifier layer {net.classifier!r} does not exist")
    return diags


# -- tensor blobs -----------------------------------------------------------

BLOB_MAGIC = b"SNNB"
BLOB_VERSION = 1
_DTYPE_CODES = {1: np.dtype("<i1"), 2: np.dtype("<u1"), 3: np.dtype("<i4")}
_CODE_OF = {np.dtype(v).str: k for k, v in _DTYPE_CODES.items()}


def write_blob(path, array):
    """Write ``array`` as magic, version, dtype code, ndim, dims, payload."""
    array = np.ascontiguousarray(array)
    code = _CODE_OF.get(array.dtype.newbyteorder("<").str)
    if code is None:
        raise ManifestError(f"unsupported blob dtype {array.dtype}")
    header = BLOB_MAGIC + struct.pack("<BBBx", BLOB_VERSION, code, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(_DTYPE_CODES[code]).tobytes())


def read_blob(path):
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != BLOB_MAGIC:
        raise ManifestError(f"{path}: not a tensor blob (bad magic)")
    version, code, ndim = struct.unpack_from("<BBBx", raw, 4)
    if version != BLOB_VERSION or code not in _DTYPE_CODES:
        raise ManifestError(f"{path}: unsupported blob version/dtype")
    offset = 8 + 4 * ndim
    if len(raw) < offset:
        raise ManifestError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) - offset != expected:
        raise ManifestError(f"{path}: payload has {len(raw) - offset} bytes, "
                            f"header implies {expected}")
    return np.frombuffer(raw, dtype=dtype, offset=offset).reshape(dims).copy()


def read_spikes(path, bit_width):
    return SpikeTensor(read_blob(path), bit_width)


# -- manifest ---------------------------------------------------------------

def _layer_to_dict(layer):
    s = layer.shape
    out = {
        "name": layer.name,
        "shape": {
            "t": s.t, "c_i": s.c_i, "h_i": s.h_i, "w_i": s.w_i,
            "c_o": s.c_o, "h_o": s.h_o, "w_o": s.w_o,
            "k_h": s.k_h, "k_w": s.k_w, "stride": s.stride, "pad": s.pad,
        },
        "coding": layer.coding,
        "neuron": {
            "type": layer.neuron.neuron_type,
            "threshold": layer.neuron.threshold,
            "leak_shift": layer.neuron.leak_shift,
        },
        "pool": layer.pool,
        "pool_policy": layer.pool_policy,
        "residual": None,
        "post_shift_left": layer.post_shift_left,
        "weights": f"{layer.name}.weights.bin",
        "bias": f"{layer.name}.bias.bin",
    }
    if layer.residual is not None:
        r = layer.residual
        out["residual"] = {
            "function": r.function,
            "shortcut_bit_width": r.shortcut_bit_width,
            "overflow_policy": r.overflow_policy,
            "source": r.source,
        }
    return out


def _layer_from_dict(d):
    try:
        shape = LayerShape(**{k: int(v) for k, v in d["shape"].items()})
        neuron = NeuronParams(d["neuron"]["type"], int(d["neuron"]["threshold"]),
                              int(d["neuron"].get("leak_shift", 0)))
        residual = None
        if d.get("residual"):
            r = d["residual"]
            residual = ResidualConfig(r["function"], int(r["shortcut_bit_width"]),
                                      r.get("overflow_policy", "saturate2"),
                                      r.get("source", "input"))
        return LayerConfig(
            name=d["name"], shape=shape, coding=d.get("coding", "binary_spike"),
            neuron=neuron, pool=d.get("pool", "none"),
            pool_policy=d.get("pool_policy", "saturate"), residual=residual,
            post_shift_left=int(d.get("post_shift_left", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"layer entry malformed: {exc!r}") from exc


def network_to_dict(net):
    return {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "name": net.name,
        "input": {"shape": list(net.input_shape), "bit_width": net.input_bits},
        "classifier": net.classifier,
        "iand_negate": net.iand_negate,
        "ann_flops": net.ann_flops,
        "layers": [_layer_to_dict(layer) for layer in net.layers],
    }


def save_manifest(net, path):
    """Write the manifest JSON and one blob per tensor beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = network_to_dict(net)
    for entry, layer in zip(doc["layers"], net.layers):
        write_blob(path.parent / entry["weights"], net.weights[layer.name].data)
        bias = net.biases.get(layer.name)
        if bias is None:
            bias = np.zeros(layer.shape.c_o, dtype=np.int32)
        write_blob(path.parent / entry["bias"], np.asarray(bias, dtype=np.int32))
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def load_manifest(path, validate=True):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
        raise ManifestError(f"{path}: not a {MANIFEST_FORMAT} document")
    if doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {doc.get('version')}")
    try:
        inp = doc["input"]
        layers = [_layer_from_dict(d) for d in doc["layers"]]
        entries = doc["layers"]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{path}: missing field {exc}") from exc
    if not layers:
        raise ManifestError(f"{path}: network has no layers")

    weights, biases = {}, {}
    for entry, layer in zip(entries, layers):
        weights[layer.name] = WeightTensor(read_blob(path.parent / entry["weights"]))
        if entry.get("bias"):
            bias = read_blob(path.parent / entry["bias"])
            biases[layer.name] = bias.astype(np.int64)

    net = NetworkDesc(
        layers=layers, weights=weights, biases=biases,
        input_shape=tuple(int(x) for x in inp["shape"]),
        input_bits=int(inp.get("bit_width", 1)),
        name=doc.get("name", path.stem), classifier=doc.get("classifier"),
        iand_negate=doc.get("iand_negate", "backbone"), ann_flops=doc.get("ann_flops"),
    )
    if validate:
        diags = validate_chain(net)
        if diags:
            raise ShapeError(f"{path}: " + "; ".join(diags))
    return net


def with_layer(net, index, **changes):
    """Copy of ``net`` with fields of one layer replaced."""
    layers = list(net.layers)
    layers[index] = replace(layers[index], **changes)
    return replace(net, layers=layers)


def coding_for_bits(bits):
    try:
        return BITS_CODING[bits]
    except KeyError:
        raise BitWidthError(f"no input coding carries {bits}-bit spikes") from None

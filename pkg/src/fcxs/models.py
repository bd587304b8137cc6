"""The four segmentation architectures and everything built on top of them.

All four networks share the encoder/decoder scheme: a contraction path
that abstracts features while shrinking resolution 16x, an expansion
path that upsamples with learned 2x2 transposed convolutions and merges
skip features by channel concatenation (contraction features first),
and a 1x1 convolution head producing one probability map per class.

Differences between the variants:

* ``unet_original``  -- channel schedule (C, 2C, 4C, 8C, 16C), 2x2
  stride-2 max pooling between levels, no dropout.
* ``all_dropout``    -- same topology plus Gaussian dropout after every
  convolution's activation (head excluded).
* ``all_convolutional`` -- all_dropout with each max pool replaced by a
  stride-2 same-padded 3x3 convolution (channel-preserving, followed by
  activation and dropout).  The 3x3 kernel is deliberate: it reproduces
  the reference parameter delta exactly, a 2x2 kernel does not.
* ``invertednet``    -- inverted channel schedule (C, C/2, ..., C/16)
  starting wide (256 by default), dropout everywhere, pooling retained
  with delayed subsampling: the first pool keeps stride 2, every later
  pool has stride 1 and hands its stride 2 to the first convolution
  after it.

Networks are static step programs: each step names a layer and the
steps it reads from, so the forward pass is a topologically ordered
walk that caches every intermediate tensor.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import ops
from .errors import ConfigError, DataError, ShapeError
from .rng import Rng
from .tensor import Tensor

ARCHITECTURES = ("unet_original", "all_dropout", "all_convolutional", "invertednet")
HEADS = ("sigmoid", "softmax")
ACTIVATIONS = ("elu", "relu")
CHECKPOINT_MAGIC = b"FCXS"
CHECKPOINT_VERSION = 1

_DEFAULT_BASE_CHANNELS = {
    "unet_original": 64,
    "all_dropout": 64,
    "all_convolutional": 64,
    "invertednet": 256,
}


@dataclass(frozen=True)
class ArchConfig:
    """Hyperparameters that fully determine a network's construction."""

    arch: str = "invertednet"
    input_resolution: int = 256
    in_channels: int = 1
    num_classes: Optional[int] = None  # derived from head when omitted
    activation: str = "elu"
    drop_probability: float = 0.1
    head: str = "sigmoid"
    base_channels: Optional[int] = None  # first contraction level; arch default when omitted
    init_seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")
        if self.head not in HEADS:
            raise ConfigError(f"unknown head {self.head!r}; expected one of {HEADS}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")
        if self.input_resolution % 16 != 0 or self.input_resolution <= 0:
            raise ConfigError(
                f"input_resolution must be a positive multiple of 16 (four downsampling "
                f"stages), got {self.input_resolution}"
            )
        if not 0.0 <= self.drop_probability < 1.0:
            raise ConfigError(f"drop_probability must be in [0, 1), got {self.drop_probability}")
        expected = 3 if self.head == "sigmoid" else 4
        if self.num_classes is None:
            object.__setattr__(self, "num_classes", expected)
        elif self.num_classes != expected:
            raise ConfigError(
                f"head {self.head!r} requires num_classes={expected} "
                f"(3 organ classes{' + background' if self.head == 'softmax' else ''}), "
                f"got {self.num_classes}"
            )
        if self.base_channels is None:
            object.__setattr__(self, "base_channels", _DEFAULT_BASE_CHANNELS[self.arch])
        if self.arch == "invertednet":
            if self.base_channels % 16 != 0:
                raise ConfigError(
                    "invertednet base_channels must be divisible by 16 "
                    f"(halved at each of four levels), got {self.base_channels}"
                )
        elif self.base_channels < 1:
            raise ConfigError(f"base_channels must be positive, got {self.base_channels}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown ArchConfig fields: {sorted(unknown)}")
        return cls(**d)


# -- layers --------------------------------------------------------------------


class Conv2d:
    kind = "conv"

    def __init__(self, weight: Tensor, bias: Tensor, stride: int = 1):
        self.weight = weight
        self.bias = bias
        self.stride = stride

    def param_items(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, xs, mode, rng):
        return ops.conv2d(xs[0], self.weight, self.bias, stride=self.stride)

    def describe(self) -> str:
        f, c, kh, kw = self.weight.shape
        return f"conv {kh}x{kw} {c}->{f} stride {self.stride}"


class TransposedConv2d:
    kind = "transposed_conv"

    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight
        self.bias = bias

    def param_items(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def forward(self, xs, mode, rng):
        return ops.transposed_conv2d(xs[0], self.weight, self.bias)

    def describe(self) -> str:
        c, f, kh, kw = self.weight.shape
        return f"transposed conv {kh}x{kw} {c}->{f} stride 2"


class MaxPool2d:
    kind = "maxpool"

    def __init__(self, stride: int):
        self.stride = stride

    def param_items(self):
        return []

    def forward(self, xs, mode, rng):
        return ops.maxpool2d(xs[0], size=2, stride=self.stride)

    def describe(self) -> str:
        return f"maxpool 2x2 stride {self.stride}"


class Activation:
    kind = "activation"

    def __init__(self, fn: str):
        self.fn = fn

    def param_items(self):
        return []

    def forward(self, xs, mode, rng):
        return ops.activation(self.fn, xs[0])

    def describe(self) -> str:
        return self.fn


class GaussianDropout:
    kind = "dropout"

    def __init__(self, d: float):
        self.d = d

    def param_items(self):
        return []

    def forward(self, xs, mode, rng):
        return ops.gaussian_dropout(xs[0], self.d, mode, rng)

    def describe(self) -> str:
        return f"gaussian dropout d={self.d}"


class ConcatChannels:
    kind = "concat"

    def param_items(self):
        return []

    def forward(self, xs, mode, rng):
        return ops.concat_channels(xs[0], xs[1])

    def describe(self) -> str:
        return "concat"


class Softmax:
    kind = "softmax"

    def param_items(self):
        return []

    def forward(self, xs, mode, rng):
        return ops.softmax_channels(xs[0])

    def describe(self) -> str:
        return "softmax over channels"


@dataclass
class Step:
    name: str
    layer: object
    inputs: tuple[int, ...]  # indices of earlier steps; -1 is the network input


class Network:
    """A named, ordered program of layers with stable parameter ordering."""

    def __init__(self, config: ArchConfig, steps: list[Step]):
        self.config = config
        self.steps = steps
        for idx, step in enumerate(steps):
            for src in step.inputs:
                if src >= idx or src < -1:
                    raise ConfigError(f"step {step.name} reads from an invalid step index {src}")

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for step in self.steps:
            for suffix, tensor in step.layer.param_items():
                out.append((f"{step.name}.{suffix}", tensor))
        return out

    def param_kinds(self) -> dict[str, str]:
        kinds = {}
        for step in self.steps:
            for suffix, _ in step.layer.param_items():
                kinds[f"{step.name}.{suffix}"] = step.layer.kind
        return kinds

    def forward(self, x, mode: str = "infer", rng: Optional[Rng] = None, trace: Optional[list] = None) -> Tensor:
        if mode not in ("train", "infer"):
            raise ConfigError(f"forward mode must be 'train' or 'infer', got {mode!r}")
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x))
        if x.data.ndim == 3:
            x = Tensor(x.data[None])
        n, c, h, w = x.shape
        if c != self.config.in_channels:
            raise ShapeError(f"expected {self.config.in_channels} input channels, got {c}")
        if h != self.config.input_resolution or w != self.config.input_resolution:
            raise ShapeError(
                f"expected {self.config.input_resolution}x{self.config.input_resolution} input, got {h}x{w}"
            )
        outputs: list[Tensor] = []
        for step in self.steps:
            xs = [x if i == -1 else outputs[i] for i in step.inputs]
            out = step.layer.forward(xs, mode, rng)
            outputs.append(out)
            if trace is not None:
                trace.append((step.name, out.shape))
        return outputs[-1]

    def astype(self, dtype) -> "Network":
        """Convert parameters in place (float64 for gradient checking)."""
        for _, p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(name, p.data) for name, p in self.parameters()]

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters():
            if name not in arrays:
                raise DataError(f"missing parameter {name!r} in state")
            arr = np.asarray(arrays[name], dtype=p.dtype)
            if arr.shape != p.data.shape:
                raise DataError(f"parameter {name!r}: shape {arr.shape} != {p.data.shape}")
            p.data = np.ascontiguousarray(arr)


# -- builders --------------------------------------------------------------------


class _Builder:
    def __init__(self, config: ArchConfig, dtype):
        self.config = config
        self.dtype = dtype
        self.steps: list[Step] = []
        self.rng = Rng(config.init_seed)
        self._draw = 0

    def _init_weight(self, shape, fan_in) -> Tensor:
        # uniform He-style fan-in scaling, seeded per draw
        bound = float(np.sqrt(6.0 / fan_in))
        data = self.rng.child(self._draw).uniform(-bound, bound, shape, dtype=self.dtype)
        self._draw += 1
        return Tensor(data, requires_grad=True)

    def add(self, name: str, layer, *inputs: int) -> int:
        self.steps.append(Step(name, layer, tuple(inputs)))
        return len(self.steps) - 1

    def conv(self, name, src, c_in, c_out, kernel=3, stride=1) -> int:
        w = self._init_weight((c_out, c_in, kernel, kernel), c_in * kernel * kernel)
        b = Tensor(np.zeros(c_out, dtype=self.dtype), requires_grad=True)
        return self.add(name, Conv2d(w, b, stride=stride), src)

    def tconv(self, name, src, c_in, c_out) -> int:
        w = self._init_weight((c_in, c_out, 2, 2), c_in)
        b = Tensor(np.zeros(c_out, dtype=self.dtype), requires_grad=True)
        return self.add(name, TransposedConv2d(w, b), src)

    def act(self, name, src) -> int:
        return self.add(name, Activation(self.config.activation), src)

    def drop(self, name, src) -> int:
        return self.add(name, GaussianDropout(self.config.drop_probability), src)

    def conv_act(self, name, src, c_in, c_out, stride=1, dropout=False) -> int:
        node = self.conv(name, src, c_in, c_out, stride=stride)
        node = self.act(f"{name}.act", node)
        if dropout:
            node = self.drop(f"{name}.drop", node)
        return node

    def head(self, src, c_in) -> int:
        node = self.conv("head", src, c_in, self.config.num_classes, kernel=1)
        if self.config.head == "softmax":
            return self.add("head.softmax", Softmax(), node)
        return self.add("head.sigmoid", Activation("sigmoid"), node)

    def network(self) -> Network:
        return Network(self.config, self.steps)


def _unet_family(config: ArchConfig, dtype, dropout: bool, conv_pool: bool) -> Network:
    b = _Builder(config, dtype)
    c0 = config.base_channels
    enc_channels = [c0, 2 * c0, 4 * c0, 8 * c0, 16 * c0]
    skips = []
    node, ch = -1, config.in_channels
    for lvl, c in enumerate(enc_channels):
        node = b.conv_act(f"enc{lvl}.conv0", node, ch, c, dropout=dropout)
        node = b.conv_act(f"enc{lvl}.conv1", node, c, c, dropout=dropout)
        ch = c
        if lvl < 4:
            skips.append(node)
            if conv_pool:
                node = b.conv_act(f"enc{lvl}.poolconv", node, c, c, stride=2, dropout=dropout)
            else:
                node = b.add(f"enc{lvl}.pool", MaxPool2d(stride=2), node)
    for lvl in range(3, -1, -1):
        c = enc_channels[lvl]
        node = b.tconv(f"dec{lvl}.up", node, ch, c)
        node = b.act(f"dec{lvl}.up.act", node)
        if dropout:
            node = b.drop(f"dec{lvl}.up.drop", node)
        node = b.add(f"dec{lvl}.concat", ConcatChannels(), skips[lvl], node)
        node = b.conv_act(f"dec{lvl}.conv0", node, 2 * c, c, dropout=dropout)
        node = b.conv_act(f"dec{lvl}.conv1", node, c, c, dropout=dropout)
        ch = c
    b.head(node, ch)
    return b.network()


def build_unet_original(config: ArchConfig, dtype=np.float32) -> Network:
    """Five-level encoder/decoder with stride-2 max pooling and no dropout."""
    return _unet_family(config, dtype, dropout=False, conv_pool=False)


def build_all_dropout(config: ArchConfig, dtype=np.float32) -> Network:
    """unet_original plus Gaussian dropout after every convolution's activation."""
    return _unet_family(config, dtype, dropout=True, conv_pool=False)


def build_all_convolutional(config: ArchConfig, dtype=np.float32) -> Network:
    """all_dropout with pooling learned as stride-2 3x3 convolutions."""
    return _unet_family(config, dtype, dropout=True, conv_pool=True)


def build_invertednet(config: ArchConfig, dtype=np.float32) -> Network:
    """Wide-first schedule with delayed subsampling.

    The first pool subsamples (stride 2); every later pool is stride 1
    and the first convolution after it carries the stride-2 instead, so
    features are extracted before resolution is lost.
    """
    b = _Builder(config, dtype)
    c0 = config.base_channels
    enc_channels = [c0, c0 // 2, c0 // 4, c0 // 8, c0 // 16]
    skips = []
    node = b.conv_act("enc0.conv0", -1, config.in_channels, enc_channels[0], dropout=True)
    node = b.conv_act("enc0.conv1", node, enc_channels[0], enc_channels[0], dropout=True)
    skips.append(node)
    ch = enc_channels[0]
    for lvl, c in enumerate(enc_channels[1:], start=1):
        pool_stride = 2 if lvl == 1 else 1
        conv_stride = 1 if lvl == 1 else 2
        node = b.add(f"enc{lvl}.pool", MaxPool2d(stride=pool_stride), node)
        node = b.conv_act(f"enc{lvl}.conv0", node, ch, c, stride=conv_stride, dropout=True)
        node = b.conv_act(f"enc{lvl}.conv1", node, c, c, dropout=True)
        ch = c
        if lvl < 4:
            skips.append(node)
    for lvl in range(3, -1, -1):
        c = enc_channels[lvl]
        node = b.tconv(f"dec{lvl}.up", node, ch, c)
        node = b.act(f"dec{lvl}.up.act", node)
        node = b.drop(f"dec{lvl}.up.drop", node)
        node = b.add(f"dec{lvl}.concat", ConcatChannels(), skips[lvl], node)
        node = b.conv_act(f"dec{lvl}.conv0", node, 2 * c, c, dropout=True)
        node = b.conv_act(f"dec{lvl}.conv1", node, c, c, dropout=True)
        ch = c
    b.head(node, ch)
    return b.network()


_BUILDERS = {
    "unet_original": build_unet_original,
    "all_dropout": build_all_dropout,
    "all_convolutional": build_all_convolutional,
    "invertednet": build_invertednet,
}


def build_network(config: ArchConfig, dtype=np.float32) -> Network:
    return _BUILDERS[config.arch](config, dtype)


# -- parameter accounting ----------------------------------------------------------


def count_parameters(net: Network) -> int:
    return sum(p.size for _, p in net.parameters())


def parameter_table(net: Network) -> list[tuple[str, str, str, int]]:
    """Per-layer ledger: (step name, description, weight shapes, element count)."""
    rows = []
    for step in net.steps:
        items = step.layer.param_items()
        if not items:
            continue
        shapes = " + ".join("x".join(map(str, t.shape)) for _, t in items)
        count = sum(t.size for _, t in items)
        rows.append((step.name, step.layer.describe(), shapes, count))
    return rows


def format_parameter_table(net: Network) -> str:
    rows = parameter_table(net)
    name_w = max(len(r[0]) for r in rows)
    desc_w = max(len(r[1]) for r in rows)
    shape_w = max(len(r[2]) for r in rows)
    lines = [
        f"{'layer':<{name_w}}  {'op':<{desc_w}}  {'parameters':<{shape_w}}  {'count':>12}"
    ]
    for name, desc, shapes, count in rows:
        lines.append(f"{name:<{name_w}}  {desc:<{desc_w}}  {shapes:<{shape_w}}  {count:>12,}")
    lines.append(f"{'total':<{name_w}}  {'':<{desc_w}}  {'':<{shape_w}}  {count_parameters(net):>12,}")
    return "\n".join(lines)


# -- checkpoints --------------------------------------------------------------------
#
# Layout: magic "FCXS" | u32 version | u32 header length | UTF-8 JSON header
# {"config": ArchConfig, "manifest": [{"name", "shape"}...]} | little-endian
# float32 arrays concatenated in manifest order.  Round-trips are bit-exact
# for float32 networks (the training precision).


def save_checkpoint(net: Network, path) -> None:
    manifest = [{"name": name, "shape": list(arr.shape)} for name, arr in net.state_arrays()]
    header = json.dumps(
        {"config": net.config.to_dict(), "manifest": manifest}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for _, arr in net.state_arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> Network:
    try:
        fh_ctx = open(path, "rb")
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}")
    with fh_ctx as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint (bad magic {magic!r})")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        config = ArchConfig.from_dict(header["config"])
        net = build_network(config)
        arrays = {}
        for entry in header["manifest"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise DataError(f"{path}: truncated parameter data for {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape)
        trailing = fh.read(1)
        if trailing:
            raise DataError(f"{path}: trailing bytes after parameter data")
    net.load_state_arrays(arrays)
    return net


# -- inference and ensembling ----------------------------------------------------------


def organ_probabilities(net: Network, image) -> np.ndarray:
    """Per-organ probability maps (3,H,W); drops the softmax background channel."""
    probs = net.forward(image, mode="infer").data[0]
    return probs[1:] if net.config.head == "softmax" else probs


def ensemble_predict(nets: Sequence[Network], image, epsilon: float = 0.25) -> np.ndarray:
    """Strict-majority vote over per-network thresholded masks.

    Each network's certain-pixel mask keeps pixels with class probability
    above 1 - epsilon; a pixel enters the ensemble mask only when more
    than half of the networks keep it (ties excluded), equivalently when
    the mean binary vote exceeds 0.5.
    """
    from .metrics import certain_pixels

    if not nets:
        raise ConfigError("ensemble_predict requires at least one network")
    heads = {(n.config.head, n.config.num_classes) for n in nets}
    resolutions = {n.config.input_resolution for n in nets}
    if len(heads) > 1:
        raise ConfigError(f"ensemble networks disagree on class set: {sorted(heads)}")
    if len(resolutions) > 1:
        raise ConfigError(f"ensemble networks disagree on resolution: {sorted(resolutions)}")
    votes = np.zeros((3,) + image.shape[-2:], dtype=np.int64)
    for net in nets:
        probs = organ_probabilities(net, image)
        votes += np.stack([certain_pixels(p, epsilon) for p in probs]).astype(np.int64)
    return (votes * 2 > len(nets)).astype(np.uint8)

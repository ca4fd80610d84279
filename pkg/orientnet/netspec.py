# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#
"""
Declarative network architecture, weight initialization and checkpoints.

A NetworkSpec is an ordered list of LayerSpec entries plus the input shape.
It is immutable; freeze variants are new specs. Parameters live apart from
the spec as a dict {layer name: {"weight": Tensor, "bias": Tensor}}.

Checkpoint file layout (all integers little-endian):

    b"ORNT" | u32 version | u32 header length | header (JSON) | tensors

The JSON header holds the NetworkSpec, training metadata and the ordered
list of (layer, parameter, shape) records. Tensor data follows in that
order as little-endian float32 values.
"""
import struct
from dataclasses import dataclass, field, asdict, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from ovos_utils.log import LOG

from orientnet.conf import DEFAULT_LRN, LRNConfig
from orientnet.errors import (BadMagicError, CheckpointError,
                              CheckpointMismatchError, ShapeError,
                              TruncatedCheckpointError,
                              UnsupportedVersionError, UsageError)
from orientnet.tensor import DTYPE, conv_output_size, pool_output_size
from orientnet.util import dump_json, load_json

CLASS_COUNT = 4
MAGIC = b"ORNT"
FORMAT_VERSION = 1

LAYER_KINDS = ("conv", "relu", "maxpool", "lrn", "fully_connected",
               "dropout", "softmax_xent")
PARAM_KINDS = ("conv", "fully_connected")

ParameterSet = Dict[str, Dict[str, np.ndarray]]


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a NetworkSpec.

    Only the fields relevant to `kind` are set; the others stay None.
    """
    name: str
    kind: str
    out_channels: Optional[int] = None
    kernel: Optional[int] = None
    stride: Optional[int] = None
    pad: Optional[int] = None
    window: Optional[int] = None
    units: Optional[int] = None
    rate: Optional[float] = None
    depth_radius: Optional[int] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    k: Optional[float] = None
    frozen: bool = False
    lr_multiplier: float = 1.0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise UsageError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dropout" and not 0.0 <= (self.rate or 0.0) < 1.0:
            raise UsageError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.lr_multiplier < 0:
            raise UsageError(f"{self.name}: lr_multiplier must be >= 0")

    @property
    def has_params(self) -> bool:
        return self.kind in PARAM_KINDS

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @staticmethod
    def from_dict(data: dict) -> 'LayerSpec':
        return LayerSpec(**data)


def conv(name, out_channels, kernel, stride=1, pad=0, frozen=False):
    return LayerSpec(name, "conv", out_channels=out_channels, kernel=kernel,
                     stride=stride, pad=pad, frozen=frozen)


def relu(name):
    return LayerSpec(name, "relu")


def maxpool(name, window=3, stride=2):
    return LayerSpec(name, "maxpool", window=window, stride=stride)


def lrn(name, config: LRNConfig = DEFAULT_LRN):
    return LayerSpec(name, "lrn", depth_radius=config.depth_radius,
                     alpha=config.alpha, beta=config.beta, k=config.k)


def fully_connected(name, units, frozen=False):
    return LayerSpec(name, "fully_connected", units=units, frozen=frozen)


def dropout(name, rate=0.5):
    return LayerSpec(name, "dropout", rate=rate)


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer list, input shape (channels, height, width) and the
    number of classes emitted by the head."""
    name: str
    input_shape: Tuple[int, int, int]
    layers: Tuple[LayerSpec, ...]
    class_count: int = CLASS_COUNT

    def __post_init__(self):
        object.__setattr__(self, "input_shape",
                           tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise UsageError(f"duplicate layer names in {self.name}")

    def __getitem__(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def layer_shapes(self) -> List[Tuple[str, Tuple[int, ...], Tuple[int, ...]]]:
        """
        Propagate shapes through the network.

        Returns:
            list of (layer name, input shape, output shape), batch excluded
        Raises:
            ShapeError when consecutive layers do not compose
        """
        shapes = []
        shape: Tuple[int, ...] = self.input_shape
        for layer in self.layers:
            in_shape = shape
            if layer.kind == "conv":
                if len(shape) != 3:
                    raise ShapeError(f"{layer.name}: conv needs a [C, H, W] input", shape)
                c, h, w = shape
                if layer.kernel > h + 2 * layer.pad or layer.kernel > w + 2 * layer.pad:
                    raise ShapeError(f"{layer.name}: kernel {layer.kernel} larger "
                                     f"than padded input", shape)
                shape = (layer.out_channels,
                         conv_output_size(h, layer.kernel, layer.stride, layer.pad),
                         conv_output_size(w, layer.kernel, layer.stride, layer.pad))
            elif layer.kind == "maxpool":
                if len(shape) != 3:
                    raise ShapeError(f"{layer.name}: pooling needs a [C, H, W] input", shape)
                c, h, w = shape
                if layer.window > h or layer.window > w:
                    raise ShapeError(f"{layer.name}: pooling window {layer.window} "
                                     f"larger than input", shape)
                shape = (c, pool_output_size(h, layer.window, layer.stride),
                         pool_output_size(w, layer.window, layer.stride))
            elif layer.kind == "lrn":
                if len(shape) != 3:
                    raise ShapeError(f"{layer.name}: LRN needs a [C, H, W] input", shape)
            elif layer.kind == "fully_connected":
                shape = (layer.units,)
            elif layer.kind == "softmax_xent":
                if shape != (self.class_count,):
                    raise ShapeError(f"{layer.name}: head expects "
                                     f"{self.class_count} inputs", shape)
            shapes.append((layer.name, in_shape, shape))
        if not shapes or shapes[-1][2] != (self.class_count,):
            raise ShapeError(f"{self.name}: network must end with "
                             f"{self.class_count} outputs",
                             shapes[-1][2] if shapes else ())
        return shapes

    def output_shapes(self) -> List[Tuple[int, ...]]:
        return [out for _, _, out in self.layer_shapes()]

    def param_shapes(self) -> Dict[str, Dict[str, Tuple[int, ...]]]:
        """Parameter shapes per layer, in layer order."""
        result = {}
        for layer, (_, in_shape, _) in zip(self.layers, self.layer_shapes()):
            if layer.kind == "conv":
                result[layer.name] = {
                    "weight": (layer.out_channels, in_shape[0],
                               layer.kernel, layer.kernel),
                    "bias": (layer.out_channels,)}
            elif layer.kind == "fully_connected":
                result[layer.name] = {
                    "weight": (int(np.prod(in_shape)), layer.units),
                    "bias": (layer.units,)}
        return result

    def parameter_count(self) -> int:
        return sum(int(np.prod(s)) for p in self.param_shapes().values()
                   for s in p.values())

    def frozen_layers(self) -> List[str]:
        return [layer.name for layer in self.layers if layer.frozen]

    def conv_layers(self) -> List[str]:
        return [layer.name for layer in self.layers if layer.kind == "conv"]

    def fc_layers(self) -> List[str]:
        return [layer.name for layer in self.layers
                if layer.kind == "fully_connected"]

    def with_frozen(self, names: Iterable[str]) -> 'NetworkSpec':
        """Copy of this spec where exactly `names` are frozen."""
        names = set(names)
        unknown = names - {layer.name for layer in self.layers if layer.has_params}
        if unknown:
            raise UsageError(f"cannot freeze unknown layers {sorted(unknown)}")
        layers = tuple(replace(layer, frozen=layer.name in names)
                       for layer in self.layers)
        return replace(self, layers=layers)

    def trainable(self) -> 'NetworkSpec':
        """Copy of this spec with nothing frozen."""
        return self.with_frozen(())

    def saliency_layer(self) -> str:
        """
        Layer whose output feeds the class activation map: the last conv
        before any fully connected layer, or the ReLU right after it.
        """
        found = None
        for idx, layer in enumerate(self.layers):
            if layer.kind == "fully_connected":
                break
            if layer.kind == "conv":
                found = idx
        if found is None:
            raise UsageError(f"{self.name} has no convolution layer")
        nxt = self.layers[found + 1] if found + 1 < len(self.layers) else None
        if nxt is not None and nxt.kind == "relu":
            return nxt.name
        return self.layers[found].name

    def to_dict(self) -> dict:
        return {"name": self.name,
                "input_shape": list(self.input_shape),
                "class_count": self.class_count,
                "layers": [layer.to_dict() for layer in self.layers]}

    @staticmethod
    def from_dict(data: dict) -> 'NetworkSpec':
        return NetworkSpec(name=data["name"],
                           input_shape=tuple(data["input_shape"]),
                           layers=tuple(LayerSpec.from_dict(d)
                                        for d in data["layers"]),
                           class_count=data.get("class_count", CLASS_COUNT))

    def to_json(self) -> str:
        return dump_json(self.to_dict()).decode("utf-8")


FULL_FROZEN = ("conv1", "conv2", "conv3")


def build_full_net(input_side: int = 256, compact_fc: bool = False,
                    lrn_config: LRNConfig = DEFAULT_LRN) -> NetworkSpec:
    """
    Five conv layers with ReLU, max-pooling after conv1, conv2 and conv5,
    LRN after conv1 and conv2, two 4096-wide fc layers with dropout 0.5
    and a four-way output. conv1-conv3 are frozen.

    Arguments:
        input_side: square input side, 256 by default
        compact_fc: drop fc7 and narrow fc6 to 1024 units
        lrn_config: normalization constants
    """
    layers = [
        conv("conv1", 96, 11, stride=4, frozen=True), relu("relu1"),
        maxpool("pool1"), lrn("norm1", lrn_config),
        conv("conv2", 256, 5, pad=2, frozen=True), relu("relu2"),
        maxpool("pool2"), lrn("norm2", lrn_config),
        conv("conv3", 384, 3, pad=1, frozen=True), relu("relu3"),
        conv("conv4", 384, 3, pad=1), relu("relu4"),
        conv("conv5", 256, 3, pad=1), relu("relu5"),
        maxpool("pool5"),
    ]
    if compact_fc:
        layers += [fully_connected("fc6", 1024), relu("relu6"),
                   dropout("drop6", 0.5)]
    else:
        layers += [fully_connected("fc6", 4096), relu("relu6"),
                   dropout("drop6", 0.5),
                   fully_connected("fc7", 4096), relu("relu7"),
                   dropout("drop7", 0.5)]
    layers += [fully_connected("fc8", CLASS_COUNT),
               LayerSpec("prob", "softmax_xent")]
    spec = NetworkSpec("full-compact" if compact_fc else "full",
                       (3, input_side, input_side), tuple(layers))
    spec.layer_shapes()
    return spec


DESK_WIDTHS = (16, 32, 64)


def build_desk_net(input_side: int = 64, widths: Sequence[int] = DESK_WIDTHS,
                   fc_width: int = 128, frozen: Iterable[str] = ("conv1",),
                   lrn_config: LRNConfig = DEFAULT_LRN) -> NetworkSpec:
    """
    Desk-scale network with the same layer pattern as the full-size network:
    every conv is followed by ReLU and max-pooling, the first two also by
    LRN; one fc layer with dropout and a four-way output.

    Arguments:
        input_side: square input side, at least 16
        widths: conv output channels, one conv layer per entry
        fc_width: width of the hidden fc layer
        frozen: layers frozen when fine-tuning
    """
    if input_side < 16:
        raise UsageError(f"desk network input side must be >= 16, got {input_side}")
    if not widths:
        raise UsageError("desk network needs at least one conv layer")
    layers = []
    for idx, width in enumerate(widths, start=1):
        kernel, pad = (5, 2) if idx == 1 else (3, 1)
        layers += [conv(f"conv{idx}", int(width), kernel, pad=pad),
                   relu(f"relu{idx}"), maxpool(f"pool{idx}")]
        if idx <= 2:
            layers.append(lrn(f"norm{idx}", lrn_config))
    out_idx = len(widths) + 1
    layers += [fully_connected(f"fc{out_idx}", fc_width),
               relu(f"relu{out_idx}"), dropout(f"drop{out_idx}", 0.5),
               fully_connected(f"fc{out_idx + 1}", CLASS_COUNT),
               LayerSpec("prob", "softmax_xent")]
    spec = NetworkSpec("desk", (3, input_side, input_side), tuple(layers))
    spec.layer_shapes()
    return spec.with_frozen(frozen)


def init_weights(spec: NetworkSpec, rng: np.random.Generator,
                 std: float = 0.01, scheme: str = "gaussian",
                 layers: Optional[Iterable[str]] = None) -> ParameterSet:
    """
    Draw weights from N(0, std^2) and set biases to zero.

    Arguments:
        spec: network to initialize
        rng: random generator, fixed seed gives identical parameters
        std: weight standard deviation for the "gaussian" scheme
        scheme: "gaussian" or "he" (std = sqrt(2 / fan_in) per layer)
        layers: restrict to these layers, all parameter layers by default
    Returns:
        parameter set in layer order
    """
    if scheme == "gaussian" and std <= 0:
        raise UsageError(f"init std must be > 0, got {std}")
    if scheme not in ("gaussian", "he"):
        raise UsageError(f"unknown init scheme {scheme!r}")
    wanted = set(layers) if layers is not None else None
    params = {}
    for name, shapes in spec.param_shapes().items():
        if wanted is not None and name not in wanted:
            continue
        w_shape = shapes["weight"]
        if scheme == "he":
            fan_in = int(np.prod(w_shape[1:])) if len(w_shape) == 4 else w_shape[0]
            layer_std = float(np.sqrt(2.0 / fan_in))
        else:
            layer_std = std
        weight = rng.standard_normal(w_shape, dtype=DTYPE) * DTYPE(layer_std)
        params[name] = {"weight": weight,
                        "bias": np.zeros(shapes["bias"], dtype=DTYPE)}
    return params


@dataclass
class Checkpoint:
    """Network spec, parameters and training metadata.

    metadata keys in use: epoch, seed, mean_rgb, input_scale, task.
    """
    spec: NetworkSpec
    params: ParameterSet
    metadata: dict = field(default_factory=dict)

    @property
    def mean_rgb(self) -> Tuple[float, float, float]:
        return tuple(self.metadata.get("mean_rgb") or (0.0, 0.0, 0.0))

    @property
    def input_scale(self) -> float:
        return float(self.metadata.get("input_scale", 1.0))

    def validate(self):
        expected = self.spec.param_shapes()
        if set(expected) != set(self.params):
            raise CheckpointMismatchError(
                f"parameter layers {sorted(self.params)} do not match "
                f"spec layers {sorted(expected)}")
        for name, shapes in expected.items():
            for pname, shape in shapes.items():
                got = self.params[name].get(pname)
                if got is None or tuple(got.shape) != tuple(shape):
                    raise CheckpointMismatchError(
                        f"{name}.{pname}: expected {shape}, got "
                        f"{None if got is None else got.shape}")


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    checkpoint.validate()
    records = []
    blobs = []
    for name, shapes in checkpoint.spec.param_shapes().items():
        for pname in ("weight", "bias"):
            tensor = np.asarray(checkpoint.params[name][pname], dtype="<f4")
            records.append([name, pname, list(tensor.shape)])
            blobs.append(tensor.tobytes(order="C"))
    header = dump_json({"spec": checkpoint.spec.to_dict(),
                        "metadata": checkpoint.metadata,
                        "tensors": records}, indent=False)
    return b"".join([MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)),
                     header] + blobs)


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{source}: not a checkpoint (bad magic "
                            f"{data[:len(MAGIC)]!r})")
    pos = len(MAGIC)
    if len(data) < pos + 8:
        raise TruncatedCheckpointError(f"{source}: header truncated")
    version, header_len = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{source}: checkpoint version "
                                      f"{version} is not supported "
                                      f"(expected {FORMAT_VERSION})")
    if len(data) < pos + header_len:
        raise TruncatedCheckpointError(f"{source}: specification block truncated")
    try:
        header = load_json(bytes(data[pos:pos + header_len]))
        spec = NetworkSpec.from_dict(header["spec"])
        records = header["tensors"]
        metadata = header.get("metadata") or {}
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{source}: unreadable specification block ({e})")
    pos += header_len

    expected = spec.param_shapes()
    params: ParameterSet = {}
    for name, pname, shape in records:
        shape = tuple(shape)
        if tuple(expected.get(name, {}).get(pname, ())) != shape:
            raise CheckpointMismatchError(f"{source}: tensor {name}.{pname} "
                                          f"shape {shape} does not fit spec")
        nbytes = int(np.prod(shape)) * 4
        if len(data) < pos + nbytes:
            raise TruncatedCheckpointError(f"{source}: tensor {name}.{pname} "
                                           f"truncated")
        tensor = np.frombuffer(data, dtype="<f4", count=int(np.prod(shape)),
                               offset=pos).astype(DTYPE).reshape(shape)
        params.setdefault(name, {})[pname] = tensor
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{source}: {len(data) - pos} unexpected "
                              f"trailing bytes")
    checkpoint = Checkpoint(spec, params, metadata)
    checkpoint.validate()
    return checkpoint


def save_checkpoint(path: str, checkpoint: Checkpoint):
    data = encode_checkpoint(checkpoint)
    with open(path, "wb") as f:
        f.write(data)
    LOG.info(f"saved checkpoint {path} ({len(data)} bytes)")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    checkpoint = decode_checkpoint(data, source=path)
    LOG.debug(f"loaded checkpoint {path}: {checkpoint.spec.name}")
    return checkpoint

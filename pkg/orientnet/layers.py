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
Stateful layers and the feed-forward Network built from a NetworkSpec.

A layer caches what its backward pass needs during forward, and fills
`grads` (same keys and shapes as `params`) during backward. A Network is
single-writer while training; read-only forward passes in eval mode do
not touch parameters.
"""
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from orientnet.errors import LabelError, NumericError, ShapeError, UsageError
from orientnet.netspec import CLASS_COUNT, LayerSpec, NetworkSpec, ParameterSet
from orientnet.tensor import (DTYPE, Tensor, conv2d_backward, conv2d_forward,
                              lrn_backward, lrn_forward, maxpool_backward,
                              maxpool_forward, relu_backward, relu_forward)


def fully_connected_forward(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map of a [N, D] input with [D, M] weights and [M] bias."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError("fully connected input does not match weights",
                         x.shape, weight.shape)
    if bias.shape != (weight.shape[1],):
        raise ShapeError("fully connected bias does not match weights",
                         bias.shape, weight.shape)
    return x @ weight + bias


def fully_connected_backward(grad_out: Tensor, x: Tensor, weight: Tensor
                             ) -> Tuple[Tensor, Tensor, Tensor]:
    """Returns (grad_input, grad_weight, grad_bias)."""
    if x is None:
        raise UsageError("fully_connected_backward called without cached input")
    if grad_out.shape != (x.shape[0], weight.shape[1]):
        raise ShapeError("gradient does not match fully connected output",
                         grad_out.shape, (x.shape[0], weight.shape[1]))
    return grad_out @ weight.T, x.T @ grad_out, grad_out.sum(axis=0)


def dropout_forward(x: Tensor, rate: float, train: bool,
                    rng: Optional[np.random.Generator] = None
                    ) -> Tuple[Tensor, Optional[Tensor]]:
    """
    Inverted dropout.

    In training mode each unit is zeroed with probability `rate` and the
    survivors are scaled by 1 / (1 - rate); eval mode is the identity.

    Returns:
        (output, mask) where mask is None when nothing was dropped
    """
    if not 0.0 <= rate < 1.0:
        raise UsageError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise UsageError("training-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask


def softmax(z: Tensor) -> Tensor:
    """Row-wise softmax of [N, K] logits, shifted by the row maximum."""
    if np.isnan(z).any():
        raise NumericError("NaN in logits")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_loss(z: Tensor, labels: Sequence[int]) -> Tuple[float, Tensor]:
    """
    Mean cross-entropy of softmax(z) against integer labels.

    Returns:
        (loss, grad_z) with grad_z = (softmax(z) - onehot) / batch
    """
    labels = np.asarray(labels)
    n, k = z.shape
    if labels.shape != (n,):
        raise ShapeError("one label per logit row expected", labels.shape, z.shape)
    bad = np.flatnonzero((labels < 0) | (labels >= k) |
                         (labels != np.round(labels)))
    if bad.size:
        raise LabelError(labels[bad[0]].item(), int(bad[0]))
    labels = labels.astype(np.int64)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_prob = shifted[np.arange(n), labels] - log_norm
    loss = float(-log_prob.mean())
    if not np.isfinite(loss):
        raise NumericError("non-finite cross-entropy loss")
    grad = softmax(z)
    grad[np.arange(n), labels] -= 1.0
    return loss, (grad / n).astype(z.dtype, copy=False)


class Layer:
    """Base layer: no parameters, identity gradients."""
    kind = "layer"

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.name = spec.name
        self.frozen = spec.frozen
        self.lr_multiplier = spec.lr_multiplier
        self.params: Dict[str, Tensor] = {}
        self.grads: Dict[str, Tensor] = {}
        self.velocity: Dict[str, Tensor] = {}

    @property
    def has_params(self) -> bool:
        return bool(self.params)

    def forward(self, x: Tensor, train: bool = False,
                rng: Optional[np.random.Generator] = None) -> Tensor:
        raise NotImplementedError

    def backward(self, grad_out: Tensor, need_input_grad: bool = True
                 ) -> Optional[Tensor]:
        raise NotImplementedError

    def set_params(self, params: Dict[str, Tensor]):
        for key, value in params.items():
            if key in self.params and self.params[key].shape != value.shape:
                raise ShapeError(f"{self.name}.{key} shape mismatch",
                                 self.params[key].shape, value.shape)
            self.params[key] = np.ascontiguousarray(value, dtype=DTYPE).copy()
        self.zero_grad()
        self.velocity = {}

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def __repr__(self):
        return f"{self.__class__.__name__}({self.name!r})"


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, spec: LayerSpec):
        super().__init__(spec)
        self.stride = spec.stride or 1
        self.pad = spec.pad or 0
        self._x = None

    def forward(self, x, train=False, rng=None):
        self._x = x
        return conv2d_forward(x, self.params["weight"], self.params["bias"],
                              self.stride, self.pad)

    def backward(self, grad_out, need_input_grad=True):
        gx, gw, gb = conv2d_backward(grad_out, self._x, self.params["weight"],
                                     self.stride, self.pad, need_input_grad)
        self.grads["weight"] = gw
        self.grads["bias"] = gb
        return gx


class ReLU(Layer):
    kind = "relu"

    def __init__(self, spec):
        super().__init__(spec)
        self._x = None

    def forward(self, x, train=False, rng=None):
        self._x = x
        return relu_forward(x)

    def backward(self, grad_out, need_input_grad=True):
        if self._x is None:
            raise UsageError(f"{self.name}: backward before forward")
        return relu_backward(grad_out, self._x)


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, spec):
        super().__init__(spec)
        self.window = spec.window
        self.stride = spec.stride
        self._argmax = None
        self._shape = None

    def forward(self, x, train=False, rng=None):
        out, self._argmax = maxpool_forward(x, self.window, self.stride)
        self._shape = x.shape
        return out

    def backward(self, grad_out, need_input_grad=True):
        return maxpool_backward(grad_out, self._argmax, self._shape)


class LocalResponseNorm(Layer):
    kind = "lrn"

    def __init__(self, spec):
        super().__init__(spec)
        self.lrn_args = dict(depth_radius=spec.depth_radius, alpha=spec.alpha,
                             beta=spec.beta, k=spec.k)
        self._x = None

    def forward(self, x, train=False, rng=None):
        self._x = x
        return lrn_forward(x, **self.lrn_args)

    def backward(self, grad_out, need_input_grad=True):
        return lrn_backward(grad_out, self._x, **self.lrn_args)


class FullyConnected(Layer):
    """Affine layer; flattens [N, C, H, W] inputs on entry."""
    kind = "fully_connected"

    def __init__(self, spec):
        super().__init__(spec)
        self._x = None
        self._in_shape = None

    def forward(self, x, train=False, rng=None):
        self._in_shape = x.shape
        self._x = x.reshape(x.shape[0], -1)
        return fully_connected_forward(self._x, self.params["weight"],
                                       self.params["bias"])

    def backward(self, grad_out, need_input_grad=True):
        gx, gw, gb = fully_connected_backward(grad_out, self._x,
                                              self.params["weight"])
        self.grads["weight"] = gw
        self.grads["bias"] = gb
        return gx.reshape(self._in_shape) if need_input_grad else None


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, spec):
        super().__init__(spec)
        self.rate = float(spec.rate or 0.0)
        self._mask = None

    def forward(self, x, train=False, rng=None):
        out, self._mask = dropout_forward(x, self.rate, train, rng)
        return out

    def backward(self, grad_out, need_input_grad=True):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask


class SoftmaxCrossEntropy(Layer):
    """Network head. Forward passes logits through unchanged; the loss and
    its gradient come from `loss`."""
    kind = "softmax_xent"

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != CLASS_COUNT:
            raise ShapeError("logits must be [batch, 4]", x.shape)
        return x

    def backward(self, grad_out, need_input_grad=True):
        return grad_out

    @staticmethod
    def loss(z: Tensor, labels: Sequence[int]) -> Tuple[float, Tensor]:
        return cross_entropy_loss(z, labels)

    @staticmethod
    def probabilities(z: Tensor) -> Tensor:
        return softmax(z)


LAYER_TYPES = {cls.kind: cls for cls in (Conv2D, ReLU, MaxPool,
                                         LocalResponseNorm, FullyConnected,
                                         Dropout, SoftmaxCrossEntropy)}


class Network:
    """
    Feed-forward network built from a NetworkSpec.

    Arguments:
        spec: architecture, validated for shape composition
        params: parameter set (see netspec.init_weights)
    """

    def __init__(self, spec: NetworkSpec, params: ParameterSet):
        spec.layer_shapes()
        self.spec = spec
        self.layers: List[Layer] = [LAYER_TYPES[ls.kind](ls) for ls in spec.layers]
        expected = spec.param_shapes()
        missing = set(expected) - set(params)
        if missing:
            raise ShapeError(f"missing parameters for layers {sorted(missing)}")
        for layer in self.layers:
            if layer.name in expected:
                for pname, shape in expected[layer.name].items():
                    value = params[layer.name][pname]
                    if tuple(value.shape) != tuple(shape):
                        raise ShapeError(f"{layer.name}.{pname} does not fit spec",
                                         value.shape, shape)
                layer.set_params(params[layer.name])
        self.head: SoftmaxCrossEntropy = self.layers[-1]
        self.activations: Dict[str, Tensor] = {}
        self.output_grads: Dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    @property
    def param_layers(self) -> List[Layer]:
        return [layer for layer in self.layers if layer.has_params]

    def forward(self, x: Tensor, train: bool = False,
                rng: Optional[np.random.Generator] = None,
                record: bool = False) -> Tensor:
        """
        Run the network and return logits [N, 4].

        Arguments:
            x: preprocessed input [N, C, H, W]
            train: training mode (dropout active)
            rng: generator for dropout masks in training mode
            record: keep every layer output in `activations`
        """
        expected = self.spec.input_shape
        if x.ndim != 4 or tuple(x.shape[1:]) != tuple(expected):
            raise ShapeError("input does not match network input shape",
                             x.shape, (x.shape[0] if x.ndim else 1,) + tuple(expected))
        self.activations = {}
        out = x
        for layer in self.layers:
            out = layer.forward(out, train=train, rng=rng)
            if record:
                self.activations[layer.name] = out
        return out

    def backward(self, grad_z: Tensor, record: bool = False):
        """
        Back-propagate the gradient of the logits, filling every layer's
        `grads`. With record, `output_grads[name]` holds the gradient with
        respect to each layer's output.
        """
        self.output_grads = {}
        grad = grad_z
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            if record:
                self.output_grads[layer.name] = grad
            grad = layer.backward(grad, need_input_grad=idx > 0 or record)
        return grad

    def loss(self, x: Tensor, labels: Sequence[int], train: bool = False,
             rng: Optional[np.random.Generator] = None) -> Tuple[float, Tensor]:
        """Forward pass plus loss; returns (loss, logits)."""
        z = self.forward(x, train=train, rng=rng)
        loss, _ = self.head.loss(z, labels)
        return loss, z

    def predict_proba(self, x: Tensor) -> Tensor:
        return softmax(self.forward(x, train=False))

    def zero_grad(self):
        for layer in self.param_layers:
            layer.zero_grad()

    def parameters(self) -> ParameterSet:
        """Copy of the current parameters."""
        return {layer.name: {k: v.copy() for k, v in layer.params.items()}
                for layer in self.param_layers}

    def load_parameters(self, params: ParameterSet, layers=None):
        """Overwrite parameters of the given (default: all present) layers."""
        names = set(layers) if layers is not None else set(params)
        for layer in self.param_layers:
            if layer.name in names:
                layer.set_params(params[layer.name])

    def set_frozen(self, names):
        names = set(names)
        for layer in self.param_layers:
            layer.frozen = layer.name in names

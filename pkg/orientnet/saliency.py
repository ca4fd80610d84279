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
Gradient-weighted class activation maps.

The feature maps A_k of the last convolution (after its ReLU) are weighted
by the spatial mean of d score / d A_k and summed; the rectified sum is the
raw map, upsampled to the image size and min-max normalized for display.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from ovos_utils.log import LOG

from orientnet.data.manifest import check_theta
from orientnet.errors import ShapeError, UsageError
from orientnet.evaluator import OrientationModel
from orientnet.layers import softmax
from orientnet.tensor import DTYPE, Tensor, bilinear_resize, relu_forward


@dataclass
class SaliencyMap:
    """
    Grad-CAM result for one image.

    The map has a single channel. The class-activation weights already sum
    over the feature channels, so one [H, W] map covers all three colour
    channels of the [3, H, W] input; `render_overlay` colours it to
    [3, H, W] for display.
    """
    raw: Tensor         # [h', w'] at the last conv resolution, >= 0
    normalized: Tensor   # [H, W] at the image resolution, in [0, 1]
    target: int
    layer: str = ""
    probability: float = 0.0

    @property
    def shape(self):
        return self.normalized.shape


def normalize_map(cam: Tensor) -> Tensor:
    """Min-max scale to [0, 1]; a flat map becomes all zeros."""
    low, high = float(cam.min()), float(cam.max())
    if high - low <= 0.0:
        return np.zeros_like(cam, dtype=DTYPE)
    return ((cam - low) / (high - low)).astype(DTYPE)


def class_activation(activations: Tensor, gradients: Tensor) -> Tensor:
    """ReLU(sum_k mean(dA_k) * A_k) for one sample's [C, h, w] maps."""
    if activations.shape != gradients.shape or activations.ndim != 3:
        raise ShapeError("activations and gradients must both be [C, h, w]",
                         activations.shape, gradients.shape)
    weights = gradients.mean(axis=(1, 2), dtype=np.float64)
    cam = np.tensordot(weights, activations.astype(np.float64), axes=(0, 0))
    return relu_forward(cam.astype(DTYPE))


def grad_cam(model: OrientationModel, image: Tensor,
             target: Optional[int] = None) -> SaliencyMap:
    """
    Saliency of `image` for class `target` (the predicted class if None).

    Arguments:
        model: network with its preprocessing
        image: raw [3, H, W] image on the 0..255 scale
        target: orientation label whose logit is explained
    Raises:
        LabelError when target is outside 0..3
    """
    if target is not None:
        target = check_theta(target)
    network = model.network
    layer = network.spec.saliency_layer()
    x = model.prepare(image)[None]
    with model.lock:
        z = network.forward(x, train=False, record=True)
        probs = softmax(z)
        if target is None:
            target = int(np.argmax(z[0]))
        grad_z = np.zeros_like(z)
        grad_z[0, target] = 1.0
        network.backward(grad_z, record=True)
        activations = network.activations[layer][0]
        gradients = network.output_grads[layer][0]
        network.zero_grad()
    raw = class_activation(activations, gradients)
    height, width = image.shape[1:]
    upsampled = bilinear_resize(raw[None], height, width)[0]
    normalized = normalize_map(np.maximum(upsampled, 0.0))
    LOG.debug(f"grad-cam at {layer}: raw {raw.shape}, target {target}")
    return SaliencyMap(raw, normalized, target, layer, float(probs[0, target]))


def colormap(values: Tensor) -> Tensor:
    """Blue (0) to red (1) colors of a [H, W] map in [0, 1], as [3, H, W]."""
    m = np.clip(values, 0.0, 1.0).astype(DTYPE)
    return np.stack([255.0 * m, np.zeros_like(m), 255.0 * (1.0 - m)]).astype(DTYPE)


def render_overlay(image: Tensor, smap: SaliencyMap, alpha: float = 0.5) -> Tensor:
    """
    Blend the colored map over the image:
    out = (1 - alpha) * image + alpha * colormap(map), clamped to 0..255.
    """
    if not 0.0 <= alpha <= 1.0:
        raise UsageError(f"alpha must be in [0, 1], got {alpha}")
    if tuple(image.shape[1:]) != tuple(smap.normalized.shape):
        raise ShapeError("saliency map does not match the image",
                         image.shape, smap.normalized.shape)
    if alpha == 0.0:
        return image.copy()
    colors = colormap(smap.normalized)
    if alpha == 1.0:
        return colors
    out = (1.0 - alpha) * image.astype(DTYPE) + alpha * colors
    return np.clip(out, 0.0, 255.0).astype(DTYPE)


def write_raw_csv(smap: SaliencyMap, path: str):
    pd.DataFrame(smap.raw).to_csv(path, index=False, header=False)
    LOG.info(f"wrote raw saliency grid {path}")

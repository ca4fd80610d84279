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
Per-image transforms: exact rotation, augmentation, mean subtraction.

Images are [3, H, W] float32 tensors on the 0..255 scale.
"""
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

from orientnet.conf import AugmentConfig, DEFAULT_AUGMENT
from orientnet.data.manifest import DatasetManifest, check_theta
from orientnet.errors import DataError, EmptyManifestError
from orientnet.tensor import DTYPE, Tensor, bilinear_resize, gaussian_noise


def rotate_image(img: Tensor, theta: int) -> Tensor:
    """
    Rotate clockwise by theta quarter turns.

    A pure index permutation: lossless, and theta 1 / 3 swap H and W.
    """
    theta = check_theta(theta)
    if img.ndim != 3:
        raise DataError(f"rotate_image expects [C, H, W], got {img.shape}")
    if theta == 0:
        return img.copy()
    return np.ascontiguousarray(np.rot90(img, k=-theta, axes=(1, 2)))


def correct_image(img: Tensor, theta: int) -> Tensor:
    """Undo a clockwise rotation by theta."""
    return rotate_image(img, (4 - check_theta(theta)) % 4)


def _range(value) -> Tuple[float, float]:
    if isinstance(value, (tuple, list)):
        low, high = value
        return float(low), float(high)
    return -float(value), float(value)


def augment(img: Tensor, rng: np.random.Generator,
            params: AugmentConfig = DEFAULT_AUGMENT) -> Tensor:
    """
    Random brightness, contrast and gaussian noise.

    pixel' = clamp(contrast * (pixel - mean) + mean + brightness + noise, 0, 255)

    The spatial shape never changes: no cropping, no flipping.

    Arguments:
        img: [3, H, W] image on the 0..255 scale
        rng: random generator, draws happen in a fixed order
        params: brightness_delta is a symmetric bound or a (low, high)
            range; contrast_range is (low, high); noise_sigma bounds the
            sigma drawn per image
    """
    b_low, b_high = _range(params.brightness_delta)
    c_low, c_high = params.contrast_range
    brightness = rng.uniform(b_low, b_high)
    contrast = rng.uniform(c_low, c_high)
    sigma = rng.uniform(0.0, params.noise_sigma)

    out = img.astype(DTYPE, copy=True)
    if contrast != 1.0:
        mean = out.mean(dtype=np.float64)
        out = (contrast * (out - mean) + mean).astype(DTYPE)
    if brightness != 0.0:
        out = out + DTYPE(brightness)
    if sigma > 0.0:
        out = gaussian_noise(out, sigma, rng)
    return np.clip(out, 0.0, 255.0).astype(DTYPE, copy=False)


def resize_image(img: Tensor, side: int) -> Tensor:
    """Aspect-distorting bilinear resize to side x side."""
    return bilinear_resize(img, side, side)


def preprocess(img: Tensor, mean_rgb: Sequence[float], side: Optional[int] = None,
               input_scale: float = 1.0) -> Tensor:
    """
    Resize to the network input side and subtract the training mean.

    Arguments:
        img: [3, H, W] image
        mean_rgb: per-channel means of the training split
        side: square network input side, no resize when None
        input_scale: factor applied after mean subtraction
    """
    if img.ndim != 3 or img.shape[0] != 3:
        raise DataError(f"expected a 3-channel [3, H, W] image, got {img.shape}")
    if side is not None and img.shape[1:] != (side, side):
        img = resize_image(img, side)
    mean = np.asarray(mean_rgb, dtype=DTYPE).reshape(3, 1, 1)
    out = img.astype(DTYPE, copy=False) - mean
    if input_scale != 1.0:
        out = out * DTYPE(input_scale)
    return out.astype(DTYPE, copy=False)


def compute_mean_rgb(images: Iterable[Tensor]) -> Tuple[float, float, float]:
    """Per-channel mean over every pixel of every image."""
    total = np.zeros(3, dtype=np.float64)
    count = 0
    for img in images:
        if img.ndim != 3 or img.shape[0] != 3:
            raise DataError(f"expected a 3-channel image, got {img.shape}")
        total += img.reshape(3, -1).sum(axis=1, dtype=np.float64)
        count += img.shape[1] * img.shape[2]
    if count == 0:
        raise EmptyManifestError("cannot compute mean RGB of an empty set")
    mean = total / count
    return float(mean[0]), float(mean[1]), float(mean[2])


def manifest_mean_rgb(manifest: DatasetManifest,
                      load_fn: Callable[[str], Tensor]) -> Tuple[float, float, float]:
    """Mean RGB over the distinct images of a (training) manifest.

    Rotation does not change channel means, so each file counts once.
    """
    return compute_mean_rgb(load_fn(p) for p in manifest.paths())

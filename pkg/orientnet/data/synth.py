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
Procedural images for desk-scale experiments.

Scenes carry the vertical structure orientation depends on: a bright sky
gradient across the top third, dark textured ground across the bottom
third and random shapes in between. Shapes are an unrelated four-class
task used to pre-train a conv trunk before fine-tuning on orientation.
"""
import os
from typing import List, Tuple

import numpy as np
from ovos_utils.log import LOG

from orientnet.data.manifest import DatasetManifest, Sample
from orientnet.data.transforms import compute_mean_rgb, rotate_image
from orientnet.errors import DataError, UsageError
from orientnet.tensor import DTYPE, Tensor

SHAPE_CLASSES = ("disk", "square", "triangle", "cross")


def _check_side(side: int):
    if side < 32:
        raise UsageError(f"synthetic images need side >= 32, got {side}")


def _draw_shape(canvas: Tensor, kind: str, cy: float, cx: float,
                radius: float, color: np.ndarray, rows: slice = slice(None)):
    _, h, w = canvas.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        mask = dy * dy + dx * dx <= radius * radius
    elif kind == "square":
        mask = (np.abs(dy) <= radius) & (np.abs(dx) <= radius)
    elif kind == "triangle":
        # apex up, base at cy + radius
        mask = (dy <= radius) & (dy >= -radius) & \
               (np.abs(dx) <= (dy + radius) / 2.0)
    elif kind == "cross":
        arm = max(radius / 3.0, 1.0)
        mask = ((np.abs(dy) <= radius) & (np.abs(dx) <= arm)) | \
               ((np.abs(dx) <= radius) & (np.abs(dy) <= arm))
    else:
        raise UsageError(f"unknown shape {kind!r}")
    limit = np.zeros((h, w), dtype=bool)
    limit[rows] = True
    mask &= limit
    canvas[:, mask] = color.reshape(3, 1)


def synth_upright_scene(rng: np.random.Generator, side: int) -> Tensor:
    """Upright scene, [3, side, side] on the 0..255 scale."""
    _check_side(side)
    third = side // 3
    img = np.empty((3, side, side), dtype=DTYPE)

    # sky: brightest at the top, dimming toward the horizon
    sky_top = rng.uniform(190.0, 250.0)
    sky_drop = rng.uniform(10.0, 50.0)
    sky_tint = np.array([rng.uniform(0.8, 0.92), rng.uniform(0.88, 0.97), 1.0],
                        dtype=DTYPE)
    ramp = sky_top - sky_drop * np.arange(third, dtype=DTYPE) / max(third - 1, 1)
    img[:, :third, :] = sky_tint.reshape(3, 1, 1) * ramp.reshape(1, third, 1)

    middle = rng.uniform(90.0, 150.0)
    img[:, third:side - third, :] = middle

    ground = rng.uniform(20.0, 70.0)
    ground_tint = np.array([rng.uniform(0.7, 1.0), rng.uniform(0.8, 1.0),
                            rng.uniform(0.5, 0.8)], dtype=DTYPE)
    texture = rng.normal(0.0, 10.0, size=(third, side)).astype(DTYPE)
    img[:, side - third:, :] = ground_tint.reshape(3, 1, 1) * \
        (ground + texture).reshape(1, third, side)

    band = slice(third, side - third)
    for _ in range(int(rng.integers(2, 6))):
        kind = SHAPE_CLASSES[int(rng.integers(0, len(SHAPE_CLASSES)))]
        radius = rng.uniform(side * 0.04, side * 0.12)
        cy = rng.uniform(third, side - third)
        cx = rng.uniform(0, side)
        color = rng.uniform(60.0, 200.0, size=3).astype(DTYPE)
        _draw_shape(img, kind, cy, cx, radius, color, rows=band)
    return np.clip(img, 0.0, 255.0)


def synth_scene(rng: np.random.Generator, side: int,
                theta: int) -> Tuple[Tensor, int]:
    """
    Synthetic scene rotated clockwise by theta quarter turns.

    Returns:
        (image [3, side, side], theta)
    """
    return rotate_image(synth_upright_scene(rng, side), theta), int(theta)


def synth_shape(rng: np.random.Generator, side: int,
                shape_class: int) -> Tuple[Tensor, int]:
    """One centered-ish shape of class `shape_class` on a noisy background."""
    _check_side(side)
    if shape_class not in range(len(SHAPE_CLASSES)):
        raise UsageError(f"shape class must be in 0..3, got {shape_class}")
    background = rng.uniform(40.0, 120.0)
    img = np.full((3, side, side), background, dtype=DTYPE)
    img += rng.normal(0.0, 8.0, size=img.shape).astype(DTYPE)
    radius = rng.uniform(side * 0.18, side * 0.3)
    margin = radius + 1
    cy = rng.uniform(margin, side - margin)
    cx = rng.uniform(margin, side - margin)
    color = rng.uniform(150.0, 250.0, size=3).astype(DTYPE)
    _draw_shape(img, SHAPE_CLASSES[shape_class], cy, cx, radius, color)
    return np.clip(img, 0.0, 255.0), int(shape_class)


def synth_shape_set(rng: np.random.Generator, count: int,
                    side: int) -> Tuple[np.ndarray, np.ndarray]:
    """Balanced shape dataset: images [count, 3, side, side], labels [count]."""
    labels = rng.permutation(np.arange(count) % len(SHAPE_CLASSES))
    images = np.stack([synth_shape(rng, side, int(c))[0] for c in labels]) \
        if count else np.zeros((0, 3, side, side), dtype=DTYPE)
    return images, labels.astype(np.int64)


def synth_upright_set(rng: np.random.Generator, count: int,
                      side: int) -> List[Tensor]:
    return [synth_upright_scene(rng, side) for _ in range(count)]


def write_synth_dataset(directory: str, count: int, side: int,
                        rng: np.random.Generator,
                        prefix: str = "scene") -> DatasetManifest:
    """
    Write `count` upright scenes as PPM files and return their manifest
    (all theta 0) with the mean RGB of the written images.
    """
    from orientnet.imageio import ImageFile, encode

    os.makedirs(directory, exist_ok=True)
    entries = []
    images = []
    for idx in range(count):
        img = np.round(synth_upright_scene(rng, side))
        path = os.path.join(directory, f"{prefix}_{idx:05d}.ppm")
        encode(ImageFile(img, None, "ppm"), path)
        entries.append(Sample(path, 0))
        images.append(img)
    mean = compute_mean_rgb(images) if images else None
    LOG.info(f"wrote {count} synthetic scenes to {directory}")
    return DatasetManifest(tuple(entries), mean, "synthetic")


class MemoryImages:
    """Path-addressable in-memory images, usable as a loader `load_fn`."""

    def __init__(self, images=None):
        self.images = dict(images or {})

    def __call__(self, path: str) -> Tensor:
        try:
            return self.images[path]
        except KeyError:
            raise DataError(f"no in-memory image {path!r}")

    def __len__(self):
        return len(self.images)


def synth_memory_dataset(rng: np.random.Generator, count: int, side: int,
                         prefix: str = "mem://scene"
                         ) -> Tuple[DatasetManifest, MemoryImages]:
    """Upright synthetic scenes kept in memory.

    Returns:
        (upright manifest with mean RGB, load_fn resolving its paths)
    """
    store = MemoryImages()
    entries = []
    for idx in range(count):
        path = f"{prefix}_{idx:05d}"
        store.images[path] = synth_upright_scene(rng, side)
        entries.append(Sample(path, 0))
    mean = compute_mean_rgb(store.images.values()) if count else None
    return DatasetManifest(tuple(entries), mean, "synthetic"), store

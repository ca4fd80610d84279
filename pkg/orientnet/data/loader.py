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
Mini-batch assembly.

Every sample gets its own random stream keyed by (seed, epoch, index), so
augmentation does not depend on which worker handles a sample or in which
order; the output of `batches` is identical for any thread count.
"""
from collections import OrderedDict
from threading import Lock
from typing import Callable, Iterator, Optional, Sequence, Tuple

import numpy as np
from ovos_utils.log import LOG

from orientnet.conf import AugmentConfig
from orientnet.data.manifest import DatasetManifest
from orientnet.data.transforms import (augment, preprocess, resize_image,
                                       rotate_image)
from orientnet.errors import EmptyManifestError, ShapeError, UsageError
from orientnet.tensor import DTYPE, Tensor
from orientnet.util import (STREAM_AUGMENT, STREAM_SHUFFLE, get_thread_count,
                            ordered_map, rng_stream)

Batch = Tuple[Tensor, np.ndarray, np.ndarray]

DEFAULT_CACHE_SIZE = 1024


class ImageCache:
    """
    Upright images by path, least recently used first out.

    Arguments:
        load_fn: path -> [3, H, W] image
        max_items: images kept in memory, unbounded when None
    """

    def __init__(self, load_fn: Callable[[str], Tensor],
                 max_items: Optional[int] = DEFAULT_CACHE_SIZE):
        if max_items is not None and max_items < 1:
            raise UsageError(f"cache size must be positive, got {max_items}")
        self.load_fn = load_fn
        self.max_items = max_items
        self._images: "OrderedDict[str, Tensor]" = OrderedDict()
        self._lock = Lock()

    def get(self, path: str) -> Tensor:
        with self._lock:
            img = self._images.get(path)
            if img is not None:
                self._images.move_to_end(path)
                return img
        img = np.asarray(self.load_fn(path), dtype=DTYPE)
        with self._lock:
            img = self._images.setdefault(path, img)
            self._images.move_to_end(path)
            while self.max_items is not None and len(self._images) > self.max_items:
                evicted, _ = self._images.popitem(last=False)
                LOG.debug(f"image cache full, dropped {evicted}")
        return img

    def __len__(self):
        with self._lock:
            return len(self._images)

    def clear(self):
        with self._lock:
            self._images.clear()


class _Batches:
    """Shared shuffling and batching over `sample(index, epoch, train)`."""
    seed = 0
    threads = 0

    def __len__(self):
        raise NotImplementedError

    @property
    def labels(self) -> np.ndarray:
        raise NotImplementedError

    def sample(self, index: int, epoch: int = 0, train: bool = False) -> Tensor:
        raise NotImplementedError

    def num_batches(self, batch_size: int) -> int:
        return -(-len(self) // batch_size)

    def order(self, epoch: int, shuffle: bool) -> np.ndarray:
        if not shuffle:
            return np.arange(len(self))
        return rng_stream(self.seed, STREAM_SHUFFLE, epoch).permutation(len(self))

    def batches(self, epoch: int, batch_size: int, shuffle: bool = False,
                train: bool = False) -> Iterator[Batch]:
        """
        Yield (x, labels, sample indices) batches.

        The last batch may be smaller than batch_size.
        """
        if batch_size < 1:
            raise UsageError(f"batch_size must be positive, got {batch_size}")
        order = self.order(epoch, shuffle)
        labels = self.labels
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            samples = ordered_map(lambda i: self.sample(int(i), epoch, train),
                                  idx, self.threads)
            LOG.debug(f"epoch {epoch}: batch at {start} with {len(idx)} samples")
            yield np.stack(samples).astype(DTYPE, copy=False), labels[idx], idx


class BatchLoader(_Batches):
    """
    Turns manifest entries into preprocessed [N, 3, side, side] batches.

    Per sample: load the upright file, rotate by theta, resize, augment
    (training batches only) and subtract the mean.

    Arguments:
        manifest: samples to serve
        load_fn: path -> [3, H, W] upright image on the 0..255 scale
        mean_rgb: channel means subtracted from every sample
        side: network input side, images are not resized when None
        input_scale: factor applied after mean subtraction
        augment_config: augmentation ranges, None disables augmentation
        seed: base seed for shuffling and augmentation streams
        threads: worker count, ORIENTNET_THREADS when None
        cache: keep decoded images in memory
        cache_size: most images kept when caching, unbounded when None
    """

    def __init__(self, manifest: DatasetManifest,
                 load_fn: Callable[[str], Tensor],
                 mean_rgb: Sequence[float], side: Optional[int] = None,
                 input_scale: float = 1.0,
                 augment_config: Optional[AugmentConfig] = None,
                 seed: int = 0, threads: Optional[int] = None,
                 cache: bool = True,
                 cache_size: Optional[int] = DEFAULT_CACHE_SIZE):
        if not len(manifest):
            raise EmptyManifestError(f"manifest {manifest.source} is empty")
        self.manifest = manifest
        self.mean_rgb = tuple(float(m) for m in mean_rgb)
        self.side = side
        self.input_scale = float(input_scale)
        self.augment_config = augment_config
        self.seed = int(seed)
        self.threads = get_thread_count() if threads is None else int(threads)
        self._load = ImageCache(load_fn, cache_size).get if cache else load_fn

    def __len__(self):
        return len(self.manifest)

    @property
    def labels(self) -> np.ndarray:
        return self.manifest.labels

    def sample(self, index: int, epoch: int = 0, train: bool = False) -> Tensor:
        """Preprocessed sample `index` as seen in `epoch`."""
        path, theta = self.manifest[index]
        img = rotate_image(np.asarray(self._load(path), dtype=DTYPE), theta)
        if self.side is not None and img.shape[1:] != (self.side, self.side):
            img = resize_image(img, self.side)
        if train and self.augment_config is not None:
            img = augment(img, rng_stream(self.seed, STREAM_AUGMENT, epoch, index),
                          self.augment_config)
        return preprocess(img, self.mean_rgb, None, self.input_scale)


class ArrayLoader(_Batches):
    """
    Batches over in-memory [N, 3, side, side] images with integer labels,
    for tasks without a manifest (auxiliary shape pre-training).
    """

    def __init__(self, images: np.ndarray, labels: Sequence[int],
                 mean_rgb: Sequence[float], input_scale: float = 1.0,
                 augment_config: Optional[AugmentConfig] = None,
                 seed: int = 0, threads: Optional[int] = None):
        images = np.asarray(images, dtype=DTYPE)
        labels = np.asarray(labels, dtype=np.int64)
        if not len(images):
            raise EmptyManifestError("no training images")
        if images.ndim != 4 or labels.shape != (images.shape[0],):
            raise ShapeError("images must be [N, 3, H, W] with N labels",
                             images.shape, labels.shape)
        self.images = images
        self._labels = labels
        self.mean_rgb = tuple(float(m) for m in mean_rgb)
        self.input_scale = float(input_scale)
        self.augment_config = augment_config
        self.seed = int(seed)
        self.threads = get_thread_count() if threads is None else int(threads)

    def __len__(self):
        return len(self.images)

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    def sample(self, index: int, epoch: int = 0, train: bool = False) -> Tensor:
        img = self.images[index]
        if train and self.augment_config is not None:
            img = augment(img, rng_stream(self.seed, STREAM_AUGMENT, epoch, index),
                          self.augment_config)
        return preprocess(img, self.mean_rgb, None, self.input_scale)

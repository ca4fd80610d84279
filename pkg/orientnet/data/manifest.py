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
Orientation labels and dataset manifests.

A manifest entry (path, theta) stands for the image at `path`, which is
stored upright, rotated clockwise by theta * 90 degrees. Rotation happens
when the image is loaded, so one upright file backs up to four samples.

On disk a manifest is JSON lines, one {"path": ..., "theta": ...} object
per line, plus a `<manifest>.meta.json` sidecar with mean_rgb and source.
"""
import enum
import math
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import orjson
from ovos_utils.log import LOG

from orientnet.errors import DataError, LabelError
from orientnet.util import dump_json, load_json

SIDECAR_SUFFIX = ".meta.json"


class Orientation(int, enum.Enum):
    """Clockwise rotation applied to the upright image."""
    UPRIGHT = 0
    CW90 = 1
    CW180 = 2
    CW270 = 3

    @property
    def degrees(self) -> int:
        return 90 * self.value

    @property
    def correction(self) -> int:
        """Clockwise quarter turns that bring the image back upright."""
        return (4 - self.value) % 4


def check_theta(value, index: Optional[int] = None) -> int:
    """Validate an orientation label, returning it as int."""
    if isinstance(value, (bool, np.bool_)):
        raise LabelError(value, index)
    try:
        theta = int(value)
    except (TypeError, ValueError):
        raise LabelError(value, index)
    if theta != value or theta not in (0, 1, 2, 3):
        raise LabelError(value, index)
    return theta


class Sample(NamedTuple):
    path: str
    theta: int


@dataclass(frozen=True)
class DatasetManifest:
    """Immutable list of (image path, orientation label) entries."""
    entries: Tuple[Sample, ...] = ()
    mean_rgb: Optional[Tuple[float, float, float]] = None
    source: str = "unknown"

    def __post_init__(self):
        entries = tuple(Sample(str(p), check_theta(t, i))
                        for i, (p, t) in enumerate(self.entries))
        object.__setattr__(self, "entries", entries)
        counts = Counter(entries)
        dupes = [e for e, c in counts.items() if c > 1]
        if dupes:
            raise DataError(f"duplicate manifest entry {dupes[0]}")
        if self.mean_rgb is not None:
            mean = tuple(float(m) for m in self.mean_rgb)
            if len(mean) != 3 or not all(math.isfinite(m) for m in mean):
                raise DataError(f"mean_rgb must be 3 finite values, got {self.mean_rgb}")
            object.__setattr__(self, "mean_rgb", mean)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.entries)

    def __getitem__(self, idx) -> Sample:
        return self.entries[idx]

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.theta for e in self.entries], dtype=np.int64)

    def class_counts(self) -> List[int]:
        counts = Counter(e.theta for e in self.entries)
        return [counts.get(t, 0) for t in range(4)]

    def sources(self) -> List[str]:
        """Distinct upright source paths, in first-seen order."""
        seen = {}
        for e in self.entries:
            if e.theta == 0:
                seen.setdefault(e.path, None)
        return list(seen)

    def paths(self) -> List[str]:
        seen = {}
        for e in self.entries:
            seen.setdefault(e.path, None)
        return list(seen)

    def with_mean(self, mean_rgb) -> 'DatasetManifest':
        return replace(self, mean_rgb=tuple(mean_rgb))

    def with_entries(self, entries, source: Optional[str] = None) -> 'DatasetManifest':
        return DatasetManifest(tuple(entries), self.mean_rgb,
                               source or self.source)

    def shuffled(self, rng: np.random.Generator) -> 'DatasetManifest':
        order = rng.permutation(len(self.entries))
        return self.with_entries(self.entries[i] for i in order)


def upright_manifest(paths: Sequence[str], source: str = "unknown",
                     mean_rgb=None) -> DatasetManifest:
    return DatasetManifest(tuple(Sample(p, 0) for p in paths), mean_rgb, source)


def expand_manifest(manifest: DatasetManifest) -> DatasetManifest:
    """
    Emit the four rotations of every upright entry.

    Raises:
        DataError if an input entry is not upright
    """
    entries = []
    for idx, entry in enumerate(manifest.entries):
        if entry.theta != 0:
            raise DataError(f"expand_manifest needs upright entries, "
                            f"sample {idx} ({entry.path}) has theta {entry.theta}")
        entries.extend(Sample(entry.path, theta) for theta in range(4))
    LOG.debug(f"expanded {len(manifest)} upright images into {len(entries)} samples")
    return DatasetManifest(tuple(entries), manifest.mean_rgb,
                           f"{manifest.source}:x4")


def split_manifest(manifest: DatasetManifest, fraction: float,
                   rng: np.random.Generator
                   ) -> Tuple[DatasetManifest, DatasetManifest]:
    """
    Split by source image so no image lands on both sides.

    Arguments:
        fraction: share of source images in the first manifest
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"split fraction must be in (0, 1), got {fraction}")
    paths = manifest.paths()
    order = rng.permutation(len(paths))
    cut = int(round(fraction * len(paths)))
    first = {paths[i] for i in order[:cut]}
    a = [e for e in manifest.entries if e.path in first]
    b = [e for e in manifest.entries if e.path not in first]
    return (DatasetManifest(tuple(a), manifest.mean_rgb, f"{manifest.source}:a"),
            DatasetManifest(tuple(b), manifest.mean_rgb, f"{manifest.source}:b"))


def save_manifest(manifest: DatasetManifest, path: str):
    """Write JSON lines plus the sidecar; paths below the manifest's
    directory are stored relative to it."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "wb") as f:
        for entry in manifest.entries:
            p = entry.path
            if os.path.isabs(p) and os.path.commonpath([base, p]) == base:
                p = os.path.relpath(p, base)
            f.write(orjson.dumps({"path": p, "theta": entry.theta}))
            f.write(b"\n")
    dump_json({"mean_rgb": list(manifest.mean_rgb) if manifest.mean_rgb else None,
               "source": manifest.source,
               "count": len(manifest)}, path + SIDECAR_SUFFIX)
    LOG.info(f"wrote manifest {path} ({len(manifest)} entries)")


def load_manifest(path: str) -> DatasetManifest:
    """Read a JSON lines manifest; relative paths resolve against the
    manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, "rb") as f:
        for lineno, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                obj = orjson.loads(line)
                p, theta = obj["path"], obj["theta"]
            except (orjson.JSONDecodeError, KeyError, TypeError) as e:
                raise DataError(f"{path}:{lineno + 1}: bad manifest line ({e})")
            if not os.path.isabs(p):
                p = os.path.join(base, p)
            entries.append(Sample(p, check_theta(theta, len(entries))))
    mean_rgb, source = None, os.path.basename(path)
    sidecar = path + SIDECAR_SUFFIX
    if os.path.isfile(sidecar):
        meta = load_json(sidecar)
        mean_rgb = meta.get("mean_rgb")
        source = meta.get("source") or source
    return DatasetManifest(tuple(entries), mean_rgb, source)

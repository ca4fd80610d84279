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
Test-set protocols.

BAL4   balanced over the four orientations
ORIG3  72% upright, 14% at 90 and 14% at 270 degrees, no 180
BAL3   34% upright, 33% at 90 and 33% at 270 degrees, no 180

Every protocol draws from a pool of upright source images, uses each
source at most once and assigns it one orientation.
"""
import enum
from typing import Dict, List, Optional

import numpy as np
from ovos_utils.log import LOG

from orientnet.data.manifest import DatasetManifest, Sample
from orientnet.errors import CapacityError, UsageError


class Protocol(str, enum.Enum):
    BAL4 = "bal4"
    ORIG3 = "orig3"
    BAL3 = "bal3"

    @property
    def proportions(self) -> Dict[int, float]:
        return PROTOCOL_PROPORTIONS[self]

    @staticmethod
    def parse(value) -> 'Protocol':
        if isinstance(value, Protocol):
            return value
        try:
            return Protocol(str(value).lower())
        except ValueError:
            raise UsageError(f"unknown protocol {value!r}, expected one of "
                             f"{[p.value for p in Protocol]}")


PROTOCOL_PROPORTIONS = {
    Protocol.BAL4: {0: 0.25, 1: 0.25, 2: 0.25, 3: 0.25},
    Protocol.ORIG3: {0: 0.72, 1: 0.14, 3: 0.14},
    Protocol.BAL3: {0: 0.34, 1: 0.33, 3: 0.33},
}


def class_counts(total: int, proportions: Dict[int, float]) -> Dict[int, int]:
    """
    Split `total` by proportions with the largest remainder method, so every
    class is within one image of its exact share.
    """
    exact = {k: total * p for k, p in proportions.items()}
    counts = {k: int(np.floor(v)) for k, v in exact.items()}
    left = total - sum(counts.values())
    by_remainder = sorted(proportions, key=lambda k: (-(exact[k] - counts[k]), k))
    for k in by_remainder[:left]:
        counts[k] += 1
    return counts


def sample_protocol(manifest: DatasetManifest, protocol,
                    rng: np.random.Generator,
                    size: Optional[int] = None) -> DatasetManifest:
    """
    Build a test manifest following a protocol.

    Arguments:
        manifest: pool of upright sources (entries with theta 0)
        protocol: Protocol or its name
        rng: generator for source selection and label assignment
        size: number of test images, all sources by default
    Raises:
        CapacityError when the pool has fewer sources than requested
        UsageError for a size below 1
    """
    protocol = Protocol.parse(protocol)
    sources = manifest.sources()
    if size is not None and int(size) <= 0:
        raise UsageError(f"test set size must be positive, got {size}")
    size = len(sources) if size is None else int(size)
    if size > len(sources) or size == 0:
        raise CapacityError(max(size, 1), len(sources), "upright sources")
    counts = class_counts(size, protocol.proportions)
    labels: List[int] = []
    for theta in sorted(counts):
        labels.extend([theta] * counts[theta])
    chosen = rng.permutation(len(sources))[:size]
    labels = rng.permutation(np.asarray(labels, dtype=np.int64))
    entries = tuple(Sample(sources[i], int(t)) for i, t in zip(chosen, labels))
    LOG.debug(f"{protocol.value}: sampled {size} images, counts {counts}")
    return DatasetManifest(entries, manifest.mean_rgb,
                           f"{manifest.source}:{protocol.value}")

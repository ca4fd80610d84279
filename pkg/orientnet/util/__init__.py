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
Small helpers shared by the data pipeline, trainer and command line.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar, Union

import numpy as np
import orjson
from ovos_utils.log import LOG

from orientnet.errors import UsageError

THREADS_ENV = "ORIENTNET_THREADS"

# purpose tags of the rng_stream key tuples
STREAM_SHUFFLE = 1
STREAM_AUGMENT = 2
STREAM_DROPOUT = 3
STREAM_SAMPLE = 4

T = TypeVar("T")
R = TypeVar("R")


def get_thread_count(default: int = 0) -> int:
    """
    Worker pool size from the environment.

    0 means single-threaded, deterministic mode.
    """
    value = os.environ.get(THREADS_ENV)
    if value is None or value.strip() == "":
        return default
    try:
        threads = int(value)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {value!r}")
    if threads < 0:
        raise UsageError(f"{THREADS_ENV} must be >= 0, got {threads}")
    return threads


def rng_stream(seed: int, *keys: int) -> np.random.Generator:
    """
    Independent random generator for a (seed, *keys) tuple.

    Streams keyed by sample index make results independent of the order
    in which samples are processed.
    """
    return np.random.default_rng([int(seed)] + [int(k) for k in keys])


def ordered_map(func: Callable[[T], R], items: Iterable[T],
                threads: int = 0) -> List[R]:
    """Apply func to every item, keeping input order.

    @param threads: pool size, 0 runs in the calling thread
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def dump_json(obj, path: str = None, indent: bool = True) -> bytes:
    """Serialize obj with orjson, optionally writing it to path."""
    option = orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_SORT_KEYS
    if indent:
        option |= orjson.OPT_INDENT_2
    data = orjson.dumps(obj, option=option)
    if path:
        with open(path, "wb") as f:
            f.write(data)
        LOG.debug(f"wrote {path}")
    return data


def load_json(source: Union[str, bytes]):
    """Load JSON from a file path or a raw bytes payload."""
    if isinstance(source, bytes):
        return orjson.loads(source)
    with open(source, "rb") as f:
        return orjson.loads(f.read())

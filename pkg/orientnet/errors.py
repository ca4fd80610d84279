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
Exceptions raised by orientnet.

Every error derives from OrientNetError and from one builtin family, so
callers can catch either. The three families map onto CLI exit codes:
usage problems exit 1, data problems exit 2, numeric failures exit 3.
"""
from typing import Optional, Sequence


class OrientNetError(Exception):
    """Base class of all orientnet errors."""
    exit_code = 1


class UsageError(OrientNetError, ValueError):
    """Invalid arguments, flags or call order."""
    exit_code = 1


class DataError(OrientNetError, ValueError):
    """Input data that cannot be processed."""
    exit_code = 2


class NumericError(OrientNetError, ArithmeticError):
    """NaN / Inf values surfaced during computation."""
    exit_code = 3


class ShapeError(DataError):
    """Tensor shapes do not compose."""

    def __init__(self, message: str, *shapes: Sequence[int]):
        if shapes:
            message = f"{message} (shapes: " + \
                      ", ".join(str(tuple(s)) for s in shapes) + ")"
        super().__init__(message)
        self.shapes = [tuple(s) for s in shapes]


class LabelError(DataError):
    """An orientation label outside {0, 1, 2, 3}."""

    def __init__(self, label, index: Optional[int] = None):
        where = f" at sample {index}" if index is not None else ""
        super().__init__(f"invalid orientation label {label!r}{where}")
        self.label = label
        self.index = index


class EmptyManifestError(DataError):
    """A manifest without entries where entries are required."""


class CapacityError(DataError):
    """Not enough source images to satisfy a request."""

    def __init__(self, requested: int, available: int, what: str = "sources"):
        super().__init__(f"requested {requested} {what} but only "
                         f"{available} available "
                         f"(short by {requested - available})")
        self.requested = requested
        self.available = available
        self.shortfall = requested - available


class UnsupportedOrientationError(DataError):
    """EXIF orientation that is not a pure rotation."""

    def __init__(self, value: int):
        super().__init__(f"EXIF orientation {value} involves mirroring and "
                         f"cannot be represented as a rotation")
        self.value = value


class ImageDecodeError(DataError):
    """Image file could not be decoded."""

    def __init__(self, message: str, path: Optional[str] = None,
                 offset: Optional[int] = None):
        if path:
            message = f"{path}: {message}"
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.path = path
        self.offset = offset


class UnknownFormatError(ImageDecodeError):
    """File signature does not match any supported format."""


class CorruptStreamError(ImageDecodeError):
    """Format recognized but the byte stream is damaged."""


class UnsupportedVariantError(ImageDecodeError):
    """Format recognized but the variant is not supported."""


class CheckpointError(DataError):
    """Checkpoint file could not be read."""


class BadMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint format version is unknown."""


class TruncatedCheckpointError(CheckpointError):
    """Checkpoint ended before all declared data was read."""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint tensors do not fit the network specification."""


class TrainingAborted(NumericError):
    """Training hit a non-finite loss or gradient.

    The last checkpoint with finite parameters is kept on the exception.
    """

    def __init__(self, message: str, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint

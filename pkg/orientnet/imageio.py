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
Image files and EXIF orientation.

Binary PPM (P6, 8 bit) is read and written natively and round-trips byte
for byte when written with the canonical header "P6\\n<w> <h>\\n255\\n".
PNG and baseline JPEG go through Pillow. Decoded pixels are raw: the EXIF
orientation is reported, never applied.
"""
import io
import os
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from PIL import Image, UnidentifiedImageError
from ovos_utils.log import LOG

from orientnet.data.manifest import check_theta
from orientnet.data.transforms import correct_image
from orientnet.errors import (CorruptStreamError, DataError,
                              UnknownFormatError, UnsupportedOrientationError,
                              UnsupportedVariantError, UsageError)
from orientnet.tensor import DTYPE, Tensor

ORIENTATION_TAG = 0x0112  # 274
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
JPEG_SIGNATURE = b"\xff\xd8"
JPEG_QUALITY = 95

# stored pixels = upright image rotated clockwise by theta
EXIF_TO_THETA = {1: 0, 6: 3, 3: 2, 8: 1}
THETA_TO_EXIF = {theta: tag for tag, theta in EXIF_TO_THETA.items()}
MIRRORED_EXIF = (2, 4, 5, 7)

EXTENSIONS = {".ppm": "ppm", ".png": "png", ".jpg": "jpeg", ".jpeg": "jpeg"}


@dataclass
class ImageFile:
    pixels: Tensor                     # [3, H, W] float32 in [0, 255]
    exif_orientation: Optional[int] = None
    format: str = "ppm"

    @property
    def size(self):
        return self.pixels.shape[2], self.pixels.shape[1]


class CorrectionResult(NamedTuple):
    path_out: str
    theta: int
    recompressed: bool


def exif_to_theta(exif_orientation) -> int:
    """
    Orientation label of the stored pixels for an EXIF orientation value.

    Raises:
        UnsupportedOrientationError for mirrored orientations (2, 4, 5, 7)
        DataError for values outside 1..8
    """
    try:
        value = int(exif_orientation)
    except (TypeError, ValueError):
        raise DataError(f"EXIF orientation must be an integer 1-8, "
                        f"got {exif_orientation!r}")
    if value != exif_orientation or not 1 <= value <= 8:
        raise DataError(f"EXIF orientation must be in 1-8, got {exif_orientation!r}")
    if value in MIRRORED_EXIF:
        raise UnsupportedOrientationError(value)
    return EXIF_TO_THETA[value]


def format_for_path(path: str) -> Optional[str]:
    return EXTENSIONS.get(os.path.splitext(path)[1].lower())


def output_format(path: str, fallback: str) -> str:
    """Format to write `path` in; paths without an extension use `fallback`."""
    ext = os.path.splitext(path)[1]
    if not ext:
        return fallback
    fmt = format_for_path(path)
    if fmt is None:
        raise UsageError(f"unsupported output format {ext!r} for {path}, "
                         f"expected one of {sorted(EXTENSIONS)}")
    return fmt


def _ppm_tokens(data: bytes, count: int, path: str):
    """Header tokens of a netpbm file, skipping comments; returns the
    tokens and the offset right after the last one."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() \
                and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise CorruptStreamError("truncated PPM header", path, pos)
        tokens.append((data[start:pos], start))
    return tokens, pos


def decode_ppm(data: bytes, path: Optional[str] = None) -> ImageFile:
    tokens, pos = _ppm_tokens(data, 4, path)
    (magic, _), *numbers = tokens
    if magic != b"P6":
        raise UnsupportedVariantError(f"netpbm variant {magic!r} is not "
                                      f"supported, only binary P6", path, 0)
    values = []
    for token, offset in numbers:
        if not token.isdigit():
            raise CorruptStreamError(f"bad PPM header field {token!r}", path, offset)
        values.append(int(token))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise CorruptStreamError(f"invalid PPM size {width}x{height}", path,
                                 numbers[0][1])
    if maxval != 255:
        raise UnsupportedVariantError(f"PPM maxval {maxval} is not supported, "
                                      f"only 8-bit (255)", path, numbers[2][1])
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise CorruptStreamError("missing whitespace after PPM header", path, pos)
    pos += 1
    expected = width * height * 3
    if len(data) - pos < expected:
        raise CorruptStreamError(f"PPM pixel data truncated: expected "
                                 f"{expected} bytes, found {len(data) - pos}",
                                 path, len(data))
    if len(data) - pos > expected:
        LOG.debug(f"{path}: ignoring {len(data) - pos - expected} trailing bytes")
    pixels = np.frombuffer(data, dtype=np.uint8, count=expected, offset=pos)
    pixels = pixels.reshape(height, width, 3).transpose(2, 0, 1).astype(DTYPE)
    return ImageFile(pixels, None, "ppm")


def _decode_pillow(data: bytes, fmt: str, path: Optional[str]) -> ImageFile:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except UnidentifiedImageError as e:
        raise CorruptStreamError(f"unreadable {fmt} stream ({e})", path)
    except (OSError, SyntaxError, ValueError) as e:
        raise CorruptStreamError(f"damaged {fmt} stream ({e})", path)
    if fmt == "jpeg" and (img.info.get("progressive") or img.info.get("progression")):
        raise UnsupportedVariantError("progressive JPEG is not supported", path)
    if img.mode in ("I", "I;16", "I;16B", "F"):
        raise UnsupportedVariantError(f"{fmt} mode {img.mode} is not supported, "
                                      f"only 8-bit images", path)
    orientation = img.getexif().get(ORIENTATION_TAG)
    if orientation is not None and not 1 <= int(orientation) <= 8:
        LOG.warning(f"{path}: ignoring invalid EXIF orientation {orientation}")
        orientation = None
    if img.mode != "RGB":
        img = img.convert("RGB")
    pixels = np.asarray(img, dtype=np.uint8).transpose(2, 0, 1).astype(DTYPE)
    return ImageFile(pixels, None if orientation is None else int(orientation), fmt)


def decode_bytes(data: bytes, path: Optional[str] = None) -> ImageFile:
    """Decode PPM, PNG or JPEG bytes by signature."""
    if data[:2] == b"P6":
        return decode_ppm(data, path)
    if len(data) >= 2 and data[:1] == b"P" and data[1:2] in b"123457":
        raise UnsupportedVariantError(f"netpbm variant {data[:2]!r} is not "
                                      f"supported, only binary P6", path, 0)
    if data[:8] == PNG_SIGNATURE:
        return _decode_pillow(data, "png", path)
    if data[:2] == JPEG_SIGNATURE:
        return _decode_pillow(data, "jpeg", path)
    raise UnknownFormatError(f"unknown file signature {data[:8]!r}", path, 0)


def decode(path: str) -> ImageFile:
    with open(path, "rb") as f:
        data = f.read()
    return decode_bytes(data, path)


def load_pixels(path: str) -> Tensor:
    """Raw [3, H, W] pixels of an image file."""
    return decode(path).pixels


def _to_uint8(pixels: Tensor) -> np.ndarray:
    pixels = np.asarray(pixels)
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise DataError(f"expected a [3, H, W] image, got {pixels.shape}")
    return np.clip(np.round(pixels), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def encode_bytes(image: ImageFile, fmt: Optional[str] = None) -> bytes:
    fmt = fmt or image.format
    rgb = _to_uint8(image.pixels)
    if fmt == "ppm":
        height, width = rgb.shape[:2]
        return f"P6\n{width} {height}\n255\n".encode("ascii") + rgb.tobytes()
    if fmt not in ("png", "jpeg"):
        raise UsageError(f"unsupported output format {fmt!r}")
    out = io.BytesIO()
    img = Image.fromarray(rgb, mode="RGB")
    if fmt == "png":
        img.save(out, format="PNG")
    else:
        kwargs = {"quality": JPEG_QUALITY}
        if image.exif_orientation is not None:
            exif = Image.Exif()
            exif[ORIENTATION_TAG] = int(image.exif_orientation)
            kwargs["exif"] = exif.tobytes()
        img.save(out, format="JPEG", **kwargs)
    return out.getvalue()


def encode(image: ImageFile, path: str, fmt: Optional[str] = None):
    """Write an image; the format comes from `fmt`, the path extension or
    the image's own format tag, in that order. An unknown extension is a
    usage error."""
    fmt = fmt or output_format(path, image.format)
    data = encode_bytes(image, fmt)
    try:
        with open(path, "wb") as f:
            f.write(data)
    except OSError as e:
        raise DataError(f"cannot write {path} ({e})")
    LOG.debug(f"wrote {fmt} image {path}")


def correct_file(path_in: str, path_out: str, theta: int) -> CorrectionResult:
    """
    Write the upright version of an image stored with orientation theta.

    The pixels are rotated clockwise by (4 - theta) % 4 and any EXIF
    orientation is reset to 1. PPM stays lossless; JPEG output is
    re-encoded at quality 95 and flagged as recompressed.
    """
    theta = check_theta(theta)
    fmt = output_format(path_out, "")
    image = decode(path_in)
    fmt = fmt or image.format
    upright = ImageFile(correct_image(image.pixels, theta),
                        1 if fmt == "jpeg" else None, fmt)
    encode(upright, path_out, fmt)
    recompressed = fmt == "jpeg"
    if recompressed:
        LOG.warning(f"{path_out}: JPEG re-encoded at quality {JPEG_QUALITY}")
    LOG.info(f"corrected {path_in} (theta {theta}) -> {path_out}")
    return CorrectionResult(path_out, theta, recompressed)

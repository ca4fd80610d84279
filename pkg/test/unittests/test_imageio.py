import os
import unittest
from tempfile import TemporaryDirectory

import numpy as np

PIXELS_2X2 = bytes([255, 0, 0, 0, 255, 0,
                    0, 0, 255, 255, 255, 255])


def pattern(h=6, w=10):
    rng = np.random.default_rng(0)
    return rng.integers(0, 256, (3, h, w)).astype(np.float32)


class TestExif(unittest.TestCase):
    def test_mapping(self):
        from orientnet.imageio import exif_to_theta
        self.assertEqual(exif_to_theta(1), 0)
        self.assertEqual(exif_to_theta(6), 3)
        self.assertEqual(exif_to_theta(3), 2)
        self.assertEqual(exif_to_theta(8), 1)

    def test_invalid(self):
        from orientnet.imageio import exif_to_theta
        from orientnet.errors import DataError, UnsupportedOrientationError
        for mirrored in (2, 4, 5, 7):
            with self.assertRaises(UnsupportedOrientationError):
                exif_to_theta(mirrored)
        for bad in (0, 9, 2.5, "six", None):
            with self.assertRaises(DataError):
                exif_to_theta(bad)


class TestPPM(unittest.TestCase):
    def test_decode_by_hand(self):
        from orientnet.imageio import decode_bytes
        image = decode_bytes(b"P6\n2 2\n255\n" + PIXELS_2X2)
        self.assertEqual(image.format, "ppm")
        self.assertIsNone(image.exif_orientation)
        self.assertEqual(image.pixels.shape, (3, 2, 2))
        self.assertEqual(image.size, (2, 2))
        self.assertEqual(image.pixels[:, 0, 0].tolist(), [255, 0, 0])
        self.assertEqual(image.pixels[:, 0, 1].tolist(), [0, 255, 0])
        self.assertEqual(image.pixels[:, 1, 0].tolist(), [0, 0, 255])
        self.assertEqual(image.pixels[:, 1, 1].tolist(), [255, 255, 255])

    def test_header_comments_and_whitespace(self):
        from orientnet.imageio import decode_bytes
        data = b"P6 # made by hand\n2\t2 # size\n255\n" + PIXELS_2X2
        self.assertEqual(decode_bytes(data).pixels[:, 1, 0].tolist(), [0, 0, 255])

    def test_byte_exact_round_trip(self):
        from orientnet.imageio import decode_bytes, encode_bytes
        data = b"P6\n2 2\n255\n" + PIXELS_2X2
        self.assertEqual(encode_bytes(decode_bytes(data)), data)

    def test_errors(self):
        from orientnet.imageio import decode_bytes
        from orientnet.errors import (CorruptStreamError, UnknownFormatError,
                                      UnsupportedVariantError)
        with self.assertRaises(UnsupportedVariantError):
            decode_bytes(b"P3\n2 2\n255\n0 0 0")
        with self.assertRaises(UnsupportedVariantError):
            decode_bytes(b"P6\n2 2\n65535\n" + PIXELS_2X2 * 2)
        with self.assertRaises(CorruptStreamError) as ctx:
            decode_bytes(b"P6\n2 2\n255\n" + PIXELS_2X2[:-1])
        self.assertIsNotNone(ctx.exception.offset)
        with self.assertRaises(CorruptStreamError):
            decode_bytes(b"P6\n2 x\n255\n" + PIXELS_2X2)
        with self.assertRaises(CorruptStreamError):
            decode_bytes(b"P6\n0 2\n255\n")
        with self.assertRaises(CorruptStreamError):
            decode_bytes(b"P6\n2 2")
        with self.assertRaises(UnknownFormatError) as ctx:
            decode_bytes(b"GIF89a....")
        self.assertEqual(ctx.exception.offset, 0)


class TestPillowFormats(unittest.TestCase):
    def test_png_is_lossless(self):
        from orientnet.imageio import ImageFile, decode_bytes, encode_bytes
        pixels = pattern()
        image = decode_bytes(encode_bytes(ImageFile(pixels, None, "png")))
        self.assertEqual(image.format, "png")
        np.testing.assert_array_equal(image.pixels, pixels)

    def test_jpeg_exif_is_reported_not_applied(self):
        from orientnet.imageio import ImageFile, decode_bytes, encode_bytes
        data = encode_bytes(ImageFile(pattern(8, 16), 6, "jpeg"))
        image = decode_bytes(data, "photo.jpg")
        self.assertEqual(image.format, "jpeg")
        self.assertEqual(image.exif_orientation, 6)
        self.assertEqual(image.pixels.shape, (3, 8, 16))

    def test_damaged_png(self):
        from orientnet.imageio import ImageFile, decode_bytes, encode_bytes
        from orientnet.errors import CorruptStreamError
        data = encode_bytes(ImageFile(pattern(), None, "png"))
        with self.assertRaises(CorruptStreamError):
            decode_bytes(data[:40])

    def test_unknown_output_format(self):
        from orientnet.imageio import ImageFile, encode_bytes
        from orientnet.errors import DataError, UsageError
        with self.assertRaises(UsageError):
            encode_bytes(ImageFile(pattern(), None, "gif"))
        with self.assertRaises(DataError):
            encode_bytes(ImageFile(np.zeros((1, 4, 4)), None, "ppm"))


class TestFiles(unittest.TestCase):
    def test_encode_decode_file(self):
        from orientnet.imageio import ImageFile, decode, encode, format_for_path
        self.assertEqual(format_for_path("a/B.JPEG"), "jpeg")
        self.assertIsNone(format_for_path("a.gif"))
        with TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "x.ppm")
            encode(ImageFile(pattern(), None, "png"), path)
            with open(path, "rb") as f:
                self.assertEqual(f.read(2), b"P6")
            np.testing.assert_array_equal(decode(path).pixels, pattern())

    def test_correct_ppm(self):
        from orientnet.data.transforms import rotate_image
        from orientnet.imageio import ImageFile, correct_file, encode, load_pixels
        upright = pattern(4, 7)
        with TemporaryDirectory() as tmp:
            src = os.path.join(tmp, "rotated.ppm")
            dst = os.path.join(tmp, "fixed.ppm")
            encode(ImageFile(rotate_image(upright, 1), None, "ppm"), src)
            result = correct_file(src, dst, 1)
            self.assertEqual(result.theta, 1)
            self.assertFalse(result.recompressed)
            np.testing.assert_array_equal(load_pixels(dst), upright)

    def test_correct_jpeg(self):
        from orientnet.imageio import (ImageFile, correct_file, decode, encode,
                                       exif_to_theta)
        with TemporaryDirectory() as tmp:
            src = os.path.join(tmp, "photo.jpg")
            dst = os.path.join(tmp, "upright.jpg")
            encode(ImageFile(pattern(8, 16), 6, "jpeg"), src)
            theta = exif_to_theta(decode(src).exif_orientation)
            result = correct_file(src, dst, theta)
            self.assertTrue(result.recompressed)
            fixed = decode(dst)
            self.assertEqual(fixed.exif_orientation, 1)
            self.assertEqual(fixed.pixels.shape, (3, 16, 8))

    def test_unsupported_output_extension(self):
        from orientnet.imageio import (ImageFile, correct_file, encode,
                                       output_format)
        from orientnet.errors import UsageError
        self.assertEqual(output_format("a/out.PNG", "ppm"), "png")
        self.assertEqual(output_format("a/out", "jpeg"), "jpeg")
        with TemporaryDirectory() as tmp:
            src = os.path.join(tmp, "a.ppm")
            dst = os.path.join(tmp, "a.bmp")
            encode(ImageFile(pattern(), None, "ppm"), src)
            with self.assertRaises(UsageError) as ctx:
                correct_file(src, dst, 1)
            self.assertIn("unsupported output format", str(ctx.exception))
            self.assertEqual(ctx.exception.exit_code, 1)
            self.assertFalse(os.path.exists(dst))
            with self.assertRaises(UsageError):
                encode(ImageFile(pattern(), None, "ppm"), dst)
            self.assertFalse(os.path.exists(dst))

            bare = os.path.join(tmp, "fixed")
            self.assertFalse(correct_file(src, bare, 1).recompressed)
            with open(bare, "rb") as f:
                self.assertEqual(f.read(2), b"P6")

    def test_correct_bad_theta(self):
        from orientnet.imageio import correct_file
        from orientnet.errors import LabelError
        with self.assertRaises(LabelError):
            correct_file("in.ppm", "out.ppm", 5)

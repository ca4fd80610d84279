import unittest

import numpy as np


def dataset(count=6, side=32):
    from orientnet.data.manifest import expand_manifest
    from orientnet.data.synth import synth_memory_dataset
    upright, load = synth_memory_dataset(np.random.default_rng(0), count, side)
    return expand_manifest(upright), load


class TestImageCache(unittest.TestCase):
    def test_loads_once(self):
        from orientnet.data.loader import ImageCache
        calls = []

        def load(path):
            calls.append(path)
            return np.zeros((3, 2, 2))

        cache = ImageCache(load)
        a = cache.get("a")
        self.assertIs(cache.get("a"), a)
        self.assertEqual(a.dtype, np.float32)
        self.assertEqual(calls, ["a"])
        self.assertEqual(len(cache), 1)
        cache.clear()
        self.assertEqual(len(cache), 0)

    def test_evicts_least_recently_used(self):
        from orientnet.data.loader import DEFAULT_CACHE_SIZE, ImageCache
        from orientnet.errors import UsageError
        calls = []

        def load(path):
            calls.append(path)
            return np.zeros((3, 2, 2))

        cache = ImageCache(load, max_items=2)
        cache.get("a")
        cache.get("b")
        cache.get("a")
        cache.get("c")
        self.assertEqual(len(cache), 2)
        # "b" was the oldest entry, "a" stays
        cache.get("a")
        self.assertEqual(calls, ["a", "b", "c"])
        cache.get("b")
        self.assertEqual(calls, ["a", "b", "c", "b"])
        self.assertEqual(len(cache), 2)

        self.assertEqual(ImageCache(load).max_items, DEFAULT_CACHE_SIZE)
        unbounded = ImageCache(load, max_items=None)
        for i in range(DEFAULT_CACHE_SIZE + 5):
            unbounded.get(str(i))
        self.assertEqual(len(unbounded), DEFAULT_CACHE_SIZE + 5)
        with self.assertRaises(UsageError):
            ImageCache(load, max_items=0)

    def test_loader_cache_is_capped(self):
        from orientnet.data.loader import BatchLoader
        m, load = dataset(count=6)
        calls = []

        def counting_load(path):
            calls.append(path)
            return load(path)

        loader = BatchLoader(m, counting_load, m.mean_rgb, threads=0,
                             cache_size=2)
        list(loader.batches(0, 8))
        list(loader.batches(1, 8))
        # 6 scenes do not fit a 2-image cache, so the second pass reloads
        self.assertGreater(len(calls), 6)
        self.assertEqual(len(set(calls)), 6)


class TestBatchLoader(unittest.TestCase):
    def test_batches(self):
        from orientnet.data.loader import BatchLoader
        m, load = dataset()
        loader = BatchLoader(m, load, m.mean_rgb, threads=0)
        self.assertEqual(loader.num_batches(10), 3)
        batches = list(loader.batches(0, 10))
        self.assertEqual([len(y) for _, y, _ in batches], [10, 10, 4])
        x, y, idx = batches[0]
        self.assertEqual(x.shape, (10, 3, 32, 32))
        self.assertEqual(x.dtype, np.float32)
        np.testing.assert_array_equal(y, m.labels[:10])
        np.testing.assert_array_equal(idx, np.arange(10))

    def test_rotation_and_mean(self):
        from orientnet.data.loader import BatchLoader
        from orientnet.data.transforms import preprocess, rotate_image
        m, load = dataset()
        loader = BatchLoader(m, load, m.mean_rgb, input_scale=0.5, threads=0)
        for index in range(4):
            path, theta = m[index]
            expected = preprocess(rotate_image(load(path), theta), m.mean_rgb,
                                  input_scale=0.5)
            np.testing.assert_array_equal(loader.sample(index), expected)

    def test_resize(self):
        from orientnet.data.loader import BatchLoader
        m, load = dataset(side=40)
        loader = BatchLoader(m, load, m.mean_rgb, side=32, threads=0)
        self.assertEqual(loader.sample(1).shape, (3, 32, 32))

    def test_shuffle(self):
        from orientnet.data.loader import BatchLoader
        m, load = dataset()
        loader = BatchLoader(m, load, m.mean_rgb, seed=4, threads=0)
        first = loader.order(0, shuffle=True)
        self.assertEqual(sorted(first.tolist()), list(range(len(m))))
        np.testing.assert_array_equal(first, loader.order(0, shuffle=True))
        self.assertFalse(np.array_equal(first, loader.order(1, shuffle=True)))
        np.testing.assert_array_equal(loader.order(3, shuffle=False),
                                      np.arange(len(m)))

    def test_augmentation_only_in_training(self):
        from orientnet.conf import DEFAULT_AUGMENT
        from orientnet.data.loader import BatchLoader
        m, load = dataset()
        loader = BatchLoader(m, load, m.mean_rgb, augment_config=DEFAULT_AUGMENT,
                             threads=0)
        plain = BatchLoader(m, load, m.mean_rgb, threads=0)
        np.testing.assert_array_equal(loader.sample(2, 0, train=False),
                                      plain.sample(2))
        self.assertFalse(np.array_equal(loader.sample(2, 0, train=True),
                                        plain.sample(2)))
        np.testing.assert_array_equal(loader.sample(2, 0, train=True),
                                      loader.sample(2, 0, train=True))
        self.assertFalse(np.array_equal(loader.sample(2, 0, train=True),
                                        loader.sample(2, 1, train=True)))

    def test_thread_count_does_not_change_batches(self):
        from orientnet.conf import DEFAULT_AUGMENT
        from orientnet.data.loader import BatchLoader
        m, load = dataset()
        runs = []
        for threads in (0, 1, 4):
            loader = BatchLoader(m, load, m.mean_rgb,
                                 augment_config=DEFAULT_AUGMENT, seed=2,
                                 threads=threads)
            runs.append(list(loader.batches(1, 7, shuffle=True, train=True)))
        for other in runs[1:]:
            self.assertEqual(len(other), len(runs[0]))
            for (x0, y0, i0), (x1, y1, i1) in zip(runs[0], other):
                np.testing.assert_array_equal(x0, x1)
                np.testing.assert_array_equal(y0, y1)
                np.testing.assert_array_equal(i0, i1)

    def test_errors(self):
        from orientnet.data.loader import BatchLoader
        from orientnet.data.manifest import DatasetManifest
        from orientnet.errors import EmptyManifestError, UsageError
        m, load = dataset()
        with self.assertRaises(EmptyManifestError):
            BatchLoader(DatasetManifest(), load, (0, 0, 0))
        loader = BatchLoader(m, load, m.mean_rgb, threads=0)
        with self.assertRaises(UsageError):
            next(loader.batches(0, 0))


class TestArrayLoader(unittest.TestCase):
    def test_batches(self):
        from orientnet.data.loader import ArrayLoader
        images = np.random.default_rng(0).uniform(0, 255, (5, 3, 32, 32))
        loader = ArrayLoader(images, [0, 1, 2, 3, 0], (100, 100, 100), threads=0)
        self.assertEqual(len(loader), 5)
        batches = list(loader.batches(0, 2))
        self.assertEqual(len(batches), 3)
        np.testing.assert_allclose(batches[0][0][1], images[1] - 100, atol=1e-3)
        self.assertEqual(batches[2][1].tolist(), [0])

    def test_errors(self):
        from orientnet.data.loader import ArrayLoader
        from orientnet.errors import EmptyManifestError, ShapeError
        with self.assertRaises(EmptyManifestError):
            ArrayLoader(np.zeros((0, 3, 4, 4)), [], (0, 0, 0))
        with self.assertRaises(ShapeError):
            ArrayLoader(np.zeros((2, 3, 4, 4)), [0], (0, 0, 0))
        with self.assertRaises(ShapeError):
            ArrayLoader(np.zeros((2, 4, 4)), [0, 1], (0, 0, 0))

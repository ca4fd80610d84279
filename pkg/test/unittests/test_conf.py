import os
import unittest
from tempfile import TemporaryDirectory
from unittest.mock import patch


class TestTrainConfig(unittest.TestCase):
    def test_defaults_and_replace(self):
        from orientnet.conf import DESK_TRAIN_CONFIG, TrainConfig
        config = TrainConfig()
        self.assertEqual(config.global_lr_schedule, ((0, 0.01),))
        changed = DESK_TRAIN_CONFIG.replace(max_epochs=3)
        self.assertEqual(changed.max_epochs, 3)
        self.assertEqual(DESK_TRAIN_CONFIG.max_epochs, 20)

    def test_dict_round_trip(self):
        from orientnet.conf import FULL_TRAIN_CONFIG, TrainConfig
        data = FULL_TRAIN_CONFIG.to_dict()
        self.assertEqual(data["global_lr_schedule"], [[0, 5e-4], [10, 5e-3]])
        self.assertEqual(TrainConfig.from_dict(data), FULL_TRAIN_CONFIG)

    def test_full_finetune_rates(self):
        from orientnet.conf import FULL_TRAIN_CONFIG
        from orientnet.layers import Conv2D, FullyConnected
        from orientnet.netspec import conv, fully_connected
        from orientnet.trainer import effective_lr, lr_at_epoch
        schedule = FULL_TRAIN_CONFIG.global_lr_schedule
        conv4 = Conv2D(conv("conv4", 384, 3, pad=1))
        conv3 = Conv2D(conv("conv3", 384, 3, pad=1))
        fc6 = FullyConnected(fully_connected("fc6", 4096))
        start = lr_at_epoch(schedule, 0)
        self.assertAlmostEqual(effective_lr(conv4, start, FULL_TRAIN_CONFIG), 0.01)
        self.assertAlmostEqual(effective_lr(fc6, start, FULL_TRAIN_CONFIG), 5e-4)
        self.assertAlmostEqual(effective_lr(conv3, start, FULL_TRAIN_CONFIG), 5e-4)
        # the step at epoch 10 scales every layer by the same factor
        later = lr_at_epoch(schedule, 10)
        self.assertAlmostEqual(effective_lr(conv4, later, FULL_TRAIN_CONFIG), 0.1)
        self.assertAlmostEqual(effective_lr(fc6, later, FULL_TRAIN_CONFIG), 5e-3)

    def test_invalid(self):
        from orientnet.conf import TrainConfig
        from orientnet.errors import UsageError
        with self.assertRaises(UsageError):
            TrainConfig.from_dict({"max_epochs": 3, "epochs": 4})
        bad = [{"momentum": 1.0}, {"batch_size": 0}, {"weight_decay": -1},
               {"global_lr_schedule": ()},
               {"global_lr_schedule": ((0, 0.1), (0, 0.2))},
               {"global_lr_schedule": ((0, 0.0),)},
               {"layer_lr": {"fc1": -1}}, {"max_epochs": 0},
               {"plateau_patience": 0}]
        for kwargs in bad:
            with self.assertRaises(UsageError, msg=str(kwargs)):
                TrainConfig(**kwargs)


class TestConfigLoader(unittest.TestCase):
    @patch("orientnet.conf.Configuration")
    def test_load_train_config(self, configuration):
        from orientnet.conf import FULL_TRAIN_CONFIG, load_train_config
        # Test values from configuration
        configuration.return_value = {"orientnet": {"train": {
            "max_epochs": 7, "batch_size": 16, "unrelated": True}}}
        config = load_train_config()
        self.assertEqual(config.max_epochs, 7)
        self.assertEqual(config.batch_size, 16)
        self.assertEqual(config.momentum, 0.9)

        # Test overrides, None is ignored
        config = load_train_config(max_epochs=2, batch_size=None)
        self.assertEqual(config.max_epochs, 2)
        self.assertEqual(config.batch_size, 16)

        # Test base
        configuration.return_value = {}
        config = load_train_config(FULL_TRAIN_CONFIG)
        self.assertEqual(config, FULL_TRAIN_CONFIG)

        # Test invalid config
        configuration.return_value = {"orientnet": {"train": {"momentum": 2}}}
        from orientnet.errors import UsageError
        with self.assertRaises(UsageError):
            load_train_config()

    @patch("orientnet.conf.Configuration")
    def test_unreadable_configuration(self, configuration):
        from orientnet.conf import DESK_TRAIN_CONFIG, load_train_config
        configuration.side_effect = RuntimeError("no config")
        self.assertEqual(load_train_config(), DESK_TRAIN_CONFIG)

    @patch("orientnet.conf.Configuration")
    def test_load_augment_config(self, configuration):
        from orientnet.conf import DEFAULT_AUGMENT, load_augment_config
        from orientnet.errors import UsageError
        configuration.return_value = {}
        self.assertEqual(load_augment_config(), DEFAULT_AUGMENT)

        configuration.return_value = {"orientnet": {"augment": {
            "noise_sigma": 3, "contrast_range": [0.9, 1.1]}}}
        aug = load_augment_config(brightness_delta=4)
        self.assertEqual(aug.noise_sigma, 3.0)
        self.assertEqual(aug.contrast_range, (0.9, 1.1))
        self.assertEqual(aug.brightness_delta, 4.0)

        for bad in ({"brightness_delta": -1}, {"noise_sigma": -0.5},
                    {"contrast_range": (1.2, 0.8)},
                    {"contrast_range": (0.0, 1.0)}):
            with self.assertRaises(UsageError):
                load_augment_config(**bad)

    @patch("orientnet.conf.Configuration")
    def test_load_lrn_config(self, configuration):
        from orientnet.conf import DEFAULT_LRN, load_lrn_config
        from orientnet.errors import UsageError
        configuration.return_value = {"orientnet": {"lrn": {"k": 1.0}}}
        lrn = load_lrn_config()
        self.assertEqual(lrn.k, 1.0)
        self.assertEqual(lrn.depth_radius, DEFAULT_LRN.depth_radius)
        self.assertEqual(load_lrn_config(depth_radius=2).depth_radius, 2)
        with self.assertRaises(UsageError):
            load_lrn_config(beta=0)
        with self.assertRaises(UsageError):
            load_lrn_config(depth_radius=-1)


class TestConfigFile(unittest.TestCase):
    def test_config_from_file(self):
        from orientnet.conf import config_from_file
        from orientnet.errors import UsageError
        from orientnet.util import dump_json
        with TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "conf.json")
            dump_json({"train": {"max_epochs": 4}}, path)
            self.assertEqual(config_from_file(path),
                             {"train": {"max_epochs": 4}})
            self.assertEqual(config_from_file(path, "train"), {"max_epochs": 4})
            self.assertEqual(config_from_file(path, "predict"), {})
            dump_json([1, 2], path)
            with self.assertRaises(UsageError):
                config_from_file(path)

    def test_schedule_from_strings(self):
        from orientnet.conf import schedule_from_strings
        from orientnet.errors import UsageError
        self.assertEqual(schedule_from_strings(["0:5e-4", "10:5e-3"]),
                         ((0, 5e-4), (10, 5e-3)))
        for bad in ("0", "a:0.1", "0:0.1:2"):
            with self.assertRaises(UsageError):
                schedule_from_strings([bad])

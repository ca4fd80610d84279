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
SGD with momentum, learning-rate schedules and the epoch loop.

Trainer events (pyee):
    "epoch"  EpochStats after every completed epoch
    "stop"   dict(reason, epoch, best_epoch) when training ends
    "abort"  dict(message, epoch, batch) before TrainingAborted is raised
"""
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from ovos_utils.log import LOG
from pyee import EventEmitter

from orientnet.conf import AugmentConfig, DEFAULT_AUGMENT, TrainConfig
from orientnet.data.loader import ArrayLoader, BatchLoader
from orientnet.data.manifest import DatasetManifest
from orientnet.data.transforms import compute_mean_rgb, manifest_mean_rgb
from orientnet.errors import (CheckpointMismatchError, EmptyManifestError,
                              NumericError, TrainingAborted, UsageError)
from orientnet.layers import Layer, Network, cross_entropy_loss
from orientnet.netspec import Checkpoint, NetworkSpec, init_weights
from orientnet.tensor import DTYPE, Tensor
from orientnet.util import STREAM_DROPOUT, rng_stream

HISTORY_COLUMNS = ["epoch", "lr", "train_loss", "val_loss", "val_acc"]
FINETUNE_STRATEGIES = ("conv45", "fc_only")


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at_epoch(schedule: Sequence[Tuple[int, float]], epoch: int) -> float:
    """Piecewise-constant lookup: the rate of the last entry starting at
    or before `epoch`."""
    if epoch < 0:
        raise UsageError(f"epoch must be >= 0, got {epoch}")
    if not schedule:
        raise UsageError("empty learning rate schedule")
    rate = schedule[0][1]
    for start, value in schedule:
        if start > epoch:
            break
        rate = value
    return float(rate)


def effective_lr(layer: Layer, lr_global: float, config: TrainConfig) -> float:
    multiplier = config.layer_lr.get(layer.name, layer.lr_multiplier)
    return float(lr_global) * float(multiplier)


def sgd_step(layers: Iterable[Layer], lr_global: float, config: TrainConfig,
             batch_index: Optional[int] = None) -> List[str]:
    """
    One momentum update over every trainable layer.

        v <- momentum * v - lr_eff * (grad + weight_decay * w)
        w <- w + v

    Frozen layers and layers with lr_eff == 0 are left untouched.

    Returns:
        names of the updated layers
    Raises:
        NumericError naming the layer and batch when a gradient is not
        finite; no parameter is modified in that case
    """
    active = []
    for layer in layers:
        if not layer.params or layer.frozen:
            continue
        lr_eff = effective_lr(layer, lr_global, config)
        if lr_eff == 0.0:
            continue
        for key, grad in layer.grads.items():
            if not np.isfinite(grad).all():
                where = f" at batch {batch_index}" if batch_index is not None else ""
                raise NumericError(f"non-finite gradient in {layer.name}.{key}{where}")
        active.append((layer, lr_eff))

    momentum = DTYPE(config.momentum)
    decay = DTYPE(config.weight_decay)
    for layer, lr_eff in active:
        lr = DTYPE(lr_eff)
        for key, w in layer.params.items():
            v = layer.velocity.get(key)
            if v is None:
                v = layer.velocity[key] = np.zeros_like(w)
            step = layer.grads[key] + decay * w if decay else layer.grads[key]
            v *= momentum
            v -= lr * step
            w += v
    return [layer.name for layer, _ in active]


def _accuracy(z: Tensor, labels: np.ndarray) -> int:
    return int((np.argmax(z, axis=1) == labels).sum())


class Trainer:
    """
    Mini-batch training with validation-plateau stopping.

    The best-validation parameters are returned; training stops after
    max_epochs or once validation loss went plateau_patience epochs
    without improving by more than plateau_threshold.

    Arguments:
        config: optimizer and stopping settings
        augment_config: augmentation ranges for training batches, used
            when config.augment is set
        threads: loader worker count, ORIENTNET_THREADS when None
        emitter: pyee emitter receiving the lifecycle events
    """

    def __init__(self, config: TrainConfig,
                 augment_config: Optional[AugmentConfig] = DEFAULT_AUGMENT,
                 threads: Optional[int] = None,
                 emitter: Optional[EventEmitter] = None):
        self.config = config
        self.augment_config = augment_config if config.augment else None
        self.threads = threads
        self.emitter = emitter or EventEmitter()
        self.history: List[EpochStats] = []

    def on(self, event: str, handler: Callable):
        self.emitter.on(event, handler)

    def _checkpoint(self, network: Network, params, metadata: dict,
                    epoch: int) -> Checkpoint:
        meta = dict(metadata)
        meta.update(epoch=epoch, seed=self.config.seed,
                    train_config=self.config.to_dict())
        return Checkpoint(network.spec, params, meta)

    def _abort(self, message: str, epoch: int, batch: Optional[int],
               checkpoint: Checkpoint):
        LOG.error(f"training aborted: {message}")
        self.emitter.emit("abort", {"message": message, "epoch": epoch,
                                    "batch": batch})
        raise TrainingAborted(message, checkpoint)

    def _validate(self, network: Network, loader, epoch: int) -> Tuple[float, float]:
        total, correct, count = 0.0, 0, 0
        for x, y, _ in loader.batches(epoch, self.config.batch_size):
            z = network.forward(x, train=False)
            loss, _ = cross_entropy_loss(z, y)
            total += loss * len(y)
            correct += _accuracy(z, y)
            count += len(y)
        return total / count, correct / count

    def fit(self, network: Network, train_loader, val_loader,
            metadata: Optional[dict] = None) -> Tuple[Checkpoint, List[EpochStats]]:
        """
        Train `network` in place on prepared loaders.

        Returns:
            (best-validation checkpoint, per-epoch history)
        Raises:
            TrainingAborted on a non-finite loss or gradient, carrying the
            parameters of the last completed epoch
        """
        config = self.config
        metadata = metadata or {}
        self.history = []
        best_loss, best_epoch = np.inf, -1
        best = last_good = self._checkpoint(network, network.parameters(),
                                            metadata, -1)
        stop_reason = "max_epochs"
        frozen = [layer.name for layer in network.param_layers if layer.frozen]
        LOG.info(f"training {network.spec.name}: {len(train_loader)} samples, "
                 f"{len(val_loader)} validation, frozen {frozen}")

        for epoch in range(config.max_epochs):
            lr = lr_at_epoch(config.global_lr_schedule, epoch)
            dropout_rng = rng_stream(config.seed, STREAM_DROPOUT, epoch)
            total, correct, count = 0.0, 0, 0
            batch = None
            try:
                for batch, (x, y, _) in enumerate(train_loader.batches(
                        epoch, config.batch_size, shuffle=True, train=True)):
                    network.zero_grad()
                    z = network.forward(x, train=True, rng=dropout_rng)
                    loss, grad_z = cross_entropy_loss(z, y)
                    network.backward(grad_z)
                    sgd_step(network.param_layers, lr, config, batch)
                    total += loss * len(y)
                    correct += _accuracy(z, y)
                    count += len(y)
                val_loss, val_acc = self._validate(network, val_loader, epoch)
            except TrainingAborted:
                raise
            except NumericError as e:
                self._abort(f"epoch {epoch}: {e}", epoch, batch, last_good)
            train_loss = total / count
            if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
                self._abort(f"epoch {epoch}: non-finite loss", epoch, None,
                            last_good)

            stats = EpochStats(epoch, lr, float(train_loss), correct / count,
                               float(val_loss), float(val_acc))
            self.history.append(stats)
            params = network.parameters()
            last_good = self._checkpoint(network, params, metadata, epoch)
            LOG.info(f"epoch {epoch}: lr {lr:g} train loss {train_loss:.4f} "
                     f"val loss {val_loss:.4f} val acc {val_acc:.4f}")
            self.emitter.emit("epoch", stats)

            if val_loss < best_loss - config.plateau_threshold:
                best_loss, best_epoch = val_loss, epoch
                best = last_good
            elif epoch - best_epoch >= config.plateau_patience:
                stop_reason = "plateau"
                break

        LOG.info(f"training stopped ({stop_reason}), best epoch {best_epoch}")
        self.emitter.emit("stop", {"reason": stop_reason,
                                   "epoch": self.history[-1].epoch if self.history else -1,
                                   "best_epoch": best_epoch})
        return best, list(self.history)

    def train(self, network: Network, train_manifest: DatasetManifest,
              val_manifest: DatasetManifest, load_fn: Callable[[str], Tensor],
              mean_rgb: Optional[Sequence[float]] = None,
              input_scale: float = 1.0,
              metadata: Optional[dict] = None
              ) -> Tuple[Checkpoint, List[EpochStats]]:
        """
        Train on manifests; the training split's mean RGB is computed
        unless given or stored on the manifest.
        """
        if not len(train_manifest):
            raise EmptyManifestError("training manifest is empty")
        if not len(val_manifest):
            raise EmptyManifestError("validation manifest is empty")
        if mean_rgb is None:
            mean_rgb = train_manifest.mean_rgb or \
                manifest_mean_rgb(train_manifest, load_fn)
        side = network.spec.input_shape[1]
        train_loader = BatchLoader(train_manifest, load_fn, mean_rgb, side,
                                   input_scale, self.augment_config,
                                   self.config.seed, self.threads)
        val_loader = BatchLoader(val_manifest, load_fn, mean_rgb, side,
                                 input_scale, None, self.config.seed,
                                 self.threads)
        meta = {"task": "orientation", "mean_rgb": list(mean_rgb),
                "input_scale": float(input_scale), "input_side": side}
        meta.update(metadata or {})
        return self.fit(network, train_loader, val_loader, meta)


def train_from_scratch(spec: NetworkSpec, train_manifest: DatasetManifest,
                       val_manifest: DatasetManifest,
                       load_fn: Callable[[str], Tensor],
                       trainer: Trainer, input_scale: float = 1.0,
                       scheme: str = "he") -> Checkpoint:
    """Train every layer of `spec` from random initialization."""
    spec = spec.trainable()
    rng = np.random.default_rng(trainer.config.seed)
    params = init_weights(spec, rng, trainer.config.init_std, scheme)
    checkpoint, _ = trainer.train(Network(spec, params), train_manifest,
                                  val_manifest, load_fn,
                                  input_scale=input_scale)
    return checkpoint


def finetune_frozen(spec: NetworkSpec, strategy: str = "conv45") -> List[str]:
    """
    Conv layers kept frozen by a fine-tuning strategy.

    conv45:  all but the last two conv layers
    fc_only: every conv layer
    """
    convs = spec.conv_layers()
    if strategy == "conv45":
        return convs[:-2]
    if strategy == "fc_only":
        return convs
    raise UsageError(f"unknown fine-tuning strategy {strategy!r}, "
                     f"expected one of {FINETUNE_STRATEGIES}")


def transfer_parameters(base: Checkpoint, spec: NetworkSpec,
                        rng: np.random.Generator, std: float = 0.01
                        ) -> Dict[str, Dict[str, Tensor]]:
    """
    Conv parameters copied from `base`, fully connected layers drawn from
    N(0, std^2) with zero bias.

    Raises:
        CheckpointMismatchError when a conv layer is missing from the base
        or has a different shape
    """
    expected = spec.param_shapes()
    params = {}
    for name in spec.conv_layers():
        source = base.params.get(name)
        if source is None:
            raise CheckpointMismatchError(f"base checkpoint has no layer {name}")
        for pname, shape in expected[name].items():
            got = source.get(pname)
            if got is None or tuple(got.shape) != tuple(shape):
                raise CheckpointMismatchError(
                    f"{name}.{pname}: base shape "
                    f"{None if got is None else tuple(got.shape)} does not fit "
                    f"{tuple(shape)}")
        params[name] = {k: v.copy() for k, v in source.items()}
    params.update(init_weights(spec, rng, std, "gaussian",
                               layers=spec.fc_layers()))
    return params


def finetune_workflow(base: Checkpoint, spec: NetworkSpec,
                      train_manifest: DatasetManifest,
                      val_manifest: DatasetManifest,
                      load_fn: Callable[[str], Tensor],
                      trainer: Trainer, strategy: str = "conv45",
                      input_scale: float = 1.0) -> Checkpoint:
    """
    Transfer a conv trunk and train a new fully connected head.

    Conv parameters come from `base`, fc layers are re-initialized with
    N(0, 0.01^2), the strategy decides which conv layers stay frozen. The
    run's history is left on `trainer.history`.
    """
    frozen = finetune_frozen(spec, strategy)
    spec = spec.with_frozen(frozen)
    rng = np.random.default_rng(trainer.config.seed)
    params = transfer_parameters(base, spec, rng)
    LOG.info(f"fine-tuning {spec.name} ({strategy}), frozen {frozen}")
    checkpoint, _ = trainer.train(Network(spec, params), train_manifest,
                                  val_manifest, load_fn,
                                  input_scale=input_scale,
                                  metadata={"strategy": strategy})
    return checkpoint


def pretrain_trunk(spec: NetworkSpec, images: np.ndarray, labels: Sequence[int],
                   trainer: Trainer, val_images: Optional[np.ndarray] = None,
                   val_labels: Optional[Sequence[int]] = None,
                   input_scale: float = 1.0, scheme: str = "he") -> Checkpoint:
    """
    Train the whole network (nothing frozen) on an auxiliary four-class
    task such as synthetic shapes; the conv layers of the result seed
    `finetune_workflow`.

    Without validation images the training images validate.
    """
    spec = spec.trainable()
    if val_images is None:
        val_images, val_labels = images, labels
    mean_rgb = compute_mean_rgb(images)
    rng = np.random.default_rng(trainer.config.seed)
    params = init_weights(spec, rng, trainer.config.init_std, scheme)
    train_loader = ArrayLoader(images, labels, mean_rgb, input_scale,
                               trainer.augment_config, trainer.config.seed,
                               trainer.threads)
    val_loader = ArrayLoader(val_images, val_labels, mean_rgb, input_scale,
                             None, trainer.config.seed, trainer.threads)
    meta = {"task": "pretrain", "mean_rgb": list(mean_rgb),
            "input_scale": float(input_scale),
            "input_side": spec.input_shape[1]}
    checkpoint, _ = trainer.fit(Network(spec, params), train_loader,
                                val_loader, meta)
    return checkpoint


def epochs_to_accuracy(history: Sequence[EpochStats],
                       threshold: float) -> Optional[int]:
    """Number of epochs until validation accuracy first reached
    `threshold`, None if it never did."""
    for idx, stats in enumerate(history):
        if stats.val_acc >= threshold:
            return idx + 1
    return None


def history_frame(history: Sequence[EpochStats]) -> pd.DataFrame:
    return pd.DataFrame([s.to_dict() for s in history],
                        columns=list(EpochStats.__dataclass_fields__))


def write_history_csv(history: Sequence[EpochStats], path: str):
    history_frame(history)[HISTORY_COLUMNS].to_csv(path, index=False)
    LOG.info(f"wrote training history {path}")

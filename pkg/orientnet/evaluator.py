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
Accuracy, per-class recall and confusion matrices of orientation
classifiers under the test protocols. Every image is classified; there is
no rejection option.
"""
from dataclasses import asdict, dataclass, field
from threading import Lock
from typing import (Callable, List, Mapping, Optional, Protocol as TypingProtocol,
                    Sequence, Tuple, Union)

import numpy as np
import pandas as pd
from ovos_utils.log import LOG
from sklearn.metrics import confusion_matrix

from orientnet.data.manifest import DatasetManifest
from orientnet.data.protocols import Protocol, sample_protocol
from orientnet.data.transforms import preprocess, rotate_image
from orientnet.errors import DataError, EmptyManifestError, ShapeError
from orientnet.layers import Network, softmax
from orientnet.netspec import CLASS_COUNT, Checkpoint, load_checkpoint
from orientnet.tensor import DTYPE, Tensor
from orientnet.util import STREAM_SAMPLE, ordered_map, rng_stream

CLASSES = list(range(CLASS_COUNT))


class Classifier(TypingProtocol):
    """Anything that maps a batch of [3, H, W] images to labels."""

    def predict_batch(self, images: Sequence[Tensor]) -> np.ndarray:
        ...


class OrientationModel:
    """
    A trained network plus the preprocessing stored with its checkpoint
    (mean RGB, input scale, input side).
    """
    needs_pixels = True

    def __init__(self, checkpoint: Checkpoint):
        self.checkpoint = checkpoint
        self.network = Network(checkpoint.spec, checkpoint.params)
        self.side = checkpoint.spec.input_shape[1]
        self.mean_rgb = checkpoint.mean_rgb
        self.input_scale = checkpoint.input_scale
        # layers cache activations, one forward pass at a time
        self.lock = Lock()

    @staticmethod
    def from_checkpoint(source: Union[str, Checkpoint]) -> 'OrientationModel':
        if isinstance(source, Checkpoint):
            return OrientationModel(source)
        return OrientationModel(load_checkpoint(source))

    def prepare(self, image: Tensor) -> Tensor:
        image = np.asarray(image, dtype=DTYPE)
        if image.ndim != 3 or image.shape[0] != 3:
            raise ShapeError("expected a [3, H, W] image", image.shape)
        return preprocess(image, self.mean_rgb, self.side, self.input_scale)

    def logits(self, batch: Tensor) -> Tensor:
        with self.lock:
            return self.network.forward(batch, train=False)

    def predict_proba_batch(self, images: Sequence[Tensor]) -> np.ndarray:
        if not len(images):
            return np.zeros((0, CLASS_COUNT), dtype=DTYPE)
        batch = np.stack([self.prepare(img) for img in images])
        return softmax(self.logits(batch))

    def predict_batch(self, images: Sequence[Tensor]) -> np.ndarray:
        return np.argmax(self.predict_proba_batch(images), axis=1)

    def predict(self, image: Tensor) -> Tuple[int, np.ndarray]:
        probs = self.predict_proba_batch([image])[0]
        return int(np.argmax(probs)), probs


class ConstantClassifier:
    """Majority-class baseline: always answers the same label."""
    needs_pixels = False

    def __init__(self, theta: int = 0):
        self.theta = int(theta)

    def predict_batch(self, images: Sequence[Tensor]) -> np.ndarray:
        return np.full(len(images), self.theta, dtype=np.int64)


def predict(model: OrientationModel, image: Tensor) -> Tuple[int, np.ndarray]:
    """Label and the four class probabilities of one raw image."""
    return model.predict(image)


@dataclass
class EvalReport:
    """
    Result of one evaluation.

    recall holds None for classes absent from the test set; confusion rows
    are true labels, columns predictions.
    """
    protocol: str
    dataset: str
    n_samples: int
    accuracy: float
    recall: List[Optional[float]] = field(default_factory=list)
    confusion: List[List[int]] = field(default_factory=list)

    @property
    def class_counts(self) -> List[int]:
        return [int(sum(row)) for row in self.confusion]

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> 'EvalReport':
        try:
            report = EvalReport(protocol=str(data["protocol"]),
                                dataset=str(data["dataset"]),
                                n_samples=int(data["n_samples"]),
                                accuracy=float(data["accuracy"]),
                                recall=[None if r is None else float(r)
                                        for r in data["recall"]],
                                confusion=[[int(c) for c in row]
                                           for row in data["confusion"]])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"malformed evaluation report ({e})")
        if np.asarray(report.confusion).shape != (CLASS_COUNT, CLASS_COUNT) or \
                sum(report.class_counts) != report.n_samples:
            raise DataError("evaluation report confusion matrix does not "
                            "match its sample count")
        return report

    @staticmethod
    def from_predictions(y_true: Sequence[int], y_pred: Sequence[int],
                         protocol: str, dataset: str) -> 'EvalReport':
        cm = confusion_matrix(y_true, y_pred, labels=CLASSES)
        total = int(cm.sum())
        support = cm.sum(axis=1)
        recall = [float(cm[i, i] / support[i]) if support[i] else None
                  for i in CLASSES]
        return EvalReport(protocol=protocol, dataset=dataset, n_samples=total,
                          accuracy=float(np.trace(cm) / total), recall=recall,
                          confusion=cm.astype(int).tolist())


def _protocol_name(protocol) -> str:
    if protocol is None:
        return "custom"
    return Protocol.parse(protocol).value


def evaluate(classifier: Classifier, manifest: DatasetManifest, protocol=None,
             load_fn: Optional[Callable[[str], Tensor]] = None,
             dataset: Optional[str] = None, batch_size: int = 64,
             threads: int = 0) -> EvalReport:
    """
    Classify every manifest entry and summarize.

    Entries point to upright files; each is rotated by its label before
    classification.

    Arguments:
        classifier: model under test
        manifest: test set, typically from sample_protocol
        protocol: protocol name recorded on the report
        load_fn: path -> upright [3, H, W] image
        dataset: tag recorded on the report, the manifest source by default
        threads: workers decoding images
    Raises:
        EmptyManifestError for an empty manifest
    """
    if not len(manifest):
        raise EmptyManifestError(f"cannot evaluate the empty manifest "
                                 f"{manifest.source}")
    needs_pixels = getattr(classifier, "needs_pixels", True)
    if needs_pixels and load_fn is None:
        raise DataError("a load function is required to classify images")

    def load(sample):
        return rotate_image(np.asarray(load_fn(sample.path), dtype=DTYPE),
                            sample.theta)

    predictions = []
    for start in range(0, len(manifest), batch_size):
        chunk = manifest.entries[start:start + batch_size]
        images = ordered_map(load, chunk, threads) if needs_pixels \
            else [None] * len(chunk)
        predictions.append(np.asarray(classifier.predict_batch(images)))
    y_pred = np.concatenate(predictions)
    report = EvalReport.from_predictions(manifest.labels, y_pred,
                                         _protocol_name(protocol),
                                         dataset or manifest.source)
    LOG.info(f"{report.dataset} / {report.protocol}: accuracy "
             f"{report.accuracy:.4f} over {report.n_samples} images")
    return report


Source = Tuple[DatasetManifest, Optional[Callable[[str], Tensor]]]


def compare_protocols(classifier: Classifier, sources: Mapping[str, Source],
                      protocols: Sequence = (Protocol.BAL4, Protocol.ORIG3,
                                             Protocol.BAL3),
                      seed: int = 0, size: Optional[int] = None,
                      threads: int = 0) -> List[EvalReport]:
    """
    Evaluate one classifier on several datasets under several protocols.

    Each (dataset, protocol) cell resamples its test set from the same
    upright pool with a stream keyed by the protocol, so a protocol draws
    the same test set whatever other protocols are requested.

    Arguments:
        sources: dataset tag -> (upright manifest, load_fn), column order
        protocols: rows of the comparison
        seed: base seed of the resampling
        size: test set size, the whole pool by default
    """
    reports = []
    for tag, (manifest, load_fn) in sources.items():
        for protocol in protocols:
            protocol = Protocol.parse(protocol)
            rng = rng_stream(seed, STREAM_SAMPLE, list(Protocol).index(protocol))
            test = sample_protocol(manifest, protocol, rng, size)
            reports.append(evaluate(classifier, test, protocol, load_fn,
                                    dataset=tag, threads=threads))
    return reports


def comparison_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """Accuracy table: one row per protocol, one column per dataset, both
    in first-seen order."""
    rows, cols = [], []
    for r in reports:
        if r.protocol not in rows:
            rows.append(r.protocol)
        if r.dataset not in cols:
            cols.append(r.dataset)
    frame = pd.DataFrame(index=rows, columns=cols, dtype=float)
    for r in reports:
        frame.loc[r.protocol, r.dataset] = r.accuracy
    frame.index.name = "protocol"
    return frame


def write_comparison_csv(reports: Sequence[EvalReport], path: str):
    comparison_frame(reports).to_csv(path)
    LOG.info(f"wrote comparison table {path}")

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
"""
Orientation detection for photos.

A from-scratch convolutional network classifies an image into one of four
orientations (0, 90, 180 or 270 degrees clockwise from upright), and the
tools around it build datasets, train, evaluate under balanced and
imbalanced test protocols, explain predictions and rotate files upright.
"""
from orientnet.netspec import (Checkpoint, NetworkSpec, build_desk_net,
                               build_full_net, init_weights, load_checkpoint,
                               save_checkpoint)
from orientnet.layers import Network
from orientnet.data import DatasetManifest, Orientation, Protocol
from orientnet.trainer import Trainer, finetune_workflow, pretrain_trunk
from orientnet.evaluator import (ConstantClassifier, EvalReport,
                                 OrientationModel, evaluate, predict)
from orientnet.saliency import grad_cam, render_overlay
from orientnet.imageio import correct_file, decode, exif_to_theta

__all__ = [
    "Checkpoint",
    "NetworkSpec",
    "Network",
    "DatasetManifest",
    "Orientation",
    "Protocol",
    "Trainer",
    "OrientationModel",
    "EvalReport",
    "ConstantClassifier",
    "build_desk_net",
    "build_full_net",
    "init_weights",
    "load_checkpoint",
    "save_checkpoint",
    "finetune_workflow",
    "pretrain_trunk",
    "evaluate",
    "predict",
    "grad_cam",
    "render_overlay",
    "correct_file",
    "decode",
    "exif_to_theta"
]

from orientnet.data.manifest import (DatasetManifest, Orientation, Sample,
                                     check_theta, expand_manifest,
                                     load_manifest, save_manifest,
                                     split_manifest, upright_manifest)
from orientnet.data.transforms import (augment, compute_mean_rgb,
                                       correct_image, manifest_mean_rgb,
                                       preprocess, resize_image, rotate_image)
from orientnet.data.protocols import Protocol, class_counts, sample_protocol
from orientnet.data.synth import (MemoryImages, synth_memory_dataset,
                                  synth_scene, synth_shape, synth_shape_set,
                                  write_synth_dataset)
from orientnet.data.loader import ArrayLoader, BatchLoader, ImageCache

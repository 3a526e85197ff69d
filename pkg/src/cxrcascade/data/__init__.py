"""Samples, manifests, resizing/augmentation, splits and synthetic data."""
from .samples import CATEGORIES, BBox, ImageSample
from .manifest import (DatasetManifest, ManifestRecord, load_manifest, load_samples,
                       read_image, save_samples, write_image, write_manifest)
from .transforms import (AugmentPolicy, apply_affine, augment, expand_dataset,
                         partition_sizes, resize_area, scale_boxes, split)
from .synth import SynthConfig, synth_generate, synth_samples

__all__ = [
    "AugmentPolicy", "BBox", "CATEGORIES", "DatasetManifest", "ImageSample",
    "ManifestRecord", "SynthConfig", "apply_affine", "augment", "expand_dataset",
    "load_manifest", "load_samples", "partition_sizes", "read_image", "resize_area",
    "save_samples", "scale_boxes", "split", "synth_generate", "synth_samples",
    "write_image", "write_manifest",
]

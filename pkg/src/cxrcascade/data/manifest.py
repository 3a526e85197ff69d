"""Line-oriented dataset manifests and 8-bit grayscale image I/O.

Format::

    #cxr-manifest v1 side=<S>
    <id>\t<relative path>\t<label>\t<category or ->\t<x,y,w,h;x,y,w,h...>
"""
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image

from ..exceptions import LoadError, ParameterError
from .samples import BBox, ImageSample, check_record

FORMAT_VERSION = 1
_MAGIC = "#cxr-manifest"


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    path: str
    label: int
    boxes: Tuple[BBox, ...] = ()
    category: Optional[str] = None


@dataclass
class DatasetManifest:
    records: List[ManifestRecord]
    image_size: int
    root: Path = field(default_factory=lambda: Path("."))

    def __len__(self):
        return len(self.records)

    def ids(self):
        return [r.id for r in self.records]

    def subset(self, records):
        return DatasetManifest(list(records), self.image_size, self.root)


def _format_record(rec):
    boxes = ";".join(b.to_text() for b in rec.boxes)
    return "\t".join([rec.id, rec.path, str(rec.label), rec.category or "-", boxes])


def write_manifest(manifest, path):
    path = Path(path)
    lines = [f"{_MAGIC} v{FORMAT_VERSION} side={manifest.image_size}"]
    lines += [_format_record(r) for r in manifest.records]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def _parse_header(line, path):
    parts = line.split()
    if len(parts) != 3 or parts[0] != _MAGIC:
        raise LoadError(f"{path}: missing '{_MAGIC}' header")
    if parts[1] != f"v{FORMAT_VERSION}":
        raise LoadError(f"{path}: unsupported manifest version {parts[1]}")
    if not parts[2].startswith("side="):
        raise LoadError(f"{path}: header lacks side=<int>")
    try:
        side = int(parts[2][5:])
    except ValueError:
        raise LoadError(f"{path}: bad side in header {parts[2]!r}") from None
    if side <= 0:
        raise LoadError(f"{path}: side must be positive")
    return side


def load_manifest(path, check_paths=True):
    """Parse and validate a manifest; every error names the offending record."""
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"manifest not found: {path}")
    lines = path.read_text().splitlines()
    if not lines:
        raise LoadError(f"{path}: empty file (header required)")
    side = _parse_header(lines[0], path)
    root = path.parent
    records, seen = [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        rec_id = fields[0] or f"line {lineno}"
        if len(fields) != 5:
            raise LoadError(f"{path}:{lineno}: record {rec_id} has {len(fields)} fields, want 5")
        rec_id, rel, label_s, cat, box_s = fields
        if rec_id in seen:
            raise LoadError(f"{path}:{lineno}: duplicate id {rec_id}")
        seen.add(rec_id)
        try:
            label = int(label_s)
            boxes = tuple(BBox.parse(b) for b in box_s.split(";") if b)
        except (ValueError, ParameterError) as exc:
            raise LoadError(f"{path}:{lineno}: record {rec_id}: {exc}") from None
        category = None if cat == "-" else cat
        check_record(rec_id, label, boxes, category, side)
        if check_paths and not (root / rel).is_file():
            raise LoadError(f"{path}:{lineno}: record {rec_id}: image {rel} not found")
        records.append(ManifestRecord(rec_id, rel, label, boxes, category))
    return DatasetManifest(records, side, root)


def read_image(path):
    """Load an 8-bit grayscale image as float64 in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise LoadError(f"cannot read image {path}: {exc}") from None
    return arr / 255.0


def write_image(pixels, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    q = np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="L").save(path)
    return path


def load_samples(manifest, dtype=np.float32):
    """Read every image of ``manifest`` into :class:`ImageSample` objects."""
    samples = []
    for rec in manifest.records:
        pixels = read_image(manifest.root / rec.path).astype(dtype)
        if pixels.shape != (manifest.image_size, manifest.image_size):
            raise LoadError(
                f"{rec.id}: image is {pixels.shape}, manifest declares side {manifest.image_size}")
        samples.append(ImageSample(rec.id, pixels, rec.label, rec.boxes, rec.category))
    return samples


def save_samples(samples, directory, side=None, manifest_name="manifest.tsv",
                 image_dir="images"):
    """Write samples as PGM files plus a manifest; returns the manifest."""
    directory = Path(directory)
    records = []
    if side is None:
        if not samples:
            raise ParameterError("side is required when saving an empty sample list")
        side = samples[0].side
    for s in samples:
        rel = os.path.join(image_dir, f"{s.id}.pgm")
        write_image(s.pixels, directory / rel)
        records.append(ManifestRecord(s.id, rel, s.label, s.boxes, s.category))
    manifest = DatasetManifest(records, side, directory)
    write_manifest(manifest, directory / manifest_name)
    return manifest

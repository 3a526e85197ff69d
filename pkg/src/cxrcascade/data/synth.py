"""Synthetic chest-film-like images with elliptical opacity blobs.

A desk-scale stand-in for a licensed radiograph corpus: lung fields, a
mediastinum, a cardiac silhouette and rib bands form the background;
positives get one to three soft elliptical opacities whose bounding boxes
are read off the rasterised support, so they are exact.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from ..exceptions import ParameterError
from ..regions import REVIEW_AREA, RegionRule, region_of
from .manifest import DatasetManifest, save_samples
from .samples import BBox, ImageSample


@dataclass(frozen=True)
class SynthConfig:
    count: int = 100
    side: int = 64
    positive_fraction: float = 0.4
    review_fraction: float = 0.3
    other_disease_fraction: float = 0.5
    blob_radius: tuple = (0.05, 0.12)
    blob_intensity: tuple = (0.25, 0.45)
    texture: float = 0.03
    max_blobs: int = 3
    id_prefix: str = "syn"

    def __post_init__(self):
        if self.count < 0 or self.side < 8:
            raise ParameterError("count must be >= 0 and side >= 8")
        for name in ("positive_fraction", "review_fraction", "other_disease_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(f"{name} must lie in [0, 1]")
        lo, hi = self.blob_radius
        if not 0 < lo <= hi:
            raise ParameterError(f"bad blob radius range {self.blob_radius}")
        if hi >= 0.5 or hi * self.side < 1:
            raise ParameterError(
                f"blob radius range {self.blob_radius} cannot fit a {self.side}px image")
        if hi > 0.2:
            raise ParameterError("blob radius above 0.2*side cannot be placed in the apex band")
        ilo, ihi = self.blob_intensity
        if not 0 < ilo <= ihi <= 1:
            raise ParameterError(f"bad blob intensity range {self.blob_intensity}")
        if self.max_blobs < 1:
            raise ParameterError("max_blobs must be >= 1")


def _ellipse(side, cx, cy, rx, ry):
    """Normalised squared radius of every pixel centre w.r.t. an ellipse."""
    c = np.arange(side) + 0.5
    return ((c[None, :] - cx) / rx) ** 2 + ((c[:, None] - cy) / ry) ** 2


def _background(cfg, rng):
    s = cfg.side
    jx, jy = rng.uniform(-0.03, 0.03, size=2)
    img = np.full((s, s), 0.55)
    for lx in (0.30, 0.70):
        d = _ellipse(s, (lx + jx) * s, (0.52 + jy) * s, 0.17 * s, 0.36 * s)
        img -= 0.35 * np.clip(1 - d, 0, 1) ** 0.5
    spine = _ellipse(s, (0.5 + jx) * s, 0.5 * s, 0.06 * s, 0.8 * s)
    img += 0.15 * np.clip(1 - spine, 0, 1)
    heart = _ellipse(s, (0.60 + jx) * s, (0.72 + jy) * s, 0.15 * s, 0.13 * s)
    img += 0.22 * np.clip(1 - heart, 0, 1) ** 0.5
    v = (np.arange(s) + 0.5)[:, None] / s
    u = (np.arange(s) + 0.5)[None, :] / s
    phase = rng.uniform(0, 1)
    ribs = 0.5 + 0.5 * np.cos(2 * np.pi * (7 * v + 1.5 * (u - 0.5) ** 2 + phase))
    img += 0.06 * ribs
    noise = ndimage.gaussian_filter(rng.standard_normal((s, s)), 1.0)
    img += cfg.texture * noise / (noise.std() + 1e-12)
    return img


def _blob(cfg, rng, center_range):
    s = cfg.side
    rx, ry = rng.uniform(*cfg.blob_radius, size=2) * s
    (ux0, ux1), (uy0, uy1) = center_range
    cx = rng.uniform(max(ux0 * s, rx), min(ux1 * s, s - rx))
    cy = rng.uniform(max(uy0 * s, ry), min(uy1 * s, s - ry))
    d = _ellipse(s, cx, cy, rx, ry)
    support = d < 1
    if not support.any():
        return None, None
    amp = rng.uniform(*cfg.blob_intensity)
    profile = amp * np.clip(1 - d, 0, None) ** 1.5
    rows = np.flatnonzero(support.any(axis=1))
    cols = np.flatnonzero(support.any(axis=0))
    box = BBox(int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1),
               int(rows[-1] - rows[0] + 1))
    return profile, box


def _place_blobs(cfg, rng, review, rule):
    """Draw blobs until all of them land in (or all outside) review areas."""
    if review:
        ranges = [((0.1, 0.9), rule.apex_y), (rule.heart_x, rule.heart_y)]
    else:
        ranges = [((0.12, 0.88), (0.15, 0.92))]
    n = int(rng.integers(1, cfg.max_blobs + 1))
    layers, boxes = [], []
    attempts = 0
    while len(boxes) < n:
        attempts += 1
        if attempts > 200:
            raise ParameterError("could not place blobs with the configured geometry")
        rng_choice = ranges[int(rng.integers(len(ranges)))]
        profile, box = _blob(cfg, rng, rng_choice)
        if box is None:
            continue
        want = REVIEW_AREA if review else "other"
        if region_of([box], cfg.side, rule) != want:
            continue
        layers.append(profile)
        boxes.append(box)
    return layers, boxes


def _distractors(cfg, rng):
    s = cfg.side
    img = np.zeros((s, s))
    for _ in range(int(rng.integers(1, 4))):
        if rng.random() < 0.5:
            r = rng.uniform(0.015, 0.03) * s
            cx, cy = rng.uniform(0.15, 0.85, size=2) * s
            img += rng.uniform(0.3, 0.5) * (_ellipse(s, cx, cy, r, r) < 1)
        else:
            # thin linear streak
            v0 = rng.uniform(0.2, 0.85)
            slope = rng.uniform(-0.3, 0.3)
            u = (np.arange(s) + 0.5)[None, :] / s
            v = (np.arange(s) + 0.5)[:, None] / s
            dist = np.abs(v - (v0 + slope * (u - 0.5))) * s
            mask = (dist < 0.6) & (np.abs(u - 0.5) < rng.uniform(0.1, 0.3))
            img += rng.uniform(0.2, 0.35) * mask
    return img


def synth_samples(cfg, rng, rule=RegionRule()):
    """Generate ``cfg.count`` samples in memory (pixels quantised to 8 bits)."""
    samples = []
    width = max(4, len(str(max(cfg.count - 1, 0))))
    for i in range(cfg.count):
        img = _background(cfg, rng)
        positive = rng.random() < cfg.positive_fraction
        boxes = ()
        if positive:
            review = rng.random() < cfg.review_fraction
            layers, boxes = _place_blobs(cfg, rng, review, rule)
            img = img + np.sum(layers, axis=0)
            category = "pneumonia"
        elif rng.random() < cfg.other_disease_fraction:
            img = img + _distractors(cfg, rng)
            category = "other_disease"
        else:
            category = "normal"
        px = np.clip(np.rint(np.clip(img, 0, 1) * 255) / 255, 0, 1).astype(np.float32)
        samples.append(ImageSample(f"{cfg.id_prefix}{i:0{width}d}", px, int(positive),
                                   tuple(boxes), category))
    return samples


def synth_generate(cfg, rng, directory, rule=RegionRule(), manifest_name="manifest.tsv"):
    """Write a synthetic dataset (PGM images + manifest) under ``directory``."""
    samples = synth_samples(cfg, rng, rule)
    return save_samples(samples, Path(directory), side=cfg.side, manifest_name=manifest_name)

"""Two-phase training: patch classifier first, then the fusion model."""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .data.transforms import resize_area, split
from .evaluation import auroc_or_none, confusion, prf1
from .exceptions import ConfigError, NumericError, ParameterError
from .models import FusionNet, FusionNetConfig, PatchNet, PatchNetConfig
from .nn.functional import bce_loss
from .nn.optim import Adam, LrSchedule, lr_at_epoch
from .patching import WindowGrid, build_heatmap, sample_patches

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    schedule: LrSchedule = field(default_factory=LrSchedule)
    epochs: int = 10
    seed: int = 0
    patches_per_image: int = 4
    val_fraction: float = 0.2
    label_threshold: float = 0.10

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1 or self.patches_per_image < 1:
            raise ConfigError("batch_size, epochs and patches_per_image must be >= 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: Optional[float] = None
    val_f1: Optional[float] = None
    val_auroc: Optional[float] = None
    note: str = ""


HISTORY_COLUMNS = ("epoch", "lr", "train_loss", "val_loss", "val_f1", "val_auroc", "note")


@dataclass
class TrainHistory:
    rows: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    warnings: List[str] = field(default_factory=list)
    # parameters after the last epoch (the returned model holds the best epoch)
    final_params: dict = field(default_factory=dict, repr=False)

    def lr_column(self):
        return [r.lr for r in self.rows]

    def to_tsv(self):
        def f(v, spec):
            return "-" if v is None else format(v, spec)
        lines = ["\t".join(HISTORY_COLUMNS)]
        for r in self.rows:
            lines.append("\t".join([
                str(r.epoch), f(r.lr, ".6g"), f(r.train_loss, ".6f"), f(r.val_loss, ".6f"),
                f(r.val_f1, ".4f"), f(r.val_auroc, ".4f"), r.note or "-"]))
        return "\n".join(lines) + "\n"

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_tsv())
        return path


def _streams(seed):
    # independent streams: split, init, training draws, validation draws
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]


def _holdout(samples, config):
    n_val = int(np.floor(len(samples) * config.val_fraction))
    if n_val == 0:
        return list(samples), []
    train, val = split(samples, (1 - config.val_fraction, config.val_fraction), config.seed)
    return train, val


def _mean_bce(probs, labels):
    loss, _ = bce_loss(np.asarray(probs, dtype=np.float64), labels)
    return float(loss.mean())


def train_step(model, inputs, labels, optimizer, lr, rng):
    """One forward/backward/Adam update; returns the mean batch loss."""
    # overflow surfaces as a non-finite loss below, so numpy's own warnings are muted
    with np.errstate(over="ignore", invalid="ignore"):
        probs = model.forward(*inputs, training=True, rng=rng)
        loss, dp = bce_loss(probs, labels.astype(probs.dtype))
        mean = float(np.mean(loss, dtype=np.float64))
        if not np.isfinite(mean):
            raise NumericError(f"non-finite training loss ({mean})")
        model.backward((dp / len(labels)).astype(probs.dtype))
        optimizer.step(model.gradients(), lr)
    return mean


def _fit(model, config, epoch_data, val_inputs, val_labels, rng, first_epoch_check=None):
    opt = Adam(model.parameters())
    history = TrainHistory()
    best_loss, best_params = np.inf, None
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config.schedule, epoch)
        inputs, labels = epoch_data(epoch)
        order = rng.permutation(len(labels))
        total, count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = tuple(a[idx] for a in inputs)
            total += train_step(model, batch, labels[idx], opt, lr, rng) * len(idx)
            count += len(idx)
        rec = EpochRecord(epoch, lr, total / count)
        if epoch == 0 and first_epoch_check is not None:
            note = first_epoch_check(labels)
            if note:
                rec.note = note
                history.warnings.append(note)
                log.warning(note)
        if len(val_labels):
            probs = model.predict_proba(*val_inputs)
            rec.val_loss = _mean_bce(probs, val_labels)
            rec.val_f1 = prf1(confusion(probs, val_labels)).f1
            rec.val_auroc = auroc_or_none(probs, val_labels)
        score = rec.val_loss if rec.val_loss is not None else rec.train_loss
        if score < best_loss:
            best_loss = score
            best_params = {k: v.copy() for k, v in model.parameters().items()}
            history.best_epoch = epoch
        history.rows.append(rec)
        log.info("epoch %d lr %.6g train_loss %.6f val_loss %s", epoch, lr, rec.train_loss,
                 "-" if rec.val_loss is None else f"{rec.val_loss:.6f}")
    history.final_params = {k: v.copy() for k, v in model.parameters().items()}
    for k, v in model.parameters().items():
        v[...] = best_params[k]
    model.metadata = {"epoch": history.best_epoch, "seed": config.seed,
                      "final_lr": lr_at_epoch(config.schedule, config.epochs - 1)}
    return history


def _single_class_note(labels):
    if len(np.unique(labels)) < 2:
        return f"warning: epoch-0 patch stream is single-class (all {int(labels[0])})"
    return ""


def _patch_set(samples, config, patch_side, rng):
    patches, labels = [], []
    for s in samples:
        p, y, _ = sample_patches(s, config.patches_per_image, rng, patch_side,
                                 config.label_threshold)
        patches.append(p)
        labels.append(y)
    return np.concatenate(patches), np.concatenate(labels)


def train_stage1(config, samples, model_config=PatchNetConfig(), dtype=np.float32):
    """Train the patch classifier on freshly resampled patches every epoch.

    ``samples`` are at working resolution. The validation images are held out
    before any patch is drawn. Returns ``(model, history)``; the model holds
    the parameters of the epoch with the lowest validation loss.
    """
    if not samples:
        raise ParameterError("train_stage1 needs at least one sample")
    split_rng, init_rng, train_rng, val_rng = _streams(config.seed)
    train, val = _holdout(samples, config)
    side = model_config.input_side
    model = PatchNet(model_config, init_rng, dtype)
    if val:
        vp, vl = _patch_set(val, config, side, val_rng)
    else:
        vp, vl = np.zeros((0, side, side), dtype=dtype), np.zeros(0, dtype=np.int64)

    def epoch_data(epoch):
        p, y = _patch_set(train, config, side, train_rng)
        return (p,), y

    history = _fit(model, config, epoch_data, (vp,), vl, train_rng, _single_class_note)
    return model, history


def compute_heatmaps(stage1, samples, grid, threshold=0.5):
    """Heatmaps keyed by sample id (images resized to ``grid.full_side``)."""
    return {s.id: build_heatmap(stage1, resize_area(s.pixels, grid.full_side), grid, threshold)
            for s in samples}


def _fusion_arrays(samples, heatmaps, input_side, dtype):
    images = np.stack([resize_area(s.pixels, input_side) for s in samples]).astype(dtype)
    bits = np.stack([heatmaps[s.id].bits for s in samples]).astype(dtype)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return images, bits, labels


def train_stage2(config, samples, stage1, fusion_config=FusionNetConfig(), grid=None,
                 heatmaps=None, heatmap_threshold=0.5, dtype=np.float32):
    """Train the fusion model on (image, heatmap) pairs from a frozen stage 1.

    ``heatmaps`` (id -> :class:`Heatmap`) may come from a cache; otherwise
    they are computed once here. Stage 1 is only ever run in inference mode.
    """
    if not samples:
        raise ParameterError("train_stage2 needs at least one sample")
    if heatmaps is None:
        if grid is None:
            raise ConfigError("train_stage2 needs a window grid or precomputed heatmaps")
        heatmaps = compute_heatmaps(stage1, samples, grid, heatmap_threshold)
    missing = [s.id for s in samples if s.id not in heatmaps]
    if missing:
        raise ConfigError(f"heatmap cache lacks {len(missing)} samples, e.g. {missing[0]}")
    extra = set(heatmaps) - {s.id for s in samples}
    if extra:
        raise ConfigError(f"heatmap cache has {len(extra)} ids not in the dataset, "
                          f"e.g. {sorted(extra)[0]}")
    g = fusion_config.heatmap_side
    for sid, hm in heatmaps.items():
        if hm.bits.shape != (g, g):
            raise ConfigError(f"heatmap {sid} is {hm.bits.shape}, fusion model expects {g}x{g}")

    split_rng, init_rng, train_rng, _ = _streams(config.seed)
    train, val = _holdout(samples, config)
    model = FusionNet(fusion_config, init_rng, dtype)
    side = fusion_config.image.input_side
    ti, tb, tl = _fusion_arrays(train, heatmaps, side, dtype)
    if val:
        vi, vb, vl = _fusion_arrays(val, heatmaps, side, dtype)
    else:
        vi = np.zeros((0, side, side), dtype=dtype)
        vb = np.zeros((0, g, g), dtype=dtype)
        vl = np.zeros(0, dtype=np.int64)

    history = _fit(model, config, lambda epoch: ((ti, tb), tl), (vi, vb), vl, train_rng)
    return model, history

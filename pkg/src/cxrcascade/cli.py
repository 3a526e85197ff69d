"""Command-line pipeline: synth, train-patch, heatmaps, train-fusion, predict, eval,
compare-readers. Every stage hands off through files under ``run.output_dir``."""
import argparse
import hashlib
import json
import logging
import sys
import time
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from .config import load_config
from .data.manifest import load_manifest, load_samples, read_image, save_samples, write_manifest
from .data.samples import ImageSample
from .data.synth import synth_samples
from .data.transforms import AugmentPolicy, expand_dataset, resize_area, scale_boxes, split
from .evaluation import (add_strata, classification_report, localization, read_reader_file,
                         reader_compare, reader_report, stratified_accuracy)
from .exceptions import (CascadeError, ConfigError, LoadError, MissingPrerequisiteError,
                         NumericError)
from .models import Cascade, FusionNet, PatchNet, load_checkpoint, save_checkpoint
from .patching import read_heatmap, write_heatmap
from .training import compute_heatmaps, train_stage1, train_stage2

log = logging.getLogger("cxrcascade")

COMMANDS = ("synth", "train-patch", "heatmaps", "train-fusion", "predict", "eval",
            "compare-readers")
EXIT_CODES = ((ConfigError, 2), (MissingPrerequisiteError, 3), (LoadError, 4),
              (NumericError, 5))


def bundled_reader_file():
    return resources.files("cxrcascade") / "resources" / "reader_fixture.tsv"


# layout ----------------------------------------------------------------------


class Layout:
    """Artifact paths under the output directory."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.root = cfg.output_dir

    stage1 = property(lambda self: self.root / "checkpoints" / "stage1.ckpt")
    stage2 = property(lambda self: self.root / "checkpoints" / "stage2.ckpt")
    history1 = property(lambda self: self.root / "history" / "stage1.tsv")
    history2 = property(lambda self: self.root / "history" / "stage2.tsv")
    heatmaps = property(lambda self: self.root / "heatmaps")
    heatmap_index = property(lambda self: self.root / "heatmaps" / "index.json")
    augmented = property(lambda self: self.root / "data" / "augmented" / "manifest.tsv")
    reports = property(lambda self: self.root / "reports")
    predictions = property(lambda self: self.root / "predictions")
    runs = property(lambda self: self.root / "runs")
    lock = property(lambda self: self.root / ".lock")

    def training_manifest(self):
        if self.cfg.get("train", "augment_target", int) > 0:
            return self.augmented
        return self.cfg.train_manifest


def _require(path, what):
    if not Path(path).exists():
        raise MissingPrerequisiteError(f"{what} not found: {path}")
    return Path(path)


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _working(samples, side):
    """Resize samples (and their boxes) to ``side``; no-op when already there."""
    out = []
    for s in samples:
        if s.side == side:
            out.append(s)
        else:
            out.append(ImageSample(s.id, resize_area(s.pixels, side), s.label,
                                   tuple(scale_boxes(s.boxes, s.side, side)), s.category))
    return out


def _load(manifest_path, what, side):
    manifest = load_manifest(_require(manifest_path, what))
    return _working(load_samples(manifest), side)


def _load_model(path, what, kind):
    model = load_checkpoint(_require(path, what))
    if not isinstance(model, kind):
        raise LoadError(f"{path}: expected a {kind.__name__} checkpoint")
    return model


def _cascade(cfg, lay):
    s1 = _load_model(lay.stage1, "stage-1 checkpoint", PatchNet)
    s2 = _load_model(lay.stage2, "stage-2 checkpoint", FusionNet)
    grid = cfg.grid
    if s1.input_side != grid.patch_side or s2.config.heatmap_side != grid.grid_side:
        raise ConfigError("checkpoints do not match the configured window geometry")
    return Cascade(s1, s2, grid, cfg.get("geometry", "heatmap_threshold", float),
                   cfg.get("eval", "threshold", float))


# commands --------------------------------------------------------------------


def cmd_synth(cfg, lay):
    scfg = cfg.synth()
    rng = np.random.default_rng(cfg.seed)
    samples = synth_samples(scfg, rng, cfg.regions())
    data_dir = cfg.train_manifest.parent
    everything = save_samples(samples, data_dir, side=scfg.side, manifest_name="all.tsv")
    frac = cfg.get("synth", "test_fraction", float)
    train, test = split(everything, (1 - frac, frac), cfg.seed)
    write_manifest(train, cfg.train_manifest)
    write_manifest(test, cfg.test_manifest)
    log.info("synth: %d images (%d train / %d test)", len(samples), len(train), len(test))
    images = [data_dir / r.path for r in everything.records]
    return [data_dir / "all.tsv", cfg.train_manifest, cfg.test_manifest] + images


def _augment(cfg, lay, side):
    target = cfg.get("train", "augment_target", int)
    base = _load(cfg.train_manifest, "training manifest", side)
    if target < len(base):
        raise ConfigError(f"train.augment_target {target} is below the {len(base)} "
                          "training images")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    expanded = expand_dataset(base, target, rng, AugmentPolicy())
    m = save_samples(expanded, lay.augmented.parent, side=side)
    return [lay.augmented] + [lay.augmented.parent / r.path for r in m.records]


def cmd_train_patch(cfg, lay):
    grid = cfg.grid
    artifacts = []
    _require(cfg.train_manifest, "training manifest")
    if cfg.get("train", "augment_target", int) > 0:
        artifacts += _augment(cfg, lay, grid.full_side)
    samples = _load(lay.training_manifest(), "training manifest", grid.full_side)
    model, history = train_stage1(cfg.train(1), samples, cfg.patchnet())
    return artifacts + [save_checkpoint(model, lay.stage1), history.write(lay.history1)]


def cmd_heatmaps(cfg, lay):
    grid = cfg.grid
    stage1 = _load_model(lay.stage1, "stage-1 checkpoint", PatchNet)
    threshold = cfg.get("geometry", "heatmap_threshold", float)
    train = _load(lay.training_manifest(), "training manifest", grid.full_side)
    test = _load(cfg.test_manifest, "test manifest", grid.full_side) \
        if cfg.test_manifest.exists() else []
    samples = train + [s for s in test if s.id not in {t.id for t in train}]
    maps = compute_heatmaps(stage1, samples, grid, threshold)
    artifacts = []
    for sid in sorted(maps):
        artifacts += write_heatmap(maps[sid], lay.heatmaps, sid)
    index = {"grid": [grid.full_side, grid.patch_side, grid.stride], "threshold": threshold,
             "stage1_sha256": _sha256(lay.stage1), "ids": sorted(maps)}
    lay.heatmap_index.write_text(json.dumps(index, sort_keys=True, indent=1) + "\n")
    log.info("heatmaps: %d images", len(maps))
    return [lay.heatmap_index] + artifacts


def _cached_heatmaps(cfg, lay, ids):
    index_path = _require(lay.heatmap_index, "heatmap cache")
    try:
        index = json.loads(index_path.read_text())
    except ValueError as exc:
        raise LoadError(f"{index_path}: {exc}") from None
    grid = cfg.grid
    if index.get("grid") != [grid.full_side, grid.patch_side, grid.stride]:
        raise ConfigError(f"heatmap cache was built for grid {index.get('grid')}, "
                          f"config asks for {[grid.full_side, grid.patch_side, grid.stride]}")
    if lay.stage1.exists() and index.get("stage1_sha256") != _sha256(lay.stage1):
        raise ConfigError("heatmap cache was built from a different stage-1 checkpoint")
    known = set(index.get("ids", []))
    missing = [i for i in ids if i not in known]
    if missing:
        raise ConfigError(f"heatmap cache lacks {len(missing)} images, e.g. {missing[0]}")
    threshold = index.get("threshold", 0.5)
    return {i: read_heatmap(lay.heatmaps, i, threshold) for i in ids}


def cmd_train_fusion(cfg, lay):
    grid = cfg.grid
    stage1 = _load_model(lay.stage1, "stage-1 checkpoint", PatchNet)
    samples = _load(lay.training_manifest(), "training manifest", grid.full_side)
    maps = _cached_heatmaps(cfg, lay, [s.id for s in samples])
    model, history = train_stage2(cfg.train(2), samples, stage1, cfg.fusionnet(), grid,
                                  heatmaps=maps)
    return [save_checkpoint(model, lay.stage2), history.write(lay.history2)]


def _write_predictions(path, ids, probs, threshold):
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["id\tprobability\tdiagnosis"]
    lines += [f"{i}\t{p:.6f}\t{int(p >= threshold)}" for i, p in zip(ids, probs)]
    path.write_text("\n".join(lines) + "\n")
    return path


def cmd_predict(cfg, lay):
    cascade = _cascade(cfg, lay)
    text = cfg.raw["predict"]["input"]
    if not text:
        raise ConfigError("predict needs --predict.input (an image or a manifest)")
    src = _require(cfg.path("predict", "input", Path(text)), "prediction input")
    if src.suffix == ".tsv":
        samples = _working(load_samples(load_manifest(src)), cfg.grid.full_side)
        ids, images = [s.id for s in samples], [s.pixels for s in samples]
    else:
        pixels = read_image(src).astype(np.float32)
        if pixels.shape[0] != pixels.shape[1] or pixels.shape[0] % cfg.grid.full_side:
            raise LoadError(f"{src}: image {pixels.shape} cannot be resized to "
                            f"{cfg.grid.full_side}")
        ids, images = [src.stem], [resize_area(pixels, cfg.grid.full_side)]
    maps = [cascade.heatmap(img) for img in images]
    probs = cascade.predict_proba(images, maps)
    out = lay.predictions / src.stem
    artifacts = [_write_predictions(out / "predictions.tsv", ids, probs,
                                    cascade.decision_threshold)]
    for i, hm in zip(ids, maps):
        artifacts += write_heatmap(hm, out / "heatmaps", i)
    for i, p in zip(ids, probs):
        print(f"{i}\t{p:.6f}\t{int(p >= cascade.decision_threshold)}")
    return artifacts


def cmd_eval(cfg, lay):
    cascade = _cascade(cfg, lay)
    grid = cfg.grid
    test = _load(cfg.test_manifest, "test manifest", grid.full_side)
    ids = [s.id for s in test]
    try:
        maps = _cached_heatmaps(cfg, lay, ids)
    except (MissingPrerequisiteError, ConfigError):
        maps = None
    if maps is None:
        maps = {s.id: cascade.heatmap(s.pixels) for s in test}
    heatmaps = [maps[i] for i in ids]
    probs = cascade.predict_proba([s.pixels for s in test], heatmaps)
    labels = np.array([s.label for s in test], dtype=np.int64)
    threshold = cascade.decision_threshold
    preds = (probs >= threshold).astype(np.int64)
    rep = classification_report(probs, labels, threshold, title="test evaluation")
    rule = cfg.regions()
    add_strata(rep, stratified_accuracy(labels, preds, [s.boxes for s in test], grid.full_side,
                                        rule), rule)
    lit, hits = localization(heatmaps, test, preds, grid)
    rep.add("localization.lit_bits", lit)
    rep.add("localization.hits", hits)
    rep.add("localization.fraction", hits / lit if lit else None)
    artifacts = rep.write(lay.reports / "eval")
    artifacts.append(_write_predictions(lay.predictions / "test_predictions.tsv", ids, probs,
                                        threshold))
    sys.stdout.write(rep.to_text())
    return artifacts


def cmd_compare_readers(cfg, lay):
    text = cfg.raw["readers"]["path"]
    if text:
        path = _require(cfg.path("readers", "path", Path(text)), "reader file")
        records = read_reader_file(path)
    else:
        with resources.as_file(bundled_reader_file()) as path:
            records = read_reader_file(path)
    rep = reader_report(reader_compare(records))
    sys.stdout.write(rep.to_text())
    return rep.write(lay.reports / "readers")


HANDLERS = {"synth": cmd_synth, "train-patch": cmd_train_patch, "heatmaps": cmd_heatmaps,
            "train-fusion": cmd_train_fusion, "predict": cmd_predict, "eval": cmd_eval,
            "compare-readers": cmd_compare_readers}


# entry point -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parser():
    p = _Parser(prog="cxrcascade", description=__doc__.splitlines()[0])
    p.add_argument("command", help="one of: " + ", ".join(COMMANDS))
    p.add_argument("-c", "--config", help="INI config file")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    return p


def _overrides(extra):
    """``--section.key value`` / ``--section.key=value`` pairs as ``section.key=value``."""
    out, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognised argument {tok!r}")
        if "=" in tok:
            out.append(tok[2:])
            i += 1
        elif i + 1 < len(extra):
            out.append(f"{tok[2:]}={extra[i + 1]}")
            i += 2
        else:
            raise ConfigError(f"{tok} needs a value")
    return out


def _write_run_manifest(cfg, lay, command, artifacts):
    lay.runs.mkdir(parents=True, exist_ok=True)
    rel = []
    for a in artifacts:
        a = Path(a)
        try:
            rel.append(str(a.resolve().relative_to(lay.root.resolve())))
        except ValueError:
            rel.append(str(a))
    doc = {"command": command, "config_hash": cfg.digest(), "seed": cfg.seed,
           "config": cfg.raw, "artifacts": rel,
           "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}
    path = lay.runs / f"{command}.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def run(command, cfg):
    """Validate, lock the output directory and run one pipeline step."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}")
    cfg.validate()
    lay = Layout(cfg)
    lay.root.mkdir(parents=True, exist_ok=True)
    try:
        with FileLock(str(lay.lock), timeout=0):
            start = time.perf_counter()
            artifacts = HANDLERS[command](cfg, lay)
            log.info("%s finished in %.1f s", command, time.perf_counter() - start)
            return _write_run_manifest(cfg, lay, command, artifacts)
    except Timeout:
        raise ConfigError(f"output directory {lay.root} is locked by another run") from None


def exit_code(exc):
    for kind, code in EXIT_CODES:
        if isinstance(exc, kind):
            return code
    return 4 if isinstance(exc, CascadeError) else 1


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args, extra = _parser().parse_known_args(argv)
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = load_config(args.config, _overrides(extra))
        run(args.command, cfg)
    except CascadeError as exc:
        print(f"cxrcascade: error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except (OSError, ValueError) as exc:
        print(f"cxrcascade: error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Run configuration: an INI file with sections, overridable by dotted flags."""
import configparser
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .data.synth import SynthConfig
from .exceptions import ConfigError, ParameterError
from .models import FusionNetConfig, PatchNetConfig
from .nn.optim import LrSchedule
from .patching import WindowGrid
from .regions import RegionRule
from .training import TrainConfig

# desk-scale defaults; every key here may be overridden as --section.key
DEFAULTS = {
    "run": {"output_dir": "runs/desk", "seed": "7"},
    "synth": {
        "count": "2500", "side": "64", "positive_fraction": "0.4",
        "review_fraction": "0.3", "other_disease_fraction": "0.5",
        "blob_radius": "0.05,0.12", "blob_intensity": "0.25,0.45", "texture": "0.03",
        "max_blobs": "3", "test_fraction": "0.2",
    },
    "data": {"train_manifest": "", "test_manifest": ""},
    "geometry": {
        "full_side": "64", "patch_side": "32", "stride": "2", "input_side": "32",
        "heatmap_threshold": "0.5", "label_threshold": "0.1",
    },
    "patchnet": {
        "base_channels": "4", "blocks": "3", "extra_conv": "true", "dropout_rate": "0.2",
        "channel_cap": "256",
    },
    "fusionnet": {
        "heatmap_channels": "8", "base_channels": "4", "blocks": "3", "extra_conv": "true",
        "dropout_rate": "0.2", "channel_cap": "256",
    },
    "train": {
        "batch_size": "16", "base_lr": "0.001", "gamma": "0.9", "period_epochs": "50",
        "stage1_epochs": "12", "stage2_epochs": "20", "patches_per_image": "4",
        "val_fraction": "0.2", "augment_target": "0",
    },
    "regions": {"apex_y": "0.0,0.2", "heart_x": "0.55,0.9", "heart_y": "0.55,0.95"},
    "eval": {"threshold": "0.5"},
    "readers": {"path": ""},
    "predict": {"input": ""},
}


def _pair(text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'lo,hi', got {text!r}")
    return (float(parts[0]), float(parts[1]))


def _bool(text):
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    base_dir: Path

    # typed accessors -----------------------------------------------------------
    def get(self, section, key, conv=str):
        text = self.raw[section][key]
        try:
            return conv(text)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: {exc}") from None

    def path(self, section, key, default):
        text = self.raw[section][key]
        p = Path(text) if text else default
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self):
        p = Path(self.raw["run"]["output_dir"])
        return p if p.is_absolute() else self.base_dir / p

    @property
    def seed(self):
        return self.get("run", "seed", int)

    @property
    def train_manifest(self):
        return self.path("data", "train_manifest", self.output_dir / "data" / "train.tsv")

    @property
    def test_manifest(self):
        return self.path("data", "test_manifest", self.output_dir / "data" / "test.tsv")

    @property
    def grid(self):
        g = self.raw["geometry"]
        try:
            return WindowGrid(int(g["full_side"]), int(g["patch_side"]), int(g["stride"]))
        except (ValueError, ParameterError) as exc:
            raise ConfigError(f"geometry: {exc}") from None

    def synth(self):
        s = self.raw["synth"]
        try:
            return SynthConfig(
                count=int(s["count"]), side=int(s["side"]),
                positive_fraction=float(s["positive_fraction"]),
                review_fraction=float(s["review_fraction"]),
                other_disease_fraction=float(s["other_disease_fraction"]),
                blob_radius=_pair(s["blob_radius"]), blob_intensity=_pair(s["blob_intensity"]),
                texture=float(s["texture"]), max_blobs=int(s["max_blobs"]))
        except (ValueError, ParameterError) as exc:
            raise ConfigError(f"synth: {exc}") from None

    def _net(self, section, input_side):
        s = self.raw[section]
        try:
            return PatchNetConfig(
                input_side=input_side, base_channels=int(s["base_channels"]),
                blocks=int(s["blocks"]), extra_conv=_bool(s["extra_conv"]),
                dropout_rate=float(s["dropout_rate"]), channel_cap=int(s["channel_cap"]))
        except ValueError as exc:
            raise ConfigError(f"{section}: {exc}") from None

    def patchnet(self):
        return self._net("patchnet", self.get("geometry", "patch_side", int))

    def fusionnet(self):
        image = self._net("fusionnet", self.get("geometry", "input_side", int))
        try:
            return FusionNetConfig(
                heatmap_side=self.grid.grid_side,
                heatmap_channels=self.get("fusionnet", "heatmap_channels", int),
                image=image, dropout_rate=self.get("fusionnet", "dropout_rate", float))
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"fusionnet: {exc}") from None

    def train(self, stage):
        t = self.raw["train"]
        try:
            schedule = LrSchedule(float(t["base_lr"]), float(t["gamma"]),
                                  int(t["period_epochs"]))
            return TrainConfig(
                batch_size=int(t["batch_size"]), schedule=schedule,
                epochs=int(t[f"stage{stage}_epochs"]), seed=self.seed,
                patches_per_image=int(t["patches_per_image"]),
                val_fraction=float(t["val_fraction"]),
                label_threshold=self.get("geometry", "label_threshold", float))
        except (ValueError, ParameterError) as exc:
            raise ConfigError(f"train: {exc}") from None

    def regions(self):
        r = self.raw["regions"]
        try:
            return RegionRule(_pair(r["apex_y"]), _pair(r["heart_x"]), _pair(r["heart_y"]))
        except (ValueError, ParameterError) as exc:
            raise ConfigError(f"regions: {exc}") from None

    def validate(self):
        """Check every section up front so no command starts on a bad config."""
        grid = self.grid
        self.synth()
        pn = self.patchnet()
        fn = self.fusionnet()
        self.train(1)
        self.train(2)
        self.regions()
        if grid.full_side % fn.image.input_side:
            raise ConfigError(
                f"geometry.input_side {fn.image.input_side} must divide full_side {grid.full_side}")
        if pn.input_side != grid.patch_side:
            raise ConfigError("patch network input must equal geometry.patch_side")
        for key in ("heatmap_threshold", "label_threshold"):
            v = self.get("geometry", key, float)
            if not 0 <= v <= 1:
                raise ConfigError(f"geometry.{key} must lie in [0, 1]")
        if not 0 < self.get("synth", "test_fraction", float) < 1:
            raise ConfigError("synth.test_fraction must lie in (0, 1)")
        if self.get("train", "augment_target", int) < 0:
            raise ConfigError("train.augment_target must be >= 0")
        self.get("eval", "threshold", float)
        return self

    def canonical(self):
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def load_config(path=None, overrides=(), base_dir=None):
    """Merge defaults, an optional INI file and ``section.key=value`` overrides."""
    raw = {s: dict(v) for s, v in DEFAULTS.items()}
    if path is not None:
        path = Path(path)
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with path.open() as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"config {path}: {exc}") from None
        for section in parser.sections():
            if section not in raw:
                raise ConfigError(f"config {path}: unknown section [{section}]")
            for key, value in parser.items(section):
                if key not in raw[section]:
                    raise ConfigError(f"config {path}: unknown key {section}.{key}")
                raw[section][key] = value
        if base_dir is None:
            base_dir = path.parent
    for item in overrides:
        dotted, sep, value = item.partition("=")
        section, _, key = dotted.partition(".")
        if not sep or section not in raw or key not in raw[section]:
            raise ConfigError(f"unknown override {dotted!r}")
        raw[section][key] = value
    return RunConfig(raw, Path(base_dir) if base_dir is not None else Path.cwd())


def write_config(raw, path):
    parser = configparser.ConfigParser(interpolation=None)
    for section, values in raw.items():
        parser[section] = values
    with Path(path).open("w") as fh:
        parser.write(fh)

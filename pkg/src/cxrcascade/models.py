"""Stage-1 PatchNet, stage-2 FusionNet, the cascade wrapper and checkpoints."""
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data.transforms import resize_area
from .exceptions import CheckpointError, ConfigError, DimensionError
from .nn.layers import (Activation, Conv2D, Dense, Dropout, Flatten, GlobalAvgPool,
                        MaxPool2, Sequential, init_uniform_fan_in)
from .patching import Heatmap, WindowGrid, build_heatmap

PREDICT_CHUNK = 512


@dataclass(frozen=True)
class PatchNetConfig:
    """Conv stack of ``blocks`` x (conv, relu, conv, relu, maxpool) plus a head.

    Channels start at ``base_channels`` and double every block (capped);
    ``extra_conv`` appends one more conv at the doubled width. The full-scale
    reading is ``input_side=256, blocks=6, extra_conv=True`` (13 convs).
    """

    input_side: int = 32
    base_channels: int = 8
    blocks: int = 3
    extra_conv: bool = True
    dropout_rate: float = 0.5
    kernel: int = 3
    channel_cap: int = 256
    input_mean: float = 0.5
    input_std: float = 0.25

    def __post_init__(self):
        if self.blocks < 1 or self.base_channels < 1 or self.kernel < 1:
            raise ConfigError("blocks, base_channels and kernel must be positive")
        if self.kernel % 2 == 0:
            raise ConfigError("kernel must be odd so 'same' padding is symmetric")
        if self.input_side < 1 or self.input_side % (2 ** self.blocks):
            raise ConfigError(
                f"input_side {self.input_side} is not divisible by 2**blocks = {2 ** self.blocks}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.channel_cap < self.base_channels:
            raise ConfigError("channel_cap must be >= base_channels")
        if not self.input_std > 0:
            raise ConfigError("input_std must be positive")

    def standardize(self, x, dtype):
        x = np.asarray(x, dtype=dtype)
        return (x - dtype(self.input_mean)) / dtype(self.input_std)

    @property
    def conv_layer_count(self):
        return 2 * self.blocks + int(self.extra_conv)

    def channel_sequence(self):
        chans = []
        for b in range(self.blocks):
            c = min(self.base_channels * 2 ** b, self.channel_cap)
            chans += [c, c]
        if self.extra_conv:
            chans.append(min(self.base_channels * 2 ** self.blocks, self.channel_cap))
        return chans

    @property
    def feature_dim(self):
        return self.channel_sequence()[-1]

    @property
    def final_spatial(self):
        return self.input_side // 2 ** self.blocks

    def conv_param_count(self):
        k2 = self.kernel ** 2
        total, c_in = 0, 1
        for c in self.channel_sequence():
            total += c_in * c * k2 + c
            c_in = c
        return total

    def param_count(self):
        return self.conv_param_count() + self.feature_dim + 1

    @classmethod
    def from_dict(cls, d):
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


@dataclass(frozen=True)
class FusionNetConfig:
    heatmap_side: int = 17
    heatmap_channels: int = 8
    image: PatchNetConfig = field(default_factory=PatchNetConfig)
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.heatmap_side < 1 or self.heatmap_channels < 1:
            raise ConfigError("heatmap_side and heatmap_channels must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")

    @property
    def fusion_dim(self):
        return self.heatmap_channels * self.heatmap_side ** 2 + self.image.feature_dim

    def param_count(self):
        heat = 9 * self.heatmap_channels + self.heatmap_channels
        return heat + self.image.conv_param_count() + self.fusion_dim + 1

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["image"] = PatchNetConfig.from_dict(d["image"])
        return cls(**{f.name: d[f.name] for f in fields(cls) if f.name in d})


def conv_stack(cfg, dtype=np.float32):
    """Conv/ReLU/pool blocks (+ optional extra conv) ending in global average pooling."""
    layers, c_in = [], 1
    chans = cfg.channel_sequence()
    for b in range(cfg.blocks):
        for c in chans[2 * b:2 * b + 2]:
            layers += [Conv2D(c_in, c, cfg.kernel, dtype=dtype), Activation("relu")]
            c_in = c
        layers.append(MaxPool2())
    if cfg.extra_conv:
        layers += [Conv2D(c_in, chans[-1], cfg.kernel, dtype=dtype), Activation("relu")]
    layers.append(GlobalAvgPool())
    return layers


class _Network:
    kind = ""

    def parameters(self):
        out = {}
        for name, seq in self._parts():
            out.update(seq.named_params(f"{name}."))
        return out

    def gradients(self):
        out = {}
        for name, seq in self._parts():
            out.update(seq.named_grads(f"{name}."))
        return out

    def n_params(self):
        return sum(p.size for p in self.parameters().values())

    @property
    def dtype(self):
        return next(iter(self.parameters().values())).dtype

    def _init(self, rng):
        for _, seq in self._parts():
            init_uniform_fan_in(seq.layers, rng)


class PatchNet(_Network):
    """Stage-1 classifier: probability that a square patch shows an opacity."""

    kind = "patchnet"

    def __init__(self, config=PatchNetConfig(), rng=None, dtype=np.float32):
        self.config = config
        self.metadata = {}
        self.net = Sequential(conv_stack(config, dtype) + [
            Dropout(config.dropout_rate),
            Dense(config.feature_dim, 1, dtype=dtype),
            Activation("sigmoid"),
        ])
        if rng is not None:
            self._init(rng)

    def _parts(self):
        return [("net", self.net)]

    @property
    def input_side(self):
        return self.config.input_side

    @property
    def conv_layer_count(self):
        return sum(isinstance(layer, Conv2D) for layer in self.net.layers)

    def _check(self, x):
        s = self.config.input_side
        if x.ndim != 3 or x.shape[1:] != (s, s):
            raise DimensionError(f"PatchNet expects (N, {s}, {s}) input, got {x.shape}")

    def forward(self, x, training=False, rng=None):
        """``x`` is (N, S, S); returns probabilities of shape (N,)."""
        x = np.asarray(x)
        self._check(x)
        x = self.config.standardize(x, self.dtype.type)
        return self.net.forward(x[..., None], training, rng)[:, 0]

    def backward(self, dprob):
        self.net.backward(dprob[:, None].astype(self.dtype, copy=False))
        return self.gradients()

    def predict_proba(self, patches):
        patches = np.asarray(patches)
        self._check(patches)
        return np.concatenate([self.forward(patches[i:i + PREDICT_CHUNK])
                               for i in range(0, len(patches), PREDICT_CHUNK)]) \
            if len(patches) else np.zeros(0, dtype=self.dtype)

    def descriptor(self):
        return {"kind": self.kind, "config": asdict(self.config)}


class FusionNet(_Network):
    """Stage-2 classifier over (downscaled image, binary heatmap) pairs."""

    kind = "fusionnet"

    def __init__(self, config=FusionNetConfig(), rng=None, dtype=np.float32):
        self.config = config
        self.metadata = {}
        hc = config.heatmap_channels
        self.heat = Sequential([
            Conv2D(1, hc, 3, padding=1, dtype=dtype),
            Activation("relu"),
            Dropout(config.dropout_rate),
            Flatten(),
        ])
        self.image = Sequential(conv_stack(config.image, dtype)
                                + [Dropout(config.image.dropout_rate)])
        self.head = Sequential([Dense(config.fusion_dim, 1, dtype=dtype), Activation("sigmoid")])
        if rng is not None:
            self._init(rng)

    def _parts(self):
        return [("heat", self.heat), ("image", self.image), ("head", self.head)]

    @property
    def input_side(self):
        return self.config.image.input_side

    def _check(self, images, heatmaps):
        s, g = self.config.image.input_side, self.config.heatmap_side
        if images.ndim != 3 or images.shape[1:] != (s, s):
            raise DimensionError(f"FusionNet expects (N, {s}, {s}) images, got {images.shape}")
        if heatmaps.shape != (images.shape[0], g, g):
            raise DimensionError(
                f"FusionNet expects ({images.shape[0]}, {g}, {g}) heatmaps, got {heatmaps.shape}")

    def forward(self, images, heatmaps, training=False, rng=None):
        images = np.asarray(images)
        heatmaps = np.asarray(heatmaps)
        self._check(images, heatmaps)
        dt = self.dtype
        h = self.heat.forward(heatmaps[..., None].astype(dt), training, rng)
        f = self.image.forward(self.config.image.standardize(images, dt.type)[..., None],
                               training, rng)
        if training:
            self._split = h.shape[1]
        return self.head.forward(np.concatenate([h, f], axis=1), training, rng)[:, 0]

    def backward(self, dprob):
        d = self.head.backward(dprob[:, None].astype(self.dtype, copy=False))
        self.heat.backward(d[:, :self._split])
        self.image.backward(d[:, self._split:])
        return self.gradients()

    def predict_proba(self, images, heatmaps):
        images = np.asarray(images)
        heatmaps = np.asarray(heatmaps)
        self._check(images, heatmaps)
        if not len(images):
            return np.zeros(0, dtype=self.dtype)
        return np.concatenate([self.forward(images[i:i + PREDICT_CHUNK],
                                            heatmaps[i:i + PREDICT_CHUNK])
                               for i in range(0, len(images), PREDICT_CHUNK)])

    def descriptor(self):
        return {"kind": self.kind, "config": asdict(self.config)}


def patchnet_init(config, rng, dtype=np.float32):
    return PatchNet(config, rng, dtype)


def patchnet_forward(model, patch, training=False, rng=None):
    """Probability for a single (1, S, S) or (S, S) patch."""
    patch = np.asarray(patch)
    if patch.ndim == 3 and patch.shape[0] == 1:
        patch = patch[0]
    return float(model.forward(patch[None], training, rng)[0])


def fusionnet_forward(model, image, heatmap, training=False, rng=None):
    image = np.asarray(image)
    if image.ndim == 3 and image.shape[0] == 1:
        image = image[0]
    bits = heatmap.bits if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    return float(model.forward(image[None], bits[None], training, rng)[0])


# cascade ---------------------------------------------------------------------


@dataclass
class Cascade:
    """Stage-1 patch model + stage-2 fusion model + window geometry."""

    stage1: object
    stage2: object
    grid: WindowGrid
    heatmap_threshold: float = 0.5
    decision_threshold: float = 0.5

    def heatmap(self, image):
        return build_heatmap(self.stage1, resize_area(image, self.grid.full_side), self.grid,
                             self.heatmap_threshold)

    def stage2_image(self, image):
        return resize_area(image, self.stage2.input_side)

    def predict_proba(self, images, heatmaps=None):
        """Probabilities for (N, H, H) images; heatmaps are computed if not given."""
        if heatmaps is None:
            heatmaps = [self.heatmap(img) for img in images]
        small = np.stack([self.stage2_image(img) for img in images]) if len(images) else \
            np.zeros((0, self.stage2.input_side, self.stage2.input_side))
        bits = np.stack([h.bits for h in heatmaps]) if len(heatmaps) else \
            np.zeros((0, self.grid.grid_side, self.grid.grid_side))
        return np.asarray(self.stage2.predict_proba(small, bits), dtype=np.float64)


def predict(cascade, sample):
    """End-to-end ``(probability, diagnosis, heatmap)`` for one sample."""
    pixels = sample.pixels if hasattr(sample, "pixels") else np.asarray(sample)
    heatmap = cascade.heatmap(pixels)
    prob = float(cascade.predict_proba([pixels], [heatmap])[0])
    return prob, int(prob >= cascade.decision_threshold), heatmap


# checkpoints -----------------------------------------------------------------

MAGIC = b"CXRCKPT\x00"
VERSION = 1


def _dump_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def checkpoint_bytes(model):
    out = [MAGIC, struct.pack("<I", VERSION)]
    for blob in (_dump_json(model.descriptor()), _dump_json(model.metadata)):
        out += [struct.pack("<I", len(blob)), blob]
    params = model.parameters()
    out.append(struct.pack("<I", len(params)))
    for name, arr in params.items():
        key = name.encode()
        out += [struct.pack("<H", len(key)), key, struct.pack("<B", arr.ndim),
                struct.pack(f"<{arr.ndim}I", *arr.shape),
                np.ascontiguousarray(arr, dtype="<f4").tobytes()]
    return b"".join(out)


def save_checkpoint(model, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model))
    return path


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _build(descriptor, path):
    kind = descriptor.get("kind")
    try:
        if kind == PatchNet.kind:
            return PatchNet(PatchNetConfig.from_dict(descriptor["config"]))
        if kind == FusionNet.kind:
            return FusionNet(FusionNetConfig.from_dict(descriptor["config"]))
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"{path}: bad architecture descriptor: {exc}") from None
    raise CheckpointError(f"{path}: unknown model kind {kind!r}")


def load_checkpoint(path, model=None):
    """Read a checkpoint; with ``model`` given, load into it (shapes must match)."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    r = _Reader(data, path)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {VERSION}")
    blobs = []
    for what in ("descriptor", "metadata"):
        (n,) = r.unpack("<I", what)
        try:
            blobs.append(json.loads(r.take(n, what)))
        except ValueError:
            raise CheckpointError(f"{path}: corrupt {what}") from None
    descriptor, metadata = blobs
    if model is None:
        model = _build(descriptor, path)
    elif descriptor.get("kind") != model.kind:
        raise CheckpointError(
            f"{path}: holds a {descriptor.get('kind')!r}, target is a {model.kind!r}")
    params = model.parameters()
    (count,) = r.unpack("<I", "blob count")
    if count != len(params):
        raise CheckpointError(f"{path}: {count} parameter blobs, model has {len(params)}")
    for _ in range(count):
        (klen,) = r.unpack("<H", "blob name")
        name = r.take(klen, "blob name").decode()
        (ndim,) = r.unpack("<B", f"blob {name}")
        shape = r.unpack(f"<{ndim}I", f"blob {name}")
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(r.take(4 * size, f"blob {name}"), dtype="<f4").reshape(shape)
        if name not in params:
            raise CheckpointError(f"{path}: blob {name} has no counterpart in the model")
        if params[name].shape != tuple(shape):
            raise CheckpointError(
                f"{path}: blob {name} has shape {tuple(shape)}, model expects "
                f"{params[name].shape}")
        params[name][...] = values
    if r.pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - r.pos} trailing bytes")
    model.metadata = metadata
    return model

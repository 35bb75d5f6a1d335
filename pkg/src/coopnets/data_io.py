"""Dataset loading/synthesis, image I/O, montages, and versioned checkpoints.

Pixels map affinely between {0..255} and 256 evenly spaced points of
[-1, 1] (p -> 2p/255 - 1), matching the generator's tanh output range.
Checkpoints are a small binary format: magic "COOP", u32 version, a JSON
header (specs, config, RNG state, array manifest), then raw little-endian
f64 blobs in row-major order.
"""

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .langevin import LangevinConfig
from .nets import DescriptorNet, GeneratorNet, LayerSpec
from .training import ChainState, TrainConfig

CHECKPOINT_MAGIC = b"COOP"
CHECKPOINT_VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


@dataclass
class Dataset:
    examples: np.ndarray  # (N, C, H, W)
    source: str
    channels: int


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def read_pgm(path):
    """Binary (P5) PGM, maxval 255.  Returns (H, W) uint8."""
    with open(path, "rb") as fp:
        data = fp.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(data):
            raise ValueError(f"{path}: truncated PGM header")
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] not in b"\r\n":
                i += 1
        elif data[i] in b" \t\r\n":
            i += 1
        else:
            j = i
            while j < len(data) and data[j] not in b" \t\r\n#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    i += 1  # single whitespace after maxval
    pixels = data[i:i + w * h]
    if len(pixels) < w * h:
        raise ValueError(f"{path}: truncated PGM pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def write_pgm(path, img):
    """img: (H, W) uint8."""
    h, w = img.shape
    with open(path, "wb") as fp:
        fp.write(b"P5\n%d %d\n255\n" % (w, h))
        fp.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def _read_image(path, channels):
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        gray = read_pgm(path).astype(np.float64)
        img = gray[None] if channels == 1 else np.repeat(gray[None], 3, axis=0)
    elif path.suffix.lower() == ".png":
        from PIL import Image
        with Image.open(path) as im:
            im = im.convert("L" if channels == 1 else "RGB")
            arr = np.asarray(im, dtype=np.float64)
        img = arr[None] if channels == 1 else arr.transpose(2, 0, 1)
    else:
        raise ValueError(f"{path}: unsupported image format {path.suffix!r}")
    return img  # (C, H, W) in 0..255


def bilinear_resize(img, out_h, out_w):
    """Bilinear resampling of (C, H, W), pixel centers aligned at (i+0.5)/n."""
    c, h, w = img.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    out = np.empty((c, out_h, out_w))
    for ch in range(c):
        p = img[ch]
        top = p[y0][:, x0] * (1 - wx) + p[y0][:, x1] * wx
        bot = p[y1][:, x0] * (1 - wx) + p[y1][:, x1] * wx
        out[ch] = top * (1 - wy) + bot * wy
    return out


def normalize_pixels(img255):
    """{0..255} -> 256 evenly spaced points of [-1, 1]."""
    return 2.0 * img255 / 255.0 - 1.0


def denormalize_pixels(signal):
    """[-1, 1] -> {0..255} with clamping and floor (0 maps to 127)."""
    p = (np.clip(signal, -1.0, 1.0) + 1.0) * 255.0 / 2.0
    return np.clip(np.floor(p), 0, 255).astype(np.uint8)


def load_images(path, channels=1, target_size=None):
    """Load every .pgm/.png under `path` into a normalized Dataset."""
    if channels not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {channels}")
    path = Path(path)
    files = sorted(p for p in path.iterdir()
                   if p.suffix.lower() in (".pgm", ".png"))
    if not files:
        raise FileNotFoundError(f"no .pgm or .png images in {path}")
    out = []
    for f in files:
        try:
            img = _read_image(f, channels)
        except Exception as e:
            raise ValueError(f"failed to decode {f}: {e}") from e
        if target_size is not None:
            img = bilinear_resize(img, target_size, target_size)
        out.append(normalize_pixels(img))
    shapes = {im.shape for im in out}
    if len(shapes) != 1:
        raise ValueError(f"images in {path} have mixed shapes {shapes}; pass target_size")
    return Dataset(np.stack(out), source=str(path), channels=channels)


def save_montage(batch, grid_cols, path):
    """Tile a batch row-major into one image; PGM for 1 channel, PNG otherwise."""
    if batch.shape[0] == 0:
        raise ValueError("empty batch")
    n, c, h, w = batch.shape
    grid_cols = max(1, int(grid_cols))
    rows = (n + grid_cols - 1) // grid_cols
    canvas = np.zeros((c, rows * h, grid_cols * w))
    for i in range(n):
        r, col = divmod(i, grid_cols)
        canvas[:, r * h:(r + 1) * h, col * w:(col + 1) * w] = batch[i]
    pixels = denormalize_pixels(canvas)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".pgm" or (c == 1 and path.suffix == ""):
        if c != 1:
            raise ValueError("PGM montage requires a single channel")
        write_pgm(path, pixels[0])
    else:
        from PIL import Image
        arr = pixels[0] if c == 1 else pixels.transpose(1, 2, 0)
        Image.fromarray(arr).save(path)
    return path


# ---------------------------------------------------------------------------
# toy datasets
# ---------------------------------------------------------------------------

def make_toy_dataset(kind, params, n, seed):
    """Deterministic desk-scale datasets; see each branch for params."""
    if n < 1:
        raise ValueError("need n >= 1 examples")
    rng = np.random.default_rng(seed)
    if kind == "gaussian_mixture_2d":
        means = np.asarray(params["means"], dtype=np.float64)
        stds = np.broadcast_to(np.asarray(params["stds"], dtype=np.float64), (len(means),))
        weights = np.asarray(params.get("weights", np.ones(len(means)) / len(means)))
        weights = weights / weights.sum()
        comp = rng.choice(len(means), size=n, p=weights)
        pts = means[comp] + stds[comp][:, None] * rng.standard_normal((n, 2))
        return Dataset(pts.reshape(n, 2, 1, 1), source="gaussian_mixture_2d", channels=2)
    if kind == "linear_factor":
        d = int(params["latent_dim"])
        sigma = float(params["sigma"])
        if "weights" in params and params["weights"] is not None:
            w = np.asarray(params["weights"], dtype=np.float64)
        else:
            w = rng.standard_normal((int(params["dim"]), d))
        dim = w.shape[0]
        x = rng.standard_normal((n, d))
        y = x @ w.T + sigma * rng.standard_normal((n, dim))
        shape = tuple(params.get("shape", (dim, 1, 1)))
        if int(np.prod(shape)) != dim:
            raise ValueError(f"shape {shape} does not hold {dim} values")
        return Dataset(y.reshape((n,) + shape), source="linear_factor", channels=shape[0])
    if kind == "texture_patch":
        src = np.asarray(params["source"], dtype=np.float64)
        if src.ndim != 3:
            raise ValueError("texture_patch needs a (C, H, W) source image")
        k = int(params["patch"])
        c, h, w = src.shape
        if k > h or k > w:
            raise ValueError(f"patch size {k} exceeds source {h}x{w}")
        ys = rng.integers(0, h - k + 1, size=n)
        xs = rng.integers(0, w - k + 1, size=n)
        crops = np.stack([src[:, y:y + k, x:x + k] for y, x in zip(ys, xs)])
        return Dataset(crops, source="texture_patch", channels=c)
    raise ValueError(f"unknown toy dataset kind {kind!r}")


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    iteration: int
    descriptor: DescriptorNet = None
    generator: GeneratorNet = None
    train_config: TrainConfig = None
    rng_state: dict = None
    chain_state: ChainState = field(default_factory=ChainState)
    version: int = CHECKPOINT_VERSION


def _config_to_dict(cfg):
    d = dict(cfg.__dict__)
    for key in ("langevin_d", "langevin_g"):
        d[key] = dict(d[key].__dict__)
    return d


def _config_from_dict(d):
    d = dict(d)
    d["langevin_d"] = LangevinConfig(**d["langevin_d"])
    d["langevin_g"] = LangevinConfig(**d["langevin_g"])
    return TrainConfig(**d)


def save_checkpoint(ckpt, path):
    arrays = []

    def register(name, arr):
        arrays.append((name, np.ascontiguousarray(arr, dtype=np.float64)))

    header = {"iteration": int(ckpt.iteration)}
    if ckpt.descriptor is not None:
        header["descriptor"] = {
            "layer_specs": [s.to_dict() for s in ckpt.descriptor.layer_specs],
            "input_shape": list(ckpt.descriptor.input_shape),
            "ref_std": ckpt.descriptor.ref_std}
        for i, (w, b) in enumerate(ckpt.descriptor.params):
            register(f"d{i}.w", w)
            register(f"d{i}.b", b)
    if ckpt.generator is not None:
        header["generator"] = {
            "layer_specs": [s.to_dict() for s in ckpt.generator.layer_specs],
            "latent_shape": list(ckpt.generator.latent_shape),
            "noise_std": ckpt.generator.noise_std}
        for i, (w, b) in enumerate(ckpt.generator.params):
            register(f"g{i}.w", w)
            register(f"g{i}.b", b)
    if ckpt.train_config is not None:
        header["train_config"] = _config_to_dict(ckpt.train_config)
    if ckpt.rng_state is not None:
        header["rng_state"] = ckpt.rng_state
    for name in ("latents", "drafts", "revised", "reconstructions"):
        arr = getattr(ckpt.chain_state, name)
        if arr is not None:
            register(f"chain.{name}", arr)
    header["arrays"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fp:
        fp.write(CHECKPOINT_MAGIC)
        fp.write(struct.pack("<I", CHECKPOINT_VERSION))
        fp.write(struct.pack("<Q", len(blob)))
        fp.write(blob)
        for _, arr in arrays:
            fp.write(arr.astype("<f8").tobytes())
    return path


def _read_exact(fp, nbytes, what):
    data = fp.read(nbytes)
    if len(data) != nbytes:
        raise CheckpointTruncatedError(f"checkpoint truncated while reading {what}")
    return data


def load_checkpoint(path):
    with open(path, "rb") as fp:
        magic = _read_exact(fp, 4, "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointMagicError(f"bad checkpoint magic {magic!r}")
        version = struct.unpack("<I", _read_exact(fp, 4, "version"))[0]
        if version != CHECKPOINT_VERSION:
            raise CheckpointVersionError(f"unsupported checkpoint version {version}")
        hlen = struct.unpack("<Q", _read_exact(fp, 8, "header length"))[0]
        try:
            header = json.loads(_read_exact(fp, hlen, "header"))
        except json.JSONDecodeError as e:
            raise CheckpointTruncatedError(f"corrupt checkpoint header: {e}") from e
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fp, 8 * count, f"array {entry['name']}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    def load_params(prefix, net):
        for i in range(len(net.params)):
            net.params[i] = [arrays[f"{prefix}{i}.w"], arrays[f"{prefix}{i}.b"]]

    descriptor = generator = None
    if "descriptor" in header:
        h = header["descriptor"]
        descriptor = DescriptorNet([LayerSpec.from_dict(s) for s in h["layer_specs"]],
                                   tuple(h["input_shape"]), h["ref_std"])
        load_params("d", descriptor)
    if "generator" in header:
        h = header["generator"]
        generator = GeneratorNet([LayerSpec.from_dict(s) for s in h["layer_specs"]],
                                 tuple(h["latent_shape"]), h["noise_std"])
        load_params("g", generator)
    train_config = _config_from_dict(header["train_config"]) if "train_config" in header else None
    chain = ChainState(latents=arrays.get("chain.latents"),
                       drafts=arrays.get("chain.drafts"),
                       revised=arrays.get("chain.revised"),
                       reconstructions=arrays.get("chain.reconstructions"))
    return Checkpoint(iteration=header["iteration"], descriptor=descriptor,
                      generator=generator, train_config=train_config,
                      rng_state=header.get("rng_state"), chain_state=chain,
                      version=version)

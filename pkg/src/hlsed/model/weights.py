"""Architecture configs, weight initialization and the weight file format.

Weight file layout (all integers little-endian)::

    b"HLSW"                      magic
    u32                          length of the JSON manifest
    JSON manifest                {format_version, architecture, config, seed,
                                  tensors: [{name, dtype, shape, offset}]}
    tensor blob                  concatenated little-endian tensors
    u32                          CRC32 of every preceding byte
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ChecksumError, InvalidConfig, ShapeMismatch, VersionMismatch

FORMAT_VERSION = 1
MAGIC = b"HLSW"
BUFFER_SUFFIXES = (".running_mean", ".running_var")
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


@dataclass(frozen=True)
class CrnnConfig:
    n_mels: int = 64
    n_classes: int = 8
    conv_blocks: int = 3
    convs_per_block: int = 2
    kernel: int = 3
    channels: tuple = (64, 128, 256)
    freq_pool: int = 2
    gru_hidden: int = 256
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.9

    arch = "crnn"

    def validate(self):
        _check_frontend(self)
        if self.gru_hidden < 1:
            raise InvalidConfig("gru_hidden must be >= 1")
        return self


@dataclass(frozen=True)
class TcnConfig:
    n_mels: int = 64
    n_classes: int = 8
    conv_blocks: int = 3
    convs_per_block: int = 2
    kernel: int = 3
    channels: tuple = (64, 128, 256)
    freq_pool: int = 2
    n_filters: int = 256
    dilations: tuple = (1, 2, 4, 8, 16)
    tcn_kernel: int = 3
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.9

    arch = "tcn"

    def validate(self):
        _check_frontend(self)
        if self.n_filters < 1:
            raise InvalidConfig("n_filters must be >= 1")
        if not self.dilations or any(d < 1 for d in self.dilations):
            raise InvalidConfig("dilations must be positive")
        if any(b <= a for a, b in zip(self.dilations, self.dilations[1:])):
            raise InvalidConfig("dilations must be strictly increasing")
        if self.tcn_kernel < 1 or self.tcn_kernel % 2 == 0:
            raise InvalidConfig("tcn_kernel must be odd")
        return self

    @property
    def receptive_field(self) -> int:
        """Frames seen by one output of the dilated stack."""
        return 1 + (self.tcn_kernel - 1) * sum(self.dilations)


def _check_frontend(cfg):
    if cfg.n_classes < 1 or cfg.n_mels < 1:
        raise InvalidConfig("n_classes and n_mels must be >= 1")
    if cfg.conv_blocks < 1 or cfg.convs_per_block < 1:
        raise InvalidConfig("need at least one conv block with one conv")
    if len(cfg.channels) != cfg.conv_blocks:
        raise InvalidConfig(f"channels has {len(cfg.channels)} entries, conv_blocks={cfg.conv_blocks}")
    if cfg.kernel < 1 or cfg.kernel % 2 == 0:
        raise InvalidConfig("kernel must be odd for 'same' padding")
    if cfg.n_mels % (cfg.freq_pool ** cfg.conv_blocks):
        raise InvalidConfig(
            f"n_mels={cfg.n_mels} is not divisible by {cfg.freq_pool}**{cfg.conv_blocks}"
        )
    if not 0 <= cfg.bn_momentum < 1 or cfg.bn_epsilon <= 0:
        raise InvalidConfig("bad batch-norm constants")


CONFIGS = {"crnn": CrnnConfig, "tcn": TcnConfig}


def config_from_dict(arch: str, d: dict):
    try:
        cls = CONFIGS[arch]
    except KeyError:
        raise InvalidConfig(f"unknown architecture {arch!r}") from None
    d = dict(d)
    for key in ("channels", "dilations"):
        if key in d:
            d[key] = tuple(d[key])
    try:
        return cls(**d).validate()
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


@dataclass
class ModelWeights:
    arch: str
    config: CrnnConfig | TcnConfig
    tensors: dict = field(default_factory=dict)
    seed: int | None = None
    # bumped on every in-place update so stale forward caches can be detected
    version: int = 0

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def parameter_names(self):
        return [k for k in self.tensors if not k.endswith(BUFFER_SUFFIXES)]

    def buffer_names(self):
        return [k for k in self.tensors if k.endswith(BUFFER_SUFFIXES)]

    def copy(self) -> "ModelWeights":
        return ModelWeights(
            self.arch, self.config, {k: v.copy() for k, v in self.tensors.items()}, self.seed, self.version
        )

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(
            self.arch, self.config, {k: v.astype(dtype) for k, v in self.tensors.items()}, self.seed, self.version
        )


# ---------------------------------------------------------------------------
# shapes and init
# ---------------------------------------------------------------------------

def _frontend_shapes(cfg):
    shapes = {}
    c_in = 1
    for b, c_out in enumerate(cfg.channels, start=1):
        for l in range(1, cfg.convs_per_block + 1):
            prefix = f"block{b}.conv{l}"
            shapes[f"{prefix}.kernel"] = (cfg.kernel, cfg.kernel, c_in, c_out)
            for suffix in ("scale", "shift", "running_mean", "running_var"):
                shapes[f"block{b}.bn{l}.{suffix}"] = (c_out,)
            c_in = c_out
    return shapes, c_in


def tensor_shapes(cfg) -> dict:
    """Name -> shape for every tensor of an architecture, in canonical order."""
    shapes, feat = _frontend_shapes(cfg)
    if cfg.arch == "crnn":
        H = cfg.gru_hidden
        for d in ("fwd", "bwd"):
            shapes[f"gru.{d}.W"] = (feat, 3 * H)
            shapes[f"gru.{d}.U"] = (H, 3 * H)
            shapes[f"gru.{d}.b"] = (3 * H,)
        head_in = 2 * H
    else:
        F = cfg.n_filters
        shapes["tcn.in.W"] = (feat, F)
        shapes["tcn.in.b"] = (F,)
        for i, _ in enumerate(cfg.dilations, start=1):
            shapes[f"tcn.res{i}.kernel"] = (cfg.tcn_kernel, F, F)
            for suffix in ("scale", "shift", "running_mean", "running_var"):
                shapes[f"tcn.res{i}.bn.{suffix}"] = (F,)
            shapes[f"tcn.res{i}.pw.W"] = (F, F)
            shapes[f"tcn.res{i}.pw.b"] = (F,)
        head_in = F
    shapes["out.W"] = (head_in, cfg.n_classes)
    shapes["out.b"] = (cfg.n_classes,)
    return shapes


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_weights(cfg, seed: int = 0, dtype=np.float32) -> ModelWeights:
    """Glorot-uniform kernels, orthogonal recurrent blocks, zero biases, identity BN."""
    cfg = cfg.validate()
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in tensor_shapes(cfg).items():
        if name.endswith(".kernel"):
            receptive = int(np.prod(shape[:-2]))
            t = _glorot(rng, shape, receptive * shape[-2], receptive * shape[-1])
        elif name.endswith(".U"):
            H = shape[0]
            t = np.concatenate([_orthogonal(rng, H) for _ in range(3)], axis=1)
        elif name.endswith(".W"):
            t = _glorot(rng, shape, shape[0], shape[1])
        elif name.endswith((".scale", ".running_var")):
            t = np.ones(shape)
        else:
            t = np.zeros(shape)
        tensors[name] = t.astype(dtype)
    return ModelWeights(cfg.arch, cfg, tensors, seed)


def check_shapes(w: ModelWeights):
    expected = tensor_shapes(w.config)
    if list(expected) != list(w.tensors):
        missing = set(expected) ^ set(w.tensors)
        raise ShapeMismatch(f"tensor names differ from the {w.arch} layout: {sorted(missing)[:5]}")
    for name, shape in expected.items():
        if tuple(w.tensors[name].shape) != tuple(shape):
            raise ShapeMismatch(f"{name}: config implies {shape}, got {w.tensors[name].shape}")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _dtype_tag(arr):
    for tag, dt in _DTYPES.items():
        if arr.dtype == dt:
            return tag
    raise ValueError(f"unsupported tensor dtype {arr.dtype}")


def save_weights(w: ModelWeights, path):
    table, blobs, offset = [], [], 0
    for name, arr in w.tensors.items():
        tag = _dtype_tag(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        table.append({"name": name, "dtype": tag, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    cfg = asdict(w.config)
    manifest = {
        "format_version": FORMAT_VERSION,
        "architecture": w.arch,
        "config": cfg,
        "seed": w.seed,
        "tensors": table,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_weights(path) -> ModelWeights:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise ChecksumError(f"{path}: not a weight file or truncated header")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError(f"{path}: CRC32 mismatch (file truncated or corrupted)")
    (head_len,) = struct.unpack("<I", body[4:8])
    manifest = json.loads(body[8:8 + head_len].decode("utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: format_version {manifest.get('format_version')}, expected {FORMAT_VERSION}"
        )
    cfg = config_from_dict(manifest["architecture"], manifest["config"])
    blob = body[8 + head_len:]
    tensors = {}
    for entry in manifest["tensors"]:
        dt = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        raw = blob[start:start + count * dt.itemsize]
        if len(raw) != count * dt.itemsize:
            raise ShapeMismatch(f"{path}: tensor {entry['name']} runs past the blob")
        tensors[entry["name"]] = np.frombuffer(raw, dtype=dt).reshape(entry["shape"]).astype(dt.newbyteorder("="))
    w = ModelWeights(manifest["architecture"], cfg, tensors, manifest.get("seed"))
    check_shapes(w)
    return w

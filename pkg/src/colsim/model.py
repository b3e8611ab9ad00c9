"""Autoencoder architectures over the nn kernels, plus binary checkpoints.

Two architectures are provided: a fully connected one ("linear") and a
convolutional one ("conv"). Both compress an 8 x L column matrix to a
k-dimensional latent vector and mirror the compression on the way back.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .encoding import EncodingConfig
from .nn import Conv3x3, Dense, Dropout, Network, ReLU, Reshape

ARCHITECTURES = ("linear", "conv")

CHECKPOINT_MAGIC = b"CAE1"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    architecture: str = "conv"
    cutoff: int = 250
    latent_dim: int = 100
    hidden_widths: tuple[int, ...] = (512,)
    channels: int = 16
    dropout: float = 0.2

    def __post_init__(self):
        self.hidden_widths = tuple(self.hidden_widths)
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if self.cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        if not 1 <= self.latent_dim <= 8 * self.cutoff:
            raise ValueError(f"latent_dim must be in [1, {8 * self.cutoff}]")
        if not self.hidden_widths or any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden_widths must be non-empty positive ints")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def input_shape(self) -> tuple[int, int]:
        return (8, self.cutoff)


class Model:
    """An encoder/decoder layer stack with a marked latent boundary."""

    def __init__(self, config: ModelConfig, layers, latent_index: int, seed: int, rng):
        self.config = config
        self.net = Network(layers)
        self.latent_index = latent_index
        self.seed = seed
        self.rng = rng
        self.encoding: EncodingConfig | None = None
        self.metadata: dict = {"epochs_run": 0, "final_train_loss": None, "final_val_loss": None}

    # -- training-facing surface -------------------------------------------
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        return self.net.forward(x, train=train)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return self.net.backward(grad)

    def params(self):
        return self.net.params()

    def grads(self):
        return self.net.grads()

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    # -- inference surface --------------------------------------------------
    def encode_batch(self, x: np.ndarray) -> np.ndarray:
        """Latent vectors for a batch of column matrices; always eval mode."""
        if x.shape[1:] != self.config.input_shape:
            raise ValueError(f"expected input shape {self.config.input_shape}, got {x.shape[1:]}")
        for layer in self.net.layers[: self.latent_index]:
            x = layer.forward(x, train=False)
        if not np.isfinite(x).all():
            raise ValueError("non-finite values in latent vector; model parameters may be corrupt")
        return x

    def encode(self, matrix: np.ndarray) -> np.ndarray:
        return self.encode_batch(matrix[None])[0]

    def decode(self, z: np.ndarray) -> np.ndarray:
        if z.shape != (self.config.latent_dim,):
            raise ValueError(f"expected latent shape ({self.config.latent_dim},), got {z.shape}")
        x = z[None].astype(self.params()[0].dtype)
        for layer in self.net.layers[self.latent_index :]:
            x = layer.forward(x, train=False)
        return x[0]


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    rng = np.random.default_rng(seed)
    if config.architecture == "linear":
        layers, latent_index = _linear_layers(config, rng, dtype)
    else:
        layers, latent_index = _conv_layers(config, rng, dtype)
    return Model(config, layers, latent_index, seed, rng)


def _linear_layers(config: ModelConfig, rng, dtype):
    n_in = 8 * config.cutoff
    layers: list = [Reshape((n_in,))]
    prev = n_in
    for width in config.hidden_widths:
        layers += [Dense(prev, width, rng, dtype), ReLU(), Dropout(config.dropout, rng)]
        prev = width
    layers.append(Dense(prev, config.latent_dim, rng, dtype))
    latent_index = len(layers)
    prev = config.latent_dim
    for width in reversed(config.hidden_widths):
        layers += [Dense(prev, width, rng, dtype), ReLU()]
        prev = width
    layers += [Dense(prev, n_in, rng, dtype), Reshape(config.input_shape)]
    return layers, latent_index


def _conv_layers(config: ModelConfig, rng, dtype):
    ch = config.channels
    h, w = config.input_shape
    flat = ch * h * w
    layers: list = [
        Reshape((1, h, w)),
        Conv3x3(1, ch, rng, dtype),
        ReLU(),
        Conv3x3(ch, ch, rng, dtype),
        ReLU(),
        Reshape((flat,)),
    ]
    prev = flat
    for width in config.hidden_widths:
        layers += [Dense(prev, width, rng, dtype), ReLU()]
        prev = width
    layers.append(Dense(prev, config.latent_dim, rng, dtype))
    latent_index = len(layers)
    prev = config.latent_dim
    for width in reversed(config.hidden_widths):
        layers += [Dense(prev, width, rng, dtype), ReLU()]
        prev = width
    layers += [
        Dense(prev, flat, rng, dtype),
        Reshape((ch, h, w)),
        Conv3x3(ch, ch, rng, dtype),
        ReLU(),
        Conv3x3(ch, 1, rng, dtype),
        Reshape(config.input_shape),
    ]
    return layers, latent_index


def save_checkpoint(model: Model, path: str | Path) -> None:
    """Write a versioned binary checkpoint with a trailing CRC-32.

    Layout: magic, version, length-prefixed canonical JSON header (config,
    encoding, metadata, seed), raw float32 parameter blobs in declaration
    order, CRC-32 of everything before it.
    """
    header = {
        "model": asdict(model.config),
        "encoding": asdict(model.encoding) if model.encoding else None,
        "metadata": model.metadata,
        "seed": model.seed,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION), struct.pack("<I", len(blob)), blob]
    for p in model.params():
        parts.append(np.ascontiguousarray(p, dtype="<f4").tobytes())
    payload = b"".join(parts)
    payload += struct.pack("<I", zlib.crc32(payload))
    Path(path).write_bytes(payload)


def load_checkpoint(path: str | Path) -> Model:
    data = Path(path).read_bytes()
    if len(data) < 14:
        raise ValueError(f"truncated checkpoint: {path}")
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"not a {CHECKPOINT_MAGIC.decode()} checkpoint: {path}")
    (stored_crc,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) != stored_crc:
        raise ValueError(f"checkpoint CRC mismatch (corrupt file): {path}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version > CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version} (max {CHECKPOINT_VERSION})")
    (blob_len,) = struct.unpack_from("<I", data, 6)
    header = json.loads(data[10 : 10 + blob_len].decode("utf-8"))

    config = ModelConfig(**header["model"])
    model = build_model(config, seed=header["seed"])
    if header["encoding"]:
        model.encoding = EncodingConfig(**header["encoding"])
    model.metadata = dict(header["metadata"])

    pos = 10 + blob_len
    end = len(data) - 4
    for p in model.params():
        nbytes = p.size * 4
        if pos + nbytes > end:
            raise ValueError(f"truncated checkpoint parameters: {path}")
        p[...] = np.frombuffer(data[pos : pos + nbytes], dtype="<f4").reshape(p.shape)
        pos += nbytes
    if pos != end:
        raise ValueError(f"trailing bytes in checkpoint: {path}")
    return model

"""Mini-batch reconstruction training with Adam, loss tracking, and
grayscale dumps of input/reconstruction pairs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoding import ColumnMatrix
from .model import Model
from .nn import Adam, mse_loss


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class LossHistory:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)


def stack_matrices(matrices) -> np.ndarray:
    """Stack ColumnMatrix objects or raw arrays into one (n, 8, L) array."""
    arrays = [m.values if isinstance(m, ColumnMatrix) else np.asarray(m) for m in matrices]
    return np.stack(arrays).astype(np.float32)


def iter_batches(n: int, batch_size: int, order: np.ndarray):
    """Yield index slices covering `order` once; the last batch may be short."""
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train(model: Model, train_set, val_set, config: TrainConfig, on_epoch_end=None):
    """Train the model to reconstruct its inputs; returns (model, LossHistory).

    One Adam step per mini-batch, epochs * ceil(n / batch) steps in total.
    Dropout is active only in training passes; validation runs in eval mode
    after every epoch. Fully deterministic for a fixed config seed.
    """
    x_train = stack_matrices(train_set)
    x_val = stack_matrices(val_set)
    if x_train.shape[0] == 0:
        raise ValueError("empty train set")
    if x_val.shape[0] == 0:
        raise ValueError("empty validation set")

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(model.params(), lr=config.learning_rate)
    history = LossHistory()
    n = x_train.shape[0]

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        sq_err_sum = 0.0
        for batch_no, idx in enumerate(iter_batches(n, config.batch_size, order), start=1):
            xb = x_train[idx]
            out = model.forward(xb, train=True)
            loss, grad = mse_loss(out, xb, reduction="mean")
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, batch {batch_no}"
                )
            model.backward(grad)
            optimizer.step(model.grads())
            sq_err_sum += loss * xb.size
        history.train.append(sq_err_sum / x_train.size)
        history.val.append(evaluate_reconstruction(model, x_val))
        if on_epoch_end is not None:
            on_epoch_end(epoch, model, history)

    model.metadata = {
        "epochs_run": config.epochs,
        "final_train_loss": history.train[-1],
        "final_val_loss": history.val[-1],
        "train_seed": config.seed,
    }
    return model, history


def evaluate_reconstruction(model: Model, dataset, batch_size: int = 256) -> float:
    """Mean per-element squared reconstruction error, dropout disabled."""
    x = dataset if isinstance(dataset, np.ndarray) else stack_matrices(dataset)
    if x.shape[0] == 0:
        raise ValueError("empty evaluation set")
    for p in model.params():
        if not np.isfinite(p).all():
            raise ValueError("model has non-finite parameters")
    total = 0.0
    for start in range(0, x.shape[0], batch_size):
        xb = x[start : start + batch_size]
        out = model.forward(xb, train=False)
        total += float(np.square(out - xb, dtype=np.float64).sum())
    return total / x.size


def write_loss_csv(history: LossHistory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for i, (tr, va) in enumerate(zip(history.train, history.val), start=1):
            writer.writerow([i, f"{tr:.9e}", f"{va:.9e}"])


def read_loss_csv(path: str | Path) -> LossHistory:
    history = LossHistory()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            history.train.append(float(row["train_loss"]))
            history.val.append(float(row["val_loss"]))
    return history


def dump_reconstruction(original: np.ndarray, reconstruction: np.ndarray, path: str | Path) -> None:
    """Write the pair as one binary PGM: original on top, reconstruction below.

    Values are clamped to [0, 1] and scaled to 0-255; a mid-gray row
    separates the two panels.
    """
    if original.shape != reconstruction.shape:
        raise ValueError(f"shape mismatch: {original.shape} vs {reconstruction.shape}")

    def to_pixels(m):
        return np.rint(np.clip(m, 0.0, 1.0) * 255.0).astype(np.uint8)

    top = to_pixels(original)
    bottom = to_pixels(reconstruction)
    separator = np.full((1, top.shape[1]), 128, dtype=np.uint8)
    image = np.vstack([top, separator, bottom])
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Parse a binary PGM written by dump_reconstruction."""
    data = Path(path).read_bytes()
    magic, dims, maxval, rest = data.split(b"\n", 3)
    if magic != b"P5":
        raise ValueError(f"not a binary PGM: {path}")
    w, h = (int(v) for v in dims.split())
    if maxval != b"255":
        raise ValueError(f"unexpected max value in {path}")
    return np.frombuffer(rest[: w * h], dtype=np.uint8).reshape(h, w)

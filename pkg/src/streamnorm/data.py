"""Datasets: CIFAR-10 binary batches, byte-level text corpora, synthetic blobs."""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError
from .tensor import Rng

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]


@dataclass
class Dataset:
    """Images with labels, or a character-id sequence with its vocabulary.

    ``inputs`` is ``(n, Y, X, C)`` float64 for image data or a 1-D int array
    of character ids for text; ``labels`` is ``None`` for text.
    """

    inputs: np.ndarray
    labels: np.ndarray = None
    split: str = "train"
    classes: int = 0
    vocab: bytes = b""
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.inputs)

    @property
    def vocab_size(self):
        return len(self.vocab)

    def encode(self, data):
        return encode(data, self.vocab)

    def decode(self, ids):
        return decode(ids, self.vocab)


def read_cifar10_file(path):
    """Parse one CIFAR-10 binary file into ``(uint8 images NYXC, int labels)``."""
    raw = Path(path).read_bytes()
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        offset = (len(raw) // CIFAR_RECORD) * CIFAR_RECORD
        raise FormatError(
            f"{path}: size {len(raw)} is not a multiple of the {CIFAR_RECORD}-byte record; "
            f"incomplete record at byte offset {offset}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise FormatError(f"{path}: label {labels[bad]} out of range at byte offset {bad * CIFAR_RECORD}")
    # R, G, B planes of 32x32, row major
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return images, labels


def load_cifar10(path, split="train", mean=None, files=None):
    """Load CIFAR-10 binary batches from directory ``path``.

    Pixels are scaled to [0, 1] and the per-channel mean is subtracted.  The
    mean comes from the loaded data unless ``mean`` (e.g. the training-set
    mean, for the test split) is given; it is stored in ``meta['mean']``.
    """
    path = Path(path)
    if files is None:
        files = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
        files = [f for f in files if (path / f).exists()]
    if not files:
        raise FileNotFoundError(f"no CIFAR-10 batch files found in {path}")
    parts = [read_cifar10_file(path / f) for f in files]
    images = np.concatenate([p[0] for p in parts]).astype(np.float64) / 255.0
    labels = np.concatenate([p[1] for p in parts])
    if mean is None:
        mean = images.mean(axis=(0, 1, 2), keepdims=True)
    images -= mean
    return Dataset(images, labels, split, classes=10, meta={"mean": mean, "files": files})


def encode(data, vocab):
    table = np.full(256, -1, dtype=np.int64)
    table[np.frombuffer(vocab, dtype=np.uint8)] = np.arange(len(vocab))
    ids = table[np.frombuffer(bytes(data), dtype=np.uint8)]
    if (ids < 0).any():
        raise ParameterError("text contains bytes outside the vocabulary")
    return ids


def decode(ids, vocab):
    return bytes(vocab[i] for i in ids)


def load_char_corpus(path, val_fraction=0.01):
    """Byte-level corpus split into a contiguous train prefix and val suffix."""
    raw = Path(path).read_bytes()
    if not raw:
        raise FormatError(f"{path}: empty corpus")
    if not 0 <= val_fraction < 1:
        raise ParameterError("val_fraction must be in [0, 1)")
    vocab = bytes(sorted(set(raw)))
    ids = encode(raw, vocab)
    n_val = int(round(len(ids) * val_fraction))
    cut = len(ids) - n_val
    train = Dataset(ids[:cut], None, "train", vocab=vocab, meta={"path": str(path)})
    val = Dataset(ids[cut:], None, "val", vocab=vocab, meta={"path": str(path)})
    return train, val


def char_batches(ids, batch_size, window):
    """Split ``ids`` into ``batch_size`` parallel streams and yield windows.

    Each item is ``(inputs, targets)`` of shape ``(batch_size, window)``, with
    targets shifted one position ahead.  Row ``i`` of consecutive windows
    continues the same stream, so hidden state can be carried over.
    """
    ids = np.asarray(ids)
    if len(ids) < 2:
        return
    batch_size = max(1, min(batch_size, (len(ids) - 1) // max(window, 1) or 1))
    per = (len(ids) - 1) // batch_size
    if per < 1:
        return
    x = ids[: per * batch_size].reshape(batch_size, per)
    y = ids[1: per * batch_size + 1].reshape(batch_size, per)
    for start in range(0, per, window):
        stop = min(start + window, per)
        yield x[:, start:stop], y[:, start:stop]


def synth_classification(seed, n, classes, separation=3.0, shape=(1, 1, 16), split="train"):
    """Gaussian blobs, one per class, in a space of the given ``(Y, X, C)`` shape.

    Class centres are drawn once per ``seed`` with norm ``separation`` (in
    units of the unit within-class standard deviation); ``split`` selects an
    independent sample of points around the same centres.
    """
    if classes < 2:
        raise ParameterError("need at least two classes")
    if n < 1:
        raise ParameterError("need at least one sample")
    shape = tuple(int(d) for d in shape)
    dim = int(np.prod(shape))
    base = Rng(seed)
    centres = base.normal((classes, dim))
    centres *= separation / np.linalg.norm(centres, axis=1, keepdims=True)
    rng = base.spawn({"train": 1, "val": 2, "test": 3}.get(split, 4))
    labels = rng.generator().integers(0, classes, size=n)
    x = centres[labels] + rng.normal((n, dim))
    return Dataset(x.reshape((n,) + shape), labels.astype(np.int64), split, classes=classes,
                   meta={"centres": centres, "seed": seed})


def minibatches(data, batch_size, rng=None):
    """Yield ``(x, labels)`` mini-batches, shuffled by ``rng`` when given."""
    n = len(data)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield data.inputs[idx], data.labels[idx]

"""Synthetic sequence tasks and their file formats.

Two task families share one batch shape. The copy task feeds groups of
digit symbols, a run of blanks, and a go cue, then expects the digits
echoed back; per step the input is one-hot slots over a 12-symbol
vocabulary (digits 0-9, blank, go) and the answer classes are the ten
digits. The image task feeds a binarized image one pixel per step in
scan-line order and expects the class label after the last pixel.

Images load from IDX files (the MNIST layout: big-endian int32 header,
uint8 payload). When no real dataset is present, a glyph-rendered digit
corpus is synthesized once, written as IDX, and loaded through the same
reader.
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

COPY_DIGITS = 10
COPY_BLANK = 10
COPY_GO = 11
COPY_VOCAB = 12

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class TaskBatch:
    """One batch of sequences.

    inputs is (B, T, F) float64 one-hot slots, or (B, T) integer token
    ids for models that own an embedding. targets is (B, T, slots)
    int64 with -1 wherever mask is false; mask marks the slots that are
    scored.
    """

    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray


def one_hot_slots(symbols, vocab):
    """(B, T, M) symbol ids -> (B, T, M*vocab) float64 one-hot."""
    b, t, m = symbols.shape
    out = np.zeros((b, t, m, vocab))
    idx = np.indices((b, t, m))
    out[idx[0], idx[1], idx[2], symbols] = 1.0
    return out.reshape(b, t, m * vocab)


def gen_copy_batch(rng, batch, n_digits, seq_len, blanks):
    """Sample a copy batch.

    Layout over T = seq_len + blanks + 1 + seq_len steps: seq_len steps
    of digit groups (n_digits digits each), `blanks` steps of blank
    symbols, one step of go symbols, then seq_len steps of blank input
    during which the targets are the digit groups in order.
    """
    digits = rng.integers(0, COPY_DIGITS, size=(batch, seq_len, n_digits))
    total = seq_len + blanks + 1 + seq_len
    symbols = np.full((batch, total, n_digits), COPY_BLANK, dtype=np.int64)
    symbols[:, :seq_len] = digits
    symbols[:, seq_len + blanks] = COPY_GO
    targets = np.full((batch, total, n_digits), -1, dtype=np.int64)
    mask = np.zeros((batch, total, n_digits), dtype=bool)
    answer_start = seq_len + blanks + 1
    targets[:, answer_start:] = digits
    mask[:, answer_start:] = True
    return TaskBatch(one_hot_slots(symbols, COPY_VOCAB), targets, mask)


class CopyTask:
    """Copy task at a fixed blank-run length."""

    def __init__(self, n_digits=1, seq_len=10, blanks=50):
        self.n_digits = n_digits
        self.seq_len = seq_len
        self.blanks = blanks

    @property
    def input_dim(self):
        return self.n_digits * COPY_VOCAB

    @property
    def out_slots(self):
        return self.n_digits

    @property
    def out_classes(self):
        return COPY_DIGITS

    def sample(self, rng, batch):
        return gen_copy_batch(rng, batch, self.n_digits, self.seq_len, self.blanks)

    def with_blanks(self, blanks):
        return CopyTask(self.n_digits, self.seq_len, blanks)


def _open_maybe_gzip(path):
    if str(path).endswith(".gz"):
        import gzip

        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx_images(path):
    with _open_maybe_gzip(path) as fh:
        data = fh.read()
    if len(data) < 16:
        raise ValueError(f"truncated idx image file {path}")
    magic, n, rows, cols = struct.unpack(">iiii", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(f"bad idx image magic {magic:#010x} in {path}")
    if len(data) != 16 + n * rows * cols:
        raise ValueError(
            f"truncated idx image file {path}: header says {n}x{rows}x{cols}, "
            f"payload has {len(data) - 16} bytes"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(n, rows, cols).copy()


def load_idx_labels(path):
    with _open_maybe_gzip(path) as fh:
        data = fh.read()
    if len(data) < 8:
        raise ValueError(f"truncated idx label file {path}")
    magic, n = struct.unpack(">ii", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise ValueError(f"bad idx label magic {magic:#010x} in {path}")
    if len(data) != 8 + n:
        raise ValueError(
            f"truncated idx label file {path}: header says {n}, "
            f"payload has {len(data) - 8} bytes"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=8).copy()


def save_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">iiii", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(images.tobytes())


def save_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">ii", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def load_image_dataset(images_path, labels_path):
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image/label count mismatch: {images.shape[0]} images, "
            f"{labels.shape[0]} labels"
        )
    return images, labels


def resize_nearest(images, side):
    """Nearest-neighbour resize: out[i][j] = in[i*h//side][j*w//side]."""
    n, h, w = images.shape
    rows = (np.arange(side) * h) // side
    cols = (np.arange(side) * w) // side
    return images[:, rows][:, :, cols]


def binarize(images, threshold=127):
    """Pixels above the threshold become 1, the rest 0."""
    return (images > threshold).astype(np.uint8)


def to_pixel_sequences(images01):
    """(n, s, s) binary images -> (n, s*s) token rows in scan-line order."""
    n = images01.shape[0]
    return images01.reshape(n, -1).astype(np.int64)


def make_image_batch(sequences, labels):
    """Pixel-token rows plus labels -> a TaskBatch scored on the last step."""
    b, t = sequences.shape
    targets = np.full((b, t, 1), -1, dtype=np.int64)
    mask = np.zeros((b, t, 1), dtype=bool)
    targets[:, -1, 0] = labels
    mask[:, -1, 0] = True
    return TaskBatch(sequences, targets, mask)


class ImageTask:
    """Pixel-sequence classification at a fixed resolution."""

    def __init__(self, images, labels, side, threshold=127):
        self.side = side
        self.sequences = to_pixel_sequences(
            binarize(resize_nearest(images, side), threshold)
        )
        self.labels = np.asarray(labels, dtype=np.int64)

    @property
    def out_slots(self):
        return 1

    @property
    def out_classes(self):
        return 10

    def sample(self, rng, batch):
        idx = rng.integers(0, self.sequences.shape[0], size=batch)
        return make_image_batch(self.sequences[idx], self.labels[idx])

    def ordered_batches(self, batch, limit=None):
        n = self.sequences.shape[0] if limit is None else min(limit, len(self.labels))
        out = []
        for start in range(0, n, batch):
            stop = min(start + batch, n)
            out.append(
                make_image_batch(self.sequences[start:stop], self.labels[start:stop])
            )
        return out


_FONT_DIRS = (
    "/usr/share/fonts/truetype/dejavu",
    "/usr/share/fonts/truetype",
    "/usr/share/fonts",
)


def _find_fonts():
    found = []
    for root in _FONT_DIRS:
        if not os.path.isdir(root):
            continue
        for dirpath, _, names in os.walk(root):
            for name in sorted(names):
                if name in ("DejaVuSans.ttf", "DejaVuSerif.ttf", "DejaVuSansMono.ttf"):
                    found.append(os.path.join(dirpath, name))
        if found:
            return found
    return found


def synth_digit_images(n, seed, side=28):
    """Render a labelled digit corpus with jittered glyphs.

    Stands in for a handwritten-digit dataset when none is on disk:
    each sample draws a digit glyph with random font, size, offset, and
    rotation onto a side x side grayscale canvas.
    """
    from PIL import Image, ImageDraw, ImageFont

    fonts = _find_fonts()
    if not fonts:
        raise RuntimeError("no TrueType fonts found to synthesize digit images")
    rng = np.random.default_rng(seed)
    images = np.zeros((n, side, side), dtype=np.uint8)
    labels = (rng.integers(0, 10, size=n)).astype(np.uint8)
    for i in range(n):
        digit = int(labels[i])
        font_path = fonts[int(rng.integers(0, len(fonts)))]
        size = int(rng.integers(side * 5 // 8, side * 7 // 8))
        font = ImageFont.truetype(font_path, size)
        canvas = Image.new("L", (side, side), 0)
        draw = ImageDraw.Draw(canvas)
        dx = int(rng.integers(-2, 3))
        dy = int(rng.integers(-2, 3))
        draw.text((side // 2 + dx, side // 2 + dy), str(digit), fill=255, font=font, anchor="mm")
        angle = float(rng.uniform(-15.0, 15.0))
        canvas = canvas.rotate(angle, resample=Image.BILINEAR, fillcolor=0)
        images[i] = np.asarray(canvas, dtype=np.uint8)
    return images, labels


_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find_mnist(data_dir, split):
    images_name, labels_name = _MNIST_FILES[split]
    for suffix in ("", ".gz"):
        images = os.path.join(data_dir, images_name + suffix)
        labels = os.path.join(data_dir, labels_name + suffix)
        if os.path.exists(images) and os.path.exists(labels):
            return images, labels
    return None


def ensure_image_data(data_dir, split, count, seed=0):
    """Return (images, labels) uint8 28x28 for a split, capped at count.

    Real IDX files in data_dir win; otherwise a synthetic corpus is
    rendered once per (split, count, seed), cached as IDX in data_dir,
    and loaded back through the standard reader.
    """
    os.makedirs(data_dir, exist_ok=True)
    real = _find_mnist(data_dir, split)
    if real is not None:
        images, labels = load_image_dataset(*real)
        return images[:count], labels[:count]
    stem = f"synth-{split}-n{count}-s{seed}"
    images_path = os.path.join(data_dir, stem + "-images-idx3-ubyte")
    labels_path = os.path.join(data_dir, stem + "-labels-idx1-ubyte")
    if not (os.path.exists(images_path) and os.path.exists(labels_path)):
        # distinct streams per split so train and test never share glyph draws
        split_seed = seed * 2 + (0 if split == "train" else 1)
        images, labels = synth_digit_images(count, split_seed)
        save_idx_images(images_path, images)
        save_idx_labels(labels_path, labels)
    return load_image_dataset(images_path, labels_path)

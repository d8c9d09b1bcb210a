"""Corpora, style patches, and the aligned triplet batches used in training.

Three kinds of image collections flow through the pipeline:

* the original dataset - labelled benchmark or synthetic images;
* the style dataset - patches cut from a single style-source image;
* the licensed dataset - the originals pushed through the style generator.

Pixels are float32 in [0, 1] everywhere, images are (C, H, W) per item and
(N, C, H, W) when stacked.  Every sampling operation is a pure function of
its inputs and an integer seed.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

GLYPH_FAMILIES = ("disk", "cross", "frame", "stripes", "diag_cross",
                  "checker", "ring", "triangle")

STYLE_KINDS = ("stripes", "blobs", "checker", "rings")


class DataFormatError(ValueError):
    """Raised for malformed data files or inconsistent datasets."""


@dataclass
class LabeledImage:
    pixels: np.ndarray  # (C, H, W) float32 in [0, 1]
    label: int


@dataclass
class Dataset:
    """An ordered, label-aligned stack of same-shaped images."""

    images: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,) int64
    class_count: int

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DataFormatError(f"images must be rank 4, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataFormatError("image/label count mismatch")
        if len(self.labels) and self.labels.max() >= self.class_count:
            raise DataFormatError("label outside [0, class_count)")

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, index: int) -> LabeledImage:
        return LabeledImage(self.images[index], int(self.labels[index]))

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices)
        return Dataset(self.images[indices].copy(), self.labels[indices].copy(),
                       self.class_count)

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.images.astype("<f4").tobytes())
        digest.update(self.labels.astype("<i8").tobytes())
        return digest.hexdigest()


@dataclass
class StylePatchSet:
    """Same-shaped crops of one style-source image; the style dataset."""

    patches: np.ndarray  # (N, C, H, W) float32
    source_id: str

    def __post_init__(self):
        if len(self.patches) == 0:
            raise DataFormatError("a style patch set must not be empty")

    def __len__(self) -> int:
        return len(self.patches)

    def __getitem__(self, index: int) -> np.ndarray:
        return self.patches[index]

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``count`` patches with replacement."""
        idx = rng.integers(0, len(self.patches), size=count)
        return self.patches[idx]


@dataclass
class TripletBatch:
    """Aligned (style, original, licensed) batch; the unit of license training."""

    style: np.ndarray      # (B, C, H, W)
    original: np.ndarray   # (B, C, H, W)
    licensed: np.ndarray   # (B, C, H, W)
    labels: np.ndarray     # (B,)

    def __len__(self) -> int:
        return len(self.labels)


def derive_seed(*parts: int) -> int:
    """Mix integers into one child seed; stable across runs and platforms."""
    state = np.random.SeedSequence(tuple(int(p) for p in parts))
    return int(state.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# IDX ingestion (big-endian: u32 magic, u32 count, [u32 rows, u32 cols,]
# then unsigned payload bytes)


def _read_u32_be(blob: bytes, offset: int, what: str) -> int:
    if offset + 4 > len(blob):
        raise DataFormatError(f"truncated file while reading {what}")
    return struct.unpack(">I", blob[offset:offset + 4])[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Load an image/label file pair in the IDX byte format.

    Pixel bytes are scaled to [0, 1] by division by 255; order is preserved.
    """
    with open(images_path, "rb") as fh:
        img_blob = fh.read()
    with open(labels_path, "rb") as fh:
        lbl_blob = fh.read()

    magic = _read_u32_be(img_blob, 0, "image magic")
    if magic != IDX_IMAGE_MAGIC:
        raise DataFormatError(f"bad magic in image file: 0x{magic:08x}")
    count = _read_u32_be(img_blob, 4, "image count")
    rows = _read_u32_be(img_blob, 8, "row count")
    cols = _read_u32_be(img_blob, 12, "column count")
    expected = 16 + count * rows * cols
    if len(img_blob) != expected:
        raise DataFormatError(
            f"truncated image payload: expected {expected} bytes, got {len(img_blob)}")

    lbl_magic = _read_u32_be(lbl_blob, 0, "label magic")
    if lbl_magic != IDX_LABEL_MAGIC:
        raise DataFormatError(f"bad magic in label file: 0x{lbl_magic:08x}")
    lbl_count = _read_u32_be(lbl_blob, 4, "label count")
    if lbl_count != count:
        raise DataFormatError(
            f"image/label count mismatch: {count} images, {lbl_count} labels")
    if len(lbl_blob) != 8 + count:
        raise DataFormatError(
            f"truncated label payload: expected {8 + count} bytes, got {len(lbl_blob)}")

    pixels = np.frombuffer(img_blob, dtype=np.uint8, offset=16)
    images = (pixels.astype(np.float32) / 255.0).reshape(count, 1, rows, cols)
    labels = np.frombuffer(lbl_blob, dtype=np.uint8, offset=8).astype(np.int64)
    class_count = int(labels.max()) + 1 if count else 0
    return Dataset(images=images, labels=labels, class_count=class_count)


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a single-channel dataset as an IDX pair (pixels quantized *255)."""
    c, rows, cols = dataset.shape
    if c != 1:
        raise DataFormatError("IDX files hold single-channel images only")
    pixels = np.rint(dataset.images * 255.0).clip(0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, len(dataset), rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, len(dataset)))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# synthetic corpus: one parametric glyph family per class, randomized
# position/size, over a low-amplitude noise background


def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(np.arange(h, dtype=np.float64),
                       np.arange(w, dtype=np.float64), indexing="ij")


def _paint_glyph(family: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of one glyph instance at a randomized position/size."""
    yy, xx = _grid(h, w)
    cy = rng.uniform(0.38, 0.62) * h
    cx = rng.uniform(0.38, 0.62) * w
    scale = rng.uniform(0.26, 0.36) * min(h, w)
    if family == "disk":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= scale ** 2
    if family == "cross":
        t = max(1.0, 0.18 * scale + rng.uniform(0.0, 1.0))
        arm = (np.abs(yy - cy) <= t) & (np.abs(xx - cx) <= scale)
        return arm | ((np.abs(xx - cx) <= t) & (np.abs(yy - cy) <= scale))
    if family == "frame":
        outer = (np.abs(yy - cy) <= scale) & (np.abs(xx - cx) <= scale)
        inner = (np.abs(yy - cy) <= scale - 2.0) & (np.abs(xx - cx) <= scale - 2.0)
        return outer & ~inner
    if family == "stripes":
        period = rng.integers(3, 6)
        phase = rng.integers(0, period)
        return ((yy.astype(np.int64) + phase) % period) < max(1, period // 2)
    if family == "diag_cross":
        t = max(1.2, 0.22 * scale)
        near = (np.abs((yy - cy) - (xx - cx)) <= t) | (np.abs((yy - cy) + (xx - cx)) <= t)
        box = (np.abs(yy - cy) <= scale) & (np.abs(xx - cx) <= scale)
        return near & box
    if family == "checker":
        cell = int(rng.integers(2, 4))
        phase = int(rng.integers(0, 2))
        return (((yy.astype(np.int64) // cell) + (xx.astype(np.int64) // cell) + phase) % 2) == 0
    if family == "ring":
        r = (yy - cy) ** 2 + (xx - cx) ** 2
        return (r <= scale ** 2) & (r >= (scale - 2.0) ** 2)
    if family == "triangle":
        rel_y = (yy - (cy - scale)) / (2.0 * scale)
        width = np.clip(rel_y, 0.0, 1.0) * scale
        return (rel_y >= 0.0) & (rel_y <= 1.0) & (np.abs(xx - cx) <= width)
    raise DataFormatError(f"unknown glyph family: {family!r}")


def generate_synthetic(seed: int, n_per_class: int, classes: int,
                       shape: tuple[int, int, int]) -> Dataset:
    """Build a deterministic glyph corpus: ``classes`` families, ``n_per_class``
    samples each, emitted class-major."""
    if classes < 2:
        raise DataFormatError(f"need at least 2 classes, got {classes}")
    if classes > len(GLYPH_FAMILIES):
        raise DataFormatError(
            f"only {len(GLYPH_FAMILIES)} glyph families available, asked for {classes}")
    c, h, w = shape
    if h < 8 or w < 8:
        raise DataFormatError(f"spatial dims must be >= 8, got {h}x{w}")
    rng = np.random.default_rng(seed)
    total = classes * n_per_class
    images = np.zeros((total, c, h, w), dtype=np.float32)
    labels = np.zeros(total, dtype=np.int64)
    index = 0
    for label in range(classes):
        family = GLYPH_FAMILIES[label]
        for _ in range(n_per_class):
            background = rng.uniform(0.0, 0.15, size=(h, w))
            mask = _paint_glyph(family, h, w, rng)
            intensity = rng.uniform(0.75, 1.0)
            plane = np.where(mask, intensity, background)
            if c == 1:
                img = plane[None, :, :]
            else:
                gains = rng.uniform(0.8, 1.0, size=c)
                img = plane[None, :, :] * gains[:, None, None]
            images[index] = np.clip(img, 0.0, 1.0).astype(np.float32)
            labels[index] = label
            index += 1
    return Dataset(images=images, labels=labels, class_count=classes)


def synthetic_style_image(kind: str, shape: tuple[int, int, int],
                          seed: int) -> np.ndarray:
    """Procedural high-contrast texture usable as a style source, (C, H, W)."""
    c, h, w = shape
    rng = np.random.default_rng(seed)
    yy, xx = _grid(h, w)
    if kind == "stripes":
        theta = rng.uniform(0.3, 1.2)
        period = rng.uniform(4.0, 7.0)
        wave = np.sin(2.0 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period)
        plane = np.where(wave > 0.0, 0.92, 0.08)
    elif kind == "blobs":
        plane = np.zeros((h, w))
        for _ in range(12):
            by, bx = rng.uniform(0, h), rng.uniform(0, w)
            sig = rng.uniform(0.06, 0.16) * min(h, w)
            amp = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0)
            plane += amp * np.exp(-(((yy - by) ** 2 + (xx - bx) ** 2) / (2 * sig ** 2)))
        plane = np.where(plane > 0.0, 0.88, 0.12)
    elif kind == "checker":
        cell = int(rng.integers(4, 7))
        plane = np.where((((yy.astype(np.int64) // cell)
                           + (xx.astype(np.int64) // cell)) % 2) == 0, 0.9, 0.1)
    elif kind == "rings":
        cy, cx = rng.uniform(0.3, 0.7) * h, rng.uniform(0.3, 0.7) * w
        period = rng.uniform(4.0, 8.0)
        radius = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        plane = np.where(np.sin(2.0 * np.pi * radius / period) > 0.0, 0.9, 0.1)
    else:
        raise DataFormatError(f"unknown style kind: {kind!r}")
    plane = plane + rng.uniform(-0.04, 0.04, size=(h, w))
    image = np.repeat(plane[None, :, :], c, axis=0)
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def load_style_image(path, channels: int) -> np.ndarray:
    """Read a style source from .npy (float [0,1] or uint8) or a PIL-readable
    image file, coerced to ``channels`` planes."""
    path = Path(path)
    if path.suffix == ".npy":
        raw = np.load(path)
        if raw.dtype == np.uint8:
            raw = raw.astype(np.float32) / 255.0
        raw = np.asarray(raw, dtype=np.float32)
        if raw.ndim == 2:
            raw = raw[None, :, :]
    else:
        from PIL import Image

        with Image.open(path) as img:
            img = img.convert("L" if channels == 1 else "RGB")
            raw = np.asarray(img, dtype=np.float32) / 255.0
        raw = raw[None, :, :] if raw.ndim == 2 else raw.transpose(2, 0, 1)
    if raw.shape[0] != channels:
        if raw.shape[0] == 1:
            raw = np.repeat(raw, channels, axis=0)
        elif channels == 1:
            raw = raw.mean(axis=0, keepdims=True)
        else:
            raise DataFormatError(
                f"style image has {raw.shape[0]} channels, need {channels}")
    return np.clip(raw, 0.0, 1.0)


def make_style_patches(style_image: np.ndarray, shape: tuple[int, int, int],
                       count: int, seed: int, allow_flips: bool = True) -> StylePatchSet:
    """Cut ``count`` seeded-random crops (plus optional horizontal flips) out
    of one style-source image; every patch is a verbatim sub-window up to flip."""
    style_image = np.asarray(style_image, dtype=np.float32)
    if style_image.ndim != 3:
        raise DataFormatError(f"style image must be (C, H, W), got {style_image.shape}")
    c, h, w = shape
    sc, sh, sw = style_image.shape
    if sc != c or sh < h or sw < w:
        raise DataFormatError(
            f"style image {style_image.shape} smaller than requested shape {shape}")
    rng = np.random.default_rng(seed)
    patches = np.empty((count, c, h, w), dtype=np.float32)
    for i in range(count):
        dy = int(rng.integers(0, sh - h + 1))
        dx = int(rng.integers(0, sw - w + 1))
        patch = style_image[:, dy:dy + h, dx:dx + w]
        if allow_flips and rng.integers(0, 2):
            patch = patch[:, :, ::-1]
        patches[i] = patch
    digest = hashlib.sha256(style_image.tobytes()).hexdigest()[:12]
    return StylePatchSet(patches=patches, source_id=digest)


# ---------------------------------------------------------------------------
# stylization and triplet assembly


def stylize_dataset(dataset: Dataset, generator, batch_size: int = 256) -> Dataset:
    """Push every image through the style generator (frozen), preserving
    labels, order, and cardinality; outputs clamped to [0, 1]."""
    from .nets import generator_forward

    out = np.empty_like(dataset.images)
    for start in range(0, len(dataset), batch_size):
        chunk = dataset.images[start:start + batch_size]
        styled = generator_forward(generator, chunk.astype(np.float64)).data
        out[start:start + batch_size] = np.clip(styled, 0.0, 1.0).astype(np.float32)
    return Dataset(images=out, labels=dataset.labels.copy(),
                   class_count=dataset.class_count)


def _check_aligned(original: Dataset, licensed: Dataset) -> None:
    if len(original) != len(licensed):
        raise DataFormatError(
            f"misaligned datasets: {len(original)} originals vs {len(licensed)} licensed")
    if not np.array_equal(original.labels, licensed.labels):
        raise DataFormatError("misaligned datasets: labels differ")
    if original.shape != licensed.shape:
        raise DataFormatError("misaligned datasets: image shapes differ")


def make_triplet_batches(original: Dataset, licensed: Dataset,
                         style: StylePatchSet, batch_size: int,
                         seed: int) -> list[TripletBatch]:
    """One seeded pass over the corpus as aligned triplet batches.

    Indices are shuffled once; original/licensed pairing survives the shuffle;
    style patches are drawn with replacement per batch; the final short batch
    is kept so the stream covers the corpus exactly.
    """
    _check_aligned(original, licensed)
    if batch_size < 1:
        raise DataFormatError(f"batch size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(original))
    batches = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        batches.append(TripletBatch(
            style=style.sample(len(idx), rng),
            original=original.images[idx],
            licensed=licensed.images[idx],
            labels=original.labels[idx],
        ))
    return batches


@dataclass
class TripletSource:
    """Re-iterable triplet supplier: a fresh seeded shuffle per epoch."""

    original: Dataset
    licensed: Dataset
    style: StylePatchSet
    batch_size: int
    seed: int

    def __post_init__(self):
        _check_aligned(self.original, self.licensed)

    def epoch_batches(self, epoch: int) -> list[TripletBatch]:
        return make_triplet_batches(self.original, self.licensed, self.style,
                                    self.batch_size, derive_seed(self.seed, epoch))


# ---------------------------------------------------------------------------
# on-disk dataset pairs (images + labels as .npy, plus a tiny meta sidecar)


def save_dataset(dataset: Dataset, directory, prefix: str) -> None:
    directory = Path(directory)
    np.save(directory / f"{prefix}_images.npy", dataset.images)
    np.save(directory / f"{prefix}_labels.npy", dataset.labels)
    meta = {"class_count": dataset.class_count}
    (directory / f"{prefix}_meta.json").write_text(
        json.dumps(meta, sort_keys=True) + "\n")


def load_dataset(directory, prefix: str) -> Dataset:
    directory = Path(directory)
    images = np.load(directory / f"{prefix}_images.npy")
    labels = np.load(directory / f"{prefix}_labels.npy")
    meta_path = directory / f"{prefix}_meta.json"
    if meta_path.exists():
        class_count = int(json.loads(meta_path.read_text())["class_count"])
    else:
        class_count = int(labels.max()) + 1 if len(labels) else 0
    return Dataset(images=images, labels=labels, class_count=class_count)

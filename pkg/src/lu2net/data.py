"""Paired image datasets: codecs, resizing, normalization, splitting, batching.

A dataset root holds ``input/`` (degraded) and ``gt/`` (reference) folders
whose files are paired by name.
"""

from __future__ import annotations

import hashlib
import logging
import math
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import DatasetError, ImageDecodeError
from .ops import interpolation_matrix

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm")


def load_image(path) -> np.ndarray:
    """Decode an 8-bit RGB PNG or binary PPM to an ``H x W x 3`` float32 array in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise ImageDecodeError(path, f"unsupported format {path.suffix!r}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("RGB", "RGBA", "L", "P"):
                raise ImageDecodeError(path, f"unsupported pixel mode {im.mode}")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        if isinstance(exc, ImageDecodeError):
            raise
        raise ImageDecodeError(path, str(exc)) from None
    return arr.astype(np.float32) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] values to bytes with round-half-up."""
    return np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(img: np.ndarray, path) -> None:
    path = Path(path)
    fmt = {".png": "PNG", ".ppm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise ValueError(f"cannot save {path}: use .png or .ppm")
    Image.fromarray(to_uint8(img), mode="RGB").save(path, format=fmt)


def resize_bilinear(img: np.ndarray, height: int = 256, width: int = 256) -> np.ndarray:
    """Corner-aligned bilinear resize of an ``H x W x C`` image."""
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img
    ah = interpolation_matrix(h, height)
    aw = interpolation_matrix(w, width)
    out = np.einsum("ih,hwc,jw->ijc", ah, img.astype(np.float64), aw, optimize=True)
    return out.astype(img.dtype)


def normalize(img: np.ndarray) -> np.ndarray:
    """[0, 1] -> [-1, 1]."""
    return img * 2.0 - 1.0


def denormalize(x: np.ndarray) -> np.ndarray:
    """[-1, 1] -> [0, 1], clamped."""
    return np.clip((x + 1.0) * 0.5, 0.0, 1.0)


def image_to_chw(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def chw_to_image(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(1, 2, 0))


def _list_images(folder: Path) -> dict[str, Path]:
    if not folder.is_dir():
        return {}
    return {p.name: p for p in sorted(folder.iterdir())
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES}


@dataclass
class PairedDataset:
    """Aligned (degraded, reference) image pairs.

    ``items`` are normalized ``3 x size x size`` float32 arrays produced on
    demand (and cached when ``cache`` is set).
    """

    names: list[str]
    input_paths: list[Path] | None = None
    gt_paths: list[Path] | None = None
    size: int | None = 256
    arrays: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    cache: bool = True
    root: Path | None = None
    unmatched: dict[str, list[str]] = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_directory(cls, root, size: int | None = 256, cache: bool = True) -> "PairedDataset":
        root = Path(root)
        inputs = _list_images(root / "input")
        gts = _list_images(root / "gt")
        if not inputs and not gts:
            raise DatasetError(f"{root} has no images under input/ and gt/")
        common = sorted(set(inputs) & set(gts))
        unmatched = {"input": sorted(set(inputs) - set(gts)), "gt": sorted(set(gts) - set(inputs))}
        if unmatched["input"] or unmatched["gt"]:
            logger.warning("%s: %d input files without gt, %d gt files without input",
                           root, len(unmatched["input"]), len(unmatched["gt"]))
        return cls(common, [inputs[n] for n in common], [gts[n] for n in common],
                   size=size, cache=cache, root=root, unmatched=unmatched)

    @classmethod
    def from_arrays(cls, inputs: np.ndarray, targets: np.ndarray,
                    names: Sequence[str] | None = None) -> "PairedDataset":
        """Wrap ``n x H x W x 3`` arrays already in [0, 1]."""
        names = list(names) if names is not None else [f"{i:06d}" for i in range(len(inputs))]
        return cls(names, size=None, arrays=(inputs, targets))

    def __len__(self):
        return len(self.names)

    def _load(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        if self.arrays is not None:
            inp, gt = self.arrays[0][i], self.arrays[1][i]
        else:
            inp, gt = load_image(self.input_paths[i]), load_image(self.gt_paths[i])
        if self.size is not None:
            inp = resize_bilinear(inp, self.size, self.size)
            gt = resize_bilinear(gt, self.size, self.size)
        if inp.shape != gt.shape:
            raise DatasetError(f"pair {self.names[i]!r}: input {inp.shape} and gt {gt.shape} differ")
        return inp.astype(np.float32), gt.astype(np.float32)

    def raw_pair(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """The (input, gt) pair as ``H x W x 3`` images in [0, 1]."""
        if self.cache and i in self._cache:
            return self._cache[i]
        pair = self._load(i)
        if self.cache:
            self._cache[i] = pair
        return pair

    def item(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Normalized ``3 x H x W`` arrays in [-1, 1]."""
        inp, gt = self.raw_pair(i)
        return normalize(image_to_chw(inp)), normalize(image_to_chw(gt))

    def subset(self, indices: Sequence[int]) -> "Split":
        return Split(self, list(indices))


@dataclass
class Split:
    dataset: PairedDataset
    indices: list[int]

    def __len__(self):
        return len(self.indices)

    @property
    def names(self) -> list[str]:
        return [self.dataset.names[i] for i in self.indices]

    def item(self, j: int):
        return self.dataset.item(self.indices[j])

    def raw_pair(self, j: int):
        return self.dataset.raw_pair(self.indices[j])


def _split_key(name: str, seed: int) -> bytes:
    return hashlib.sha256(f"{seed}:{name}".encode("utf-8")).digest()


def split_dataset(ds: PairedDataset, ratio: float = 0.8, seed: int = 0) -> tuple[Split, Split]:
    """Order pairs by a seeded hash of their names; the first ceil(ratio*n) train."""
    if not 0.0 < ratio < 1.0:
        raise DatasetError(f"split ratio must be in (0, 1), got {ratio}")
    if len(ds) == 0:
        raise DatasetError("cannot split an empty dataset")
    order = sorted(range(len(ds)), key=lambda i: _split_key(ds.names[i], seed))
    n_train = math.ceil(round(ratio * len(ds), 9))
    return ds.subset(order[:n_train]), ds.subset(order[n_train:])


class Batch(NamedTuple):
    inputs: np.ndarray
    targets: np.ndarray
    ids: list[str]


def batch_order(n: int, epoch_seed: int) -> np.ndarray:
    return np.random.default_rng(epoch_seed).permutation(n)


def batches(split, batch_size: int = 8, epoch_seed: int = 0, shuffle: bool = True) -> Iterator[Batch]:
    """Deterministically shuffled batches; the last batch may be short."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = batch_order(len(split), epoch_seed) if shuffle else np.arange(len(split))
    names = split.names
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        pairs = [split.item(int(j)) for j in idx]
        yield Batch(np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs]),
                    [names[int(j)] for j in idx])


def prefetch(iterable, depth: int = 2):
    """Produce items from ``iterable`` on a background thread, in order,
    keeping at most ``depth`` ready."""
    q: queue.Queue = queue.Queue(maxsize=max(depth, 1))
    done = object()

    def worker():
        try:
            for item in iterable:
                q.put(item)
        except BaseException as exc:  # re-raised in the consumer
            q.put(exc)
        q.put(done)

    threading.Thread(target=worker, daemon=True).start()
    while True:
        item = q.get()
        if item is done:
            return
        if isinstance(item, BaseException):
            raise item
        yield item

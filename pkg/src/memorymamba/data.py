"""Image-folder datasets, preprocessing, deterministic batching and a synthetic
defect-image generator.

Layout on disk: ``root/{train,test}/<class_name>/*.{png,jpg,jpeg,bmp}``.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError, ManifestError

SPLITS = ("train", "test")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
MEAN = np.array([0.5, 0.5, 0.5])
STD = np.array([0.5, 0.5, 0.5])
MANIFEST_NAME = "manifest.json"


@dataclass
class Sample:
    path: str  # relative to the dataset root, '/'-separated
    label: int
    split: str


@dataclass
class DatasetManifest:
    root: str
    class_names: List[str]
    samples: List[Sample] = field(default_factory=list)
    checksum: str = ""

    def split(self, name: str) -> List[Sample]:
        return [s for s in self.samples if s.split == name]

    def counts(self) -> dict:
        return {s: len(self.split(s)) for s in SPLITS}

    def to_dict(self) -> dict:
        return {
            "class_names": self.class_names,
            "checksum": self.checksum,
            "samples": [[s.path, s.label, s.split] for s in self.samples],
        }

    def save(self, path: Optional[Union[str, Path]] = None) -> Path:
        path = Path(path) if path else Path(self.root) / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        return path


def listing_checksum(class_names: Sequence[str], samples: Sequence[Sample]) -> str:
    h = hashlib.sha256()
    h.update("\n".join(class_names).encode())
    for s in samples:
        h.update(f"\n{s.split}\t{s.label}\t{s.path}".encode())
    return h.hexdigest()


def scan_folder(root: Union[str, Path]) -> DatasetManifest:
    """Build a manifest from ``root/{train,test}/<class>/`` directories.

    Classes are the sorted union of class directory names; files are sorted by
    name so ordering does not depend on the filesystem.
    """
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"dataset root {root} does not exist")
    split_dirs = {s: root / s for s in SPLITS}
    missing = [s for s, d in split_dirs.items() if not d.is_dir()]
    if missing:
        raise ManifestError(f"dataset root {root} lacks split directories: {', '.join(missing)}")
    class_names = sorted({p.name for d in split_dirs.values() for p in d.iterdir() if p.is_dir()})
    if not class_names:
        raise ManifestError(f"dataset root {root} has no class directories")
    samples: List[Sample] = []
    empty = []
    for split, d in split_dirs.items():
        for label, cname in enumerate(class_names):
            cdir = d / cname
            files = sorted(p.name for p in cdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES) if cdir.is_dir() else []
            if not files:
                empty.append(f"{split}/{cname}")
            samples.extend(Sample(f"{split}/{cname}/{f}", label, split) for f in files)
    if empty:
        raise ManifestError(f"empty class directories: {', '.join(empty)}")
    return DatasetManifest(str(root), class_names, samples, listing_checksum(class_names, samples))


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def bilinear_resize(img: np.ndarray, size: int) -> np.ndarray:
    """Resize ``[H,W,C]`` float array to ``[size,size,C]`` with half-pixel centres
    (edge-clamped, no antialiasing)."""
    h, w = img.shape[:2]

    def coords(n_in, n_out):
        x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        x = np.clip(x, 0, n_in - 1)
        lo = np.floor(x).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, x - lo

    y0, y1, wy = coords(h, size)
    x0, x1, wx = coords(w, size)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def decode_image(data: bytes, where: str = "<bytes>") -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            im = im.convert("RGB")  # grayscale is replicated to three channels
            return np.asarray(im, dtype=np.float64)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {where}: {exc}") from None


def preprocess(data: bytes, image_size: int, where: str = "<bytes>") -> np.ndarray:
    """Decode, resize, scale to [0,1] and standardise to [-1,1]; returns float32 ``[S,S,3]``."""
    img = decode_image(data, where)
    if img.shape[:2] != (image_size, image_size):
        img = bilinear_resize(img, image_size)
    img = img / 255.0
    return ((img - MEAN) / STD).astype(np.float32)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MEMMAMBA_THREADS", "1")))
    except ValueError:
        return 1


def load_split(manifest: DatasetManifest, split: str, image_size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Decode every image of a split. Worker threads (``MEMMAMBA_THREADS``) never
    change the delivered order."""
    samples = manifest.split(split)
    if not samples:
        raise DataError(f"split {split!r} is empty")
    root = Path(manifest.root)

    def load(s: Sample) -> np.ndarray:
        path = root / s.path
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from None
        return preprocess(data, image_size, str(path))

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        images = list(pool.map(load, samples))
    return np.stack(images), np.array([s.label for s in samples], dtype=np.int64)


def epoch_order(n: int, seed: int, epoch: int, shuffle: bool = True) -> np.ndarray:
    if not shuffle:
        return np.arange(n)
    return np.random.default_rng([seed, epoch]).permutation(n)


def batches(
    images: np.ndarray, labels: np.ndarray, batch_size: int, seed: int, epoch: int, shuffle: bool = True
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield ``(images, labels)`` batches; order is a pure function of ``(seed, epoch)``
    and the final partial batch is kept. Pass ``shuffle=False`` for the test split."""
    order = epoch_order(len(labels), seed, epoch, shuffle)
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield images[idx], labels[idx]


# ---------------------------------------------------------------------------
# synthetic defect images
# ---------------------------------------------------------------------------

SYNTH_CLASSES = ("clean", "scratch", "blob", "crack")


@dataclass
class SynthSpec:
    num_classes: int = 4
    images_per_class: int = 32
    image_size: int = 64
    seed: int = 1
    train_fraction: float = 0.8


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    # smooth noise: coarse grid upsampled bilinearly, plus mild fine grain
    coarse = rng.normal(0.0, 1.0, size=(8, 8, 1))
    smooth = bilinear_resize(coarse, size)[..., 0]
    grain = rng.normal(0.0, 0.15, size=(size, size))
    return 0.5 + 0.05 * smooth + 0.02 * grain


def _draw_line(canvas: np.ndarray, p0, p1, value: float, width: float) -> None:
    size = canvas.shape[0]
    yy, xx = np.mgrid[0:size, 0:size]
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    d = p1 - p0
    t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / max(d @ d, 1e-9), 0, 1)
    dist = np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))
    canvas[dist <= width] = value


def _add_defect(kind: str, img: np.ndarray, rng: np.random.Generator) -> None:
    size = img.shape[0]
    if kind == "scratch":
        for _ in range(rng.integers(1, 4)):
            p0 = rng.uniform(0.1, 0.9, 2) * size
            angle = rng.uniform(0, np.pi)
            length = rng.uniform(0.5, 0.9) * size
            p1 = np.clip(p0 + length * np.array([np.sin(angle), np.cos(angle)]), 0, size - 1)
            _draw_line(img, p0, p1, value=0.95, width=size / 32)
    elif kind == "blob":
        yy, xx = np.mgrid[0:size, 0:size]
        for _ in range(rng.integers(1, 3)):
            cy, cx = rng.uniform(0.2, 0.8, 2) * size
            sigma = rng.uniform(0.1, 0.18) * size
            img += 0.35 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    elif kind == "crack":
        pos = rng.uniform(0.2, 0.8, 2) * size
        heading = rng.uniform(0, 2 * np.pi)
        for _ in range(int(1.5 * size)):
            heading += rng.normal(0, 0.35)
            nxt = np.clip(pos + 1.0 * np.array([np.sin(heading), np.cos(heading)]), 0, size - 1)
            _draw_line(img, pos, nxt, value=0.05, width=size / 40)
            pos = nxt
    elif kind != "clean":
        # extra classes beyond the four named kinds: oriented bright bands
        k = SYNTH_CLASSES.index(kind) if kind in SYNTH_CLASSES else int(kind.split("_")[-1])
        yy, xx = np.mgrid[0:size, 0:size]
        angle = np.pi * (k % 7) / 7
        img += 0.15 * np.sin((yy * np.sin(angle) + xx * np.cos(angle)) * (2 * np.pi * (2 + k % 3) / size))


def synth_class_names(n: int) -> List[str]:
    base = list(SYNTH_CLASSES[: min(n, len(SYNTH_CLASSES))])
    return base + [f"pattern_{k}" for k in range(len(base), n)]


def synth_image(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    img = _texture(rng, size)
    _add_defect(kind, img, rng)
    gray = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8)
    return np.repeat(gray[..., None], 3, axis=2)


def _png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def synth_generate(spec: SynthSpec, out_dir: Union[str, Path]) -> DatasetManifest:
    """Write a deterministic synthetic dataset (8-bit RGB PNGs) and its manifest."""
    out = Path(out_dir)
    names = synth_class_names(spec.num_classes)
    if spec.images_per_class < 2:
        raise DataError("synthetic classes need at least 2 images (one per split)")
    # rounded 80/20 split, but every class keeps at least one image on each side
    n_train = int(np.floor(spec.images_per_class * spec.train_fraction + 0.5))
    n_train = min(max(n_train, 1), spec.images_per_class - 1)
    try:
        for label, cname in enumerate(names):
            for split in SPLITS:
                (out / split / cname).mkdir(parents=True, exist_ok=True)
            for i in range(spec.images_per_class):
                rng = np.random.default_rng([spec.seed, label, i])
                split = "train" if i < n_train else "test"
                arr = synth_image(cname, spec.image_size, rng)
                (out / split / cname / f"{cname}_{i:04d}.png").write_bytes(_png_bytes(arr))
        manifest = scan_folder(out)
        manifest.save()
    except OSError as exc:
        raise DataError(f"cannot write synthetic dataset to {out}: {exc}") from None
    return manifest

"""Image preprocessing, augmentation, pair sampling, and dataset ingestion.

Ingestion reads the directory layout ``root/<class_name>/<image files>`` with
class index = lexicographic rank of the class directory name. Supported
rasters: 8-bit PNG, 1 or 3 channels.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .core import ClassLabel, Dataset, ImageTensor, LabeledSample, RandomStream

__all__ = [
    "normalize_image",
    "horizontal_flip_maybe",
    "pair_sampler",
    "load_dataset",
    "load_image_file",
    "save_image_png",
    "image_to_png_bytes",
    "image_from_png_bytes",
]


def resize_bilinear(img: np.ndarray, out_side: int) -> np.ndarray:
    """Bilinear resample of ``[H, W, C]`` to ``[out, out, C]``.

    Half-pixel-centered sampling with edge clamping (the align_corners=False
    convention), so resizing to the same side is an exact identity.
    """
    h, w = img.shape[:2]
    out = np.asarray(img, dtype=np.float64)

    def axis_coords(n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        src = (np.arange(out_side) + 0.5) * (n_in / out_side) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = src - lo
        return lo, hi, frac

    y0, y1, fy = axis_coords(h)
    x0, x1, fx = axis_coords(w)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = out[y0][:, x0] * (1 - fx) + out[y0][:, x1] * fx
    bot = out[y1][:, x0] * (1 - fx) + out[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def _center_crop_square(arr: np.ndarray) -> np.ndarray:
    h, w = arr.shape[:2]
    side = min(h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return arr[top : top + side, left : left + side]


def normalize_image(raw: np.ndarray | ImageTensor, target_size: int) -> ImageTensor:
    """Center-crop to square, resize to ``target_size``, map values to [-1, 1].

    Raw arrays are interpreted on the [0, 255] scale; an ``ImageTensor`` input
    is already normalized and only gets the geometric treatment, which makes
    the operation idempotent.
    """
    if target_size < 1:
        raise ValueError(f"target_size must be >= 1, got {target_size}")
    already_normalized = isinstance(raw, ImageTensor)
    arr = raw.data if already_normalized else np.asarray(raw, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty image array")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"expected [H, W] or [H, W, C] array, got shape {arr.shape}")
    if arr.shape[2] not in (1, 3):
        raise ValueError(f"unsupported channel count {arr.shape[2]} (expected 1 or 3)")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")

    arr = _center_crop_square(arr)
    if arr.shape[0] != target_size:
        arr = resize_bilinear(arr, target_size)
    if not already_normalized:
        arr = arr / 127.5 - 1.0
    return ImageTensor(np.clip(arr, -1.0, 1.0))


def horizontal_flip_maybe(img: ImageTensor, p: float, rng: RandomStream) -> ImageTensor:
    """Left-right mirror with probability ``p``; draws exactly one value."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"flip probability must be in [0, 1], got {p}")
    u = rng.uniform()
    if u < p:
        return ImageTensor(img.data[:, ::-1, :])
    return img


def pair_sampler(
    ds: Dataset, rng: RandomStream
) -> Iterator[tuple[LabeledSample, LabeledSample]]:
    """Endless stream of cross-class sample pairs.

    Multi-class sets are handled 1-vs-1: an unordered class pair is chosen
    uniformly, its order randomized, then one sample drawn uniformly from each
    side. Every emitted pair has distinct labels.
    """
    by_class = {k: idx for k, idx in ds.class_indices().items() if idx}
    populated = sorted(by_class)
    if len(populated) < 2:
        raise ValueError(
            f"pair sampling needs >= 2 populated classes, found {len(populated)}"
        )
    class_pairs = [
        (populated[i], populated[j])
        for i in range(len(populated))
        for j in range(i + 1, len(populated))
    ]

    def generate() -> Iterator[tuple[LabeledSample, LabeledSample]]:
        while True:
            ka, kb = class_pairs[int(rng.integers(0, len(class_pairs)))]
            if rng.uniform() < 0.5:
                ka, kb = kb, ka
            ia = by_class[ka][int(rng.integers(0, len(by_class[ka])))]
            ib = by_class[kb][int(rng.integers(0, len(by_class[kb])))]
            yield ds[ia], ds[ib]

    return generate()


def _to_uint8(img: ImageTensor) -> np.ndarray:
    scaled = np.clip((img.data + 1.0) * 127.5, 0.0, 255.0)
    return np.rint(scaled).astype(np.uint8)


def image_to_png_bytes(img: ImageTensor) -> bytes:
    import io

    arr = _to_uint8(img)
    pil = Image.fromarray(arr[:, :, 0], mode="L") if img.channels == 1 else Image.fromarray(arr, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(data: bytes, target_size: int | None = None) -> ImageTensor:
    import io

    pil = Image.open(io.BytesIO(data))
    return _from_pil(pil, target_size)


def _from_pil(pil: Image.Image, target_size: int | None) -> ImageTensor:
    if pil.mode not in ("L", "RGB"):
        raise ValueError(f"unsupported PNG mode {pil.mode!r} (expected 8-bit L or RGB)")
    arr = np.asarray(pil, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    side = target_size if target_size is not None else min(arr.shape[0], arr.shape[1])
    return normalize_image(arr, side)


def save_image_png(img: ImageTensor, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(image_to_png_bytes(img))


def load_image_file(path: str | Path, target_size: int | None = None) -> ImageTensor:
    with Image.open(path) as pil:
        return _from_pil(pil, target_size)


def load_dataset(root: str | Path, side: int, split: str = "train") -> Dataset:
    """Load ``root/<class_name>/*.png`` into a Dataset at the given side."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise ValueError(f"no class directories under {root}")
    class_names = tuple(p.name for p in class_dirs)
    samples = []
    for k, cdir in enumerate(class_dirs):
        for f in sorted(cdir.glob("*.png")):
            img = load_image_file(f, target_size=side)
            samples.append(
                LabeledSample(
                    id=f"{cdir.name}/{f.stem}",
                    image=img,
                    label=ClassLabel(k, len(class_dirs)),
                )
            )
    return Dataset(
        samples=tuple(samples),
        class_count=len(class_dirs),
        split=split,
        class_names=class_names,
    )

"""Procedural benchmark with known ground truth.

Each sample is a smooth random background (identity) plus an optional
class-determining lesion feature; the generator also returns the binary mask
of the feature so saliency maps can be scored against known pixels.
Backgrounds are drawn from the same distribution for every class.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ClassLabel, Dataset, ImageTensor, LabeledSample, RandomStream
from .data import resize_bilinear, save_image_png

__all__ = [
    "LesionSpec",
    "GroundTruthMask",
    "generate_dataset",
    "write_dataset",
    "pixel_threshold_accuracy",
    "background_shortcut_accuracy",
]

LESION_KINDS = ("none", "blob", "ridge", "double_blob")

# background stays below this value so lesion pixels are separable
_BG_CEILING = 0.35
_BG_FLOOR = -0.95


@dataclass(frozen=True)
class LesionSpec:
    """Class-determining feature: what gets injected on top of the background."""

    kind: str
    intensity: float = 0.8
    size_fraction: float = 0.12

    def __post_init__(self):
        if self.kind not in LESION_KINDS:
            raise ValueError(f"unknown lesion kind {self.kind!r}, expected one of {LESION_KINDS}")
        if self.kind != "none":
            if not 0.0 <= self.intensity <= 1.0:
                raise ValueError(f"intensity must be in [0, 1], got {self.intensity}")
            if not 0.0 < self.size_fraction <= 0.5:
                raise ValueError(f"size_fraction must be in (0, 0.5], got {self.size_fraction}")


@dataclass(frozen=True)
class GroundTruthMask:
    """Binary [H, W] mask; 1 marks pixels of the class-determining feature."""

    mask: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.mask)
        if arr.ndim != 2:
            raise ValueError(f"mask must be [H, W], got {arr.shape}")
        arr = (arr > 0).astype(np.uint8)
        arr.flags.writeable = False
        object.__setattr__(self, "mask", arr)

    @property
    def area(self) -> int:
        return int(self.mask.sum())


def _background(side: int, rng: RandomStream) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    bg = np.zeros((side, side), dtype=np.float64)
    n_waves = int(rng.integers(4, 9))
    for _ in range(n_waves):
        wavelength = rng.uniform(side / 6.0, side / 1.2)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        amp = rng.uniform(0.04, 0.20)
        kx = np.cos(theta) / wavelength
        ky = np.sin(theta) / wavelength
        bg += amp * np.sin(2.0 * np.pi * (kx * xx + ky * yy) + phase)
    # Perlin-like smooth noise: coarse gaussian grid upsampled bilinearly
    coarse = rng.normal(0.0, 1.0, size=(9, 9))
    bg += 0.08 * resize_bilinear(coarse[:, :, None], side)[:, :, 0]
    bg += -0.25 - bg.mean()
    return np.clip(bg, _BG_FLOOR, _BG_CEILING)


def _lesion_radius(spec: LesionSpec, side: int) -> float:
    return spec.size_fraction * side / 2.0


def _pick_center(side: int, rng: RandomStream) -> tuple[float, float]:
    # central 60% so a center-crop never removes the feature
    lo, hi = 0.2 * side, 0.8 * side
    return float(rng.uniform(lo, hi)), float(rng.uniform(lo, hi))


def _blob(side: int, cy: float, cx: float, radius: float, amp: float):
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    sigma = radius / 2.6  # mask radius = 2.6 sigma: ~97% of the bump mass inside
    bump = amp * np.exp(-d2 / (2.0 * sigma**2))
    mask = d2 <= radius**2
    return bump, mask


def _ridge(side: int, cy: float, cx: float, radius: float, amp: float, theta: float):
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    ux, uy = np.cos(theta), np.sin(theta)
    half_len = 2.5 * radius
    # distance to the segment through (cy, cx) with direction (uy, ux)
    ry, rx = yy - cy, xx - cx
    along = np.clip(ry * uy + rx * ux, -half_len, half_len)
    dy, dx = ry - along * uy, rx - along * ux
    dist2 = dy**2 + dx**2
    sigma = radius / 2.6
    bump = amp * np.exp(-dist2 / (2.0 * sigma**2))
    mask = dist2 <= radius**2
    return bump, mask


def _render_lesion(spec: LesionSpec, side: int, rng: RandomStream):
    """Additive feature field and its mask. Draws rng values even for 'none'
    placement-free kinds are not padded: call order is per-sample deterministic."""
    field = np.zeros((side, side), dtype=np.float64)
    mask = np.zeros((side, side), dtype=bool)
    if spec.kind == "none":
        return field, mask
    radius = _lesion_radius(spec, side)
    if 2.0 * radius >= side:
        raise ValueError(f"lesion diameter {2 * radius:.1f} exceeds image side {side}")
    # floor clears the darkest background so presence is pixel-decodable
    amp = 0.9 + 0.7 * spec.intensity
    if spec.kind == "blob":
        cy, cx = _pick_center(side, rng)
        bump, m = _blob(side, cy, cx, radius, amp)
        field += bump
        mask |= m
    elif spec.kind == "ridge":
        if 5.0 * radius >= 0.9 * side:
            raise ValueError(f"ridge length {5 * radius:.1f} exceeds image side {side}")
        cy, cx = _pick_center(side, rng)
        theta = float(rng.uniform(0.0, np.pi))
        bump, m = _ridge(side, cy, cx, radius, amp, theta)
        field += bump
        mask |= m
    elif spec.kind == "double_blob":
        cy1, cx1 = _pick_center(side, rng)
        for attempt in range(200):
            cy2, cx2 = _pick_center(side, rng)
            if (cy2 - cy1) ** 2 + (cx2 - cx1) ** 2 >= (2.4 * radius) ** 2:
                break
        else:
            raise ValueError(f"cannot place two non-overlapping blobs of radius {radius:.1f}")
        for cy, cx in ((cy1, cx1), (cy2, cx2)):
            bump, m = _blob(side, cy, cx, radius, amp)
            field += bump
            mask |= m
    return field, mask


def generate_dataset(
    classes: list[LesionSpec],
    n_per_class: int,
    side: int,
    rng: RandomStream,
    split: str = "train",
) -> tuple[Dataset, dict[str, GroundTruthMask]]:
    """Generate ``n_per_class`` samples per lesion class plus ground-truth masks.

    Class names are the lesion kind names and class indices follow their
    lexicographic rank, matching directory ingestion of the written layout.
    """
    if len(classes) < 1:
        raise ValueError("need >= 1 class")
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    kinds = [c.kind for c in classes]
    if len(set(kinds)) != len(kinds):
        raise ValueError("each class needs a distinct lesion kind")

    order = np.argsort(kinds)  # lexicographic rank -> class index
    ranked = [(kinds[i], classes[i]) for i in order]
    samples: list[LabeledSample] = []
    masks: dict[str, GroundTruthMask] = {}
    for class_index, (name, spec) in enumerate(ranked):
        for i in range(n_per_class):
            sample_rng = rng.child(f"{split}/{name}/{i}")
            bg = _background(side, sample_rng)
            field, mask = _render_lesion(spec, side, sample_rng)
            img = ImageTensor(np.clip(bg + field, -1.0, 1.0)[:, :, None])
            sid = f"{name}/{split}-{i:05d}"
            samples.append(
                LabeledSample(id=sid, image=img, label=ClassLabel(class_index, len(ranked)))
            )
            masks[sid] = GroundTruthMask(mask)
    ds = Dataset(
        samples=tuple(samples),
        class_count=len(ranked),
        split=split,
        class_names=tuple(name for name, _ in ranked),
    )
    return ds, masks


def write_dataset(
    out_root: str | Path,
    ds: Dataset,
    masks: dict[str, GroundTruthMask],
    specs: dict[str, LesionSpec] | None = None,
) -> None:
    """Write ``out_root/<split>/<class>/<stem>.png``, masks, and manifest.tsv."""
    out_root = Path(out_root)
    split_dir = out_root / ds.split
    mask_dir = out_root / "masks"
    rows = []
    for s in ds:
        class_name = ds.class_name(s.label.index)
        stem = s.id.split("/", 1)[1]
        save_image_png(s.image, split_dir / class_name / f"{stem}.png")
        m = masks[s.id]
        _save_mask_png(m, mask_dir / s.id)
        spec = (specs or {}).get(class_name)
        rows.append(
            {
                "id": s.id,
                "split": ds.split,
                "class": class_name,
                "kind": spec.kind if spec else class_name,
                "intensity": spec.intensity if spec else "",
                "size_fraction": spec.size_fraction if spec else "",
            }
        )
    manifest = out_root / "manifest.tsv"
    exists = manifest.exists()
    with open(manifest, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), delimiter="\t")
        if not exists:
            writer.writeheader()
        writer.writerows(rows)


def _save_mask_png(mask: GroundTruthMask, path_no_ext: Path) -> None:
    from PIL import Image

    path = path_no_ext.with_suffix(".png")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.mask * np.uint8(255), mode="L").save(path)


def load_masks(root: str | Path, ds: Dataset) -> dict[str, GroundTruthMask]:
    from PIL import Image

    mask_dir = Path(root) / "masks"
    out = {}
    for s in ds:
        with Image.open(mask_dir / f"{s.id}.png") as pil:
            out[s.id] = GroundTruthMask(np.asarray(pil) > 127)
    return out


def pixel_threshold_accuracy(
    ds: Dataset, threshold: float = 0.5, min_pixels: int = 3
) -> float:
    """Accuracy of the rule 'lesion present iff >= min_pixels exceed threshold'.

    Backgrounds are capped below the threshold, so this checks that the class
    is decodable from pixels alone. Meaningful for lesion-vs-none class sets.
    """
    if ds.class_names is None or "none" not in ds.class_names:
        raise ValueError("threshold rule needs a 'none' class")
    none_index = ds.class_names.index("none")
    correct = 0
    for s in ds:
        hot = int((s.image.data[:, :, 0] > threshold).sum())
        predicted_lesion = hot >= min_pixels
        actually_lesion = s.label.index != none_index
        correct += int(predicted_lesion == actually_lesion)
    return correct / len(ds)


def background_shortcut_accuracy(
    ds: Dataset, masks: dict[str, GroundTruthMask], rng: RandomStream, folds: int = 5
) -> float:
    """Cross-validated accuracy of a linear probe on feature-ablated images.

    Every sample gets a lesion-shaped region zeroed: its own mask when it has
    one, otherwise a mask borrowed from a random lesioned sample, so the probe
    cannot key on the ablation footprint itself. Chance-level accuracy means
    the backgrounds carry no class signal.
    """
    from sklearn.linear_model import LogisticRegression
    from sklearn.model_selection import StratifiedKFold, cross_val_score

    lesion_masks = [masks[s.id] for s in ds if masks[s.id].area > 0]
    if not lesion_masks:
        raise ValueError("no lesioned samples to borrow masks from")
    feats, labels = [], []
    for s in ds:
        m = masks[s.id]
        if m.area == 0:
            m = lesion_masks[int(rng.integers(0, len(lesion_masks)))]
        img = s.image.data[:, :, 0].copy()
        img[m.mask > 0] = 0.0
        small = resize_bilinear(img[:, :, None], 16)[:, :, 0]
        feats.append(small.ravel())
        labels.append(s.label.index)
    clf = LogisticRegression(max_iter=2000)
    cv = StratifiedKFold(n_splits=folds, shuffle=True, random_state=int(rng.integers(0, 2**31)))
    scores = cross_val_score(clf, np.asarray(feats), np.asarray(labels), cv=cv)
    return float(scores.mean())

"""Active explanation: counterfactual series along guided paths, class-swap
auditing, difference maps and weighted saliency, an occlusion baseline, and
timing comparison between the two.

The classifier under explanation is accessed only through
``classify(image) -> probability vector`` (black-box contract). Adapters are
provided for the bundled probe, an external command, an HTTP endpoint, and the
embedding model's own class head.
"""

from __future__ import annotations

import base64
import json
import statistics
import subprocess
import tempfile
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
import torch

from .core import ClassLabel, Dataset, ImageTensor, LabeledSample, RandomStream
from .manifold import CodeTable, PathSpec, build_path
from .networks import ModelBundle, decode, encode_class, encode_indiv

__all__ = [
    "BlackBoxClassifier",
    "CommandClassifier",
    "HttpClassifier",
    "DiscriminatorClassifier",
    "CounterfactualSeries",
    "SaliencyResult",
    "SwapAuditReport",
    "CostReport",
    "generate_series",
    "series_to_destination",
    "swap_audit",
    "difference_maps",
    "saliency_map",
    "pick_destination",
    "occlusion_baseline",
    "cost_benchmark",
    "misclassified_swap_synthetics",
    "augment_dataset",
    "save_saliency_outputs",
    "render_overlay",
]

WEIGHTING_MODES = ("prob_delta", "endpoint_contrast")
DEFAULT_PATH_STEPS = 10


@runtime_checkable
class BlackBoxClassifier(Protocol):
    """Opaque evaluation contract: image in, probability vector over K out."""

    class_count: int

    def classify(self, image: ImageTensor) -> np.ndarray: ...


def _check_probs(probs: np.ndarray, class_count: int, origin: str) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    if probs.shape[0] != class_count:
        raise ValueError(f"{origin}: expected {class_count} probabilities, got {probs.shape[0]}")
    if probs.min() < -1e-9 or abs(probs.sum() - 1.0) > 1e-5:
        raise ValueError(f"{origin}: probabilities must be nonnegative and sum to 1")
    return probs


class CommandClassifier:
    """Runs ``command <image.png>``; expects one probability per class on stdout."""

    def __init__(self, command: list[str] | str, class_count: int):
        import shlex

        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.class_count = class_count

    def classify(self, image: ImageTensor) -> np.ndarray:
        from .data import save_image_png

        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "query.png"
            save_image_png(image, path)
            proc = subprocess.run(
                self.command + [str(path)], capture_output=True, text=True
            )
            if proc.returncode != 0:
                raise RuntimeError(
                    f"classifier command failed ({proc.returncode}): {proc.stderr.strip()}"
                )
            values = [float(tok) for tok in proc.stdout.split()]
        return _check_probs(np.array(values), self.class_count, "command classifier")


class HttpClassifier:
    """POSTs ``{"image_png_b64": ...}`` to a URL returning ``{"probabilities": [...]}``."""

    def __init__(self, url: str, class_count: int, timeout: float = 30.0):
        self.url = url
        self.class_count = class_count
        self.timeout = timeout

    def classify(self, image: ImageTensor) -> np.ndarray:
        import requests

        from .data import image_to_png_bytes

        payload = {"image_png_b64": base64.b64encode(image_to_png_bytes(image)).decode()}
        resp = requests.post(self.url, json=payload, timeout=self.timeout)
        resp.raise_for_status()
        return _check_probs(
            np.array(resp.json()["probabilities"]), self.class_count, "http classifier"
        )


class DiscriminatorClassifier:
    """The embedding model's own class head as a probability source."""

    def __init__(self, bundle: ModelBundle):
        self.bundle = bundle
        self.class_count = bundle.config.class_count

    def classify(self, image: ImageTensor) -> np.ndarray:
        return self.classify_batch(image.data[None])[0]

    def classify_batch(self, images: np.ndarray) -> np.ndarray:
        self.bundle.eval_mode()
        x = torch.from_numpy(np.array(np.transpose(images, (0, 3, 1, 2)), dtype=np.float32))
        with torch.no_grad():
            _, logits = self.bundle.discriminator(x)
            return torch.softmax(logits, dim=1).numpy()


@dataclass(frozen=True)
class CounterfactualSeries:
    """Decoded frames along one guided path plus per-frame class probabilities."""

    source_id: str
    source_class: int
    destination_class: int
    path: PathSpec
    frames: tuple[ImageTensor, ...]
    probs: np.ndarray  # [n_steps, K]

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if len(self.frames) != self.path.n_steps:
            raise ValueError("frame count must equal path point count")
        if probs.shape[0] != len(self.frames):
            raise ValueError("probs row count must equal frame count")
        probs.flags.writeable = False
        object.__setattr__(self, "frames", tuple(self.frames))
        object.__setattr__(self, "probs", probs)


def generate_series(
    bundle: ModelBundle,
    source: LabeledSample,
    path: PathSpec,
    classifier: BlackBoxClassifier,
    destination_class: int | None = None,
) -> CounterfactualSeries:
    """Decode every path point against the source's individual-style code.

    Frames are decoded one by one so frame 0 is bit-identical to the plain
    reconstruction when the path starts at the source's own class code.
    """
    if path.start.shape[0] != bundle.config.code_dim:
        raise ValueError(
            f"path dimension {path.start.shape[0]} != model code dim {bundle.config.code_dim}"
        )
    style = encode_indiv(bundle, source.image)
    from .core import ClassStyleCode

    points = path.points()
    # frame 0 decodes alone so it is bit-identical to the plain reconstruction;
    # the interior frames share one batched decode
    frames = [decode(bundle, ClassStyleCode(points[0].astype(np.float32)), style)]
    if len(points) > 1:
        style_t = torch.from_numpy(
            np.array(np.transpose(style.values, (2, 0, 1)), dtype=np.float32)
        )[None].expand(len(points) - 1, -1, -1, -1)
        rest = bundle.decode_batch(points[1:].astype(np.float32), style_t)
        frames.extend(ImageTensor(frame) for frame in rest)
    if hasattr(classifier, "classify_batch"):
        try:
            raw = list(classifier.classify_batch(np.stack([f.data for f in frames])))
        except Exception as exc:
            raise RuntimeError(f"classifier failed scoring the series: {exc}") from exc
    else:
        raw = []
        for i, frame in enumerate(frames):
            try:
                raw.append(classifier.classify(frame))
            except Exception as exc:
                raise RuntimeError(f"classifier failed at frame {i}: {exc}") from exc
    probs = []
    for i, row in enumerate(raw):
        try:
            probs.append(_check_probs(row, classifier.class_count, "classifier"))
        except ValueError as exc:
            raise RuntimeError(f"classifier failed at frame {i}: {exc}") from exc
    probs_arr = np.stack(probs)
    if destination_class is None:
        destination_class = int(probs_arr[-1].argmax())
    return CounterfactualSeries(
        source_id=source.id,
        source_class=source.label.index,
        destination_class=destination_class,
        path=path,
        frames=tuple(frames),
        probs=probs_arr,
    )


def series_to_destination(
    bundle: ModelBundle,
    source: LabeledSample,
    destination_code: np.ndarray,
    destination_class: int,
    classifier: BlackBoxClassifier,
    n_steps: int = DEFAULT_PATH_STEPS,
) -> CounterfactualSeries:
    """Canonical series: linear path from the source's own code to a destination."""
    start = encode_class(bundle, source.image).values
    path = build_path(start, np.asarray(destination_code, dtype=np.float64), n_steps)
    return generate_series(bundle, source, path, classifier, destination_class)


@dataclass(frozen=True)
class SwapAuditReport:
    """Coincidence rates of cross-class decodes with their intended class."""

    rates: dict[tuple[int, int], float]  # (source class, intended class) -> rate
    counts: dict[tuple[int, int], int]

    @property
    def overall(self) -> float:
        total = sum(self.counts.values())
        if total == 0:
            return float("nan")
        hit = sum(self.rates[k] * self.counts[k] for k in self.rates)
        return hit / total

    def direction(self, source_class: int, intended_class: int) -> float:
        return self.rates[(source_class, intended_class)]


def swap_audit(
    bundle: ModelBundle,
    ds: Dataset,
    classifier: BlackBoxClassifier,
    rng: RandomStream,
    max_per_class: int | None = None,
    decode_batch: int = 64,
) -> SwapAuditReport:
    """For every sample, decode it with a random counter-class sample's class
    code and check whether the classifier assigns the intended counter class."""
    by_class = {k: v for k, v in ds.class_indices().items() if v}
    if len(by_class) < 2:
        raise ValueError("swap audit needs >= 2 populated classes")
    from .manifold import extract_codes

    table = extract_codes(bundle, ds)
    id_to_row = {sid: i for i, sid in enumerate(table.ids)}

    jobs: list[tuple[int, int, int, int]] = []  # (sample idx, donor row, src, dst)
    for k, indices in sorted(by_class.items()):
        chosen = indices
        if max_per_class is not None and len(indices) > max_per_class:
            order = rng.permutation(len(indices))[:max_per_class]
            chosen = [indices[int(i)] for i in order]
        other = [i for kk, idx in sorted(by_class.items()) if kk != k for i in idx]
        for i in chosen:
            donor = ds[other[int(rng.integers(0, len(other)))]]
            jobs.append((i, id_to_row[donor.id], k, donor.label.index))

    hits: dict[tuple[int, int], int] = {}
    counts: dict[tuple[int, int], int] = {}
    for start in range(0, len(jobs), decode_batch):
        chunk = jobs[start : start + decode_batch]
        samples = [ds[i] for i, _, _, _ in chunk]
        images = np.stack([np.transpose(s.image.data, (2, 0, 1)) for s in samples])
        bundle.eval_mode()
        with torch.no_grad():
            styles = bundle.indiv_encoder(torch.from_numpy(images.astype(np.float32)))
        codes = np.stack([table.codes[row] for _, row, _, _ in chunk])
        frames = bundle.decode_batch(codes, styles)
        from .manifold import _classify_batch

        probs = _classify_batch(classifier, frames)
        predicted = probs.argmax(axis=1)
        for (_, _, src, dst), pred in zip(chunk, predicted):
            key = (src, dst)
            counts[key] = counts.get(key, 0) + 1
            hits[key] = hits.get(key, 0) + int(pred == dst)
    rates = {k: hits[k] / counts[k] for k in counts}
    return SwapAuditReport(rates=rates, counts=counts)


def difference_maps(series: CounterfactualSeries) -> list[np.ndarray]:
    """Channel-summed absolute frame-to-frame differences; one map per interval."""
    if len(series.frames) < 2:
        raise ValueError("need >= 2 frames")
    maps = []
    for a, b in zip(series.frames[:-1], series.frames[1:]):
        maps.append(np.abs(b.data.astype(np.float64) - a.data.astype(np.float64)).sum(axis=2))
    return maps


@dataclass(frozen=True)
class SaliencyResult:
    saliency: np.ndarray  # [H, W], >= 0, max exactly 1 unless degenerate
    difference_maps: tuple[np.ndarray, ...]
    step_weights: np.ndarray  # [n_steps - 1], >= 0
    flip_index: int | None
    degenerate: bool
    weighting: str

    def __post_init__(self):
        sal = np.asarray(self.saliency, dtype=np.float64)
        if sal.min() < 0:
            raise ValueError("saliency must be nonnegative")
        sal.flags.writeable = False
        object.__setattr__(self, "saliency", sal)
        object.__setattr__(self, "difference_maps", tuple(self.difference_maps))


def pick_destination(series: CounterfactualSeries) -> int | None:
    """Smallest step index whose argmax class is the destination class."""
    for n in range(series.probs.shape[0]):
        if int(series.probs[n].argmax()) == series.destination_class:
            return n
    return None


def saliency_map(series: CounterfactualSeries, weighting: str = "prob_delta") -> SaliencyResult:
    """Weighted sum of difference maps (or endpoint contrast), max-normalized.

    In ``prob_delta`` mode each interval is weighted by the rise of the
    destination class probability across it, clamped at zero.
    """
    if weighting not in WEIGHTING_MODES:
        raise ValueError(f"weighting must be one of {WEIGHTING_MODES}")
    maps = difference_maps(series)
    target = series.destination_class
    deltas = np.diff(series.probs[:, target])
    weights = np.clip(deltas, 0.0, None)
    if weighting == "prob_delta":
        raw = np.zeros_like(maps[0])
        for w, m in zip(weights, maps):
            raw = raw + w * m
    else:
        first, last = series.frames[0], series.frames[-1]
        raw = np.abs(last.data.astype(np.float64) - first.data.astype(np.float64)).sum(axis=2)
    peak = float(raw.max())
    degenerate = peak <= 0.0
    saliency = raw / peak if not degenerate else np.zeros_like(raw)
    return SaliencyResult(
        saliency=saliency,
        difference_maps=tuple(maps),
        step_weights=weights,
        flip_index=pick_destination(series),
        degenerate=degenerate,
        weighting=weighting,
    )


def occlusion_baseline(
    image: ImageTensor,
    classifier: BlackBoxClassifier,
    window: int | None = None,
    stride: int | None = None,
    fill: float = 0.0,
) -> np.ndarray:
    """Sliding-patch saliency: accumulate the source-class probability drop
    over every covered pixel, then normalize the peak to 1."""
    side = image.side
    window = side // 8 if window is None else window
    stride = max(1, window // 2) if stride is None else stride
    if window > side:
        raise ValueError(f"window {window} exceeds image side {side}")
    if stride > window:
        warnings.warn("stride exceeds window: occlusion map will have coverage gaps")
    base = _check_probs(classifier.classify(image), classifier.class_count, "classifier")
    source_class = int(base.argmax())
    saliency = np.zeros((side, side), dtype=np.float64)
    positions = list(range(0, side - window + 1, stride))
    if positions[-1] != side - window:
        positions.append(side - window)
    for top in positions:
        for left in positions:
            occluded = np.array(image.data, copy=True)
            occluded[top : top + window, left : left + window, :] = fill
            probs = classifier.classify(ImageTensor(occluded))
            drop = float(base[source_class] - probs[source_class])
            if drop > 0:
                saliency[top : top + window, left : left + window] += drop
    peak = saliency.max()
    return saliency / peak if peak > 0 else saliency


@dataclass(frozen=True)
class CostReport:
    cae_seconds: tuple[float, ...]
    occlusion_seconds: tuple[float, ...]

    @property
    def cae_median(self) -> float:
        return statistics.median(self.cae_seconds) if self.cae_seconds else float("nan")

    @property
    def occlusion_median(self) -> float:
        return statistics.median(self.occlusion_seconds) if self.occlusion_seconds else float("nan")

    @property
    def ratio(self) -> float:
        if not self.cae_seconds or self.cae_median == 0:
            return float("nan")
        return self.occlusion_median / self.cae_median


def cost_benchmark(
    bundle: ModelBundle,
    table: CodeTable,
    classifier: BlackBoxClassifier,
    samples: list[LabeledSample],
    n_steps: int = DEFAULT_PATH_STEPS,
    window: int | None = None,
    stride: int | None = None,
) -> CostReport:
    """Median per-case wall-clock of the guided-path saliency versus the
    occlusion baseline on the same samples; run single-stream."""
    cae_times = []
    occ_times = []
    for sample in samples:
        counter = _counter_class(table, sample.label.index)
        dest = table.class_centroid(counter)
        t0 = time.perf_counter()
        series = series_to_destination(bundle, sample, dest, counter, classifier, n_steps)
        saliency_map(series)
        cae_times.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        occlusion_baseline(sample.image, classifier, window=window, stride=stride)
        occ_times.append(time.perf_counter() - t0)
    return CostReport(cae_seconds=tuple(cae_times), occlusion_seconds=tuple(occ_times))


def _counter_class(table: CodeTable, source_class: int) -> int:
    present = sorted(set(int(v) for v in np.unique(table.labels)))
    for k in present:
        if k != source_class:
            return k
    raise ValueError("no counter class present")


def misclassified_swap_synthetics(
    bundle: ModelBundle,
    ds: Dataset,
    classifier: BlackBoxClassifier,
    rng: RandomStream,
    max_per_class: int | None = None,
) -> list[LabeledSample]:
    """Single refinement round: cross-class decodes the classifier does not
    assign to the intended class, labeled with that intended class."""
    from .manifold import extract_codes, _classify_batch

    table = extract_codes(bundle, ds)
    id_to_row = {sid: i for i, sid in enumerate(table.ids)}
    by_class = {k: v for k, v in ds.class_indices().items() if v}
    out: list[LabeledSample] = []
    for k, indices in sorted(by_class.items()):
        chosen = indices
        if max_per_class is not None and len(indices) > max_per_class:
            order = rng.permutation(len(indices))[:max_per_class]
            chosen = [indices[int(i)] for i in order]
        other = [i for kk, idx in sorted(by_class.items()) if kk != k for i in idx]
        for i in chosen:
            sample = ds[i]
            donor = ds[other[int(rng.integers(0, len(other)))]]
            style = encode_indiv(bundle, sample.image)
            from .core import ClassStyleCode

            frame = decode(bundle, ClassStyleCode(table.codes[id_to_row[donor.id]]), style)
            probs = _classify_batch(classifier, frame.data[None])[0]
            intended = donor.label.index
            if int(probs.argmax()) != intended:
                out.append(
                    LabeledSample(
                        id=f"{sample.id}+synth-{donor.id.replace('/', '_')}",
                        image=frame,
                        label=ClassLabel(intended, ds.class_count),
                    )
                )
    return out


def augment_dataset(ds: Dataset, extra: list[LabeledSample]) -> Dataset:
    return Dataset(tuple(ds.samples) + tuple(extra), ds.class_count, ds.split, ds.class_names)


# --- exports -------------------------------------------------------------

def render_overlay(source: ImageTensor, saliency: np.ndarray, alpha: float = 0.7) -> ImageTensor:
    """Red-yellow heat over the grayscale source; returns an RGB image."""
    gray = (source.data.astype(np.float64).mean(axis=2) + 1.0) / 2.0
    s = np.clip(saliency, 0.0, 1.0)
    heat_r = np.ones_like(s)
    heat_g = s  # ramps red -> yellow
    heat_b = np.zeros_like(s)
    mix = alpha * s
    rgb = np.stack(
        [
            (1 - mix) * gray + mix * heat_r,
            (1 - mix) * gray + mix * heat_g,
            (1 - mix) * gray + mix * heat_b,
        ],
        axis=2,
    )
    return ImageTensor(rgb * 2.0 - 1.0)


def save_saliency_outputs(
    result: SaliencyResult,
    series: CounterfactualSeries,
    out_dir: str | Path,
    stem: str = "saliency",
) -> dict[str, Path]:
    """Write the heat overlay PNG, the raw float32 grid, and a JSON summary."""
    from .data import save_image_png

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    overlay_path = out_dir / f"{stem}_overlay.png"
    grid_path = out_dir / f"{stem}.f32"
    summary_path = out_dir / f"{stem}_summary.json"
    save_image_png(render_overlay(series.frames[0], result.saliency), overlay_path)
    grid_path.write_bytes(result.saliency.astype("<f4").tobytes())
    summary = {
        "source_id": series.source_id,
        "source_class": series.source_class,
        "destination_class": series.destination_class,
        "n_steps": series.path.n_steps,
        "weighting": result.weighting,
        "flip_index": result.flip_index,
        "degenerate": result.degenerate,
        "height": int(result.saliency.shape[0]),
        "width": int(result.saliency.shape[1]),
        "step_weights": [float(w) for w in result.step_weights],
        "per_step_probs": [[float(p) for p in row] for row in series.probs],
    }
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    return {"overlay": overlay_path, "grid": grid_path, "summary": summary_path}

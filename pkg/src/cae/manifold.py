"""Class-style-space analytics: code extraction, PCA projection, SMOTE convex
resampling with a continuity audit, a semantic-pervasiveness audit,
separability metrics, and guided-path construction.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .core import ClassStyleCode, Dataset, LabeledSample, RandomStream
from .networks import ModelBundle

__all__ = [
    "CodeTable",
    "ProjectionModel",
    "PathSpec",
    "SeparabilityReport",
    "extract_codes",
    "fit_pca",
    "smote_resample",
    "continuity_audit",
    "pervasiveness_audit",
    "build_path",
    "separability_report",
    "save_code_table",
    "load_code_table",
    "save_projection",
    "load_projection",
]

DEFAULT_SMOTE_NEIGHBORS = 5


@dataclass(frozen=True)
class CodeTable:
    """One class-style code row per sample, tied to the model that produced it."""

    ids: tuple[str, ...]
    labels: np.ndarray  # int64 [N]
    codes: np.ndarray  # float32 [N, code_dim]
    class_count: int
    model_hash: str
    code_dim: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        codes = np.asarray(self.codes, dtype=np.float32).reshape(len(self.ids), self.code_dim)
        if len(self.ids) != len(set(self.ids)):
            raise ValueError("duplicate sample ids in code table")
        if labels.shape[0] != len(self.ids) or codes.shape[0] != len(self.ids):
            raise ValueError("ids, labels, and codes must have equal length")
        if len(self.ids) and codes.shape[1] != self.code_dim:
            raise ValueError(f"codes have dim {codes.shape[1]}, expected {self.code_dim}")
        if len(self.ids) and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ValueError("labels outside [0, class_count)")
        if not np.isfinite(codes).all():
            raise ValueError("codes contain non-finite values")
        labels.flags.writeable = False
        codes.flags.writeable = False
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "codes", codes)

    def __len__(self) -> int:
        return len(self.ids)

    def rows_of_class(self, class_index: int) -> np.ndarray:
        return np.nonzero(self.labels == class_index)[0]

    def class_centroid(self, class_index: int) -> np.ndarray:
        rows = self.rows_of_class(class_index)
        if rows.size == 0:
            raise ValueError(f"class {class_index} has no rows")
        return self.codes[rows].mean(axis=0)


def extract_codes(bundle: ModelBundle, ds: Dataset, batch_size: int = 64) -> CodeTable:
    """Deterministic inference of every sample's class-style code."""
    if len(ds) and ds[0].image.side != bundle.config.side:
        raise ValueError(
            f"dataset side {ds[0].image.side} != model side {bundle.config.side}"
        )
    codes = []
    for start in range(0, len(ds), batch_size):
        chunk = ds.samples[start : start + batch_size]
        images = np.stack([s.image.data for s in chunk])
        codes.append(bundle.encode_class_batch(images))
    all_codes = np.concatenate(codes) if codes else np.zeros((0, bundle.config.code_dim), np.float32)
    return CodeTable(
        ids=tuple(s.id for s in ds),
        labels=np.array([s.label.index for s in ds], dtype=np.int64),
        codes=all_codes,
        class_count=ds.class_count,
        model_hash=bundle.model_hash(),
        code_dim=bundle.config.code_dim,
    )


def save_code_table(table: CodeTable, path: str | Path) -> None:
    lines = [
        "# cae-code-table v1",
        f"# model_hash={table.model_hash}",
        f"# code_dim={table.code_dim}",
        f"# class_count={table.class_count}",
        "id\tlabel\t" + "\t".join(f"v{i}" for i in range(table.code_dim)),
    ]
    for i, sid in enumerate(table.ids):
        vals = "\t".join(str(np.float32(v)) for v in table.codes[i])
        lines.append(f"{sid}\t{int(table.labels[i])}\t{vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_code_table(path: str | Path) -> CodeTable:
    meta: dict[str, str] = {}
    ids: list[str] = []
    labels: list[int] = []
    codes: list[list[float]] = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            body = line[2:]
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k] = v
            continue
        if not line.strip() or line.startswith("id\t"):
            continue
        parts = line.split("\t")
        ids.append(parts[0])
        labels.append(int(parts[1]))
        codes.append([np.float32(x) for x in parts[2:]])
    dim = int(meta["code_dim"])
    return CodeTable(
        ids=tuple(ids),
        labels=np.array(labels, dtype=np.int64),
        codes=np.array(codes, dtype=np.float32).reshape(len(ids), dim),
        class_count=int(meta["class_count"]),
        model_hash=meta["model_hash"],
        code_dim=dim,
    )


@dataclass(frozen=True)
class ProjectionModel:
    """Top-k principal axes of the code cloud."""

    mean: np.ndarray  # [d]
    axes: np.ndarray  # [k, d], orthonormal rows
    variance_fractions: np.ndarray  # [k], non-increasing

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        axes = np.asarray(self.axes, dtype=np.float64)
        fracs = np.asarray(self.variance_fractions, dtype=np.float64)
        gram = axes @ axes.T
        if not np.allclose(gram, np.eye(axes.shape[0]), atol=1e-8):
            raise ValueError("projection axes are not orthonormal")
        if np.any(np.diff(fracs) > 1e-12):
            raise ValueError("variance fractions must be non-increasing")
        for arr in (mean, axes, fracs):
            arr.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "variance_fractions", fracs)

    @property
    def k(self) -> int:
        return self.axes.shape[0]

    def project(self, codes: np.ndarray) -> np.ndarray:
        return (np.asarray(codes, np.float64) - self.mean) @ self.axes.T

    def back_project(self, scores: np.ndarray) -> np.ndarray:
        return np.asarray(scores, np.float64) @ self.axes + self.mean


def fit_pca(table: CodeTable, k: int) -> ProjectionModel:
    """Top-k principal axes of the code covariance via SVD."""
    n = len(table)
    if k < 1 or k > table.code_dim:
        raise ValueError(f"k must be in [1, {table.code_dim}], got {k}")
    if n < k:
        raise ValueError(f"need at least k={k} rows, have {n}")
    x = table.codes.astype(np.float64)
    mean = x.mean(axis=0)
    centered = x - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    variances = svals**2
    total = variances.sum()
    fracs = variances / total if total > 0 else np.zeros_like(variances)
    return ProjectionModel(
        mean=mean, axes=vt[:k], variance_fractions=fracs[:k]
    )


def save_projection(model: ProjectionModel, path: str | Path, model_hash: str = "") -> None:
    def b64(arr: np.ndarray) -> str:
        return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode()

    lines = [
        "format=cae-projection v1",
        f"model_hash={model_hash}",
        f"code_dim={model.mean.shape[0]}",
        f"k={model.k}",
        f"mean_b64={b64(model.mean)}",
        f"axes_b64={b64(model.axes)}",
        f"variance_fractions_b64={b64(model.variance_fractions)}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_projection(path: str | Path) -> tuple[ProjectionModel, str]:
    kv = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, v = line.split("=", 1)
            kv[k] = v
    if kv.get("format") != "cae-projection v1":
        raise ValueError(f"unsupported projection format {kv.get('format')!r}")

    def arr(key: str) -> np.ndarray:
        return np.frombuffer(base64.b64decode(kv[key]), dtype="<f8")

    d, k = int(kv["code_dim"]), int(kv["k"])
    model = ProjectionModel(
        mean=arr("mean_b64"),
        axes=arr("axes_b64").reshape(k, d),
        variance_fractions=arr("variance_fractions_b64"),
    )
    return model, kv.get("model_hash", "")


def _neighbor_lists(codes: np.ndarray, k_neighbors: int) -> np.ndarray:
    """Indices of each row's k nearest rows (self excluded), brute force."""
    diff = codes[:, None, :] - codes[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    return order[:, :k_neighbors]


def smote_resample(
    table: CodeTable,
    class_index: int,
    n_new: int,
    rng: RandomStream,
    k_neighbors: int = DEFAULT_SMOTE_NEIGHBORS,
    row_subset: np.ndarray | None = None,
) -> list[ClassStyleCode]:
    """Convex interpolations between same-class codes and their near neighbors.

    Each new code is ``a + u * (b - a)`` with ``u`` uniform in [0, 1] and ``b``
    one of the ``k_neighbors`` nearest same-class rows of ``a``.
    """
    rows = table.rows_of_class(class_index) if row_subset is None else np.asarray(row_subset)
    if rows.size < 2:
        raise ValueError(f"SMOTE needs >= 2 rows in class {class_index}, have {rows.size}")
    codes = table.codes[rows].astype(np.float64)
    k = min(k_neighbors, rows.size - 1)
    neighbors = _neighbor_lists(codes, k)
    out = []
    for _ in range(n_new):
        i = int(rng.integers(0, rows.size))
        j = int(neighbors[i][int(rng.integers(0, k))])
        u = float(rng.uniform())
        out.append(ClassStyleCode(codes[i] + u * (codes[j] - codes[i])))
    return out


def _styles_for(bundle: ModelBundle, samples: list[LabeledSample]) -> torch.Tensor:
    images = np.stack([np.transpose(s.image.data, (2, 0, 1)) for s in samples])
    bundle.eval_mode()
    with torch.no_grad():
        return bundle.indiv_encoder(torch.from_numpy(np.array(images, dtype=np.float32)))


def _classify_batch(classifier, images: np.ndarray) -> np.ndarray:
    """[N, H, W, C] -> [N, K]; uses the classifier's batch path when it has one."""
    from .core import ImageTensor

    if hasattr(classifier, "classify_batch"):
        return classifier.classify_batch(images)
    return np.stack([classifier.classify(ImageTensor(img)) for img in images])


def continuity_audit(
    bundle: ModelBundle,
    table: CodeTable,
    ds: Dataset,
    classifier,
    n_new: int,
    rng: RandomStream,
    k_neighbors: int = DEFAULT_SMOTE_NEIGHBORS,
    decode_batch: int = 64,
) -> dict[int, float]:
    """Per class: fraction of SMOTE-resampled codes whose decodes keep the class.

    Resampled codes are decoded against one fixed individual-style donor of the
    source class (held out of the SMOTE pool) and judged by the classifier.
    """
    if n_new == 0:
        return {}
    results: dict[int, float] = {}
    id_to_row = {sid: i for i, sid in enumerate(table.ids)}
    for class_index in range(table.class_count):
        rows = table.rows_of_class(class_index)
        if rows.size < 3:
            raise ValueError(f"class {class_index} too small for a held-out donor + SMOTE")
        candidates = [s for s in ds if s.label.index == class_index and s.id in id_to_row]
        donor = candidates[int(rng.integers(0, len(candidates)))]
        pool = rows[rows != id_to_row[donor.id]]
        new_codes = smote_resample(table, class_index, n_new, rng, k_neighbors, row_subset=pool)
        style = _styles_for(bundle, [donor])
        hits = 0
        for start in range(0, n_new, decode_batch):
            chunk = new_codes[start : start + decode_batch]
            codes = np.stack([c.values for c in chunk])
            styles = style.expand(len(chunk), -1, -1, -1)
            frames = bundle.decode_batch(codes, styles)
            probs = _classify_batch(classifier, frames)
            hits += int((probs.argmax(axis=1) == class_index).sum())
        results[class_index] = hits / n_new
    return results


def pervasiveness_audit(
    bundle: ModelBundle,
    table: CodeTable,
    ds: Dataset,
    classifier,
    combos_per_code: int,
    rng: RandomStream,
    max_codes: int | None = None,
    decode_batch: int = 64,
) -> float:
    """Fraction of (code x donor-style) decodes classified as the code's class.

    Every audited class-style code is combined with ``combos_per_code`` random
    donor individual-style codes from other samples.
    """
    if len(ds) <= combos_per_code:
        raise ValueError("need more donor samples than combos_per_code")
    row_order = np.arange(len(table))
    if max_codes is not None and max_codes < len(table):
        row_order = rng.permutation(len(table))[:max_codes]
    id_to_sample = {s.id: s for s in ds}
    total = 0
    hits = 0
    pending_codes: list[np.ndarray] = []
    pending_styles: list[LabeledSample] = []
    pending_targets: list[int] = []

    def flush():
        nonlocal total, hits
        if not pending_codes:
            return
        styles = _styles_for(bundle, pending_styles)
        frames = bundle.decode_batch(np.stack(pending_codes), styles)
        probs = _classify_batch(classifier, frames)
        hits += int((probs.argmax(axis=1) == np.array(pending_targets)).sum())
        total += len(pending_codes)
        pending_codes.clear()
        pending_styles.clear()
        pending_targets.clear()

    for row in row_order:
        own_id = table.ids[int(row)]
        donor_pool = [s for s in ds if s.id != own_id]
        picks = rng.choice(len(donor_pool), size=combos_per_code, replace=False)
        for p in np.atleast_1d(picks):
            pending_codes.append(table.codes[int(row)])
            pending_styles.append(donor_pool[int(p)])
            pending_targets.append(int(table.labels[int(row)]))
            if len(pending_codes) >= decode_batch:
                flush()
    flush()
    return hits / total if total else float("nan")


@dataclass(frozen=True)
class PathSpec:
    """Evenly sampled linear trajectory between two class-style codes."""

    start: np.ndarray
    end: np.ndarray
    n_steps: int
    mode: str = "linear"

    def __post_init__(self):
        start = np.asarray(self.start, dtype=np.float64)
        end = np.asarray(self.end, dtype=np.float64)
        if start.shape != end.shape or start.ndim != 1:
            raise ValueError(f"start/end must be equal-length vectors, got {start.shape} vs {end.shape}")
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be >= 2, got {self.n_steps}")
        if self.mode != "linear":
            raise ValueError(f"unsupported path mode {self.mode!r}")
        start.flags.writeable = False
        end.flags.writeable = False
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)

    def points(self) -> np.ndarray:
        """[n_steps, d]; step 0 is start, step n_steps - 1 is end."""
        t = np.arange(self.n_steps, dtype=np.float64) / (self.n_steps - 1)
        return (1.0 - t)[:, None] * self.start[None, :] + t[:, None] * self.end[None, :]


def build_path(start: np.ndarray, end: np.ndarray, n_steps: int) -> PathSpec:
    return PathSpec(start=start, end=end, n_steps=n_steps)


@dataclass(frozen=True)
class SeparabilityReport:
    silhouette: float
    probe_accuracy: float
    fold_accuracies: tuple[float, ...]


def separability_report(table: CodeTable, folds: int = 5, seed: int = 0) -> SeparabilityReport:
    """Silhouette score on raw codes plus k-fold logistic-probe accuracy."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.metrics import silhouette_score
    from sklearn.model_selection import StratifiedKFold, cross_val_score

    present = np.unique(table.labels)
    if present.size < 2:
        raise ValueError("separability needs >= 2 populated classes")
    sil = float(silhouette_score(table.codes, table.labels))
    probe = LogisticRegression(max_iter=2000)
    cv = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    scores = cross_val_score(probe, table.codes, table.labels, cv=cv)
    return SeparabilityReport(
        silhouette=sil,
        probe_accuracy=float(scores.mean()),
        fold_accuracies=tuple(float(s) for s in scores),
    )

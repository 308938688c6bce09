"""Shared data model: images, labels, style codes, datasets, seeded random streams.

All value types are immutable after construction (backing numpy arrays are
frozen), so they can be shared freely across threads. ``RandomStream`` is the
one stateful object and is single-owner; use :meth:`RandomStream.child` to
derive independent streams for concurrent work.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ImageTensor",
    "ClassLabel",
    "ClassStyleCode",
    "IndividualStyleCode",
    "LabeledSample",
    "Dataset",
    "RandomStream",
]

_RANGE_TOL = 1e-5


def _frozen(arr: np.ndarray, dtype=np.float32) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ImageTensor:
    """Square image as float32 ``[H, W, C]`` with values in [-1, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"image must be [H, W, C], got shape {arr.shape}")
        h, w, c = arr.shape
        if h == 0 or w == 0:
            raise ValueError("image is empty")
        if h != w:
            raise ValueError(f"image must be square, got {h}x{w}")
        if c not in (1, 3):
            raise ValueError(f"unsupported channel count {c} (expected 1 or 3)")
        if not np.isfinite(arr).all():
            raise ValueError("image contains non-finite values")
        if arr.min() < -1.0 - _RANGE_TOL or arr.max() > 1.0 + _RANGE_TOL:
            raise ValueError(
                f"image values outside [-1, 1]: min={arr.min():.4f} max={arr.max():.4f}"
            )
        object.__setattr__(self, "data", _frozen(np.clip(arr, -1.0, 1.0)))

    @property
    def side(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class ClassLabel:
    """Class index within a fixed label set of ``class_count`` classes."""

    index: int
    class_count: int

    def __post_init__(self):
        if self.class_count < 1:
            raise ValueError(f"class_count must be >= 1, got {self.class_count}")
        if not 0 <= self.index < self.class_count:
            raise ValueError(
                f"label index {self.index} outside [0, {self.class_count})"
            )


@dataclass(frozen=True)
class ClassStyleCode:
    """Low-dimensional vector carrying the class-determining features."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError(f"class-style code must be a nonempty vector, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("class-style code contains non-finite values")
        # float64 codes (path points, SMOTE output) keep their precision
        dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        object.__setattr__(self, "values", _frozen(arr, dtype=dtype))

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class IndividualStyleCode:
    """Spatial feature map ``[h, w, f]`` carrying identity/background features."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 3:
            raise ValueError(f"individual-style code must be [h, w, f], got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("individual-style code contains non-finite values")
        object.__setattr__(self, "values", _frozen(arr))

    @property
    def spatial_side(self) -> int:
        return self.values.shape[0]

    @property
    def feature_count(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class LabeledSample:
    id: str
    image: ImageTensor
    label: ClassLabel


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of labeled samples with a fixed class set."""

    samples: tuple[LabeledSample, ...]
    class_count: int
    split: str = "train"
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))
            if len(self.class_names) != self.class_count:
                raise ValueError("class_names length must equal class_count")
        seen: set[str] = set()
        for s in self.samples:
            if s.label.index >= self.class_count:
                raise ValueError(f"sample {s.id!r} has label >= class_count")
            if s.id in seen:
                raise ValueError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i: int) -> LabeledSample:
        return self.samples[i]

    def by_id(self, sample_id: str) -> LabeledSample:
        for s in self.samples:
            if s.id == sample_id:
                return s
        raise KeyError(f"no sample with id {sample_id!r}")

    def class_indices(self) -> dict[int, list[int]]:
        """Map class index -> positions of its samples."""
        out: dict[int, list[int]] = {k: [] for k in range(self.class_count)}
        for i, s in enumerate(self.samples):
            out[s.label.index].append(i)
        return out

    def class_name(self, index: int) -> str:
        if self.class_names is not None:
            return self.class_names[index]
        return str(index)


def check_split_disjoint(train: Dataset, test: Dataset) -> None:
    """Train and test sample ids must not overlap."""
    overlap = {s.id for s in train} & {s.id for s in test}
    if overlap:
        raise ValueError(f"train/test ids overlap: {sorted(overlap)[:5]}")


def _mix_key(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    return int(key)


@dataclass
class RandomStream:
    """Deterministic random source: same seed + same call sequence => same draws.

    ``position`` counts scalar draws, so two streams at equal (seed, position)
    reached through the same call sequence are interchangeable. Not thread
    safe; derive children via :meth:`child` for concurrent use.
    """

    seed: int
    position: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.seed = int(self.seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        if self.position:
            raise ValueError("position is derived; construct at 0 and replay or set_state")

    def _count(self, size) -> int:
        if size is None:
            return 1
        return int(np.prod(size))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        self.position += self._count(size)
        return self._gen.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        self.position += self._count(size)
        return self._gen.normal(loc, scale, size)

    def integers(self, low: int, high: int | None = None, size=None):
        self.position += self._count(size)
        return self._gen.integers(low, high, size)

    def choice(self, seq, size=None, replace: bool = True):
        self.position += self._count(size)
        return self._gen.choice(seq, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        self.position += n
        return self._gen.permutation(n)

    def child(self, key: int | str) -> "RandomStream":
        """Independent stream derived from (seed, key); order of creation is irrelevant."""
        derived = np.random.SeedSequence([self.seed & 0xFFFFFFFF, _mix_key(key)])
        return RandomStream(int(derived.generate_state(1, np.uint64)[0]) & 0x7FFFFFFFFFFFFFFF)

    def get_state(self) -> dict:
        return {"seed": self.seed, "position": self.position,
                "bit_generator": self._gen.bit_generator.state}

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self.position = int(state["position"])
        self._gen.bit_generator.state = state["bit_generator"]

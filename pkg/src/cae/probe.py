"""Bundled convolutional probe classifier.

Stands in for the external black-box model at desk scale: trained separately
from the embedding model and queried only through image -> probabilities.
"""

from __future__ import annotations

import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .core import Dataset, ImageTensor, RandomStream
from .networks import zip_writestr

__all__ = ["ProbeConfig", "ProbeNet", "ProbeClassifier", "train_probe", "save_probe", "load_probe"]

PROBE_FORMAT = "cae-probe v1"


@dataclass(frozen=True)
class ProbeConfig:
    side: int = 64
    channels: int = 1
    class_count: int = 2
    width: int = 48
    learning_rate: float = 1e-3
    epochs: int = 4
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.side % 8 != 0:
            raise ValueError("side must be divisible by 8")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")


class ProbeNet(nn.Module):
    def __init__(self, cfg: ProbeConfig):
        super().__init__()
        w = cfg.width
        self.cfg = cfg
        self.features = nn.Sequential(
            nn.Conv2d(cfg.channels, w, 7, stride=2, padding=3),
            nn.ReLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1),
            nn.ReLU(),
            nn.Conv2d(4 * w, 4 * w, 3, stride=1, padding=1),
            nn.ReLU(),
        )
        self.head = nn.Linear(4 * w, cfg.class_count)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x).mean(dim=(2, 3)))


class ProbeClassifier:
    """Black-box adapter around a trained ProbeNet: image -> probability vector."""

    def __init__(self, net: ProbeNet):
        self.net = net
        self.net.eval()
        self.class_count = net.cfg.class_count

    def classify(self, image: ImageTensor) -> np.ndarray:
        return self.classify_batch(image.data[None])[0]

    def classify_batch(self, images: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(np.array(np.transpose(images, (0, 3, 1, 2)), dtype=np.float32))
        with torch.no_grad():
            logits = self.net(x)
            return torch.softmax(logits, dim=1).numpy()

    def accuracy(self, ds: Dataset, batch_size: int = 64) -> float:
        hits = 0
        for start in range(0, len(ds), batch_size):
            chunk = ds.samples[start : start + batch_size]
            probs = self.classify_batch(np.stack([s.image.data for s in chunk]))
            labels = np.array([s.label.index for s in chunk])
            hits += int((probs.argmax(axis=1) == labels).sum())
        return hits / len(ds)


def train_probe(ds: Dataset, cfg: ProbeConfig, rng: RandomStream | None = None) -> ProbeClassifier:
    if len(ds) < cfg.batch_size:
        raise ValueError("dataset smaller than one batch")
    rng = rng or RandomStream(cfg.seed)
    torch.manual_seed(cfg.seed)
    net = ProbeNet(cfg)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    images = np.stack([np.transpose(s.image.data, (2, 0, 1)) for s in ds])
    labels = np.array([s.label.index for s in ds], dtype=np.int64)
    net.train()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(ds))
        for start in range(0, len(ds) - cfg.batch_size + 1, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = torch.from_numpy(np.ascontiguousarray(images[idx])).float()
            y = torch.from_numpy(labels[idx])
            opt.zero_grad(set_to_none=True)
            loss = torch.nn.functional.cross_entropy(net(x), y)
            loss.backward()
            opt.step()
    return ProbeClassifier(net)


def save_probe(classifier: ProbeClassifier, path: str | Path) -> None:
    cfg = classifier.net.cfg
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        lines = [
            f"format={PROBE_FORMAT}",
            f"side={cfg.side}",
            f"channels={cfg.channels}",
            f"class_count={cfg.class_count}",
            f"width={cfg.width}",
        ]
        names = []
        for name, p in classifier.net.named_parameters():
            zip_writestr(zf, f"params/{name}", p.detach().numpy().astype("<f4").tobytes())
            names.append(f"tensor {name} {','.join(map(str, p.shape))}")
        zip_writestr(zf, "manifest", "\n".join(lines + names) + "\n")


def load_probe(path: str | Path) -> ProbeClassifier:
    with zipfile.ZipFile(path, "r") as zf:
        kv = {}
        shapes = {}
        for line in zf.read("manifest").decode().splitlines():
            if line.startswith("tensor "):
                _, name, shape = line.split(" ", 2)
                shapes[name] = tuple(int(d) for d in shape.split(","))
            elif line.strip():
                k, v = line.split("=", 1)
                kv[k] = v
        if kv.get("format") != PROBE_FORMAT:
            raise ValueError(f"unsupported probe format {kv.get('format')!r}")
        cfg = ProbeConfig(
            side=int(kv["side"]),
            channels=int(kv["channels"]),
            class_count=int(kv["class_count"]),
            width=int(kv["width"]),
        )
        net = ProbeNet(cfg)
        with torch.no_grad():
            for name, p in net.named_parameters():
                arr = np.frombuffer(zf.read(f"params/{name}"), dtype="<f4").reshape(shapes[name])
                p.copy_(torch.from_numpy(arr.copy()))
    return ProbeClassifier(net)

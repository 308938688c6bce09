import numpy as np
import pytest
import torch

from cae.core import ClassLabel, Dataset, ImageTensor, LabeledSample, RandomStream
from cae.networks import ModelBundle, NetConfig
from cae.synth import LesionSpec, generate_dataset

TINY_NET = NetConfig(
    side=16, channels=1, code_dim=4, class_count=2, base_width=4, class_downsamples=2
)


@pytest.fixture
def rng():
    return RandomStream(1234)


@pytest.fixture(scope="session")
def tiny_bundle():
    return ModelBundle.initialize(TINY_NET, seed=3)


@pytest.fixture(scope="session")
def tiny_synth():
    """16x16 two-class benchmark: 12 samples/class plus masks."""
    specs = [LesionSpec("none"), LesionSpec("blob", intensity=0.9, size_fraction=0.3)]
    return generate_dataset(specs, 12, 16, RandomStream(99), split="train")


def random_image(rng: RandomStream, side: int = 16, channels: int = 1) -> ImageTensor:
    return ImageTensor(rng.uniform(-1.0, 1.0, size=(side, side, channels)))


def toy_dataset(rng: RandomStream, class_sizes: list[int], side: int = 16) -> Dataset:
    samples = []
    for k, n in enumerate(class_sizes):
        for i in range(n):
            samples.append(
                LabeledSample(
                    id=f"c{k}/s{i:03d}",
                    image=random_image(rng, side),
                    label=ClassLabel(k, len(class_sizes)),
                )
            )
    return Dataset(tuple(samples), len(class_sizes), "train")


def seed_all(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % (2**31))

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings
from hypothesis import strategies as st

from cae.core import ClassLabel, Dataset, ImageTensor, LabeledSample, RandomStream
from cae.data import horizontal_flip_maybe, normalize_image, pair_sampler
from conftest import random_image, toy_dataset


class TestNormalizeImage:
    def test_uniform_255_maps_to_one(self):
        out = normalize_image(np.full((10, 10, 1), 255.0), target_size=6)
        assert out.side == 6
        assert np.allclose(out.data, 1.0)

    def test_uniform_0_maps_to_minus_one(self):
        out = normalize_image(np.full((7, 13, 3), 0.0), target_size=4)
        assert np.allclose(out.data, -1.0)

    def test_crop_then_resize_matches_reference_resampler(self):
        # 300x200 -> center-crop 200x200 -> bilinear 64x64, against torch
        yy, xx = np.meshgrid(np.arange(300), np.arange(200), indexing="ij")
        checker = (((yy // 8) + (xx // 8)) % 2).astype(np.float64) * 255.0
        raw = checker[:, :, None]
        out = normalize_image(raw, target_size=64)

        cropped = raw[50:250, :, :]
        t = torch.from_numpy(np.transpose(cropped, (2, 0, 1)))[None]
        ref = F.interpolate(t, size=(64, 64), mode="bilinear", align_corners=False)
        ref = np.transpose(ref[0].numpy(), (1, 2, 0)) / 127.5 - 1.0
        assert np.abs(out.data - ref).max() < 1e-6

    def test_upscaling_allowed(self):
        out = normalize_image(np.full((4, 4, 1), 128.0), target_size=32)
        assert out.side == 32

    @pytest.mark.parametrize(
        "raw, message",
        [
            (np.zeros((0, 4, 1)), "empty"),
            (np.full((4, 4, 1), np.nan), "non-finite"),
            (np.zeros((4, 4, 2)), "channel"),
        ],
    )
    def test_rejects_bad_input(self, raw, message):
        with pytest.raises(ValueError, match=message):
            normalize_image(raw, target_size=4)

    def test_idempotent_on_normalized_input(self, rng):
        raw = rng.uniform(0, 255, size=(20, 30, 3))
        once = normalize_image(raw, target_size=8)
        twice = normalize_image(once, target_size=8)
        assert np.abs(once.data - twice.data).max() < 1e-6

    @given(
        h=st.integers(3, 24),
        w=st.integers(3, 24),
        c=st.sampled_from([1, 3]),
        target=st.integers(2, 16),
        seed=st.integers(0, 10_000),
    )
    @settings(max_examples=40, deadline=None)
    def test_output_contract_property(self, h, w, c, target, seed):
        raw = np.random.default_rng(seed).uniform(0, 255, size=(h, w, c))
        out = normalize_image(raw, target_size=target)
        assert out.data.shape == (target, target, c)
        assert out.data.min() >= -1.0 and out.data.max() <= 1.0


class TestHorizontalFlip:
    def test_p_zero_is_identity(self, rng):
        img = random_image(rng)
        for _ in range(5):
            assert horizontal_flip_maybe(img, 0.0, rng) is img

    def test_p_one_mirrors_and_is_involution(self, rng):
        img = random_image(rng)
        flipped = horizontal_flip_maybe(img, 1.0, rng)
        assert np.array_equal(flipped.data, img.data[:, ::-1, :])
        assert np.array_equal(
            horizontal_flip_maybe(flipped, 1.0, rng).data, img.data
        )

    def test_draws_exactly_one_value(self, rng):
        img = random_image(rng)
        before = rng.position
        horizontal_flip_maybe(img, 0.25, rng)
        assert rng.position == before + 1

    def test_flip_count_within_three_sigma(self):
        rng = RandomStream(42)
        img = random_image(RandomStream(7), side=4)
        n = 10_000
        flips = sum(
            1
            for _ in range(n)
            if not np.array_equal(horizontal_flip_maybe(img, 0.5, rng).data, img.data)
        )
        sigma = (n * 0.25) ** 0.5
        assert abs(flips - n / 2) <= 3 * sigma

    def test_invalid_probability(self, rng):
        with pytest.raises(ValueError, match="probability"):
            horizontal_flip_maybe(random_image(rng), 1.5, rng)


class TestPairSampler:
    def test_two_singleton_classes_yield_both_orders(self, rng):
        ds = toy_dataset(rng, [1, 1], side=8)
        sampler = pair_sampler(ds, rng)
        orders = set()
        for _ in range(64):
            a, b = next(sampler)
            orders.add((a.label.index, b.label.index))
        assert orders == {(0, 1), (1, 0)}

    def test_never_same_class(self, rng):
        ds = toy_dataset(rng, [3, 2, 4], side=8)
        sampler = pair_sampler(ds, RandomStream(5))
        for _ in range(10_000):
            a, b = next(sampler)
            assert a.label.index != b.label.index

    def test_class_pair_frequencies_within_three_sigma(self, rng):
        ds = toy_dataset(rng, [5, 5, 5], side=8)
        sampler = pair_sampler(ds, RandomStream(11))
        n = 30_000
        counts: dict[frozenset, int] = {}
        for _ in range(n):
            a, b = next(sampler)
            key = frozenset((a.label.index, b.label.index))
            counts[key] = counts.get(key, 0) + 1
        sigma = (n * (1 / 3) * (2 / 3)) ** 0.5
        assert len(counts) == 3
        for c in counts.values():
            assert abs(c - n / 3) <= 3 * sigma

    def test_single_class_rejected(self, rng):
        ds = toy_dataset(rng, [4], side=8)
        with pytest.raises(ValueError, match="2 populated classes"):
            pair_sampler(ds, rng)

    def test_unpopulated_extra_class_rejected(self, rng):
        ds = toy_dataset(rng, [4], side=8)
        ds = Dataset(ds.samples, class_count=2, split="train")
        with pytest.raises(ValueError, match="2 populated classes"):
            pair_sampler(ds, rng)


class TestRandomStream:
    def test_same_seed_same_draws(self):
        a, b = RandomStream(7), RandomStream(7)
        seq_a = [a.uniform() for _ in range(10)] + list(a.integers(0, 100, size=5))
        seq_b = [b.uniform() for _ in range(10)] + list(b.integers(0, 100, size=5))
        assert seq_a == seq_b
        assert a.position == b.position == 15

    def test_children_are_independent_of_creation_order(self):
        r = RandomStream(3)
        c1 = r.child("x")
        r.uniform(size=100)
        c2 = RandomStream(3).child("x")
        assert c1.uniform() == c2.uniform()

    def test_state_roundtrip(self):
        r = RandomStream(9)
        r.uniform(size=17)
        state = r.get_state()
        expected = r.uniform()
        fresh = RandomStream(0)
        fresh.set_state(state)
        assert fresh.uniform() == expected


class TestValueTypes:
    def test_image_requires_square(self):
        with pytest.raises(ValueError, match="square"):
            ImageTensor(np.zeros((4, 6, 1)))

    def test_image_rejects_out_of_range(self):
        with pytest.raises(ValueError, match="outside"):
            ImageTensor(np.full((4, 4, 1), 2.0))

    def test_image_data_is_frozen(self, rng):
        img = random_image(rng)
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 0.0

    def test_label_bounds(self):
        with pytest.raises(ValueError):
            ClassLabel(2, 2)
        assert ClassLabel(1, 2).index == 1

    def test_dataset_rejects_duplicate_ids(self, rng):
        img = random_image(rng)
        s = LabeledSample("a", img, ClassLabel(0, 1))
        with pytest.raises(ValueError, match="duplicate"):
            Dataset((s, s), 1, "train")

import math
from collections import Counter

import numpy as np
import pytest
import torch

from cae.core import RandomStream
from cae.data import pair_sampler
from cae.losses import NonFiniteTensorError, compute_pair_forward, fused_discriminator_terms, fused_generator_terms
from cae.networks import ModelBundle
from cae.trainer import (
    OptimizerState,
    TrainConfig,
    balance_dataset,
    load_checkpoint,
    save_checkpoint,
    train,
    train_step,
)
from conftest import toy_dataset

TINY_TRAIN = dict(
    batch_pairs=2, image_side=16, channels=1, code_dim=4, base_width=4,
    class_downsamples=2, checkpoint_every=2,
)


def tiny_cfg(iterations: int, **kw) -> TrainConfig:
    return TrainConfig(iterations=iterations, **{**TINY_TRAIN, **kw})


def snapshot(bundle: ModelBundle) -> list[np.ndarray]:
    return [
        p.detach().numpy().copy()
        for _, m in bundle.named_modules_in_order()
        for p in m.parameters()
    ]


def params_equal(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


@pytest.fixture
def batch(tiny_synth):
    ds, _ = tiny_synth
    sampler = pair_sampler(ds, RandomStream(3))
    return [next(sampler) for _ in range(2)]


class TestTrainStep:
    def test_zero_learning_rate_leaves_parameters_unchanged(self, batch):
        cfg = tiny_cfg(1, learning_rate=0.0, weight_decay=0.0)
        bundle = ModelBundle.initialize(cfg.net_config(2), seed=0)
        opt = OptimizerState.create(bundle, cfg)
        before = snapshot(bundle)
        train_step(bundle, batch, cfg, opt)
        assert params_equal(before, snapshot(bundle))

    def test_discriminator_step_leaves_generator_untouched(self, batch):
        cfg = tiny_cfg(1, learning_rate=1e-3)
        bundle = ModelBundle.initialize(cfg.net_config(2), seed=1)
        opt = OptimizerState.create(bundle, cfg)
        gen_before = [p.detach().numpy().copy() for p in bundle.generator_parameters()]
        disc_before = [p.detach().numpy().copy() for p in bundle.discriminator_parameters()]
        train_step(bundle, batch, cfg, opt, update_generator=False)
        assert params_equal(gen_before, [p.detach().numpy() for p in bundle.generator_parameters()])
        assert not params_equal(disc_before, [p.detach().numpy() for p in bundle.discriminator_parameters()])

    def test_generator_step_leaves_discriminator_untouched(self, batch):
        cfg = tiny_cfg(1, learning_rate=1e-3)
        bundle = ModelBundle.initialize(cfg.net_config(2), seed=1)
        opt = OptimizerState.create(bundle, cfg)
        gen_before = [p.detach().numpy().copy() for p in bundle.generator_parameters()]
        disc_before = [p.detach().numpy().copy() for p in bundle.discriminator_parameters()]
        train_step(bundle, batch, cfg, opt, update_discriminator=False)
        assert params_equal(disc_before, [p.detach().numpy() for p in bundle.discriminator_parameters()])
        assert not params_equal(gen_before, [p.detach().numpy() for p in bundle.generator_parameters()])

    def test_both_disabled_is_pure_logging_pass(self, batch):
        cfg = tiny_cfg(1, learning_rate=1e-3)
        bundle = ModelBundle.initialize(cfg.net_config(2), seed=1)
        opt = OptimizerState.create(bundle, cfg)
        before = snapshot(bundle)
        _, _, record = train_step(
            bundle, batch, cfg, opt, update_discriminator=False, update_generator=False
        )
        assert params_equal(before, snapshot(bundle))
        assert record.iteration == 1
        assert set(record.losses) >= {"gen_total", "disc_total", "gen_recon_image"}

    def test_same_class_pair_rejected(self, tiny_synth):
        ds, _ = tiny_synth
        same = [(ds[0], ds[1])]
        cfg = tiny_cfg(1)
        bundle = ModelBundle.initialize(cfg.net_config(2), seed=0)
        opt = OptimizerState.create(bundle, cfg)
        with pytest.raises(ValueError, match="cross-class"):
            train_step(bundle, same, cfg, opt)

    def test_non_finite_loss_names_term(self, batch):
        cfg = tiny_cfg(1)
        bundle = ModelBundle.initialize(cfg.net_config(2), seed=0)
        with torch.no_grad():
            bundle.decoder.to_image.weight[0, 0, 0, 0] = float("nan")
        opt = OptimizerState.create(bundle, cfg)
        with pytest.raises(NonFiniteTensorError):
            train_step(bundle, batch, cfg, opt)


def randomize_params(bundle: ModelBundle, seed: int) -> None:
    """Give every parameter (biases included) a nonzero value so no gradient
    is a pure cancellation residue; keeps the Adam comparison well conditioned."""
    gen = np.random.default_rng(seed)
    with torch.no_grad():
        for _, m in bundle.named_modules_in_order():
            for p in m.parameters():
                p.copy_(torch.from_numpy(gen.normal(0, 0.05, p.shape).astype(np.float32)))


def manual_adam(params, grads, states, lr, wd, step):
    """torch.optim.Adam's documented update, replayed in float64."""
    b1, b2, eps = 0.9, 0.999, 1e-8
    for p, g in zip(params, grads):
        st = states.setdefault(
            id(p),
            {"m": np.zeros(p.shape, np.float64), "v": np.zeros(p.shape, np.float64)},
        )
        theta = p.detach().numpy().astype(np.float64)
        g64 = g.detach().numpy().astype(np.float64) + wd * theta
        st["m"] = b1 * st["m"] + (1 - b1) * g64
        st["v"] = b2 * st["v"] + (1 - b2) * g64 * g64
        denom = np.sqrt(st["v"]) / math.sqrt(1 - b2**step) + eps
        theta = theta - (lr / (1 - b1**step)) * st["m"] / denom
        with torch.no_grad():
            p.copy_(torch.from_numpy(theta.astype(np.float32)))


class TestOptimizerOracle:
    def test_single_step_matches_hand_rolled_adam(self, batch):
        cfg = tiny_cfg(1, learning_rate=1e-3, weight_decay=1e-2)
        torch_bundle = ModelBundle.initialize(cfg.net_config(2), seed=9)
        randomize_params(torch_bundle, seed=99)
        opt = OptimizerState.create(torch_bundle, cfg)
        train_step(torch_bundle, batch, cfg, opt)

        oracle = ModelBundle.initialize(cfg.net_config(2), seed=9)
        randomize_params(oracle, seed=99)
        oracle.train_mode()
        from cae.trainer import _batch_tensors

        x_a, x_b, y_a, y_b = _batch_tensors(batch)
        pf = compute_pair_forward(oracle, x_a, x_b, y_a, y_b)
        d_terms = fused_discriminator_terms(pf, oracle.discriminator)
        d_total = (
            cfg.disc_weights.adversarial * d_terms["adversarial"]
            + cfg.disc_weights.classification * d_terms["classification"]
        )
        d_params = list(oracle.discriminator_parameters())
        d_grads = torch.autograd.grad(d_total, d_params, retain_graph=False, allow_unused=False)
        manual_adam(d_params, d_grads, {}, cfg.learning_rate, cfg.weight_decay, step=1)

        g_terms = fused_generator_terms(pf, oracle.discriminator)
        gw = cfg.gen_weights
        g_total = (
            gw.recon_image * g_terms["recon_image"]
            + gw.recon_class_code * g_terms["recon_class_code"]
            + gw.recon_indiv_code * g_terms["recon_indiv_code"]
            + gw.cycle * g_terms["cycle"]
            + gw.adversarial * g_terms["adversarial"]
            + gw.classification * g_terms["classification"]
        )
        g_params = list(oracle.generator_parameters())
        g_grads = torch.autograd.grad(g_total, g_params)
        manual_adam(g_params, g_grads, {}, cfg.learning_rate, cfg.weight_decay, step=1)

        for ours, ref in zip(snapshot(torch_bundle), snapshot(oracle)):
            assert np.abs(ours - ref).max() < 1e-6

    def test_moment_state_tracks_over_steps(self):
        """Multi-step moment accumulation and bias correction on fixed
        gradient sequences, torch Adam vs the hand-rolled formula."""
        gen = np.random.default_rng(8)
        init = gen.normal(0, 0.5, size=(6,)).astype(np.float32)
        p = torch.nn.Parameter(torch.from_numpy(init.copy()))
        opt = torch.optim.Adam([p], lr=1e-3, weight_decay=1e-2)
        oracle = torch.nn.Parameter(torch.from_numpy(init.copy()))
        states: dict = {}
        for step in (1, 2, 3, 4):
            grad = torch.from_numpy(gen.normal(0, 1, size=(6,)).astype(np.float32))
            opt.zero_grad(set_to_none=True)
            p.grad = grad.clone()
            opt.step()
            manual_adam([oracle], [grad], states, 1e-3, 1e-2, step=step)
            assert np.abs(p.detach().numpy() - oracle.detach().numpy()).max() < 1e-6


class TestTrainLoop:
    def test_zero_iterations_returns_initialized_bundle(self, tiny_synth):
        ds, _ = tiny_synth
        cfg = tiny_cfg(0)
        out = train(ds, cfg)
        fresh = ModelBundle.initialize(cfg.net_config(2), seed=cfg.seed)
        assert out.iteration == 0
        assert params_equal(snapshot(out), snapshot(fresh))

    def test_zero_iterations_still_writes_checkpoint(self, tiny_synth, tmp_path):
        ds, _ = tiny_synth
        train(ds, tiny_cfg(0), out_dir=tmp_path)
        assert (tmp_path / "checkpoint_final.cae").exists()

    def test_log_records_are_monotone_and_written(self, tiny_synth, tmp_path):
        ds, _ = tiny_synth
        records = []
        train(ds, tiny_cfg(3), out_dir=tmp_path, log_callback=records.append)
        assert [r.iteration for r in records] == [1, 2, 3]
        assert all(
            records[i].wall_clock <= records[i + 1].wall_clock for i in range(2)
        )
        lines = (tmp_path / "train_log.tsv").read_text().splitlines()
        assert lines[0].startswith("iteration\t")
        assert len(lines) == 4

    def test_single_class_dataset_rejected(self, rng):
        ds = toy_dataset(rng, [4], side=16)
        with pytest.raises(ValueError, match="2 populated classes"):
            train(ds, tiny_cfg(1))

    def test_side_mismatch_rejected(self, rng):
        ds = toy_dataset(rng, [2, 2], side=32)
        with pytest.raises(ValueError, match="side"):
            train(ds, tiny_cfg(1))

    def test_checkpoint_roundtrip_is_bit_exact(self, tiny_synth, tmp_path):
        ds, _ = tiny_synth
        cfg = tiny_cfg(2)
        bundle = train(ds, cfg, out_dir=tmp_path)
        loaded, opt, rng_states = load_checkpoint(tmp_path / "checkpoint_final.cae", cfg, 2)
        assert params_equal(snapshot(bundle), snapshot(loaded))
        assert loaded.iteration == 2
        assert set(rng_states) == {"pairs", "flip"}
        from conftest import random_image
        from cae.networks import encode_class

        img = random_image(RandomStream(1))
        assert np.array_equal(
            encode_class(bundle, img).values, encode_class(loaded, img).values
        )

    def test_resume_equals_straight_run(self, tiny_synth, tmp_path):
        ds, _ = tiny_synth
        straight = train(ds, tiny_cfg(6, seed=5), out_dir=tmp_path / "straight")
        train(ds, tiny_cfg(4, seed=5), out_dir=tmp_path / "resumed")
        resumed = train(
            ds,
            tiny_cfg(6, seed=5),
            out_dir=tmp_path / "resumed",
            resume_from=tmp_path / "resumed" / "checkpoint_000004.cae",
        )
        assert params_equal(snapshot(straight), snapshot(resumed))

    def test_resume_rejects_mismatched_config(self, tiny_synth, tmp_path):
        ds, _ = tiny_synth
        train(ds, tiny_cfg(2, seed=5), out_dir=tmp_path)
        with pytest.raises(ValueError, match="different training config"):
            train(
                ds,
                tiny_cfg(4, seed=6),
                resume_from=tmp_path / "checkpoint_final.cae",
            )


class TestBalanceDataset:
    def test_full_size_is_a_permutation(self, rng):
        ds = toy_dataset(rng, [6, 6], side=16)
        out = balance_dataset(ds, 6, RandomStream(0))
        assert Counter(s.id for s in out) == Counter(s.id for s in ds)

    def test_small_class_resampled_with_replacement(self, rng):
        ds = toy_dataset(rng, [10, 3], side=16)
        out = balance_dataset(ds, 5, RandomStream(1))
        by_class = out.class_indices()
        assert len(by_class[0]) == 5 and len(by_class[1]) == 5
        base_ids = {s.id.split("~")[0] for s in out if s.label.index == 1}
        assert base_ids <= {s.id for s in ds if s.label.index == 1}

    def test_resampling_frequencies_within_three_sigma(self, rng):
        ds = toy_dataset(rng, [2, 10], side=16)
        draws = 3000  # 600 balanced picks of the 2-sample class, uniform
        counts: Counter = Counter()
        stream = RandomStream(7)
        for _ in range(draws // 10):
            out = balance_dataset(ds, 10, stream)
            for s in out:
                if s.label.index == 0:
                    counts[s.id.split("~")[0]] += 1
        n = sum(counts.values())
        sigma = (n * 0.25) ** 0.5
        for c in counts.values():
            assert abs(c - n / 2) <= 3 * sigma

    def test_rejects_empty_class(self, rng):
        ds = toy_dataset(rng, [3], side=16)
        from cae.core import Dataset

        ds = Dataset(ds.samples, class_count=2, split="train")
        with pytest.raises(ValueError, match="no samples"):
            balance_dataset(ds, 2, RandomStream(0))


def test_training_smoke_objective_decreases(tiny_synth):
    """500 tiny-scale steps reduce the generator objective (median of 3 seeds)."""
    ds, _ = tiny_synth
    firsts, lasts = [], []
    for seed in (0, 1, 2):
        cfg = tiny_cfg(500, seed=seed, learning_rate=3e-4, batch_pairs=2)
        records = []
        train(ds, cfg, log_callback=records.append)
        firsts.append(records[0].losses["gen_total"])
        lasts.append(records[-1].losses["gen_total"])
    assert np.median(lasts) < np.median(firsts)

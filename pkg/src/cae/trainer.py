"""Random-shuffling paired training: per iteration the discriminator updates
first with the encoders/decoder fixed, then the encoders/decoder update, both
via adaptive moment estimation. Includes checkpointing with bit-exact resume
and an append-only loss log.
"""

from __future__ import annotations

import hashlib
import json
import time
import zipfile
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from .core import Dataset, LabeledSample, RandomStream
from .data import horizontal_flip_maybe, pair_sampler
from .losses import (
    DiscriminatorLossWeights,
    GeneratorLossWeights,
    NonFiniteTensorError,
    compute_pair_forward,
    fused_discriminator_terms,
    fused_generator_terms,
)
from .networks import ModelBundle, NetConfig, read_bundle_entries, write_bundle_entries, zip_writestr

__all__ = [
    "TrainConfig",
    "TrainLogRecord",
    "OptimizerState",
    "train_step",
    "train",
    "balance_dataset",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "cae-checkpoint v1"


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    batch_pairs: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    seed: int = 0
    image_side: int = 64
    channels: int = 1
    code_dim: int = 8
    base_width: int = 32
    disc_width: int = 0  # 0 = same as base_width
    class_downsamples: int = 5
    flip_probability: float = 0.5
    gen_weights: GeneratorLossWeights = field(default_factory=GeneratorLossWeights)
    disc_weights: DiscriminatorLossWeights = field(default_factory=DiscriminatorLossWeights)
    checkpoint_every: int = 1000
    deterministic: bool = True

    def __post_init__(self):
        if self.iterations < 0 or self.batch_pairs < 1:
            raise ValueError("iterations must be >= 0 and batch_pairs >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be nonnegative")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")

    def net_config(self, class_count: int) -> NetConfig:
        return NetConfig(
            side=self.image_side,
            channels=self.channels,
            code_dim=self.code_dim,
            class_count=class_count,
            base_width=self.base_width,
            disc_width=self.disc_width,
            class_downsamples=self.class_downsamples,
        )

    def canonical_text(self) -> str:
        items = asdict(self)
        return "\n".join(f"{k}={items[k]!r}" for k in sorted(items)) + "\n"

    def config_hash(self) -> str:
        """Identity of the training trajectory; schedule-length fields are
        excluded so a checkpoint can be resumed toward a larger budget."""
        items = asdict(self)
        for schedule_only in ("iterations", "checkpoint_every"):
            items.pop(schedule_only)
        text = "\n".join(f"{k}={items[k]!r}" for k in sorted(items))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class TrainLogRecord:
    iteration: int
    losses: dict[str, float]
    disc_real_accuracy: float
    disc_fake_accuracy: float
    wall_clock: float


@dataclass
class OptimizerState:
    disc_opt: torch.optim.Adam
    gen_opt: torch.optim.Adam

    @staticmethod
    def create(bundle: ModelBundle, cfg: TrainConfig) -> "OptimizerState":
        return OptimizerState(
            disc_opt=torch.optim.Adam(
                list(bundle.discriminator_parameters()),
                lr=cfg.learning_rate,
                weight_decay=cfg.weight_decay,
            ),
            gen_opt=torch.optim.Adam(
                list(bundle.generator_parameters()),
                lr=cfg.learning_rate,
                weight_decay=cfg.weight_decay,
            ),
        )


def _batch_tensors(pairs: list[tuple[LabeledSample, LabeledSample]]):
    def stack(samples):
        arr = np.stack([np.transpose(s.image.data, (2, 0, 1)) for s in samples])
        return torch.from_numpy(arr.astype(np.float32))

    a = [p[0] for p in pairs]
    b = [p[1] for p in pairs]
    x_a, x_b = stack(a), stack(b)
    y_a = torch.tensor([s.label.index for s in a], dtype=torch.long)
    y_b = torch.tensor([s.label.index for s in b], dtype=torch.long)
    return x_a, x_b, y_a, y_b


def train_step(
    bundle: ModelBundle,
    pair_batch: list[tuple[LabeledSample, LabeledSample]],
    cfg: TrainConfig,
    opt_state: OptimizerState,
    update_discriminator: bool = True,
    update_generator: bool = True,
    wall_clock_origin: float | None = None,
) -> tuple[ModelBundle, OptimizerState, TrainLogRecord]:
    """One iteration: discriminator step on detached synthetics, then the
    encoder/decoder step against the refreshed discriminator. With both
    updates disabled this is a pure logging pass."""
    for a, b in pair_batch:
        if a.label.index == b.label.index:
            raise ValueError(f"pair ({a.id}, {b.id}) is not cross-class")
    bundle.train_mode()
    x_a, x_b, y_a, y_b = _batch_tensors(pair_batch)
    pf = compute_pair_forward(bundle, x_a, x_b, y_a, y_b)

    losses: dict[str, float] = {}

    d_terms = fused_discriminator_terms(pf, bundle.discriminator)
    d_total = (
        cfg.disc_weights.adversarial * d_terms["adversarial"]
        + cfg.disc_weights.classification * d_terms["classification"]
    )
    _check_terms("disc", d_terms, losses)
    losses["disc_total"] = float(d_total.detach())
    if update_discriminator:
        opt_state.disc_opt.zero_grad(set_to_none=True)
        d_total.backward()
        opt_state.disc_opt.step()

    with torch.no_grad():
        n = pf.x_a.shape[0]
        r_all, _ = bundle.discriminator(
            torch.cat([pf.cross_a, pf.cross_b, pf.x_a, pf.x_b]).detach()
        )
        fake_acc = float((r_all[: 2 * n].argmax(dim=1) == 0).float().mean())
        real_acc = float((r_all[2 * n :].argmax(dim=1) == 1).float().mean())

    g_terms = fused_generator_terms(pf, bundle.discriminator)
    gw = cfg.gen_weights
    g_total = (
        gw.recon_image * g_terms["recon_image"]
        + gw.recon_class_code * g_terms["recon_class_code"]
        + gw.recon_indiv_code * g_terms["recon_indiv_code"]
        + gw.cycle * g_terms["cycle"]
        + gw.adversarial * g_terms["adversarial"]
        + gw.classification * g_terms["classification"]
    )
    _check_terms("gen", g_terms, losses)
    losses["gen_total"] = float(g_total.detach())
    if update_generator:
        opt_state.gen_opt.zero_grad(set_to_none=True)
        g_total.backward()
        opt_state.gen_opt.step()

    bundle.iteration += 1
    record = TrainLogRecord(
        iteration=bundle.iteration,
        losses=losses,
        disc_real_accuracy=real_acc,
        disc_fake_accuracy=fake_acc,
        wall_clock=time.monotonic() - (wall_clock_origin or 0.0),
    )
    return bundle, opt_state, record


def _check_terms(prefix: str, terms: dict[str, torch.Tensor], out: dict[str, float]) -> None:
    for name, t in terms.items():
        v = float(t.detach())
        if not np.isfinite(v):
            raise NonFiniteTensorError(f"{prefix}_{name}")
        out[f"{prefix}_{name}"] = v


def _log_line(record: TrainLogRecord) -> str:
    cols = [str(record.iteration)]
    cols += [f"{record.losses[k]:.6f}" for k in sorted(record.losses)]
    cols += [f"{record.disc_real_accuracy:.4f}", f"{record.disc_fake_accuracy:.4f}",
             f"{record.wall_clock:.2f}"]
    return "\t".join(cols)


def _log_header(record: TrainLogRecord) -> str:
    cols = ["iteration"] + sorted(record.losses) + [
        "disc_real_accuracy", "disc_fake_accuracy", "wall_clock"]
    return "\t".join(cols)


def apply_determinism(enabled: bool) -> None:
    """Pin every kernel choice that could vary between runs."""
    torch.use_deterministic_algorithms(enabled)


def train(
    ds: Dataset,
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
    log_callback=None,
) -> ModelBundle:
    """Train to ``cfg.iterations``, writing checkpoints and an append-only log.

    Fully reproducible for a fixed seed when ``cfg.deterministic`` is set;
    ``resume_from`` continues bit-exactly from a saved checkpoint.
    """
    populated = sum(1 for v in ds.class_indices().values() if v)
    if populated < 2:
        raise ValueError("training needs >= 2 populated classes")
    if ds.class_count < 2:
        raise ValueError("dataset must declare >= 2 classes")
    sample_side = ds[0].image.side if len(ds) else cfg.image_side
    if sample_side != cfg.image_side:
        raise ValueError(
            f"dataset side {sample_side} != configured side {cfg.image_side}"
        )
    apply_determinism(cfg.deterministic)

    pair_rng = RandomStream(cfg.seed).child("pairs")
    flip_rng = RandomStream(cfg.seed).child("flip")
    start_iteration = 0
    if resume_from is not None:
        bundle, opt_state, rng_states = load_checkpoint(resume_from, cfg, ds.class_count)
        pair_rng.set_state(rng_states["pairs"])
        flip_rng.set_state(rng_states["flip"])
        start_iteration = bundle.iteration
    else:
        bundle = ModelBundle.initialize(cfg.net_config(ds.class_count), seed=cfg.seed)
        bundle.config_hash = cfg.config_hash()
        opt_state = OptimizerState.create(bundle, cfg)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.tsv"

    sampler = pair_sampler(ds, pair_rng)
    origin = time.monotonic()
    for iteration in range(start_iteration, cfg.iterations):
        batch = []
        for _ in range(cfg.batch_pairs):
            a, b = next(sampler)
            a = LabeledSample(a.id, horizontal_flip_maybe(a.image, cfg.flip_probability, flip_rng), a.label)
            b = LabeledSample(b.id, horizontal_flip_maybe(b.image, cfg.flip_probability, flip_rng), b.label)
            batch.append((a, b))
        bundle, opt_state, record = train_step(
            bundle, batch, cfg, opt_state, wall_clock_origin=origin
        )
        if log_path is not None:
            header = _log_header(record) + "\n" if not log_path.exists() else ""
            with open(log_path, "a") as fh:
                fh.write(header + _log_line(record) + "\n")
        if log_callback is not None:
            log_callback(record)
        if out_dir is not None and (
            record.iteration % cfg.checkpoint_every == 0 or record.iteration == cfg.iterations
        ):
            save_checkpoint(
                out_dir / f"checkpoint_{record.iteration:06d}.cae",
                bundle, opt_state, cfg,
                {"pairs": pair_rng.get_state(), "flip": flip_rng.get_state()},
            )
    if out_dir is not None:
        save_checkpoint(
            out_dir / "checkpoint_final.cae",
            bundle, opt_state, cfg,
            {"pairs": pair_rng.get_state(), "flip": flip_rng.get_state()},
        )
    return bundle


def balance_dataset(ds: Dataset, per_class: int, rng: RandomStream) -> Dataset:
    """Uniform per-class subsample to exact counts; a class smaller than
    ``per_class`` is resampled with replacement. Duplicate picks get suffixed
    ids to keep ids unique."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    chosen: list[LabeledSample] = []
    for k, indices in sorted(ds.class_indices().items()):
        if not indices:
            raise ValueError(f"class {k} has no samples")
        if len(indices) >= per_class:
            order = rng.permutation(len(indices))[:per_class]
            picks = [indices[int(i)] for i in order]
        else:
            picks = [indices[int(i)] for i in rng.integers(0, len(indices), size=per_class)]
        seen: dict[str, int] = {}
        for i in picks:
            s = ds[i]
            n = seen.get(s.id, 0)
            seen[s.id] = n + 1
            sid = s.id if n == 0 else f"{s.id}~{n}"
            chosen.append(LabeledSample(sid, s.image, s.label))
    return Dataset(tuple(chosen), ds.class_count, ds.split, ds.class_names)


# --- checkpoint archive --------------------------------------------------
# One zip: the model-bundle entries, optimizer moments as raw float32 blobs in
# parameter order, step counts, the training config text + hash, rng states.

def _opt_entries(opt: torch.optim.Adam, prefix: str):
    params = [p for g in opt.param_groups for p in g["params"]]
    for i, p in enumerate(params):
        state = opt.state.get(p, {})
        yield f"{prefix}/{i:04d}", p, state


def save_checkpoint(
    path: str | Path,
    bundle: ModelBundle,
    opt_state: OptimizerState,
    cfg: TrainConfig,
    rng_states: dict[str, dict],
) -> None:
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        zip_writestr(zf, "checkpoint_format", CHECKPOINT_FORMAT)
        write_bundle_entries(zf, bundle)
        zip_writestr(zf, "train_config", cfg.canonical_text())
        zip_writestr(zf, "config_hash", cfg.config_hash())
        zip_writestr(zf, "rng_states", json.dumps(rng_states))
        steps: dict[str, float] = {}
        for prefix, opt in (("opt/disc", opt_state.disc_opt), ("opt/gen", opt_state.gen_opt)):
            for key, p, state in _opt_entries(opt, prefix):
                if not state:
                    continue
                steps[key] = float(state["step"])
                zip_writestr(zf, f"{key}.exp_avg", state["exp_avg"].numpy().astype("<f4").tobytes())
                zip_writestr(
                    zf, f"{key}.exp_avg_sq", state["exp_avg_sq"].numpy().astype("<f4").tobytes()
                )
        zip_writestr(zf, "opt/steps", json.dumps(steps))


def load_checkpoint(
    path: str | Path, cfg: TrainConfig | None = None, class_count: int | None = None
) -> tuple[ModelBundle, OptimizerState, dict[str, dict]]:
    with zipfile.ZipFile(path, "r") as zf:
        if zf.read("checkpoint_format").decode() != CHECKPOINT_FORMAT:
            raise ValueError("unsupported checkpoint format")
        bundle = read_bundle_entries(zf)
        if class_count is not None and bundle.config.class_count != class_count:
            raise ValueError(
                f"checkpoint expects {bundle.config.class_count} classes, dataset has {class_count}"
            )
        stored_hash = zf.read("config_hash").decode()
        if cfg is not None and cfg.config_hash() != stored_hash:
            raise ValueError(
                "checkpoint was produced by a different training config "
                f"(hash {stored_hash} != {cfg.config_hash()})"
            )
        if cfg is None:
            cfg = _config_from_text(zf.read("train_config").decode())
        rng_states = json.loads(zf.read("rng_states").decode())
        opt_state = OptimizerState.create(bundle, cfg)
        steps = json.loads(zf.read("opt/steps").decode())
        for prefix, opt in (("opt/disc", opt_state.disc_opt), ("opt/gen", opt_state.gen_opt)):
            for key, p, _ in _opt_entries(opt, prefix):
                if key not in steps:
                    continue
                exp_avg = np.frombuffer(zf.read(f"{key}.exp_avg"), dtype="<f4").reshape(p.shape)
                exp_avg_sq = np.frombuffer(
                    zf.read(f"{key}.exp_avg_sq"), dtype="<f4"
                ).reshape(p.shape)
                opt.state[p] = {
                    "step": torch.tensor(steps[key]),
                    "exp_avg": torch.from_numpy(exp_avg.copy()),
                    "exp_avg_sq": torch.from_numpy(exp_avg_sq.copy()),
                }
    return bundle, opt_state, rng_states


def _config_from_text(text: str) -> TrainConfig:
    import ast

    kv = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        k, v = line.split("=", 1)
        kv[k] = ast.literal_eval(v)
    kv["gen_weights"] = GeneratorLossWeights(**kv["gen_weights"])
    kv["disc_weights"] = DiscriminatorLossWeights(**kv["disc_weights"])
    return TrainConfig(**kv)

"""Desk-scale experiment orchestration: synthetic benchmark -> embedding model
+ probe classifier -> code table. Shared by the experiment script and the
acceptance suite.

Completed runs are cached under ``<out_dir>/<config hash>`` keyed by the full
configuration; delete the directory to force a fresh run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .core import Dataset, RandomStream
from .manifold import CodeTable, extract_codes, load_code_table, save_code_table
from .networks import ModelBundle
from .probe import ProbeClassifier, ProbeConfig, load_probe, save_probe, train_probe
from .synth import GroundTruthMask, LesionSpec, generate_dataset
from .trainer import TrainConfig, load_checkpoint, train

__all__ = ["DeskRunConfig", "DeskRunArtifacts", "run_desk_experiment"]


@dataclass(frozen=True)
class DeskRunConfig:
    side: int = 64
    n_train_per_class: int = 2000
    n_test_per_class: int = 250
    lesion_kind: str = "double_blob"
    lesion_intensity: float = 0.9
    lesion_size_fraction: float = 0.16
    data_seed: int = 7
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            iterations=1500,
            batch_pairs=8,
            base_width=12,
            disc_width=6,
            seed=0,
            checkpoint_every=500,
        )
    )
    # heavy-ish probe: the black box under explanation should dominate the
    # per-query cost, as it does at paper scale
    probe: ProbeConfig = field(default_factory=lambda: ProbeConfig(width=128, epochs=4, seed=1))

    def config_hash(self) -> str:
        text = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class DeskRunArtifacts:
    config: DeskRunConfig
    train_ds: Dataset
    test_ds: Dataset
    train_masks: dict[str, GroundTruthMask]
    test_masks: dict[str, GroundTruthMask]
    bundle: ModelBundle
    probe: ProbeClassifier
    table: CodeTable  # codes of the test set
    cache_dir: Path


def _generate_splits(cfg: DeskRunConfig):
    specs = [
        LesionSpec(kind="none"),
        LesionSpec(
            kind=cfg.lesion_kind,
            intensity=cfg.lesion_intensity,
            size_fraction=cfg.lesion_size_fraction,
        ),
    ]
    rng = RandomStream(cfg.data_seed)
    train_ds, train_masks = generate_dataset(
        specs, cfg.n_train_per_class, cfg.side, rng.child("train"), split="train"
    )
    test_ds, test_masks = generate_dataset(
        specs, cfg.n_test_per_class, cfg.side, rng.child("test"), split="test"
    )
    return train_ds, train_masks, test_ds, test_masks


def run_desk_experiment(
    cfg: DeskRunConfig, out_dir: str | Path, log_callback=None
) -> DeskRunArtifacts:
    """Generate data, train the embedding model and the probe, extract codes.

    Data generation is deterministic per config, so only the two trained
    models and the code table are cached.
    """
    cache = Path(out_dir) / cfg.config_hash()
    cache.mkdir(parents=True, exist_ok=True)
    train_ds, train_masks, test_ds, test_masks = _generate_splits(cfg)

    ckpt = cache / "checkpoint_final.cae"
    if ckpt.exists():
        bundle, _, _ = load_checkpoint(ckpt)
    else:
        bundle = train(train_ds, cfg.train, out_dir=cache, log_callback=log_callback)

    probe_path = cache / "probe.cae"
    if probe_path.exists():
        probe = load_probe(probe_path)
    else:
        probe_cfg = ProbeConfig(
            side=cfg.side,
            channels=cfg.probe.channels,
            class_count=train_ds.class_count,
            width=cfg.probe.width,
            learning_rate=cfg.probe.learning_rate,
            epochs=cfg.probe.epochs,
            batch_size=cfg.probe.batch_size,
            seed=cfg.probe.seed,
        )
        probe = train_probe(train_ds, probe_cfg)
        save_probe(probe, probe_path)

    table_path = cache / "test_codes.tsv"
    if table_path.exists():
        table = load_code_table(table_path)
        if table.model_hash != bundle.model_hash():
            table = extract_codes(bundle, test_ds)
            save_code_table(table, table_path)
    else:
        table = extract_codes(bundle, test_ds)
        save_code_table(table, table_path)

    return DeskRunArtifacts(
        config=cfg,
        train_ds=train_ds,
        test_ds=test_ds,
        train_masks=train_masks,
        test_masks=test_masks,
        bundle=bundle,
        probe=probe,
        table=table,
        cache_dir=cache,
    )

"""Command-line entry points: synth-data, train, encode, analyze, audit,
explain, bench, serve. Bad flags exit 2 (argparse usage), runtime failures
exit 1 with a diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .core import RandomStream

__all__ = ["main", "build_parser"]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="key=value config file")
    p.add_argument("--side", type=int, default=None, dest="image_side")
    p.add_argument("--code-dim", type=int, default=None, dest="code_dim")
    p.add_argument("--base-width", type=int, default=None, dest="base_width")
    p.add_argument("--seed", type=int, default=None, dest="seed")


def _app_config(args, **extra):
    from .config import AppConfig, load_config

    overrides = {
        k: getattr(args, k, None)
        for k in ("image_side", "code_dim", "base_width", "seed")
    }
    overrides.update(extra)
    if args.config is not None:
        return load_config(args.config, overrides)
    cfg = AppConfig()
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg


def _load_classifier(spec: str, bundle=None):
    from .explain import CommandClassifier, DiscriminatorClassifier, HttpClassifier
    from .probe import load_probe

    if spec == "discriminator":
        if bundle is None:
            raise ValueError("discriminator classifier needs a loaded model")
        return DiscriminatorClassifier(bundle)
    kind, _, rest = spec.partition(":")
    if kind == "probe":
        return load_probe(rest)
    if kind == "cmd":
        if bundle is None:
            raise ValueError("cmd classifier needs a loaded model for class count")
        return CommandClassifier(rest, class_count=bundle.config.class_count)
    if kind == "http":
        if bundle is None:
            raise ValueError("http classifier needs a loaded model for class count")
        return HttpClassifier(rest, class_count=bundle.config.class_count)
    raise ValueError(f"unknown classifier spec {spec!r}")


def cmd_synth_data(args) -> int:
    from .synth import LesionSpec, generate_dataset, write_dataset

    specs = [
        LesionSpec(kind=k, intensity=args.intensity, size_fraction=args.size_fraction)
        if k != "none"
        else LesionSpec(kind="none")
        for k in args.classes.split(",")
    ]
    rng = RandomStream(args.seed if args.seed is not None else 0)
    by_name = {s.kind: s for s in specs}
    for split, n in (("train", args.n_per_class), ("test", args.test_n_per_class)):
        if n == 0:
            continue
        ds, masks = generate_dataset(specs, n, args.side, rng.child(split), split=split)
        write_dataset(args.out, ds, masks, by_name)
    print(f"wrote synthetic dataset under {args.out}")
    return 0


def cmd_train(args) -> int:
    from .data import load_dataset
    from .trainer import train

    cfg = _app_config(args, iterations=args.iterations, dataset_root=str(args.data))
    tc = cfg.train_config()
    ds = load_dataset(Path(cfg.dataset_root) / "train", side=tc.image_side, split="train")
    bundle = train(ds, tc, out_dir=args.out, resume_from=args.resume)
    print(f"trained to iteration {bundle.iteration}; checkpoints under {args.out}")
    return 0


def cmd_encode(args) -> int:
    from .data import load_dataset
    from .manifold import extract_codes, save_code_table
    from .trainer import load_checkpoint

    bundle, _, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(Path(args.data) / args.split, side=bundle.config.side, split=args.split)
    table = extract_codes(bundle, ds)
    save_code_table(table, args.out)
    print(f"wrote {len(table)} codes to {args.out}")
    return 0


def cmd_analyze(args) -> int:
    from .manifold import fit_pca, load_code_table, save_projection, separability_report

    table = load_code_table(args.codes)
    model = fit_pca(table, k=args.k)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_projection(model, out_dir / "projection.txt", model_hash=table.model_hash)
    report = separability_report(table)
    payload = {
        "silhouette": report.silhouette,
        "probe_accuracy": report.probe_accuracy,
        "fold_accuracies": list(report.fold_accuracies),
        "variance_fractions": [float(v) for v in model.variance_fractions],
    }
    (out_dir / "separability.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(json.dumps(payload, indent=2))
    return 0


def cmd_audit(args) -> int:
    from .data import load_dataset
    from .explain import swap_audit
    from .manifold import continuity_audit, extract_codes, pervasiveness_audit
    from .trainer import load_checkpoint

    bundle, _, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(Path(args.data) / args.split, side=bundle.config.side, split=args.split)
    classifier = _load_classifier(args.classifier, bundle)
    rng = RandomStream(args.seed if args.seed is not None else 0)
    payload: dict = {"kind": args.kind}
    if args.kind == "swap":
        report = swap_audit(bundle, ds, classifier, rng, max_per_class=args.max_per_class)
        payload["rates"] = {f"{src}->{dst}": rate for (src, dst), rate in report.rates.items()}
        payload["overall"] = report.overall
    elif args.kind == "continuity":
        table = extract_codes(bundle, ds)
        ratios = continuity_audit(bundle, table, ds, classifier, n_new=args.n_new, rng=rng)
        payload["ratios"] = {str(k): v for k, v in ratios.items()}
    elif args.kind == "pervasiveness":
        table = extract_codes(bundle, ds)
        payload["ratio"] = pervasiveness_audit(
            bundle, table, ds, classifier,
            combos_per_code=args.combos_per_code, rng=rng, max_codes=args.max_codes,
        )
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    print(json.dumps(payload, indent=2))
    return 0


def cmd_explain(args) -> int:
    from .data import load_dataset
    from .explain import saliency_map, save_saliency_outputs, series_to_destination
    from .manifold import extract_codes
    from .trainer import load_checkpoint

    bundle, _, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(Path(args.data) / args.split, side=bundle.config.side, split=args.split)
    classifier = _load_classifier(args.classifier, bundle)
    source = ds.by_id(args.sample)
    table = extract_codes(bundle, ds)
    if args.destination_class is not None:
        names = list(ds.class_names or [])
        if args.destination_class not in names:
            raise ValueError(f"unknown class {args.destination_class!r}")
        dest_class = names.index(args.destination_class)
    else:
        present = sorted(set(int(v) for v in np.unique(table.labels)))
        dest_class = next(k for k in present if k != source.label.index)
    dest_code = table.class_centroid(dest_class)
    series = series_to_destination(
        bundle, source, dest_code, dest_class, classifier, n_steps=args.n_steps
    )
    result = saliency_map(series, weighting=args.weighting)
    paths = save_saliency_outputs(result, series, args.out, stem=args.sample.replace("/", "_"))
    print(json.dumps({k: str(v) for k, v in paths.items()}, indent=2))
    return 0


def cmd_bench(args) -> int:
    from .data import load_dataset
    from .explain import cost_benchmark
    from .manifold import extract_codes
    from .trainer import load_checkpoint

    bundle, _, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(Path(args.data) / args.split, side=bundle.config.side, split=args.split)
    classifier = _load_classifier(args.classifier, bundle)
    table = extract_codes(bundle, ds)
    rng = RandomStream(args.seed if args.seed is not None else 0)
    picks = rng.permutation(len(ds))[: args.cases]
    samples = [ds[int(i)] for i in picks]
    report = cost_benchmark(bundle, table, classifier, samples, n_steps=args.n_steps)
    payload = {
        "cases": len(samples),
        "cae_median_s": report.cae_median,
        "occlusion_median_s": report.occlusion_median,
        "ratio": report.ratio,
    }
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    print(json.dumps(payload, indent=2))
    return 0


def cmd_serve(args) -> int:
    from .data import load_dataset
    from .manifold import load_code_table
    from .service import build_session, serve
    from .trainer import load_checkpoint

    bundle, _, _ = load_checkpoint(args.checkpoint)
    ds = load_dataset(Path(args.data) / args.split, side=bundle.config.side, split=args.split)
    classifier = _load_classifier(args.classifier, bundle)
    table = load_code_table(args.codes) if args.codes else None
    state = build_session(bundle, ds, classifier, table=table)
    print(f"serving model {state.model_hash} on port {args.port}")
    serve(state, port=args.port, static_dir=args.static_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cae",
        description="Class association embedding: train, analyze, and explain.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic benchmark")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--classes", default="none,blob")
    p.add_argument("--n-per-class", type=int, default=2000)
    p.add_argument("--test-n-per-class", type=int, default=250)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--intensity", type=float, default=0.8)
    p.add_argument("--size-fraction", type=float, default=0.12)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the embedding model")
    p.add_argument("--data", type=Path, required=True, help="dataset root (with train/)")
    p.add_argument("--out", type=Path, required=True, help="checkpoint directory")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--resume", type=Path, default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="extract class-style codes to a table")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="dataset root (with train/ and test/)")
    p.add_argument("--split", default="test")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("analyze", help="PCA projection + separability report")
    p.add_argument("--codes", type=Path, required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("audit", help="swap / continuity / pervasiveness audits")
    p.add_argument("--kind", choices=("swap", "continuity", "pervasiveness"), required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--classifier", default="discriminator")
    p.add_argument("--n-new", type=int, default=2000)
    p.add_argument("--combos-per-code", type=int, default=10)
    p.add_argument("--max-codes", type=int, default=None)
    p.add_argument("--max-per-class", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("explain", help="counterfactual series + saliency for one sample")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--sample", required=True, help="sample id, e.g. blob/test-00007")
    p.add_argument("--classifier", default="discriminator")
    p.add_argument("--destination-class", default=None)
    p.add_argument("--n-steps", type=int, default=10)
    p.add_argument("--weighting", choices=("prob_delta", "endpoint_contrast"), default="prob_delta")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("bench", help="guided-path vs occlusion timing")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--classifier", default="discriminator")
    p.add_argument("--cases", type=int, default=10)
    p.add_argument("--n-steps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--codes", type=Path, default=None)
    p.add_argument("--classifier", default="discriminator")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static-dir", default=None, help="serve a built UI from this directory")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # runtime failures -> exit 1 with diagnostic
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

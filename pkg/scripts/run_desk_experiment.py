"""Full desk-scale experiment: synthetic benchmark -> embedding model + probe
-> every audit and the timing benchmark, with a printed report.

Artifacts are cached under --out keyed by the configuration hash; delete the
directory for a fresh run.
"""

import argparse
import json
import time
from pathlib import Path

from cae.core import RandomStream
from cae.explain import cost_benchmark, occlusion_baseline, saliency_map, series_to_destination, swap_audit
from cae.manifold import continuity_audit, pervasiveness_audit, separability_report
from cae.pipeline import DeskRunConfig, run_desk_experiment
from cae.trainer import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("artifacts/desk"))
    ap.add_argument("--iterations", type=int, default=None)
    ap.add_argument("--n-train", type=int, default=None)
    ap.add_argument("--n-test", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--saliency-cases", type=int, default=50)
    ap.add_argument("--bench-cases", type=int, default=10)
    args = ap.parse_args()

    from dataclasses import replace

    cfg = DeskRunConfig()
    train_kw = {}
    if args.iterations is not None:
        train_kw["iterations"] = args.iterations
    if args.seed is not None:
        train_kw["seed"] = args.seed
    if train_kw:
        cfg = replace(cfg, train=replace(cfg.train, **train_kw))
    if args.n_train is not None:
        cfg = replace(cfg, n_train_per_class=args.n_train)
    if args.n_test is not None:
        cfg = replace(cfg, n_test_per_class=args.n_test)

    t0 = time.time()

    def tick(msg):
        print(f"[{time.time() - t0:8.1f}s] {msg}", flush=True)

    def cb(rec):
        if rec.iteration % 100 == 0:
            tick(
                f"iter {rec.iteration:5d} gen={rec.losses['gen_total']:.3f} "
                f"disc={rec.losses['disc_total']:.3f} "
                f"D(r/f)={rec.disc_real_accuracy:.2f}/{rec.disc_fake_accuracy:.2f}"
            )

    tick(f"desk run {cfg.config_hash()} -> {args.out}")
    art = run_desk_experiment(cfg, args.out, log_callback=cb)
    tick(f"model ready (iteration {art.bundle.iteration})")
    tick(f"probe accuracy on test: {art.probe.accuracy(art.test_ds):.4f}")

    report = {}
    rng = RandomStream(2024)
    swap = swap_audit(art.bundle, art.test_ds, art.probe, rng.child("swap"))
    report["swap"] = {f"{s}->{d}": r for (s, d), r in swap.rates.items()}
    report["swap_overall"] = swap.overall
    tick(f"swap audit: {report['swap']}")

    cont = continuity_audit(
        art.bundle, art.table, art.test_ds, art.probe, n_new=2000, rng=rng.child("cont")
    )
    report["continuity"] = {art.test_ds.class_name(k): v for k, v in cont.items()}
    tick(f"continuity audit: {report['continuity']}")

    perv = pervasiveness_audit(
        art.bundle, art.table, art.test_ds, art.probe,
        combos_per_code=10, rng=rng.child("perv"), max_codes=100,
    )
    report["pervasiveness"] = perv
    tick(f"pervasiveness audit: {perv:.4f}")

    sep = separability_report(art.table)
    report["separability"] = {
        "silhouette": sep.silhouette, "probe_accuracy": sep.probe_accuracy,
    }
    tick(f"separability: {report['separability']}")

    # saliency localization on lesioned test samples
    lesion_class = art.test_ds.class_names.index("blob")
    none_class = art.test_ds.class_names.index("none")
    dest = art.table.class_centroid(none_class)
    samples = [s for s in art.test_ds if s.label.index == lesion_class][: args.saliency_cases]
    cae_fracs, occ_fracs, mask_fracs = [], [], []
    for s in samples:
        mask = art.test_masks[s.id].mask.astype(bool)
        series = series_to_destination(art.bundle, s, dest, none_class, art.probe)
        sal = saliency_map(series).saliency
        occ = occlusion_baseline(s.image, art.probe)
        total, inside = sal.sum(), sal[mask].sum()
        cae_fracs.append(inside / total if total > 0 else 0.0)
        occ_total, occ_inside = occ.sum(), occ[mask].sum()
        occ_fracs.append(occ_inside / occ_total if occ_total > 0 else 0.0)
        mask_fracs.append(mask.mean())
    import numpy as np

    report["saliency"] = {
        "cases": len(samples),
        "mean_mass_in_mask": float(np.mean(cae_fracs)),
        "mean_mask_area_fraction": float(np.mean(mask_fracs)),
        "gain_over_uniform": float(np.mean(cae_fracs) / np.mean(mask_fracs)),
        "beats_occlusion_fraction": float(np.mean(np.array(cae_fracs) > np.array(occ_fracs))),
    }
    tick(f"saliency localization: {report['saliency']}")

    bench_samples = [s for s in art.test_ds][: args.bench_cases]
    cost = cost_benchmark(art.bundle, art.table, art.probe, bench_samples)
    report["cost"] = {
        "cae_median_s": cost.cae_median,
        "occlusion_median_s": cost.occlusion_median,
        "ratio": cost.ratio,
    }
    tick(f"cost: {report['cost']}")

    out = art.cache_dir / "desk_report.json"
    out.write_text(json.dumps(report, indent=2) + "\n")
    tick(f"report written to {out}")


if __name__ == "__main__":
    main()

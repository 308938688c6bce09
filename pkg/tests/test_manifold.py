import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cae.core import ClassStyleCode, RandomStream
from cae.manifold import (
    CodeTable,
    build_path,
    continuity_audit,
    extract_codes,
    fit_pca,
    load_code_table,
    load_projection,
    pervasiveness_audit,
    save_code_table,
    save_projection,
    separability_report,
    smote_resample,
)
from conftest import toy_dataset


def make_table(codes: np.ndarray, labels, class_count=2, model_hash="h") -> CodeTable:
    codes = np.asarray(codes, dtype=np.float32)
    return CodeTable(
        ids=tuple(f"s{i}" for i in range(codes.shape[0])),
        labels=np.asarray(labels, dtype=np.int64),
        codes=codes,
        class_count=class_count,
        model_hash=model_hash,
        code_dim=codes.shape[1],
    )


class TestExtractCodes:
    def test_empty_dataset_gives_empty_table(self, tiny_bundle, rng):
        ds = toy_dataset(rng, [0, 0], side=16)
        table = extract_codes(tiny_bundle, ds)
        assert len(table) == 0
        assert table.code_dim == 4

    def test_duplicate_image_gives_identical_codes(self, tiny_bundle, rng):
        from cae.core import ClassLabel, Dataset, LabeledSample
        from conftest import random_image

        img = random_image(rng)
        ds = Dataset(
            (
                LabeledSample("a", img, ClassLabel(0, 2)),
                LabeledSample("b", img, ClassLabel(1, 2)),
            ),
            2,
            "test",
        )
        table = extract_codes(tiny_bundle, ds)
        assert np.array_equal(table.codes[0], table.codes[1])

    def test_side_mismatch_rejected(self, tiny_bundle, rng):
        ds = toy_dataset(rng, [1, 1], side=32)
        with pytest.raises(ValueError, match="side"):
            extract_codes(tiny_bundle, ds)

    def test_tsv_roundtrip_reproduces_values(self, tiny_bundle, rng, tmp_path):
        ds = toy_dataset(rng, [3, 3], side=16)
        table = extract_codes(tiny_bundle, ds)
        path = tmp_path / "codes.tsv"
        save_code_table(table, path)
        loaded = load_code_table(path)
        assert loaded.ids == table.ids
        assert np.array_equal(loaded.labels, table.labels)
        assert loaded.model_hash == table.model_hash
        assert np.abs(loaded.codes - table.codes).max() < 1e-7


class TestPca:
    def test_line_cloud_puts_variance_on_first_axis(self):
        gen = np.random.default_rng(0)
        t = gen.normal(size=(200, 1))
        direction = np.ones((1, 8)) / np.sqrt(8)
        table = make_table(t @ direction + 3.0, [0] * 200)
        model = fit_pca(table, k=2)
        assert model.variance_fractions[0] > 0.999
        assert np.abs(np.abs(model.axes[0] @ direction[0]) - 1.0) < 1e-6

    def test_isotropic_cloud_has_roughly_equal_fractions(self):
        gen = np.random.default_rng(1)
        table = make_table(gen.normal(size=(4000, 4)), [0] * 4000)
        model = fit_pca(table, k=4)
        assert model.variance_fractions.max() - model.variance_fractions.min() < 0.05

    def test_full_rank_projection_is_lossless(self):
        gen = np.random.default_rng(2)
        codes = gen.normal(size=(50, 5)).astype(np.float32)
        table = make_table(codes, [0] * 50)
        model = fit_pca(table, k=5)
        back = model.back_project(model.project(codes))
        assert np.abs(back - codes).max() < 1e-6

    def test_axes_orthonormal_and_fractions_sorted(self):
        gen = np.random.default_rng(3)
        codes = gen.normal(size=(100, 6)) * np.array([5, 3, 2, 1, 0.5, 0.1])
        table = make_table(codes, [0] * 100)
        model = fit_pca(table, k=4)
        gram = model.axes @ model.axes.T
        assert np.abs(gram - np.eye(4)).max() < 1e-8
        assert all(np.diff(model.variance_fractions) <= 1e-12)

    def test_degenerate_covariance_reports_zero_fractions(self):
        table = make_table(np.ones((10, 3)), [0] * 10)
        model = fit_pca(table, k=2)
        assert np.allclose(model.variance_fractions, 0.0)

    def test_projection_never_increases_variance(self):
        gen = np.random.default_rng(4)
        codes = gen.normal(size=(300, 6))
        table = make_table(codes, [0] * 300)
        model = fit_pca(table, k=3)
        back = model.back_project(model.project(codes))
        assert back.var(axis=0).sum() <= codes.var(axis=0).sum() + 1e-9

    def test_k_bounds(self):
        table = make_table(np.zeros((3, 4)), [0, 0, 0])
        with pytest.raises(ValueError):
            fit_pca(table, k=5)
        with pytest.raises(ValueError):
            fit_pca(table, k=0)

    def test_projection_file_roundtrip(self, tmp_path):
        gen = np.random.default_rng(5)
        table = make_table(gen.normal(size=(40, 4)), [0] * 40)
        model = fit_pca(table, k=2)
        path = tmp_path / "projection.txt"
        save_projection(model, path, model_hash="mh")
        loaded, mh = load_projection(path)
        assert mh == "mh"
        assert np.array_equal(loaded.mean, model.mean)
        assert np.array_equal(loaded.axes, model.axes)
        assert np.array_equal(loaded.variance_fractions, model.variance_fractions)


class TestSmote:
    def test_identical_codes_resample_to_themselves(self, rng):
        codes = np.tile(np.array([[1.0, 2.0, 3.0]], np.float32), (4, 1))
        table = make_table(codes, [0, 0, 0, 0], class_count=1)
        out = smote_resample(table, 0, 10, rng)
        for c in out:
            assert np.allclose(c.values, [1.0, 2.0, 3.0])

    def test_singleton_class_rejected(self, rng):
        table = make_table(np.zeros((3, 2)), [0, 1, 1])
        with pytest.raises(ValueError, match=">= 2 rows"):
            smote_resample(table, 0, 5, rng)

    def test_outputs_inside_class_bounding_box(self, rng):
        gen = np.random.default_rng(6)
        codes = gen.normal(size=(30, 4))
        labels = [0] * 15 + [1] * 15
        table = make_table(codes, labels)
        out = smote_resample(table, 1, 200, rng)
        box_lo = codes[15:].min(axis=0) - 1e-9
        box_hi = codes[15:].max(axis=0) + 1e-9
        for c in out:
            assert np.all(c.values >= box_lo) and np.all(c.values <= box_hi)

    def test_outputs_are_convex_combinations_of_class_rows(self, rng):
        gen = np.random.default_rng(7)
        codes = gen.normal(size=(6, 3))
        table = make_table(codes, [0] * 6, class_count=1)
        out = smote_resample(table, 0, 50, rng)
        rows = table.codes.astype(np.float64)
        for c in out:
            found = False
            for i in range(len(rows)):
                for j in range(len(rows)):
                    if i == j:
                        continue
                    diff = rows[j] - rows[i]
                    mask = np.abs(diff) > 1e-12
                    if not mask.any():
                        found = found or np.allclose(c.values, rows[i], atol=1e-9)
                        continue
                    u = (np.asarray(c.values, np.float64) - rows[i])[mask] / diff[mask]
                    if u.size and np.all(np.abs(u - u[0]) < 1e-9) and -1e-9 <= u[0] <= 1 + 1e-9:
                        recon = rows[i] + u[0] * diff
                        if np.abs(recon - c.values).max() < 1e-9:
                            found = True
                if found:
                    break
            assert found, f"{c.values} is not on any segment between class rows"


class TestBuildPath:
    def test_two_steps_is_start_end(self):
        p = build_path(np.array([0.0, 1.0]), np.array([2.0, 3.0]), 2)
        pts = p.points()
        assert np.array_equal(pts[0], [0.0, 1.0])
        assert np.array_equal(pts[1], [2.0, 3.0])

    def test_equal_endpoints_all_identical(self):
        v = np.array([0.5, -0.5, 1.5])
        pts = build_path(v, v, 5).points()
        assert np.array_equal(pts, np.tile(v, (5, 1)))

    def test_midpoint_exact(self):
        gen = np.random.default_rng(8)
        a, b = gen.normal(size=4), gen.normal(size=4)
        pts = build_path(a, b, 3).points()
        assert np.array_equal(pts[1], (a + b) / 2)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="equal-length"):
            build_path(np.zeros(3), np.zeros(4), 5)

    def test_n_steps_minimum(self):
        with pytest.raises(ValueError, match="n_steps"):
            build_path(np.zeros(2), np.ones(2), 1)

    @given(n=st.integers(2, 12), seed=st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_points_stay_within_segment(self, n, seed):
        gen = np.random.default_rng(seed)
        a, b = gen.normal(size=5), gen.normal(size=5)
        pts = build_path(a, b, n).points()
        lo, hi = np.minimum(a, b) - 1e-12, np.maximum(a, b) + 1e-12
        assert np.all(pts >= lo) and np.all(pts <= hi)
        assert np.array_equal(pts[0], a) and np.array_equal(pts[-1], b)


class TestSeparability:
    def test_two_far_clusters(self):
        gen = np.random.default_rng(9)
        a = gen.normal(0, 0.1, size=(40, 4))
        b = gen.normal(0, 0.1, size=(40, 4)) + 10.0
        table = make_table(np.vstack([a, b]), [0] * 40 + [1] * 40)
        rep = separability_report(table)
        assert rep.silhouette > 0.9
        assert rep.probe_accuracy == 1.0

    def test_shuffled_labels_score_near_chance(self):
        gen = np.random.default_rng(10)
        codes = np.vstack(
            [gen.normal(0, 0.1, size=(60, 4)), gen.normal(0, 0.1, size=(60, 4)) + 5]
        )
        labels = np.array([0] * 60 + [1] * 60)
        gen.shuffle(labels)
        rep = separability_report(make_table(codes, labels))
        assert abs(rep.probe_accuracy - 0.5) < 0.15

    def test_single_class_rejected(self):
        table = make_table(np.zeros((10, 2)), [0] * 10)
        with pytest.raises(ValueError, match=">= 2"):
            separability_report(table)


class TestAudits:
    @pytest.fixture
    def trained_free_setup(self, tiny_bundle, tiny_synth):
        ds, _ = tiny_synth
        table = extract_codes(tiny_bundle, ds)
        return tiny_bundle, table, ds

    def test_continuity_zero_codes_is_empty_report(self, trained_free_setup, rng):
        bundle, table, ds = trained_free_setup

        class Always0:
            class_count = 2

            def classify(self, image):
                return np.array([1.0, 0.0])

        assert continuity_audit(bundle, table, ds, Always0(), 0, rng) == {}

    def test_continuity_oracle_classifier_gives_perfect_ratio(self, trained_free_setup, rng):
        bundle, table, ds = trained_free_setup

        calls = []

        class Oracle:
            class_count = 2

            def classify_batch(self, images):
                calls.append(len(images))
                return np.tile([0.0, 1.0], (len(images), 1))

            def classify(self, image):
                return np.array([0.0, 1.0])

        ratios = continuity_audit(bundle, table, ds, Oracle(), 8, rng)
        # the always-class-1 classifier is right exactly for class 1
        assert ratios[1] == 1.0
        assert ratios[0] == 0.0
        assert sum(calls) == 16

    def test_untrained_bundle_continuity_near_chance(self, trained_free_setup, rng):
        """With an untrained model the probe sees decoder noise; rates should
        not be systematically perfect across classes."""
        bundle, table, ds = trained_free_setup

        gen = np.random.default_rng(3)

        class Random:
            class_count = 2

            def classify(self, image):
                p = gen.uniform(0.2, 0.8)
                return np.array([p, 1 - p])

        ratios = continuity_audit(bundle, table, ds, Random(), 40, rng)
        for ratio in ratios.values():
            assert abs(ratio - 0.5) < 0.3

    def test_pervasiveness_donor_count_precondition(self, trained_free_setup, rng):
        bundle, table, ds = trained_free_setup
        with pytest.raises(ValueError, match="donor"):
            pervasiveness_audit(bundle, table, ds, None, combos_per_code=len(ds), rng=rng)

    def test_pervasiveness_oracle_matches_labels(self, trained_free_setup, rng):
        bundle, table, ds = trained_free_setup

        class Oracle:
            class_count = 2

            def classify_batch(self, images):
                return np.tile([1.0, 0.0], (len(images), 1))

            def classify(self, image):
                return np.array([1.0, 0.0])

        # class-0 rows always judged class 0 -> overall ratio = share of class-0 rows
        ratio = pervasiveness_audit(bundle, table, ds, Oracle(), 3, rng, max_codes=10)
        share = float((table.labels == 0).mean())
        assert 0.0 <= ratio <= 1.0
        assert abs(ratio - share) < 0.35

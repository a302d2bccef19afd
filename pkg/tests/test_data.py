"""Dataset files, sampling, augmentation, fold planning, and the generator."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mamafnet import data as D
from mamafnet.errors import DataError


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    root = tmp_path_factory.mktemp("cohort")
    manifest = D.generate_synthetic_cohort(root, n_pos=6, n_neg=6, n_frames=24, hw=16, seed=11)
    return manifest


class TestViewFiles:
    def test_round_trip(self, tmp_path, rng):
        frames = rng.integers(0, 256, size=(7, 8, 8, 3), dtype=np.uint8)
        path = tmp_path / "v.mvid"
        D.write_view_file(path, frames)
        np.testing.assert_array_equal(D.read_view_file(path), frames)

    def test_truncated_rejected(self, tmp_path, rng):
        frames = rng.integers(0, 256, size=(7, 8, 8, 3), dtype=np.uint8)
        path = tmp_path / "v.mvid"
        D.write_view_file(path, frames)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(DataError, match="truncated"):
            D.read_view_file(path)

    def test_wrong_dtype_rejected(self, tmp_path, rng):
        with pytest.raises(DataError):
            D.write_view_file(tmp_path / "v.mvid", rng.random((4, 8, 8, 3)).astype(np.float32))


class TestSampleFrames:
    def test_equally_spaced_formula(self):
        frames = np.arange(100).reshape(100, 1)
        picked = D.sample_frames(frames, 25)
        np.testing.assert_array_equal(picked.ravel(), np.arange(0, 100, 4))

    def test_full_length_identity(self):
        frames = np.arange(25).reshape(25, 1)
        np.testing.assert_array_equal(D.sample_frames(frames, 25).ravel(), np.arange(25))

    def test_short_video_oversamples(self):
        frames = np.arange(10).reshape(10, 1)
        picked = D.sample_frames(frames, 25)
        assert picked.shape[0] == 25
        idx = picked.ravel()
        np.testing.assert_array_equal(idx, (np.arange(25) * 10) // 25)
        assert np.all(np.diff(idx) >= 0)

    def test_empty_video_rejected(self):
        with pytest.raises(DataError):
            D.sample_frames(np.zeros((0, 2, 2, 3)), 5)


class TestResize:
    def test_same_size_identity(self, rng):
        frame = rng.random((8, 8, 3), dtype=np.float32)
        np.testing.assert_allclose(D.resize_bilinear(frame, 8), frame, atol=1e-6)

    def test_constant_stays_constant(self):
        frame = np.full((5, 7, 3), 0.37, dtype=np.float32)
        out = D.resize_bilinear(frame, (10, 14))
        np.testing.assert_allclose(out, 0.37, atol=1e-6)

    def test_checkerboard_hand_oracle(self):
        # half-pixel centers: output i samples source (i+0.5)/2 - 0.5,
        # i.e. coords (-.25, .25, .75, 1.25) clamped to [0, 1]
        frame = np.zeros((2, 2, 3), dtype=np.float32)
        frame[0, 1] = frame[1, 0] = 1.0
        out = D.resize_bilinear(frame, 4)
        coords = np.clip((np.arange(4) + 0.5) / 2 - 0.5, 0, 1)
        expected = np.empty((4, 4))
        for i, y in enumerate(coords):
            for j, x in enumerate(coords):
                expected[i, j] = (
                    (1 - y) * (1 - x) * 0 + (1 - y) * x * 1 + y * (1 - x) * 1 + y * x * 0
                )
        np.testing.assert_allclose(out, expected[..., None].repeat(3, axis=2), atol=1e-6)


class TestAugment:
    def test_rot90_two_by_two_enumeration(self):
        seq = np.array([[[["a"], ["b"]], [["c"], ["d"]]]], dtype=object)
        seq = np.vectorize(ord)(seq).astype(np.float32)
        out = D.augment(seq, "rot90")
        expected = np.vectorize(ord)(
            np.array([[[["c"], ["a"]], [["d"], ["b"]]]], dtype=object)
        ).astype(np.float32)
        np.testing.assert_array_equal(out, expected)

    def test_involutions(self, rng):
        seq = rng.random((3, 4, 4, 3), dtype=np.float32)
        np.testing.assert_array_equal(D.augment(D.augment(seq, "rot180"), "rot180"), seq)
        np.testing.assert_array_equal(D.augment(D.augment(seq, "flip_h"), "flip_h"), seq)
        np.testing.assert_array_equal(D.augment(D.augment(seq, "flip_v"), "flip_v"), seq)

    def test_rotations_preserve_pixel_multiset(self, rng):
        seq = rng.random((2, 4, 4, 3), dtype=np.float32)
        for op in ("rot90", "rot180", "rot270", "flip_h", "flip_v"):
            out = D.augment(seq, op)
            np.testing.assert_array_equal(np.sort(out, axis=None), np.sort(seq, axis=None))

    def test_rot_transposes_shape(self, rng):
        seq = rng.random((2, 4, 4, 3), dtype=np.float32)
        assert D.augment(seq, "rot90").shape == (2, 4, 4, 3)
        tall = rng.random((2, 6, 4, 3), dtype=np.float32)
        assert D.augment(tall, "rot180").shape == tall.shape

    def test_non_square_rotation_rejected(self, rng):
        with pytest.raises(DataError, match="square"):
            D.augment(rng.random((2, 6, 4, 3), dtype=np.float32), "rot90")

    def test_composition_deterministic(self, rng):
        seq = rng.random((2, 4, 4, 3), dtype=np.float32)
        np.testing.assert_array_equal(
            D.augment(seq, "composition", seed=9), D.augment(seq, "composition", seed=9)
        )

    def test_transform_pool_has_eleven(self):
        assert len(D.NONIDENTITY_TRANSFORMS) == 11
        assert (0, "none") not in D.NONIDENTITY_TRANSFORMS


def _loaded(rng, n, label, tag=""):
    return [
        D.LoadedSample(
            subject_id=f"{label}{tag}{i}", label=label,
            views=[rng.random((3, 4, 4, 3), dtype=np.float32) for _ in range(4)],
        )
        for i in range(n)
    ]


class TestBalanceAugment:
    def test_fills_to_target(self, rng):
        train = _loaded(rng, 43, 1) + _loaded(rng, 50, 0)
        out = D.balance_augment(train, target_per_class=100, seed=4)
        assert sum(1 for s in out if s.label == 1) == 100
        assert sum(1 for s in out if s.label == 0) == 100
        added = [s for s in out if "#aug" in s.subject_id]
        assert len(added) == 57 + 50

    def test_class_at_target_untouched(self, rng):
        train = _loaded(rng, 120, 1) + _loaded(rng, 100, 0)
        out = D.balance_augment(train, target_per_class=100, seed=4)
        assert len(out) == 220

    def test_deterministic(self, rng):
        train = _loaded(rng, 5, 1) + _loaded(rng, 7, 0)
        a = D.balance_augment(train, target_per_class=10, seed=3)
        b = D.balance_augment(train, target_per_class=10, seed=3)
        assert [s.subject_id for s in a] == [s.subject_id for s in b]
        for sa, sb in zip(a, b):
            for va, vb in zip(sa.views, sb.views):
                np.testing.assert_array_equal(va, vb)

    def test_empty_class_rejected(self, rng):
        with pytest.raises(DataError):
            D.balance_augment(_loaded(rng, 5, 1), target_per_class=10, seed=0)


def synthetic_manifest(n_pos, n_neg):
    samples = [
        D.VideoSample(subject_id=f"p{i}", label=1, views=("a", "b", "c", "d"),
                      frame_counts=(1, 1, 1, 1))
        for i in range(n_pos)
    ] + [
        D.VideoSample(subject_id=f"n{i}", label=0, views=("a", "b", "c", "d"),
                      frame_counts=(1, 1, 1, 1))
        for i in range(n_neg)
    ]
    return D.Manifest(name="m", hw=16, seed=0, samples=samples)


class TestPlanFolds:
    def test_published_cohort_shape(self):
        plan = D.plan_folds(synthetic_manifest(94, 54), k=5, seed=0)
        for fold in plan.folds:
            pos = sum(1 for sid in fold.test if sid.startswith("p"))
            neg = len(fold.test) - pos
            assert pos in (18, 19) and neg in (10, 11)
            assert len(fold.test) in (29, 30)
        assert sum(len(f.test) for f in plan.folds) == 148

    def test_minimal_cohort(self):
        plan = D.plan_folds(synthetic_manifest(5, 5), k=5, seed=1)
        for fold in plan.folds:
            pos = sum(1 for sid in fold.test if sid.startswith("p"))
            assert pos == 1 and len(fold.test) == 2

    def test_class_smaller_than_k_rejected(self):
        with pytest.raises(DataError, match="fewer than"):
            D.plan_folds(synthetic_manifest(4, 10), k=5, seed=0)

    @given(st.integers(5, 40), st.integers(5, 40), st.integers(0, 10 ** 6))
    @settings(max_examples=60, deadline=None)
    def test_partition_disjointness_stratification(self, n_pos, n_neg, seed):
        manifest = synthetic_manifest(n_pos, n_neg)
        plan = D.plan_folds(manifest, k=5, seed=seed)
        all_ids = {s.subject_id for s in manifest.samples}
        seen_test = set()
        for fold in plan.folds:
            train, val, test = set(fold.train), set(fold.val), set(fold.test)
            assert not (train & val) and not (train & test) and not (val & test)
            assert train | val | test == all_ids
            assert not (seen_test & test)
            seen_test |= test
            pos = sum(1 for sid in test if sid.startswith("p"))
            neg = len(test) - pos
            assert abs(pos - n_pos / 5) <= 1
            assert abs(neg - n_neg / 5) <= 1
        assert seen_test == all_ids

    def test_plan_round_trips_through_json(self):
        plan = D.plan_folds(synthetic_manifest(8, 7), k=5, seed=3)
        assert D.FoldPlan.from_json(plan.to_json()) == plan


class TestGenerator:
    def test_counts_and_manifest(self, cohort):
        assert cohort.class_counts() == (6, 6)
        assert all(len(s.views) == 4 for s in cohort.samples)
        reloaded = D.load_manifest(cohort.root / "manifest.jsonl")
        assert [s.subject_id for s in reloaded.samples] == [s.subject_id for s in cohort.samples]

    def test_positive_subjects_keep_subtype_out_of_labels(self, cohort):
        for s in cohort.samples:
            if s.label == 1:
                assert s.subtype in ("stroke", "tia")
            else:
                assert s.subtype is None

    def test_deficit_side_has_lower_motion_energy(self, cohort):
        for s in cohort.samples:
            if s.label != 1:
                continue
            for rel in s.views:
                frames = D.read_view_file(cohort.root / rel).astype(np.float64) / 255.0
                diff = np.diff(frames, axis=0) ** 2
                half = frames.shape[2] // 2
                left, right = diff[:, :, :half].sum(), diff[:, :, half:].sum()
                assert min(left, right) < 0.5 * max(left, right)

    def test_determinism_bit_exact(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        D.generate_synthetic_cohort(a, 2, 2, 10, 16, seed=5)
        D.generate_synthetic_cohort(b, 2, 2, 10, 16, seed=5)
        for pa in sorted(a.rglob("*")):
            if pa.is_file():
                pb = b / pa.relative_to(a)
                assert pa.read_bytes() == pb.read_bytes(), pa.name

    def test_invalid_dims_rejected(self, tmp_path):
        with pytest.raises(DataError):
            D.generate_synthetic_cohort(tmp_path / "x", 0, 2, 10, 16, seed=0)
        with pytest.raises(DataError):
            D.generate_synthetic_cohort(tmp_path / "x", 2, 2, 1, 16, seed=0)


class TestLoading:
    def test_load_samples_shapes_and_range(self, cohort):
        ids = [s.subject_id for s in cohort.samples[:3]]
        loaded = D.load_samples(cohort, ids, seq_len=8, hw=16)
        assert [s.subject_id for s in loaded] == ids
        for s in loaded:
            assert len(s.views) == 4
            for v in s.views:
                assert v.shape == (8, 16, 16, 3)
                assert v.dtype == np.float32
                assert 0.0 <= v.min() and v.max() <= 1.0

    def test_unknown_subject_rejected(self, cohort):
        with pytest.raises(DataError, match="ghost"):
            D.load_samples(cohort, ["ghost"], seq_len=4, hw=16)

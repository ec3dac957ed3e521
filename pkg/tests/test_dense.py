import numpy as np
import pytest

from retag.dense import (
    GridSpec,
    Region,
    RegionSet,
    SyntheticPatchSource,
    accumulate_features,
    cell_centers,
    label_regions,
    plan_patches,
    propose_vocabulary,
    segment_dense,
)
from retag.embeddings import l2_normalize
from retag.errors import (
    EmptyRegionsError,
    ImageTooSmallError,
    LengthMismatchError,
    NoCandidatesError,
)


def enumerate_counts(plan):
    """Independent rectangle-containment oracle over cell centers."""
    m = plan.spec.map_cells
    xs, ys = cell_centers(plan)
    counts = np.zeros((m, m), dtype=np.int64)
    for patch in plan.patches:
        for r in range(m):
            for c in range(m):
                if patch.x0 <= xs[c] < patch.x1 and patch.y0 <= ys[r] < patch.y1:
                    counts[r, c] += 1
    return counts


class TestPlanPatches:
    def test_single_scale_count(self):
        plan = plan_patches(256, 256, GridSpec(scales=(2,)))
        scale2 = [p for p in plan.patches if p.scale == 2]
        assert len(scale2) == 9
        assert all(p.x1 - p.x0 == 128 and p.y1 - p.y0 == 128 for p in scale2)

    def test_default_scales_count(self):
        plan = plan_patches(256, 256)
        per_scale = {}
        for p in plan.patches:
            per_scale[p.scale] = per_scale.get(p.scale, 0) + 1
        assert per_scale == {2: 9, 4: 49, 8: 225}
        assert len(plan) == 283

    def test_too_small(self):
        with pytest.raises(ImageTooSmallError):
            plan_patches(8, 8, GridSpec(scales=(2, 4, 8)))

    def test_in_bounds(self):
        for w, h in [(256, 256), (257, 131), (640, 480), (100, 33)]:
            spec = GridSpec(scales=(2, 4, 8)) if min(w, h) >= 16 else GridSpec(scales=(2,))
            plan = plan_patches(w, h, spec)
            for p in plan.patches:
                assert 0 <= p.x0 < p.x1 <= w
                assert 0 <= p.y0 < p.y1 <= h

    def test_deterministic_order(self):
        a = plan_patches(256, 256)
        b = plan_patches(256, 256)
        assert a.patches == b.patches
        scales = [p.scale for p in a.patches]
        assert scales == sorted(scales)

    def test_map_cells_derived(self):
        assert GridSpec(scales=(2, 4, 8)).map_cells == 16
        assert GridSpec(scales=(3,)).map_cells == 6

    def test_non_square(self):
        plan = plan_patches(512, 256)
        per_scale = {}
        for p in plan.patches:
            per_scale[p.scale] = per_scale.get(p.scale, 0) + 1
        assert per_scale == {2: 9, 4: 49, 8: 225}
        for p in plan.patches:
            assert p.x1 - p.x0 == 512 // p.scale
            assert p.y1 - p.y0 == 256 // p.scale


class TestAccumulateFeatures:
    def test_constant_embeddings(self):
        plan = plan_patches(256, 256)
        v = l2_normalize(np.array([1.0, 2.0, 2.0], dtype=np.float32))
        fmap = accumulate_features(plan, np.tile(v, (len(plan), 1)))
        assert fmap.cells.shape == (16, 16, 3)
        for r in range(16):
            for c in range(16):
                assert np.allclose(fmap.cells[r, c], v, atol=1e-6)

    def test_counts_match_enumeration_oracle(self):
        plan = plan_patches(256, 256)
        emb = np.ones((len(plan), 2), dtype=np.float32)
        fmap = accumulate_features(plan, emb)
        assert np.array_equal(fmap.counts, enumerate_counts(plan))
        assert np.all(fmap.counts > 0)

    def test_counts_match_oracle_non_square(self):
        plan = plan_patches(320, 192)
        emb = np.ones((len(plan), 2), dtype=np.float32)
        fmap = accumulate_features(plan, emb)
        assert np.array_equal(fmap.counts, enumerate_counts(plan))

    def test_double_counting_identity(self):
        rng = np.random.default_rng(0)
        for w, h in [(256, 256), (123, 301)]:
            plan = plan_patches(w, h)
            emb = rng.standard_normal((len(plan), 3)).astype(np.float32)
            fmap = accumulate_features(plan, emb)
            xs, ys = cell_centers(plan)
            per_patch = 0
            for p in plan.patches:
                nx = int(np.count_nonzero((p.x0 <= xs) & (xs < p.x1)))
                ny = int(np.count_nonzero((p.y0 <= ys) & (ys < p.y1)))
                per_patch += nx * ny
            assert int(fmap.counts.sum()) == per_patch

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        plan = plan_patches(256, 256, GridSpec(scales=(2, 4)))
        emb = rng.standard_normal((len(plan), 4)).astype(np.float32)
        fmap_a = accumulate_features(plan, emb)
        perm = rng.permutation(len(plan))
        shuffled_plan = plan_patches(256, 256, GridSpec(scales=(2, 4)))
        shuffled_plan.patches = [plan.patches[i] for i in perm]
        fmap_b = accumulate_features(shuffled_plan, emb[perm])
        assert np.allclose(fmap_a.cells, fmap_b.cells, atol=1e-6)
        assert np.array_equal(fmap_a.counts, fmap_b.counts)

    def test_degenerate_tiling_each_cell_one_patch(self):
        spec = GridSpec(scales=(8,))
        plan = plan_patches(256, 256, spec, half_stride=False)
        assert len(plan) == 64
        rng = np.random.default_rng(2)
        emb = rng.standard_normal((64, 5)).astype(np.float32)
        fmap = accumulate_features(plan, emb)
        assert np.all(fmap.counts == 1)
        for r in range(spec.map_cells):
            for c in range(spec.map_cells):
                patch_idx = (r // 2) * 8 + (c // 2)
                assert np.allclose(
                    fmap.cells[r, c], l2_normalize(emb[patch_idx]), atol=1e-6
                )

    def test_length_mismatch(self):
        plan = plan_patches(256, 256, GridSpec(scales=(2,)))
        with pytest.raises(LengthMismatchError):
            accumulate_features(plan, np.ones((3, 4), dtype=np.float32))


def left_right_source(mock, width=256, height=256):
    """Left half embeds near 'cat', right half near 'dog', by patch center."""

    def embed(patch):
        cx = (patch.x0 + patch.x1) / 2.0
        concept = "cat" if cx < width / 2 else "dog"
        return mock.planted_vector(
            concept, f"patch:{patch.scale}:{patch.x0}:{patch.y0}", role="joint-image"
        )

    return SyntheticPatchSource(width, height, embed)


class TestSegmentDense:
    def test_uniform_input_single_label(self, mock, cat_dog_index):
        source = SyntheticPatchSource(
            256,
            256,
            lambda p: mock.planted_vector("cat", f"u:{p.x0}:{p.y0}:{p.scale}", role="joint-image"),
        )
        seg = segment_dense(source, cat_dog_index, provider=mock)
        labels = {lbl for row in seg.labels for lbl in row}
        assert labels == {"cat"}
        assert len(seg.labels) == 16 and all(len(r) == 16 for r in seg.labels)

    def test_left_right_split(self, mock, cat_dog_index):
        seg = segment_dense(left_right_source(mock), cat_dog_index, provider=mock)
        grid = seg.to_grid()
        # Columns well away from the split must be pure; the two middle
        # columns may go either way.
        assert set(grid[:, :6].ravel()) == {"cat"}
        assert set(grid[:, 10:].ravel()) == {"dog"}

    def test_empty_index_surfaces_error(self, mock):
        from retag.errors import EmptyStoreError
        from retag.store import build_index, store_from_texts

        with pytest.raises(EmptyStoreError):
            build_index(store_from_texts([], np.zeros((0, 4), dtype=np.float32)))

    def test_pixel_upsampling(self, mock, cat_dog_index):
        seg = segment_dense(left_right_source(mock), cat_dog_index, provider=mock)
        pixels = seg.to_pixel_labels(64, 32)
        assert pixels.shape == (32, 64)
        assert pixels[0, 0] == seg.labels[0][0]
        assert pixels[-1, -1] == seg.labels[15][15]


class TestLabelRegions:
    def test_planted_region(self, mock, cat_dog_index):
        regions = RegionSet(
            [Region(id=1, embedding=mock.planted_vector("cat", "r1", role="joint-image"))]
        )
        out = label_regions(regions, cat_dog_index, provider=mock)
        assert len(out) == 1
        assert out[0][0] == 1
        assert out[0][1].top == "cat"

    def test_two_regions_independent_order_preserved(self, mock, cat_dog_index):
        regions = RegionSet(
            [
                Region(id=5, embedding=mock.planted_vector("dog", "r5", role="joint-image")),
                Region(id=2, embedding=mock.planted_vector("cat", "r2", role="joint-image")),
            ]
        )
        out = label_regions(regions, cat_dog_index, provider=mock)
        assert [rid for rid, _ in out] == [5, 2]
        assert out[0][1].top == "dog"
        assert out[1][1].top == "cat"

    def test_empty_regions(self, mock, cat_dog_index):
        with pytest.raises(EmptyRegionsError):
            label_regions(RegionSet([]), cat_dog_index, provider=mock)


class TestProposeVocabulary:
    def test_uniform_fixture(self, mock):
        texts = ["a photo of a cat"] * 12
        from retag.store import build_index, store_from_texts

        index = build_index(store_from_texts(texts, mock.embed_texts("joint-text", texts)))
        q = mock.planted_vector("cat", "pv", role="joint-image")
        assert propose_vocabulary(q, index) == ["cat"]

    def test_mixed_fixture_superset(self, mock, cat_dog_index):
        q = l2_normalize(
            mock.concept_vector("cat", "joint-image") + mock.concept_vector("dog", "joint-image")
        )
        names = propose_vocabulary(q, cat_dog_index, k=20)
        assert "cat" in names and "dog" in names

    def test_no_candidates(self, mock):
        from retag.store import build_index, store_from_texts

        texts = ["xy zq ab", "qq ww ee"]
        index = build_index(store_from_texts(texts, mock.embed_texts("joint-text", texts)))
        with pytest.raises(NoCandidatesError):
            propose_vocabulary(mock.planted_vector("cat", "x", role="joint-image"), index)

import numpy as np
import pytest

from segscreen.fusion import (
    CanvasAccumulator,
    FusionConfig,
    apply_view,
    fuse_supports,
    fuse_views,
    restore_to_canvas,
    run_tta,
)
from segscreen.geometry import BoundingBox
from segscreen.grid import ScalarGrid
from segscreen.segmentor import (
    Blob,
    FileBackend,
    SyntheticBackend,
    SyntheticSceneSpec,
    VIEW_KINDS,
)


def random_grid(rng, w=9, h=7):
    return ScalarGrid(rng.uniform(size=(h, w)))


class TestApplyView:
    def test_identity(self):
        g = ScalarGrid(np.array([[0.1, 0.2, 0.3]]))
        assert np.array_equal(apply_view(g, "identity").values, g.values)

    def test_flip_lr_reverses_rows(self):
        g = ScalarGrid(np.array([[0.1, 0.2, 0.3]]))
        assert apply_view(g, "flip_lr").values.tolist() == [[0.3, 0.2, 0.1]]

    def test_flip_tb_reverses_columns(self):
        g = ScalarGrid(np.array([[0.1], [0.2], [0.3]]))
        assert apply_view(g, "flip_tb").values.tolist() == [[0.3], [0.2], [0.1]]

    @pytest.mark.parametrize("kind", VIEW_KINDS)
    def test_involution_bit_exact(self, kind):
        rng = np.random.default_rng(30)
        for _ in range(20):
            g = random_grid(rng)
            back = apply_view(apply_view(g, kind), kind)
            assert np.array_equal(back.values, g.values)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            apply_view(ScalarGrid(np.zeros((2, 2))), "rot90")


class TestRestoreToCanvas:
    def test_single_full_cover(self):
        rng = np.random.default_rng(31)
        crop = random_grid(rng, 6, 5)
        acc = CanvasAccumulator(6, 5)
        restore_to_canvas(acc, crop, BoundingBox(0, 0, 6, 5))
        assert np.array_equal(acc.finalize().values, crop.values)

    def test_overlap_averages(self):
        acc = CanvasAccumulator(3, 1)
        restore_to_canvas(acc, ScalarGrid(np.array([[0.2, 0.2]])), BoundingBox(0, 0, 2, 1))
        restore_to_canvas(acc, ScalarGrid(np.array([[0.6, 0.6]])), BoundingBox(1, 0, 3, 1))
        out = acc.finalize().values
        assert out[0, 1] == pytest.approx(0.4)
        assert out[0, 0] == pytest.approx(0.2)
        assert out[0, 2] == pytest.approx(0.6)

    def test_uncovered_pixels_are_zero(self):
        acc = CanvasAccumulator(4, 4)
        restore_to_canvas(acc, ScalarGrid(np.full((2, 2), 0.9)), BoundingBox(0, 0, 2, 2))
        out = acc.finalize().values
        assert out[3, 3] == 0.0

    def test_box_outside_canvas_rejected(self):
        acc = CanvasAccumulator(4, 4)
        with pytest.raises(ValueError):
            restore_to_canvas(acc, ScalarGrid(np.zeros((2, 2))), BoundingBox(3, 3, 5, 5))

    def test_dim_mismatch_rejected(self):
        acc = CanvasAccumulator(4, 4)
        with pytest.raises(ValueError):
            restore_to_canvas(acc, ScalarGrid(np.zeros((2, 2))), BoundingBox(0, 0, 3, 2))

    def test_merge_order_independent(self):
        rng = np.random.default_rng(32)
        crops = [(random_grid(rng, 3, 3), BoundingBox(i, i, i + 3, i + 3)) for i in range(4)]
        a = CanvasAccumulator(8, 8)
        for crop, box in crops:
            a.add(crop, box)
        b = CanvasAccumulator(8, 8)
        for crop, box in reversed(crops):
            b.add(crop, box)
        # merge() of partial accumulators also matches
        c1, c2 = CanvasAccumulator(8, 8), CanvasAccumulator(8, 8)
        for i, (crop, box) in enumerate(crops):
            (c1 if i % 2 else c2).add(crop, box)
        merged = c1.merge(c2)
        assert np.array_equal(a.finalize().values, b.finalize().values)
        assert np.array_equal(a.finalize().values, merged.finalize().values)

    def test_average_exact_up_to_four_covers(self):
        for k in (1, 2, 3, 4):
            acc = CanvasAccumulator(1, 1)
            vals = [0.1 * (i + 1) for i in range(k)]
            for v in vals:
                acc.add(ScalarGrid(np.array([[v]])), BoundingBox(0, 0, 1, 1))
            assert acc.finalize().values[0, 0] == pytest.approx(sum(vals) / k)


class TestFuseViews:
    def test_singleton_any_rule(self):
        rng = np.random.default_rng(33)
        g = random_grid(rng)
        for rule in ("max", "median", "mean"):
            assert np.array_equal(fuse_views([g], rule).values, g.values)

    def test_three_values_per_rule(self):
        maps = [ScalarGrid(np.array([[v]])) for v in (0.1, 0.5, 0.9)]
        assert fuse_views(maps, "max").values[0, 0] == pytest.approx(0.9)
        assert fuse_views(maps, "median").values[0, 0] == pytest.approx(0.5)
        assert fuse_views(maps, "mean").values[0, 0] == pytest.approx(0.5)

    def test_identical_maps_agree_under_all_rules(self):
        rng = np.random.default_rng(34)
        g = random_grid(rng)
        for rule in ("max", "median", "mean"):
            assert np.allclose(fuse_views([g, g, g], rule).values, g.values)

    def test_median_even_count_takes_lower_middle(self):
        maps = [ScalarGrid(np.array([[v]])) for v in (0.1, 0.2, 0.8, 0.9)]
        assert fuse_views(maps, "median").values[0, 0] == pytest.approx(0.2)

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            fuse_views([], "max")

    def test_max_dominates_mean(self):
        rng = np.random.default_rng(35)
        maps = [random_grid(rng) for _ in range(3)]
        mx = fuse_views(maps, "max").values
        mean = fuse_views(maps, "mean").values
        assert np.all(mx >= mean)


class TestFuseSupports:
    def test_empty_roi_list_returns_full(self):
        rng = np.random.default_rng(36)
        g = random_grid(rng)
        assert np.array_equal(fuse_supports(g, []).values, g.values)

    def test_roi_peak_survives(self):
        full = ScalarGrid(np.zeros((8, 8)))
        roi = np.zeros((8, 8))
        roi[4, 4] = 0.8
        fused = fuse_supports(full, [ScalarGrid(roi)])
        assert fused.values[4, 4] == pytest.approx(0.8)

    def test_superlevel_sets_contain_inputs(self):
        rng = np.random.default_rng(37)
        for _ in range(20):
            full = random_grid(rng)
            rois = [random_grid(rng) for _ in range(3)]
            fused = fuse_supports(full, rois)
            for tau in np.linspace(0.1, 0.9, 9):
                combined = fused.values >= tau
                for src in [full] + rois:
                    assert np.all(combined | ~(src.values >= tau))


def synthetic_backend(blobs, frame=(64, 64), floor=0.05):
    spec = SyntheticSceneSpec(
        frame=frame,
        organ_blobs=(Blob(frame[0] / 2, frame[1] / 2, 10, 0.9),),
        lesion_blobs=tuple(blobs),
        noise_floor=floor,
    )
    return SyntheticBackend({"img": spec})


class TestRunTta:
    def test_single_support_single_view_is_raw_output(self):
        rng = np.random.default_rng(38)
        stored = ScalarGrid(rng.uniform(size=(16, 16)))
        backend = FileBackend({("img", "tumor"): stored})
        cfg = FusionConfig(view_rule="max", transforms=("identity",))
        out = run_tta("img", "tumor", [], (16, 16), (1.0, 1.0), backend, cfg)
        assert np.array_equal(out.values, stored.values)

    def test_blob_peak_preserved_by_max_rules(self):
        backend = synthetic_backend([Blob(32, 32, 5, 0.9)])
        boxes = [BoundingBox(16, 16, 48, 48)]
        out = run_tta("img", "tumor", boxes, (64, 64), (1.0, 1.0), backend)
        assert abs(float(out.values.max()) - 0.9) < 1e-6
        assert abs(out.values[32, 32] - 0.9) < 1e-6

    def test_symmetric_scene_unchanged_by_flips(self):
        # Blob at the exact frame center is invariant under both flips.
        backend = synthetic_backend([Blob(31.5, 31.5, 6, 0.8)])
        boxes = [BoundingBox(8, 8, 56, 56)]
        with_flips = run_tta("img", "tumor", boxes, (64, 64), (1.0, 1.0), backend,
                             FusionConfig(view_rule="max"))
        no_flips = run_tta("img", "tumor", boxes, (64, 64), (1.0, 1.0), backend,
                           FusionConfig(view_rule="max", transforms=("identity",)))
        assert np.allclose(with_flips.values, no_flips.values)

    def test_file_backend_round_trip_matches_native(self):
        # A flip-symmetric map gives identical fusion through both the
        # caller-side simulation (file backend) and native views (synthetic).
        rng = np.random.default_rng(39)
        base = rng.uniform(size=(16, 16))
        sym = (base + base[:, ::-1] + base[::-1, :] + base[::-1, ::-1]) / 4.0
        backend = FileBackend({("img", "tumor"): ScalarGrid(sym)})
        out = run_tta("img", "tumor", [BoundingBox(2, 2, 14, 14)], (16, 16), (1.0, 1.0), backend)
        assert np.allclose(out.values, sym)

    def test_lookup_error_carries_support_and_view(self):
        backend = FileBackend({("img", "tumor"): ScalarGrid(np.zeros((8, 8)))})
        with pytest.raises(KeyError, match=r"support full, view identity"):
            run_tta("img", "other prompt", [], (8, 8), (1.0, 1.0), backend)

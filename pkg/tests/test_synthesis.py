import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import ndimage, stats

from logicalad.synthesis import AnomalySynthesizer, StrategyToggles, build_ground_truth
from oracles import ssim_gaussian_filter


def block_pair(rng, top=12, left=12):
    a = np.full((32, 32, 3), 0.5) + 0.02 * rng.standard_normal((32, 32, 3))
    b = a.copy()
    b[top:top + 8, left:left + 8] = 1.0 - b[top:top + 8, left:left + 8]
    return np.clip(a, 0, 1), np.clip(b, 0, 1)


class TestGroundTruth:
    def test_identical_is_empty(self, rng):
        a = rng.random((16, 16, 3))
        assert not build_ground_truth(a, a, np.ones((16, 16))).any()

    def test_empty_mask(self, rng):
        a, b = block_pair(rng)
        assert not build_ground_truth(a, b, np.zeros((32, 32))).any()

    def test_block_inside_mask(self, rng):
        a, b = block_pair(rng)
        m = np.zeros((32, 32), np.uint8)
        m[8:24, 8:26] = 1
        gt = build_ground_truth(a, b, m)
        # oracle: per-channel SSIM with scipy's Gaussian filter, averaged, thresholded, closed, intersected
        dissim = 1.0 - np.mean([ssim_gaussian_filter(a[..., c], b[..., c]) for c in range(3)], axis=0)
        raw = (dissim > 0.5) & (m > 0)
        expected = ndimage.binary_closing(raw, structure=np.ones((3, 3), bool)) & (m > 0)
        np.testing.assert_array_equal(gt.astype(bool), expected)
        assert gt[12:20, 12:20].mean() >= 0.5
        assert not gt[m == 0].any()

    def test_mask_clips_block(self, rng):
        a, b = block_pair(rng)
        m = np.zeros((32, 32), np.uint8)
        m[12:20, 12:16] = 1  # half of the block
        gt = build_ground_truth(a, b, m)
        assert gt.any() and not gt[m == 0].any()

    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 0.95))
    def test_subset_of_mask(self, seed, threshold):
        rng = np.random.default_rng(seed)
        a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
        m = (rng.random((16, 16)) > 0.5).astype(np.uint8)
        gt = build_ground_truth(a, b, m, threshold)
        assert gt.dtype == np.uint8
        assert np.all(gt <= m)


class TestToggles:
    def test_combinations(self):
        assert len(StrategyToggles().combinations()) == 6
        t = StrategyToggles(semantic_regions=False, replace=False)
        assert t.combinations() == [("arbitrary", "remove"), ("arbitrary", "merge")]

    @pytest.mark.parametrize("kwargs", [{"semantic_regions": False, "arbitrary_regions": False},
                                        {"remove": False, "replace": False, "merge": False}])
    def test_rejects_empty(self, kwargs):
        with pytest.raises(ValueError):
            StrategyToggles(**kwargs)


@pytest.fixture(scope="module")
def synthesizer(request):
    toy_train = request.getfixturevalue("toy_train")
    generator = request.getfixturevalue("small_generator")
    return AnomalySynthesizer(toy_train, generator)


class TestSynthesizer:
    def test_empty_images(self, small_generator):
        with pytest.raises(ValueError):
            AnomalySynthesizer([], small_generator)

    def test_strategy_frequencies(self, synthesizer):
        rng = np.random.default_rng(0)
        combos = StrategyToggles().combinations()
        n = 6000
        counts = {c: 0 for c in combos}
        for _ in range(n):
            s = synthesizer.draw_strategy(rng)
            counts[(s.region_mode, s.edge_op)] += 1
        observed = np.array([counts[c] for c in combos])
        assert stats.chisquare(observed).pvalue > 1e-3
        sd = np.sqrt(n * (1 / 6) * (5 / 6))
        assert np.all(np.abs(observed - n / 6) <= 4 * sd)

    def test_tps_only_when_enabled(self, synthesizer, toy_train, small_generator):
        rng = np.random.default_rng(0)
        assert not any(synthesizer.draw_strategy(rng).apply_tps for _ in range(50))
        tps = AnomalySynthesizer(toy_train, small_generator, StrategyToggles(tps_on_synthetic=True),
                                 tps_probability=1.0, edge_maps=synthesizer.edge_maps)
        assert all(tps.draw_strategy(rng).apply_tps for _ in range(20))

    def test_batch_fields_and_subset(self, synthesizer):
        samples = synthesizer.synthesize_batch([0, 1, 2, 3], np.random.default_rng(5))
        assert [s.source_index for s in samples] == [0, 1, 2, 3]
        for s in samples:
            assert s.image.shape == (64, 64, 3) and s.gen_normal.shape == (64, 64, 3)
            assert s.anomaly_edges.shape == (64, 64)
            assert np.all(s.gt_mask <= s.region_mask)
            assert s.region_mask.any() and s.region_mask.mean() <= synthesizer.max_area_fraction
            assert s.strategy.split("-")[0] in ("semantic", "arbitrary")

    def test_deterministic(self, synthesizer):
        a = synthesizer.synthesize_batch([0, 5], np.random.default_rng(9))
        b = synthesizer.synthesize_batch([0, 5], np.random.default_rng(9))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.image, y.image)
            np.testing.assert_array_equal(x.gt_mask, y.gt_mask)
            assert x.strategy == y.strategy

    def test_remove_only(self, toy_train, small_generator, synthesizer):
        syn = AnomalySynthesizer(toy_train, small_generator, StrategyToggles(replace=False, merge=False),
                                 edge_maps=synthesizer.edge_maps)
        rng = np.random.default_rng(1)
        for s in syn.synthesize_batch(list(range(8)), rng):
            assert "remove" in s.strategy
            assert np.all(s.gt_mask <= s.region_mask)
            assert np.all(s.anomaly_edges[s.region_mask == 1] == 1.0)

    def test_semantic_falls_back_to_arbitrary(self, small_generator):
        flat = [np.full((64, 64, 3), 0.5, np.float32)]
        syn = AnomalySynthesizer(flat, small_generator, StrategyToggles(arbitrary_regions=False))
        s = syn.synthesize(0, np.random.default_rng(0))
        assert s.strategy.startswith("arbitrary")

    def test_gt_against_original(self, toy_train, small_generator, synthesizer):
        syn = AnomalySynthesizer(toy_train, small_generator, gt_against_original=True,
                                 edge_maps=synthesizer.edge_maps)
        s = syn.synthesize(0, np.random.default_rng(3))
        expected = build_ground_truth(s.target_image, s.image, s.region_mask)
        np.testing.assert_array_equal(s.gt_mask, expected)

    def test_empty_batch(self, synthesizer):
        assert synthesizer.synthesize_batch([], np.random.default_rng(0)) == []

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from logicalad.imaging import InvalidInputError
from logicalad.manipulation import (AugmentationSpec, SynthesisStrategy, apply_augmentation, augment_candidate,
                                    merge_edges, remove_edges, replace_edges, resize_about_center,
                                    synthesize_anomaly_edges)
from oracles import edge_op_pixelwise

unit = st.floats(0.0, 1.0, width=32)
maps = arrays(np.float32, (6, 6), elements=unit)
masks = arrays(np.uint8, (6, 6), elements=st.integers(0, 1))


class TestRemove:
    def test_hand_example(self):
        e = np.array([[0, 1], [1, 0.4]])
        m = np.array([[1, 0], [0, 0]])
        np.testing.assert_allclose(remove_edges(e, m), [[1, 1], [1, 0.4]], atol=1e-7)

    def test_identity_and_full(self, rng):
        e = rng.random((8, 8))
        np.testing.assert_array_equal(remove_edges(e, np.zeros((8, 8), int)), e.astype(np.float32))
        np.testing.assert_array_equal(remove_edges(e, np.ones((8, 8), int)), 1.0)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            remove_edges(np.ones((4, 4)), np.ones((4, 5), int))


class TestReplace:
    def test_half_plane(self):
        m = np.zeros((8, 8), int)
        m[:, :4] = 1
        out = replace_edges(np.full((8, 8), 0.8), np.full((8, 8), 0.2), m)
        np.testing.assert_allclose(out[:, :4], 0.2, atol=1e-7)
        np.testing.assert_allclose(out[:, 4:], 0.8, atol=1e-7)

    def test_identity_and_full(self, rng):
        e, c = rng.random((8, 8)), rng.random((8, 8))
        np.testing.assert_array_equal(replace_edges(e, c, np.zeros((8, 8), int)), e.astype(np.float32))
        np.testing.assert_array_equal(replace_edges(e, c, np.ones((8, 8), int)), c.astype(np.float32))


class TestMerge:
    def test_clamp_example(self):
        out = merge_edges(np.full((2, 2), 0.3), np.full((2, 2), 0.2), np.ones((2, 2), int))
        np.testing.assert_array_equal(out, 0.0)

    def test_all_background_candidate_is_identity(self, rng):
        e = rng.random((8, 8)).astype(np.float32)
        m = (rng.random((8, 8)) > 0.5).astype(int)
        np.testing.assert_array_equal(merge_edges(e, np.ones((8, 8)), m), e)

    def test_background_source_gives_candidate(self, rng):
        c = rng.random((8, 8)).astype(np.float32)
        np.testing.assert_array_equal(merge_edges(np.ones((8, 8)), c, np.ones((8, 8), int)), c)

    def test_edge_union_on_toy_scene(self):
        e = np.ones((16, 16), np.float32)
        e[4, 2:10] = 0.0
        c = np.ones((16, 16), np.float32)
        c[2:12, 7] = 0.1
        m = np.zeros((16, 16), int)
        m[1:13, 1:13] = 1
        out = merge_edges(e, c, m)
        inside = m.astype(bool)
        union = (e < 0.5) | (c < 0.5)
        np.testing.assert_array_equal((out < 0.5)[inside], union[inside])


@given(maps, maps, masks)
def test_matches_pixelwise_oracle_exactly(e, c, m):
    np.testing.assert_array_equal(remove_edges(e, m), edge_op_pixelwise("remove", e, m))
    np.testing.assert_array_equal(replace_edges(e, c, m), edge_op_pixelwise("replace", e, m, c))
    np.testing.assert_array_equal(merge_edges(e, c, m), edge_op_pixelwise("merge", e, m, c))


@given(maps, maps, masks)
def test_locality_range_and_branch_consistency(e, c, m):
    outside = m == 0
    for out in (remove_edges(e, m), replace_edges(e, c, m), merge_edges(e, c, m)):
        np.testing.assert_array_equal(out[outside], e[outside])
        assert out.min() >= 0 and out.max() <= 1
    np.testing.assert_array_equal(remove_edges(e, m), replace_edges(e, np.ones_like(e), m))
    merged = merge_edges(e, c, m)
    inside = m == 1
    assert np.all(merged[inside] <= np.minimum(e, c)[inside])


class TestAugmentation:
    def test_identity_draw(self, rng):
        e = rng.random((16, 16)).astype(np.float32)
        out = augment_candidate(e, AugmentationSpec(op_probability=0.0), rng)
        np.testing.assert_array_equal(out, e)

    def test_double_flip_involution(self, rng):
        e = rng.random((16, 12)).astype(np.float32)
        np.testing.assert_array_equal(apply_augmentation(apply_augmentation(e, hflip=True), hflip=True), e)
        np.testing.assert_array_equal(apply_augmentation(apply_augmentation(e, vflip=True), vflip=True), e)

    def test_resize_keeps_center(self):
        e = np.ones((33, 33), np.float32)
        e[16, 16] = 0.0
        out = resize_about_center(e, 2.0)
        assert out.shape == e.shape
        r, c = np.unravel_index(np.argmin(out), out.shape)
        assert abs(r - 16) <= 1 and abs(c - 16) <= 1

    def test_resize_shrink_pads_with_background(self):
        e = np.zeros((20, 20), np.float32)
        out = resize_about_center(e, 0.5)
        assert out[0, 0] == 1.0 and out[10, 10] == 0.0

    @given(st.integers(0, 1000))
    def test_range_and_shape(self, seed):
        rng = np.random.default_rng(seed)
        e = rng.random((16, 20)).astype(np.float32)
        out = augment_candidate(e, AugmentationSpec(), rng)
        assert out.shape == e.shape and out.min() >= 0 and out.max() <= 1

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            AugmentationSpec(ops=("rotate",))
        with pytest.raises(ValueError):
            AugmentationSpec(resize_scale_range=(2.0, 1.0))


class TestStrategy:
    def test_all_combinations_valid(self):
        for mode in ("semantic", "arbitrary"):
            for op in ("remove", "replace", "merge"):
                s = SynthesisStrategy(mode, op)
                assert s.tag == f"{mode}-{op}"
        assert SynthesisStrategy("semantic", "remove", apply_tps=True).tag.endswith("-tps")

    def test_invalid(self):
        with pytest.raises(ValueError):
            SynthesisStrategy("semantic", "swap")
        with pytest.raises(ValueError):
            SynthesisStrategy("global", "remove")


class TestSynthesize:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.e = rng.random((16, 16)).astype(np.float32)
        self.m = np.zeros((16, 16), np.uint8)
        self.m[4:10, 3:12] = 1

    def test_remove_locality(self, rng):
        out = synthesize_anomaly_edges(self.e, [], SynthesisStrategy("arbitrary", "remove"), self.m, rng)
        outside = self.m == 0
        np.testing.assert_array_equal(out.anomaly_edges[outside], self.e[outside])
        np.testing.assert_array_equal(out.mask, self.m)

    def test_replace_with_self_is_identity(self, rng):
        out = synthesize_anomaly_edges(self.e, [self.e], SynthesisStrategy("arbitrary", "replace"), self.m, rng,
                                       AugmentationSpec(op_probability=0.0))
        np.testing.assert_array_equal(out.anomaly_edges, self.e)

    @pytest.mark.parametrize("op", ["replace", "merge"])
    def test_empty_candidates_rejected(self, op, rng):
        with pytest.raises(ValueError, match="candidate"):
            synthesize_anomaly_edges(self.e, [], SynthesisStrategy("arbitrary", op), self.m, rng)

    def test_tps_warps_pair_and_mask_together(self):
        s = SynthesisStrategy("arbitrary", "remove", apply_tps=True)
        out = synthesize_anomaly_edges(self.e, [], s, self.m, np.random.default_rng(0), tps_max_shift_frac=0.1)
        assert out.warp is not None and not out.warp.is_identity
        assert not np.array_equal(out.normal_edges, self.e)
        assert set(np.unique(out.mask)) <= {0, 1}

    def test_deterministic(self):
        s = SynthesisStrategy("semantic", "merge", apply_tps=True)
        a = synthesize_anomaly_edges(self.e, [self.e[::-1]], s, self.m, np.random.default_rng(5))
        b = synthesize_anomaly_edges(self.e, [self.e[::-1]], s, self.m, np.random.default_rng(5))
        np.testing.assert_array_equal(a.anomaly_edges, b.anomaly_edges)
        np.testing.assert_array_equal(a.mask, b.mask)

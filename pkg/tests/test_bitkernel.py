import numpy as np
import pytest

from bwaq import DataError, QuantizedLinear, forward, forward_reference, group_counts, popc_and
from bwaq.actquant import ActBitplanes, decompose_bitplanes, quantize_activations
from bwaq.bitkernel import bench_forward, random_activations, random_layer
from bwaq.bits import BitBlock, pack_bits, unpack_bits

from oracles import naive_counts


def _block(bits):
    return BitBlock.from_bits(np.array(bits, dtype=np.uint8))


class TestPopcAnd:
    def test_hand_count(self):
        # 1010 and 1100 overlap in one position
        assert popc_and(_block([1, 0, 1, 0]), _block([1, 1, 0, 0])) == 1

    def test_all_ones_mask_gives_popcount(self, rng):
        bits = rng.integers(0, 2, size=100, dtype=np.uint8)
        assert popc_and(_block(bits), _block(np.ones(100, np.uint8))) == bits.sum()

    def test_length_mismatch_rejected(self):
        with pytest.raises(DataError):
            popc_and(_block([1, 0]), _block([1, 0, 1]))

    def test_matches_bit_loop(self, rng):
        for _ in range(2000):
            x = rng.integers(0, 2, size=128, dtype=np.uint8)
            y = rng.integers(0, 2, size=128, dtype=np.uint8)
            assert popc_and(_block(x), _block(y)) == int((x & y).sum())


class TestGroupCounts:
    def test_hand_evaluation(self):
        q = _block([0, 1, 0, 1])  # MSB-first written 1010 in the contract example
        b = _block([0, 0, 1, 1])
        m = _block([0, 0, 1, 1])
        v0, v1, r0, r1 = group_counts(q, b, m)
        assert (v0, v1, r0, r1) == (0, 1, 0, 2)

    def test_all_ones_mask_empties_subgroup_zero(self, rng):
        q = _block(rng.integers(0, 2, size=64, dtype=np.uint8))
        b = _block(rng.integers(0, 2, size=64, dtype=np.uint8))
        m = _block(np.ones(64, np.uint8))
        v0, v1, r0, r1 = group_counts(q, b, m)
        assert v0 == 0 and r0 == 0

    def test_zero_plane_gives_zero_counts(self, rng):
        q = _block(rng.integers(0, 2, size=64, dtype=np.uint8))
        m = _block(rng.integers(0, 2, size=64, dtype=np.uint8))
        assert group_counts(q, _block(np.zeros(64, np.uint8)), m) == (0, 0, 0, 0)

    def test_matches_naive_counts(self, rng):
        for _ in range(10_000):
            q = rng.integers(0, 2, size=128, dtype=np.uint8)
            b = rng.integers(0, 2, size=128, dtype=np.uint8)
            m = rng.integers(0, 2, size=128, dtype=np.uint8)
            got = group_counts(_block(q), _block(b), _block(m))
            want0, want1, wr0, wr1 = naive_counts(q.tolist(), b.tolist(), m.tolist())
            assert got == (want0, want1, wr0, wr1)

    def test_padding_bits_never_leak(self, rng):
        # a 70-bit block leaves 58 padding bits in the second word
        q = rng.integers(0, 2, size=70, dtype=np.uint8)
        b = rng.integers(0, 2, size=70, dtype=np.uint8)
        m = rng.integers(0, 2, size=70, dtype=np.uint8)
        got = group_counts(_block(q), _block(b), _block(m))
        assert got == naive_counts(q.tolist(), b.tolist(), m.tolist())


def _counts_from_layer(layer, act, row, group, token, plane):
    q = BitBlock(layer.signs[row, group].copy(), layer.group_size)
    m = BitBlock(layer.mask[row, group].copy(), layer.group_size)
    b = BitBlock(act.planes[token, group, plane].copy(), layer.group_size)
    return q, b, m


class TestForward:
    def test_zero_affine_zero_outliers_gives_zero(self, rng):
        layer = random_layer(rng, 8, 128, 64, 0)
        layer.affine[:] = 0
        act = random_activations(rng, 4, layer)
        assert np.all(forward(layer, act) == 0.0)

    def test_hand_dot_product(self):
        # weights dequantize to [0.3, -0.1, 0.3, -0.1]; codes [1,2,3,4], mu=.5, z=0
        affine = np.zeros((1, 1, 2, 2), dtype=np.float32)
        affine[0, 0, 0] = [0.0, -0.1]  # subgroup 0: alpha 0, beta -0.1
        affine[0, 0, 1] = [0.0, 0.3]  # subgroup 1: alpha 0, beta 0.3
        layer = QuantizedLinear(
            rows=1,
            cols=4,
            group_size=4,
            outliers=0,
            signs=pack_bits(np.zeros((1, 1, 4), np.uint8)),
            mask=pack_bits(np.array([[[1, 0, 1, 0]]], np.uint8)),
            affine=affine,
            perm=np.arange(4),
            out_codes=np.zeros((1, 0), np.uint8),
            out_scale=np.ones(1, np.float32),
            out_zero=np.zeros(1, np.float32),
            plane_corr=np.ones((1, 4), np.float32),
        )
        codes = np.array([[[1, 2, 3, 4]]])
        planes, scales, shift = decompose_bitplanes(
            codes, np.full((1, 1), 0.5), np.zeros((1, 1))
        )
        act = ActBitplanes(
            tokens=1,
            group_size=4,
            outliers=0,
            perm=np.arange(4),
            planes=pack_bits(planes).reshape(1, 1, 4, 1),
            mu=np.full((1, 1), 0.5),
            zero=np.zeros((1, 1)),
            plane_scales=scales,
            shift=shift,
            out_codes=np.zeros((1, 0), np.uint8),
            out_scale=np.ones(1),
            out_zero=np.zeros(1),
        )
        # affine parameters are stored as float32, so 0.3 is only f32-exact
        assert forward(layer, act)[0, 0] == pytest.approx(0.3, rel=1e-6)
        assert forward_reference(layer, act)[0, 0] == pytest.approx(0.3, rel=1e-6)

    def test_matches_reference_on_random_layers(self, rng):
        for _ in range(25):
            group = int(rng.choice([64, 128]))
            outliers = int(rng.choice([0, 128]))
            n_groups = int(rng.integers(1, 4))
            cols = outliers + group * n_groups
            rows = int(rng.integers(1, 64))
            tokens = int(rng.integers(1, 9))
            layer = random_layer(rng, rows, cols, group, outliers)
            act = random_activations(rng, tokens, layer)
            got = forward(layer, act)
            want = forward_reference(layer, act)
            scale = np.abs(want).max() + 1e-12
            assert np.abs(got - want).max() <= 1e-9 * scale

    def test_counts_match_naive_on_sampled_blocks(self, rng):
        layer = random_layer(rng, 16, 256, 128, 0)
        act = random_activations(rng, 4, layer)
        for _ in range(50):
            row = int(rng.integers(16))
            token = int(rng.integers(4))
            group = int(rng.integers(2))
            plane = int(rng.integers(4))
            q, b, m = _counts_from_layer(layer, act, row, group, token, plane)
            got = group_counts(q, b, m)
            want = naive_counts(
                unpack_bits(q.words, 128).tolist(),
                unpack_bits(b.words, 128).tolist(),
                unpack_bits(m.words, 128).tolist(),
            )
            assert got == want

    def test_linearity_in_plane_scales(self, rng):
        # same codes, scales split across two calls: forwards must add up
        layer = random_layer(rng, 8, 128, 64, 0)
        act = random_activations(rng, 3, layer)
        frac = rng.uniform(0.1, 0.9, size=act.plane_scales.shape)
        sfrac = rng.uniform(0.1, 0.9, size=act.shift.shape)
        part_a = ActBitplanes(
            **{
                **act.__dict__,
                "plane_scales": frac * act.plane_scales,
                "shift": sfrac * act.shift,
            }
        )
        part_b = ActBitplanes(
            **{
                **act.__dict__,
                "plane_scales": (1 - frac) * act.plane_scales,
                "shift": (1 - sfrac) * act.shift,
            }
        )
        total = forward(layer, part_a) + forward(layer, part_b)
        assert np.allclose(total, forward(layer, act), rtol=1e-9, atol=1e-12)

    def test_incompatible_activation_rejected(self, rng):
        layer = random_layer(rng, 8, 128, 64, 0)
        other = random_layer(rng, 8, 128, 64, 0)
        act = random_activations(rng, 3, other)
        with pytest.raises(DataError):
            forward(layer, act)

    def test_identity_like_layer_returns_activations(self, rng):
        # 4x4 layer whose dequantized weights are the identity
        affine = np.zeros((4, 1, 2, 2), dtype=np.float32)
        affine[..., 0, :] = [0.5, 0.5]  # subgroup 0: alpha=.5 beta=.5 -> {0, 1}
        signs = np.eye(4, dtype=np.uint8).reshape(4, 1, 4)
        layer = QuantizedLinear(
            rows=4,
            cols=4,
            group_size=4,
            outliers=0,
            signs=pack_bits(signs),
            mask=pack_bits(np.zeros((4, 1, 4), np.uint8)),
            affine=affine,
            perm=np.arange(4),
            out_codes=np.zeros((4, 0), np.uint8),
            out_scale=np.ones(4, np.float32),
            out_zero=np.zeros(4, np.float32),
            plane_corr=np.ones((1, 4), np.float32),
        )
        x = rng.normal(size=(5, 4))
        act = quantize_activations(x, 4, 0)
        from bwaq.actquant import reconstruct

        assert np.allclose(forward_reference(layer, act), reconstruct(act), rtol=1e-12)


class TestBench:
    def test_degenerate_shape_completes(self):
        rows = bench_forward([(1, 128, 128)], iters=2, seed=1)
        assert len(rows) == 1
        assert rows[0]["kernel_ms"] > 0
        assert rows[0]["gemm_ms"] > 0

    def test_rejects_non_positive_shape(self):
        with pytest.raises(DataError):
            bench_forward([(0, 128, 128)], iters=1)

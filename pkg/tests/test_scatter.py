import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import naive_scatter, rel_err
from scatterconv import (MultCounter, TileConfig, conv_gather_same, phase_parallel_scatter,
                         scatter_conv_multi, scatter_conv_single, scatter_index_trace,
                         tiled_scatter_conv)
from scatterconv.scatter import reversal_offset_map
from scatterconv.tensor import reverse_kernel

X9 = np.arange(1.0, 10.0).reshape(3, 3)


def reversed_dest(kh, kw):
    return lambda m, n: (kh - 1 - m, kw - 1 - n)


class TestSingle:
    def test_delta_kernel(self, rng):
        x = rng.standard_normal((5, 4))
        w = np.zeros((3, 3))
        w[1, 1] = 1.0
        assert np.array_equal(scatter_conv_single(x, w), x)

    def test_all_ones(self):
        c = MultCounter()
        y = scatter_conv_single(X9, np.ones((3, 3)), c)
        assert y[1, 1] == 45
        assert y[0, 0] == 12
        assert c.scalar_multiplications == 81

    def test_against_pixel_loop(self, rng):
        for kh, kw in [(1, 1), (3, 3), (2, 3), (5, 2), (4, 4)]:
            x, w = rng.standard_normal((6, 7)), rng.standard_normal((kh, kw))
            assert rel_err(scatter_conv_single(x, w), naive_scatter(x, w, reversed_dest(kh, kw))) < 1e-13

    def test_stamps_kernel_around_pixel(self):
        x = np.zeros((5, 5))
        x[2, 2] = 1.0
        w = np.arange(9.0).reshape(3, 3)
        assert np.array_equal(scatter_conv_single(x, w)[1:4, 1:4], w)

    def test_errors(self):
        with pytest.raises(ValueError):
            scatter_conv_single(np.ones((1, 2, 2)), np.ones((3, 3)))
        with pytest.raises(ValueError):
            scatter_conv_single(np.ones((2, 2)), np.ones((0, 3)))


class TestMulti:
    def test_zero_second_channel_reduces_to_single(self, rng):
        x = np.stack([rng.standard_normal((6, 6)), np.zeros((6, 6))])
        w = rng.standard_normal((1, 2, 3, 3))
        assert rel_err(scatter_conv_multi(x, w)[0], scatter_conv_single(x[0], w[0, 0])) < 1e-14

    def test_equals_gather_with_reversed_kernel(self, rng):
        x, w = rng.standard_normal((3, 9, 8)), rng.standard_normal((2, 3, 3, 3))
        assert rel_err(scatter_conv_multi(x, w), conv_gather_same(x, reverse_kernel(w))) < 1e-12

    def test_negated_filter_negates_output(self, rng):
        x = rng.standard_normal((2, 5, 5))
        w1 = rng.standard_normal((1, 2, 3, 3))
        y = scatter_conv_multi(x, np.concatenate([w1, -w1]))
        assert np.array_equal(y[1], -y[0])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(1, 4), st.integers(1, 4),
           st.sampled_from([1, 2, 3, 4, 5]), st.integers(0, 10_000))
    def test_property_gather_duality(self, h, wd, ci, co, k, seed):
        rng = np.random.default_rng(seed)
        x, w = rng.standard_normal((ci, h, wd)), rng.standard_normal((co, ci, k, k))
        assert rel_err(scatter_conv_multi(x, w), conv_gather_same(x, reverse_kernel(w))) < 1e-12

    def test_mult_count_and_aux_memory(self, rng):
        h, wd, ci, co, k = 10, 7, 3, 4, 3
        c = MultCounter()
        y = scatter_conv_multi(rng.standard_normal((ci, h, wd)), rng.standard_normal((co, ci, k, k)), c)
        assert c.scalar_multiplications == h * wd * k * k * ci * co
        # one channel-dot plane set per offset, never K^2 copies of the input
        assert c.peak_aux_bytes == co * h * wd * 8
        assert c.peak_aux_bytes < k * k * ci * h * wd * 8
        assert y.shape == (co, h, wd)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            scatter_conv_multi(np.ones((2, 3, 3)), np.ones((1, 3, 3, 3)))


class TestIndexTrace:
    def test_row_locality(self):
        h, wd, k = 6, 5, 3
        rows = {}
        for i, j, m, n, x, y in scatter_index_trace(h, wd, k, k):
            rows.setdefault((i, m, n), set()).add(x)
        assert rows and all(len(v) == 1 for v in rows.values())

    def test_trace_reproduces_scatter(self, rng):
        x, w = rng.standard_normal((5, 6)), rng.standard_normal((3, 2))
        y = np.zeros_like(x)
        for i, j, m, n, tx, ty in scatter_index_trace(5, 6, 3, 2):
            y[tx, ty] += x[i, j] * w[m, n]
        assert rel_err(y, scatter_conv_single(x, w)) < 1e-14

    def test_custom_offset_map(self):
        ident = reversal_offset_map(3, 3)[0][::-1, ::-1]
        writes = list(scatter_index_trace(3, 3, 3, 3, ident))
        assert (0, 0, 0, 0, 1, 1) in writes


class TestTileConfig:
    def test_halo_rules(self):
        assert TileConfig.for_kernel(3, 4).halo == 1
        assert TileConfig.for_kernel(5, 4, max_pool=True).halo == 3
        with pytest.raises(ValueError, match="invalid halo"):
            TileConfig(4, 4, 0).validate(3)
        with pytest.raises(ValueError, match="invalid halo"):
            TileConfig(4, 4, 1).validate(3, max_pool=True)
        with pytest.raises(ValueError):
            TileConfig(0, 4, 1)

    def test_wrong_halo_rejected_by_kernel(self, rng):
        with pytest.raises(ValueError, match="invalid halo"):
            tiled_scatter_conv(rng.standard_normal((1, 6, 6)), rng.standard_normal((1, 1, 5, 5)),
                               TileConfig(3, 3, 1))


class TestTiled:
    def test_full_tile_equals_untiled(self, rng):
        x, w = rng.standard_normal((5, 11, 9)), rng.standard_normal((3, 5, 3, 3))
        cfg = TileConfig.for_kernel(3, 11, 9)
        assert np.array_equal(tiled_scatter_conv(x, w, cfg), scatter_conv_multi(x, w, ordered=True))
        assert rel_err(tiled_scatter_conv(x, w, cfg), scatter_conv_multi(x, w)) < 1e-12

    @pytest.mark.parametrize("tile,workers", [(5, 4), (1, 1), (1, 3), (7, 2)])
    def test_tiles_match_untiled(self, rng, tile, workers):
        x, w = rng.standard_normal((3, 16, 16)), rng.standard_normal((2, 3, 3, 3))
        out = tiled_scatter_conv(x, w, TileConfig.for_kernel(3, tile), workers=workers)
        assert np.array_equal(out, scatter_conv_multi(x, w, ordered=True))

    def test_even_kernel(self, rng):
        x, w = rng.standard_normal((2, 9, 9)), rng.standard_normal((2, 2, 4, 4))
        out = tiled_scatter_conv(x, w, TileConfig.for_kernel(4, 2), workers=2)
        assert rel_err(out, scatter_conv_multi(x, w)) < 1e-12

    def test_counter_merges_tiles(self, rng):
        c = MultCounter()
        x, w = rng.standard_normal((2, 8, 8)), rng.standard_normal((2, 2, 3, 3))
        tiled_scatter_conv(x, w, TileConfig.for_kernel(3, 4), workers=2, counter=c)
        # halo pixels are re-multiplied by neighbouring tiles
        assert c.scalar_multiplications >= 8 * 8 * 9 * 4
        assert 0 < c.peak_aux_bytes < 2 * 8 * 8 * 8

    def test_pool_requires_maps(self, rng):
        with pytest.raises(ValueError):
            tiled_scatter_conv(rng.standard_normal((1, 4, 4)), rng.standard_normal((1, 1, 3, 3)),
                               TileConfig.for_kernel(3, 2), pool="avg")


class TestPhaseParallel:
    @pytest.mark.parametrize("workers", [1, 2, 3, 5])
    def test_matches_untiled(self, rng, workers):
        x, w = rng.standard_normal((3, 10, 7)), rng.standard_normal((2, 3, 3, 3))
        assert rel_err(phase_parallel_scatter(x, w, workers), scatter_conv_multi(x, w)) < 1e-12

    def test_one_barrier_per_offset(self, rng):
        x, w = rng.standard_normal((2, 8, 8)), rng.standard_normal((2, 2, 3, 3))
        c = MultCounter()
        phase_parallel_scatter(x, w, 4, counter=c)
        assert c.synchronizations == 9
        assert c.scalar_multiplications == 8 * 8 * 9 * 4

    def test_more_workers_than_rows(self, rng):
        x, w = rng.standard_normal((1, 2, 5)), rng.standard_normal((1, 1, 3, 3))
        assert rel_err(phase_parallel_scatter(x, w, 8), scatter_conv_multi(x, w)) < 1e-12

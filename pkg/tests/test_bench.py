import numpy as np
import pytest

from scatterconv import bench
from scatterconv.bench import (BenchRecord, CrossCheckFailed, SweepConfig, emit_csv, emit_markdown,
                               read_csv, run_sweep, speedups)


def small(**kw):
    base = dict(sizes=[8, 16, 32], cin=[4, 8], cout=[4, 8], modes=["gather", "scatter", "group_scatter"],
                repeats=1, warmup=0)
    base.update(kw)
    return SweepConfig(**base)


class TestSweep:
    def test_grid_count(self):
        assert len(run_sweep(small())) == 36

    def test_mult_columns(self):
        recs = run_sweep(small(sizes=[8], modes=list(bench.MODES)))
        by = {(r.mode, r.in_channels, r.out_channels): r for r in recs}
        for ci in (4, 8):
            for co in (4, 8):
                single = 8 * 8 * 9 * ci * co
                assert by[("gather", ci, co)].mults == single
                assert by[("scatter", ci, co)].mults == single
                assert by[("im2col_matmul", ci, co)].mults == single
                assert by[("group_scatter", ci, co)].mults == single
                assert by[("group_gather", ci, co)].mults == 4 * single
        # im2col materialises K^2 copies of the input, scatter does not
        assert by[("im2col_matmul", 8, 4)].peak_aux_bytes > by[("scatter", 8, 4)].peak_aux_bytes

    def test_p4m_and_workers(self):
        recs = run_sweep(small(sizes=[8], cin=[4], cout=[4], orientations=8, workers=2,
                               modes=["scatter", "group_gather"]))
        assert [r.mults for r in recs] == [8 * 8 * 9 * 16, 8 * 8 * 9 * 16 * 8]

    def test_oversized_kernel_skipped(self):
        assert run_sweep(small(sizes=[2, 8], cin=[4], cout=[4], modes=["gather"])) != []
        assert all(r.input_size == 8 for r in run_sweep(small(sizes=[2, 8], cin=[4], cout=[4])))

    def test_float64_cross_check(self):
        assert run_sweep(small(sizes=[8], dtype="float64", modes=list(bench.MODES)))

    def test_failing_cell_is_never_timed(self, monkeypatch):
        real = bench._runner

        def broken(mode, cfg, size):
            fn = real(mode, cfg, size)
            return (lambda x, w, c=None: fn(x, w, c) + 1.0) if mode == "scatter" else fn

        monkeypatch.setattr(bench, "_runner", broken)
        with pytest.raises(CrossCheckFailed) as exc:
            run_sweep(small(sizes=[8], cin=[4], cout=[4]))
        assert {r.mode for r in exc.value.records} == {"gather", "group_scatter"}
        assert "scatter size=8" in exc.value.failures[0]

    @pytest.mark.parametrize("kw", [dict(modes=["fft"]), dict(orientations=2), dict(repeats=0),
                                    dict(sizes=[]), dict(dtype="float16")])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            run_sweep(small(**kw))


class TestOutput:
    def test_empty_is_error_and_no_file(self, tmp_path):
        for emit in (emit_csv, emit_markdown):
            with pytest.raises(ValueError):
                emit([], tmp_path / "x")
            assert not (tmp_path / "x").exists()

    def test_one_record_two_lines(self, tmp_path):
        p = tmp_path / "one.csv"
        emit_csv([BenchRecord("gather", 8, 4, 4, 1, 3, 0.25, 2304, 0)], p)
        assert len(p.read_text().splitlines()) == 2

    def test_round_trip(self, tmp_path):
        recs = run_sweep(small(sizes=[8], repeats=2))
        p = tmp_path / "r.csv"
        emit_csv(recs, p)
        assert read_csv(p) == recs

    def test_bad_header(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_csv(p)

    def test_speedups_and_markdown(self, tmp_path):
        recs = [BenchRecord("gather", 8, 4, 4, 1, 1, 2.0, 1, 0),
                BenchRecord("scatter", 8, 4, 4, 1, 1, 1.0, 1, 0),
                BenchRecord("group_scatter", 8, 4, 4, 4, 1, 1.0, 1, 0)]
        assert speedups(recs) == [1.0, 2.0, None]
        p = tmp_path / "r.md"
        emit_markdown(recs, p)
        lines = p.read_text().splitlines()
        assert len(lines) == 5 and "2.00x" in lines[3]

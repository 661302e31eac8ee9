"""Benchmark sweep over input size, channel counts and dataflow mode.

Every cell is cross-checked against a float64 gather oracle before it is
timed; a failing cell is reported and never timed.  Wall time is the median of
``repeats`` runs after ``warmup`` untimed runs.  Timings are informational;
only the multiplication counts are asserted.
"""

from __future__ import annotations

import csv
import logging
import statistics
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .counters import MultCounter
from .group import GroupSpec, group_conv_gather, group_conv_scatter_reuse
from .reference import conv_gather_same, conv_via_matmul
from .scatter import phase_parallel_scatter, scatter_conv_multi
from .tensor import reverse_kernel

log = logging.getLogger(__name__)

MODES = ("gather", "im2col_matmul", "scatter", "group_gather", "group_scatter")
GROUP_MODES = ("group_gather", "group_scatter")
CSV_HEADER = ["mode", "input_size", "in_channels", "out_channels", "orientations",
              "repeats", "wall_ms", "mults", "peak_aux_bytes"]


@dataclass
class BenchRecord:
    mode: str
    input_size: int
    in_channels: int
    out_channels: int
    orientations: int
    repeats: int
    wall_ms: float
    mults: int
    peak_aux_bytes: int

    def cell(self) -> tuple[int, int, int]:
        return self.input_size, self.in_channels, self.out_channels


@dataclass
class SweepConfig:
    sizes: list[int] = field(default_factory=lambda: [8, 16, 32, 64, 128])
    cin: list[int] = field(default_factory=lambda: [4, 16, 64])
    cout: list[int] = field(default_factory=lambda: [4, 16, 64])
    orientations: int = 4
    modes: list[str] = field(default_factory=lambda: list(MODES))
    kernel: int = 3
    repeats: int = 20
    warmup: int = 3
    workers: int = 1
    seed: int = 0
    dtype: str = "float32"

    def validate(self) -> None:
        unknown = [m for m in self.modes if m not in MODES]
        if unknown:
            raise ValueError(f"unknown modes {unknown}; choose from {MODES}")
        if self.orientations not in (4, 8) and any(m in GROUP_MODES for m in self.modes):
            raise ValueError("group modes need orientations 4 (p4) or 8 (p4m)")
        if self.kernel < 1 or self.repeats < 1 or self.warmup < 0 or self.workers < 1:
            raise ValueError("kernel, repeats and workers must be >= 1, warmup >= 0")
        if not (self.sizes and self.cin and self.cout and self.modes):
            raise ValueError("empty sweep axis")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


class CrossCheckFailed(RuntimeError):
    def __init__(self, failures: list[str], records: list[BenchRecord]):
        super().__init__(f"{len(failures)} cell(s) failed the correctness cross-check")
        self.failures = failures
        self.records = records


def expected_mults(mode: str, size: int, cin: int, cout: int, kernel: int, orientations: int) -> int:
    base = size * size * kernel * kernel * cin * cout
    return base * orientations if mode == "group_gather" else base


def _group(orientations: int) -> GroupSpec:
    return GroupSpec("p4" if orientations == 4 else "p4m")


def _runner(mode: str, cfg: SweepConfig, size: int):
    group = _group(cfg.orientations) if mode in GROUP_MODES else None
    if mode == "gather":
        return lambda x, w, c=None: conv_gather_same(x, w, c)
    if mode == "im2col_matmul":
        return lambda x, w, c=None: conv_via_matmul(x, w, padding="same", counter=c)
    if mode == "scatter":
        if cfg.workers > 1:
            return lambda x, w, c=None: phase_parallel_scatter(x, w, cfg.workers, counter=c)
        return lambda x, w, c=None: scatter_conv_multi(x, w, c)
    if mode == "group_gather":
        return lambda x, w, c=None: group_conv_gather(x, w, group, c)
    return lambda x, w, c=None: group_conv_scatter_reuse(x, w, group, c)


def _oracle(x: np.ndarray, w: np.ndarray, mode: str, orientations: int) -> np.ndarray:
    x64, w64 = x.astype(np.float64), w.astype(np.float64)
    if mode in GROUP_MODES:
        return group_conv_gather(x64, w64, _group(orientations))
    if mode == "scatter":
        # plain scatter stamps the kernel in its own layout
        return conv_gather_same(x64, reverse_kernel(w64))
    return conv_gather_same(x64, w64)


def _cell_seed(seed: int, size: int, cin: int, cout: int) -> np.random.Generator:
    return np.random.default_rng([seed, size, cin, cout])


def run_sweep(cfg: SweepConfig, progress=None) -> list[BenchRecord]:
    """Time every (size, C_in, C_out, mode) cell; raises :class:`CrossCheckFailed` at the end
    if any cell's output disagrees with the oracle."""
    cfg.validate()
    dtype = np.dtype(cfg.dtype)
    rtol = 1e-4 if dtype == np.float32 else 1e-12
    records: list[BenchRecord] = []
    failures: list[str] = []
    for size in cfg.sizes:
        if cfg.kernel > size:
            log.warning("skipping size %d: kernel %d larger than input", size, cfg.kernel)
            continue
        for cin in cfg.cin:
            for cout in cfg.cout:
                rng = _cell_seed(cfg.seed, size, cin, cout)
                x = rng.standard_normal((cin, size, size)).astype(dtype)
                w = rng.standard_normal((cout, cin, cfg.kernel, cfg.kernel)).astype(dtype)
                for mode in cfg.modes:
                    fn = _runner(mode, cfg, size)
                    counter = MultCounter()
                    out = fn(x, w, counter)
                    ref = _oracle(x, w, mode, cfg.orientations)
                    err = float(np.max(np.abs(out - ref)) / max(np.max(np.abs(ref)), 1e-30))
                    n_orient = cfg.orientations if mode in GROUP_MODES else 1
                    want = expected_mults(mode, size, cin, cout, cfg.kernel, n_orient)
                    label = f"{mode} size={size} cin={cin} cout={cout}"
                    if err > rtol:
                        failures.append(f"{label}: relative error {err:.3e} > {rtol:g}")
                        continue
                    if counter.scalar_multiplications != want:
                        failures.append(f"{label}: mults {counter.scalar_multiplications} != {want}")
                        continue
                    for _ in range(cfg.warmup):
                        fn(x, w)
                    times = []
                    for _ in range(cfg.repeats):
                        t0 = time.perf_counter()
                        fn(x, w)
                        times.append((time.perf_counter() - t0) * 1e3)
                    rec = BenchRecord(mode, size, cin, cout, n_orient, cfg.repeats,
                                      max(statistics.median(times), 1e-9),
                                      counter.scalar_multiplications, counter.peak_aux_bytes)
                    records.append(rec)
                    if progress is not None:
                        progress(rec)
    if failures:
        for f in failures:
            log.error("cross-check failed: %s", f)
        raise CrossCheckFailed(failures, records)
    return records


def emit_csv(records: list[BenchRecord], path) -> None:
    if not records:
        raise ValueError("no records to write")
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow([r.mode, r.input_size, r.in_channels, r.out_channels, r.orientations,
                             r.repeats, repr(float(r.wall_ms)), r.mults, r.peak_aux_bytes])


def read_csv(path) -> list[BenchRecord]:
    types = {f.name: f.type for f in fields(BenchRecord)}
    conv = {"str": str, "int": int, "float": float}
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        for row in reader:
            out.append(BenchRecord(**{k: conv[types[k]](v) for k, v in row.items()}))
    return out


def speedups(records: list[BenchRecord]) -> list[float | None]:
    """Per-record ``baseline_ms / wall_ms`` against the same cell's gather-style mode."""
    base: dict[tuple, float] = {}
    for r in records:
        if r.mode in ("gather", "group_gather"):
            base[(r.mode == "group_gather",) + r.cell()] = r.wall_ms
    return [
        (base[key] / r.wall_ms) if (key := (r.mode in GROUP_MODES,) + r.cell()) in base else None
        for r in records
    ]


def emit_markdown(records: list[BenchRecord], path) -> None:
    if not records:
        raise ValueError("no records to write")
    lines = ["| " + " | ".join(CSV_HEADER + ["speedup"]) + " |",
             "|" + "---|" * (len(CSV_HEADER) + 1)]
    for r, s in zip(records, speedups(records)):
        cells = [r.mode, r.input_size, r.in_channels, r.out_channels, r.orientations,
                 r.repeats, f"{r.wall_ms:.4f}", r.mults, r.peak_aux_bytes,
                 "" if s is None else f"{s:.2f}x"]
        lines.append("| " + " | ".join(str(c) for c in cells) + " |")
    Path(path).write_text("\n".join(lines) + "\n")

"""Dense matrix primitives and the block-masked sparse multiply.

Matrices are plain 2-D float64 C-order numpy arrays throughout. Accumulation
order is fixed (per output element, inner product over k ascending) in both
the dense and masked kernels, so equality tests can be exact: the masked
product with all-ones masks is bit-identical to :func:`matmul`.
"""

import csv
import time
from dataclasses import dataclass

import numpy as np

from condnet import kernels


def require_matrix(a, name="matrix"):
    """Validate an externally supplied array: 2-D, finite, float64 C-order."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name}: expected 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: contains non-finite entries")
    return np.ascontiguousarray(a)


@dataclass(frozen=True)
class BlockMask:
    """Per-example binary block-activation pattern.

    ``bits`` is (examples, n_blocks) with entries in {0, 1}; each block bit
    governs ``block_size`` contiguous units.
    """

    bits: np.ndarray
    block_size: int

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2:
            raise ValueError(f"mask bits must be 2-D, got shape {bits.shape}")
        if self.block_size < 1:
            raise ValueError(f"block_size must be >= 1, got {self.block_size}")
        if bits.size and bits.max() > 1:
            raise ValueError("mask bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @property
    def examples(self):
        return self.bits.shape[0]

    @property
    def n_blocks(self):
        return self.bits.shape[1]

    @property
    def unit_width(self):
        return self.n_blocks * self.block_size


def ones_mask(examples, n_blocks, block_size=1):
    return BlockMask(np.ones((examples, n_blocks), dtype=np.uint8), block_size)


def expand_mask(mask):
    """Unit-level 0/1 matrix: each block bit repeated block_size times."""
    return np.repeat(mask.bits, mask.block_size, axis=1).astype(np.float64)


def matmul(a, b):
    """Dense product with deterministic k-ascending accumulation."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return kernels.get_impl().matmul(a, b)


def masked_matmul(h, w, in_mask, out_mask):
    """Compute ``(h * expand(in_mask)) @ w * expand(out_mask)`` while doing
    work only for active blocks, per example, on both sides."""
    h = np.ascontiguousarray(h, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if h.ndim != 2 or w.ndim != 2 or h.shape[1] != w.shape[0]:
        raise ValueError(f"masked_matmul shape mismatch: {h.shape} x {w.shape}")
    if in_mask.unit_width != h.shape[1]:
        raise ValueError(
            f"input mask covers {in_mask.unit_width} units, h has {h.shape[1]} columns"
        )
    if out_mask.unit_width != w.shape[1]:
        raise ValueError(
            f"output mask covers {out_mask.unit_width} units, w has {w.shape[1]} columns"
        )
    if in_mask.examples != h.shape[0] or out_mask.examples != h.shape[0]:
        raise ValueError(
            f"mask rows ({in_mask.examples}, {out_mask.examples}) must equal h rows ({h.shape[0]})"
        )
    return kernels.get_impl().masked_matmul(
        h, w, in_mask.bits, out_mask.bits, in_mask.block_size, out_mask.block_size
    )


@dataclass
class BenchResult:
    rows: int
    inner: int
    cols: int
    block_size: int
    sparsity: float
    dense_ns: int
    sparse_ns: int

    @property
    def speedup(self):
        return self.dense_ns / self.sparse_ns


def _median_time_ns(fn, trials):
    fn()  # warm-up discarded (also triggers JIT compilation)
    times = []
    for _ in range(trials):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    return int(np.median(times))


def bench_masked_matmul(rows, inner, cols, block_size, sparsity, trials=5, seed=0):
    """Time the masked kernel against the dense kernel on one size point.

    Masks are i.i.d. Bernoulli(sparsity) per block; wall-clock median over
    ``trials`` after a discarded warm-up. Kernels are single-threaded by
    construction, so no thread pinning is needed.
    """
    if not 0.0 < sparsity <= 1.0:
        raise ValueError(f"sparsity must be in (0, 1], got {sparsity}")
    if inner % block_size or cols % block_size:
        raise ValueError("inner and cols must be divisible by block_size")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    h = rng.standard_normal((rows, inner))
    w = rng.standard_normal((inner, cols))
    in_mask = BlockMask(
        (rng.random((rows, inner // block_size)) < sparsity).astype(np.uint8),
        block_size,
    )
    out_mask = BlockMask(
        (rng.random((rows, cols // block_size)) < sparsity).astype(np.uint8),
        block_size,
    )
    dense_ns = _median_time_ns(lambda: matmul(h, w), trials)
    sparse_ns = _median_time_ns(
        lambda: masked_matmul(h, w, in_mask, out_mask), trials
    )
    return BenchResult(rows, inner, cols, block_size, sparsity, dense_ns, sparse_ns)


BENCH_CSV_HEADER = ["rows", "inner", "cols", "block_size", "sparsity", "dense_ns", "sparse_ns", "speedup"]


def write_bench_csv(results, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_CSV_HEADER)
        for r in results:
            writer.writerow(
                [r.rows, r.inner, r.cols, r.block_size, r.sparsity,
                 r.dense_ns, r.sparse_ns, f"{r.speedup:.4f}"]
            )

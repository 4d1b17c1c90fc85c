"""Pure-numpy fallback kernels.

Accumulation mirrors the JIT kernels exactly: one rank-1 update per k, so
each output element sees the same rounded multiply/add sequence (k ascending)
as the scalar triple loop. Slower, but bit-compatible and dependency-free.
"""

import numpy as np


def matmul(a, b):
    m, kk = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for k in range(kk):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def masked_matmul(h, w, in_bits, out_bits, in_block, out_block):
    m = h.shape[0]
    n = w.shape[1]
    out = np.zeros((m, n))
    in_units = np.repeat(in_bits, in_block, axis=1)
    out_units = np.repeat(out_bits, out_block, axis=1)
    for i in range(m):
        k_idx = np.nonzero(in_units[i])[0]
        j_idx = np.nonzero(out_units[i])[0]
        if k_idx.size == 0 or j_idx.size == 0:
            continue
        acc = np.zeros(j_idx.size)
        row = h[i]
        for k in k_idx:
            acc += row[k] * w[k, j_idx]
        out[i, j_idx] = acc
    return out

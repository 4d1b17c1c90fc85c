"""JIT-compiled matrix kernels (the hot path).

Both kernels accumulate each output element as an inner product over k in
ascending order, with every multiply and add rounded separately (no fastmath,
so LLVM cannot contract to FMA or reassociate). This makes them bit-identical
to a naive scalar triple loop, which is what the test oracles assume.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def matmul(a, b):
    m, kk = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for k in range(kk):
            v = a[i, k]
            for j in range(n):
                out[i, j] += v * b[k, j]
    return out


@njit(cache=True)
def masked_matmul(h, w, in_bits, out_bits, in_block, out_block):
    """Block-masked product: rows of ``h`` only touch their active input
    blocks, and only active output blocks are written.

    Skipped terms are exactly the zero entries of the masked dense product,
    so the result is bit-identical to the expand-then-multiply expression.
    """
    m = h.shape[0]
    n = w.shape[1]
    n_in_blocks = in_bits.shape[1]
    n_out_blocks = out_bits.shape[1]
    out = np.zeros((m, n))
    active_in = np.empty(n_in_blocks, dtype=np.int64)
    active_out = np.empty(n_out_blocks, dtype=np.int64)
    for i in range(m):
        n_act_in = 0
        for b in range(n_in_blocks):
            if in_bits[i, b] != 0:
                active_in[n_act_in] = b
                n_act_in += 1
        n_act_out = 0
        for b in range(n_out_blocks):
            if out_bits[i, b] != 0:
                active_out[n_act_out] = b
                n_act_out += 1
        for bi in range(n_act_in):
            k0 = active_in[bi] * in_block
            for k in range(k0, k0 + in_block):
                v = h[i, k]
                for bj in range(n_act_out):
                    j0 = active_out[bj] * out_block
                    for j in range(j0, j0 + out_block):
                        out[i, j] += v * w[k, j]
    return out

"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np

# rows processed per chunk, keeps integer temporaries small for large matrices
_CHUNK = 256


def _wrap_table(m):
    k = np.arange(2 * m - 1) - (m - 1)
    r = np.mod(k, m)
    return np.where(r >= (m + 1) // 2, r - m, r)


def displacement_weight(a, coord, m, out):
    """out[r, c] = wrap(coord[r] - coord[c]) * a[r, c]; ``out`` may alias ``a``."""
    table = _wrap_table(m)
    n = a.shape[0]
    for r0 in range(0, n, _CHUNK):
        r1 = min(r0 + _CHUNK, n)
        w = table[coord[r0:r1, None] - coord[None, :] + (m - 1)]
        np.multiply(a[r0:r1], w, out=out[r0:r1])
    return out


def displacement_weight_sq_sum(a, coord, m):
    """Return sum_{r,c} wrap(coord[r] - coord[c])**2 * |a[r, c]|**2."""
    table = _wrap_table(m).astype(float) ** 2
    n = a.shape[0]
    total = 0.0
    for r0 in range(0, n, _CHUNK):
        r1 = min(r0 + _CHUNK, n)
        w = table[coord[r0:r1, None] - coord[None, :] + (m - 1)]
        blk = a[r0:r1]
        total += float(np.sum(w * (blk.real ** 2 + blk.imag ** 2)))
    return total


def kubo_denominator(m1, eps, gamma, out):
    """out[a, b] = m1[b, a] / (gamma + i (eps[a] - eps[b]))."""
    n = m1.shape[0]
    for r0 in range(0, n, _CHUNK):
        r1 = min(r0 + _CHUNK, n)
        den = gamma + 1j * (eps[r0:r1, None] - eps[None, :])
        np.divide(m1[:, r0:r1].T, den, out=out[r0:r1])
    return out


def scatter_add_blocks(h, row_cell, col_cell, blocks):
    """Add blocks[x] into the (row_cell[x], col_cell[x]) fiber block of ``h``."""
    nf = blocks.shape[1]
    fib = np.arange(nf)
    rows = (row_cell[:, None, None] * nf + fib[None, :, None])
    cols = (col_cell[:, None, None] * nf + fib[None, None, :])
    rows, cols = np.broadcast_arrays(rows, cols)
    np.add.at(h, (rows.ravel(), cols.ravel()), blocks.ravel())
    return h


def chain_lyapunov(t, m, energy):
    """Top Lyapunov exponent of the two-channel chiral chain transfer product."""
    u1, u2 = 0.8 + 0j, 0.6j
    total = 0.0
    n = len(t) - 1
    for x in range(n):
        a2 = (energy * u1 + 1j * m[x] * u2) / t[x]
        a1 = (energy * a2 - t[x] * u1) / (1j * m[x + 1])
        nrm = np.sqrt(abs(a1) ** 2 + abs(a2) ** 2)
        total += np.log(nrm)
        u1, u2 = a1 / nrm, a2 / nrm
    return total / n

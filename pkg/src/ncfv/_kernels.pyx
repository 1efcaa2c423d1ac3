# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled O(n^2) kernels.

Every function here has a pure numpy twin in ``_kernels_py`` with the same
signature and semantics; ``ncfv.kernels`` picks one at import time.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt

cnp.import_array()

cdef inline long _wrap(long r, long m) noexcept nogil:
    # representative of r mod m in [-floor(m/2), ceil(m/2) - 1]
    r = r % m
    if r < 0:
        r += m
    if r >= (m + 1) // 2:
        r -= m
    return r


cdef long[::1] _wrap_table(long m):
    cdef long[::1] table = np.empty(2 * m - 1, dtype=np.int64)
    cdef long k
    for k in range(2 * m - 1):
        table[k] = _wrap(k - (m - 1), m)
    return table


cdef void _weight_rows(const double[:, ::1] a, double[:, ::1] out, const long[::1] coord,
                       const long[::1] table, long m, Py_ssize_t width) noexcept nogil:
    # width = 1 for real data, 2 for complex data viewed as interleaved doubles
    cdef Py_ssize_t n = coord.shape[0], r, c, k
    cdef long cr
    cdef double w
    for r in range(n):
        cr = coord[r] + m - 1
        for c in range(n):
            w = <double>table[cr - coord[c]]
            for k in range(width):
                out[r, width * c + k] = w * a[r, width * c + k]


def displacement_weight(a, const long[::1] coord, long m, out):
    """out[r, c] = wrap(coord[r] - coord[c]) * a[r, c]; ``out`` may alias ``a``."""
    cdef long[::1] table = _wrap_table(m)
    cdef Py_ssize_t width = 2 if np.iscomplexobj(a) else 1
    cdef const double[:, ::1] av = a.view(np.float64)
    cdef double[:, ::1] ov = out.view(np.float64)
    with nogil:
        _weight_rows(av, ov, coord, table, m, width)
    return out


def displacement_weight_sq_sum(a, const long[::1] coord, long m):
    """Return sum_{r,c} wrap(coord[r] - coord[c])**2 * |a[r, c]|**2."""
    cdef long[::1] table = _wrap_table(m)
    cdef Py_ssize_t width = 2 if np.iscomplexobj(a) else 1
    cdef const double[:, ::1] av = a.view(np.float64)
    cdef Py_ssize_t n = coord.shape[0], r, c, k
    cdef double total = 0.0, row, cell, w, v
    cdef long cr
    with nogil:
        for r in range(n):
            cr = coord[r] + m - 1
            row = 0.0
            for c in range(n):
                w = <double>table[cr - coord[c]]
                cell = 0.0
                for k in range(width):
                    v = av[r, width * c + k]
                    cell = cell + v * v
                row = row + w * w * cell
            total += row
    return total


def kubo_denominator(m1, const double[::1] eps, double gamma, out):
    """out[a, b] = m1[b, a] / (gamma + i (eps[a] - eps[b]))."""
    cdef const double[:, ::1] mv = m1.view(np.float64)
    cdef double[:, ::1] ov = out.view(np.float64)
    cdef Py_ssize_t n = eps.shape[0], a0, b0, a, b, a1, b1
    cdef double de, den, mr, mi, g2 = gamma * gamma
    cdef Py_ssize_t TILE = 32
    with nogil:
        # tiles keep the transposed reads in cache
        a0 = 0
        while a0 < n:
            a1 = min(a0 + TILE, n)
            b0 = 0
            while b0 < n:
                b1 = min(b0 + TILE, n)
                for a in range(a0, a1):
                    for b in range(b0, b1):
                        de = eps[a] - eps[b]
                        den = g2 + de * de
                        mr = mv[b, 2 * a]
                        mi = mv[b, 2 * a + 1]
                        # (mr + i mi) (gamma - i de) / den
                        ov[a, 2 * b] = (mr * gamma + mi * de) / den
                        ov[a, 2 * b + 1] = (mi * gamma - mr * de) / den
                b0 = b1
            a0 = a1
    return out


def scatter_add_blocks(double complex[:, ::1] h, const long[::1] row_cell,
                       const long[::1] col_cell, double complex[:, :, ::1] blocks):
    """Add blocks[x] into the (row_cell[x], col_cell[x]) fiber block of ``h``."""
    cdef Py_ssize_t ncell = blocks.shape[0], nf = blocks.shape[1]
    cdef Py_ssize_t x, al, be, r0, c0
    with nogil:
        for x in range(ncell):
            r0 = row_cell[x] * nf
            c0 = col_cell[x] * nf
            for al in range(nf):
                for be in range(nf):
                    h[r0 + al, c0 + be] = h[r0 + al, c0 + be] + blocks[x, al, be]
    return np.asarray(h)


def chain_lyapunov(const double[::1] t, const double[::1] m, double energy):
    """Top Lyapunov exponent of the two-channel chiral chain transfer product.

    The recursion maps (psi_{x,1}, psi_{x,2}) to (psi_{x+1,1}, psi_{x+1,2}) for
    ``H = sum_x m_x sigma_2 |x><x| + t_x (sigma_+ |x><x+1| + h.c.)`` at the
    given energy. A generic start vector is propagated and renormalized at
    every step; the mean log growth is the top exponent.
    """
    cdef Py_ssize_t n = t.shape[0] - 1, x
    cdef double complex u1 = 0.8, u2 = 0.6j, a1, a2
    cdef double nrm, total = 0.0
    with nogil:
        for x in range(n):
            # psi_{x+1,2} = (E psi_{x,1} + i m_x psi_{x,2}) / t_x
            # psi_{x+1,1} = (E psi_{x+1,2} - t_x psi_{x,1}) / (i m_{x+1})
            a2 = (energy * u1 + 1j * m[x] * u2) / t[x]
            a1 = (energy * a2 - t[x] * u1) / (1j * m[x + 1])
            nrm = sqrt(a1.real * a1.real + a1.imag * a1.imag
                       + a2.real * a2.real + a2.imag * a2.imag)
            total += log(nrm)
            u1 = a1 / nrm
            u2 = a2 / nrm
    return total / n

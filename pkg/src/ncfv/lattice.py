"""Finite torus geometry, quantized flux, dense operators and the finite calculus.

Sites of the torus are ordered cell-major and fiber-minor: the site index of
fiber state ``alpha`` in cell ``x`` is ``cell_index(x) * N + alpha`` and cells
are enumerated lexicographically (last direction fastest), as ``np.ndindex``.

Magnetic phases use the gauge

    <x| H |x - y> = B_y[x] * exp(i (beta(y, x) - beta(y, y) / 2)),
    beta(a, b) = sum_{i<j} phi_ij a_i b_j,

which is related to the symmetric gauge ``exp(i y ^ x)`` with
``y ^ x = (1/2) sum_ij phi_ij y_i x_j`` by the diagonal unitary
``exp(i beta(X, X) / 2)``. Unlike the symmetric gauge it is single valued on
the torus for every quantized flux, and diagonal unitaries commute with both
the approximate derivations and the trace, so no observable depends on the
choice.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np

from . import kernels
from .errors import FluxNotQuantized, NotHermitian, RangeTooLarge, ValidationError

if TYPE_CHECKING:
    from .models import HoppingModel

HERMITIAN_TOL = 1e-12


@dataclass(frozen=True)
class TorusGeometry:
    """Discrete torus ``Z_{M_1} x ... x Z_{M_d}`` with an ``N``-dimensional fiber.

    Parameters
    ----------
    sizes : tuple of int
        Cell counts per direction, each at least 2.
    fiber : int
        Number of internal states per cell.
    """

    sizes: tuple
    fiber: int = 1

    def __post_init__(self):
        sizes = tuple(int(m) for m in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if not 1 <= len(sizes) <= 4:
            raise ValidationError(f"dimension must be 1..4, got {len(sizes)}")
        if any(m < 2 for m in sizes):
            raise ValidationError(f"every size must be >= 2, got {sizes}")
        if int(self.fiber) < 1:
            raise ValidationError("fiber dimension must be >= 1")
        object.__setattr__(self, "fiber", int(self.fiber))

    @property
    def d(self):
        return len(self.sizes)

    @property
    def ncells(self):
        return math.prod(self.sizes)

    @property
    def dim(self):
        return self.fiber * self.ncells

    def with_fiber(self, fiber):
        return TorusGeometry(self.sizes, fiber)

    @cached_property
    def cell_coords(self):
        """Integer array of shape ``(ncells, d)`` with the cell multi-indices."""
        grids = np.indices(self.sizes).reshape(self.d, -1)
        return np.ascontiguousarray(grids.T, dtype=np.int64)

    def site_coord(self, j):
        """Coordinate ``x_j`` of the cell of every site, shape ``(dim,)``."""
        return np.ascontiguousarray(np.repeat(self.cell_coords[:, j], self.fiber))

    def cell_index(self, x):
        """Linear index of the cell with multi-index ``x`` (taken mod the sizes)."""
        x = np.mod(np.asarray(x, dtype=np.int64), self.sizes)
        return np.ravel_multi_index(tuple(np.moveaxis(x, -1, 0)), self.sizes)

    def site_index(self, x, alpha=0):
        return int(self.cell_index(x)) * self.fiber + int(alpha)

    def shifted_cells(self, y):
        """Linear index of ``x - y`` for every cell ``x``."""
        return self.cell_index(self.cell_coords - np.asarray(y, dtype=np.int64))

    def roll(self, values, y):
        """Return ``out`` with ``out[x] = values[x - y]`` along the cell axis."""
        return np.asarray(values)[self.shifted_cells(y)]


def wrap(delta, m):
    """Minimal periodic representative of ``delta`` mod ``m``.

    The result lies in ``[-floor(m/2), ceil(m/2) - 1]``; for even ``m`` the
    tie at ``m/2`` goes to ``-m/2``.
    """
    r = np.mod(delta, m)
    return np.where(r >= (m + 1) // 2, r - m, r)


def wrap_displacement(x, xp, geometry):
    """Minimal periodic representative of ``x - xp`` per direction.

    Parameters
    ----------
    x, xp : sequence of int
        Cell multi-indices.
    geometry : TorusGeometry

    Returns
    -------
    tuple of int
    """
    delta = np.asarray(x, dtype=np.int64) - np.asarray(xp, dtype=np.int64)
    return tuple(int(v) for v in wrap(delta, np.asarray(geometry.sizes)))


def quantize_flux(target, m):
    """Nearest flux fraction with denominator ``m``.

    Returns
    -------
    n : int
        ``round(target * m)`` with halves rounded up.
    f : Fraction
        ``n / m``.
    """
    if int(m) < 2:
        raise ValidationError("torus size must be >= 2")
    n = math.floor(Fraction(target).limit_denominator(10**12) * m + Fraction(1, 2))
    return n, Fraction(n, m)


@dataclass(frozen=True)
class FluxMatrix:
    """Antisymmetric matrix of flux fractions ``f_ij`` (flux ``phi_ij = 2 pi f_ij``).

    Only the upper triangle is stored, as exact rationals.
    """

    d: int
    upper: tuple = ()  # ((i, j, Fraction), ...) with i < j and f != 0

    def __post_init__(self):
        clean = []
        for i, j, f in self.upper:
            i, j, f = int(i), int(j), Fraction(f)
            if not 0 <= i < j < self.d:
                raise ValidationError(f"flux index pair ({i}, {j}) must satisfy i < j < d")
            if f != 0:
                clean.append((i, j, f))
        object.__setattr__(self, "upper", tuple(sorted(clean)))

    @classmethod
    def zero(cls, d):
        return cls(d)

    @classmethod
    def planar(cls, f, d=2):
        """Flux ``f`` through the (0, 1) plane."""
        return cls(d, ((0, 1, Fraction(f)),))

    @classmethod
    def quantized(cls, targets, geometry):
        """Quantize ``{(i, j): target}`` on ``geometry``.

        The denominator for the pair ``(i, j)`` is ``gcd(M_i, M_j)``.
        """
        upper = []
        for (i, j), t in dict(targets).items():
            m = math.gcd(geometry.sizes[i], geometry.sizes[j])
            upper.append((i, j, quantize_flux(t, m)[1]))
        return cls(geometry.d, tuple(upper))

    def fraction(self, i, j):
        if i == j:
            return Fraction(0)
        sign = 1
        if i > j:
            i, j, sign = j, i, -1
        for a, b, f in self.upper:
            if (a, b) == (i, j):
                return sign * f
        return Fraction(0)

    def matrix(self):
        """Float matrix of ``phi_ij = 2 pi f_ij``."""
        out = np.zeros((self.d, self.d))
        for i, j, f in self.upper:
            out[i, j] = 2 * np.pi * float(f)
            out[j, i] = -out[i, j]
        return out

    def check(self, geometry):
        """Raise ``FluxNotQuantized`` unless every ``f_ij M_i`` and ``f_ij M_j`` is integral."""
        if geometry.d != self.d:
            raise ValidationError("flux and geometry dimensions differ")
        for i, j, f in self.upper:
            for m in (geometry.sizes[i], geometry.sizes[j]):
                if (f * m).denominator != 1:
                    raise FluxNotQuantized(f"f_{i}{j} = {f} is not a multiple of 1/{m}")

    def phase(self, a, b, half_ab=None):
        """``exp(i (beta(a, b) + beta(half_ab, half_ab) / 2))`` computed exactly mod 2 pi.

        ``a`` and ``b`` are integer arrays broadcastable against each other
        with the direction on the last axis.
        """
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        shape = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
        if half_ab is not None:
            half_ab = np.asarray(half_ab, dtype=np.int64)
            shape = np.broadcast_shapes(shape, half_ab.shape[:-1])
        out = np.ones(shape, dtype=complex)
        for i, j, f in self.upper:
            p, q = f.numerator, f.denominator
            # 2 q * (f a_i b_j [+ f c_i c_j / 2]) is an integer, reduce it mod 2q
            k = 2 * p * a[..., i] * b[..., j]
            if half_ab is not None:
                k = k + p * half_ab[..., i] * half_ab[..., j]
            k = np.mod(k, 2 * q)
            out = out * np.exp(1j * np.pi * k / q)
        return out


def hopping_phase(flux, geometry, y):
    """Phase of ``<x|H|x-y>`` for every cell ``x``: ``exp(i (beta(y,x) - beta(y,y)/2))``."""
    y = np.asarray(y, dtype=np.int64)
    if not flux.upper:
        return np.ones(geometry.ncells, dtype=complex)
    # beta(y, x) - beta(y, y) / 2 = beta(y, x - y) + beta(y, y) / 2
    return flux.phase(y[None, :], geometry.cell_coords - y[None, :], y[None, :])


@dataclass(frozen=True, eq=False)
class FiniteOperator:
    """Dense operator on ``C^N (x) l^2(torus)``.

    Parameters
    ----------
    geometry : TorusGeometry
    data : ndarray
        Square matrix of size ``geometry.dim``.
    hermitian : bool
        When set, the constructor verifies ``max|A - A^dagger| <= 1e-12``.
    """

    geometry: TorusGeometry
    data: np.ndarray = field(repr=False)
    hermitian: bool = False

    def __post_init__(self):
        data = np.asarray(self.data)
        n = self.geometry.dim
        if data.shape != (n, n):
            raise ValidationError(f"operator shape {data.shape} does not match dimension {n}")
        object.__setattr__(self, "data", data)
        if self.hermitian:
            err = hermiticity_defect(data)
            if err > HERMITIAN_TOL:
                raise NotHermitian(f"max |A - A^dagger| = {err:.3e}")

    @classmethod
    def identity(cls, geometry):
        return cls(geometry, np.eye(geometry.dim, dtype=complex), hermitian=True)

    @classmethod
    def zeros(cls, geometry):
        return cls(geometry, np.zeros((geometry.dim, geometry.dim), dtype=complex), True)

    @property
    def shape(self):
        return self.data.shape

    def dagger(self):
        return FiniteOperator(self.geometry, self.data.conj().T, self.hermitian)

    def _wrap(self, data, hermitian=False):
        return FiniteOperator(self.geometry, data, hermitian)

    def __matmul__(self, other):
        return self._wrap(self.data @ _data(other))

    def __add__(self, other):
        herm = self.hermitian and getattr(other, "hermitian", False)
        return self._wrap(self.data + _data(other), herm)

    def __sub__(self, other):
        herm = self.hermitian and getattr(other, "hermitian", False)
        return self._wrap(self.data - _data(other), herm)

    def __mul__(self, scalar):
        herm = self.hermitian and np.isreal(scalar)
        return self._wrap(self.data * scalar, bool(herm))

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.data, self.hermitian)


def _data(a):
    return a.data if isinstance(a, FiniteOperator) else np.asarray(a)


def hermiticity_defect(a):
    """``max |a - a^dagger|`` computed in row blocks to bound memory."""
    a = _data(a)
    n = a.shape[0]
    worst = 0.0
    for r0 in range(0, n, 512):
        r1 = min(r0 + 512, n)
        blk = np.abs(a[r0:r1] - a[:, r0:r1].conj().T)
        if blk.size:
            worst = max(worst, float(blk.max()))
    return worst


@dataclass(frozen=True, eq=False)
class DisorderConfig:
    """One disorder sample: real variables per cell and channel.

    Attributes
    ----------
    values : ndarray
        Shape ``(ncells, channels)``, entries in ``[-1/2, 1/2]``.
    master_seed, index : int or None
        Provenance of the sample.
    """

    values: np.ndarray
    master_seed: int | None = None
    index: int | None = None

    @classmethod
    def zeros(cls, geometry, channels):
        return cls(np.zeros((geometry.ncells, channels)))

    @property
    def channels(self):
        return self.values.shape[1]

    def translated(self, geometry, y):
        """Shifted sample ``(tau_y omega)_x = omega_{x - y}``."""
        return DisorderConfig(geometry.roll(self.values, y), self.master_seed, self.index)


def _check_range(model, geometry):
    for y, _ in model.hoppings:
        for j, (yj, m) in enumerate(zip(y, geometry.sizes)):
            # range equal to M/2 is accepted so that M = 2 tori work as small test cases
            if 2 * abs(yj) > m:
                raise RangeTooLarge(
                    f"hopping {y} has range {abs(yj)} > M_{j}/2 = {m / 2}")


def build_hamiltonian(model: HoppingModel, geometry, flux=None, config=None):
    """Assemble the finite-volume Hamiltonian of ``model`` on ``geometry``.

    Parameters
    ----------
    model : HoppingModel
        Supplies the on-site term (``y = 0``) and the hoppings with ``y > 0``
        in lexicographic order; the remaining half is added as the conjugate
        transpose.
    geometry : TorusGeometry
        Its fiber must equal ``model.N``.
    flux : FluxMatrix, optional
        Defaults to zero flux.
    config : DisorderConfig, optional
        Defaults to the all-zero sample.

    Returns
    -------
    FiniteOperator
        Hermitian, with ``<alpha,x|H|beta,x-y> = [B_y(x)]_{alpha beta} e^{i theta(x,y)}``.
    """
    if geometry.d != model.d or geometry.fiber != model.N:
        raise ValidationError(
            f"geometry (d={geometry.d}, N={geometry.fiber}) does not fit model "
            f"(d={model.d}, N={model.N})")
    flux = FluxMatrix.zero(geometry.d) if flux is None else flux
    flux.check(geometry)
    _check_range(model, geometry)
    if config is None:
        config = DisorderConfig.zeros(geometry, model.channels)
    omega = np.asarray(config.values, dtype=float)
    if omega.shape != (geometry.ncells, model.channels):
        raise ValidationError(
            f"disorder shape {omega.shape} != {(geometry.ncells, model.channels)}")

    n, nf = geometry.dim, geometry.fiber
    h = np.zeros((n, n), dtype=complex)
    cells = np.arange(geometry.ncells, dtype=np.int64)
    for y, coeff in model.hoppings:
        blocks = np.ascontiguousarray(
            np.broadcast_to(coeff(omega, geometry), (geometry.ncells, nf, nf)),
            dtype=complex)
        if not any(y):
            blocks = 0.5 * (blocks + blocks.conj().transpose(0, 2, 1))
            kernels.scatter_add_blocks(h, cells, cells, np.ascontiguousarray(blocks))
            continue
        blocks = blocks * hopping_phase(flux, geometry, y)[:, None, None]
        cols = np.ascontiguousarray(geometry.shifted_cells(y), dtype=np.int64)
        kernels.scatter_add_blocks(h, cells, cols, np.ascontiguousarray(blocks))
        kernels.scatter_add_blocks(
            h, cols, cells, np.ascontiguousarray(blocks.conj().transpose(0, 2, 1)))
    return FiniteOperator(geometry, h, hermitian=True)


def weighted_by_displacement(a, geometry, j, out=None):
    """Elementwise product ``wrap(x - x')_j * a`` (same dtype as ``a``)."""
    a = np.ascontiguousarray(_data(a))
    if out is None:
        out = np.empty_like(a)
    kernels.displacement_weight(a, geometry.site_coord(j), geometry.sizes[j], out)
    return out


def approximate_derivation(a, j, geometry=None):
    """Approximate derivation ``(d_j A)_{rc} = -i wrap(x_r - x_c)_j A_{rc}``.

    Parameters
    ----------
    a : FiniteOperator
    j : int
        Direction, 0-based.

    Returns
    -------
    FiniteOperator
        Hermitian whenever ``a`` is Hermitian and ``M_j`` is odd (for even
        ``M_j`` the tie entries at displacement ``M_j/2`` break the symmetry).
    """
    geometry = a.geometry if geometry is None else geometry
    data = np.ascontiguousarray(_data(a), dtype=complex)
    out = weighted_by_displacement(data, geometry, j)
    out *= -1j
    herm = bool(getattr(a, "hermitian", False)) and geometry.sizes[j] % 2 == 1
    return FiniteOperator(geometry, out, herm)


def root_of_unity_derivation(a, j):
    """Approximate derivation through the root-of-unity sum.

    ``-i sum_{lambda^M = 1, lambda != 1} c_lambda lambda^X A lambda^-X`` with
    ``c_lambda = lambda^-L / (1 - lambda)`` and ``M = 2L + 1``; these are the
    discrete Fourier coefficients of ``n -> n`` on ``{-L, ..., L}``. Only odd
    ``M_j`` is supported. It equals :func:`approximate_derivation` and serves
    as an independent check of it.
    """
    geometry = a.geometry
    m = geometry.sizes[j]
    if m % 2 == 0:
        raise ValidationError("root-of-unity formula needs an odd size")
    half = (m - 1) // 2
    x = geometry.site_coord(j)
    data = _data(a)
    out = np.zeros(data.shape, dtype=complex)
    for k in range(1, m):
        lam = np.exp(2j * np.pi * k / m)
        c = lam**-half / (1 - lam)
        ph = lam ** x
        out += c * (ph[:, None] * data * ph.conj()[None, :])
    return FiniteOperator(geometry, -1j * out)


def normalized_trace(a):
    """``Tr(A) / (N prod M)``, so that the identity has trace 1."""
    data = _data(a)
    return complex(np.trace(data)) / data.shape[0]


def magnetic_translation_phases(geometry, flux, y):
    """Permutation and phases of ``V_y``: ``V_y |x> = p(x) |x + y>``.

    Returns
    -------
    target : ndarray of int
        Site index of ``(x + y, alpha)`` for every site ``(x, alpha)``.
    phases : ndarray of complex
        ``p(x) = exp(i (beta(x, y) + beta(y, y) / 2))`` per site.
    """
    y = np.asarray(y, dtype=np.int64)
    flux = FluxMatrix.zero(geometry.d) if flux is None else flux
    dest_cell = geometry.cell_index(geometry.cell_coords + y[None, :])
    nf = geometry.fiber
    target = (dest_cell[:, None] * nf + np.arange(nf)[None, :]).ravel()
    p = flux.phase(geometry.cell_coords, y[None, :], y[None, :])
    return target, np.repeat(p, nf)


def apply_magnetic_translation(a, y, flux=None):
    """Conjugate ``a`` by the magnetic translation ``V_y``.

    With this gauge ``V_y H(omega) V_y^dagger = H(tau_y omega)`` and
    ``V_y V_z = exp(-i y ^ z) V_{y+z}``.
    """
    geometry = a.geometry
    target, p = magnetic_translation_phases(geometry, flux, y)
    data = _data(a)
    out = np.empty_like(data, dtype=complex)
    out[np.ix_(target, target)] = p[:, None] * data * p.conj()[None, :]
    return FiniteOperator(geometry, out, a.hermitian)


def magnetic_translation_matrix(geometry, y, flux=None):
    """Dense unitary ``V_y``."""
    target, p = magnetic_translation_phases(geometry, flux, y)
    v = np.zeros((geometry.dim, geometry.dim), dtype=complex)
    v[target, np.arange(geometry.dim)] = p
    return FiniteOperator(geometry, v)


_HEADER_ALIGN = 16


def dump_matrix(a, path):
    """Write ``a`` as a flat binary file.

    Layout: little-endian u32 header ``(d, N, M_1, ..., M_d)`` zero-padded to
    a multiple of 16 bytes (exactly 16 bytes for ``d <= 2``), followed by the
    row-major matrix as interleaved ``(re, im)`` float64 pairs.
    """
    g = a.geometry
    words = [g.d, g.fiber, *g.sizes]
    header = struct.pack(f"<{len(words)}I", *words)
    header += b"\0" * (-len(header) % _HEADER_ALIGN)
    body = np.ascontiguousarray(_data(a), dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def load_matrix(path):
    """Read a file written by :func:`dump_matrix`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    d, nf = struct.unpack_from("<2I", raw, 0)
    sizes = struct.unpack_from(f"<{d}I", raw, 8)
    hlen = 4 * (2 + d)
    hlen += -hlen % _HEADER_ALIGN
    g = TorusGeometry(sizes, nf)
    data = np.frombuffer(raw, dtype="<c16", offset=hlen).reshape(g.dim, g.dim)
    return FiniteOperator(g, data.astype(complex))

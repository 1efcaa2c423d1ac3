"""Clean-limit Bloch decomposition: bands, Kubo integral and k-space invariants.

For a clean model ``<x|H|x - y> = w_y`` the torus Hamiltonian is block
diagonal in momentum, ``h(k) = sum_y w_y e^{-i k.y}``. With this sign the
analytic derivative ``d_k h = sum_y (-i y) w_y e^{-i k.y}`` is the symbol of
the derivation ``-i (x - x')`` used on the torus, so every finite-volume
formula has a k-space twin with ``d^ -> d_k`` and ``(1/prod M) Tr -> int
d^dk/(2 pi)^d tr``.

Rational flux through one plane is handled with a magnetic supercell: the
hopping phases are periodic in the cell coordinates with the flux
denominators as periods, so folding that many cells into the fiber gives a
clean model again.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import GapClosed, NotClean, ValidationError
from .lattice import FluxMatrix, TorusGeometry, hopping_phase
from .observables import KUBO_SIGN, _double_factorial, _perm_sign
from .spectral import fermi_dirac_weights, grading_basis

GAP_TOL = 1e-8


def _supercell(flux, d):
    """Period of the hopping phases in each direction."""
    s = [1] * d
    if flux is None:
        return tuple(s)
    for i, j, f in flux.upper:
        # beta(y, x) depends on x_j through f y_i x_j with i < j
        s[j] = math.lcm(s[j], f.denominator)
    return tuple(s)


@dataclass(frozen=True, eq=False)
class BlochHamiltonian:
    """Momentum-space Hamiltonian of a clean model.

    Attributes
    ----------
    d, n : int
        Dimension and size of ``h(k)`` (fiber times supercell volume).
    supercell : tuple of int
        Cells folded into the fiber per direction.
    disp : ndarray, shape (T, d)
        Physical displacement ``x - x'`` of every term.
    cells : ndarray, shape (T, d)
        Supercell lattice vector of every term.
    blocks : ndarray, shape (T, n, n)
        Term matrices (zero outside their sub-cell block).
    grading : ndarray or None
        Chiral grading on the supercell fiber.
    """

    d: int
    n: int
    supercell: tuple
    disp: np.ndarray
    cells: np.ndarray
    blocks: np.ndarray
    grading: np.ndarray | None = None

    @classmethod
    def from_model(cls, model, flux=None):
        """Build from a clean :class:`~ncfv.models.HoppingModel`.

        Raises
        ------
        NotClean
            If the model has nonzero disorder strength.
        """
        if not model.is_clean:
            raise NotClean(f"model {model.name!r} has disorder strength "
                           f"{model.disorder_strength}")
        d, nf = model.d, model.N
        if flux is not None and flux.d != d:
            raise ValidationError("flux and model dimensions differ")
        sc = _supercell(flux, d)
        w = model.clean_blocks()
        sub = TorusGeometry(tuple(max(s, 2) for s in sc), nf)  # phase evaluation only
        subcells = np.array(list(itertools.product(*[range(s) for s in sc])), dtype=np.int64)
        nsub = len(subcells)
        index = {tuple(c): a for a, c in enumerate(subcells)}
        terms = {}
        for y, b in w.items():
            y = np.asarray(y, dtype=np.int64)
            if flux is not None and flux.upper:
                ph = hopping_phase(flux, sub, y)
                ph = ph[[sub.cell_index(c) for c in subcells]]
            else:
                ph = np.ones(nsub, dtype=complex)
            for a, c in enumerate(subcells):
                src = c - y
                cell = np.floor_divide(src, sc)
                col = index[tuple(src - cell * np.asarray(sc))]
                key = (tuple(y), tuple(-cell))
                blk = terms.setdefault(key, np.zeros((nsub * nf, nsub * nf), dtype=complex))
                blk[a * nf:(a + 1) * nf, col * nf:(col + 1) * nf] += ph[a] * b
        keys = sorted(terms)
        disp = np.array([k[0] for k in keys], dtype=float).reshape(len(keys), d)
        cells = np.array([k[1] for k in keys], dtype=float).reshape(len(keys), d)
        blocks = np.stack([terms[k] for k in keys])
        grading = None
        if model.chiral_grading is not None:
            grading = np.kron(np.eye(nsub), model.chiral_grading)
        return cls(d, nsub * nf, sc, disp, cells, blocks, grading)

    def h(self, k):
        """``h(k)`` for momenta of shape ``(..., d)`` in the physical Brillouin zone."""
        k = np.asarray(k, dtype=float)
        ph = np.exp(-1j * (k @ self.disp.T))
        return np.einsum("...t,tij->...ij", ph, self.blocks)

    def dh(self, k, j):
        """Analytic derivative ``d_{k_j} h(k)``."""
        k = np.asarray(k, dtype=float)
        ph = -1j * self.disp[:, j] * np.exp(-1j * (k @ self.disp.T))
        return np.einsum("...t,tij->...ij", ph, self.blocks)

    def h_periodic(self, kappa):
        """Supercell-periodic form ``sum e^{-i kappa . R} w_{(R)}`` with ``kappa`` in ``[0, 2 pi)^d``.

        Differs from ``h(kappa / S)`` by a diagonal unitary; its eigenvectors
        are periodic in ``kappa``, which the link-variable invariants need.
        """
        kappa = np.asarray(kappa, dtype=float)
        ph = np.exp(-1j * (kappa @ self.cells.T))
        return np.einsum("...t,tij->...ij", ph, self.blocks)

    def hermiticity_defect(self, k):
        hk = self.h(k)
        return float(np.abs(hk - np.swapaxes(hk.conj(), -1, -2)).max())

    def grid(self, n):
        """Uniform grid of ``n`` points per direction in the reduced zone, shape ``(n^d, d)``."""
        axes = [2 * np.pi * np.arange(n) / (n * s) for s in self.supercell]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.d)

    def bands(self, k):
        return np.linalg.eigvalsh(self.h(k))


def _divided_difference(e, f, fprime):
    """``(f_a - f_b) / (e_a - e_b)`` with the derivative on (near) degeneracies."""
    de = e[..., :, None] - e[..., None, :]
    df = f[..., :, None] - f[..., None, :]
    near = np.abs(de) < 1e-9
    safe = np.where(near, 1.0, de)
    avg = 0.5 * (fprime[..., :, None] + fprime[..., None, :])
    return np.where(near, avg, df / safe)


def _kubo_on_grid(bh, kpts, i, j, fermi_level, temperature, gamma, chunk=4096):
    total = 0j
    for s in range(0, len(kpts), chunk):
        k = kpts[s:s + chunk]
        e, v = np.linalg.eigh(bh.h(k))
        vh = np.swapaxes(v.conj(), -1, -2)
        a_i = vh @ bh.dh(k, i) @ v
        a_j = a_i if i == j else vh @ bh.dh(k, j) @ v
        f = fermi_dirac_weights(e, fermi_level, temperature)
        fp = -f * (1 - f) / temperature
        q = _divided_difference(e, f, fp)
        # <a|d_j Phi|b> = q_ab <a|d_j h|b>; denominator Gamma + i (eps_b - eps_a)
        den = gamma + 1j * (e[..., None, :] - e[..., :, None])
        term = np.swapaxes(a_i, -1, -2) * a_j * q / den
        total += term.sum()
    vol = math.prod(bh.supercell)
    return KUBO_SIGN * 2 * np.pi * total / (len(kpts) * vol)


def kubo_clean(model, fermi_level, temperature, gamma, i=0, j=0, n_start=32,
               tol=1e-10, n_max=4096, flux=None):
    """Kubo conductivity of a clean model by k-space integration.

    The per-k sum is the eigenbasis Kubo formula with analytic ``d_k h``;
    the uniform grid is doubled until two successive values differ by less
    than ``tol``. Units and conventions match
    :func:`ncfv.observables.kubo_conductivity`.

    Returns
    -------
    complex
    """
    bh = model if isinstance(model, BlochHamiltonian) else BlochHamiltonian.from_model(model, flux)
    n = int(n_start)
    prev = _kubo_on_grid(bh, bh.grid(n), i, j, fermi_level, temperature, gamma)
    while True:
        n *= 2
        if n > n_max:
            raise ValidationError(f"k-grid refinement did not reach {tol} below n = {n_max}")
        cur = _kubo_on_grid(bh, bh.grid(n), i, j, fermi_level, temperature, gamma)
        if abs(cur - prev) < tol:
            return complex(cur)
        prev = cur


def _occupied_frames(bh, n, selection):
    axes = [2 * np.pi * np.arange(n) / n] * bh.d
    kappa = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    e, v = np.linalg.eigh(bh.h_periodic(kappa))
    if isinstance(selection, (int, np.integer)):
        n_occ = int(selection)
    else:
        counts = (e <= float(selection)).sum(axis=-1)
        if counts.min() != counts.max():
            raise GapClosed(f"band count below {selection} varies across the zone")
        n_occ = int(counts.flat[0])
    if 0 < n_occ < bh.n:
        gap = float(e[..., n_occ].min() - e[..., n_occ - 1].max())
        if gap < GAP_TOL:
            raise GapClosed(f"indirect gap {gap:.3e} above band {n_occ}")
    return v[..., :n_occ], n_occ


def chern_k(model, selection=0.0, n=200, plane=(0, 1), flux=None):
    """Chern number of the bands below a Fermi level (or the lowest ``selection`` bands).

    Link-variable discretization on an ``n x n`` grid of the periodic gauge:
    ``Ch = -(1/2 pi) sum arg(U_1 U_2 U_1^* U_2^*)`` over plaquettes, with the
    sign chosen to agree with :func:`ncfv.observables.chern_even`.

    Parameters
    ----------
    model : HoppingModel or BlochHamiltonian
        Clean, ``d = 2``.
    selection : float or int
        Fermi level (float) or number of occupied bands (int).
    n : int
    plane : tuple of int
    """
    bh = model if isinstance(model, BlochHamiltonian) else BlochHamiltonian.from_model(model, flux)
    if bh.d != 2 or tuple(plane) != (0, 1):
        raise ValidationError("chern_k supports d = 2 and the (0, 1) plane")
    v, n_occ = _occupied_frames(bh, n, selection)
    if n_occ == 0:
        return 0.0

    def link(a, b):
        return np.linalg.det(np.swapaxes(a.conj(), -1, -2) @ b)

    v1 = np.roll(v, -1, axis=0)
    v2 = np.roll(v, -1, axis=1)
    v12 = np.roll(v1, -1, axis=1)
    plaq = link(v, v1) * link(v1, v12) * link(v12, v2) * link(v2, v)
    return float(-np.angle(plaq).sum() / (2 * np.pi))


def winding_k(model, n=10000):
    """Winding number of ``det A(k)`` for a clean chiral chain.

    ``A`` is the lower-left block of ``h(k)`` in the grading basis; the phase
    of ``det A`` is accumulated over ``n`` points. The sign agrees with
    :func:`ncfv.observables.chern_odd` applied to the Fermi unitary.

    Raises
    ------
    GapClosed
        If ``|det A(k)|`` gets below ``1e-8`` on the grid.
    """
    bh = model if isinstance(model, BlochHamiltonian) else BlochHamiltonian.from_model(model)
    if bh.d != 1 or bh.grading is None:
        raise ValidationError("winding_k needs a one-dimensional chiral model")
    a = _lower_block(bh, bh.h_periodic(2 * np.pi * np.arange(n)[:, None] / n))
    det = np.linalg.det(a)
    if np.abs(det).min() < GAP_TOL:
        raise GapClosed(f"|det A(k)| = {np.abs(det).min():.3e}")
    steps = np.angle(np.roll(det, -1) / det)
    return float(-steps.sum() / (2 * np.pi))


def _lower_block(bh, hk):
    w, n_plus = grading_basis(bh.grading)
    hk = np.swapaxes(w.conj(), -1, -2) @ hk @ w
    return hk[..., n_plus:, :n_plus]


def odd_chern_k(model, n=24):
    """Top odd Chern number of a clean chiral model in odd ``d``.

    ``U(k)`` is the polar factor of the lower-left block; ``d_k U`` is the
    spectral derivative on the ``n^d`` grid, and the integral is the
    k-space twin of :func:`ncfv.observables.chern_odd`.
    """
    bh = model if isinstance(model, BlochHamiltonian) else BlochHamiltonian.from_model(model)
    d = bh.d
    if d % 2 == 0 or bh.grading is None:
        raise ValidationError("odd_chern_k needs a chiral model in odd dimension")
    if bh.supercell != (1,) * d:
        raise ValidationError("odd_chern_k supports zero flux only")
    axes = [2 * np.pi * np.arange(n) / n] * d
    kappa = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    a = _lower_block(bh, bh.h(kappa))
    u, s, vh = np.linalg.svd(a)
    if s.min() < GAP_TOL:
        raise GapClosed(f"singular value {s.min():.3e}")
    uk = u @ vh
    freq = np.fft.fftfreq(n, 1.0 / n)  # integer Fourier indices
    coeff = np.fft.fftn(uk, axes=tuple(range(d)))
    b = []
    ukh = np.swapaxes(uk.conj(), -1, -2)
    for j in range(d):
        shape = [1] * (d + 2)
        shape[j] = n
        # U(k) = sum_y U_y e^{-i k y} with the fft index y = -freq
        mult = (1j * freq).reshape(shape)
        du = np.fft.ifftn(coeff * mult, axes=tuple(range(d)))
        b.append(ukh @ du)
    total = 0j
    for perm in itertools.permutations(range(d)):
        x = b[perm[0]]
        for p in perm[1:]:
            x = x @ b[p]
        total += _perm_sign(perm) * np.trace(x, axis1=-2, axis2=-1).sum()
    pref = 1j * (1j * np.pi) ** ((d - 1) // 2) / _double_factorial(d)
    return float((pref * total / n**d).real)


def magnetic_flux(p, q, d=2):
    """Flux ``p/q`` through the (0, 1) plane."""
    from fractions import Fraction
    return FluxMatrix.planar(Fraction(p, q), d)

"""Single-configuration observables: conductivity, DOS, Chern numbers and friends.

Every formula carries the volume-only prefactor ``1/prod(M)`` in front of the
plain matrix trace, which is the product of the fiber factor ``N`` and the
normalized trace ``Tr / (N prod M)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import kernels
from .errors import (GapClosed, NonpositiveTemperature, NonpositiveWidth,
                     NotAProjection, NotUnitary, SingularTensor, ValidationError)
from .lattice import (FiniteOperator, FluxMatrix, build_hamiltonian,
                      weighted_by_displacement)
from .spectral import (EigenSystem, eigh, fermi_dirac_weights, fermi_projection,
                       occupied_states, spectral_kernel)

PROJECTION_TOL = 1e-8
UNITARY_TOL = 1e-6

# Overall sign of the Kubo sum. The resolvent of Gamma + L_h with
# L_h(a) = i [a, h] gives the denominator Gamma + i (eps_b - eps_a) for the
# matrix element <a|.|b>; with the derivation -i (x - x') the plain trace is
# negative for the longitudinal response. The minus sign makes sigma_xx
# positive and sends sigma_xy to Ch_{xy} as T, Gamma -> 0.
KUBO_SIGN = -1.0

# sigma in units of e^2/h times this factor gives units of e^2/hbar
E2_HBAR = 1.0 / (2 * np.pi)


@dataclass(frozen=True)
class InvariantValue:
    """Real invariant with the imaginary part of the raw trace as a diagnostic."""

    value: float
    residual: float = 0.0

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True, eq=False)
class SpectralCurve:
    """Values on an energy grid (2-D surfaces use ``grid x grid``)."""

    grid: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim != 1 or np.any(np.diff(g) <= 0):
            raise ValidationError("grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("spectral curve has non-finite values")


@dataclass(frozen=True)
class ConductivityTensor:
    """Complex conductivity ``sigma_ij`` in units of ``e^2/h``."""

    sigma: np.ndarray

    @classmethod
    def planar(cls, sxx, sxy):
        """2x2 tensor with ``sigma_yy = sigma_xx`` and ``sigma_yx = -sigma_xy``."""
        return cls(np.array([[sxx, sxy], [-sxy, sxx]], dtype=complex))

    @property
    def real(self):
        return self.sigma.real

    @property
    def imaginary_residual(self):
        return float(np.abs(self.sigma.imag).max())


def _mm(a, b):
    """Matrix product that keeps real operands in real arithmetic."""
    ra, rb = not np.iscomplexobj(a), not np.iscomplexobj(b)
    if ra == rb:
        return a @ b
    # .real/.imag are strided views, which numpy multiplies without BLAS
    if ra:
        return (a @ np.ascontiguousarray(b.real)) + 1j * (a @ np.ascontiguousarray(b.imag))
    return (np.ascontiguousarray(a.real) @ b) + 1j * (np.ascontiguousarray(a.imag) @ b)


def _data(a):
    return a.data if isinstance(a, FiniteOperator) else np.asarray(a)


def _real_if_possible(a):
    if np.iscomplexobj(a) and not np.any(a.imag):
        return np.ascontiguousarray(a.real)
    return a


def _rotate(es, a):
    """``Phi^dagger a Phi``."""
    v = es.vectors
    return _mm(_mm(v.conj().T, a), v)


def _check_full(es):
    if not es.complete:
        raise ValidationError("this observable needs the full eigensystem")


def _derivative_in_eigenbasis(h, es, j):
    """``<a| d_j H |b>`` for all eigenpairs."""
    w = weighted_by_displacement(_real_if_possible(h.data), h.geometry, j)
    return -1j * _rotate(es, w)


def kubo_conductivity(h, es, i, j, fermi_level, temperature, gamma):
    """Kubo conductivity ``sigma_ij`` of one configuration.

    ``sigma_ij = -(2 pi / prod M) sum_{a,b} <b|d_i H|a> <a|d_j Phi_FD(H)|b>
    / (Gamma + i (eps_b - eps_a))`` in units of ``e^2/h`` (multiply by
    ``E2_HBAR`` for ``e^2/hbar``). This is the direct evaluation; see
    :class:`KuboWeights` for the form that serves many Fermi levels and
    temperatures at once.

    Parameters
    ----------
    h : FiniteOperator
    es : EigenSystem
        Full eigensystem of ``h``.
    i, j : int
        Directions, 0-based.
    fermi_level, temperature, gamma : float

    Returns
    -------
    complex
    """
    _check_full(es)
    if not gamma > 0:
        raise NonpositiveWidth(f"Gamma must be > 0, got {gamma}")
    geometry = h.geometry
    m1 = np.ascontiguousarray(_derivative_in_eigenbasis(h, es, i), dtype=complex)
    f = fermi_dirac_weights(es.values, fermi_level, temperature)
    phi = _mm(es.vectors * f, es.vectors.conj().T)
    dphi = weighted_by_displacement(np.ascontiguousarray(phi), geometry, j)
    m2 = -1j * _rotate(es, dphi)
    g = np.empty_like(m1)
    kernels.kubo_denominator(m1, np.ascontiguousarray(-es.values), float(gamma), g)
    total = np.vdot(g.conj(), m2)  # sum_ab g_ab m2_ab
    return complex(KUBO_SIGN * 2 * np.pi / geometry.ncells * total)


@dataclass(frozen=True, eq=False)
class KuboWeights:
    """Per-eigenstate weights ``g_a`` with ``sigma_ij = sum_a f(eps_a) g_a``.

    The Kubo sum is linear in the Fermi-Dirac occupations, so for fixed
    ``(H, i, j, Gamma)`` all Fermi levels and temperatures follow from one
    vector. With ``G_ab = <b|d_i H|a> / (Gamma + i (eps_b - eps_a))``,
    ``K = conj(Phi) G Phi^T`` and ``L = K o wrap_j``,
    ``g_a = -i c sum_x Phi_xa (L conj(Phi))_xa`` where ``c`` is the prefactor.
    """

    values: np.ndarray
    weights: np.ndarray
    i: int
    j: int
    gamma: float

    @classmethod
    def compute(cls, h, es, i, j, gamma):
        _check_full(es)
        if not gamma > 0:
            raise NonpositiveWidth(f"Gamma must be > 0, got {gamma}")
        geometry = h.geometry
        v = es.vectors
        m1 = np.ascontiguousarray(_derivative_in_eigenbasis(h, es, i), dtype=complex)
        g = np.empty_like(m1)
        kernels.kubo_denominator(m1, np.ascontiguousarray(-es.values), float(gamma), g)
        k = _mm(_mm(v.conj(), g), v.T)
        del g, m1
        lmat = weighted_by_displacement(np.ascontiguousarray(k), geometry, j)
        del k
        y = _mm(lmat, v.conj())
        del lmat
        weights = -1j * np.einsum("xa,xa->a", v, y)
        weights *= KUBO_SIGN * 2 * np.pi / geometry.ncells
        return cls(es.values.copy(), weights, i, j, float(gamma))

    def conductivity(self, fermi_level, temperature):
        f = fermi_dirac_weights(self.values, fermi_level, temperature)
        return complex(f @ self.weights)


def resistivity(sigma):
    """Resistivity tensor from a conductivity tensor.

    For 2x2 tensors the input is first symmetrized to
    ``sigma_yy = sigma_xx``, ``sigma_yx = -sigma_xy`` (using the averages of
    the real parts), which gives ``rho_xx = sigma_xx / (sigma_xx^2 + sigma_xy^2)``
    and ``rho_xy = -sigma_xy / (sigma_xx^2 + sigma_xy^2)``. Other sizes are
    inverted directly.

    Raises
    ------
    SingularTensor
        If ``|det| <= 1e-14``.
    """
    s = sigma.sigma.real if isinstance(sigma, ConductivityTensor) else np.real(sigma)
    s = np.asarray(s, dtype=float)
    if s.shape == (2, 2):
        sxx = 0.5 * (s[0, 0] + s[1, 1])
        sxy = 0.5 * (s[0, 1] - s[1, 0])
        det = sxx * sxx + sxy * sxy
        if det <= 1e-14:
            raise SingularTensor(f"det = {det:.3e}")
        return np.array([[sxx, -sxy], [sxy, sxx]]) / det
    det = np.linalg.det(s)
    if abs(det) <= 1e-14:
        raise SingularTensor(f"det = {det:.3e}")
    return np.linalg.inv(s)


def dos(es, grid, delta=0.01):
    """Density of states ``(2 pi / (N prod M)) sum_a delta / ((eps_a - eps)^2 + delta^2)``."""
    grid = np.asarray(grid, dtype=float)
    w = spectral_kernel(es, grid, "lorentzian", delta)
    n = es.geometry.dim
    values = 2 * np.pi / n * w.sum(axis=1)
    return SpectralCurve(grid, values, {"kernel": "lorentzian", "width": delta,
                                        "sizes": es.geometry.sizes})


# --- Chern numbers -----------------------------------------------------------


def _perm_sign(perm, ref=None):
    """Sign of ``perm`` as a reordering of ``ref`` (default: sorted order)."""
    sign = 1
    p = list(perm) if ref is None else [list(ref).index(v) for v in perm]
    for a in range(len(p)):
        for b in range(a + 1, len(p)):
            if p[a] > p[b]:
                sign = -sign
    return sign


def _probe(n, seed=12345):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    return v / np.linalg.norm(v)


def check_projection(p, tol=PROJECTION_TOL):
    """Randomized idempotency and Hermiticity test; raises ``NotAProjection``."""
    a = _data(p)
    v = _probe(a.shape[0])
    pv = a @ v
    err = max(np.linalg.norm(a @ pv - pv), np.linalg.norm(a.conj().T @ v - pv))
    if err > tol:
        raise NotAProjection(f"|P^2 v - P v| = {err:.3e}")


def check_unitary(u, tol=UNITARY_TOL):
    a = _data(u)
    v = _probe(a.shape[0])
    err = abs(np.linalg.norm(a @ v) - 1.0) + np.linalg.norm(a.conj().T @ (a @ v) - v)
    if err > tol:
        raise NotUnitary(f"|U^dagger U v - v| = {err:.3e}")


def _directions(directions, d, parity):
    dirs = tuple(int(j) for j in directions)
    if len(set(dirs)) != len(dirs) or any(not 0 <= j < d for j in dirs):
        raise ValidationError(f"invalid directions {directions} for d = {d}")
    if len(dirs) % 2 != parity:
        kind = "even" if parity == 0 else "odd"
        raise ValidationError(f"{kind} Chern number needs an {kind} number of directions")
    return dirs


def _trace_of_chain(first, mats, order):
    """``Tr(first @ mats[order[0]] @ ... @ mats[order[-1]])``."""
    x = first
    for k in order[:-1]:
        x = _mm(x, mats[k])
    last = mats[order[-1]]
    return np.einsum("ij,ji->", x, last)


def chern_even(p, directions=(0, 1)):
    """Even Chern number ``Ch_I`` of a projection.

    ``((2 pi i)^{|I|/2} / (|I|/2)!) (1/prod M) sum_rho (-1)^rho
    Tr(P d_{rho_1} P ... d_{rho_k} P)``.

    Parameters
    ----------
    p : FiniteOperator
        Projection, idempotent to ``1e-8``.
    directions : tuple of int
        0-based, even length.

    Returns
    -------
    InvariantValue
    """
    geometry = p.geometry
    dirs = _directions(directions, geometry.d, 0)
    check_projection(p)
    data = _real_if_possible(_data(p))
    dp = {j: -1j * weighted_by_displacement(np.ascontiguousarray(data), geometry, j)
          for j in dirs}
    total = 0j
    for perm in itertools.permutations(dirs):
        total += _perm_sign(perm, dirs) * _trace_of_chain(data, dp, perm)
    k = len(dirs) // 2
    raw = (2j * np.pi) ** k / math.factorial(k) * total / geometry.ncells
    return InvariantValue(float(raw.real), float(raw.imag))


def chern_even_states(states, geometry, directions=(0, 1)):
    """Even Chern number of ``P = V V^dagger`` given orthonormal columns ``V``.

    Uses ``Tr(P X_1 ... X_k) = Tr(V^dagger X_1 ... X_k V)`` so that only
    products of thin matrices with the derivatives of ``P`` are formed.
    """
    dirs = _directions(directions, geometry.d, 0)
    v = _real_if_possible(np.asarray(states))
    p = _mm(v, v.conj().T)
    dp = {}
    for j in dirs:
        dp[j] = weighted_by_displacement(np.ascontiguousarray(p), geometry, j)
    del p
    vh = v.conj().T
    # d_j P is not anti-Hermitian for even M (the M/2 displacement), so the
    # left and right thin products are formed separately
    left = {j: _mm(vh, dp[j]) for j in dirs}
    right = {j: _mm(dp[j], v) for j in dirs}
    total = 0j
    for perm in itertools.permutations(dirs):
        x = left[perm[0]]
        for j in perm[1:-1]:
            x = _mm(x, dp[j])
        total += _perm_sign(perm, dirs) * np.einsum("ij,ji->", x, right[perm[-1]])
    k = len(dirs) // 2
    total *= (-1j) ** len(dirs)
    raw = (2j * np.pi) ** k / math.factorial(k) * total / geometry.ncells
    return InvariantValue(float(raw.real), float(raw.imag))


def chern_even_from_eigensystem(es, fermi_level, directions=(0, 1)):
    """Even Chern number of ``chi(H <= eps_F)`` using the thinner of ``P`` and ``1 - P``.

    ``Ch(1 - P) = -Ch(P)``, so the complementary states are used when they
    are fewer.
    """
    _check_full(es)
    occ = es.values <= fermi_level
    occupied_states(es, fermi_level)  # Fermi-level coincidence warning
    n_occ = int(occ.sum())
    if n_occ == 0 or n_occ == es.size:
        return InvariantValue(0.0, 0.0)
    if n_occ <= es.size - n_occ:
        return chern_even_states(es.vectors[:, occ], es.geometry, directions)
    res = chern_even_states(es.vectors[:, ~occ], es.geometry, directions)
    return InvariantValue(-res.value, -res.residual)


def _double_factorial(n):
    return math.prod(range(n, 0, -2))


def chern_odd(u, directions=None):
    """Odd Chern number ``Ch_I`` of a unitary on the half space.

    ``(i (i pi)^{(|I|-1)/2} / |I|!!) (1/prod M) sum_rho (-1)^rho
    Tr(U^dagger d_{rho_1} U ... U^dagger d_{rho_k} U)``.

    Parameters
    ----------
    u : FiniteOperator
        Unitary to ``1e-6``.
    directions : tuple of int, optional
        0-based, odd length; defaults to all directions.

    Returns
    -------
    InvariantValue
    """
    geometry = u.geometry
    if directions is None:
        directions = tuple(range(geometry.d))
    dirs = _directions(directions, geometry.d, 1)
    check_unitary(u)
    data = _real_if_possible(_data(u))
    k = len(dirs)
    if k == 1:
        # Tr(U^dagger dU) needs only the elementwise product
        du = weighted_by_displacement(np.ascontiguousarray(data), geometry, dirs[0])
        total = -1j * np.vdot(data, du)
    else:
        udag = data.conj().T
        b = {}
        for j in dirs:
            du = weighted_by_displacement(np.ascontiguousarray(data), geometry, j)
            b[j] = -1j * _mm(udag, du)
        # cyclic rotations of an odd-length ordering are even permutations and
        # leave the trace unchanged, so fix the first direction and weight by k
        total = 0j
        for rest in itertools.permutations(dirs[1:]):
            perm = (dirs[0],) + rest
            total += _perm_sign(perm, dirs) * _trace_of_chain(b[dirs[0]], b, rest)
        total *= k
    pref = 1j * (1j * np.pi) ** ((k - 1) // 2) / _double_factorial(k)
    raw = pref * total / geometry.ncells
    return InvariantValue(float(raw.real), float(raw.imag))


# --- correlations and localization -------------------------------------------


def ccc(h, es, grid, r=0.02):
    """Current-current correlation ``f_r(eps, eps')`` on ``grid x grid``.

    ``f_r = (1/d) (1/(N prod M)) sum_j sum_{a,b} |<a|d_j H|b>|^2
    delta_r(eps_a - eps) delta_r(eps_b - eps')``, returned in units of
    ``1/(4 pi^2)`` (the values are ``4 pi^2 f_r``).
    """
    _check_full(es)
    geometry = h.geometry
    grid = np.asarray(grid, dtype=float)
    s = np.zeros((es.size, es.size))
    for j in range(geometry.d):
        m = _derivative_in_eigenbasis(h, es, j)
        s += m.real ** 2 + m.imag ** 2
    w = spectral_kernel(es, grid, "gaussian", r)
    f = w @ s @ w.T / (geometry.d * geometry.dim)
    f = 0.5 * (f + f.T)  # exact symmetry, |M_ab|^2 is symmetric
    return SpectralCurve(grid, 4 * np.pi**2 * f,
                         {"kernel": "gaussian", "width": r, "sizes": geometry.sizes,
                          "units": "1/(4 pi^2)"})


def ccc_estimator(a, b):
    """Mean absolute difference ``(4 pi^2/|G|) sum |f - f'|`` of two surfaces.

    Both inputs are surfaces from :func:`ccc` (already in ``1/(4 pi^2)`` units)
    on the same grid.
    """
    if a.values.shape != b.values.shape or not np.allclose(a.grid, b.grid):
        raise ValidationError("surfaces must share the grid")
    return float(np.mean(np.abs(a.values - b.values)))


def delta_loc_length(p):
    """``Lambda^2 = (1/(N prod M)) sum_j Tr((d_j P)^dagger d_j P)`` of a spectral projection."""
    check_projection(p)
    geometry = p.geometry
    data = np.ascontiguousarray(_real_if_possible(_data(p)))
    total = 0.0
    for j in range(geometry.d):
        total += kernels.displacement_weight_sq_sum(
            data, geometry.site_coord(j), geometry.sizes[j])
    return total / geometry.dim


def window_projection(es, lo, hi):
    """Spectral projection onto ``lo < eps <= hi``."""
    sel = (es.values > lo) & (es.values <= hi)
    v = es.vectors[:, sel]
    return FiniteOperator(es.geometry, _mm(v, v.conj().T).astype(complex, copy=False))


def filling(p):
    """Electrons per unit cell, ``Tr(P) / prod M``."""
    return float(np.trace(_data(p)).real) / p.geometry.ncells


@dataclass(frozen=True)
class StredaResult:
    slope: float
    chern: float
    filling: float
    filling_next: float


def streda_check(model, geometry, fermi_level, n, n_next=None, config=None, plane=(0, 1)):
    """Flux derivative of the filling against the Chern number.

    Builds ``H`` at fluxes ``n/M`` and ``n'/M`` through ``plane`` (``M`` the
    common size of the two directions), and returns
    ``(filling(n') - filling(n)) M / (n' - n)`` with ``Ch`` at ``n/M``.

    Raises
    ------
    GapClosed
        If some eigenvalue lies within ``10 * bandwidth / dim`` of the Fermi level.
    """
    n_next = n + 1 if n_next is None else n_next
    i, j = plane
    m = math.gcd(geometry.sizes[i], geometry.sizes[j])
    out = []
    chern = None
    for k, nn in enumerate((n, n_next)):
        flux = FluxMatrix(geometry.d, ((i, j, Fraction(nn, m)),))
        h = build_hamiltonian(model, geometry, flux, config)
        es = eigh(h)
        width = es.values[-1] - es.values[0]
        gap = float(np.abs(es.values - fermi_level).min())
        if gap < 10 * width / es.size:
            raise GapClosed(f"eigenvalue within {gap:.3e} of the Fermi level at flux {nn}/{m}")
        occ = es.values <= fermi_level
        out.append(occ.sum() / geometry.ncells)
        if k == 0:
            chern = chern_even_from_eigensystem(es, fermi_level, plane).value
    slope = (out[1] - out[0]) * m / (n_next - n)
    return StredaResult(float(slope), float(chern), float(out[0]), float(out[1]))

"""Catalog of disordered lattice models and the 1D localization-length formula.

A model is a list of hopping terms ``(y, coeff)`` with ``y = 0`` or ``y > 0``
in lexicographic order. ``coeff(omega, geometry)`` receives the disorder
array of shape ``(ncells, channels)`` and returns the per-cell blocks
``B_y[x] = <x|H|x - y>`` of shape ``(ncells, N, N)`` (or a single ``(N, N)``
block that is broadcast). The terms with ``y < 0`` follow by Hermiticity.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .errors import (CriticalPointWarning, DimensionParity, Divergence,
                     UnsupportedRank, ValidationError)
from .lattice import TorusGeometry

SIGMA0 = np.eye(2, dtype=complex)
SIGMA1 = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA2 = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA3 = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = SIGMA_PLUS.T.copy()


@dataclass(frozen=True, eq=False)
class HoppingModel:
    """Translation-covariant lattice Hamiltonian with on-site disorder.

    Attributes
    ----------
    d, N, channels : int
        Dimension, fiber size and disorder channels per cell.
    hoppings : tuple of (tuple, callable)
        Half-space hopping terms, see the module docstring.
    chiral_grading : ndarray or None
        ``N x N`` unitary ``J`` with ``J^2 = 1`` and ``J H J = -H``.
    name : str
    params : dict
        Constructor arguments, used to rebuild the model in worker processes.
    disorder_strength : float
        Zero for a clean model.
    """

    d: int
    N: int
    channels: int
    hoppings: tuple
    chiral_grading: np.ndarray | None = None
    name: str = ""
    params: dict = field(default_factory=dict)
    disorder_strength: float = 0.0

    def __post_init__(self):
        for y, _ in self.hoppings:
            if len(y) != self.d:
                raise ValidationError(f"hopping {y} has wrong dimension")
            if any(y) and _lex_sign(y) < 0:
                raise ValidationError(f"hopping {y} is not in the positive half space")

    @property
    def is_clean(self):
        return self.disorder_strength == 0

    @property
    def hopping_range(self):
        return max((max(abs(v) for v in y) for y, _ in self.hoppings), default=0)

    def blocks(self, omega, geometry):
        """Evaluate all terms: list of ``(y, blocks)`` with blocks ``(ncells, N, N)``."""
        out = []
        for y, coeff in self.hoppings:
            b = np.broadcast_to(coeff(omega, geometry), (geometry.ncells, self.N, self.N))
            out.append((y, np.asarray(b, dtype=complex)))
        return out

    def full_blocks(self, omega, geometry):
        """All hopping blocks including ``y < 0``: ``{y: B_y}``.

        Uses ``B_{-y}[x] = B_y[x + y]^dagger``; the ``y = 0`` block is
        Hermitian-symmetrized as in the assembled Hamiltonian.
        """
        full = {}
        for y, b in self.blocks(omega, geometry):
            if not any(y):
                full[y] = 0.5 * (b + b.conj().transpose(0, 2, 1))
                continue
            full[y] = b
            neg = tuple(-v for v in y)
            full[neg] = geometry.roll(b, neg).conj().transpose(0, 2, 1)
        return full

    def clean_blocks(self):
        """Cell-independent blocks ``{y: w_y}`` of the disorder-free model."""
        geom = TorusGeometry((2 * self.hopping_range + 1,) * self.d, self.N)
        omega = np.zeros((geom.ncells, self.channels))
        return {y: b[0].copy() for y, b in self.full_blocks(omega, geom).items()}


def _lex_sign(y):
    for v in y:
        if v:
            return 1 if v > 0 else -1
    return 0


def _unit(d, j):
    return tuple(1 if k == j else 0 for k in range(d))


def _const(block):
    block = np.asarray(block, dtype=complex)
    return lambda omega, geometry: block


# --- Clifford algebras -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CliffordRep:
    """Hermitian generators ``gamma_1..gamma_k`` and, for even ``k``, the grading ``gamma_0``."""

    gammas: tuple
    grading: np.ndarray | None

    @property
    def k(self):
        return len(self.gammas)

    @property
    def dim(self):
        return self.gammas[0].shape[0]

    def anticommutator_residual(self):
        """Largest ``|{g_i, g_j} - 2 delta_ij|`` over all pairs, grading included."""
        gs = list(self.gammas) + ([self.grading] if self.grading is not None else [])
        eye = np.eye(self.dim)
        worst = 0.0
        for i, a in enumerate(gs):
            for j, b in enumerate(gs):
                target = 2 * eye if i == j else 0
                worst = max(worst, float(np.abs(a @ b + b @ a - target).max()))
        return worst


def gamma_matrices(k):
    """Irreducible Clifford generators from tensor products of Pauli matrices.

    For even ``k`` the representation has dimension ``2^(k/2)`` and comes
    with the grading ``gamma_0 = (-i)^(k/2) gamma_1 ... gamma_k``. For odd
    ``k`` the first ``k-1`` generators are those of the even case and the
    last one is its grading.

    Parameters
    ----------
    k : int
        Number of generators, 1 to 6.

    Returns
    -------
    CliffordRep
    """
    if not 1 <= k <= 6:
        raise UnsupportedRank(f"k must be in 1..6, got {k}")
    gammas, grading = [], np.eye(1, dtype=complex)
    for _ in range(k // 2):
        eye = np.eye(grading.shape[0], dtype=complex)
        gammas = [np.kron(SIGMA1, g) for g in gammas]
        gammas.append(np.kron(SIGMA1, grading))
        gammas.append(np.kron(SIGMA2, eye))
        grading = np.kron(SIGMA3, eye)
    if k % 2 == 0:
        return CliffordRep(tuple(gammas), grading)
    return CliffordRep(tuple(gammas) + (grading,), None)


# --- models ------------------------------------------------------------------


def hofstadter(lam=0.0):
    """Square-lattice hopping with on-site disorder ``lam * omega``.

    ``w_{+-e1} = w_{+-e2} = 1`` and ``w_0 = lam * omega``.
    """
    lam = float(lam)

    def onsite(omega, geometry):
        return (lam * omega[:, 0])[:, None, None]

    hops = (((0, 0), onsite), ((1, 0), _const([[1.0]])), ((0, 1), _const([[1.0]])))
    return HoppingModel(2, 1, 1, hops, None, "hofstadter", {"lam": lam}, abs(lam))


def kane_mele_up(lam=0.0, t2=0.6):
    """Spin-up sector of the Kane-Mele model (Haldane model) on the honeycomb lattice.

    Cells hold the two sites A (fiber 0) and B (fiber 1). Site A of cell
    ``x`` bonds to B in cells ``x``, ``x - e1`` and ``x - e2``. The second
    neighbor hopping ``A(x) -> A(x + v)`` carries ``+i t2`` for
    ``v in {e1, e2 - e1, -e2}`` and ``-i t2`` for the opposite vectors; the
    B sublattice has the opposite signs. Each site has its own disorder
    variable with strength ``lam``.
    """
    lam, t2 = float(lam), float(t2)
    eta = np.diag([1.0, -1.0]).astype(complex)

    def onsite(omega, geometry):
        b = np.zeros((geometry.ncells, 2, 2), dtype=complex)
        b[:, 0, 0] = lam * omega[:, 0]
        b[:, 1, 1] = lam * omega[:, 1]
        b[:, 0, 1] = b[:, 1, 0] = 1.0
        return b

    nn = SIGMA_PLUS  # <A, x| H |B, x - y> = 1
    # <A, x|H|A, x - y> is the hop along v = y
    hops = (
        ((0, 0), onsite),
        ((0, 1), _const(nn - 1j * t2 * eta)),    # v = e2 is opposite to -e2
        ((1, -1), _const(-1j * t2 * eta)),       # v = e1 - e2 is opposite to e2 - e1
        ((1, 0), _const(nn + 1j * t2 * eta)),    # v = e1
    )
    return HoppingModel(2, 2, 2, hops, None, "kane_mele_up", {"lam": lam, "t2": t2}, abs(lam))


def aiii_chain(m, W1=0.0, W2=0.0):
    """Disordered chiral chain in class AIII.

    ``H = sum_x m_x sigma_2 |x><x| + t_x (sigma_+ |x><x+1| + sigma_- |x+1><x|)``
    with ``t_x = 1 + W1 omega_x`` and ``m_x = m + W2 omega'_x`` (channels 0
    and 1). In momentum space the lower-left block is ``e^{-ik} t + i m``
    (with ``h(k) = sum_y B_y e^{-iky}``), the gap closes at ``m = +-1`` and
    the winding is 1 for ``|m| < 1``. The chiral grading is ``sigma_3``.
    """
    m, W1, W2 = float(m), float(W1), float(W2)

    def onsite(omega, geometry):
        mx = m + W2 * omega[:, 1]
        return mx[:, None, None] * SIGMA2

    def hop(omega, geometry):
        # <x|H|x-1> = t_{x-1} sigma_-
        t_prev = geometry.roll(1.0 + W1 * omega[:, 0], (1,))
        return t_prev[:, None, None] * SIGMA_MINUS

    hops = (((0,), onsite), ((1,), hop))
    return HoppingModel(1, 2, 2, hops, SIGMA3.copy(), "aiii_chain",
                        {"m": m, "W1": W1, "W2": W2}, max(abs(W1), abs(W2)))


def _dirac_terms(d, m, gammas, mass, disorder=None):
    def onsite(omega, geometry):
        base = m * mass
        if disorder is None:
            return base
        return base[None] + disorder(omega)[:, None, None] * mass[None]

    hops = [(tuple([0] * d), onsite)]
    # S_j = sum_x |x><x - e_j|: coefficient (1/2i) gamma_j + mass / 2
    for j in reversed(range(d)):
        hops.append((_unit(d, j), _const(-0.5j * gammas[j] + 0.5 * mass)))
    return hops


def clifford_dirac(d, m, cls="A"):
    """Lattice Dirac model ``(1/2i) sum gamma_j (S_j - S_j^*) + Gamma (m + sum (S_j + S_j^*)/2)``.

    Class A needs even ``d`` and uses ``Gamma = gamma_0`` of ``Cl_d``; class
    AIII needs odd ``d``, uses ``Gamma = gamma_{d+1}`` of ``Cl_{d+1}`` and has
    the chiral grading ``gamma_0``. The clean invariant is
    ``(-1)^n binom(d-1, n)`` for ``m in (-d + 2n, -d + 2n + 2)``.
    """
    m = float(m)
    cls = cls.upper()
    if cls == "A":
        if d % 2:
            raise DimensionParity("class A Dirac model needs even d")
        rep = gamma_matrices(d)
        mass, grading = rep.grading, None
        gammas = rep.gammas
    elif cls == "AIII":
        if d % 2 == 0:
            raise DimensionParity("class AIII Dirac model needs odd d")
        rep = gamma_matrices(d + 1)
        # -gamma_0 orients the grading so that the clean invariant follows
        # the window formula below (the opposite sign is an equally valid choice)
        mass, grading = rep.gammas[d], -rep.grading
        gammas = rep.gammas[:d]
    else:
        raise ValidationError(f"unknown symmetry class {cls!r}")
    if abs(m) <= d and abs((m + d) / 2 - round((m + d) / 2)) < 1e-12:
        warnings.warn(f"m = {m} is a clean gap closing", CriticalPointWarning, stacklevel=2)
    hops = _dirac_terms(d, m, gammas, mass)
    return HoppingModel(d, rep.dim, 1, tuple(hops), grading, "clifford_dirac",
                        {"d": d, "m": m, "cls": cls}, 0.0)


def aiii_3d(m, t=0.0, lam=0.0):
    """Three-dimensional class AIII model.

    The Dirac model of :func:`clifford_dirac` with ``d = 3`` built on
    ``Cl_4``, plus the constant term ``i t gamma_1 gamma_3 gamma_4`` and
    on-site disorder ``lam * omega_x * gamma_4`` (a random mass, which keeps
    ``gamma_0 H gamma_0 = -H``). The chiral grading is ``-gamma_0`` as in
    the class AIII branch of :func:`clifford_dirac`, giving ``Ch_3 = -2`` at
    ``m = 0`` and ``+1`` for ``1 < m < 3``.
    """
    m, t, lam = float(m), float(t), float(lam)
    rep = gamma_matrices(4)
    g1, g2, g3, g4 = rep.gammas
    hops = _dirac_terms(3, m, rep.gammas[:3], g4, lambda omega: lam * omega[:, 0])
    extra = 1j * t * (g1 @ g3 @ g4)
    onsite = hops[0][1]
    hops[0] = ((0, 0, 0), lambda omega, geometry: onsite(omega, geometry) + extra)
    return HoppingModel(3, 4, 1, tuple(hops), -rep.grading, "aiii_3d",
                        {"m": m, "t": t, "lam": lam}, abs(lam))


MODELS: dict[str, Callable[..., HoppingModel]] = {
    "hofstadter": hofstadter,
    "kane_mele_up": kane_mele_up,
    "aiii_chain": aiii_chain,
    "aiii_3d": aiii_3d,
    "clifford_dirac": clifford_dirac,
}


def make_model(name, params=None):
    """Build a model from its registry name and keyword parameters."""
    try:
        factory = MODELS[name]
    except KeyError:
        raise ValidationError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return factory(**(params or {}))


# --- 1D localization length --------------------------------------------------

_SERIES_SWITCH = 1e-6


def _xlogabs(x):
    x = float(x)
    return 0.0 if x == 0 else x * math.log(abs(x))


def mean_log_abs(a, b):
    """``int_{-1/2}^{1/2} ln|a + b w| dw`` in closed form.

    Below ``|b| < 1e-6`` the expansion ``ln|a| - b^2/(24 a^2) - b^4/(160 a^4)``
    is used. When the interval does not contain zero the closed form is
    rewritten with ``log1p`` so that no cancellation occurs for small ``b/a``.
    """
    a, b = float(a), abs(float(b))
    if b < _SERIES_SWITCH:
        if a == 0:
            raise Divergence("ln|0| is not integrable at zero width")
        r2 = (b / a) ** 2
        return math.log(abs(a)) - r2 / 24 - r2 * r2 / 160
    h = b / 2
    if abs(a) > h:
        r = h / a
        rest = ((a + h) * math.log1p(r) - (a - h) * math.log1p(-r)) / b - 1.0
        return math.log(abs(a)) + rest
    return (_xlogabs(a + h) - _xlogabs(a - h)) / b - 1.0


def analytic_loc_length_1d(m, W1, W2):
    """Inverse localization length of the chiral chain at zero energy.

    ``1/Lambda = |<ln|t_x|> - <ln|m_x|>|`` with ``t_x = 1 + W1 omega`` and
    ``m_x = m + W2 omega'``, ``omega, omega'`` uniform on ``[-1/2, 1/2]``.
    It vanishes on the critical surface.

    Raises
    ------
    Divergence
        If ``m = 0`` and ``W2 = 0``.
    """
    if W1 < 0 or W2 < 0:
        raise ValidationError("disorder strengths must be non-negative")
    if m == 0 and W2 == 0:
        raise Divergence("mass identically zero")
    return abs(mean_log_abs(1.0, W1) - mean_log_abs(m, W2))


def analytic_loc_length_1d_signed(m, W1, W2):
    """``<ln|t|> - <ln|m|>``: positive in the winding-1 phase, negative outside."""
    return mean_log_abs(1.0, W1) - mean_log_abs(m, W2)


def critical_disorder_1d(m, w_max=20.0, ratio=0.5, tol=1e-12):
    """Disorder ``W`` with ``W1 = ratio * W``, ``W2 = W`` where ``1/Lambda`` vanishes.

    Bisection on the sign of :func:`analytic_loc_length_1d_signed` over
    ``(0, w_max]``.
    """
    f = lambda w: analytic_loc_length_1d_signed(m, ratio * w, w)
    lo, hi = 1e-9, float(w_max)
    flo, fhi = f(lo), f(hi)
    if flo * fhi > 0:
        raise ValidationError("no sign change of 1/Lambda in the bracket")
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm * flo > 0:
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def chain_transfer_lyapunov(m, W1, W2, n_sites=10**6, seed=0, energy=0.0):
    """Top Lyapunov exponent of the disordered chiral chain from a transfer-matrix product.

    An independent estimate of :func:`analytic_loc_length_1d` at
    ``energy = 0``.
    """
    rng = np.random.default_rng(seed)
    omega = rng.uniform(-0.5, 0.5, size=(2, n_sites + 1))
    t = np.ascontiguousarray(1.0 + W1 * omega[0])
    mm = np.ascontiguousarray(m + W2 * omega[1])
    return float(kernels.chain_lyapunov(t, mm, float(energy)))

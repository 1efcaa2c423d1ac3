"""Hermitian eigendecomposition and spectral functional calculus."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.special import expit

from .errors import (ChiralityViolation, ConvergenceFailure, FermiLevelWarning,
                     NonpositiveTemperature, NonpositiveWidth, NotHermitian,
                     ValidationError, ZeroModeWarning)
from .lattice import HERMITIAN_TOL, FiniteOperator, TorusGeometry, hermiticity_defect

FERMI_COINCIDENCE_TOL = 1e-12
ZERO_MODE_TOL = 1e-10
CHIRALITY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Ascending eigenvalues and orthonormal eigenvectors (columns).

    ``complete`` is False when only an energy window was computed.
    """

    values: np.ndarray
    vectors: np.ndarray = field(repr=False)
    geometry: TorusGeometry
    complete: bool = True

    @property
    def size(self):
        return len(self.values)

    def residual(self, h):
        """``max_a ||H phi_a - eps_a phi_a||_2``."""
        h = h.data if isinstance(h, FiniteOperator) else h
        r = h @ self.vectors - self.vectors * self.values[None, :]
        return float(np.sqrt((np.abs(r) ** 2).sum(axis=0)).max(initial=0.0))

    def orthonormality_defect(self):
        v = self.vectors
        return float(np.abs(v.conj().T @ v - np.eye(v.shape[1])).max(initial=0.0))

    def reconstruct(self):
        v = self.vectors
        return FiniteOperator(self.geometry, (v * self.values) @ v.conj().T)

    def apply(self, weights):
        """Operator ``sum_a weights[a] phi_a phi_a^dagger``."""
        v = self.vectors
        return FiniteOperator(self.geometry, (v * weights) @ v.conj().T)


def _as_array(h):
    return h.data if isinstance(h, FiniteOperator) else np.asarray(h)


def eigh(h, *, energy_window=None, driver="evr"):
    """Eigendecomposition of a Hermitian operator.

    The dense solver is LAPACK's (through ``scipy.linalg.eigh``); a real
    symmetric routine is used when the matrix has no imaginary part, which
    leaves eigenvectors real. Output is deterministic for a fixed input and
    backend.

    Parameters
    ----------
    h : FiniteOperator
    energy_window : tuple of float, optional
        Only compute eigenpairs with ``lo < eps <= hi``; the result has
        ``complete=False``.
    driver : str
        LAPACK driver name passed to ``scipy.linalg.eigh``.

    Returns
    -------
    EigenSystem

    Raises
    ------
    NotHermitian, ConvergenceFailure
    """
    a = _as_array(h)
    geometry = h.geometry if isinstance(h, FiniteOperator) else TorusGeometry((a.shape[0],))
    if not getattr(h, "hermitian", False):
        err = hermiticity_defect(a)
        if err > HERMITIAN_TOL:
            raise NotHermitian(f"max |H - H^dagger| = {err:.3e}")
    if np.iscomplexobj(a) and not np.any(a.imag):
        a = np.ascontiguousarray(a.real)
    kwargs = {}
    if energy_window is not None:
        kwargs["subset_by_value"] = tuple(float(v) for v in energy_window)
        driver = "evr"
    try:
        w, v = sla.eigh(a, driver=driver, check_finite=True, **kwargs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return EigenSystem(w, v, geometry, energy_window is None)


def occupied_states(es, fermi_level):
    """Columns ``phi_a`` with ``eps_a <= fermi_level`` (closed interval)."""
    near = np.abs(es.values - fermi_level) < FERMI_COINCIDENCE_TOL
    if np.any(near):
        warnings.warn(f"Fermi level {fermi_level} coincides with an eigenvalue; "
                      "the state is counted as occupied", FermiLevelWarning, stacklevel=3)
    return es.vectors[:, es.values <= fermi_level]


def fermi_projection(es, fermi_level):
    """Spectral projection ``chi(H <= eps_F)`` as a dense Hermitian operator."""
    if not es.complete:
        raise ValidationError("Fermi projection needs the full spectrum")
    v = occupied_states(es, fermi_level)
    p = v @ v.conj().T
    return FiniteOperator(es.geometry, p.astype(complex, copy=False))


def fermi_dirac_weights(values, fermi_level, temperature):
    """``1 / (1 + exp((eps - eps_F) / T))`` evaluated without overflow."""
    if not temperature > 0:
        raise NonpositiveTemperature(f"T must be > 0, got {temperature}")
    return expit((fermi_level - np.asarray(values)) / temperature)


def fermi_dirac_matrix(es, fermi_level, temperature):
    """Fermi-Dirac function of the Hamiltonian, ``Phi diag(f) Phi^dagger``."""
    return es.apply(fermi_dirac_weights(es.values, fermi_level, temperature))


def gaussian_delta(t, r):
    """``exp(-t^2 / 2r^2) / (r sqrt(2 pi))``."""
    if not r > 0:
        raise NonpositiveWidth(f"width must be > 0, got {r}")
    t = np.asarray(t, dtype=float)
    return np.exp(-0.5 * (t / r) ** 2) / (r * np.sqrt(2 * np.pi))


def lorentzian_weight(t, delta):
    """``delta / (t^2 + delta^2)``; integrates to ``pi``."""
    if not delta > 0:
        raise NonpositiveWidth(f"width must be > 0, got {delta}")
    t = np.asarray(t, dtype=float)
    return delta / (t * t + delta * delta)


def spectral_kernel(es, grid, kernel="gaussian", width=0.02):
    """Weights ``k(eps_a - eps)`` for every grid energy and eigenvalue.

    Parameters
    ----------
    es : EigenSystem or array of eigenvalues
    grid : array of float
    kernel : {"gaussian", "lorentzian"}
    width : float
        ``r`` for the Gaussian, ``delta`` for the Lorentzian.

    Returns
    -------
    ndarray, shape ``(len(grid), n_eigenvalues)``
    """
    values = es.values if isinstance(es, EigenSystem) else np.asarray(es)
    t = values[None, :] - np.asarray(grid, dtype=float)[:, None]
    if kernel == "gaussian":
        return gaussian_delta(t, width)
    if kernel == "lorentzian":
        return lorentzian_weight(t, width)
    raise ValidationError(f"unknown kernel {kernel!r}")


# --- chiral structure --------------------------------------------------------


def grading_basis(grading):
    """Fiber basis in which the grading is ``diag(1, ..., -1, ...)``.

    Returns ``(w, n_plus)`` with ``w`` unitary, columns ordered +1 first and,
    within each sector, by original index when the grading is diagonal.
    """
    j = np.asarray(grading, dtype=complex)
    if not np.allclose(j @ j, np.eye(len(j)), atol=1e-12) or not np.allclose(j, j.conj().T):
        raise ValidationError("chiral grading must be Hermitian with J^2 = 1")
    if np.allclose(j, np.diag(np.diag(j))):
        d = np.diag(j).real
        order = np.concatenate([np.flatnonzero(d > 0), np.flatnonzero(d < 0)])
        w = np.eye(len(j), dtype=complex)[:, order]
        return w, int((d > 0).sum())
    vals, vecs = np.linalg.eigh(j)
    order = np.argsort(-vals, kind="stable")
    return vecs[:, order], int((vals > 0).sum())


def _sector_sites(geometry, n_plus):
    nf = geometry.fiber
    cells = np.arange(geometry.ncells)[:, None] * nf
    plus = (cells + np.arange(n_plus)[None, :]).ravel()
    minus = (cells + np.arange(n_plus, nf)[None, :]).ravel()
    return plus, minus


def _to_grading_basis(data, geometry, grading):
    w, n_plus = grading_basis(grading)
    if 2 * n_plus != geometry.fiber:
        raise ValidationError("grading eigenspaces must have equal dimension")
    if not np.allclose(w, np.eye(len(w))[:, np.argmax(np.abs(w), axis=0)]):
        nc = geometry.ncells
        nf = geometry.fiber
        data = data.reshape(nc, nf, nc, nf)
        data = np.einsum("ai,xayb,bj->xiyj", w.conj(), data, w).reshape(nc * nf, nc * nf)
        perm = np.arange(nf)
    else:
        perm = np.argmax(np.abs(w), axis=0)
    sites = (np.arange(geometry.ncells)[:, None] * geometry.fiber + perm[None, :]).ravel()
    plus, minus = _sector_sites(geometry, n_plus)
    return data, sites[plus], sites[minus], n_plus


def fermi_unitary(p, grading):
    """Off-diagonal block of ``1 - 2P`` in the grading basis.

    In the basis where the grading is ``diag(1, -1)`` (with +1 first),
    ``1 - 2P = [[0, U^dagger], [U, 0]]``.

    Returns
    -------
    u : FiniteOperator
        On the torus with half the fiber.
    defect : float
        ``max |U^dagger U - 1|``.

    Raises
    ------
    ChiralityViolation
        If a diagonal block of ``1 - 2P`` exceeds ``1e-6``.
    """
    geometry = p.geometry
    data, plus, minus, n_plus = _to_grading_basis(p.data, geometry, grading)
    q_pp = -2 * data[np.ix_(plus, plus)]
    q_pp[np.diag_indices_from(q_pp)] += 1
    q_mm = -2 * data[np.ix_(minus, minus)]
    q_mm[np.diag_indices_from(q_mm)] += 1
    worst = max(float(np.abs(q_pp).max()), float(np.abs(q_mm).max()))
    if worst > CHIRALITY_TOL:
        raise ChiralityViolation(f"diagonal block of 1 - 2P has size {worst:.3e}")
    u = -2 * data[np.ix_(minus, plus)]
    defect = float(np.abs(u.conj().T @ u - np.eye(len(u))).max())
    return FiniteOperator(geometry.with_fiber(n_plus), u), defect


def chiral_block(h, grading):
    """Lower-left block ``A`` of ``H = [[0, A^dagger], [A, 0]]`` in the grading basis."""
    geometry = h.geometry
    data, plus, minus, n_plus = _to_grading_basis(_as_array(h), geometry, grading)
    return data[np.ix_(minus, plus)], geometry.with_fiber(n_plus)


def real_gauge(a, tol=1e-13):
    """Diagonal phases making ``a`` real, if they exist.

    Looks for unit-modulus vectors ``r`` and ``c`` with
    ``r[:, None] * a * c[None, :]`` real, by propagating phases along a
    spanning forest of the bipartite row/column graph of the non-zero
    entries and then checking every entry.

    Returns
    -------
    (r, c) or None
    """
    a = np.asarray(a)
    n, m = a.shape
    scale = float(np.abs(a).max(initial=0.0))
    if scale == 0:
        return np.ones(n, complex), np.ones(m, complex)
    rows, cols = np.nonzero(np.abs(a) > tol * scale)
    graph = coo_matrix((np.ones(len(rows)), (rows, n + cols)), shape=(n + m, n + m)).tocsr()
    graph = graph + graph.T
    ncomp, labels = connected_components(graph, directed=False)
    unit = a[rows, cols] / np.abs(a[rows, cols])
    phase = np.ones(n + m, dtype=complex)
    edge = {}
    for k, (i, j) in enumerate(zip(rows.tolist(), cols.tolist())):
        edge[(i, n + j)] = unit[k]
    seen = np.zeros(n + m, dtype=bool)
    for comp in range(ncomp):
        root = int(np.flatnonzero(labels == comp)[0])
        if seen[root]:
            continue
        order, pred = breadth_first_order(graph, root, directed=False)
        seen[order] = True
        for node in order[1:].tolist():
            parent = int(pred[node])
            if node >= n:  # column reached from a row
                phase[node] = np.conj(phase[parent] * edge[(parent, node)])
            else:          # row reached from a column
                phase[node] = np.conj(edge[(node, parent)] * phase[parent])
    r, c = phase[:n], phase[n:]
    fixed = r[:, None] * a * c[None, :]
    if np.abs(fixed.imag).max() > tol * scale * 10:
        return None
    return r, c


def polar_unitary(a):
    """Unitary factor ``W V^dagger`` of the SVD ``a = W S V^dagger``.

    Returns ``(u, smallest_singular_value)``. Real arithmetic is used when a
    diagonal gauge makes ``a`` real.
    """
    gauge = real_gauge(a) if np.iscomplexobj(a) else None
    if gauge is not None:
        r, c = gauge
        ar = np.ascontiguousarray((r[:, None] * a * c[None, :]).real)
        w, s, vh = _svd(ar)
        u = (r.conj()[:, None] * (w @ vh)) * c.conj()[None, :]
    else:
        w, s, vh = _svd(a)
        u = w @ vh
    return u, float(s.min(initial=np.inf))


def _svd(a):
    try:
        return sla.svd(a, lapack_driver="gesdd", check_finite=True)
    except np.linalg.LinAlgError:
        return sla.svd(a, lapack_driver="gesvd", check_finite=True)


def chiral_fermi_unitary(h, grading):
    """Fermi unitary at ``eps_F = 0`` obtained directly from a chiral Hamiltonian.

    For ``H = [[0, A^dagger], [A, 0]]`` the sign function gives
    ``1 - 2 chi(H <= 0) = [[0, U^dagger], [U, 0]]`` with ``U`` the polar
    factor of ``A``. This equals ``fermi_unitary(fermi_projection(eigh(H), 0), J)``
    whenever ``H`` has no zero mode, at the cost of one SVD of half size.

    Returns
    -------
    FiniteOperator
        Unitary to machine precision.
    """
    geometry = h.geometry
    data, plus, minus, n_plus = _to_grading_basis(_as_array(h), geometry, grading)
    err = max(float(np.abs(data[np.ix_(plus, plus)]).max()),
              float(np.abs(data[np.ix_(minus, minus)]).max()))
    if err > CHIRALITY_TOL:
        raise ChiralityViolation(f"diagonal block of H in the grading basis is {err:.3e}")
    a, half = data[np.ix_(minus, plus)], geometry.with_fiber(n_plus)
    u, smin = polar_unitary(a)
    if smin < ZERO_MODE_TOL:
        warnings.warn(f"Hamiltonian has a zero mode (|eps| = {smin:.2e})",
                      ZeroModeWarning, stacklevel=2)
    return FiniteOperator(half, u)

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ncfv.bloch import BlochHamiltonian, chern_k, magnetic_flux
from ncfv.errors import (GapClosed, NonpositiveTemperature, NonpositiveWidth, NotAProjection,
                         NotUnitary, SingularTensor, ValidationError)
from ncfv.lattice import (DisorderConfig, FiniteOperator, FluxMatrix, TorusGeometry,
                          approximate_derivation, build_hamiltonian)
from ncfv.models import aiii_chain, clifford_dirac, hofstadter, kane_mele_up
from ncfv.observables import (E2_HBAR, ConductivityTensor, KuboWeights, SpectralCurve, ccc,
                              ccc_estimator, chern_even, chern_even_from_eigensystem,
                              chern_even_states, chern_odd, delta_loc_length, dos, filling,
                              kubo_conductivity, resistivity, streda_check,
                              window_projection)
from ncfv.spectral import (chiral_fermi_unitary, eigh, fermi_dirac_weights,
                           fermi_projection)


def disordered(model, sizes, seed, flux=None):
    g = TorusGeometry(sizes, model.N)
    rng = np.random.default_rng(seed)
    cfg = DisorderConfig(rng.uniform(-0.5, 0.5, (g.ncells, model.channels)))
    return build_hamiltonian(model, g, flux, cfg), cfg


def kubo_reference(h, i, j, ef, t, gamma):
    """Dense evaluation: derive Phi_FD in real space, then sum in the eigenbasis."""
    e, v = np.linalg.eigh(h.data)
    phi = (v * fermi_dirac_weights(e, ef, t)) @ v.conj().T
    a = v.conj().T @ approximate_derivation(h, i).data @ v
    b = v.conj().T @ approximate_derivation(FiniteOperator(h.geometry, phi), j).data @ v
    total = 0j
    for p in range(len(e)):
        for q in range(len(e)):
            total += a[q, p] * b[p, q] / (gamma + 1j * (e[q] - e[p]))
    return -2 * np.pi * total / h.geometry.ncells


# --- Kubo ------------------------------------------------------------------------


@pytest.mark.parametrize("i, j", [(0, 0), (0, 1), (1, 0)])
def test_kubo_matches_dense_reference(i, j):
    h, _ = disordered(hofstadter(2.0), (5, 5), 3, FluxMatrix.planar(Fraction(1, 5)))
    es = eigh(h)
    ref = kubo_reference(h, i, j, -0.7, 0.2, 0.15)
    direct = kubo_conductivity(h, es, i, j, -0.7, 0.2, 0.15)
    fast = KuboWeights.compute(h, es, i, j, 0.15).conductivity(-0.7, 0.2)
    assert abs(direct - ref) <= 1e-10
    assert abs(fast - ref) <= 1e-10


def test_kubo_energy_shift_invariance():
    h, _ = disordered(kane_mele_up(2.0), (4, 5), 5)
    c = 0.731
    hs = FiniteOperator(h.geometry, h.data + c * np.eye(h.geometry.dim), hermitian=True)
    s0 = kubo_conductivity(h, eigh(h), 0, 1, 0.2, 0.1, 0.1)
    s1 = kubo_conductivity(hs, eigh(hs), 0, 1, 0.2 + c, 0.1, 0.1)
    assert abs(s0 - s1) <= 1e-10


def test_kubo_longitudinal_positive():
    h = build_hamiltonian(hofstadter(), TorusGeometry((12, 12)))
    s = kubo_conductivity(h, eigh(h), 0, 0, -1.0, 0.1, 0.1)
    assert s.real > 0 and abs(s.imag) <= 1e-10


def test_kubo_clean_size_independent_at_band_bottom():
    # the -4.0 row converges fastest; already 1e-7 close at 40 x 40
    h = build_hamiltonian(hofstadter(), TorusGeometry((40, 40)))
    s = kubo_conductivity(h, eigh(h), 0, 0, -4.0, 0.1, 0.1).real * E2_HBAR
    assert s == pytest.approx(0.1086465150, abs=1e-6)


def test_hall_conductance_quantized_in_gap():
    # lowest Hofstadter band at flux 1/3 has Chern number 1
    g = TorusGeometry((21, 21))
    h = build_hamiltonian(hofstadter(), g, FluxMatrix.planar(Fraction(1, 3)))
    w = KuboWeights.compute(h, eigh(h), 0, 1, 0.01)
    assert w.conductivity(-1.5, 0.01).real == pytest.approx(1.0, abs=5e-3)


def test_kubo_rejects_bad_parameters():
    h = build_hamiltonian(hofstadter(), TorusGeometry((4, 4)))
    es = eigh(h)
    with pytest.raises(NonpositiveTemperature):
        kubo_conductivity(h, es, 0, 0, 0.0, 0.0, 0.1)
    with pytest.raises(NonpositiveWidth):
        kubo_conductivity(h, es, 0, 0, 0.0, 0.1, 0.0)
    with pytest.raises(NonpositiveWidth):
        KuboWeights.compute(h, es, 0, 0, -1.0)


# --- resistivity and tensors -----------------------------------------------------


@pytest.mark.parametrize("sxx, sxy, rxx, rxy", [(1, 0, 1, 0), (0, 1, 0, -1), (2, 0, 0.5, 0),
                                                (0.6, 0.48989794855663565, 1.0, -0.816496580927726)])
def test_resistivity_examples(sxx, sxy, rxx, rxy):
    rho = resistivity(ConductivityTensor.planar(sxx, sxy))
    assert rho[0, 0] == pytest.approx(rxx)
    assert rho[0, 1] == pytest.approx(rxy)


@given(st.floats(0.05, 5), st.floats(-5, 5))
def test_resistivity_inverts_planar_tensor(sxx, sxy):
    s = ConductivityTensor.planar(sxx, sxy)
    np.testing.assert_allclose(resistivity(s) @ s.real, np.eye(2), atol=1e-10)


def test_resistivity_general_and_singular():
    s = np.diag([1.0, 2.0, 4.0])
    np.testing.assert_allclose(resistivity(s), np.diag([1, 0.5, 0.25]))
    with pytest.raises(SingularTensor):
        resistivity(ConductivityTensor.planar(0.0, 0.0))


def test_conductivity_tensor_residual():
    t = ConductivityTensor(np.array([[1 + 1e-3j, 0], [0, 1]]))
    assert t.imaginary_residual == pytest.approx(1e-3)


def test_spectral_curve_validation():
    with pytest.raises(ValidationError):
        SpectralCurve(np.array([0.0, 0.0]), np.zeros(2))
    with pytest.raises(ValidationError):
        SpectralCurve(np.array([0.0, 1.0]), np.array([0.0, np.nan]))


# --- DOS ---------------------------------------------------------------------------


def test_dos_single_level_peak():
    g = TorusGeometry((2,))
    es = eigh(FiniteOperator(g, np.diag([0.3, 5.0]).astype(complex), hermitian=True))
    d = dos(es, np.array([0.3]), 0.01)
    assert d.values[0] == pytest.approx(2 * np.pi / 2 / 0.01, rel=1e-5)


def test_dos_integral():
    h, _ = disordered(hofstadter(1.0), (5, 5), 1)
    es = eigh(h)
    delta = 0.01
    grid = np.concatenate([np.linspace(-400, -10, 40000, endpoint=False),
                           np.linspace(-10, 10, 200001),
                           np.linspace(10, 400, 40000)[1:]])
    d = dos(es, grid, delta)
    assert np.trapezoid(d.values, grid) == pytest.approx(2 * np.pi**2, abs=1e-3)


def test_dos_vanishes_in_hofstadter_gaps():
    flux = FluxMatrix.planar(Fraction(1, 3))
    bh = BlochHamiltonian.from_model(hofstadter(), flux)
    bands = bh.bands(bh.grid(60))
    mids = [(bands[:, k].max() + bands[:, k + 1].min()) / 2 for k in (0, 1)]
    h = build_hamiltonian(hofstadter(), TorusGeometry((24, 24)), flux)
    d = dos(eigh(h), np.array([-2.5] + sorted(mids)), 0.01)
    assert d.values[1:].max() < 0.01 * d.values[0]


# --- even Chern numbers ------------------------------------------------------------


def test_chern_of_constant_projection_is_zero():
    g = TorusGeometry((5, 5), 2)
    p = FiniteOperator(g, np.kron(np.eye(g.ncells), np.diag([1.0, 0.0])).astype(complex))
    assert chern_even(p).value == 0


def test_chern_complement_and_orientation():
    h, _ = disordered(kane_mele_up(1.0), (6, 6), 2)
    es = eigh(h)
    p = fermi_projection(es, 0.0)
    q = FiniteOperator(h.geometry, np.eye(h.geometry.dim) - p.data)
    c12 = chern_even(p, (0, 1)).value
    assert abs(c12 + chern_even(q).value) <= 1e-8
    assert chern_even(p, (1, 0)).value == -c12
    occ = es.vectors[:, es.values <= 0.0]
    assert chern_even_states(occ, h.geometry).value == pytest.approx(c12, abs=1e-10)
    assert chern_even_from_eigensystem(es, 0.0).value == pytest.approx(c12, abs=1e-10)


def test_chern_kane_mele_clean_close_to_one():
    model = kane_mele_up(0.0)
    h = build_hamiltonian(model, TorusGeometry((12, 12), 2))
    assert chern_even_from_eigensystem(eigh(h), 0.0).value == pytest.approx(0.9915, abs=1e-3)
    assert chern_k(model, 0.0, n=100) == pytest.approx(1.0, abs=1e-6)


def test_chern_invariant_under_magnetic_translation():
    model = hofstadter(1.5)
    flux = FluxMatrix.planar(Fraction(2, 8))
    h, cfg = disordered(model, (8, 8), 4, flux)
    g = h.geometry
    h2 = build_hamiltonian(model, g, flux, cfg.translated(g, (3, 5)))
    c1 = chern_even_from_eigensystem(eigh(h), -1.2).value
    c2 = chern_even_from_eigensystem(eigh(h2), -1.2).value
    assert abs(c1 - c2) <= 1e-10


def test_chern_rejects_non_projection(rng):
    g = TorusGeometry((3, 3))
    with pytest.raises(NotAProjection):
        chern_even(FiniteOperator(g, 0.5 * np.eye(9, dtype=complex)))
    with pytest.raises(ValidationError):
        chern_even(FiniteOperator.identity(g), (0,))


def test_chern_empty_and_full_occupation():
    h = build_hamiltonian(hofstadter(), TorusGeometry((4, 4)))
    es = eigh(h)
    assert chern_even_from_eigensystem(es, -10.0).value == 0
    assert chern_even_from_eigensystem(es, 10.0).value == 0


# --- odd Chern numbers -------------------------------------------------------------


@pytest.mark.parametrize("m, expected", [(0.5, 1.0), (-0.5, 1.0), (1.5, 0.0), (-1.5, 0.0)])
def test_winding_clean_chain(m, expected):
    model = aiii_chain(m)
    h = build_hamiltonian(model, TorusGeometry((1000,), 2))
    u = chiral_fermi_unitary(h, model.chiral_grading)
    assert chern_odd(u).value == pytest.approx(expected, abs=1e-6)


def test_chern_odd_adjoint_flips_sign():
    model = aiii_chain(0.3, 1.0, 2.0)
    h, _ = disordered(model, (50,), 7)
    u = chiral_fermi_unitary(h, model.chiral_grading)
    assert abs(chern_odd(u).value + chern_odd(u.dagger()).value) <= 1e-8


def test_chern_odd_three_dimensional_adjoint():
    model = clifford_dirac(3, 1.0 + 0.5, "AIII")
    h = build_hamiltonian(model, TorusGeometry((4, 4, 4), model.N))
    u = chiral_fermi_unitary(h, model.chiral_grading)
    c = chern_odd(u).value
    assert abs(c + chern_odd(u.dagger()).value) <= 1e-8
    # reordering the directions by a transposition flips the sign
    assert chern_odd(u, (1, 0, 2)).value == pytest.approx(-c, abs=1e-12)


def test_chern_odd_rejects_non_unitary():
    g = TorusGeometry((5,))
    with pytest.raises(NotUnitary):
        chern_odd(FiniteOperator(g, 2 * np.eye(5, dtype=complex)))


# --- correlations, localization, filling ------------------------------------------


def test_ccc_symmetric_and_total_mass():
    h, _ = disordered(hofstadter(2.0), (4, 4), 6)
    es = eigh(h)
    grid = np.linspace(-7, 7, 351)
    f = ccc(h, es, grid, r=0.1)
    np.testing.assert_array_equal(f.values, f.values.T)
    mass = np.trapezoid(np.trapezoid(f.values, grid, axis=1), grid)
    g = h.geometry
    expected = sum(np.vdot(d, d).real for d in
                   (approximate_derivation(h, j).data for j in range(g.d))) / (g.d * g.dim)
    assert mass / (4 * np.pi**2) == pytest.approx(expected, abs=1e-3)


def test_ccc_estimator_zero_for_same_surface():
    h = build_hamiltonian(hofstadter(), TorusGeometry((4, 4)))
    es = eigh(h)
    f = ccc(h, es, np.linspace(-1, 1, 5))
    assert ccc_estimator(f, f) == 0


def test_loc_length_trivial_projections():
    g = TorusGeometry((4, 4))
    assert delta_loc_length(FiniteOperator.zeros(g)) == 0
    assert delta_loc_length(FiniteOperator.identity(g)) == 0


def test_loc_length_saturates_for_localized_window():
    values = []
    for m in (20, 30, 40):
        h, _ = disordered(hofstadter(8.0), (m, m), 11)
        values.append(delta_loc_length(window_projection(eigh(h), -5.0, -4.0)))
    assert values[2] == pytest.approx(values[1], rel=0.1)
    assert values[2] > 0


def test_filling():
    g = TorusGeometry((4, 4), 2)
    h = build_hamiltonian(kane_mele_up(), g)
    assert filling(fermi_projection(eigh(h), 0.0)) == pytest.approx(1.0)


# --- Streda ------------------------------------------------------------------------


def test_streda_lowest_gap():
    res = streda_check(hofstadter(), TorusGeometry((24, 24)), -1.5, 8)
    assert res.chern == pytest.approx(1.0, abs=0.05)
    assert res.slope == pytest.approx(res.chern, abs=0.05)


def test_streda_trivial_insulator():
    res = streda_check(clifford_dirac(2, 5.0), TorusGeometry((8, 8), 2), 0.0, 1)
    assert res.slope == 0
    assert res.chern == pytest.approx(0.0, abs=1e-5)


def test_streda_gap_closed():
    with pytest.raises(GapClosed):
        streda_check(hofstadter(), TorusGeometry((8, 8)), 0.0, 0)

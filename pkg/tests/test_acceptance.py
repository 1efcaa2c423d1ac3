"""Acceptance suite: one verdict line per criterion.

Criteria 1 to 7 are reproduction runs and carry the ``slow`` marker
(``pytest -m "not slow"`` skips them); criterion 8 is the fast invariant
suite. Reference numbers are frozen below.
"""

import warnings
from fractions import Fraction

import numpy as np
import pytest

from ncfv import cli
from ncfv.bloch import chern_k, kubo_clean, magnetic_flux
from ncfv.ensemble import EnsembleSpec, Task, run_ensemble, sample_config
from ncfv.errors import ZeroModeWarning
from ncfv.lattice import (DisorderConfig, FiniteOperator, FluxMatrix, TorusGeometry,
                          apply_magnetic_translation, approximate_derivation,
                          build_hamiltonian, normalized_trace, root_of_unity_derivation)
from ncfv.models import (aiii_3d, aiii_chain, analytic_loc_length_1d_signed, gamma_matrices,
                         hofstadter, kane_mele_up)
from ncfv.observables import (E2_HBAR, ConductivityTensor, KuboWeights, ccc, chern_even,
                              chern_even_states, chern_odd, dos, resistivity, streda_check)
from ncfv.scaling import CurveFamily, collapse_fit, crossing_point
from ncfv.spectral import chiral_fermi_unitary, eigh, fermi_projection

from .conftest import report

# clean Hofstadter sigma_11 at T = Gamma = 0.1, e^2/hbar, rows eps_F = -4k/9
TABLE_80 = [4.0339628247, 3.9394154619, 3.7040304262, 3.3684805414, 2.9522720814,
            2.4678006935, 1.9239335953, 1.3274333126, 0.6854442914, 0.1086465150]
TABLE_EXACT = [4.0339630712, 3.9394154624, 3.7040301307, 3.3684801516, 2.9522714009,
               2.4678005104, 1.9239338089, 1.3274333085, 0.6854442923, 0.1086465150]
ROWS = [-4 * k / 9 for k in range(10)]


def clean_kubo_rows(m):
    h = build_hamiltonian(hofstadter(), TorusGeometry((m, m)))
    w = KuboWeights.compute(h, eigh(h), 0, 0, 0.1)
    return np.array([w.conductivity(e, 0.1).real * E2_HBAR for e in ROWS])


@pytest.fixture(scope="module")
def clean_kubo():
    return {m: clean_kubo_rows(m) for m in (40, 60, 80)}


@pytest.fixture(scope="module")
def clean_exact():
    return np.array([kubo_clean(hofstadter(), e, 0.1, 0.1).real * E2_HBAR for e in ROWS])


# --- 1, 2: clean Kubo ---------------------------------------------------------------


@pytest.mark.slow
def test_a1_clean_kubo_table(clean_kubo, clean_exact):
    lattice = np.abs(clean_kubo[80] - TABLE_80).max()
    oracle = np.abs(clean_exact - TABLE_EXACT).max()
    ok = report("A1", lattice <= 1e-6 and oracle <= 1e-9,
                f"80x80 max |dev| = {lattice:.2e} (tol 1e-6), "
                f"Bloch oracle max |dev| = {oracle:.2e} (tol 1e-9)")
    assert ok


@pytest.mark.slow
def test_a2_convergence_rate(clean_kubo, clean_exact):
    err = [abs(clean_kubo[m][0] - clean_exact[0]) for m in (40, 60, 80)]
    gains = [err[0] / err[1], err[1] / err[2]]
    ok = report("A2", min(gains) >= 10,
                f"errors at eps_F=0 for M=40/60/80: {err[0]:.2e}, {err[1]:.2e}, {err[2]:.2e}; "
                f"gains {gains[0]:.1f}x, {gains[1]:.1f}x (need >= 10x)")
    assert ok


# --- 3: disordered Chern --------------------------------------------------------------


@pytest.mark.slow
def test_a3_disordered_chern_plateau():
    spec = EnsembleSpec("kane_mele_up", {"lam": 4.0}, (40, 40), master_seed=2024, count=20,
                        tasks=(Task("chern", {"fermi_levels": [0.0]}),))
    st = run_ensemble(spec, progress=False)["chern"]
    mean = float(st.mean[0])
    scatter = float(np.abs(st.raw[:, 0] - mean).max())
    ok = report("A3a", abs(mean - 1) <= 1e-4 and scatter <= 1e-5,
                f"M=40, 20 configs, eps_F=0: |mean - 1| = {abs(mean - 1):.2e} (tol 1e-4), "
                f"max scatter = {scatter:.2e} (tol 1e-5)")
    assert ok


@pytest.mark.slow
def test_a3_disordered_chern_trivial_side():
    # only the states below eps_F are needed, so a windowed solve keeps memory low
    spec = EnsembleSpec("kane_mele_up", {"lam": 4.0}, (60, 60), master_seed=2024, count=3)
    model = spec.build_model()
    g = spec.geometry(model)
    values = []
    for i in range(spec.count):
        h = build_hamiltonian(model, g, None, sample_config(spec, i, g, model.channels))
        es = eigh(h, energy_window=(-np.inf, -2.0))
        del h
        values.append(chern_even_states(es.vectors, g).value)
        del es
    mean = float(np.mean(values))
    ok = report("A3b", 0.005 <= mean <= 0.05,
                f"M=60, {spec.count} configs, eps_F=-2: mean Ch = {mean:.4f} "
                f"(need [0.005, 0.05]); per config {np.round(values, 4).tolist()}")
    assert ok


# --- 4: 1D AIII phase diagram ------------------------------------------------------------

A4_M = np.round(np.linspace(0.05, 2.05, 21), 10)
A4_W = np.round(np.linspace(0.0, 8.0, 21), 10)


def _a4_grid():
    """Mean |Ch1| and mean Ch1 over 5 configurations at each grid point."""
    mean_abs = np.empty((len(A4_M), len(A4_W)))
    mean = np.empty_like(mean_abs)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroModeWarning)
        for a, m in enumerate(A4_M):
            for b, w in enumerate(A4_W):
                spec = EnsembleSpec("aiii_chain", {"m": m, "W1": 0.5 * w, "W2": w}, (1000,),
                                    master_seed=99, count=5, tasks=(Task("winding"),))
                raw = run_ensemble(spec, progress=False)["winding"].raw[:, 0]
                mean_abs[a, b] = np.abs(raw).mean()
                mean[a, b] = raw.mean()
    return mean_abs, mean


def _boundary_agreement(field, analytic):
    """Fraction of 0.5-level edges of ``field`` within one cell of a sign change of ``analytic``."""
    n0, n1 = field.shape
    s = np.sign(analytic)
    hits, total = 0, 0
    for a in range(n0):
        for b in range(n1):
            for da, db in ((1, 0), (0, 1)):
                c, d = a + da, b + db
                if c >= n0 or d >= n1:
                    continue
                if (field[a, b] - 0.5) * (field[c, d] - 0.5) >= 0:
                    continue
                total += 1
                lo0, hi0 = max(min(a, c) - 1, 0), min(max(a, c) + 2, n0)
                lo1, hi1 = max(min(b, d) - 1, 0), min(max(b, d) + 2, n1)
                patch = s[lo0:hi0, lo1:hi1]
                hits += bool(patch.max() > 0 and patch.min() < 0) or bool((patch == 0).any())
    return hits, total


@pytest.mark.slow
def test_a4_aiii_chain_phase_diagram():
    field, mean = _a4_grid()
    analytic = np.array([[analytic_loc_length_1d_signed(m, 0.5 * w, w) for w in A4_W]
                         for m in A4_M])
    hits, total = _boundary_agreement(field, analytic)
    deep = analytic >= 0.1
    deep_err = float(np.abs(mean[deep] - 1).max())
    frac = hits / total if total else 0.0
    ok = report("A4", total > 0 and frac >= 0.9 and deep_err <= 1e-3,
                f"{hits}/{total} boundary edges within one cell ({frac:.0%}, need 90%); "
                f"deep phase ({deep.sum()} points) max |Ch1 - 1| = {deep_err:.2e} (tol 1e-3)")
    assert ok


# --- 5: 3D AIII ---------------------------------------------------------------------------


@pytest.mark.slow
def test_a5_aiii_3d_invariant():
    out = {}
    for m in (0.0, 2.0):
        model = aiii_3d(m)
        h = build_hamiltonian(model, TorusGeometry((12, 12, 12), model.N))
        out[m] = chern_odd(chiral_fermi_unitary(h, model.chiral_grading)).value
    dev = max(abs(out[0.0] + 2), abs(out[2.0] - 1))
    ok = report("A5", dev <= 0.05,
                f"12^3: Ch3(m=0) = {out[0.0]:.4f}, Ch3(m=2) = {out[2.0]:.4f}, "
                f"max |dev| = {dev:.2e} (tol 0.05)")
    assert ok


# --- 6: Streda ---------------------------------------------------------------------------


@pytest.mark.slow
def test_a6_streda():
    res = streda_check(hofstadter(), TorusGeometry((60, 60)), -1.5, 20, 21)
    oracle = chern_k(hofstadter(), 1, flux=magnetic_flux(1, 3))
    d1 = abs(res.slope - res.chern)
    d2 = abs(res.chern - oracle)
    ok = report("A6", d1 <= 0.05 and d2 <= 1e-3,
                f"M=60, flux 20/60 -> 21/60, eps_F=-1.5: dfilling*M = {res.slope:.4f}, "
                f"Ch real space = {res.chern:.6f}, k oracle = {oracle:.6f}; "
                f"|slope - Ch| = {d1:.2e} (tol 0.05), |Ch - oracle| = {d2:.2e} (tol 1e-3)")
    assert ok


# --- 7: criticality ------------------------------------------------------------------------


def test_a7a_synthetic_collapse():
    rng = np.random.default_rng(7)
    kappa, eps_c, t0 = 0.20, -3.15, 0.06
    x = np.linspace(-3.8, -2.5, 27)
    curves = {}
    for t in (0.03, 0.045, 0.06, 0.09, 0.12):
        master = 1.0 / (1.0 + np.exp(-4 * (x - eps_c) * (t / t0) ** -kappa))
        curves[t] = (x, master + 0.01 * rng.standard_normal(x.size))
    fit = collapse_fit(CurveFamily(curves), "temperature", ref=t0, exponent_range=(0.05, 0.5))
    ok = report("A7a", abs(fit.exponent - kappa) <= 0.01,
                f"synthetic kappa* = 0.20 with 1% noise: recovered {fit.exponent:.4f} "
                f"(tol 0.01), eps_c = {fit.eps_c:.4f}")
    assert ok


A7_LEVELS = np.round(np.linspace(-4.0, -2.4, 17), 10).tolist()
A7_TEMPS = [0.03, 0.06, 0.12]


@pytest.mark.slow
def test_a7b_hofstadter_criticality():
    spec = EnsembleSpec("hofstadter", {"lam": 3.0}, (60, 60), flux={(0, 1): 22 / 140},
                        master_seed=314, count=10,
                        tasks=(Task("kubo", {"fermi_levels": A7_LEVELS, "temperature": A7_TEMPS,
                                             "gamma": A7_TEMPS,
                                             "components": [(0, 0), (0, 1)]}),))
    g = spec.geometry()
    assert spec.flux_matrix(g).fraction(0, 1) == Fraction(9, 60)
    sigma = run_ensemble(spec, progress=False)["kubo"].mean.real  # (component, T, eps_F)
    curves = {}
    for t, temp in enumerate(A7_TEMPS):
        rho = [resistivity(ConductivityTensor.planar(sigma[0, t, e], sigma[1, t, e]))[0, 0]
               for e in range(len(A7_LEVELS))]
        curves[temp] = (A7_LEVELS, rho)
    family = CurveFamily(curves)
    eps_c, spread = crossing_point(family, window=(-3.7, -2.6))
    fit = collapse_fit(family, "temperature", ref=0.08, exponent_range=(0.05, 0.5),
                       eps_range=(eps_c - 0.2, eps_c + 0.2))
    ok = report("A7b", abs(eps_c + 3.15) <= 0.15 and 0.12 <= fit.exponent <= 0.28,
                f"rho_xx crossing {eps_c:.3f} +- {spread:.3f} (need -3.15 +- 0.15), "
                f"collapse kappa = {fit.exponent:.3f} (need [0.12, 0.28]), "
                f"fit eps_c = {fit.eps_c:.3f}")
    assert ok


# --- 8: invariant suite ------------------------------------------------------------------


def _random_op(rng, g):
    n = g.dim
    return FiniteOperator(g, rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))


def _invariants(tmp_path):
    rng = np.random.default_rng(8)
    res = {}
    g = TorusGeometry((5, 4), 2)
    a, b = _random_op(rng, g), _random_op(rng, g)
    res["trace cyclicity"] = (abs(normalized_trace(a @ b) - normalized_trace(b @ a)), 1e-12)
    res["T(dA) = 0"] = (max(abs(normalized_trace(approximate_derivation(a, j)))
                            for j in range(2)), 0.0)
    go = TorusGeometry((5, 7), 2)
    c = _random_op(rng, go)
    res["root of unity = wrap"] = (max(np.abs(root_of_unity_derivation(c, j).data
                                              - approximate_derivation(c, j).data).max()
                                       for j in range(2)), 1e-12)
    gc = TorusGeometry((6, 6))
    flux = FluxMatrix.planar(Fraction(1, 6))
    cfg = DisorderConfig(rng.uniform(-0.5, 0.5, (gc.ncells, 1)))
    h = build_hamiltonian(hofstadter(2.0), gc, flux, cfg)
    res["covariance"] = (max(np.abs(apply_magnetic_translation(h, y, flux).data
                                    - build_hamiltonian(hofstadter(2.0), gc, flux,
                                                        cfg.translated(gc, y)).data).max()
                             for y in ((1, 0), (0, 1), (2, -3))), 1e-12)
    model = aiii_chain(0.7, 1.0, 2.0)
    gch = TorusGeometry((40,), 2)
    hc = build_hamiltonian(model, gch, config=DisorderConfig(rng.uniform(-0.5, 0.5, (40, 2))))
    jg = np.kron(np.eye(40), model.chiral_grading)
    res["chiral anticommutation"] = (np.abs(jg @ hc.data + hc.data @ jg).max(), 1e-13)
    res["Clifford anticommutators"] = (max(gamma_matrices(k).anticommutator_residual()
                                           for k in range(1, 7)), 1e-14)
    hd = build_hamiltonian(hofstadter(1.0), TorusGeometry((5, 5)),
                           config=DisorderConfig(rng.uniform(-0.5, 0.5, (25, 1))))
    es = eigh(hd)
    grid = np.concatenate([np.linspace(-400, -10, 40000, endpoint=False),
                           np.linspace(-10, 10, 200001), np.linspace(10, 400, 40000)[1:]])
    res["DOS integral 2 pi^2"] = (abs(np.trapezoid(dos(es, grid, 0.01).values, grid)
                                      - 2 * np.pi ** 2), 1e-3)
    f = ccc(hd, es, np.linspace(-5, 5, 41), r=0.1).values
    res["ccc symmetry"] = (np.abs(f - f.T).max(), 0.0)
    hk = build_hamiltonian(kane_mele_up(1.0), TorusGeometry((6, 6), 2),
                           config=DisorderConfig(rng.uniform(-0.5, 0.5, (36, 2))))
    p = fermi_projection(eigh(hk), 0.0)
    q = FiniteOperator(p.geometry, np.eye(p.geometry.dim) - p.data)
    res["Ch(P) + Ch(1-P)"] = (abs(chern_even(p).value + chern_even(q).value), 1e-8)
    # byte-identical CSVs for 1 and 4 workers
    config = {"model": {"name": "hofstadter", "params": {"lam": 1.0}}, "sizes": [[6, 6]],
              "fermi_levels": [-0.5, 0.5], "temperatures": [0.1], "gamma": 0.1,
              "ensemble": {"configs": 4, "seed": 3},
              "tasks": [{"kind": "kubo", "components": [[0, 0], [0, 1]]}, {"kind": "chern"}]}
    cli.run(config, tmp_path / "w1", workers=1, progress=False)
    cli.run(config, tmp_path / "w4", workers=4, progress=False)
    same = all((tmp_path / "w1" / n).read_bytes() == (tmp_path / "w4" / n).read_bytes()
               for n in ("kubo.csv", "chern.csv"))
    res["1 vs 4 workers"] = (0.0 if same else 1.0, 0.0)
    return res


def test_a8_invariant_suite(tmp_path):
    res = _invariants(tmp_path)
    bad = [k for k, (v, tol) in res.items() if not v <= tol]
    detail = "; ".join(f"{k} {v:.1e}" for k, (v, _) in res.items())
    ok = report("A8", not bad, f"{len(res) - len(bad)}/{len(res)} invariants hold ({detail})"
                + (f"; failing: {', '.join(bad)}" if bad else ""))
    assert ok

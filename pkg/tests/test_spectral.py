"""Boundary-eigenvalue pencils: assembly, spectra, instability counts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wentlab.spectral import (
    EigenSystem,
    SpectralError,
    assemble_wentzell,
    instability_index,
    lambda1_inf,
    linearized_spectrum,
    rayleigh_quotient,
    solve_spectrum,
)

from conftest import unit_mesh

# roots of tan(k) = (1-k^2)/(2k), squared: eigenvalues of the mixed
# Robin(x=0) / eigenvalue-in-the-boundary-condition(x=1) problem
MIXED_EIGS = np.array([0.309100895957, 5.614533718225, 26.006514486837,
                       65.604528615452, 124.860160490081])


def _mixed_mesh(cells, order_ok=True):
    return unit_mesh(cells, boundary={"left": "gamma2", "right": "gamma1"})


# ---------------------------------------------------------------------------
# assembly


def test_classic_assembly_all_gamma1():
    mesh = unit_mesh(4)
    sys = assemble_wentzell(mesh, "classic")
    h = 0.25
    K = sys.K
    np.testing.assert_allclose(np.diag(K), [1 / h, 2 / h, 2 / h, 2 / h, 1 / h])
    np.testing.assert_allclose(np.diag(K, 1), -np.ones(4) / h)
    # boundary rows gain unit surface mass, bulk lumps elsewhere
    np.testing.assert_allclose(sys.mass_surf, [1, 0, 0, 0, 1])
    np.testing.assert_allclose(sys.mass_bulk, [h / 2, h, h, h, h / 2])
    assert sys.gamma2_measure == 0.0
    pairs = solve_spectrum(sys, 3)
    assert pairs[0].j == 0
    np.testing.assert_allclose(pairs[0].value, 0.0, atol=1e-12)
    spread = np.ptp(pairs[0].vector)
    assert spread < 1e-10 * np.abs(pairs[0].vector).max()


def test_classic_assembly_all_gamma2():
    mesh = unit_mesh(4, boundary={"left": "gamma2", "right": "gamma2"})
    sys = assemble_wentzell(mesh, "classic")
    h = 0.25
    # Robin surface term on the stiffness diagonal, no boundary mass
    assert sys.K[0, 0] == 1 / h + 1.0
    assert sys.K[-1, -1] == 1 / h + 1.0
    np.testing.assert_allclose(sys.mass_surf, 0.0)
    assert sys.gamma2_measure == 2.0
    pairs = solve_spectrum(sys, 2)
    assert pairs[0].j == 1 and pairs[0].value > 0


def test_generalized_reduces_to_classic():
    # c_f = c_g = 0 and a = 1 (m=2, p=0): the generalized pencil is the
    # classic one with the gamma2 row and column eliminated
    mesh = _mixed_mesh(20)
    gen = assemble_wentzell(mesh, "generalized", m=2.0, p=0.0, alpha=1.0)
    cls = assemble_wentzell(mesh, "classic")
    kept = gen.kept
    assert 0 not in kept.tolist()
    K_cls = cls.K.copy()
    K_cls[0, 0] -= 1.0  # drop the Robin surface term with the node
    np.testing.assert_allclose(gen.K, K_cls[np.ix_(kept, kept)], atol=1e-14)
    np.testing.assert_allclose(gen.mass_bulk, cls.mass_bulk[kept])
    np.testing.assert_allclose(gen.mass_surf, cls.mass_surf[kept])
    assert gen.coefficients["a"] == 1.0


def test_generalized_coefficient_scale():
    # a = alpha (m-1) (2/(m+p))^2
    mesh = _mixed_mesh(10)
    sys = assemble_wentzell(mesh, "generalized", alpha=2.0, m=3.0, p=1.0)
    np.testing.assert_allclose(sys.coefficients["a"], 2.0 * 2.0 * 0.25)


def test_assemble_rejections():
    mesh = unit_mesh(8)
    with pytest.raises(SpectralError):
        assemble_wentzell(mesh, "shifted")
    with pytest.raises(SpectralError):
        assemble_wentzell(mesh, "classic", order=3)
    with pytest.raises(SpectralError):
        assemble_wentzell(mesh, "generalized", m=1.0)
    with pytest.raises(SpectralError):
        assemble_wentzell(mesh, "generalized", alpha=0.0)
    with pytest.raises(SpectralError):
        assemble_wentzell(unit_mesh(9), "classic", order=4)  # odd cells


def test_system_validate():
    mesh = unit_mesh(4)
    sys = assemble_wentzell(mesh, "classic")
    bad = EigenSystem(variant="classic", mesh=mesh, K=sys.K.copy(),
                      mass_bulk=sys.mass_bulk, mass_surf=sys.mass_surf,
                      kept=sys.kept, gamma2_measure=0.0)
    bad.K[0, 1] += 1.0
    with pytest.raises(SpectralError, match="symmetric"):
        bad.validate()
    bad2 = EigenSystem(variant="classic", mesh=mesh, K=sys.K,
                       mass_bulk=np.zeros_like(sys.mass_bulk),
                       mass_surf=np.zeros_like(sys.mass_surf),
                       kept=sys.kept, gamma2_measure=0.0)
    with pytest.raises(SpectralError, match="mass"):
        bad2.validate()


# ---------------------------------------------------------------------------
# spectra against the closed-form mixed problem


def test_mixed_spectrum_order4():
    sys = assemble_wentzell(_mixed_mesh(400), "classic", order=4)
    pairs = solve_spectrum(sys, 5)
    vals = np.array([p.value for p in pairs])
    rel = np.abs(vals - MIXED_EIGS) / MIXED_EIGS
    assert np.max(rel) < 1e-5
    assert pairs[0].j == 1
    # ground state positivity and spectral gap
    assert np.all(pairs[0].vector > 0)
    assert pairs[1].value - pairs[0].value > 0


def test_order2_second_order_convergence():
    errs = []
    for cells in (50, 100, 200):
        sys = assemble_wentzell(_mixed_mesh(cells), "classic", order=2)
        lam = solve_spectrum(sys, 1)[0].value
        errs.append(abs(lam - MIXED_EIGS[0]))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(3.5 < r < 4.5 for r in ratios)


def test_m_orthonormal_pairs():
    sys = assemble_wentzell(_mixed_mesh(60), "classic")
    pairs = solve_spectrum(sys, 4)
    V = np.stack([p.vector for p in pairs])
    G = V @ np.diag(sys.M) @ V.T
    np.testing.assert_allclose(G, np.eye(4), atol=1e-10)
    assert all(p.residual <= 1e-8 * np.linalg.norm(sys.K @ p.vector) + 1e-12
               for p in pairs)


def test_solve_spectrum_bounds():
    sys = assemble_wentzell(unit_mesh(4), "classic")
    with pytest.raises(SpectralError):
        solve_spectrum(sys, 0)
    with pytest.raises(SpectralError):
        solve_spectrum(sys, sys.size + 1)


# ---------------------------------------------------------------------------
# Rayleigh quotients


def test_rayleigh_constant_vector():
    sys = assemble_wentzell(_mixed_mesh(100), "classic")
    one = np.ones(sys.size)
    # K(1,1) = gamma2 Robin mass = 1; masses: bulk 1 + gamma1 surface 1 (+
    # gamma2 surface 1 in the X^2 denominator)
    np.testing.assert_allclose(rayleigh_quotient(sys, one), 0.5, rtol=1e-12)
    np.testing.assert_allclose(rayleigh_quotient(sys, one, mode="paper_x2"),
                               1.0 / 3.0, rtol=1e-12)


def test_rayleigh_modes_coincide_when_eliminated():
    sys = assemble_wentzell(_mixed_mesh(40), "generalized", m=2.0)
    v = np.sin(np.linspace(0.1, 2.0, sys.size))
    assert rayleigh_quotient(sys, v) == rayleigh_quotient(sys, v, mode="paper_x2")


def test_rayleigh_rejections():
    sys = assemble_wentzell(unit_mesh(8), "classic")
    with pytest.raises(SpectralError):
        rayleigh_quotient(sys, np.ones(3))
    with pytest.raises(SpectralError):
        rayleigh_quotient(sys, np.zeros(sys.size))
    with pytest.raises(SpectralError):
        rayleigh_quotient(sys, np.ones(sys.size), mode="l2")


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=21, max_size=21),
       st.integers(0, 20))
def test_rayleigh_bounded_below_by_lambda1(vals, bump):
    sys = assemble_wentzell(_mixed_mesh(20), "classic")
    lam1 = solve_spectrum(sys, 1)[0].value
    phi = np.array(vals)
    phi[bump] += 1.0  # keep it away from the zero vector
    q = rayleigh_quotient(sys, phi)
    assert q >= lam1 * (1 - 1e-9) - 1e-9


# ---------------------------------------------------------------------------
# Lambda_1 over fields and linearized spectra


def test_lambda1_inf_shifted_base():
    # c_f = c_g = -1 shifts the zero mode of the all-gamma1 pencil to 1
    mesh = unit_mesh(30)
    sys = assemble_wentzell(mesh, "generalized", m=2.0, c_f=-1.0, c_g=-1.0)
    rep = lambda1_inf([sys])
    np.testing.assert_allclose(rep.value, 1.0, rtol=1e-10)
    assert rep.dissipative


def test_lambda1_inf_takes_min():
    mesh = unit_mesh(30)
    systems = [
        assemble_wentzell(mesh, "generalized", m=2.0, c_f=-0.5, c_g=-0.5),
        assemble_wentzell(mesh, "generalized", m=2.0, c_f=-2.0, c_g=-2.0),
    ]
    rep = lambda1_inf(systems)
    np.testing.assert_allclose(rep.value, 0.5, rtol=1e-10)
    np.testing.assert_allclose(rep.per_system, [0.5, 2.0], rtol=1e-10)


def test_lambda1_inf_flags_negative():
    mesh = unit_mesh(30)
    sys = assemble_wentzell(mesh, "generalized", m=2.0, c_f=2.0)
    rep = lambda1_inf([sys])
    assert rep.value < 0 and not rep.dissipative
    with pytest.raises(SpectralError):
        lambda1_inf([])


def test_linearized_spectrum_values():
    roots = linearized_spectrum([0.0, 1.0, 4.0], nu=1.0, shift_f=2.0, shift_g=0.5)
    assert roots == [(2.0, 0.5), (1.0, -0.5), (-2.0, -3.5)]
    with pytest.raises(SpectralError):
        linearized_spectrum([1.0], nu=0.0, shift_f=1.0, shift_g=1.0)


# ---------------------------------------------------------------------------
# instability counts


def test_instability_heuristic_count():
    assert instability_index([0.0, 1.0, 4.0], 1.0, (2.0, 0.5),
                             method="heuristic") == 3


def test_instability_equal_shifts_from_list():
    assert instability_index([0.0, 0.5, 2.0, 9.0], 1.0, 1.0) == 2
    # strict inequality: a mode exactly at the shift is not unstable
    assert instability_index([0.0, 1.0], 1.0, 1.0) == 1


def test_instability_unequal_needs_system():
    with pytest.raises(SpectralError, match="equal shifts"):
        instability_index([0.0, 1.0], 1.0, (2.0, 0.5))


def test_instability_direct_matches_count():
    sys = assemble_wentzell(_mixed_mesh(50), "classic")
    lams = [p.value for p in solve_spectrum(sys, 5)]
    for nu in (1.0, 0.5, 0.25):
        expect = sum(1 for l in lams if nu * l < 3.0)
        assert instability_index(sys, nu, 3.0) == expect
    counts = [instability_index(sys, nu, 3.0) for nu in (1.0, 0.5, 0.25, 0.125)]
    assert all(a <= b for a, b in zip(counts, counts[1:]))


def test_instability_rejections():
    with pytest.raises(SpectralError):
        instability_index([1.0], -1.0, 1.0)
    with pytest.raises(SpectralError):
        instability_index([1.0], 1.0, 1.0, method="count")


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=1, max_size=12),
       st.floats(0.1, 10), st.floats(0.1, 4))
def test_direct_count_nondecreasing_in_smaller_nu(lams, s, nu):
    c_big = instability_index(lams, nu, s)
    c_small = instability_index(lams, nu / 2.0, s)
    assert c_small >= c_big

"""Norms, envelopes, iteration diagnostics, ensemble classification."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wentlab.analysis import (
    AnalysisError,
    MonitorSeries,
    degiorgi_bound,
    degiorgi_sequence,
    direct_supremum,
    eigen_weight,
    energy_functional,
    gradient_power_quadrature,
    gronwall_envelope,
    gronwall_nu,
    moser_ladder,
    property_p_classify,
    recursion_lemma,
    trace_probe,
    verify_decay,
    x_norm,
    xvec_norm,
    xvec_series,
)
from wentlab.domain import FieldState
from wentlab.solver import run
from wentlab.spectral import assemble_wentzell, solve_spectrum

from conftest import scalar_scenario, unit_mesh


def _state(mesh, bulk, trace=None, t=0.0):
    bulk = np.atleast_2d(np.asarray(bulk, dtype=float))
    if trace is None:
        trace = bulk[:, mesh.boundary_nodes]
    else:
        trace = np.atleast_2d(np.asarray(trace, dtype=float))
    return FieldState(t=t, bulk=bulk, trace=trace)


# ---------------------------------------------------------------------------
# norms


def test_x_norm_constant():
    mesh = unit_mesh(16)
    st_ = _state(mesh, np.full(mesh.n_nodes, -2.0))
    np.testing.assert_allclose(x_norm(mesh, st_, 0, 1), 6.0, rtol=1e-12)
    np.testing.assert_allclose(x_norm(mesh, st_, 0, np.inf), 2.0)


def test_x_norm_linear_profile():
    mesh = unit_mesh(1000)
    st_ = _state(mesh, mesh.coords[:, 0])
    want = math.sqrt(1.0 / 3.0) + 1.0
    np.testing.assert_allclose(x_norm(mesh, st_, 0, 2), want, atol=1e-6)


def test_x_norm_sup_is_max_not_sum():
    mesh = unit_mesh(8)
    bulk = np.zeros(mesh.n_nodes)
    bulk[3] = 5.0
    st_ = _state(mesh, bulk, trace=[[1.0, 1.0]])
    assert x_norm(mesh, st_, 0, np.inf, np.inf) == 5.0


def test_x_norm_rejects_small_exponent():
    mesh = unit_mesh(8)
    with pytest.raises(AnalysisError):
        x_norm(mesh, _state(mesh, np.ones(mesh.n_nodes)), 0, 0.5)


def test_xvec_norm_partition():
    mesh = unit_mesh(32)
    st_ = _state(mesh, np.vstack([np.ones(mesh.n_nodes),
                                  2.0 * np.ones(mesh.n_nodes)]))
    # field 0 static, field 1 dynamic with delta = 1
    got = xvec_norm(mesh, st_, (1.0, 1.0), delta_vec=(1.0, 1.0), dynamic=(1,))
    np.testing.assert_allclose(got, 7.0, rtol=1e-12)


def test_xvec_norm_zero_and_trace_weight():
    mesh = unit_mesh(32)
    zero = _state(mesh, np.zeros((2, mesh.n_nodes)))
    assert xvec_norm(mesh, zero, (1.0, 1.0)) == 0.0
    one = _state(mesh, np.ones(mesh.n_nodes))
    got = xvec_norm(mesh, one, 2.0, delta_vec=2.0, dynamic=(0,))
    np.testing.assert_allclose(got, 1.0 + 2.0 * math.sqrt(2.0), rtol=1e-12)


def test_xvec_norm_rejections():
    mesh = unit_mesh(8)
    st_ = _state(mesh, np.ones(mesh.n_nodes))
    with pytest.raises(AnalysisError):
        xvec_norm(mesh, st_, 1.0, dynamic=(2,))
    with pytest.raises(AnalysisError):
        xvec_norm(mesh, st_, 1.0, delta_vec=0.0, dynamic=(0,))


# ---------------------------------------------------------------------------
# energy functionals


def test_energy_constant_fields():
    mesh = unit_mesh(16)
    st_ = _state(mesh, np.vstack([np.full(mesh.n_nodes, 2.0),
                                  np.full(mesh.n_nodes, -1.0)]))
    np.testing.assert_allclose(energy_functional(mesh, st_, (2.0, 3.0)),
                               7.0 / 3.0, rtol=1e-12)
    zero = _state(mesh, np.zeros((2, mesh.n_nodes)))
    assert energy_functional(mesh, zero, (2.0, 3.0)) == 0.0


def test_energy_linear_profile():
    mesh = unit_mesh(1000)
    st_ = _state(mesh, mesh.coords[:, 0])
    np.testing.assert_allclose(energy_functional(mesh, st_, 2.0),
                               2.0 / 9.0, atol=1e-6)


def test_energy_rejections():
    mesh = unit_mesh(8)
    st_ = _state(mesh, np.ones(mesh.n_nodes))
    with pytest.raises(AnalysisError):
        energy_functional(mesh, st_, 0.5)
    with pytest.raises(AnalysisError):
        energy_functional(mesh, st_, 2.0,
                          weight=(-np.ones(mesh.n_nodes), np.ones(2)))
    with pytest.raises(AnalysisError):
        energy_functional(mesh, st_, 2.0,
                          weight=(np.zeros(mesh.n_nodes), np.zeros(2)))


def test_eigen_weight_shapes():
    mesh = unit_mesh(40, boundary={"left": "gamma2", "right": "gamma1"})
    sys = assemble_wentzell(mesh, "generalized", m=2.0)
    pair = solve_spectrum(sys, 1)[0]
    wb, wt = eigen_weight(sys, pair)
    assert wb.shape == (mesh.n_nodes,) and wt.shape == (mesh.n_boundary,)
    assert wb[0] == 0.0          # eliminated gamma2 node stays zero
    assert wt[0] == 0.0 and wt[1] == wb[-1]
    # usable as a (normalizable) energy weight
    st_ = _state(mesh, np.ones(mesh.n_nodes))
    assert energy_functional(mesh, st_, 2.0, weight=(wb, wt)) > 0


# ---------------------------------------------------------------------------
# Gronwall envelopes


def test_gronwall_envelope_values():
    assert gronwall_envelope(1.0, 1.0, 2.0, 1.0) == 2.0
    np.testing.assert_allclose(gronwall_envelope(2.0, 4.0, 3.0, 0.5),
                               8.0 + 2.0 ** -0.5, rtol=1e-12)


def test_gronwall_nu():
    assert gronwall_nu((2.0,), (2.0,)) == 2.0
    assert gronwall_nu((2.0, 3.0), (1.0, 3.0)) == 2.0
    assert gronwall_nu((2.0,), (0.0,)) == math.inf
    with pytest.raises(AnalysisError):
        gronwall_nu((2.0,), (1.0, 2.0))


def test_gronwall_envelope_rejections():
    with pytest.raises(AnalysisError, match="exponential"):
        gronwall_envelope(1.0, 1.0, 1.0, 1.0)
    with pytest.raises(AnalysisError, match="exponential"):
        gronwall_envelope(1.0, 1.0, math.inf, 1.0)
    with pytest.raises(AnalysisError):
        gronwall_envelope(0.0, 1.0, 2.0, 1.0)
    with pytest.raises(AnalysisError):
        gronwall_envelope(1.0, 1.0, 2.0, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(1.2, 6),
       st.floats(0.1, 10), st.floats(1.01, 3))
def test_gronwall_envelope_monotonicity(c1, c2, nu, t, grow):
    base = gronwall_envelope(c1, c2, nu, t)
    assert gronwall_envelope(c1, c2, nu, t * grow) <= base
    assert gronwall_envelope(c1, c2 * grow, nu, t) >= base


# ---------------------------------------------------------------------------
# decay verification


def test_verify_decay_algebraic_exact():
    t = np.linspace(0.05, 10.0, 400)
    fit = verify_decay(t, 1.0 + 1.0 / t, nu=2.0)
    assert fit.verdict
    np.testing.assert_allclose(fit.constants["c1"], 1.0, rtol=0.05)
    np.testing.assert_allclose(fit.constants["c2"], 1.0, rtol=0.05)
    assert fit.margin <= 1.05


def test_verify_decay_rejects_growth():
    t = np.linspace(0.05, 10.0, 200)
    assert not verify_decay(t, t.copy(), nu=2.0).verdict


def test_verify_decay_exponential():
    t = np.linspace(0.0, 12.0, 300)
    fit = verify_decay(t, 3.0 * np.exp(-t) + 0.5, mode="exponential")
    assert fit.verdict
    np.testing.assert_allclose(fit.constants["C0"], 0.5, rtol=0.05)
    np.testing.assert_allclose(fit.constants["c0"], 1.0, rtol=0.05)


def test_verify_decay_preconditions():
    t = np.linspace(0.1, 10.0, 100)
    y = 1.0 + 1.0 / t
    with pytest.raises(AnalysisError, match="short"):
        verify_decay(t[:5], y[:5], nu=2.0)
    with pytest.raises(AnalysisError, match="positive"):
        verify_decay(t, y - 2.0, nu=2.0)
    with pytest.raises(AnalysisError, match="decade"):
        verify_decay(np.linspace(1.0, 2.0, 50), np.ones(50), nu=2.0)
    with pytest.raises(AnalysisError, match="nu"):
        verify_decay(t, y)
    with pytest.raises(AnalysisError, match="mode"):
        verify_decay(t, y, mode="loglog")


# ---------------------------------------------------------------------------
# Moser ladder


def test_ladder_constant_state():
    mesh = unit_mesh(64)
    reports = moser_ladder(mesh, np.full(mesh.n_nodes, 3.0), [3.0, 3.0])
    assert len(reports) == 9
    for r in reports:
        np.testing.assert_allclose(r.value, 3.0, rtol=1e-12)
        assert abs(r.rel_gap) < 1e-12
        assert r.n_k == 2 ** r.k - 1


def test_ladder_two_level_state():
    mesh = unit_mesh(1000)
    bulk = np.where(mesh.coords[:, 0] < 0.5, 2.0, 1.0)
    reports = moser_ladder(mesh, bulk, [1.0, 1.0])
    top = reports[-1]
    assert top.k == 8 and top.n_k == 255
    assert abs(top.value - 2.0) / 2.0 < 0.05
    np.testing.assert_allclose(top.value, 1.98605, atol=2e-3)
    assert top.xinf == 2.0


def test_ladder_monotone_random():
    mesh = unit_mesh(50)
    rng = np.random.default_rng(7)
    for _ in range(20):
        bulk = rng.uniform(-3, 3, mesh.n_nodes)
        reports = moser_ladder(mesh, bulk, bulk[mesh.boundary_nodes])
        vals = [r.value for r in reports]
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
        assert vals[-1] <= reports[-1].xinf + 1e-12


def test_ladder_zero_state_and_guard():
    mesh = unit_mesh(16)
    reports = moser_ladder(mesh, np.zeros(mesh.n_nodes), [0.0, 0.0])
    assert all(r.value == 0.0 and r.rel_gap == 0.0 for r in reports)
    with pytest.raises(AnalysisError):
        moser_ladder(mesh, np.zeros(mesh.n_nodes), [0.0, 0.0], k_max=9)


# ---------------------------------------------------------------------------
# DeGiorgi truncation


def _constant_snaps(mesh, c, times):
    return [_state(mesh, np.full(mesh.n_nodes, c), t=t) for t in times]


def test_degiorgi_constant_certifies_at_its_level():
    mesh = unit_mesh(16)
    snaps = _constant_snaps(mesh, 1.5, np.linspace(0, 2, 17))
    rep = degiorgi_sequence(mesh, snaps, L=1.5, T=2.0, tau=0.5)
    assert rep.certified
    assert np.all(rep.Y == 0.0)
    assert rep.bound == 3.0
    np.testing.assert_allclose(rep.levels, 1.5 * (2 - 0.5 ** np.arange(11)))
    np.testing.assert_allclose(rep.times[0], 1.0)


def test_degiorgi_half_level_fails():
    mesh = unit_mesh(16)
    snaps = _constant_snaps(mesh, 3.0, np.linspace(0, 2, 17))
    rep = degiorgi_sequence(mesh, snaps, L=1.5, T=2.0, tau=0.5)
    assert not rep.certified
    assert rep.Y[-1] > 1e-10


def test_degiorgi_preconditions():
    mesh = unit_mesh(16)
    snaps = _constant_snaps(mesh, 1.0, np.linspace(0, 2, 17))
    with pytest.raises(AnalysisError):
        degiorgi_sequence(mesh, snaps, L=0.5, T=2.0, tau=0.5)
    with pytest.raises(AnalysisError):
        degiorgi_sequence(mesh, snaps, L=1.0, T=2.0, tau=1.0)
    with pytest.raises(AnalysisError, match="snapshots"):
        degiorgi_sequence(mesh, snaps[:4], L=1.0, T=2.0, tau=0.5)
    dup = _constant_snaps(
        mesh, 1.0, [0, 0.5, 1.0, 1.1, 1.2, 1.3, 1.4, 1.4, 1.5, 1.6, 1.8, 2.0])
    with pytest.raises(AnalysisError, match="increasing"):
        degiorgi_sequence(mesh, dup, L=1.0, T=2.0, tau=0.5)


def test_degiorgi_bisected_heat_bound():
    sc = scalar_scenario(cells=24, horizon=0.5, initial="2 + cos(pi*x)")
    tr = run(sc)
    rep, direct = degiorgi_bound(sc.mesh, tr, T=0.5, tau=0.125)
    assert rep.certified
    assert direct <= rep.bound <= 2.0 * direct
    # soundness: certificate dominates the direct window max exactly
    assert direct_supremum(tr, 0.375, 0.5) <= rep.bound


# ---------------------------------------------------------------------------
# recursion lemma


def test_recursion_threshold_and_iterates():
    rep = recursion_lemma(1.0, 2.0, 1.0, 0.25)
    assert rep.threshold == 0.5
    np.testing.assert_allclose(rep.sequence[1], 0.0625)
    np.testing.assert_allclose(rep.sequence[2], 0.0078125)
    assert rep.certified
    assert rep.sequence[12] <= 1e-12


def test_recursion_trivial_and_divergent():
    assert np.all(recursion_lemma(1.0, 2.0, 1.0, 0.0).sequence == 0.0)
    rep = recursion_lemma(1.0, 2.0, 1.0, 0.9)
    assert not rep.certified


def test_recursion_monotone_verdict():
    for y0 in (0.49, 0.3, 0.1):
        assert recursion_lemma(1.0, 2.0, 1.0, y0 * 0.99).certified or \
            not recursion_lemma(1.0, 2.0, 1.0, y0).certified


def test_recursion_rejections():
    with pytest.raises(AnalysisError):
        recursion_lemma(0.0, 2.0, 1.0, 0.1)
    with pytest.raises(AnalysisError):
        recursion_lemma(1.0, 2.0, 1.0, -0.1)


# ---------------------------------------------------------------------------
# trace inequality probe


def test_trace_probe_unit_state():
    mesh = unit_mesh(64)
    probe = trace_probe(mesh, np.ones(mesh.n_nodes), [1.0, 1.0],
                        n=2.0, s=1.0, p=0.0, eps=1.0)
    np.testing.assert_allclose(probe.lhs, 2.0)
    assert probe.grad_term == 0.0
    np.testing.assert_allclose(probe.bulk_term, 6.0, rtol=1e-12)
    np.testing.assert_allclose(probe.least_c, 1.0 / 3.0, rtol=1e-12)


def test_trace_probe_zero_state():
    mesh = unit_mesh(16)
    probe = trace_probe(mesh, np.zeros(mesh.n_nodes), [0.0, 0.0],
                        n=1.0, s=0.0, p=0.0, eps=1.0)
    assert probe.lhs == 0.0 and probe.least_c == 0.0


def test_trace_probe_rejections():
    mesh = unit_mesh(8)
    u = np.ones(mesh.n_nodes)
    with pytest.raises(AnalysisError):
        trace_probe(mesh, u, [1, 1], n=0.5, s=1.0, p=0.0, eps=1.0)
    with pytest.raises(AnalysisError):
        trace_probe(mesh, u, [1, 1], n=1.0, s=1.0, p=0.0, eps=0.0)


def test_gradient_power_identity():
    # int |grad u|^2 |u|^{n-1} = (2/(n+1))^2 int |grad |u|^{(n+1)/2}|^2
    mesh = unit_mesh(1000)
    x = mesh.coords[:, 0]
    rng = np.random.default_rng(3)
    for _ in range(2):
        c = rng.uniform(-1, 1, 4)
        u = c[0] + c[1] * np.sin(np.pi * x) + c[2] * np.cos(2 * np.pi * x) \
            + c[3] * np.sin(3 * np.pi * x)
        for n in (1.0, 2.0, 3.0, 5.0):
            lhs = gradient_power_quadrature(mesh, u, n - 1.0)
            rhs = (2.0 / (n + 1.0)) ** 2 * gradient_power_quadrature(
                mesh, np.abs(u) ** ((n + 1.0) / 2.0), 0.0)
            assert abs(lhs - rhs) <= 0.02 * rhs


# ---------------------------------------------------------------------------
# ensemble classification


def test_xvec_series_from_trajectory():
    sc = scalar_scenario(cells=16, horizon=0.02, initial="1 + 0.5*cos(pi*x)")
    tr = run(sc)
    series = xvec_series(tr, [1.0])
    np.testing.assert_allclose(series.channels["xvec"],
                               tr.channel("u.bulk_l1"))
    assert series.initial_xinf == tr.xinf[0]
    with pytest.raises(AnalysisError, match="not recorded"):
        xvec_series(tr, [3.0])


def test_monitor_series_grid_check():
    with pytest.raises(AnalysisError, match="grid"):
        MonitorSeries(times=np.arange(4.0), channels={"xvec": np.ones(3)})


def _members(t, curves, inits, statuses=None):
    statuses = statuses or ["Completed"] * len(curves)
    return [MonitorSeries(times=t, channels={"xvec": np.asarray(c, dtype=float)},
                          status=s, initial_xinf=i)
            for c, s, i in zip(curves, statuses, inits)]


def test_classify_forgets_initial_data():
    t = np.linspace(0.0, 2.0, 81)
    ens = _members(t, [s * np.exp(-12.0 * t) + 1.0 for s in (1, 10, 100)],
                   [1.0, 10.0, 100.0])
    assert property_p_classify(ens, eta=1.0) == "P-(i)"


def test_classify_common_limsup_only():
    t = np.linspace(0.0, 10.0, 201)
    ens = _members(t, [1.0 + c / (1.0 + t ** 3) for c in (0.5, 1.0, 2.0)],
                   [1.0, 10.0, 100.0])
    assert property_p_classify(ens, eta=1.0) == "P-(ii)"


def test_classify_initially_monotone_bound():
    t = np.linspace(0.0, 2.0, 41)
    ens = _members(t, [np.full_like(t, s) for s in (1.0, 10.0, 100.0)],
                   [1.0, 10.0, 100.0])
    assert property_p_classify(ens, eta=1.0) == "P-(iii)"


def test_classify_blowup_and_inconclusive():
    t = np.linspace(0.0, 2.0, 41)
    ens = _members(t, [np.full_like(t, s) for s in (1.0, 10.0, 100.0)],
                   [1.0, 10.0, 100.0], statuses=["Completed", "BlowUp", "Completed"])
    assert property_p_classify(ens, eta=1.0) == "blow-up"
    ens = _members(t, [np.full_like(t, v) for v in (5.0, 2.0, 7.0)],
                   [1.0, 10.0, 100.0])
    assert property_p_classify(ens, eta=1.0) == "inconclusive"


def test_classify_preconditions():
    t = np.linspace(0.0, 2.0, 41)
    ens = _members(t, [np.ones_like(t)] * 2, [1.0, 100.0])
    with pytest.raises(AnalysisError, match="3 runs"):
        property_p_classify(ens, eta=1.0)
    ens = _members(t, [np.ones_like(t)] * 3, [1.0, 5.0, 50.0])
    with pytest.raises(AnalysisError, match="decades"):
        property_p_classify(ens, eta=1.0)
    a = _members(t, [np.ones_like(t)] * 2, [1.0, 100.0])
    b = _members(np.linspace(0, 1, 41), [np.ones(41)], [10.0])
    with pytest.raises(AnalysisError, match="grid"):
        property_p_classify(a + b, eta=1.0)

"""End-to-end acceptance battery.

One test per numbered criterion, each printing a single PASS/FAIL line with
the measured quantities (run pytest -s for the scoreboard; any FAIL also
fails the test).  Timed criteria assume the stepping kernels are already
compiled, which the session-level warmup fixture guarantees.
"""

import math
import time

import numpy as np
from scipy import linalg
from scipy.optimize import brentq

from wentlab import analysis, model, solver, spectral, waves

from conftest import scalar_scenario, unit_mesh


def _verdict(num, label, ok, detail):
    line = f"criterion {num:02d} [{label}]: {'PASS' if ok else 'FAIL'}  ({detail})"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# 1. exact mass balance of the nonlinear flux with dynamic boundaries


def test_criterion_01_nonlinear_mass_conservation():
    law = model.DiffusionLaw(form="power", alpha=1.0, p=2.0, eps=1e-6)
    bcs = {s: model.BoundaryCondition(kind="dynamic", delta=1.0)
           for s in ("left", "right")}
    sc = scalar_scenario(cells=400, horizon=1.0,
                         initial="0.5 + 0.25*cos(pi*x)", diffusion=law,
                         bcs=bcs)
    t0 = time.perf_counter()
    tr = solver.run(sc)
    wall = time.perf_counter() - t0
    mass0 = abs(tr.channel("u.mass")[0])
    drift = tr.mass_drift() / mass0
    ok = tr.status.completed and drift <= 1e-10 and wall < 10.0
    _verdict(1, "nonlinear conservation", ok,
             f"relative drift {drift:.2e} (tol 1e-10), {wall:.1f}s")


# ---------------------------------------------------------------------------
# 2. manufactured heat solution and its refinement rate


def test_criterion_02_manufactured_heat():
    t0 = time.perf_counter()
    errs = {}
    for cells in (200, 400):
        sc = scalar_scenario(
            cells=cells, horizon=0.1, initial="sin(pi*x)",
            boundary={"left": "gamma2", "right": "gamma2"},
            bcs={s: model.BoundaryCondition(kind="dirichlet", value=0.0)
                 for s in ("left", "right")})
        tr = solver.run(sc)
        x = sc.mesh.coords[:, 0]
        exact = math.exp(-math.pi ** 2 * 0.1) * np.sin(math.pi * x)
        errs[cells] = float(np.max(np.abs(tr.final_state.bulk[0] - exact)))
    wall = time.perf_counter() - t0
    ratio = errs[200] / errs[400]
    ok = errs[200] <= 1e-3 and 3.0 <= ratio <= 5.0 and wall < 10.0
    _verdict(2, "manufactured heat", ok,
             f"err {errs[200]:.2e} at 200 cells (tol 1e-3), "
             f"refinement ratio {ratio:.2f} in [3, 5], {wall:.1f}s")


# ---------------------------------------------------------------------------
# 3. mixed Robin/dynamic spectrum against the transcendental oracle

# 12-digit frozen roots of the characteristic equation below; the live
# bisection must reproduce them before the discrete spectrum is judged.
WENTZELL_EIGS_FROZEN = np.array([
    0.309100895957, 5.614533718225, 26.006514486837,
    65.604528615452, 124.860160490081,
])


def _wentzell_eigs_oracle(count=5):
    # Robin wall at x=0 (-phi'(0) + phi(0) = 0) forces
    # phi = cos(kx) + sin(kx)/k; the dynamic wall at x=1
    # (phi'(1) = k^2 phi(1)) then pins k:
    #     cos(k)(1 - k^2) - 2 k sin(k) = 0,   Lambda = k^2.
    def det(k):
        return math.cos(k) * (1.0 - k * k) - 2.0 * k * math.sin(k)

    ks = np.linspace(1e-4, 12.0, 24001)
    vals = np.cos(ks) * (1.0 - ks ** 2) - 2.0 * ks * np.sin(ks)
    roots = []
    for a, b, fa, fb in zip(ks[:-1], ks[1:], vals[:-1], vals[1:]):
        if fa * fb < 0.0:
            roots.append(brentq(det, a, b, xtol=1e-14, rtol=8.9e-16))
    return np.array([k * k for k in roots[:count]])


def test_criterion_03_spectrum_oracle():
    oracle = _wentzell_eigs_oracle()
    assert np.allclose(oracle, WENTZELL_EIGS_FROZEN, rtol=1e-9, atol=1e-12)
    mesh = unit_mesh(2000, {"left": "gamma2", "right": "gamma1"})
    t0 = time.perf_counter()
    system = spectral.assemble_wentzell(mesh, "classic", order=4)
    pairs = spectral.solve_spectrum(system, 5)
    wall = time.perf_counter() - t0
    got = np.array([p.value for p in pairs])
    rel = float(np.max(np.abs(got - oracle) / oracle))
    phi1 = pairs[0].vector
    gap = pairs[1].value - pairs[0].value
    ok = (rel <= 1e-6 and got[0] > 0.0 and gap > 0.0
          and (np.all(phi1 > 0) or np.all(phi1 < 0)) and wall < 30.0)
    _verdict(3, "spectrum oracle", ok,
             f"max rel err {rel:.2e} (tol 1e-6), Lambda_1 {got[0]:.6f} > 0, "
             f"gap {gap:.3f}, phi_1 single-signed, {wall:.1f}s")


# ---------------------------------------------------------------------------
# 4. quadratic-form lower bound on trial functions vanishing on gamma2


def test_criterion_04_trial_function_bound():
    mesh = unit_mesh(200, {"left": "gamma2", "right": "gamma1"})
    system = spectral.assemble_wentzell(mesh, "classic")
    lam1 = spectral.solve_spectrum(system, 1)[0].value
    rng = np.random.default_rng(2024)
    x = mesh.coords[:, 0]
    worst = math.inf
    for k in range(200):
        if k % 2:
            # smooth low-frequency trials sit near the sharp edge of the bound
            c = rng.uniform(-1.0, 1.0, 4)
            phi = (c[0] * x + c[1] * np.sin(np.pi * x)
                   + c[2] * np.sin(2 * np.pi * x) + c[3] * np.sin(3 * np.pi * x))
        else:
            phi = rng.standard_normal(system.size)
        phi[mesh.gamma2] = 0.0
        q = spectral.rayleigh_quotient(system, phi, mode="paper_x2")
        worst = min(worst, q - lam1)
    ok = worst >= -1e-8
    _verdict(4, "trial-function bound", ok,
             f"min slack {worst:.2e} over 200 draws (tol -1e-8)")


# ---------------------------------------------------------------------------
# 5. L^infty smoothing across two decades of initial amplitude

SMOOTHING_GRID = np.linspace(0.0, 1.5, 31)


def _smoothing_member(scale):
    bcs = {s: model.BoundaryCondition(kind="dynamic", delta=1.0)
           for s in ("left", "right")}
    sc = scalar_scenario(cells=64, horizon=1.5,
                         initial=f"{scale}*(1 + sin(pi*x)/4)",
                         f="u**3 - u", g="u**3 - u", theta=3.0, bcs=bcs)
    tr = solver.run(sc)
    return analysis.xvec_series(tr, [np.inf], dynamic=(0,),
                                times=SMOOTHING_GRID)


def test_criterion_05_smoothing():
    t0 = time.perf_counter()
    members = [_smoothing_member(s) for s in (1, 10, 100)]
    wall = time.perf_counter() - t0
    verdict = analysis.property_p_classify(members, eta=1.0, channel="xinf")
    inits = np.array([m.initial_xinf for m in members])
    span = inits.max() / inits.min()
    k1 = int(SMOOTHING_GRID.searchsorted(1.0))
    at1 = np.array([m.channels["xinf"][k1] for m in members])
    ratio = float(at1.max() / at1.min())
    ok = (verdict == "P-(i)" and ratio <= 1.1 and span >= 100.0
          and wall < 120.0)
    _verdict(5, "smoothing", ok,
             f"class {verdict}, X_inf ratio at t=1 {ratio:.3f} (tol 1.1), "
             f"initial span x{span:.0f}, {wall:.0f}s")


# ---------------------------------------------------------------------------
# 6./7. eigenfunction-weighted energy decay: algebraic and exponential


def _decay_ensemble(p, config=None):
    boundary = {"left": "gamma2", "right": "gamma1"}
    mesh = unit_mesh(32, boundary, length=0.5)
    system = spectral.assemble_wentzell(mesh, "classic")
    weight = analysis.eigen_weight(system, spectral.solve_spectrum(system, 1)[0])
    law = model.DiffusionLaw(form="power", alpha=1.0, p=p,
                             eps=1e-5 if p > 0 else 0.0)
    bcs = {"left": model.BoundaryCondition(kind="dirichlet", value=0.0),
           "right": model.BoundaryCondition(kind="dynamic", delta=0.2, h2=1.0)}
    runs = []
    for s in (1, 10, 100):
        sc = scalar_scenario(cells=32, horizon=4.0, initial=f"{s}*4*x",
                             f="u", g="u", diffusion=law, bcs=bcs,
                             boundary=boundary, length=0.5, config=config,
                             monitors=solver.MonitorConfig(energy_weight=weight))
        runs.append(solver.run(sc))
    return runs


def test_criterion_06_algebraic_decay():
    t0 = time.perf_counter()
    runs = _decay_ensemble(2.0, solver.SolverConfig(method="backward_euler",
                                                    max_dt=0.005))
    wall = time.perf_counter() - t0
    grid = np.linspace(1.0, 4.0, 25)
    Y = np.vstack([np.interp(grid, tr.times, tr.channel("energy"))
                   for tr in runs])
    collapse = float(np.max(Y.max(axis=0) / Y.min(axis=0)))
    nu = analysis.gronwall_nu([2.0], [2.0])
    fits = [analysis.verify_decay(tr.times, tr.channel("energy"),
                                  "algebraic", nu=nu) for tr in runs]
    margin = max(f.margin for f in fits)
    ok = (collapse <= 1.1 and all(f.verdict for f in fits)
          and all(tr.status.completed for tr in runs) and wall < 120.0)
    _verdict(6, "algebraic decay", ok,
             f"collapse ratio {collapse:.4f} for t >= 1 (tol 1.1), "
             f"nu = {nu:.0f} envelope margin {margin:.4f} (tol 1.05), {wall:.0f}s")


def test_criterion_07_exponential_decay():
    t0 = time.perf_counter()
    runs = _decay_ensemble(0.0)
    wall = time.perf_counter() - t0
    fits = [analysis.verify_decay(tr.times, tr.channel("energy"),
                                  "exponential") for tr in runs]
    c0s = np.array([f.constants["C0"] for f in fits])
    spread = float(c0s.max() / c0s.min())
    margin = max(f.margin for f in fits)
    ok = all(f.verdict for f in fits) and spread <= 1.1 and wall < 120.0
    _verdict(7, "exponential decay", ok,
             f"plateau C0 {c0s.mean():.4f} spread x{spread:.4f} (tol 1.1), "
             f"envelope margin {margin:.3f} (tol 1.05), {wall:.0f}s")


# ---------------------------------------------------------------------------
# 8. truncation-sequence supremum certificate against the direct maximum


def test_criterion_08_truncation_certificate():
    # the smoothing trajectory itself: its window sup sits just above the
    # level floor L = 1, so the certificate clamps at bound 2
    bcs = {s: model.BoundaryCondition(kind="dynamic", delta=1.0)
           for s in ("left", "right")}
    sm = scalar_scenario(cells=64, horizon=2.0, initial="100*(1 + sin(pi*x)/4)",
                         f="u**3 - u", g="u**3 - u", theta=3.0, bcs=bcs,
                         monitors=solver.MonitorConfig(snapshot_cadence=0.05))
    tr = solver.run(sm)
    delta, gamma = sm.exponents()
    rep, direct = analysis.degiorgi_bound(sm.mesh, tr, T=2.0, tau=0.5,
                                          delta=delta, gamma=gamma)
    sound = analysis.direct_supremum(tr, 1.5, 2.0) <= rep.bound
    ok_sm = rep.certified and direct <= rep.bound <= 2.0 * direct and sound

    # a relaxation trajectory whose sup is well above the floor, so the
    # bisection genuinely tightens the level
    law = model.DiffusionLaw(form="power", alpha=1.0, p=2.0, eps=1e-6)
    rx = scalar_scenario(cells=48, horizon=2.0, initial="3 + 2*cos(pi*x)",
                         diffusion=law,
                         monitors=solver.MonitorConfig(snapshot_cadence=0.05))
    tr2 = solver.run(rx)
    d2, g2 = rx.exponents()
    rep2, direct2 = analysis.degiorgi_bound(rx.mesh, tr2, T=2.0, tau=0.5,
                                            delta=d2, gamma=g2)
    sound2 = analysis.direct_supremum(tr2, 1.5, 2.0) <= rep2.bound
    ok_rx = rep2.certified and direct2 <= rep2.bound <= 2.0 * direct2 and sound2

    ok = ok_sm and ok_rx
    _verdict(8, "truncation certificate", ok,
             f"smoothing run bound {rep.bound:.3f} vs direct {direct:.4f} "
             f"(factor {rep.bound / direct:.3f}), relaxation run bound "
             f"{rep2.bound:.4f} vs direct {direct2:.4f} "
             f"(factor {rep2.bound / direct2:.3f}), both in [1, 2], "
             f"sound with zero tolerance")


# ---------------------------------------------------------------------------
# 9. iteration lemma threshold sharpness


def test_criterion_09_recursion_threshold():
    t0 = time.perf_counter()
    ok, worst_n = True, 0
    for C in (1.0, 2.0):
        for b in (2.0, 4.0):
            for kappa in (0.5, 1.0):
                thr = C ** (-1.0 / kappa) * b ** (-1.0 / kappa ** 2)
                rep = analysis.recursion_lemma(C, b, kappa, 0.99 * thr)
                below = np.nonzero(rep.sequence <= 1e-12)[0]
                ok = (ok and rep.certified and below.size > 0
                      and math.isclose(rep.threshold, thr, rel_tol=1e-12))
                worst_n = max(worst_n, int(below[0]) if below.size else 99)
    ok = ok and worst_n <= 60
    ok = ok and analysis.recursion_lemma(1.0, 2.0, 1.0, 0.0).certified
    wall = time.perf_counter() - t0
    ok = ok and wall < 1.0
    _verdict(9, "recursion lemma", ok,
             f"all 8 corners at 0.99x threshold vanish by n = {worst_n} "
             f"(limit 60), {wall * 1e3:.0f}ms")


# ---------------------------------------------------------------------------
# 10. normalized norm ladder and the gradient power identity


def test_criterion_10_ladder_and_identity():
    mesh = unit_mesh(100)
    rng = np.random.default_rng(77)
    worst_gap, monotone = 0.0, True
    for _ in range(100):
        bulk = rng.uniform(-5.0, 5.0, mesh.n_nodes)
        trace = rng.uniform(-5.0, 5.0, mesh.n_boundary)
        ladder = analysis.moser_ladder(mesh, bulk, trace, k_max=8)
        vals = np.array([r.value for r in ladder])
        monotone = monotone and bool(np.all(np.diff(vals) >= -1e-12 * vals[-1]))
        worst_gap = max(worst_gap, ladder[-1].rel_gap)
    fine = unit_mesh(1000)
    x = fine.coords[:, 0]
    worst_id = 0.0
    for _ in range(100):
        c = rng.uniform(-1.0, 1.0, 4)
        u = (c[0] + c[1] * np.sin(np.pi * x) + c[2] * np.cos(2 * np.pi * x)
             + c[3] * np.sin(3 * np.pi * x))
        for n in (1.0, 2.0, 3.0, 5.0):
            lhs = analysis.gradient_power_quadrature(fine, u, n - 1.0)
            rhs = (2.0 / (n + 1.0)) ** 2 * analysis.gradient_power_quadrature(
                fine, np.abs(u) ** ((n + 1.0) / 2.0), 0.0)
            worst_id = max(worst_id, abs(lhs - rhs) / rhs)
    ok = worst_gap <= 0.05 and monotone and worst_id <= 0.02
    _verdict(10, "ladder and identity", ok,
             f"worst k=8 ladder gap {worst_gap:.3f} (tol 0.05, monotone), "
             f"worst identity error {worst_id:.4f} (tol 0.02)")


# ---------------------------------------------------------------------------
# 11. boundary conservation law: residual convergence and exact wave


def test_criterion_11_conservation_law_profiles():
    t0 = time.perf_counter()
    orders = []
    for p in (1.0, 2.0, 3.0):
        law = model.DiffusionLaw(form="power", alpha=1.0, p=p)
        prof = waves.WaveProfile.self_similar(law)
        l1 = {}
        for n in (24, 48):
            r = np.linspace(*prof.r_range, n)
            tt = np.linspace(*prof.t_range, n)
            U = np.column_stack([prof.sample(r, tk) for tk in tt])
            l1[n] = waves.claw_residual(U, r, tt, law).l1
        orders.append(math.log2(l1[24] / l1[48]))
    flat = waves.traveling_wave_check(
        model.DiffusionLaw(form="power", alpha=1.0, p=2.0),
        lambda xi: np.full_like(np.asarray(xi, dtype=float), 2.0),
        c=4.0, grid=np.linspace(0.0, 1.0, 64))
    wall = time.perf_counter() - t0
    ok = (min(orders) >= 1.8 and flat.eigen_residual == 0.0
          and flat.claw_l1 == 0.0 and wall < 5.0)
    _verdict(11, "conservation law", ok,
             f"residual orders {[f'{o:.2f}' for o in orders]} (need >= 1.8), "
             f"constant wave residual exactly 0, {wall:.1f}s")


# ---------------------------------------------------------------------------
# 12. linearized instability index: direct pencil vs shifted spectrum


def test_criterion_12_instability_index():
    mesh = unit_mesh(500, {"left": "gamma2", "right": "gamma1"})
    system = spectral.assemble_wentzell(mesh, "classic")
    lams = np.array([p.value for p in
                     spectral.solve_spectrum(system, k=system.size)])
    s = 3.0
    d = 1.0 / np.sqrt(system.M)
    counts, worst, agree = [], 0.0, True
    for nu in (1.0, 0.5, 0.25, 0.125):
        A = -nu * system.K + np.diag(s * system.M)
        Aw = d[:, None] * A * d[None, :]
        direct = np.sort(linalg.eigh(0.5 * (Aw + Aw.T), eigvals_only=True))
        expect = np.sort(-nu * lams + s)
        worst = max(worst, float(np.max(np.abs(direct - expect))))
        n_plus = spectral.instability_index(system, nu, s, method="direct")
        agree = agree and n_plus == int(np.count_nonzero(lams < s / nu))
        counts.append(n_plus)
    nondec = all(b >= a for a, b in zip(counts, counts[1:]))
    ok = worst <= 1e-8 and agree and nondec
    _verdict(12, "instability index", ok,
             f"pencil spectrum off by {worst:.2e} (tol 1e-8), "
             f"N+ = {counts} matches the counting rule, nondecreasing")


# ---------------------------------------------------------------------------
# 13. boundary-trace inequality probe over a trigonometric family


def test_criterion_13_trace_probe():
    rng = np.random.default_rng(4242)
    decay = (1.0 + np.arange(7.0)) ** -2
    coeffs = rng.uniform(-1.0, 1.0, (50, 7, 2)) * decay[None, :, None]
    least_c = {}
    for cells in (500, 1000):
        mesh = unit_mesh(cells)
        x = mesh.coords[:, 0]
        vals = []
        for c in coeffs:
            u = np.zeros_like(x)
            for k in range(7):
                u += (c[k, 0] * np.cos(k * np.pi * x)
                      + c[k, 1] * np.sin(k * np.pi * x))
            probe = analysis.trace_probe(mesh, u, u[mesh.boundary_nodes],
                                         n=2.0, s=1.0, p=0.0, eps=1.0)
            vals.append(probe.least_c)
        least_c[cells] = float(np.max(vals))
    drift = abs(least_c[1000] - least_c[500]) / least_c[500]
    ok = (math.isfinite(least_c[500]) and least_c[500] <= 100.0
          and least_c[1000] <= 100.0 and drift <= 0.10)
    _verdict(13, "trace probe", ok,
             f"least admissible C {least_c[500]:.4f} -> {least_c[1000]:.4f} "
             f"on mesh doubling (drift {drift:.2%}, tol 10%), cap 100")

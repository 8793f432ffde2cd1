"""The ten acceptance criteria at their stated tolerances.

Each test records a ``criterion N: PASS|FAIL`` line, printed in the terminal
summary.  Criteria 2, 6 and 7 are infeasible for the stated couplings: no
admissible parameter set exists, so the bound curves cannot be formed.  They
are measured anyway and marked strict xfail.
"""
import math
import time

import numpy as np
import pytest

from lattice_qms.algebra import SZ, LocalOperator, Volume, vec
from lattice_qms.certificates import derive_parameters, truncation_tail
from lattice_qms.cli import main
from lattice_qms.errors import HypothesisViolation
from lattice_qms.expansion import (enumerate_diagrams, resolvent, resolvent_quadrature,
                                   stationary_expectation, stationary_term)
from lattice_qms.finite_volume import (boundary_sensitivity, relaxation_profile, stationary_state,
                                       truncated_correlation)
from lattice_qms.generators import certify_M, interaction_norm, spectral_profile
from lattice_qms.models import (HeatBathChain, currents, fourier_scaling, ising_coupling, ising_model,
                                ising_site_generator, pinning_boundary, self_consistent_profile)

from conftest import ACCEPTANCE

LOG2 = math.log(2)
L_ISING = 1 / (LOG2 + 1)
SZ0 = LocalOperator.site(0, SZ)


def record(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return ok


def ising_params(J, g_prime=0.2):
    eps = interaction_norm(ising_coupling(J), L_ISING)
    return eps, derive_parameters(L_ISING, 0.5, g_prime, eps, M=2.1)


def test_criterion_1_hypothesis_certification():
    start = time.perf_counter()
    rows = []
    for h in (0.0, 0.3, 1.0):
        g = ising_site_generator(h)
        prof = spectral_profile(g, certify=False)
        rows.append((h, prof.gap_g, certify_M(g, 0.5, prof.projection_Q, gap=prof.gap_g)))
    elapsed = time.perf_counter() - start
    ok = all(abs(gap - 0.5) <= 1e-10 and M <= 4 for _, gap, M in rows) and elapsed < 1.0
    assert record(1, ok, f"gaps={[r[1] for r in rows]} M={[r[2] for r in rows]} runtime={elapsed:.2f}s")


@pytest.mark.xfail(strict=True, reason="J=0.03 gives epsilon=3.55 > g-g'=0.3; no certificate exists")
def test_criterion_2_expansion_vs_exact():
    start = time.perf_counter()
    J = 0.03
    model = ising_model(0.3, J, 7, centered=True)
    exact = stationary_state(model.generator()).expectation(SZ0).real
    approx = stationary_expectation(SZ0, model, 3, certify=False).value.real
    diff = abs(approx - exact)
    eps = interaction_norm(model.interactions, L_ISING)
    try:
        p = derive_parameters(L_ISING, 0.5, 0.2, eps)
    except HypothesisViolation as exc:
        record(2, False, f"|diff|={diff:.3e} (expansion {approx:.12f}, exact {exact:.12f}); "
                         f"no bound: {exc.inequality} fails with epsilon={eps:.4f}")
        raise
    bound = truncation_tail(p, 3, 1) + (p.K - 1) * math.exp(-3 / p.l_prime) * p.C
    elapsed = time.perf_counter() - start
    assert record(2, diff <= bound and elapsed < 300, f"|diff|={diff:.3e} bound={bound:.3e}")


def test_criterion_3_first_order_vanishing(frozen):
    model = ising_model(0.3, 0.05, 3)
    first = sum(stationary_term(d, SZ0, model) for d in enumerate_diagrams(Volume.of(0), model.interactions, 1)
                if d.stationary)
    js = np.linspace(0.01, 0.05, 5)
    dev = [stationary_state(ising_model(0.3, J, 5, centered=True).generator()).expectation(SZ0).real + 1
           for J in js]
    assert np.allclose(dev, frozen["finite_volume"]["n5_J_law"]["deviation"], rtol=1e-8)
    slope = np.polyfit(np.log(js), np.log(dev), 1)[0]
    ok = abs(first) <= 1e-12 and abs(slope - 2.0) <= 0.1
    assert record(3, ok, f"order-1 sum={abs(first):.1e} exponent={slope:.4f}")


def test_criterion_4_diagram_combinatorics(frozen):
    diags = enumerate_diagrams(Volume.of(0), ising_coupling(0.05), 1)
    mine = sorted([[[s[0] for s in g.sites] for g in d.gammas], [[s[0] for s in e.sites] for e in d.ees]]
                  for d in diags)
    ok = len(diags) == 8 and mine == frozen["diagrams"]["1"]
    assert record(4, ok, f"count={len(diags)} brute_force={len(frozen['diagrams']['1'])}")


def test_criterion_5_resolvent_validation():
    model = ising_model(0.3, 0.0, 2)
    g = model.profile.gap_g
    parts = []
    ok = True
    for name, vol in (("site", Volume.of(0)), ("pair", Volume.chain(2))):
        r = resolvent(vol, model).matrix
        ts = [10.0, 20.0, 30.0, 40.0 / g]
        errs = [np.linalg.norm(r - resolvent_quadrature(vol, model, t).matrix, 2) for t in ts]
        use = [i for i, e in enumerate(errs) if e > 1e-12]
        rate = -np.polyfit([ts[i] for i in use], np.log([errs[i] for i in use]), 1)[0]
        ok &= errs[-1] <= 1e-6 and rate >= g - 0.05
        parts.append(f"{name}: err(T=80)={errs[-1]:.1e} rate={rate:.3f}")
    assert record(5, ok, "; ".join(parts) + f" g={g}")


@pytest.mark.xfail(strict=True, reason="J=0.05 gives epsilon >= 0.8 > g for every admissible l")
def test_criterion_6_relaxation_domination(frozen):
    gen = ising_model(0.3, 0.05, 5, centered=True).generator()
    times = np.linspace(0, 40, 41)
    table = relaxation_profile(gen, SZ0, times)
    assert np.allclose(table.distances, frozen["finite_volume"]["n5_centered"]["distances"],
                       rtol=1e-6, atol=1e-13)
    try:
        eps, p = ising_params(0.05)
    except HypothesisViolation as exc:
        record(6, False, f"fitted rate={table.fitted_rate:.4f}, max distance={max(table.distances):.3f}; "
                         f"no bound: {exc.inequality} fails")
        raise
    bounds = [p.K * math.exp(-p.g_prime * t) * p.C * SZ0.norm() for t in times]
    ok = all(d <= b for d, b in zip(table.distances, bounds)) and table.fitted_rate >= p.g_prime
    assert record(6, ok, f"fitted rate={table.fitted_rate:.4f}")


@pytest.mark.xfail(strict=True, reason="J=0.05 gives epsilon >= 0.8 > g for every admissible l")
def test_criterion_7_correlation_decay(frozen):
    state = stationary_state(ising_model(0.3, 0.05, 6).generator())
    ds = [2, 3, 4, 5]
    corr = [abs(truncated_correlation(state, SZ0, LocalOperator.site(d, SZ))) for d in ds]
    ref = frozen["finite_volume"]["n6_correlations"]
    assert np.allclose(corr, [abs(ref[str(d)]) for d in ds], rtol=1e-4, atol=1e-12)
    slope = np.polyfit(ds, np.log(corr), 1)[0]
    try:
        eps, p = ising_params(0.05)
    except HypothesisViolation as exc:
        record(7, False, f"|corr|={[f'{c:.2e}' for c in corr]} slope={slope:.3f}; "
                         f"no bound: {exc.inequality} fails")
        raise
    ok = all(c <= (p.K - 1) * math.exp(-d / p.l_prime) * p.C ** 2 for c, d in zip(corr, ds))
    ok &= slope <= -1 / p.l_prime + 0.1
    assert record(7, ok, f"slope={slope:.3f}")


def test_criterion_8_boundary_independence(frozen):
    m = ising_model(0.3, 0.05, 3)
    diffs = []
    for n in (1, 3, 5):
        res = boundary_sensitivity(SZ0, Volume.centered_chain(n), Volume.centered_chain(n + 2),
                                   m.site_generators, m.interactions, pinning_boundary())
        diffs.append(res["difference"])
    assert np.allclose(diffs, frozen["boundary"]["differences"], rtol=1e-6)
    ratios = [b / a for a, b in zip(diffs, diffs[1:])]
    ok = all(r <= 0.7 for r in ratios)
    assert record(8, ok, f"differences={[f'{d:.3e}' for d in diffs]} ratios={[f'{r:.3e}' for r in ratios]}")


def test_criterion_9_transport():
    start = time.perf_counter()
    eq = HeatBathChain(4, (1.0,) * 4, gamma=0.5, J=0.05)
    gen = eq.generator()
    gibbs_res = float(np.abs(gen.matrix.conj().T @ vec(eq.product_gibbs())).max())
    rep = currents(eq, stationary_state(gen))
    eq_cur = float(max(np.abs(rep.bond_currents).max(), np.abs(rep.bath_currents).max()))
    temps, j_sc, rep = self_consistent_profile(eq, 1.0, 0.9)
    bulk = float(np.abs(rep.bath_currents[1:-1]).max())
    resid = float(np.abs(rep.conservation_residuals).max())
    rows = fourier_scaling(eq, 1.0, 0.9, [4, 5, 6])
    jn = [r["j_sc_N"] for r in rows]
    spread = (max(jn) - min(jn)) / np.mean(jn)
    elapsed = time.perf_counter() - start
    ok = (gibbs_res <= 1e-10 and eq_cur <= 1e-10 and bulk <= 1e-8 and resid <= 1e-9
          and spread <= 0.25 and elapsed < 600)
    assert record(9, ok, f"gibbs={gibbs_res:.1e} eq_currents={eq_cur:.1e} bulk={bulk:.1e} "
                         f"conservation={resid:.1e} j_sc*N={[f'{v:.4e}' for v in jn]} "
                         f"spread={spread:.3f} runtime={elapsed:.1f}s")


def test_criterion_10_constants(tmp_path):
    p = derive_parameters(L_ISING, 0.5, 0.25, 0.1)
    lp_err = abs(p.l_prime - 1 / (1 / L_ISING - LOG2))
    k_err = abs(p.K - 0.25 / (0.25 - 0.1))
    codes = []
    for params in ("inv_l = 0.6931471805599453", "g_prime = 0.2\nepsilon = 0.3"):
        m = tmp_path / f"m{len(codes)}.toml"
        m.write_text(f'command = "bounds"\n[model]\npreset = "ising"\nN = 1\n[params]\n{params}\n')
        codes.append(main(["run", "--manifest", str(m), "--out", str(tmp_path / f"o{len(codes)}")]))
    ok = lp_err <= 1e-14 and k_err <= 1e-14 and codes == [2, 2]
    assert record(10, ok, f"l' err={lp_err:.1e} K err={k_err:.1e} exit codes={codes}")

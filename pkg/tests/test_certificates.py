import math

import pytest
from hypothesis import assume, given, strategies as st

from lattice_qms.certificates import (bound_curves, derive_parameters, finite_range_window,
                                      proof_traced_C, series_ratio, truncation_tail)
from lattice_qms.errors import HypothesisViolation

LOG2 = math.log(2)
L_UNIT = 1 / (LOG2 + 1)


def test_l_prime_unit():
    p = derive_parameters(L_UNIT, 0.5, 0.25, 0.1)
    assert abs(p.l_prime - 1.0) < 1e-14
    assert p.l_dprime == p.l_prime and p.C_lemma == 1.0


def test_K_five_thirds():
    p = derive_parameters(L_UNIT, 0.5, 0.25, 0.1)
    assert abs(p.K - 5 / 3) < 1e-15


def test_boundary_of_decay_hypothesis():
    with pytest.raises(HypothesisViolation) as err:
        derive_parameters(1 / LOG2, 0.5, 0.25, 0.1)
    assert err.value.inequality == "1/l > log 2"


@pytest.mark.parametrize("args, failing", [
    ((L_UNIT, 0.5, 0.25, 0.25), "epsilon < g - g'"),
    ((L_UNIT, 0.5, 0.25, 0.3), "epsilon < g - g'"),
    ((L_UNIT, 0.0, -0.1, 0.0), "g > 0"),
    ((L_UNIT, 0.5, 0.5, 0.0), "0 < g' < g"),
    ((L_UNIT, 0.5, 0.0, 0.0), "0 < g' < g"),
    ((L_UNIT, 0.5, 0.25, -1e-3), "epsilon >= 0"),
])
def test_infeasible_inputs_name_inequality(args, failing):
    with pytest.raises(HypothesisViolation) as err:
        derive_parameters(*args)
    assert err.value.inequality == failing


def test_unknown_mode():
    with pytest.raises(ValueError):
        derive_parameters(L_UNIT, 0.5, 0.25, 0.1, mode="loose")


def test_general_mode_relation():
    M = 2.1
    lp = 0.5
    inv_l = LOG2 + math.log(M + 1) * (1 + 1 / lp)
    p = derive_parameters(1 / inv_l, 0.5, 0.25, 0.1, M=M, mode="general")
    assert abs(p.l_prime - lp) < 1e-12
    assert p.C_lemma == M + 1
    assert abs(1 / p.l - (LOG2 + 1 / p.l_dprime)) < 1e-14
    with pytest.raises(HypothesisViolation):
        derive_parameters(L_UNIT, 0.5, 0.25, 0.1, M=M, mode="general")


def test_proof_traced_C():
    assert proof_traced_C(1.0) == 4.0
    assert proof_traced_C(2.1) == pytest.approx(6.2)
    p = derive_parameters(L_UNIT, 0.5, 0.25, 0.1, M=2.1)
    assert p.C == proof_traced_C(2.1)
    assert "proof-traced" in p.as_dict()["C_provenance"]


def test_tail_example():
    p = derive_parameters(L_UNIT, 0.5, 0.25, 0.1)
    assert abs(p.ratio - 0.4) < 1e-15
    assert abs(truncation_tail(p, 3, 1, C=1.0) - 2 * 0.4 ** 4 / 0.6) < 1e-15
    assert abs(truncation_tail(p, 3, 1, C=1.0) - 0.0853333333) < 1e-9


def test_tail_limits():
    p = derive_parameters(L_UNIT, 0.5, 0.25, 0.1)
    assert truncation_tail(p, 2000, 1) == 0.0
    free = derive_parameters(L_UNIT, 0.5, 0.25, 0.0)
    assert all(truncation_tail(free, n, 3) == 0.0 for n in range(5))
    assert free.K == 1.0


def test_series_ratio_divergent():
    p = derive_parameters(L_UNIT, 0.5, 0.25, 0.1)
    bad = type(p)(**{**p.__dict__, "epsilon": 0.3})
    with pytest.raises(HypothesisViolation):
        series_ratio(bad)


def test_finite_range_window():
    assert abs(finite_range_window(1, 1.0, 0.5, 0.25) - 0.25 * math.exp(-1)) < 1e-15
    assert abs(finite_range_window(1, 1.0, 0.5, 0.25) - 0.09197) < 1e-5
    assert finite_range_window(1, math.inf, 0.5, 0.25) == 0.25
    assert abs(finite_range_window(1, 1e12, 0.5, 0.25) - 0.25) < 1e-12
    assert finite_range_window(2, 1.0, 0.5, 0.25, d=2) == pytest.approx(0.25 * math.exp(-4))
    with pytest.raises(ValueError):
        finite_range_window(0.5, 1.0, 0.5, 0.25)


def test_ising_threshold_arithmetic():
    # the preset's stated window 2J < e^{-2 log 2} g, i.e. J < g/8
    g = 0.5
    assert abs(math.exp(-2 * LOG2) * g / 2 - 1 / 16) < 1e-15
    assert 0.05 < 1 / 16


def test_bound_curves():
    p = derive_parameters(L_UNIT, 0.5, 0.25, 0.1, M=1.0)
    c = bound_curves(p, 2, 1)
    assert c.relaxation(0) == pytest.approx(p.K * p.C ** 2)
    assert c.correlation(0) == pytest.approx((p.K - 1) * p.C ** 3)
    assert c.volume(0) == pytest.approx((p.K - 1) * p.C ** 2)
    ts = [0, 0.5, 1, 5, 20]
    for f in (c.relaxation, c.volume, c.correlation):
        vals = [f(t) for t in ts]
        assert all(a > b for a, b in zip(vals, vals[1:]))
    assert bound_curves(p, 1).correlation is None


feasible = st.tuples(st.floats(0.05, 1 / LOG2 - 1e-3), st.floats(0.1, 2.0), st.floats(0.01, 0.99),
                     st.floats(0.0, 0.99), st.floats(1.0, 10.0))


@given(feasible)
def test_round_trip_relation(args):
    l, g, frac_gp, frac_eps, M = args
    gp = frac_gp * g
    eps = frac_eps * (g - gp)
    p = derive_parameters(l, g, gp, eps, M)
    assert abs(1 / p.l - (LOG2 + 1 / p.l_dprime)) <= 1e-14 * max(1.0, 1 / p.l)
    assert p.K == (g - gp) / (g - gp - eps)
    assert p.K >= 1


@given(feasible, st.integers(0, 30))
def test_tail_monotone(args, n):
    l, g, frac_gp, frac_eps, M = args
    gp = frac_gp * g
    eps = frac_eps * (g - gp)
    assume(eps > 0)
    p = derive_parameters(l, g, gp, eps, M)
    assert truncation_tail(p, n + 1, 2) <= truncation_tail(p, n, 2)
    q = derive_parameters(l, g, gp, min(eps * 1.1, 0.999 * (g - gp)), M)
    assert truncation_tail(q, n, 2) >= truncation_tail(p, n, 2)


def test_K_limits():
    ks = [derive_parameters(L_UNIT, 0.5, 0.25, e).K for e in (0.0, 1e-9, 0.25 - 1e-9)]
    assert ks[0] == 1.0 and abs(ks[1] - 1) < 1e-8 and ks[2] > 1e7

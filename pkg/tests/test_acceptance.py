"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the summary block at the end of
the run lists every criterion.
"""

import math

import numpy as np
import pytest

from kahlerhelm.bench import run_bench
from kahlerhelm.builtins import get_builtin
from kahlerhelm.decompose import (
    GeneralFormat,
    box_growth_study,
    calibrate_constants,
    closure_report,
    decompose_1form,
    decompose_2form,
    decompose_general,
    transport_dual,
)
from kahlerhelm.fields import volume
from kahlerhelm.green import GridSpec
from kahlerhelm.identities import check_vector_laplacian, random_greens_study, run_symbolic_suite

REF_GRID = GridSpec.cube(6.0, 48)
MU3 = -1.0 / (4.0 * math.pi)


@pytest.fixture(scope="module")
def gauss_ref():
    alpha = get_builtin("gauss-1form")
    return alpha, decompose_1form(alpha, None, REF_GRID, path="fft")


def test_symbolic_suite(gate):
    suite = run_symbolic_suite(trials=100, seed=0)
    few = [r.key for r in suite.results if r.key != "vector_laplacian_correspondence" and r.trials < 100]
    bad = [r.key for r in suite.results if not r.ok]
    ok = suite.all_ok and not few
    n_checked = sum(1 for r in suite.results if r.expect)
    gate(1, "symbolic identity suite", ok,
         f"{n_checked} identities exact, min trials {min(r.trials for r in suite.results if r.key != 'vector_laplacian_correspondence')}"
         + (f"; failing {bad}" if bad else "") + (f"; under 100 trials {few}" if few else ""))
    assert ok, (bad, few)


def test_vector_laplacian(gate):
    res = check_vector_laplacian(trials=20)
    ok = res.status == "exact-pass" and res.trials == 20
    gate(2, "Kahler vs vector Laplacian", ok, f"{res.passed}/{res.trials} exact")
    assert ok, res.counterexample


def test_one_form_reconstruction(gate, gauss_ref):
    alpha, dec = gauss_ref
    l2 = dec.norms["l2_rel"]
    clo = closure_report(dec, alpha)
    grow = box_growth_study(alpha, REF_GRID, pad_cells=8, path="fft")
    ok_l2 = l2 <= 0.02
    ok_clo = clo["d_exact_ratio"] <= 5 and clo["delta_coexact_ratio"] <= 5
    ok_grow = grow["big_box"]["hi"][0] == 8.0 and grow["residual_big_on_small_nodes"] < grow["residual_small"]
    ok = ok_l2 and ok_clo and ok_grow
    gate(3, "1-form reconstruction on [-6,6]^3 at 48^3", ok,
         f"L2 rel {l2:.3%}; closure ratios d {clo['d_exact_ratio']:.2f}, delta {clo['delta_coexact_ratio']:.2f} (<= 5); "
         f"residual {grow['residual_small']:.3e} -> {grow['residual_big_on_small_nodes']:.3e} on [-8,8]^3")
    assert ok_l2 and ok_clo and ok_grow


def test_pure_input_routing(gate):
    df = decompose_1form(get_builtin("exact-df"), None, REF_GRID)
    dw = decompose_1form(get_builtin("coexact-dw"), None, REF_GRID)
    r_df = df.norms["coexact_l2"] / df.norms["input_l2"]
    r_dw = dw.norms["exact_l2"] / dw.norms["input_l2"]
    ok = r_df <= 0.005 and r_dw <= 0.005
    gate(4, "pure-input routing", ok, f"co-exact/input for d(exp(-r^2)) {r_df:.2e}; exact/input for co-exact input {r_dw:.2e}")
    assert ok


def test_two_form_duality(gate):
    beta = get_builtin("gauss-2form")
    dec2 = decompose_2form(beta, None, REF_GRID)
    ex, co = transport_dual(decompose_1form(volume(3) * beta, None, REF_GRID))
    gen = decompose_general(beta, GeneralFormat.newtonian(3, 2), REF_GRID)
    d_transport = max(dec2.exact_term.max_abs_difference(ex), dec2.coexact_term.max_abs_difference(co))
    d_general = max(dec2.exact_term.max_abs_difference(gen.exact_term), dec2.coexact_term.max_abs_difference(gen.coexact_term))
    ok = d_transport <= 1e-10 and d_general <= 1e-10
    gate(5, "2-form duality consistency", ok, f"max nodewise diff vs transport {d_transport:.1e}, vs general assembly {d_general:.1e}")
    assert ok


def test_calibration(gate, gauss_ref):
    alpha, dec = gauss_ref
    c3 = calibrate_constants(3, fit_lambda=True)
    lam_err = abs(c3.lambda_fit - 1.0)
    mu_err = max(abs(c3.format.mu_d / MU3 - 1), abs(c3.format.mu_delta / MU3 - 1))
    gen = decompose_general(alpha, GeneralFormat.newtonian(3, 1), REF_GRID)
    scale = dec.input.linf()
    d_gen = max(gen.exact_term.max_abs_difference(dec.exact_term), gen.coexact_term.max_abs_difference(dec.coexact_term))
    c2 = calibrate_constants(2)
    c4 = calibrate_constants(4, fit_lambda=False)
    spreads = {n: max(c.mu_d_spread, c.mu_delta_spread) for n, c in ((2, c2), (4, c4))}
    ok_3 = lam_err <= 0.01 and mu_err <= 0.01
    ok_gen = d_gen <= 1e-12 * scale
    ok_spread = all(s <= 0.02 for s in spreads.values())
    ok = ok_3 and ok_gen and ok_spread
    gate(6, "calibration", ok,
         f"n=3 lambda {c3.lambda_fit:.4f}, mu_d {c3.format.mu_d:.6f}, mu_delta {c3.format.mu_delta:.6f} "
         f"(max rel err {mu_err:.2%}); general vs 1-form diff {d_gen:.1e}; "
         f"field spread n=2 {spreads[2]:.2%}, n=4 {spreads[4]:.2%}")
    assert ok_3 and ok_gen and ok_spread


def test_greens_identity_order(gate):
    draw = random_greens_study(seed=0, refinements=3)
    orders = draw.study.orders
    ok = len(orders) == 3 and min(orders) >= 1.8
    gate(7, "Green's identity convergence", ok,
         f"orders {', '.join(f'{o:.3f}' for o in orders)} over 3 dyadic refinements; {len(draw.rejected)} degenerate draws skipped")
    assert ok


def test_performance(gate):
    rep = run_bench((16, 32, 64))
    r32, r64 = rep.row(32), rep.row(64)
    sc = rep.scaling(16, 32)
    ok_agree = r32.rel_l2_diff <= 1e-8
    ok_speed = r64.speedup >= 10
    ok_scale = sc["deviation"] <= 0.20
    ok = ok_agree and ok_speed and ok_scale
    gate(8, "performance", ok,
         f"32^3 rel L2 diff {r32.rel_l2_diff:.1e}; 64^3 speedup {r64.speedup:.0f}x"
         f"{' (direct extrapolated)' if r64.direct_extrapolated else ''}; "
         f"16->32 direct ratio {sc['measured']:.1f} vs {sc['theoretical']:.0f} ({sc['deviation']:.1%} off)")
    assert ok_agree and ok_speed and ok_scale

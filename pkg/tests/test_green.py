import math

import numpy as np
import pytest
from scipy import integrate

from kahlerhelm.expr import ScalarExpr, coords, gaussian
from kahlerhelm.fields import FormField, codiff, dx, ext_d, laplacian
from kahlerhelm.green import (
    GridSpec,
    KernelSpec,
    I0_source,
    Ii_source,
    SampledScalar,
    compute_I0,
    compute_Ii,
    fft_potential,
    fft_potential_gradient,
    greens_identity_check,
    potential,
    potential_gradient,
    cell_integrals_at,
    self_cell_integrals,
)

X = coords(3)
K3 = KernelSpec.newtonian(3)


def test_grid_is_cell_centred():
    g = GridSpec.cube(6.0, 48)
    assert g.spacing == (0.25, 0.25, 0.25)
    assert g.axes()[0][0] == pytest.approx(-6.0 + 0.125)
    big = g.grown(8)
    assert big.lo[0] == pytest.approx(-8.0) and big.res[0] == 64
    assert np.allclose(big.axes()[0][8:56], g.axes()[0])
    assert GridSpec.from_dict(g.to_dict()) == g


def test_kernel_validation():
    assert K3.mu == pytest.approx(-1 / (4 * math.pi))
    assert K3.lam == 1.0
    with pytest.raises(ValueError):
        KernelSpec(3, 3.5)
    with pytest.raises(ValueError):
        KernelSpec(3, 1.0, kind="yukawa")
    assert KernelSpec.from_dict(K3.to_dict()) == K3


def test_self_cell_value_matches_cube_closed_form():
    # ∫_{unit cube} 1/r = 3 ln((√3+1)/(√3-1)) - π/2, scaling as h²
    unit = 3 * math.log((math.sqrt(3) + 1) / (math.sqrt(3) - 1)) - math.pi / 2
    h = 0.5
    v, g = self_cell_integrals(K3, (h, h, h))
    assert v == pytest.approx(unit * h**2, rel=1e-9)
    # Σ_l ∫ u_l²/r³ = ∫ 1/r, and the three terms are equal by symmetry
    assert g == pytest.approx((v / 3,) * 3, rel=1e-9)


def test_self_cell_log_kernel_matches_quadrature():
    k2 = KernelSpec.newtonian(2)
    h = 0.5
    ref = 4 * integrate.dblquad(lambda y, x: -0.5 * math.log(x * x + y * y), 0, h / 2, 0, h / 2, epsabs=1e-13)[0]
    v, g = self_cell_integrals(k2, (h, h))
    assert v == pytest.approx(ref, rel=1e-9)
    assert g == pytest.approx((h * h / 2, h * h / 2), rel=1e-9)


def test_offset_cell_integrals_match_brute_force():
    h = 0.5
    v0, g0 = self_cell_integrals(K3, (h, h, h))
    v, mom, f0, f1 = cell_integrals_at(K3, (h, h, h), (0.0, 0.0, 0.0))
    assert v == pytest.approx(v0, rel=1e-12)
    assert np.allclose(mom, 0.0, atol=1e-14)
    assert np.allclose(f0, 0.0, atol=1e-14)
    assert np.allclose(v - np.diag(f1), g0, rtol=1e-10)
    o = np.array([0.1, -0.2, 0.05])
    v, mom, f0, _ = cell_integrals_at(K3, (h, h, h), o)
    m = 200
    ax = (np.arange(m) + 0.5) / m * h - h / 2
    xs = np.meshgrid(ax, ax, ax, indexing="ij")
    r = np.sqrt(sum((x - c) ** 2 for x, c in zip(xs, o)))
    dv = (h / m) ** 3
    assert v == pytest.approx(float(np.sum(1 / r)) * dv, rel=1e-4)
    for m_ in range(3):
        assert mom[m_] == pytest.approx(float(np.sum(xs[m_] / r)) * dv, rel=1e-3)
    # ∫_cell ∂_p K = -F0
    for l in range(3):
        assert -f0[l] == pytest.approx(float(np.sum(-(o[l] - xs[l]) / r**3)) * dv, rel=1e-4)


def test_off_node_points_converge_to_closed_form():
    # ∫ exp(-r'²) / |x - x'| dV' = π^(3/2) erf(r) / r
    P = lambda r: math.pi**1.5 * math.erf(r) / r
    dP = lambda r: math.pi**1.5 * (2 * math.exp(-r * r) / (math.sqrt(math.pi) * r) - math.erf(r) / r**2)
    rng = np.random.default_rng(3)
    dirs = rng.standard_normal((20, 3))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    rad = rng.uniform(0.5, 2.0, 20)
    pts = dirs * rad[:, None]
    ev, eg = [], []
    for res in (16, 32):
        g = GridSpec.cube(4.0, res)
        v = potential(gaussian(3, 1), K3, g, pts).values
        ev.append(np.max(np.abs(v - [P(r) for r in rad])))
        grad = np.stack([c.values for c in potential_gradient(gaussian(3, 1), K3, g, pts)], 1)
        exact = dirs * np.array([dP(r) for r in rad])[:, None]
        eg.append(np.sqrt(np.mean(np.sum((grad - exact) ** 2, axis=1))))
    assert ev[0] / ev[1] > 3.0  # second order for values
    assert eg[0] / eg[1] > 1.6  # first order (RMS) for off-node gradients
    assert ev[1] < 0.03 and eg[1] < 0.1


def test_zero_source():
    g = GridSpec.cube(2.0, 6)
    assert not np.any(potential(ScalarExpr(), K3, g).values)
    assert not np.any(fft_potential(ScalarExpr(), K3, g).values)


def test_poisson_oracle_second_order():
    # ∫ ∂∂f(x') / |x - x'| dV' = -4π f(x) for decaying f
    f = gaussian(3, 1)
    lap = laplacian(FormField.scalar(3, f))[0]
    errs = []
    for res in (16, 32):
        g = GridSpec.cube(4.0, res)
        got = fft_potential(lap, K3, g).values
        ref = -4 * math.pi * np.broadcast_to(f.evaluate_array(g.mesh()), g.shape)
        errs.append(np.linalg.norm(got - ref) / np.linalg.norm(ref))
    assert errs[1] < 0.01
    assert math.log2(errs[0] / errs[1]) > 1.7


def test_radial_oracle_at_origin():
    # 4π ∫_0^∞ r exp(-r²) dr = 2π
    f = gaussian(3, 1)
    vals = [potential(f, K3, GridSpec.cube(4.0, res), np.zeros((1, 3))).values[0] for res in (16, 32)]
    errs = [abs(v - 2 * math.pi) / (2 * math.pi) for v in vals]
    assert errs[1] < 0.01 and errs[1] < errs[0] / 3.5


def test_spherical_symmetry():
    g = GridSpec.cube(4.0, 16)
    r = 1.3
    pts = np.array([[r, 0, 0], [0, r, 0], [0, 0, -r], [r / math.sqrt(3)] * 3, [-r / math.sqrt(2), r / math.sqrt(2), 0]])
    vals = potential(gaussian(3, 1), K3, g, pts).values
    assert np.ptp(vals) / abs(vals.mean()) < 5e-3


def test_fft_matches_direct():
    g = GridSpec.cube(4.0, 16)
    src = X[0] * gaussian(3, 2) + gaussian(3, 1)
    d = potential(src, K3, g).values
    f = fft_potential(src, K3, g).values
    assert np.linalg.norm(d - f) / np.linalg.norm(d) < 1e-12
    dg = potential_gradient(src, K3, g)
    fg = fft_potential_gradient(src, K3, g)
    for a, b in zip(dg, fg):
        assert np.linalg.norm(a.values - b.values) / np.linalg.norm(a.values) < 1e-12


def test_single_node_source_reproduces_kernel():
    g = GridSpec.cube(2.0, 8)
    vals = np.zeros(g.shape)
    vals[3, 4, 2] = 1.0
    got = fft_potential(vals, K3, g).values
    node = g.points().reshape(*g.shape, 3)[3, 4, 2]
    r = np.linalg.norm(g.points() - node, axis=1).reshape(g.shape)
    expect = np.where(r > 0, g.cell_volume / np.where(r > 0, r, 1), self_cell_integrals(K3, g.spacing)[0])
    assert np.allclose(got, expect, rtol=1e-12, atol=1e-14)


def test_kernel_gradient_matches_finite_difference():
    src = gaussian(3, 1) * (1 + X[1])
    g = GridSpec.cube(4.0, 12)
    h = 1e-5
    p = np.array([[0.31, -0.2, 0.47]])
    grad = [c.values[0] for c in potential_gradient(src, K3, g, p)]
    for l in range(3):
        e = np.zeros((1, 3))
        e[0, l] = h
        fd = (potential(src, K3, g, p + e).values[0] - potential(src, K3, g, p - e).values[0]) / (2 * h)
        assert grad[l] == pytest.approx(fd, rel=1e-6)


def test_I_integrals():
    g = GridSpec.cube(3.0, 8)
    assert not np.any(compute_I0(dx(3, 1), K3, g).values)
    alpha = FormField.basis(3, 1, coeff=X[0] * gaussian(3, 1))
    assert I0_source(alpha) == codiff(alpha)[0]
    np.testing.assert_array_equal(compute_I0(alpha, K3, g).values, potential(codiff(alpha)[0], K3, g).values)
    df = ext_d(FormField.scalar(3, gaussian(3, 1)))
    assert I0_source(df) == laplacian(FormField.scalar(3, gaussian(3, 1)))[0]
    for i in (1, 2, 3):
        assert Ii_source(df, i).is_zero()
        assert not np.any(compute_Ii(df, K3, g, i=i).values)
    beta = FormField.basis(3, 3, coeff=X[1] * gaussian(3, 1))
    # only a_3 is non-zero: I1 ~ a_3,2, I2 ~ -a_3,1, I3 = 0
    assert Ii_source(beta, 1) == (X[1] * gaussian(3, 1)).diff(2)
    assert Ii_source(beta, 2) == -(X[1] * gaussian(3, 1)).diff(1)
    assert Ii_source(beta, 3).is_zero()
    with pytest.raises(ValueError):
        compute_I0(dx(3, 1, 2), K3, g)


def test_sampled_scalar_round_trips(tmp_path):
    g = GridSpec.box(-1.0, 2.0, 5)
    rng = np.random.default_rng(1)
    s = SampledScalar(g, rng.standard_normal(g.shape) * 1e3)
    s.to_csv(tmp_path / "a.csv")
    s.to_binary(tmp_path / "a.bin")
    for back in (SampledScalar.from_csv(tmp_path / "a.csv", g), SampledScalar.from_binary(tmp_path / "a.bin")):
        np.testing.assert_array_equal(back.values, s.values)
        assert back.grid == g
    first = (tmp_path / "a.csv").read_text().splitlines()[:3]
    assert first[0] == "x,y,z,value"
    # C order: last axis fastest
    assert [float(t) for t in first[2].split(",")[:3]] == [g.axes()[0][0], g.axes()[1][0], g.axes()[2][1]]
    pts = SampledScalar(g, [1.0, 2.0], np.array([[0.1, 0.2, 0.3], [1, 1, 1]]))
    pts.to_binary(tmp_path / "p.bin")
    back = SampledScalar.from_binary(tmp_path / "p.bin")
    np.testing.assert_array_equal(back.points, pts.points)


def test_greens_identity_harmonic_flux():
    # f = 1, g = x1 x2: volume side is 0, flux through the unit box is 0 as well
    f = ScalarExpr.const(1)
    g = X[0] * X[1]
    rep = greens_identity_check(f, g, GridSpec.box(0.0, 1.0, 8))
    assert rep.lhs == pytest.approx(0.0, abs=1e-13) and rep.rhs == pytest.approx(0.0, abs=1e-13)
    # g = x1² x2 is not harmonic: LHS = ∫ 2 x2 = 1 = flux
    rep = greens_identity_check(f, X[0] ** 2 * X[1], GridSpec.box(0.0, 1.0, 16))
    assert rep.rhs == pytest.approx(1.0, abs=1e-12)
    assert rep.lhs == pytest.approx(1.0, abs=1e-12)


def test_greens_identity_vanishing_boundary():
    bump = X[0] * (1 - X[0]) * X[1] * (1 - X[1]) * X[2] * (1 - X[2])
    rep = greens_identity_check(bump, bump, GridSpec.box(0.0, 1.0, 16))
    assert rep.rhs == 0.0
    assert abs(rep.lhs) < 1e-3

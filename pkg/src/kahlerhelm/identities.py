"""Randomized exact checks of the Kähler-calculus identities in Cartesian E_n.

Every check runs on random polynomial or polynomial-Gaussian forms with
rational coefficients; equality is decided by exact normalization, so a
pass means the two sides agree as functions, not to within a tolerance.

Two steps of the duality chain are easy to get wrong by putting the
constant differential on the left.  The suite checks the correct ordering
and also runs the misordered one, which is expected to be refuted
(``expect=False``) with a concrete counterexample.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable

from .algebra import (
    Multivector,
    all_blades,
    blade_name,
    clifford_mul,
    grade_involution,
    interior,
    popcount,
    wedge,
)
from .expr import ScalarExpr, coords, gaussian
from .fields import (
    FormField,
    codiff,
    dx,
    e_h,
    ext_d,
    kahler_d,
    laplacian,
    partial_d,
    to_vector_field,
    vector_laplacian,
)

CYCLIC = ((1, 2, 3), (2, 3, 1), (3, 1, 2))


# ---------------------------------------------------------------------------
# random forms


def random_poly(rng: random.Random, n: int, degree: int = 2, terms: int = 3, min_degree: int = 0) -> ScalarExpr:
    xs = coords(n)
    out = ScalarExpr()
    for _ in range(terms):
        t = ScalarExpr.const(Fraction(rng.choice([-1, 1]) * rng.randint(1, 6), rng.randint(1, 4)))
        for _ in range(rng.randint(min(min_degree, degree), degree)):
            t = t * rng.choice(xs)
        out = out + t
    return out


def random_envelope(rng: random.Random, n: int) -> ScalarExpr:
    """1 or a Gaussian exp(-Σ c_i x_i²) with random rational c_i > 0."""
    if rng.random() < 0.25:
        return ScalarExpr.const(1)
    if rng.random() < 0.5:
        return gaussian(n, Fraction(rng.randint(1, 3), rng.randint(1, 2)))
    xs = coords(n)
    q = sum((Fraction(rng.randint(1, 4), rng.randint(1, 3)) * x * x for x in xs), ScalarExpr())
    return (-q).exp()


def random_scalar(rng: random.Random, n: int, *, envelope: bool = True, degree: int = 2) -> ScalarExpr:
    p = random_poly(rng, n, degree)
    return p * random_envelope(rng, n) if envelope else p


def random_form(
    rng: random.Random,
    n: int,
    grades: Iterable[int] | None = None,
    *,
    blades: int = 3,
    envelope: bool = True,
    degree: int = 2,
) -> FormField:
    pool = [m for m in all_blades(n) if grades is None or popcount(m) in set(grades)]
    k = min(blades, len(pool))
    return FormField(n, {m: random_scalar(rng, n, envelope=envelope, degree=degree) for m in rng.sample(pool, k)})


def random_constant(rng: random.Random, n: int, blades: int = 3) -> Multivector:
    pool = all_blades(n)
    return Multivector(n, {m: Fraction(rng.randint(-5, 5), rng.randint(1, 3)) for m in rng.sample(pool, min(blades, len(pool)))})


# ---------------------------------------------------------------------------
# results


@dataclass
class IdentityResult:
    key: str
    statement: str
    trials: int = 0
    passed: int = 0
    expect: bool = True
    counterexample: str | None = None
    detail: dict[str, Any] = field(default_factory=dict)

    @property
    def holds(self) -> bool:
        return self.trials > 0 and self.passed == self.trials

    @property
    def status(self) -> str:
        if self.holds:
            return "exact-pass"
        return "refuted" if not self.expect else "fail"

    @property
    def ok(self) -> bool:
        """True when the outcome matches what the identity is expected to do."""
        return self.holds if self.expect else (self.trials > 0 and not self.holds)

    def record(self, ok: bool, witness: Callable[[], str] | None = None) -> None:
        self.trials += 1
        if ok:
            self.passed += 1
        elif self.counterexample is None and witness is not None:
            self.counterexample = witness()

    def to_dict(self) -> dict[str, Any]:
        d = {
            "key": self.key,
            "statement": self.statement,
            "status": self.status,
            "expected_to_hold": self.expect,
            "ok": self.ok,
            "trials": self.trials,
            "passed": self.passed,
        }
        if self.counterexample:
            d["counterexample"] = self.counterexample
        if self.detail:
            d["detail"] = self.detail
        return d


@dataclass
class SuiteReport:
    results: list[IdentityResult]
    seed: int
    trials: int

    @property
    def all_ok(self) -> bool:
        return all(r.ok for r in self.results)

    def __getitem__(self, key: str) -> IdentityResult:
        for r in self.results:
            if r.key == key:
                return r
        raise KeyError(key)

    def keys(self) -> list[str]:
        return [r.key for r in self.results]

    def to_dict(self) -> dict[str, Any]:
        return {"seed": self.seed, "trials": self.trials, "all_ok": self.all_ok, "results": [r.to_dict() for r in self.results]}

    def lines(self) -> list[str]:
        out = []
        for r in self.results:
            flag = "ok " if r.ok else "BAD"
            tail = "" if r.expect else "  (misordered variant, expected false)"
            out.append(f"{flag} {r.status:<10} {r.passed:>4}/{r.trials:<4} {r.key}: {r.statement}{tail}")
        return out


def _show(f: Any) -> str:
    return repr(f)


# ---------------------------------------------------------------------------
# algebra


def check_anticommutation(max_dim: int = 6, trials: int = 100, seed: int = 0) -> IdentityResult:
    """dx^i dx^j + dx^j dx^i = 2 δ^{ij}: all pairs for n <= max_dim, plus
    αβ + βα = 2 α·β for random 1-forms with polynomial coefficients."""
    res = IdentityResult("anticommutation", "dx^i dx^j + dx^j dx^i = 2 delta^ij")
    for n in range(1, max_dim + 1):
        for i in range(1, n + 1):
            for j in range(1, n + 1):
                a, b = Multivector.basis(n, i), Multivector.basis(n, j)
                lhs = clifford_mul(a, b) + clifford_mul(b, a)
                rhs = Multivector.scalar(n, 2 if i == j else 0)
                res.record(lhs == rhs, lambda: f"n={n}, i={i}, j={j}")
    basis_pairs = res.trials
    rng = random.Random(seed)
    for t in range(trials):
        n = rng.randint(2, max_dim)
        a, b = random_form(rng, n, [1], blades=n), random_form(rng, n, [1], blades=n)
        lhs = a * b + b * a
        rhs = interior(a, b) * 2
        res.record(lhs == rhs and (lhs.is_zero() or lhs.is_homogeneous(0)), lambda: f"a={_show(a)}, b={_show(b)}")
    res.detail = {"basis_pairs": basis_pairs, "random_1form_pairs": trials}
    return res


# ---------------------------------------------------------------------------
# operators


def check_nilpotent(trials: int = 100, seed: int = 1, dims: Iterable[int] = (2, 3, 4)) -> list[IdentityResult]:
    rng = random.Random(seed)
    dd = IdentityResult("dd_zero", "d d G = 0")
    tt = IdentityResult("deltadelta_zero", "delta delta G = 0")
    dims = list(dims)
    for t in range(trials):
        n = dims[t % len(dims)]
        g = random_form(rng, n, blades=4)
        dd.record(ext_d(ext_d(g)).is_zero(), lambda: _show(g))
        tt.record(codiff(codiff(g)).is_zero(), lambda: _show(g))
    return [dd, tt]


def check_codiff_dual_e3(trials: int = 100, seed: int = 2) -> IdentityResult:
    """δΓ = -w d(Γ w) in E_3, for every grade 0..3."""
    rng = random.Random(seed)
    res = IdentityResult("codiff_via_dual_e3", "delta G = -w d(G w), n=3, grades 0..3")
    w = FormField.volume(3)
    per = {}
    for r in range(4):
        before = res.passed
        for _ in range(trials):
            g = random_form(rng, 3, [r], blades=3)
            res.record(codiff(g) == -(w * ext_d(g * w)), lambda: _show(g))
        per[str(r)] = f"{res.passed - before}/{trials}"
    res.detail = {"by_grade": per}
    return res


def check_codiff_dual_general(trials: int = 100, seed: int = 3, dims: Iterable[int] = (2, 3, 4, 5)) -> IdentityResult:
    """(δΓ) w = d(Γ w) in every dimension."""
    rng = random.Random(seed)
    res = IdentityResult("codiff_dual_general", "(delta G) w = d(G w), n=2..5")
    per = {}
    for n in dims:
        w = FormField.volume(n)
        before = res.passed
        for _ in range(trials):
            g = random_form(rng, n, blades=3)
            res.record(codiff(g) * w == ext_d(g * w), lambda: f"n={n}: {_show(g)}")
        per[str(n)] = f"{res.passed - before}/{trials}"
    res.detail = {"by_dim": per}
    return res


def check_laplacians(trials: int = 100, seed: int = 4) -> list[IdentityResult]:
    rng = random.Random(seed)
    split = IdentityResult("laplacian_split", "K K G = d delta G + delta d G")
    scal = IdentityResult("scalar_laplacian", "K K f = delta d f for 0-forms")
    for t in range(trials):
        n = 2 + t % 3
        g = random_form(rng, n, blades=3)
        split.record(laplacian(g) == ext_d(codiff(g)) + codiff(ext_d(g)), lambda: _show(g))
        f = FormField.scalar(n, random_scalar(rng, n))
        scal.record(laplacian(f) == codiff(ext_d(f)), lambda: _show(f))
    return [split, scal]


def _eta(u: Multivector) -> Multivector:
    return grade_involution(u)


def check_product_rules(trials: int = 100, seed: int = 5, n: int = 3) -> list[IdentityResult]:
    """Non-Leibniz product rules for ∂ and δ with η the grade involution."""
    rng = random.Random(seed)
    kd = IdentityResult("kahler_product_rule", "K(u^v) = Ku^v + eta u^Kv + e^h u ^ d_h v + eta d_h u ^ e^h v")
    cd = IdentityResult("codiff_product_rule", "delta(u^v) = delta u^v + eta u^delta v + e^h u ^ d_h v + eta d_h u ^ e^h v")
    for _ in range(trials):
        u, v = random_form(rng, n, blades=2, degree=2), random_form(rng, n, blades=2, degree=2)
        extra = FormField(n)
        for h in range(1, n + 1):
            extra = extra + wedge(e_h(u, h), partial_d(v, h)) + wedge(_eta(partial_d(u, h)), e_h(v, h))
        uv = wedge(u, v)
        kd.record(kahler_d(uv) == wedge(kahler_d(u), v) + wedge(_eta(u), kahler_d(v)) + extra, lambda: f"u={_show(u)}, v={_show(v)}")
        cd.record(codiff(uv) == wedge(codiff(u), v) + wedge(_eta(u), codiff(v)) + extra, lambda: f"u={_show(u)}, v={_show(v)}")
    return [kd, cd]


def check_constant_differentials(trials: int = 100, seed: int = 6) -> list[IdentityResult]:
    rng = random.Random(seed)
    cr = IdentityResult("constant_right_factor", "K(G c) = (K G) c for constant c")
    wr = IdentityResult("volume_right_factor", "K(G w) = (K G) w")
    for t in range(trials):
        n = 2 + t % 3
        g = random_form(rng, n, blades=3)
        c = FormField(n, random_constant(rng, n).terms)
        cr.record(kahler_d(g * c) == kahler_d(g) * c, lambda: f"G={_show(g)}, c={_show(c)}")
        w = FormField.volume(n)
        wr.record(kahler_d(g * w) == kahler_d(g) * w, lambda: _show(g))
    return [cr, wr]


# ---------------------------------------------------------------------------
# E_3 duality chain


def check_duality_chain(trials: int = 100, seed: int = 7) -> list[IdentityResult]:
    """The chain turning the dual 1-form theorem into the 2-form theorem."""
    rng = random.Random(seed)
    n = 3
    w = FormField.volume(3)

    r40 = IdentityResult("dual_derivatives", "w delta(w b) = -d b  and  w d b = delta(w b)")
    r43 = IdentityResult("dual_exact_to_coexact", "w df = (Kf) w = K(f w) = delta(f w)")
    r44 = IdentityResult("codiff_split_dual", "w delta(dx^jk f) = w K(w dx^i f) - w d(f dx^jk)")
    r45 = IdentityResult("dual_constant_pullout", "w K(w dx^i f) = -(df) dx^i")
    r45p = IdentityResult("dual_constant_pullout_misordered", "w K(w dx^i f) = w w dx^i K f = -dx^i df", expect=False)
    r46 = IdentityResult("dual_interior_term", "-w d(f dx^jk) = -w df^dx^jk = -w f_,i w = f_,i = dx^i . df")
    r47 = IdentityResult("dual_coexact_to_exact", "w delta(dx^jk f) = -(df) dx^i + dx^i . df = dx^i ^ df = -d(dx^i f)")
    r47p = IdentityResult("dual_coexact_to_exact_misordered", "w delta(dx^jk f) = -dx^i df + dx^i . df", expect=False)
    r47t = IdentityResult("wedge_to_exact", "-dx^i ^ df = d(dx^i f)")
    r48 = IdentityResult("dual_codiff_components", "beta = -w a_i dx^i  =>  delta beta = (a_3,2 - a_2,3) dx^1 + cyclic")
    r49 = IdentityResult("dual_curl_wedge", "d(w beta) ^ dx^i = d alpha ^ dx^i = delta beta ^ dx^jk")

    for _ in range(trials):
        b = random_form(rng, n, [2], blades=3)
        r40.record(w * codiff(w * b) == -ext_d(b) and w * ext_d(b) == codiff(w * b), lambda: _show(b))

        f_expr = random_scalar(rng, n)
        f = FormField.scalar(n, f_expr)
        df = ext_d(f)
        kf = kahler_d(f)
        fw = f * w
        r43.record(w * df == kf * w and kf * w == kahler_d(fw) and kahler_d(fw) == codiff(fw), lambda: _show(f))

        for i, j, k in CYCLIC:
            dxi, dxjk = dx(n, i), dx(n, j, k)
            lhs = w * codiff(dxjk * f)
            kw = w * kahler_d(w * dxi * f)
            r44.record(lhs == kw - w * ext_d(f * dxjk), lambda: f"i={i}, f={f_expr}")
            r45.record(kw == -(df * dxi), lambda: f"i={i}, f={f_expr}")
            r45p.record(kw == w * w * dxi * kf and kw == -(dxi * df), lambda: f"i={i}, f={f_expr}")
            fi = FormField.scalar(n, f_expr.diff(i))
            chain46 = [
                -(w * ext_d(f * dxjk)),
                -(w * wedge(df, dxjk)),
                -(w * fi * w),
                fi,
                interior(dxi, df),
            ]
            r46.record(all(a == b2 for a, b2 in zip(chain46, chain46[1:])), lambda: f"i={i}, f={f_expr}")
            chain47 = [lhs, -(df * dxi) + interior(dxi, df), wedge(dxi, df), -ext_d(dxi * f)]
            r47.record(all(a == b2 for a, b2 in zip(chain47, chain47[1:])), lambda: f"i={i}, f={f_expr}")
            r47p.record(lhs == -(dxi * df) + interior(dxi, df), lambda: f"i={i}, f={f_expr}")
            r47t.record(-wedge(dxi, df) == ext_d(dxi * f), lambda: f"i={i}, f={f_expr}")

        alpha = random_form(rng, n, [1], blades=3)
        a = [alpha.coefficient(i) for i in (1, 2, 3)]
        beta = -(w * alpha)
        expect = FormField(n)
        for i, j, k in CYCLIC:
            expect = expect + dx(n, i) * FormField.scalar(n, a[k - 1].diff(j) - a[j - 1].diff(k))
        db = codiff(beta)
        r48.record(db == expect, lambda: _show(alpha))
        ok49 = True
        for i, j, k in CYCLIC:
            x1 = wedge(ext_d(w * beta), dx(n, i))
            x2 = wedge(ext_d(alpha), dx(n, i))
            x3 = wedge(db, dx(n, j, k))
            ok49 = ok49 and x1 == x2 and x2 == x3
        r49.record(ok49, lambda: _show(alpha))

    return [r40, r43, r44, r45, r45p, r46, r47, r47p, r47t, r48, r49]


def check_cyclic_cancellation(trials: int = 100, seed: int = 8) -> IdentityResult:
    """Σ_cyclic ∂_i (a_k,j - a_j,k) = 0 for 1-forms in E_3."""
    rng = random.Random(seed)
    res = IdentityResult("cyclic_cancellation", "sum_cyclic d_i (a_k,j - a_j,k) = 0")
    for _ in range(trials):
        alpha = random_form(rng, 3, [1], blades=3, degree=3)
        a = [alpha.coefficient(i) for i in (1, 2, 3)]
        total = ScalarExpr()
        for i, j, k in CYCLIC:
            total = total + (a[k - 1].diff(j) - a[j - 1].diff(k)).diff(i)
        res.record(total.is_zero(), lambda: _show(alpha))
    return res


def check_vector_laplacian(trials: int = 20, seed: int = 9) -> IdentityResult:
    """Kähler Laplacian of a 1-form = classical vector Laplacian, componentwise."""
    rng = random.Random(seed)
    res = IdentityResult("vector_laplacian_correspondence", "K K alpha = grad div v - curl curl v componentwise")
    for _ in range(trials):
        alpha = random_form(rng, 3, [1], blades=3, envelope=False, degree=4)
        lap = laplacian(alpha)
        ok = lap.is_zero() or lap.is_homogeneous(1)
        v = to_vector_field(alpha) if not alpha.is_zero() else [ScalarExpr()] * 3
        cl = vector_laplacian(v)
        for i in range(3):
            ok = ok and ScalarExpr.lift(lap[1 << i]) == cl[i]
        res.record(ok, lambda: _show(alpha))
    return res


# ---------------------------------------------------------------------------
# suites


def verify_identity_chain(trials: int = 100, seed: int = 0) -> SuiteReport:
    """Duality chain and cyclic cancellation (the symbolic part of the 2-form theorem)."""
    results = check_duality_chain(trials, seed + 7) + [check_cyclic_cancellation(trials, seed + 8)]
    return SuiteReport(results, seed, trials)


def run_symbolic_suite(trials: int = 100, seed: int = 0) -> SuiteReport:
    results: list[IdentityResult] = [check_anticommutation(6, trials, seed)]
    results += check_nilpotent(trials, seed + 1)
    results.append(check_codiff_dual_e3(trials, seed + 2))
    results.append(check_codiff_dual_general(trials, seed + 3))
    results += check_laplacians(trials, seed + 4)
    results += check_product_rules(trials, seed + 5)
    results += check_constant_differentials(trials, seed + 6)
    results += check_duality_chain(trials, seed + 7)
    results.append(check_cyclic_cancellation(trials, seed + 8))
    results.append(check_vector_laplacian(max(20, trials // 5), seed + 9))
    return SuiteReport(results, seed, trials)


__all__ = [
    "IdentityResult",
    "SuiteReport",
    "check_anticommutation",
    "check_codiff_dual_e3",
    "check_codiff_dual_general",
    "check_constant_differentials",
    "check_cyclic_cancellation",
    "check_duality_chain",
    "check_laplacians",
    "check_nilpotent",
    "check_product_rules",
    "check_vector_laplacian",
    "random_constant",
    "random_envelope",
    "random_form",
    "random_poly",
    "random_scalar",
    "run_symbolic_suite",
    "verify_identity_chain",
]


@dataclass
class GreensDraw:
    f: ScalarExpr
    g: ScalarExpr
    study: Any
    rejected: list[tuple[str, str]]


def random_greens_study(seed: int = 0, *, max_draws: int = 50, floor: float = 1e-12, **kw: Any) -> GreensDraw:
    """Green's-identity refinement study on random polynomials f, g.

    The midpoint rule integrates low-degree integrands exactly, so some draws
    give residuals at round-off on every level and carry no convergence
    information.  Such draws (any level below ``floor`` relative to the
    boundary flux) are skipped and listed in ``rejected``; nothing else is
    filtered.
    """
    from .green import greens_convergence

    rng = random.Random(seed)
    rejected = []
    for _ in range(max_draws):
        f = random_poly(rng, 3, 3, 4, 2)
        g = random_poly(rng, 3, 4, 4, 3)
        study = greens_convergence(f, g, **kw)
        scale = max(abs(r.rhs) for r in study.reports) or 1.0
        if min(r.abs_residual for r in study.reports) <= floor * scale:
            rejected.append((str(f), str(g)))
            continue
        return GreensDraw(f, g, study, rejected)
    raise RuntimeError(f"no non-degenerate polynomial pair in {max_draws} draws")

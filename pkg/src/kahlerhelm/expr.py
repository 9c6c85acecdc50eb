"""Exactly differentiable scalar coefficient functions on Cartesian E_n.

An expression is kept in a normal form: a sum of groups

    P(x) * exp(E(x)) * B_1(x)^{e_1} * ... * B_k(x)^{e_k}

where ``P``, ``E`` and the bases ``B_j`` are polynomials with rational
coefficients and the ``e_j`` are non-integral or negative rationals.  Groups
sharing an envelope ``E`` and the same fractional parts of the atom exponents
are merged over a common denominator, so a difference that vanishes
identically normalises to the empty sum.  Polynomial-Gaussian expressions
(no atoms) are exactly canonical.

Variables are 0-based internally and printed 1-based as ``x1 .. xn``.
"""

from __future__ import annotations

import ast
import math
import random
from collections import defaultdict
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

NVARS = 12

Monomial = tuple  # tuple of NVARS non-negative ints
Poly = dict  # Monomial -> Fraction
PolyKey = tuple  # sorted tuple of (Monomial, Fraction)
Atom = tuple  # (PolyKey, Fraction exponent)
GroupKey = tuple  # (envelope PolyKey, tuple[Atom, ...])

ONE_MONO: Monomial = (0,) * NVARS


class ExprError(ValueError):
    """Raised for expressions outside the supported class."""


# ---------------------------------------------------------------------------
# polynomial kernel


def _mono_mul(a: Monomial, b: Monomial) -> Monomial:
    return tuple(x + y for x, y in zip(a, b))


def _mono_var(v: int, p: int = 1) -> Monomial:
    m = [0] * NVARS
    m[v] = p
    return tuple(m)


def poly_add(a: Poly, b: Poly, scale: Fraction | int = 1) -> Poly:
    out = dict(a)
    for m, c in b.items():
        v = out.get(m, 0) + scale * c
        if v:
            out[m] = v
        else:
            out.pop(m, None)
    return out


def poly_mul(a: Poly, b: Poly) -> Poly:
    out: Poly = {}
    for ma, ca in a.items():
        for mb, cb in b.items():
            m = _mono_mul(ma, mb)
            v = out.get(m, 0) + ca * cb
            if v:
                out[m] = v
            else:
                out.pop(m, None)
    return out


def poly_pow(a: Poly, k: int) -> Poly:
    out: Poly = {ONE_MONO: Fraction(1)}
    base = a
    while k:
        if k & 1:
            out = poly_mul(out, base)
        k >>= 1
        if k:
            base = poly_mul(base, base)
    return out


def poly_diff(a: Poly, v: int) -> Poly:
    out: Poly = {}
    for m, c in a.items():
        p = m[v]
        if p:
            mm = list(m)
            mm[v] = p - 1
            out[tuple(mm)] = c * p
    return out


def poly_key(a: Poly) -> PolyKey:
    return tuple(sorted(a.items()))


def poly_from_key(k: PolyKey) -> Poly:
    return dict(k)


def poly_is_const(a: Poly) -> bool:
    return all(m == ONE_MONO for m in a)


def poly_max_var(a: Poly) -> int:
    """Number of variables used (1 + highest 0-based index, 0 if constant)."""
    n = 0
    for m in a:
        for i in range(NVARS - 1, -1, -1):
            if m[i]:
                n = max(n, i + 1)
                break
    return n


def poly_degree(a: Poly) -> int:
    return max((sum(m) for m in a), default=0)


def _mono_sort_key(m: Monomial) -> tuple:
    return (-sum(m), tuple(-x for x in m))


def _fmt_frac(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"


def _fmt_mono(m: Monomial) -> str:
    parts = []
    for i, p in enumerate(m):
        if p == 1:
            parts.append(f"x{i + 1}")
        elif p:
            parts.append(f"x{i + 1}^{p}")
    return "*".join(parts)


def poly_str(a: Poly) -> str:
    if not a:
        return "0"
    out = []
    for idx, m in enumerate(sorted(a, key=_mono_sort_key)):
        c = a[m]
        neg = c < 0
        mag = -c if neg else c
        ms = _fmt_mono(m)
        if ms and mag == 1:
            body = ms
        elif ms:
            body = f"{_fmt_frac(mag)}*{ms}"
        else:
            body = _fmt_frac(mag)
        if idx == 0:
            out.append(f"-{body}" if neg else body)
        else:
            out.append(f" - {body}" if neg else f" + {body}")
    return "".join(out)


def _eval_poly(a: Poly, powers: list[list[Any]]) -> Any:
    total: Any = 0.0
    for m, c in a.items():
        t: Any = float(c)
        for i, p in enumerate(m):
            if p:
                t = t * powers[i][p]
        total = total + t
    return total


def _power_table(coords: Sequence[Any], polys: Iterable[Poly]) -> list[list[Any]]:
    maxp = [0] * NVARS
    for a in polys:
        for m in a:
            for i, p in enumerate(m):
                if p > maxp[i]:
                    maxp[i] = p
    table: list[list[Any]] = []
    for i in range(NVARS):
        row: list[Any] = [1.0]
        if maxp[i]:
            if i >= len(coords):
                raise ExprError(f"expression uses x{i + 1} but only {len(coords)} coordinates given")
            x = coords[i]
            for _ in range(maxp[i]):
                row.append(row[-1] * x)
        table.append(row)
    return table


# ---------------------------------------------------------------------------
# normalisation


def _frac_part(e: Fraction) -> Fraction:
    return e - math.floor(e)


def _normalize(groups: Mapping[GroupKey, Poly]) -> dict[GroupKey, Poly]:
    classes: dict[tuple, list[tuple[dict[PolyKey, Fraction], Poly]]] = defaultdict(list)
    for (env, atoms), p in groups.items():
        if not p:
            continue
        amap = {b: e for b, e in atoms if e != 0}
        cls = (env, tuple(sorted((b, _frac_part(e)) for b, e in amap.items() if _frac_part(e) != 0)))
        classes[cls].append((amap, p))

    out: dict[GroupKey, Poly] = {}
    for (env, _), members in classes.items():
        bases = sorted({b for amap, _ in members for b in amap})
        mins = {b: min(amap.get(b, Fraction(0)) for amap, _ in members) for b in bases}
        total: Poly = {}
        for amap, p in members:
            term = p
            for b in bases:
                k = amap.get(b, Fraction(0)) - mins[b]
                if k:
                    term = poly_mul(term, poly_pow(poly_from_key(b), int(k)))
            total = poly_add(total, term)
        if not total:
            continue
        atoms_out = []
        for b in bases:
            m = mins[b]
            if m.denominator == 1 and m >= 0:
                if m:
                    total = poly_mul(total, poly_pow(poly_from_key(b), int(m)))
            else:
                atoms_out.append((b, m))
        if total:
            key = (env, tuple(atoms_out))
            out[key] = poly_add(out.get(key, {}), total)
            if not out[key]:
                del out[key]
    return out


def _as_fraction(v: Any) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, bool):
        raise ExprError("booleans are not scalars")
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ExprError(f"non-finite constant {v}")
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v)
    raise ExprError(f"cannot use {v!r} as an exact constant")


# ---------------------------------------------------------------------------
# ScalarExpr


class ScalarExpr:
    """Immutable scalar function of the coordinates, closed under ∂/∂x^i."""

    __slots__ = ("_groups",)

    def __init__(self, groups: Mapping[GroupKey, Poly] | None = None, *, _normalized: bool = False):
        self._groups: dict[GroupKey, Poly] = dict(groups or {}) if _normalized else _normalize(groups or {})

    # -- constructors -------------------------------------------------------
    @classmethod
    def const(cls, value: Any) -> "ScalarExpr":
        c = _as_fraction(value)
        if c == 0:
            return cls()
        return cls({((), ()): {ONE_MONO: c}}, _normalized=True)

    @classmethod
    def coord(cls, i: int) -> "ScalarExpr":
        """The coordinate function x^i (1-based)."""
        if not 1 <= i <= NVARS:
            raise ExprError(f"coordinate index must lie in 1..{NVARS}, got {i}")
        return cls({((), ()): {_mono_var(i - 1): Fraction(1)}}, _normalized=True)

    @classmethod
    def from_poly(cls, p: Poly) -> "ScalarExpr":
        return cls({((), ()): dict(p)})

    @classmethod
    def lift(cls, v: Any) -> "ScalarExpr":
        return v if isinstance(v, ScalarExpr) else cls.const(v)

    # -- structure ------------------------------------------------------
    def is_zero(self) -> bool:
        return not self._groups

    def groups(self) -> dict[GroupKey, Poly]:
        return {k: dict(v) for k, v in self._groups.items()}

    def is_polynomial(self) -> bool:
        return all(k == ((), ()) for k in self._groups)

    def as_poly(self) -> Poly:
        if not self.is_polynomial():
            raise ExprError("expression is not a polynomial")
        return dict(self._groups.get(((), ()), {}))

    def is_constant(self) -> bool:
        return self.is_polynomial() and poly_is_const(self.as_poly())

    def constant_value(self) -> Fraction:
        if not self.is_constant():
            raise ExprError("expression is not constant")
        return self.as_poly().get(ONE_MONO, Fraction(0))

    def has_atoms(self) -> bool:
        return any(atoms for _, atoms in self._groups)

    def has_fractional_atoms(self) -> bool:
        return any(e.denominator != 1 for _, atoms in self._groups for _, e in atoms)

    def nvars(self) -> int:
        """Highest coordinate index used (0 for constants)."""
        n = 0
        for (env, atoms), p in self._groups.items():
            n = max(n, poly_max_var(p), poly_max_var(poly_from_key(env)))
            for b, _ in atoms:
                n = max(n, poly_max_var(poly_from_key(b)))
        return n

    def decays(self, dim: int) -> bool:
        """True when every group carries a Gaussian envelope that is negative
        definite in all ``dim`` coordinates (so the function decays faster than
        any polynomial at infinity)."""
        if not self._groups:
            return True
        for env, _ in self._groups:
            e = poly_from_key(env)
            if poly_degree(e) != 2:
                return False
            q = np.zeros((dim, dim))
            for m, c in e.items():
                if sum(m) != 2:
                    continue
                idx = [i for i, p in enumerate(m) for _ in range(p)]
                if max(idx) >= dim:
                    return False
                i, j = idx
                if i == j:
                    q[i, i] += float(c)
                else:
                    q[i, j] += float(c) / 2
                    q[j, i] += float(c) / 2
            if np.linalg.eigvalsh(q).max() >= 0:
                return False
        return True

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other: Any) -> "ScalarExpr":
        o = ScalarExpr.lift(other)
        if not o._groups:
            return self
        if not self._groups:
            return o
        merged = dict(self._groups)
        for k, p in o._groups.items():
            merged[k] = poly_add(merged.get(k, {}), p)
        return ScalarExpr(merged)

    __radd__ = __add__

    def __neg__(self) -> "ScalarExpr":
        return ScalarExpr({k: {m: -c for m, c in p.items()} for k, p in self._groups.items()}, _normalized=True)

    def __sub__(self, other: Any) -> "ScalarExpr":
        return self + (-ScalarExpr.lift(other))

    def __rsub__(self, other: Any) -> "ScalarExpr":
        return ScalarExpr.lift(other) - self

    def __mul__(self, other: Any) -> "ScalarExpr":
        if not isinstance(other, ScalarExpr):
            try:
                c = _as_fraction(other)
            except ExprError:
                return NotImplemented
            if c == 0:
                return ScalarExpr()
            return ScalarExpr({k: {m: v * c for m, v in p.items()} for k, p in self._groups.items()}, _normalized=True)
        out: dict[GroupKey, Poly] = {}
        for (ea, aa), pa in self._groups.items():
            for (eb, ab), pb in other._groups.items():
                env = poly_key(poly_add(poly_from_key(ea), poly_from_key(eb)))
                amap: dict[PolyKey, Fraction] = dict(aa)
                for b, e in ab:
                    amap[b] = amap.get(b, Fraction(0)) + e
                key = (env, tuple(sorted((b, e) for b, e in amap.items() if e != 0)))
                out[key] = poly_add(out.get(key, {}), poly_mul(pa, pb))
        return ScalarExpr(out)

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "ScalarExpr":
        if isinstance(other, ScalarExpr):
            return self * other ** -1
        c = _as_fraction(other)
        if c == 0:
            raise ZeroDivisionError("division by zero")
        return self * (1 / c)

    def __rtruediv__(self, other: Any) -> "ScalarExpr":
        return ScalarExpr.lift(other) * self ** -1

    def __pow__(self, k: Any) -> "ScalarExpr":
        k = _as_fraction(k)
        if k.denominator == 1 and k >= 0:
            out = ScalarExpr.const(1)
            base = self
            n = int(k)
            while n:
                if n & 1:
                    out = out * base
                n >>= 1
                if n:
                    base = base * base
            return out
        if not self._groups:
            raise ZeroDivisionError("zero raised to a negative or fractional power")
        if len(self._groups) != 1:
            raise ExprError("negative/fractional powers need a polynomial base or a single product term")
        ((env, atoms), p), = self._groups.items()
        new_env = poly_key({m: c * k for m, c in poly_from_key(env).items()})
        amap: dict[PolyKey, Fraction] = {b: e * k for b, e in atoms}
        coeff = Fraction(1)
        if len(p) == 1 and k.denominator == 1:
            (m, c), = p.items()
            coeff = c ** int(k)
            if m != ONE_MONO:
                mb = poly_key({m: Fraction(1)})
                amap[mb] = amap.get(mb, Fraction(0)) + k
        else:
            pk = poly_key(p)
            amap[pk] = amap.get(pk, Fraction(0)) + k
        key = (new_env, tuple(sorted((b, e) for b, e in amap.items() if e != 0)))
        return ScalarExpr({key: {ONE_MONO: coeff}})

    def exp(self) -> "ScalarExpr":
        if not self.is_polynomial():
            raise ExprError("exp() argument must be a polynomial")
        return ScalarExpr({(poly_key(self.as_poly()), ()): {ONE_MONO: Fraction(1)}})

    def sqrt(self) -> "ScalarExpr":
        return self ** Fraction(1, 2)

    # -- calculus -------------------------------------------------------
    def diff(self, i: int) -> "ScalarExpr":
        """Partial derivative with respect to x^i (1-based)."""
        v = i - 1
        if not 0 <= v < NVARS:
            raise ExprError(f"coordinate index must lie in 1..{NVARS}, got {i}")
        out: dict[GroupKey, Poly] = {}

        def acc(key: GroupKey, p: Poly) -> None:
            if p:
                out[key] = poly_add(out.get(key, {}), p)

        for (env, atoms), p in self._groups.items():
            e = poly_from_key(env)
            acc((env, atoms), poly_add(poly_diff(p, v), poly_mul(p, poly_diff(e, v))))
            for j, (b, ex) in enumerate(atoms):
                db = poly_diff(poly_from_key(b), v)
                if not db:
                    continue
                new_atoms = list(atoms)
                new_atoms[j] = (b, ex - 1)
                key = (env, tuple(a for a in new_atoms if a[1] != 0))
                acc(key, poly_mul(p, {m: c * ex for m, c in db.items()}))
        return ScalarExpr(out)

    def gradient(self, dim: int) -> list["ScalarExpr"]:
        return [self.diff(i) for i in range(1, dim + 1)]

    # -- equality ---------------------------------------------------------
    def equals(self, other: Any, *, rng: random.Random | None = None) -> bool:
        """Identity test.

        The normal form decides exactly unless fractional-power atoms survive,
        in which case 16 random rational points are used as a fallback.
        """
        d = self - ScalarExpr.lift(other)
        if d.is_zero():
            return True
        if not d.has_fractional_atoms():
            return False
        rng = rng or random.Random(0x5EED)
        n = max(d.nvars(), 1)
        scale = max(1.0, self._magnitude_hint(n, rng))
        for _ in range(16):
            pt = [Fraction(rng.randint(-40, 40), rng.randint(7, 19)) for _ in range(n)]
            try:
                val = d.evaluate(pt)
            except (ZeroDivisionError, ValueError):
                continue
            if not abs(val) <= 1e-9 * scale:
                return False
        return True

    def _magnitude_hint(self, n: int, rng: random.Random) -> float:
        pt = [Fraction(rng.randint(-40, 40), rng.randint(7, 19)) for _ in range(n)]
        try:
            return abs(float(self.evaluate(pt)))
        except (ZeroDivisionError, ValueError):
            return 1.0

    def __eq__(self, other: object) -> bool:
        if isinstance(other, (ScalarExpr, int, Fraction, float)):
            return self.equals(other)
        return NotImplemented

    __hash__ = None  # type: ignore[assignment]

    def __bool__(self) -> bool:
        return not self.is_zero()

    # -- evaluation -------------------------------------------------------
    def evaluate(self, point: Sequence[Any]) -> Any:
        """Evaluate at one point.

        Exact (``Fraction``) when the point is rational and the expression has
        no envelope and only integer atom exponents; float otherwise.
        """
        exact = all(isinstance(x, (int, Fraction)) for x in point) and all(
            env == () and all(e.denominator == 1 for _, e in atoms) for env, atoms in self._groups
        )
        if exact:
            pt = [Fraction(x) for x in point]
            total = Fraction(0)
            for (_, atoms), p in self._groups.items():
                t = _eval_poly_exact(p, pt)
                for b, e in atoms:
                    t *= _eval_poly_exact(poly_from_key(b), pt) ** int(e)
                total += t
            return total
        return float(self.evaluate_array([float(x) for x in point]))

    def evaluate_array(self, coords: Sequence[Any]) -> Any:
        """Vectorised float evaluation; ``coords[i]`` holds x^{i+1} values."""
        polys = []
        for (env, atoms), p in self._groups.items():
            polys.append(p)
            polys.append(poly_from_key(env))
            polys.extend(poly_from_key(b) for b, _ in atoms)
        table = _power_table(coords, polys)
        shape = np.broadcast(*[np.asarray(c, dtype=float) for c in coords]).shape if coords else ()
        total = np.zeros(shape)
        for (env, atoms), p in self._groups.items():
            t = _eval_poly(p, table)
            if env:
                t = t * np.exp(_eval_poly(poly_from_key(env), table))
            for b, e in atoms:
                t = t * np.power(_eval_poly(poly_from_key(b), table), float(e))
            total = total + t
        return total

    def __call__(self, *coords: Any) -> Any:
        return self.evaluate_array(coords)

    # -- printing -------------------------------------------------------
    def __str__(self) -> str:
        if not self._groups:
            return "0"
        parts = []
        for key in sorted(self._groups):
            env, atoms = key
            p = self._groups[key]
            factors = []
            if not env and not atoms:
                parts.append(poly_str(p))
                continue
            ps = poly_str(p)
            if ps != "1":
                factors.append(f"({ps})")
            if env:
                factors.append(f"exp({poly_str(poly_from_key(env))})")
            for b, e in atoms:
                exp_s = _fmt_frac(e)
                factors.append(f"({poly_str(poly_from_key(b))})^({exp_s})")
            parts.append("*".join(factors))
        return " + ".join(f"({s})" if len(parts) > 1 else s for s in parts)

    def __repr__(self) -> str:
        return f"ScalarExpr({str(self)!r})"


def _eval_poly_exact(p: Poly, pt: Sequence[Fraction]) -> Fraction:
    total = Fraction(0)
    for m, c in p.items():
        t = c
        for i, e in enumerate(m):
            if e:
                t *= pt[i] ** e
        total += t
    return total


# ---------------------------------------------------------------------------
# parsing


class ParseError(ExprError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


_FUNCS = {"exp": ScalarExpr.exp, "sqrt": ScalarExpr.sqrt}


def parse_expr(text: str, *, line: int | None = None, max_dim: int = NVARS) -> ScalarExpr:
    """Parse the coefficient grammar: ``x1..xn``, rationals, ``+ - * / ^``,
    parentheses, ``exp(...)`` and ``sqrt(...)``."""
    src = text.strip()
    if not src:
        raise ParseError("empty expression", line)
    try:
        tree = ast.parse(src.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ParseError(f"syntax error: {exc.msg}", line, exc.offset) from None
    try:
        return _walk(tree.body, max_dim)
    except ParseError as exc:
        if exc.line is None and line is not None:
            raise ParseError(str(exc), line) from None
        raise
    except (ExprError, ZeroDivisionError) as exc:
        raise ParseError(str(exc), line) from None


def _walk(node: ast.AST, max_dim: int) -> ScalarExpr:
    if isinstance(node, ast.Constant):
        if isinstance(node.value, bool) or not isinstance(node.value, (int, float)):
            raise ParseError(f"unsupported literal {node.value!r}")
        v = node.value
        return ScalarExpr.const(Fraction(repr(v)) if isinstance(v, float) else v)
    if isinstance(node, ast.Name):
        name = node.id
        if name.startswith("x") and name[1:].isdigit():
            i = int(name[1:])
            if not 1 <= i <= max_dim:
                raise ParseError(f"coordinate {name} outside x1..x{max_dim}")
            return ScalarExpr.coord(i)
        raise ParseError(f"unknown symbol {name!r}")
    if isinstance(node, ast.UnaryOp):
        operand = _walk(node.operand, max_dim)
        if isinstance(node.op, ast.USub):
            return -operand
        if isinstance(node.op, ast.UAdd):
            return operand
    if isinstance(node, ast.BinOp):
        left = _walk(node.left, max_dim)
        right = _walk(node.right, max_dim)
        if isinstance(node.op, ast.Add):
            return left + right
        if isinstance(node.op, ast.Sub):
            return left - right
        if isinstance(node.op, ast.Mult):
            return left * right
        if isinstance(node.op, ast.Div):
            if right.is_constant():
                return left / right.constant_value()
            return left / right
        if isinstance(node.op, ast.Pow):
            if not right.is_constant():
                raise ParseError("exponents must be rational constants")
            return left ** right.constant_value()
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
        if len(node.args) != 1 or node.keywords:
            raise ParseError(f"{node.func.id}() takes exactly one argument")
        return _FUNCS[node.func.id](_walk(node.args[0], max_dim))
    raise ParseError(f"unsupported syntax: {ast.dump(node)[:60]}")


def coords(n: int) -> list[ScalarExpr]:
    """Coordinate functions x^1..x^n."""
    return [ScalarExpr.coord(i) for i in range(1, n + 1)]


def radius_squared(n: int) -> ScalarExpr:
    return sum((x * x for x in coords(n)), ScalarExpr())


def gaussian(n: int, width: Any = 1) -> ScalarExpr:
    """exp(-r²/width²) in n variables."""
    w2 = _as_fraction(width) ** 2
    return (radius_squared(n) * (-1 / w2)).exp()

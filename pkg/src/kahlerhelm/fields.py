"""Differential forms with symbolic coefficients on Cartesian E_n.

In Cartesian coordinates the connection forms vanish, so the covariant
partial d_h is the plain coefficient derivative and

    d u = dx^h ∧ d_h u,     δ u = dx^h · d_h u,     ∂ u = dx^h d_h u = du + δu.
"""

from __future__ import annotations

import re
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .algebra import (
    DimensionError,
    Multivector,
    blade_indices,
    blade_mask,
    blade_sign,
    interior,
    popcount,
)
from .expr import ExprError, ParseError, ScalarExpr, parse_expr


class FormField(Multivector):
    """A multivector whose coefficients are :class:`ScalarExpr` functions."""

    __slots__ = ()

    @staticmethod
    def _coerce(c: Any) -> ScalarExpr:
        if isinstance(c, ScalarExpr):
            return c
        if isinstance(c, str):
            return parse_expr(c)
        return ScalarExpr.const(c)

    @classmethod
    def from_blades(cls, dim: int, terms: Mapping[Sequence[int] | int, Any]) -> "FormField":
        """Build from ``{(i1, i2, ...): coefficient}``; ``()`` is the scalar blade.

        Coefficients may be expressions, numbers or strings in the expression
        grammar.  Integer keys are taken as bitmasks.
        """
        out = cls(dim)
        for key, c in terms.items():
            if isinstance(key, int):
                out = out + cls(dim, {key: c})
            else:
                out = out + cls.basis(dim, *key, coeff=cls._coerce(c))
        return out

    @classmethod
    def basis(cls, dim: int, *indices: int, coeff: Any = 1) -> "FormField":
        sign, mask = blade_mask(indices)
        c = cls._coerce(coeff)
        return cls(dim, {mask: c if sign > 0 else -c})

    def eval(self, point: Sequence[Any]) -> Multivector:
        """Coefficient-wise evaluation at one point."""
        if len(point) != self.dim:
            raise DimensionError(f"point has {len(point)} coordinates, field lives in E_{self.dim}")
        return Multivector(self.dim, {m: c.evaluate(point) for m, c in self._terms.items()})

    def sample(self, coords: Sequence[np.ndarray]) -> dict[int, np.ndarray]:
        """Vectorised evaluation: blade mask -> array of coefficient values."""
        if len(coords) != self.dim:
            raise DimensionError(f"expected {self.dim} coordinate arrays, got {len(coords)}")
        shape = np.broadcast(*coords).shape
        return {m: np.broadcast_to(c.evaluate_array(coords), shape).astype(float) for m, c in self._terms.items()}

    def coefficient(self, *indices: int) -> ScalarExpr:
        sign, mask = blade_mask(indices)
        c = self._terms.get(mask, ScalarExpr())
        return c if sign > 0 else -c

    def decays(self) -> bool:
        return all(c.decays(self.dim) for c in self._terms.values())


def as_field(dim: int, value: Any) -> FormField:
    if isinstance(value, FormField):
        return value
    if isinstance(value, Multivector):
        return FormField(value.dim, value.terms)
    return FormField.scalar(dim, value)


def dx(dim: int, *indices: int) -> FormField:
    """The constant blade dx^{i1 i2 ...} as a field."""
    return FormField.basis(dim, *indices)


def volume(dim: int) -> FormField:
    return FormField.volume(dim)


def scalar_field(dim: int, f: Any) -> FormField:
    return FormField.scalar(dim, f)


def is_constant_differential(f: Multivector) -> bool:
    """True iff every coefficient is constant (d_h f = 0 for all h)."""
    if not isinstance(f, FormField):
        return True
    return all(c.is_constant() for _, c in f)


# ---------------------------------------------------------------------------
# differential operators


def partial_d(f: FormField, h: int) -> FormField:
    """d_h f: coefficient-wise ∂/∂x^h (1-based axis)."""
    if not 1 <= h <= f.dim:
        raise DimensionError(f"axis {h} outside 1..{f.dim}")
    return FormField(f.dim, {m: c.diff(h) for m, c in f})


def ext_d(f: FormField) -> FormField:
    """Exterior differential d f = dx^h ∧ d_h f."""
    f = as_field(f.dim, f)
    out: dict[int, ScalarExpr] = {}
    for m, c in f:
        for h in range(f.dim):
            bit = 1 << h
            if m & bit:
                continue
            dc = c.diff(h + 1)
            if dc.is_zero():
                continue
            t = dc if blade_sign(bit, m) > 0 else -dc
            k = m | bit
            out[k] = out[k] + t if k in out else t
    return FormField(f.dim, out)


def codiff(f: FormField) -> FormField:
    """Interior differential (co-differential) δ f = dx^h · d_h f."""
    f = as_field(f.dim, f)
    out: dict[int, ScalarExpr] = {}
    for m, c in f:
        for h in range(f.dim):
            bit = 1 << h
            if not m & bit:
                continue
            dc = c.diff(h + 1)
            if dc.is_zero():
                continue
            t = dc if blade_sign(bit, m) > 0 else -dc
            k = m ^ bit
            out[k] = out[k] + t if k in out else t
    return FormField(f.dim, out)


def kahler_d(f: FormField) -> FormField:
    """Kähler differential ∂ f = dx^h d_h f = d f + δ f."""
    return ext_d(f) + codiff(f)


def laplacian(f: FormField) -> FormField:
    """∂∂ f.  Equals dδ f + δd f, and +Σ_i ∂²f/∂x_i² on every coefficient."""
    return kahler_d(kahler_d(f))


def e_h(f: Multivector, h: int) -> Multivector:
    """e^h f := dx^h · f (interior product with a coordinate 1-form)."""
    return interior(type(f).basis(f.dim, h), f)


# ---------------------------------------------------------------------------
# classical vector calculus correspondence (E_3)


def from_vector_field(v: Sequence[Any]) -> FormField:
    """(v1, v2, v3) -> v1 dx^1 + v2 dx^2 + v3 dx^3."""
    if len(v) != 3:
        raise DimensionError("vector fields are 3-component (E_3 only)")
    return FormField(3, {1 << i: ScalarExpr.lift(c) if not isinstance(c, str) else parse_expr(c) for i, c in enumerate(v)})


def to_vector_field(f: FormField) -> list[ScalarExpr]:
    if f.dim != 3:
        raise DimensionError("vector correspondence is defined in E_3 only")
    if not f.is_homogeneous(1):
        raise ValueError(f"expected a homogeneous 1-form, got grades {sorted(f.grades())}")
    return [ScalarExpr.lift(f[1 << i]) for i in range(3)]


def grad(f: ScalarExpr) -> list[ScalarExpr]:
    return [f.diff(i) for i in (1, 2, 3)]


def div(v: Sequence[ScalarExpr]) -> ScalarExpr:
    return v[0].diff(1) + v[1].diff(2) + v[2].diff(3)


def curl(v: Sequence[ScalarExpr]) -> list[ScalarExpr]:
    return [
        v[2].diff(2) - v[1].diff(3),
        v[0].diff(3) - v[2].diff(1),
        v[1].diff(1) - v[0].diff(2),
    ]


def vector_laplacian(v: Sequence[ScalarExpr]) -> list[ScalarExpr]:
    """grad div v - curl curl v."""
    g = grad(div(v))
    cc = curl(curl(v))
    return [g[i] - cc[i] for i in range(3)]


# ---------------------------------------------------------------------------
# field definition files
#
#   # comment
#   dim 3
#   1 : x1*exp(-x1^2 - x2^2 - x3^2)
#   2,3 : -1/2*x2
#   0 : 1                      (scalar blade)

_DIM_RE = re.compile(r"^dim\s*[=:]?\s*(\d+)$")


def parse_field(text: str, dim: int | None = None) -> FormField:
    """Parse the line-oriented field format; errors carry 1-based line numbers."""
    declared = None
    entries: list[tuple[int, tuple[int, ...], str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _DIM_RE.match(line)
        if m:
            declared = int(m.group(1))
            continue
        if ":" not in line:
            raise ParseError("expected 'indices : expression'", lineno)
        idx_s, expr_s = line.split(":", 1)
        idx_s = idx_s.strip()
        try:
            if idx_s in ("", "0"):
                idx: tuple[int, ...] = ()
            else:
                idx = tuple(int(t) for t in idx_s.replace(" ", ",").split(",") if t)
        except ValueError:
            raise ParseError(f"bad blade indices {idx_s!r}", lineno) from None
        if any(i < 1 for i in idx):
            raise ParseError(f"blade indices are 1-based, got {idx_s!r}", lineno)
        if len(set(idx)) != len(idx):
            raise ParseError(f"repeated index in blade {idx_s!r}", lineno)
        entries.append((lineno, idx, expr_s))

    if dim is not None and declared is not None and dim != declared:
        raise ParseError(f"file declares dim {declared} but {dim} was requested")
    n = dim or declared
    if n is None:
        n = 1
        for lineno, idx, expr_s in entries:
            n = max(n, max(idx, default=0), parse_expr(expr_s, line=lineno).nvars())

    out = FormField(n)
    for lineno, idx, expr_s in entries:
        if max(idx, default=0) > n:
            raise ParseError(f"blade index exceeds dimension {n}", lineno)
        c = parse_expr(expr_s, line=lineno, max_dim=n)
        out = out + FormField.basis(n, *idx, coeff=c)
    return out


def format_field(f: FormField) -> str:
    lines = [f"dim {f.dim}"]
    for m, c in sorted(f, key=lambda mc: (popcount(mc[0]), blade_indices(mc[0]))):
        idx = ",".join(str(i) for i in blade_indices(m)) or "0"
        lines.append(f"{idx} : {c}")
    return "\n".join(lines) + "\n"


def load_field(path: str | Path, dim: int | None = None) -> FormField:
    return parse_field(Path(path).read_text(encoding="utf-8"), dim)


__all__ = [
    "FormField",
    "ExprError",
    "ParseError",
    "as_field",
    "codiff",
    "curl",
    "div",
    "dx",
    "e_h",
    "ext_d",
    "format_field",
    "from_vector_field",
    "grad",
    "is_constant_differential",
    "kahler_d",
    "laplacian",
    "load_field",
    "parse_field",
    "partial_d",
    "scalar_field",
    "to_vector_field",
    "vector_laplacian",
    "volume",
]

"""Kähler (Clifford) algebra of constant-coefficient differential forms.

Basis blades dx^{i1...ir} are stored as integer bitmasks: bit ``i - 1`` is set
when dx^i is present.  The metric is Euclidean, so every generator squares to
+1 and distinct generators anticommute.

Coefficients are generic: anything supporting ``+``, ``-``, ``*`` and a zero
test works (ints, :class:`fractions.Fraction`, floats, and the symbolic
:class:`kahlerhelm.expr.ScalarExpr`).
"""

from __future__ import annotations

from fractions import Fraction
from math import comb
from typing import Any, Callable, Iterable, Iterator, Mapping

MAX_DIM = 12


class DimensionError(ValueError):
    """Operands live in spaces of different dimension (or an invalid one)."""


# ---------------------------------------------------------------------------
# blade helpers


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def blade_sign(a: int, b: int) -> int:
    """Sign picked up when reordering the product of blades ``a`` and ``b``.

    ``e_a e_b = blade_sign(a, b) * e_{a ^ b}`` for the Euclidean metric.
    """
    a >>= 1
    swaps = 0
    while a:
        swaps += popcount(a & b)
        a >>= 1
    return -1 if swaps & 1 else 1


def blade_mask(indices: Iterable[int]) -> tuple[int, int]:
    """Return ``(sign, mask)`` for the product dx^{i1} dx^{i2} ... (1-based).

    Repeated indices contract to +1, so ``(1, 1)`` gives ``(1, 0)``.
    """
    sign, mask = 1, 0
    for i in indices:
        if i < 1:
            raise ValueError(f"blade indices are 1-based, got {i}")
        bit = 1 << (i - 1)
        sign *= blade_sign(mask, bit)
        mask ^= bit
    return sign, mask


def blade_indices(mask: int) -> tuple[int, ...]:
    out = []
    i = 1
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def blade_name(mask: int) -> str:
    if mask == 0:
        return "1"
    return "dx" + "".join(str(i) if i < 10 else f"({i})" for i in blade_indices(mask))


def top_mask(dim: int) -> int:
    return (1 << dim) - 1


def complement(mask: int, dim: int) -> tuple[int, int]:
    """Complementary blade and orientation sign.

    Returns ``(sign, cmask)`` such that ``e_mask ∧ (sign * e_cmask) = w``.
    ``sign * e_cmask`` is therefore the complement written with its indices in
    an order making (mask, complement) an even permutation of (1..n).
    """
    cmask = top_mask(dim) ^ mask
    return blade_sign(mask, cmask), cmask


def _is_zero(c: Any) -> bool:
    is_zero = getattr(c, "is_zero", None)
    if is_zero is not None:
        return bool(is_zero())
    try:
        return bool(c == 0)
    except ValueError:  # numpy arrays
        return False


def _check_dim(dim: int) -> None:
    if not isinstance(dim, int) or not 0 <= dim <= MAX_DIM:
        raise DimensionError(f"dimension must be an integer in [0, {MAX_DIM}], got {dim!r}")


# ---------------------------------------------------------------------------
# Multivector


class Multivector:
    """Immutable element of the Kähler algebra of E_n.

    ``terms`` maps blade masks to coefficients; zero coefficients are dropped.
    """

    __slots__ = ("dim", "_terms")

    def __init__(self, dim: int, terms: Mapping[int, Any] | None = None):
        _check_dim(dim)
        self.dim = dim
        top = top_mask(dim)
        clean: dict[int, Any] = {}
        for mask, c in (terms or {}).items():
            if mask & ~top:
                raise DimensionError(f"blade {blade_name(mask)} does not fit in dimension {dim}")
            if not _is_zero(c):
                clean[mask] = self._coerce(c)
        self._terms = clean

    # subclasses override to normalise coefficient types
    @staticmethod
    def _coerce(c: Any) -> Any:
        if isinstance(c, int) and not isinstance(c, bool):
            return Fraction(c)
        return c

    @classmethod
    def _new(cls, dim: int, terms: dict[int, Any]) -> "Multivector":
        return cls(dim, terms)

    # -- constructors -----------------------------------------------------
    @classmethod
    def scalar(cls, dim: int, value: Any = 1) -> "Multivector":
        return cls(dim, {0: value})

    @classmethod
    def basis(cls, dim: int, *indices: int, coeff: Any = 1) -> "Multivector":
        """The blade dx^{i1} dx^{i2} ... (indices need not be sorted)."""
        sign, mask = blade_mask(indices)
        return cls(dim, {mask: coeff if sign > 0 else -coeff})

    @classmethod
    def volume(cls, dim: int) -> "Multivector":
        """The unit top-grade form w = dx^1 ... dx^n."""
        return cls(dim, {top_mask(dim): 1})

    # -- mapping-ish access -------------------------------------------------
    @property
    def terms(self) -> dict[int, Any]:
        return dict(self._terms)

    def __iter__(self) -> Iterator[tuple[int, Any]]:
        return iter(sorted(self._terms.items()))

    def __getitem__(self, mask: int) -> Any:
        return self._terms.get(mask, 0)

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def grades(self) -> set[int]:
        return {popcount(m) for m in self._terms}

    def is_homogeneous(self, r: int | None = None) -> bool:
        g = self.grades()
        if r is None:
            return len(g) <= 1
        return g <= {r}

    def map_coefficients(self, fn: Callable[[Any], Any]) -> "Multivector":
        return self._new(self.dim, {m: fn(c) for m, c in self._terms.items()})

    # -- arithmetic -------------------------------------------------------
    def _other(self, other: Any) -> "Multivector":
        if isinstance(other, Multivector):
            if other.dim != self.dim:
                raise DimensionError(f"dimension mismatch: {self.dim} vs {other.dim}")
            return other
        return type(self).scalar(self.dim, other)

    def _result_cls(self, other: "Multivector") -> type:
        return type(other) if issubclass(type(other), type(self)) else type(self)

    def __add__(self, other: Any) -> "Multivector":
        if not isinstance(other, Multivector) and _is_zero(other):
            return self
        o = self._other(other)
        out = dict(self._terms)
        for m, c in o._terms.items():
            out[m] = out[m] + c if m in out else c
        return self._result_cls(o)._new(self.dim, out)

    __radd__ = __add__

    def __neg__(self) -> "Multivector":
        return self._new(self.dim, {m: -c for m, c in self._terms.items()})

    def __sub__(self, other: Any) -> "Multivector":
        return self + (-self._other(other))

    def __rsub__(self, other: Any) -> "Multivector":
        return self._other(other) - self

    def __mul__(self, other: Any) -> "Multivector":
        if isinstance(other, Multivector):
            return clifford_mul(self, other)
        return self._new(self.dim, {m: c * other for m, c in self._terms.items()})

    def __rmul__(self, other: Any) -> "Multivector":
        if isinstance(other, Multivector):
            return clifford_mul(other, self)
        return self._new(self.dim, {m: other * c for m, c in self._terms.items()})

    def __truediv__(self, other: Any) -> "Multivector":
        if isinstance(other, int):
            other = Fraction(other)
        return self._new(self.dim, {m: c / other for m, c in self._terms.items()})

    def __xor__(self, other: "Multivector") -> "Multivector":
        return wedge(self, other)

    def __or__(self, other: "Multivector") -> "Multivector":
        return interior(self, other)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Multivector):
            if isinstance(other, (int, float, Fraction)):
                other = self.scalar(self.dim, other)
            else:
                return NotImplemented
        if other.dim != self.dim:
            return False
        return (self - other).is_zero()

    __hash__ = None  # type: ignore[assignment]

    def grade(self, r: int) -> "Multivector":
        return grade_project(self, r)

    def involute(self) -> "Multivector":
        return grade_involution(self)

    def dual(self) -> "Multivector":
        return hodge_dual(self)

    def __repr__(self) -> str:
        if not self._terms:
            return f"{type(self).__name__}(dim={self.dim}, 0)"
        body = " + ".join(f"({c})*{blade_name(m)}" for m, c in self)
        return f"{type(self).__name__}(dim={self.dim}, {body})"


# ---------------------------------------------------------------------------
# products


def _bilinear(a: Multivector, b: Multivector, keep: Callable[[int, int], bool]) -> Multivector:
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    out: dict[int, Any] = {}
    for ma, ca in a._terms.items():
        for mb, cb in b._terms.items():
            if not keep(ma, mb):
                continue
            m = ma ^ mb
            term = ca * cb if blade_sign(ma, mb) > 0 else -(ca * cb)
            out[m] = out[m] + term if m in out else term
    return a._result_cls(b)._new(a.dim, out)


def clifford_mul(a: Multivector, b: Multivector) -> Multivector:
    """Clifford product with dx^i dx^j + dx^j dx^i = 2 δ^{ij}."""
    return _bilinear(a, b, lambda ma, mb: True)


def wedge(a: Multivector, b: Multivector) -> Multivector:
    """Exterior product: the grade-(r+s) part of each blade product."""
    return _bilinear(a, b, lambda ma, mb: not (ma & mb))


def interior(a: Multivector, b: Multivector) -> Multivector:
    """Interior product (left contraction).

    For blades of grades r <= s this is the grade-(s - r) part of the blade
    product, and zero when r > s.  For a 1-form ``a`` it reduces to
    ½(a b - η(b) a), the grade-lowering half of the product; the other half
    ½(a b + η(b) a) is the wedge.
    """
    return _bilinear(a, b, lambda ma, mb: (ma & mb) == ma)


def hodge_dual(g: Multivector) -> Multivector:
    """Right multiplication by the unit volume form w."""
    return clifford_mul(g, type(g).volume(g.dim))


def grade_project(a: Multivector, r: int) -> Multivector:
    return a._new(a.dim, {m: c for m, c in a._terms.items() if popcount(m) == r})


def grade_involution(a: Multivector) -> Multivector:
    """η: multiply each grade-r part by (-1)^r."""
    return a._new(a.dim, {m: (-c if popcount(m) & 1 else c) for m, c in a._terms.items()})


def reversion(a: Multivector) -> Multivector:
    return a._new(
        a.dim,
        {m: (-c if (popcount(m) * (popcount(m) - 1) // 2) & 1 else c) for m, c in a._terms.items()},
    )


def volume_square_sign(dim: int) -> int:
    """w² = (-1)^{C(n,2)} in Euclidean n-space."""
    return -1 if comb(dim, 2) & 1 else 1


def basis_1forms(dim: int, cls: type = Multivector) -> list[Multivector]:
    return [cls.basis(dim, i) for i in range(1, dim + 1)]


def all_blades(dim: int) -> list[int]:
    return sorted(range(1 << dim), key=lambda m: (popcount(m), blade_indices(m)))

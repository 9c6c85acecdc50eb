"""Named test fields, so runs and tests need no external files."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .expr import coords, gaussian
from .fields import FormField, codiff, ext_d


@dataclass(frozen=True)
class Builtin:
    name: str
    grade: int
    min_dim: int
    description: str
    build: Callable[[int], FormField]

    def __call__(self, dim: int = 3) -> FormField:
        if dim < self.min_dim:
            raise ValueError(f"builtin {self.name!r} needs dim >= {self.min_dim}, got {dim}")
        return self.build(dim)


def _gauss_1form(n: int) -> FormField:
    x = coords(n)
    g = gaussian(n, 2)
    terms = {(1,): g, (2,): 2 * g}
    if n >= 3:
        terms[(n,)] = x[0] * g
    return FormField.from_blades(n, terms)


def _gauss_2form(n: int) -> FormField:
    x = coords(n)
    g = gaussian(n, 2)
    terms = {(1, 2): 2 * g}
    if n >= 3:
        terms[(2, 3)] = g
        terms[(1, 3)] = -x[1] * g
    return FormField.from_blades(n, terms)


def _exact_df(n: int) -> FormField:
    return ext_d(FormField.scalar(n, gaussian(n, 1)))


def _coexact_dw(n: int) -> FormField:
    return codiff(FormField.basis(n, 1, 2, coeff=gaussian(n, 1)))


def _harmonic_patch(n: int) -> FormField:
    # d(x1 x2): closed, co-closed, and not decaying
    x = coords(n)
    return ext_d(FormField.scalar(n, x[0] * x[1]))


BUILTINS: dict[str, Builtin] = {
    b.name: b
    for b in (
        Builtin("gauss-1form", 1, 2, "exp(-r^2/4) (dx1 + 2 dx2 + x1 dxn): both parts non-zero", _gauss_1form),
        Builtin("gauss-2form", 2, 2, "exp(-r^2/4) (2 dx12 + dx23 - x2 dx13)", _gauss_2form),
        Builtin("exact-df", 1, 2, "d exp(-r^2): purely exact", _exact_df),
        Builtin("coexact-dw", 1, 2, "delta(exp(-r^2) dx12): purely co-exact", _coexact_dw),
        Builtin("harmonic-patch", 1, 2, "d(x1 x2): harmonic, does not decay (flagged)", _harmonic_patch),
    )
}


def get_builtin(name: str, dim: int = 3) -> FormField:
    try:
        b = BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown builtin {name!r}; choose from {', '.join(sorted(BUILTINS))}") from None
    return b(dim)


def describe_builtins() -> str:
    return "\n".join(f"  {b.name:<15} grade {b.grade}  {b.description}" for b in BUILTINS.values())

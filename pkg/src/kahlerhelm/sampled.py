"""Forms whose coefficients are arrays of node values on a grid."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterator

import numpy as np

from .algebra import Multivector, blade_indices, blade_name, blade_sign, popcount
from .green import GridSpec


@dataclass
class SampledForm:
    grid: GridSpec
    terms: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean = {}
        for m, v in self.terms.items():
            if m >> self.grid.dim:
                raise ValueError(f"blade {blade_name(m)} does not fit in dimension {self.grid.dim}")
            clean[m] = np.asarray(v, dtype=float).reshape(self.grid.shape)
        self.terms = clean

    @property
    def dim(self) -> int:
        return self.grid.dim

    @classmethod
    def from_field(cls, f: Any, grid: GridSpec) -> "SampledForm":
        if f.dim != grid.dim:
            raise ValueError(f"field lives in E_{f.dim}, grid in E_{grid.dim}")
        return cls(grid, f.sample(grid.mesh()))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "SampledForm":
        return cls(grid, {})

    def __iter__(self) -> Iterator[tuple[int, np.ndarray]]:
        return iter(sorted(self.terms.items()))

    def __getitem__(self, mask: int) -> np.ndarray:
        v = self.terms.get(mask)
        return np.zeros(self.grid.shape) if v is None else v

    def blades(self) -> set[int]:
        return set(self.terms)

    def _combine(self, other: "SampledForm", sign: float) -> "SampledForm":
        if other.grid != self.grid:
            raise ValueError("sampled forms live on different grids")
        out = {m: v.copy() for m, v in self.terms.items()}
        for m, v in other.terms.items():
            out[m] = out[m] + sign * v if m in out else sign * v
        return SampledForm(self.grid, out)

    def __add__(self, other: "SampledForm") -> "SampledForm":
        return self._combine(other, 1.0)

    def __sub__(self, other: "SampledForm") -> "SampledForm":
        return self._combine(other, -1.0)

    def __neg__(self) -> "SampledForm":
        return SampledForm(self.grid, {m: -v for m, v in self.terms.items()})

    def __mul__(self, c: float) -> "SampledForm":
        return SampledForm(self.grid, {m: c * v for m, v in self.terms.items()})

    __rmul__ = __mul__

    def left_mul(self, c: Multivector) -> "SampledForm":
        """Clifford product ``c * self`` with a constant multivector."""
        return self._const_product(c, left=True)

    def right_mul(self, c: Multivector) -> "SampledForm":
        return self._const_product(c, left=False)

    def _const_product(self, c: Multivector, left: bool) -> "SampledForm":
        if c.dim != self.dim:
            raise ValueError("dimension mismatch")
        out: dict[int, np.ndarray] = {}
        for mc, cc in c:
            cf = float(cc)
            for m, v in self.terms.items():
                s = blade_sign(mc, m) if left else blade_sign(m, mc)
                k = mc ^ m
                t = (s * cf) * v
                out[k] = out[k] + t if k in out else t
        return SampledForm(self.grid, out)

    def grade(self, r: int) -> "SampledForm":
        return SampledForm(self.grid, {m: v for m, v in self.terms.items() if popcount(m) == r})

    def grades(self) -> set[int]:
        return {popcount(m) for m in self.terms}

    # -- norms --------------------------------------------------------------
    def sq_sum(self) -> np.ndarray:
        total = np.zeros(self.grid.shape)
        for v in self.terms.values():
            total = total + v * v
        return total

    def l2(self, region: tuple[slice, ...] | None = None) -> float:
        s = self.sq_sum()
        if region is not None:
            s = s[region]
        return float(np.sqrt(np.sum(s) * self.grid.cell_volume))

    def linf(self, region: tuple[slice, ...] | None = None) -> float:
        s = self.sq_sum()
        if region is not None:
            s = s[region]
        return float(np.sqrt(np.max(s))) if s.size else 0.0

    def max_abs_difference(self, other: "SampledForm") -> float:
        return (self - other).linf()

    def restrict(self, region: tuple[slice, ...], grid: GridSpec) -> "SampledForm":
        return SampledForm(grid, {m: v[region] for m, v in self.terms.items()})

    def boundary_ratio(self) -> float:
        """max |value| on the outermost node layer over the global max."""
        s = np.sqrt(self.sq_sum())
        peak = float(s.max()) if s.size else 0.0
        if peak == 0.0:
            return 0.0
        edge = 0.0
        for ax in range(self.dim):
            for idx in (0, -1):
                edge = max(edge, float(np.take(s, idx, axis=ax).max()))
        return edge / peak

    # -- finite differences ---------------------------------------------
    def _partials(self) -> dict[int, list[np.ndarray]]:
        h = self.grid.spacing
        out = {}
        for m, v in self.terms.items():
            g = np.gradient(v, *h, edge_order=2)
            out[m] = list(g) if self.dim > 1 else [g]
        return out

    def fd_ext_d(self) -> "SampledForm":
        """d by second-order central differences."""
        return assemble_d(self._partials(), self.grid)

    def fd_codiff(self) -> "SampledForm":
        return assemble_delta(self._partials(), self.grid)

    def to_multivector_at(self, index: tuple[int, ...]) -> Multivector:
        return Multivector(self.dim, {m: float(v[index]) for m, v in self.terms.items()})

    def component_names(self) -> dict[int, str]:
        return {m: "".join(str(i) for i in blade_indices(m)) or "0" for m in self.terms}


def assemble_d(grads: dict[int, list[np.ndarray]], grid: GridSpec) -> SampledForm:
    """d(Σ_A P_A dx^A) = Σ_A Σ_h ∂_h P_A dx^h ∧ dx^A from node gradients."""
    out: dict[int, np.ndarray] = {}
    for m, g in grads.items():
        for h in range(grid.dim):
            bit = 1 << h
            if m & bit:
                continue
            k = m | bit
            t = g[h] if blade_sign(bit, m) > 0 else -g[h]
            out[k] = out[k] + t if k in out else t
    return SampledForm(grid, out)


def assemble_delta(grads: dict[int, list[np.ndarray]], grid: GridSpec) -> SampledForm:
    """δ(Σ_A P_A dx^A) = Σ_A Σ_h ∂_h P_A dx^h · dx^A from node gradients."""
    out: dict[int, np.ndarray] = {}
    for m, g in grads.items():
        for h in range(grid.dim):
            bit = 1 << h
            if not m & bit:
                continue
            k = m ^ bit
            t = g[h] if blade_sign(bit, m) > 0 else -g[h]
            out[k] = out[k] + t if k in out else t
    return SampledForm(grid, out)

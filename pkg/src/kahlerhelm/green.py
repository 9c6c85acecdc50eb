"""Free-space Green's-function volume integrals on boxes.

The potential of a source ``s`` is

    P(x) = ∫_box s(x') K(|x - x'|) dV'

with ``K(r) = r^-λ`` (or ``-log r`` in two dimensions).  Grids are
cell-centred: node ``i`` sits at ``lo + (i + ½) h`` and carries the cell
volume ``h_1 ... h_n`` (midpoint rule).  The singular self-node term is
replaced by the exact integral of the kernel over the node's cell.

Two evaluation paths produce the same discrete sum: a direct O(N·M) loop
(numba) valid for arbitrary evaluation points, and a zero-padded FFT
convolution restricted to the grid nodes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Sequence

import numba
import numpy as np
import scipy.fft
from numba import prange

# the system TBB is too old for numba; try OpenMP first instead of warning
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

from .expr import ScalarExpr

_SELF_TOL = 1e-9


# ---------------------------------------------------------------------------
# grids and kernels


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box split into ``res[d]`` equal cells per axis."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    res: tuple[int, ...]

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        res = tuple(int(v) for v in self.res)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "res", res)
        if not (len(lo) == len(hi) == len(res)) or not lo:
            raise ValueError("lo, hi and res must have the same non-zero length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ValueError(f"box must satisfy lo < hi componentwise, got {lo} / {hi}")
        if any(r < 2 for r in res):
            raise ValueError(f"need at least 2 nodes per axis, got {res}")
        if not all(math.isfinite(v) for v in lo + hi):
            raise ValueError("box corners must be finite")

    @classmethod
    def cube(cls, half_width: float, res: int, dim: int = 3) -> "GridSpec":
        return cls((-half_width,) * dim, (half_width,) * dim, (res,) * dim)

    @classmethod
    def box(cls, lo: float, hi: float, res: int, dim: int = 3) -> "GridSpec":
        return cls((lo,) * dim, (hi,) * dim, (res,) * dim)

    @property
    def dim(self) -> int:
        return len(self.res)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.res

    @property
    def size(self) -> int:
        return int(np.prod(self.res))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((b - a) / r for a, b, r in zip(self.lo, self.hi, self.res))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [a + (np.arange(r) + 0.5) * h for a, r, h in zip(self.lo, self.res, self.spacing)]

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """Node coordinates, shape (size, dim), C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def grown(self, pad_cells: int) -> "GridSpec":
        """Same spacing, box enlarged by ``pad_cells`` on every side."""
        h = self.spacing
        return GridSpec(
            tuple(a - pad_cells * s for a, s in zip(self.lo, h)),
            tuple(b + pad_cells * s for b, s in zip(self.hi, h)),
            tuple(r + 2 * pad_cells for r in self.res),
        )

    def to_dict(self) -> dict[str, Any]:
        return {"lo": list(self.lo), "hi": list(self.hi), "res": list(self.res)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GridSpec":
        return cls(tuple(d["lo"]), tuple(d["hi"]), tuple(d["res"]))


def sphere_area(dim: int) -> float:
    """Surface area of the unit sphere S^{dim-1}."""
    return 2 * math.pi ** (dim / 2) / math.gamma(dim / 2)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel ``1/r^lam`` (``kind='power'``) or ``log(1/r)`` (``kind='log'``).

    ``mu`` is the assembly constant multiplying the decomposition terms; the
    potential integrals themselves are returned without it.
    """

    dim: int
    lam: float = 1.0
    mu: float = -1.0 / (4.0 * math.pi)
    kind: str = "power"

    def __post_init__(self) -> None:
        if self.kind not in ("power", "log"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "power" and not 0 < self.lam < self.dim:
            raise ValueError(f"power kernel needs 0 < lam < dim for integrability, got lam={self.lam}")
        if self.dim < 1:
            raise ValueError("dimension must be positive")

    @classmethod
    def newtonian(cls, dim: int) -> "KernelSpec":
        """Free-space Green's kernel with ∂∂(μ K) = δ_Dirac."""
        if dim == 2:
            return cls(2, 0.0, -1.0 / (2 * math.pi), "log")
        if dim < 2:
            raise ValueError("Green's kernels need dim >= 2")
        return cls(dim, float(dim - 2), -1.0 / ((dim - 2) * sphere_area(dim)), "power")

    @property
    def kind_code(self) -> int:
        return 0 if self.kind == "power" else 1

    def value(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "log":
            return -np.log(r)
        return r ** (-self.lam)

    def dvalue_over_r(self, r: np.ndarray) -> np.ndarray:
        """K'(r)/r, so that ∇_x K(|x - x'|) = K'(r)/r * (x - x')."""
        r = np.asarray(r, dtype=float)
        if self.kind == "log":
            return -1.0 / (r * r)
        return -self.lam * r ** (-self.lam - 2)

    def to_dict(self) -> dict[str, Any]:
        return {"dim": self.dim, "lam": self.lam, "mu": self.mu, "kind": self.kind}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "KernelSpec":
        return cls(int(d["dim"]), float(d["lam"]), float(d["mu"]), str(d.get("kind", "power")))


# ---------------------------------------------------------------------------
# self-cell integrals


def _face_rule(k: int) -> int:
    return {0: 1, 1: 64, 2: 64, 3: 32, 4: 16}.get(k, 8)


@lru_cache(maxsize=64)
def self_cell_integrals(kernel: KernelSpec, spacing: tuple[float, ...]) -> tuple[float, tuple[float, ...]]:
    """Integrals of the kernel over the cell centred on the singular node.

    Returns ``(V, G)`` with ``V = ∫_cell K(|u|) du`` and
    ``G[l] = ∫_cell u_l² (-K'(r)/r) du``; the latter is the first-order
    correction for the gradient kernel (the zeroth order vanishes by parity).

    The cell is split into 2n pyramids with apex at the centre; the radial
    integral is done in closed form and the face integral by tensor
    Gauss-Legendre quadrature.
    """
    n = len(spacing)
    half = np.asarray(spacing, dtype=float) / 2
    value = 0.0
    grad = np.zeros(n)
    for d in range(n):
        others = [k for k in range(n) if k != d]
        q = _face_rule(len(others))
        x, wts = np.polynomial.legendre.leggauss(q)
        if others:
            grids = np.meshgrid(*[x * half[k] for k in others], indexing="ij")
            wgrid = np.ones_like(grids[0])
            for ax, k in enumerate(others):
                shape = [1] * len(others)
                shape[ax] = q
                wgrid = wgrid * (wts * half[k]).reshape(shape)
            comps = {k: g for k, g in zip(others, grids)}
        else:
            wgrid = np.ones(())
            comps = {}
        comps[d] = np.full_like(wgrid, half[d], dtype=float)
        r2 = sum(comps[k] ** 2 for k in range(n))
        r = np.sqrt(r2)
        if kernel.kind == "log":
            value += 2 * half[d] * float(np.sum(wgrid * (1.0 / n**2 - np.log(r) / n)))
            for l in range(n):
                grad[l] += 2 * half[d] / n * float(np.sum(wgrid * comps[l] ** 2 / r2))
        else:
            lam = kernel.lam
            value += 2 * half[d] / (n - lam) * float(np.sum(wgrid * r ** (-lam)))
            for l in range(n):
                grad[l] += 2 * half[d] / (n - lam) * lam * float(np.sum(wgrid * comps[l] ** 2 * r ** (-lam - 2)))
    return value, tuple(float(g) for g in grad)


def _split_gauss(lo: float, hi: float, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on [lo, hi], split at 0 when 0 is interior."""
    x, w = np.polynomial.legendre.leggauss(q)
    cuts = [lo, 0.0, hi] if lo < 0.0 < hi else [lo, hi]
    xs, ws = [], []
    for a, b in zip(cuts, cuts[1:]):
        xs.append((b - a) / 2 * x + (a + b) / 2)
        ws.append((b - a) / 2 * w)
    return np.concatenate(xs), np.concatenate(ws)


def _radial_antiderivative(kernel: KernelSpec, r: np.ndarray) -> np.ndarray:
    """Φ(r) with ∇Φ = u K(|u|), i.e. Φ' = r K(r)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        if kernel.kind == "log":
            return np.where(r > 0, -0.5 * r * r * np.log(np.where(r > 0, r, 1.0)) + 0.25 * r * r, 0.0)
        if kernel.lam == 2.0:
            return np.log(np.where(r > 0, r, np.nan))
        return r ** (2.0 - kernel.lam) / (2.0 - kernel.lam)


def cell_integrals_at(
    kernel: KernelSpec, spacing: tuple[float, ...], offset: Sequence[float], q: int = 24
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Kernel integrals over one cell seen from a point inside it.

    ``offset`` is the point minus the cell centre.  Returns ``(V, M, F0, F1)``:
    ``V = ∫_cell K(|p - x'|) dx'``, ``M[m] = ∫_cell (x' - c)_m K dx'``,
    ``F0[l] = ∮ K n_l dS`` and ``F1[l, m] = ∮ (x' - c)_m K n_l dS``.

    With the source linearised about the centre the cell contributes
    ``s V + ∂s·M`` to the potential and ``-(s F0[l] + Σ_m ∂_m s F1[l, m]) +
    ∂_l s V`` to its ∂_l (divergence theorem), which is the exact derivative
    of the former.  Faces are split at the foot of the point so the
    quadrature sees the near-singular peak only at sub-rectangle corners.
    """
    n = len(spacing)
    half = np.asarray(spacing, dtype=float) / 2
    o = np.asarray(offset, dtype=float)
    V = 0.0
    Phi = np.zeros(n)
    F0 = np.zeros(n)
    F1 = np.zeros((n, n))
    for d in range(n):
        others = [k for k in range(n) if k != d]
        rules = [_split_gauss(-half[k] - o[k], half[k] - o[k], q) for k in others]
        if rules:
            grids = np.meshgrid(*[r[0] for r in rules], indexing="ij")
            wts = np.ones_like(grids[0])
            for ax, (_, w) in enumerate(rules):
                shape = [1] * len(rules)
                shape[ax] = len(w)
                wts = wts * w.reshape(shape)
        else:
            grids, wts = [], np.ones(())
        for side in (1.0, -1.0):
            a = half[d] - side * o[d]  # distance from the point to this face
            u = {k: g for k, g in zip(others, grids)}
            u[d] = np.full_like(wts, side * a, dtype=float)
            r = np.sqrt(sum(u[k] ** 2 for k in range(n)))
            with np.errstate(divide="ignore", invalid="ignore"):
                K = np.where(r > 0, kernel.value(np.where(r > 0, r, 1.0)), 0.0)
            if kernel.kind == "log":
                V += a * float(np.sum(wts * (1.0 / n**2 + K / n)))
            else:
                V += a / (n - kernel.lam) * float(np.sum(wts * K))
            F0[d] += side * float(np.sum(wts * K))
            Phi[d] += side * float(np.sum(wts * _radial_antiderivative(kernel, r)))
            for m in range(n):
                F1[d, m] += side * float(np.sum(wts * (u[m] + o[m]) * K))
    return V, o * V + Phi, F0, F1


def _home_cells(grid: GridSpec, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flat index of the cell containing each point (-1 outside the box), and the offsets."""
    lo = np.asarray(grid.lo)
    h = np.asarray(grid.spacing)
    idx = np.floor((pts - lo) / h).astype(np.int64)
    inside = np.all((pts >= lo) & (pts <= np.asarray(grid.hi)), axis=1)
    idx = np.clip(idx, 0, np.asarray(grid.res) - 1)
    flat = np.full(len(pts), -1, dtype=np.int64)
    if inside.any():
        flat[inside] = np.ravel_multi_index(tuple(idx[inside].T), grid.res)
    centres = lo + (idx + 0.5) * h
    return flat, pts - centres


# ---------------------------------------------------------------------------
# sampled scalars


@dataclass
class SampledScalar:
    """Scalar values on the grid nodes (``points is None``) or at explicit points."""

    grid: GridSpec
    values: np.ndarray
    points: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.points is None:
            if self.values.size != self.grid.size:
                raise ValueError(f"{self.values.size} values for a grid of {self.grid.size} nodes")
            self.values = self.values.reshape(self.grid.shape)
        else:
            self.points = np.asarray(self.points, dtype=float).reshape(-1, self.grid.dim)
            if self.values.size != len(self.points):
                raise ValueError("one value per evaluation point required")
            self.values = self.values.reshape(len(self.points))

    def coordinates(self) -> np.ndarray:
        return self.grid.points() if self.points is None else self.points

    # CSV: one row per point, coordinates then value, C order
    def to_csv(self, path: str | Path) -> None:
        names = [f"x{i + 1}" for i in range(self.grid.dim)] if self.grid.dim != 3 else ["x", "y", "z"]
        lines = [",".join(names + ["value"])]
        for row, v in zip(self.coordinates(), self.values.ravel()):
            lines.append(",".join(repr(float(c)) for c in row) + "," + repr(float(v)))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path: str | Path, grid: GridSpec) -> "SampledScalar":
        rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
        data = np.array([[float(t) for t in r.split(",")] for r in rows if r.strip()])
        pts = data[:, :-1]
        vals = data[:, -1]
        if len(pts) == grid.size and np.array_equal(pts, grid.points()):
            return cls(grid, vals)
        return cls(grid, vals, pts)

    # binary: JSON header line, then little-endian float64 values (C order)
    def to_binary(self, path: str | Path) -> None:
        header = {"grid": self.grid.to_dict(), "count": int(self.values.size), "dtype": "<f8", "order": "C"}
        if self.points is not None:
            header["points"] = self.points.tolist()
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path: str | Path) -> "SampledScalar":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            data = np.frombuffer(fh.read(), dtype="<f8", count=header["count"]).copy()
        grid = GridSpec.from_dict(header["grid"])
        pts = np.asarray(header["points"]) if "points" in header else None
        return cls(grid, data, pts)


# ---------------------------------------------------------------------------
# direct path


@numba.njit(parallel=True, fastmath=True, cache=True)
def _direct_value(pts, nodes, src, lam, kind, eps2, out):  # pragma: no cover - jitted
    m, n = pts.shape
    nn = nodes.shape[1]
    half = -0.5 * lam
    for i in prange(m):
        acc = 0.0
        for j in range(nn):
            r2 = 0.0
            for d in range(n):
                t = pts[i, d] - nodes[d, j]
                r2 += t * t
            if r2 > eps2:
                if kind == 1:
                    acc -= 0.5 * src[j] * np.log(r2)
                else:
                    acc += src[j] * r2**half
        out[i] = acc


@numba.njit(parallel=True, fastmath=True, cache=True)
def _direct_grad(pts, nodes, src, lam, kind, eps2, out):  # pragma: no cover - jitted
    m, n = pts.shape
    nn = nodes.shape[1]
    for i in prange(m):
        for d in range(n):
            out[i, d] = 0.0
        for j in range(nn):
            r2 = 0.0
            for d in range(n):
                t = pts[i, d] - nodes[d, j]
                r2 += t * t
            if r2 > eps2:
                if kind == 1:
                    f = -src[j] / r2
                else:
                    f = -lam * src[j] * r2 ** (-0.5 * lam - 1.0)
                for d in range(n):
                    out[i, d] += f * (pts[i, d] - nodes[d, j])


# E_3 with 1/r: the hot case, unrolled so the inner loop vectorizes


@numba.njit(parallel=True, fastmath=True, cache=True)
def _direct_value_3(pts, nodes, src, eps2, out):  # pragma: no cover - jitted
    xs, ys, zs = nodes[0], nodes[1], nodes[2]
    for i in prange(pts.shape[0]):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        acc = 0.0
        for j in range(xs.shape[0]):
            a = px - xs[j]
            b = py - ys[j]
            c = pz - zs[j]
            r2 = a * a + b * b + c * c
            v = src[j] / np.sqrt(r2)
            acc += v if r2 > eps2 else 0.0
        out[i] = acc


@numba.njit(parallel=True, fastmath=True, cache=True)
def _direct_grad_3(pts, nodes, src, eps2, out):  # pragma: no cover - jitted
    xs, ys, zs = nodes[0], nodes[1], nodes[2]
    for i in prange(pts.shape[0]):
        px, py, pz = pts[i, 0], pts[i, 1], pts[i, 2]
        gx = 0.0
        gy = 0.0
        gz = 0.0
        for j in range(xs.shape[0]):
            a = px - xs[j]
            b = py - ys[j]
            c = pz - zs[j]
            r2 = a * a + b * b + c * c
            f = -src[j] / (r2 * np.sqrt(r2))
            f = f if r2 > eps2 else 0.0
            gx += f * a
            gy += f * b
            gz += f * c
        out[i, 0] = gx
        out[i, 1] = gy
        out[i, 2] = gz


def _run_value(pts, nodes, vals, kernel, eps2, out) -> None:
    if kernel.dim == 3 and kernel.kind == "power" and kernel.lam == 1.0:
        _direct_value_3(pts, nodes, vals, eps2, out)
    else:
        _direct_value(pts, nodes, vals, float(kernel.lam), kernel.kind_code, eps2, out)


def _run_grad(pts, nodes, vals, kernel, eps2, out) -> None:
    if kernel.dim == 3 and kernel.kind == "power" and kernel.lam == 1.0:
        _direct_grad_3(pts, nodes, vals, eps2, out)
    else:
        _direct_grad(pts, nodes, vals, float(kernel.lam), kernel.kind_code, eps2, out)


def set_threads(threads: int | None) -> None:
    if threads:
        numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))


def _self_nodes(grid: GridSpec, pts: np.ndarray) -> np.ndarray:
    """Flat index of the node coinciding with each point, or -1."""
    lo = np.asarray(grid.lo)
    h = np.asarray(grid.spacing)
    fidx = (pts - lo) / h - 0.5
    idx = np.rint(fidx).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.asarray(grid.res)), axis=1)
    close = np.all(np.abs(fidx - idx) < _SELF_TOL, axis=1)
    hit = inside & close
    flat = np.full(len(pts), -1, dtype=np.int64)
    if hit.any():
        flat[hit] = np.ravel_multi_index(tuple(idx[hit].T), grid.res)
    return flat


def _eps2(grid: GridSpec) -> float:
    return (_SELF_TOL * min(grid.spacing)) ** 2


def _source_array(source: Any, grid: GridSpec) -> np.ndarray:
    if isinstance(source, ScalarExpr):
        vals = np.broadcast_to(source.evaluate_array(grid.mesh()), grid.shape).astype(float)
    else:
        vals = np.asarray(source, dtype=float)
        if vals.shape != grid.shape:
            vals = vals.reshape(grid.shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("source contains NaN or infinite values")
    return vals


def _source_grad_arrays(source: Any, grid: GridSpec, source_grad: Sequence[Any] | None, vals: np.ndarray) -> list[np.ndarray]:
    if source_grad is not None:
        return [_source_array(g, grid) for g in source_grad]
    if isinstance(source, ScalarExpr):
        return [_source_array(source.diff(i + 1), grid) for i in range(grid.dim)]
    g = np.gradient(vals, *grid.spacing, edge_order=2)
    return list(g) if grid.dim > 1 else [g]


def _eval_points(grid: GridSpec, eval_pts: Any) -> np.ndarray | None:
    if eval_pts is None:
        return None
    pts = np.asarray(eval_pts, dtype=float).reshape(-1, grid.dim)
    if not np.all(np.isfinite(pts)):
        raise ValueError("evaluation points must be finite")
    return pts


def potential(
    source: Any,
    kernel: KernelSpec,
    grid: GridSpec,
    eval_pts: Any = None,
    *,
    threads: int | None = None,
) -> SampledScalar:
    """Direct quadrature of ∫ s(x') K(|x - x'|) dV' over the grid box.

    ``source`` is a :class:`ScalarExpr` or an array of node values.  Without
    ``eval_pts`` the result is sampled on the grid nodes.
    """
    _check_kernel(kernel, grid)
    vals = _source_array(source, grid)
    pts_in = _eval_points(grid, eval_pts)
    pts = grid.points() if pts_in is None else pts_in
    out = np.empty(len(pts))
    if np.any(vals):
        set_threads(threads)
        nodes = np.ascontiguousarray(grid.points().T)
        _run_value(np.ascontiguousarray(pts), nodes, vals.ravel(), kernel, _eps2(grid), out)
        out *= grid.cell_volume
        self_idx = _self_nodes(grid, pts)
        hit = self_idx >= 0
        v_self, _ = self_cell_integrals(kernel, grid.spacing)
        out[hit] += vals.ravel()[self_idx[hit]] * v_self
        # off-node points: the home cell's midpoint term is replaced by the
        # exact integral of the linearised source over that cell
        home, off = _home_cells(grid, pts)
        near = np.flatnonzero((home >= 0) & ~hit)
        if len(near):
            flat = vals.ravel()
            grads = _source_grad_arrays(source, grid, None, vals)
            for i in near:
                c = home[i]
                ds = np.array([g.ravel()[c] for g in grads])
                if flat[c] == 0.0 and not np.any(ds):
                    continue
                v, mom, _, _ = cell_integrals_at(kernel, grid.spacing, off[i])
                r = float(np.linalg.norm(off[i]))
                out[i] += flat[c] * v + ds @ mom - flat[c] * float(kernel.value(r)) * grid.cell_volume
    else:
        out[:] = 0.0
    return SampledScalar(grid, out, pts_in)


def potential_gradient(
    source: Any,
    kernel: KernelSpec,
    grid: GridSpec,
    eval_pts: Any = None,
    *,
    source_grad: Sequence[Any] | None = None,
    threads: int | None = None,
) -> list[SampledScalar]:
    """∇_x of the potential, differentiating the kernel under the integral.

    The self-node carries ``G[l] * ∂_l s`` (see :func:`self_cell_integrals`);
    ``∂_l s`` is exact for symbolic sources, otherwise taken from
    ``source_grad`` or second-order finite differences.

    Off-node points get the exact home-cell integral (see
    :func:`cell_integrals_at`).  The neighbouring cells' midpoint error no
    longer cancels by lattice symmetry there, so off-node gradients converge
    at first order; node values are second order.
    """
    _check_kernel(kernel, grid)
    vals = _source_array(source, grid)
    pts_in = _eval_points(grid, eval_pts)
    pts = grid.points() if pts_in is None else pts_in
    out = np.zeros((len(pts), grid.dim))
    if np.any(vals):
        set_threads(threads)
        nodes = np.ascontiguousarray(grid.points().T)
        _run_grad(np.ascontiguousarray(pts), nodes, vals.ravel(), kernel, _eps2(grid), out)
        out *= grid.cell_volume
        self_idx = _self_nodes(grid, pts)
        hit = self_idx >= 0
        home, off = _home_cells(grid, pts)
        near = np.flatnonzero((home >= 0) & ~hit)
        if hit.any() or len(near):
            _, g_self = self_cell_integrals(kernel, grid.spacing)
            grads = _source_grad_arrays(source, grid, source_grad, vals)
            for l in range(grid.dim):
                out[hit, l] += grads[l].ravel()[self_idx[hit]] * g_self[l]
            flat = vals.ravel()
            for i in near:
                c = home[i]
                ds = np.array([g.ravel()[c] for g in grads])
                if flat[c] == 0.0 and not np.any(ds):
                    continue
                v, _, f0, f1 = cell_integrals_at(kernel, grid.spacing, off[i])
                r = float(np.linalg.norm(off[i]))
                midpoint = flat[c] * grid.cell_volume * float(kernel.dvalue_over_r(r)) * off[i]
                out[i] += -(flat[c] * f0 + f1 @ ds) + ds * v - midpoint
    return [SampledScalar(grid, out[:, l].copy(), pts_in) for l in range(grid.dim)]


def _check_kernel(kernel: KernelSpec, grid: GridSpec) -> None:
    if kernel.dim != grid.dim:
        raise ValueError(f"kernel dimension {kernel.dim} does not match grid dimension {grid.dim}")


# ---------------------------------------------------------------------------
# FFT path


def _offsets(grid: GridSpec) -> list[np.ndarray]:
    """Per-axis offsets of the padded circular grid (length 2N, entry N unused)."""
    out = []
    for r, h in zip(grid.res, grid.spacing):
        k = np.arange(2 * r)
        k = np.where(k < r, k, k - 2 * r)
        out.append(k * h)
    return out


@lru_cache(maxsize=4)
def _kernel_spectra(kernel: KernelSpec, grid: GridSpec, gradient: bool) -> tuple[np.ndarray, ...]:
    offs = np.meshgrid(*_offsets(grid), indexing="ij")
    r = np.sqrt(sum(o * o for o in offs))
    self_mask = r == 0
    pad = tuple(2 * n for n in grid.res)
    for ax, n in enumerate(grid.res):
        sl = [slice(None)] * grid.dim
        sl[ax] = n
        r[tuple(sl)] = np.inf  # offset ±N never pairs two nodes
    with np.errstate(divide="ignore", invalid="ignore"):
        if not gradient:
            kv = np.where(np.isfinite(r) & ~self_mask, kernel.value(np.where(self_mask, 1.0, r)), 0.0)
            return (scipy.fft.rfftn(kv, pad),)
        f = np.where(np.isfinite(r) & ~self_mask, kernel.dvalue_over_r(np.where(self_mask, 1.0, r)), 0.0)
        return tuple(scipy.fft.rfftn(np.where(np.isfinite(o), f * o, 0.0), pad) for o in offs)


def _convolve(vals: np.ndarray, spectrum: np.ndarray, grid: GridSpec, threads: int | None) -> np.ndarray:
    pad = tuple(2 * n for n in grid.res)
    workers = threads or 1
    s = scipy.fft.rfftn(vals, pad, workers=workers)
    full = scipy.fft.irfftn(s * spectrum, pad, workers=workers)
    return full[tuple(slice(0, n) for n in grid.res)]


def fft_potential(samples: Any, kernel: KernelSpec, grid: GridSpec, *, threads: int | None = None) -> SampledScalar:
    """Same discrete sum as :func:`potential` on the grid nodes, via FFT."""
    _check_kernel(kernel, grid)
    vals = _source_array(samples, grid)
    if not np.any(vals):
        return SampledScalar(grid, np.zeros(grid.shape))
    (spec,) = _kernel_spectra(kernel, grid, False)
    out = _convolve(vals, spec, grid, threads) * grid.cell_volume
    v_self, _ = self_cell_integrals(kernel, grid.spacing)
    out += vals * v_self
    return SampledScalar(grid, out)


def fft_potential_gradient(
    samples: Any,
    kernel: KernelSpec,
    grid: GridSpec,
    *,
    source_grad: Sequence[Any] | None = None,
    threads: int | None = None,
) -> list[SampledScalar]:
    """Gradient counterpart of :func:`fft_potential`."""
    _check_kernel(kernel, grid)
    vals = _source_array(samples, grid)
    if not np.any(vals):
        return [SampledScalar(grid, np.zeros(grid.shape)) for _ in range(grid.dim)]
    specs = _kernel_spectra(kernel, grid, True)
    _, g_self = self_cell_integrals(kernel, grid.spacing)
    grads = _source_grad_arrays(samples, grid, source_grad, vals)
    s = scipy.fft.rfftn(vals, tuple(2 * n for n in grid.res), workers=threads or 1)
    pad = tuple(2 * n for n in grid.res)
    crop = tuple(slice(0, n) for n in grid.res)
    out = []
    for l, spec in enumerate(specs):
        comp = scipy.fft.irfftn(s * spec, pad, workers=threads or 1)[crop] * grid.cell_volume
        out.append(SampledScalar(grid, comp + grads[l] * g_self[l]))
    return out


def gradient_of_potential(source: Any, kernel: KernelSpec, grid: GridSpec, *, path: str = "fft", threads: int | None = None) -> list[np.ndarray]:
    """Node values of ∇P for a source, via the chosen path."""
    if path == "fft":
        comps = fft_potential_gradient(source, kernel, grid, threads=threads)
    elif path == "direct":
        comps = potential_gradient(source, kernel, grid, threads=threads)
    else:
        raise ValueError(f"unknown path {path!r} (expected 'fft' or 'direct')")
    return [c.values.reshape(grid.shape) for c in comps]


# ---------------------------------------------------------------------------
# the I-integrals of the 1-form theorem


def _as_1form(alpha: Any):
    from .fields import FormField

    if not isinstance(alpha, FormField) or alpha.dim != 3:
        raise ValueError("expected a FormField in E_3")
    if not alpha.is_homogeneous(1):
        raise ValueError(f"expected a homogeneous 1-form, got grades {sorted(alpha.grades())}")
    return alpha


def I0_source(alpha: Any) -> ScalarExpr:
    """Scalar integrand of I⁰: (δα) w read off as a coefficient of w."""
    from .fields import codiff

    alpha = _as_1form(alpha)
    return ScalarExpr.lift(codiff(alpha)[0])


def Ii_source(alpha: Any, i: int) -> ScalarExpr:
    """Scalar integrand of Iⁱ: dα ∧ dx^i = (a_k,j - a_j,k) w, (i, j, k) cyclic."""
    from .algebra import wedge
    from .fields import dx, ext_d

    alpha = _as_1form(alpha)
    if i not in (1, 2, 3):
        raise ValueError(f"cyclic index must be 1, 2 or 3, got {i}")
    return ScalarExpr.lift(wedge(ext_d(alpha), dx(3, i))[0b111])


def _potential_by_path(src: ScalarExpr, kernel: KernelSpec, grid: GridSpec, eval_pts: Any, path: str, threads: int | None) -> SampledScalar:
    if path == "fft":
        if eval_pts is not None:
            raise ValueError("the FFT path evaluates on grid nodes only")
        return fft_potential(src, kernel, grid, threads=threads)
    return potential(src, kernel, grid, eval_pts, threads=threads)


def compute_I0(alpha: Any, kernel: KernelSpec, grid: GridSpec, eval_pts: Any = None, *, path: str = "direct", threads: int | None = None) -> SampledScalar:
    return _potential_by_path(I0_source(alpha), kernel, grid, eval_pts, path, threads)


def compute_Ii(alpha: Any, kernel: KernelSpec, grid: GridSpec, eval_pts: Any = None, i: int = 1, *, path: str = "direct", threads: int | None = None) -> SampledScalar:
    return _potential_by_path(Ii_source(alpha, i), kernel, grid, eval_pts, path, threads)


# ---------------------------------------------------------------------------
# Green's identity


@dataclass
class GreensReport:
    lhs: float
    rhs: float
    abs_residual: float
    rel_residual: float
    res: tuple[int, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict[str, Any]:
        return {
            "res": list(self.res),
            "lhs": self.lhs,
            "rhs": self.rhs,
            "abs_residual": self.abs_residual,
            "rel_residual": self.rel_residual,
        }


def greens_identity_check(f: ScalarExpr, g: ScalarExpr, grid: GridSpec) -> GreensReport:
    """Compare ∫_R (f ∂∂g + ∂f·∂g) dV with the boundary flux ∮ f ∂_n g dS.

    Volume: midpoint rule on the cells.  Boundary: midpoint rule on the face
    cells of each of the 2n faces.
    """
    n = grid.dim
    mesh = grid.mesh()
    lap_g = sum((g.diff(i).diff(i) for i in range(1, n + 1)), ScalarExpr())
    integrand = f * lap_g + sum((f.diff(i) * g.diff(i) for i in range(1, n + 1)), ScalarExpr())
    vol = np.broadcast_to(integrand.evaluate_array(mesh), grid.shape)
    lhs = float(np.sum(vol) * grid.cell_volume)

    rhs = 0.0
    axes = grid.axes()
    h = grid.spacing
    for d in range(n):
        face_axes = [a for k, a in enumerate(axes) if k != d]
        dA = float(np.prod([h[k] for k in range(n) if k != d]))
        fm = np.meshgrid(*face_axes, indexing="ij") if face_axes else []
        for side, sign in ((grid.lo[d], -1.0), (grid.hi[d], 1.0)):
            pts = list(fm)
            pts.insert(d, np.full(fm[0].shape if fm else (), side))
            flux = f * g.diff(d + 1)
            vals = np.broadcast_to(flux.evaluate_array(pts), fm[0].shape if fm else ())
            rhs += sign * float(np.sum(vals)) * dA
    res = abs(lhs - rhs)
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return GreensReport(lhs, rhs, res, res / scale, grid.res)


@dataclass
class GreensStudy:
    reports: list[GreensReport]
    orders: list[float]

    @property
    def monotone(self) -> bool:
        r = [rep.abs_residual for rep in self.reports]
        return all(b < a for a, b in zip(r, r[1:]))

    @property
    def min_order(self) -> float:
        return min(self.orders) if self.orders else float("nan")

    def to_dict(self) -> dict[str, Any]:
        return {
            "levels": [r.to_dict() for r in self.reports],
            "orders": self.orders,
            "monotone": self.monotone,
            "min_order": self.min_order,
        }


def greens_convergence(
    f: ScalarExpr,
    g: ScalarExpr,
    *,
    lo: float = 0.0,
    hi: float = 1.0,
    base_res: int = 4,
    refinements: int = 3,
    dim: int = 3,
) -> GreensStudy:
    """Green's-identity residual on ``refinements`` dyadic refinements of a box.

    Observed orders are log2 of successive residual ratios.
    """
    reports = []
    for k in range(refinements + 1):
        grid = GridSpec.box(lo, hi, base_res * 2**k, dim)
        reports.append(greens_identity_check(f, g, grid))
    orders = []
    for a, b in zip(reports, reports[1:]):
        if a.abs_residual > 0 and b.abs_residual > 0:
            orders.append(math.log2(a.abs_residual / b.abs_residual))
        else:
            orders.append(float("inf"))
    return GreensStudy(reports, orders)

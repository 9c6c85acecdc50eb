"""Direct vs FFT timings for the grid potential."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .expr import gaussian
from .green import GridSpec, KernelSpec, fft_potential, potential


class AgreementError(RuntimeError):
    pass


@dataclass
class BenchRow:
    res: int
    nodes: int
    fft_seconds: float
    direct_seconds: float
    direct_measured_points: int
    direct_extrapolated: bool
    rel_l2_diff: float

    @property
    def speedup(self) -> float:
        return self.direct_seconds / self.fft_seconds if self.fft_seconds else float("inf")

    @property
    def direct_per_point(self) -> float:
        return self.direct_seconds / self.nodes

    def to_dict(self) -> dict[str, Any]:
        return {
            "res": self.res,
            "nodes": self.nodes,
            "fft_seconds": self.fft_seconds,
            "direct_seconds": self.direct_seconds,
            "direct_measured_points": self.direct_measured_points,
            "direct_extrapolated": self.direct_extrapolated,
            "rel_l2_diff": self.rel_l2_diff,
            "speedup": self.speedup,
            "fft_nodes_per_sec": self.nodes / self.fft_seconds if self.fft_seconds else None,
            "direct_nodes_per_sec": self.nodes / self.direct_seconds if self.direct_seconds else None,
            "direct_seconds_per_eval_point": self.direct_per_point,
        }


@dataclass
class BenchReport:
    rows: list[BenchRow]
    threads: int | None
    tolerance: float
    notes: list[str] = field(default_factory=list)

    def row(self, res: int) -> BenchRow:
        for r in self.rows:
            if r.res == res:
                return r
        raise KeyError(res)

    def scaling(self, a: int, b: int) -> dict[str, float]:
        """Measured vs O(N²) direct-time ratio between two resolutions."""
        ra, rb = self.row(a), self.row(b)
        measured = rb.direct_seconds / ra.direct_seconds
        theory = (rb.nodes / ra.nodes) ** 2
        return {"measured": measured, "theoretical": theory, "deviation": abs(measured / theory - 1.0)}

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "threads": self.threads,
            "tolerance": self.tolerance,
            "rows": [r.to_dict() for r in self.rows],
            "notes": list(self.notes),
        }
        full = [r.res for r in self.rows if not r.direct_extrapolated]
        if len(full) >= 2:
            out["direct_scaling"] = self.scaling(full[0], full[1])
        return out


def _best_of(fn, repeats: int) -> tuple[float, Any]:
    best, out = float("inf"), None
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def _sample_indices(n: int, k: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=k, replace=False))


def run_bench(
    resolutions: Sequence[int] = (16, 32, 64),
    *,
    half_width: float = 4.0,
    threads: int | None = None,
    full_direct_max: int = 32,
    sample_points: int = 8192,
    repeats: int = 3,
    tolerance: float = 1e-8,
) -> BenchReport:
    """Time both paths on the potential of exp(-r²) in E_3.

    Up to ``full_direct_max`` the direct sum is evaluated at every node and
    compared with the FFT result over the whole grid.  Above it, the direct
    sum is evaluated at ``sample_points`` random nodes; agreement is checked
    there and the full direct time is extrapolated from the per-point cost
    (the direct loop does identical work for every evaluation point).
    Raises :class:`AgreementError` if the relative L² difference exceeds
    ``tolerance``.
    """
    kernel = KernelSpec.newtonian(3)
    src = gaussian(3, 1)
    rows = []
    notes = []
    # compile and warm caches outside the timed region
    warm = GridSpec.cube(half_width, 4)
    potential(src, kernel, warm, threads=threads)
    fft_potential(src, kernel, warm, threads=threads)

    for res in resolutions:
        grid = GridSpec.cube(half_width, res)
        vals = np.broadcast_to(src.evaluate_array(grid.mesh()), grid.shape).astype(float)
        fft_potential(vals, kernel, grid, threads=threads)  # kernel spectrum is cached per grid
        t_fft, fft_out = _best_of(lambda: fft_potential(vals, kernel, grid, threads=threads), repeats)
        fft_vals = fft_out.values.ravel()
        if res <= full_direct_max:
            reps = repeats if grid.size <= 32**3 else 1
            t_dir, d_out = _best_of(lambda: potential(vals, kernel, grid, threads=threads), reps)
            ref = fft_vals
            got = d_out.values.ravel()
            measured, extrapolated = grid.size, False
        else:
            idx = _sample_indices(grid.size, min(sample_points, grid.size))
            pts = grid.points()[idx]
            t_sub, d_out = _best_of(lambda: potential(vals, kernel, grid, pts, threads=threads), 1)
            t_dir = t_sub * grid.size / len(idx)
            ref = fft_vals[idx]
            got = d_out.values.ravel()
            measured, extrapolated = len(idx), True
            notes.append(f"{res}^3 direct time extrapolated from {len(idx)} evaluation points")
        diff = float(np.linalg.norm(got - ref) / np.linalg.norm(ref))
        if diff > tolerance:
            raise AgreementError(f"{res}^3: direct and FFT differ by {diff:.3e} (relative L2) > {tolerance:g}")
        rows.append(BenchRow(res, grid.size, t_fft, t_dir, measured, extrapolated, diff))
    return BenchReport(rows, threads, tolerance, notes)

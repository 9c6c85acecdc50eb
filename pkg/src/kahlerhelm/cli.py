"""Command-line front end: decompose, verify, calibrate, bench."""

from __future__ import annotations

import argparse
import json
import os
import sys
import dataclasses
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Sequence

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PARSE = 2
EXIT_INPUT = 3

_DEFAULTS = {
    "box": "-6,6",
    "res": "48",
    "path": "fft",
    "out": "out",
    "method": "auto",
    "formats": "csv,bin",
}


@dataclass
class RunConfig:
    command: str
    field: str | None = None
    builtin: str | None = None
    box: tuple[float, float] = (-6.0, 6.0)
    res: tuple[int, ...] = (48,)
    dim: int | None = None
    grade: int | None = None
    path: str = "fft"
    out: str = "out"
    threads: int | None = None
    constants: str | None = None
    method: str = "auto"
    formats: tuple[str, ...] = ("csv", "bin")
    extra: dict[str, Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.box[0] >= self.box[1]:
            raise ValueError(f"empty box {self.box[0]},{self.box[1]}")
        if any(r < 2 for r in self.res):
            raise ValueError("resolution must be >= 2")
        if self.path not in ("fft", "direct"):
            raise ValueError(f"unknown path {self.path!r}")

    def grid(self, dim: int):
        from .green import GridSpec

        res = self.res if len(self.res) == dim else self.res[:1] * dim
        if len(self.res) not in (1, dim):
            raise ValueError(f"--res lists {len(self.res)} values for a {dim}-dimensional grid")
        return GridSpec((self.box[0],) * dim, (self.box[1],) * dim, res)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["box"] = list(self.box)
        d["res"] = list(self.res)
        d["formats"] = list(self.formats)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        kw = {k: v for k, v in d.items() if k in known}
        if "box" in kw:
            kw["box"] = tuple(float(v) for v in kw["box"])
        if "res" in kw:
            kw["res"] = tuple(int(v) for v in kw["res"])
        if "formats" in kw:
            kw["formats"] = tuple(kw["formats"])
        return cls(**kw)


def _parse_box(raw: str) -> tuple[float, float]:
    parts = [p for p in raw.replace(" ", "").split(",") if p]
    if len(parts) != 2:
        raise ValueError(f"--box expects LO,HI, got {raw!r}")
    return float(parts[0]), float(parts[1])


def _parse_ints(raw: str) -> tuple[int, ...]:
    return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)


def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _threads(n: int | None) -> int:
    return n if n else (os.cpu_count() or 1)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    base: dict[str, Any] = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    base["command"] = args.command

    def pick(name: str, conv=lambda v: v):
        v = getattr(args, name, None)
        if v is not None:
            base[name] = conv(v)
        elif name not in base and name in _DEFAULTS:
            base[name] = conv(_DEFAULTS[name])

    pick("field")
    pick("builtin")
    pick("box", _parse_box)
    pick("res", _parse_ints)
    pick("dim")
    pick("grade")
    pick("path")
    pick("out")
    pick("threads")
    pick("constants")
    pick("method")
    pick("formats", lambda v: tuple(x for x in v.split(",") if x))
    return RunConfig.from_dict(base)


# ---------------------------------------------------------------------------
# commands


def _load_input(cfg: RunConfig):
    from .builtins import get_builtin
    from .fields import load_field

    if cfg.field and cfg.builtin:
        raise ValueError("use either --field or --builtin, not both")
    if cfg.field:
        f = load_field(cfg.field, cfg.dim)
    elif cfg.builtin:
        f = get_builtin(cfg.builtin, cfg.dim or 3)
    else:
        raise ValueError("one of --field or --builtin is required")
    if cfg.dim is not None and f.dim != cfg.dim:
        raise ValueError(f"field lives in E_{f.dim} but --dim {cfg.dim} was given")
    if cfg.grade is not None and not f.is_zero() and not f.is_homogeneous(cfg.grade):
        raise ValueError(f"--grade {cfg.grade} given but the field has grades {sorted(f.grades())}")
    return f


def _field_grade(f, cfg: RunConfig) -> int | None:
    if cfg.grade is not None:
        return cfg.grade
    g = f.grades()
    return next(iter(g)) if len(g) == 1 else (1 if not g else None)


def cmd_decompose(cfg: RunConfig) -> int:
    from .decompose import GeneralFormat, decompose_1form, decompose_2form, decompose_general

    f = _load_input(cfg)
    n = f.dim
    grid = cfg.grid(n)
    grade = _field_grade(f, cfg)
    threads = _threads(cfg.threads)
    method = cfg.method
    if method == "auto":
        method = "1form" if n == 3 and grade == 1 and not cfg.constants else "2form" if n == 3 and grade == 2 and not cfg.constants else "general"

    if method == "1form":
        dec = decompose_1form(f, None, grid, path=cfg.path, threads=threads)
    elif method == "2form":
        dec = decompose_2form(f, None, grid, path=cfg.path, threads=threads)
    elif method == "general":
        fmt = GeneralFormat.load(cfg.constants) if cfg.constants else GeneralFormat.newtonian(n)
        if fmt.n != n:
            raise ValueError(f"constants file is for n={fmt.n}, field lives in E_{n}")
        dec = decompose_general(f, fmt.with_grade(grade), grid, path=cfg.path, threads=threads)
    else:
        raise ValueError(f"unknown method {method!r}")

    out = Path(cfg.out)
    dec.write(out, cfg.formats)
    _write_json(out / "config.json", cfg.to_dict())
    nm = dec.norms
    print(f"method {dec.method}  grid {'x'.join(map(str, grid.res))}  box [{cfg.box[0]}, {cfg.box[1]}]^{n}  path {cfg.path}")
    print(f"|input| {nm['input_l2']:.6e}  |exact| {nm['exact_l2']:.6e}  |coexact| {nm['coexact_l2']:.6e}")
    print(f"residual: L2 rel {nm['l2_rel']:.6e}  Linf rel {nm['linf_rel']:.6e}")
    for w in dec.truncation.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {out / 'manifest.json'}")
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    from .identities import random_greens_study, run_symbolic_suite

    trials = int(cfg.extra.get("trials", 100))
    seed = int(cfg.extra.get("seed", 0))
    suite = run_symbolic_suite(trials, seed)
    for line in suite.lines():
        print(line)

    draw = random_greens_study(seed)
    f, g, study = draw.f, draw.g, draw.study
    for rf, rg in draw.rejected:
        print(f"skipped degenerate pair (exact at every level): f = {rf}, g = {rg}")
    print(f"green identity on [0,1]^3, f = {f}, g = {g}")
    for rep in study.reports:
        print(f"  res {rep.res[0]:>3}  lhs {rep.lhs:+.10e}  rhs {rep.rhs:+.10e}  residual {rep.abs_residual:.3e}")
    print("  observed orders: " + ", ".join(f"{o:.3f}" for o in study.orders) + ("  (monotone)" if study.monotone else "  (NOT monotone)"))

    report = {"symbolic": suite.to_dict(), "greens": {"f": str(f), "g": str(g), "rejected": draw.rejected, **study.to_dict()}}
    if cfg.extra.get("proof_steps"):
        from .builtins import get_builtin
        from .decompose import verify_proof_steps

        alpha = get_builtin(cfg.builtin or "gauss-1form", 3)
        steps = verify_proof_steps(alpha, None, cfg.grid(3), path=cfg.path, threads=_threads(cfg.threads))
        report["proof_steps"] = steps
        print("proof steps: " + json.dumps(steps, sort_keys=True))

    out = Path(cfg.out)
    _write_json(out / "verify.json", report)
    _write_json(out / "config.json", cfg.to_dict())
    print("all symbolic identities pass exactly" if suite.all_ok else "SYMBOLIC FAILURES PRESENT")
    return EXIT_OK if suite.all_ok else EXIT_FAIL


def cmd_calibrate(cfg: RunConfig) -> int:
    from .decompose import CalibrationError, calibrate_constants, default_calibration_grid

    n = cfg.dim or 3
    grid = cfg.grid(n) if cfg.extra.get("grid_given") else default_calibration_grid(n)
    fit_lambda = cfg.extra.get("fit_lambda")
    out = Path(cfg.out)
    target = Path(cfg.constants) if cfg.constants else out / "constants.json"
    try:
        res = calibrate_constants(n, grid, path=cfg.path, threads=_threads(cfg.threads), fit_lambda=fit_lambda)
        status = EXIT_OK
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        res = exc.result
        status = EXIT_FAIL
    if res is None:
        return EXIT_FAIL
    fmt = res.format
    print(f"n={n}  grid {'x'.join(map(str, res.grid.res))} on [{res.grid.lo[0]}, {res.grid.hi[0]}]^{n}")
    lam_s = "n/a (log kernel)" if res.lambda_fit is None and fmt.kind == "log" else ("not searched" if res.lambda_fit is None else f"{res.lambda_fit:.6f}")
    print(f"kernel {fmt.kind}  lambda used {fmt.lam}  lambda fit {lam_s}")
    print(f"mu_d     {fmt.mu_d:.8f}  (fits {', '.join(f'{m:.8f}' for m in res.mu_d_fits)}; spread {res.mu_d_spread:.2e}; residual {res.residual_d:.3e})")
    print(f"mu_delta {fmt.mu_delta:.8f}  (fits {', '.join(f'{m:.8f}' for m in res.mu_delta_fits)}; spread {res.mu_delta_spread:.2e}; residual {res.residual_delta:.3e})")
    print(f"reference -1/((n-2)|S^(n-1)|) = {res.mu_reference:.8f}" if n > 2 else f"reference -1/(2 pi) = {res.mu_reference:.8f}")
    print(f"mu_d and mu_delta coincide within 2%: {res.mu_coincide}")
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if status == EXIT_OK:
        target.parent.mkdir(parents=True, exist_ok=True)
        res.save(target)
        print(f"wrote {target}")
    _write_json(out / "calibration.json", res.to_dict())
    _write_json(out / "config.json", cfg.to_dict())
    return status


def cmd_bench(cfg: RunConfig) -> int:
    from .bench import AgreementError, run_bench

    resolutions = cfg.res if len(cfg.res) > 1 or cfg.extra.get("res_given") else (16, 32, 64)
    full_max = int(cfg.extra.get("full_direct_max", 32))
    try:
        rep = run_bench(resolutions, threads=_threads(cfg.threads), full_direct_max=full_max)
    except AgreementError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(f"{'res':>5} {'nodes':>8} {'fft s':>10} {'direct s':>12} {'speedup':>9} {'rel diff':>10} {'direct s/pt':>12}")
    for r in rep.rows:
        mark = "*" if r.direct_extrapolated else " "
        print(f"{r.res:>5} {r.nodes:>8} {r.fft_seconds:>10.4f} {r.direct_seconds:>11.3f}{mark} {r.speedup:>9.1f} {r.rel_l2_diff:>10.2e} {r.direct_per_point:>12.3e}")
    for note in rep.notes:
        print(f"* {note}")
    d = rep.to_dict()
    if "direct_scaling" in d:
        s = d["direct_scaling"]
        print(f"direct scaling: measured {s['measured']:.2f}x vs O(N^2) {s['theoretical']:.0f}x ({s['deviation']:.1%} off)")
    out = Path(cfg.out)
    _write_json(out / "bench.json", d)
    _write_json(out / "config.json", cfg.to_dict())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, box_default: str = "-6,6", res_default: str = "48") -> None:
    p.add_argument("--config", help="re-run from a config.json written by an earlier run")
    p.add_argument("--box", help=f"LO,HI of the cubic box (default {box_default})")
    p.add_argument("--res", help=f"nodes per axis, N or N1,N2,... (default {res_default})")
    p.add_argument("--dim", type=int, help="dimension n")
    p.add_argument("--path", choices=("direct", "fft"), help="quadrature path (default fft)")
    p.add_argument("--out", help="output directory (default ./out)")
    p.add_argument("--threads", type=int, help="worker threads (default: all cores)")


def build_parser() -> argparse.ArgumentParser:
    from .builtins import describe_builtins

    parser = argparse.ArgumentParser(
        prog="kahlerhelm",
        description="Explicit Helmholtz decomposition of differential forms in Euclidean space.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "decompose",
        help="split a decaying form into exact and co-exact parts",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="builtin fields:\n" + describe_builtins(),
    )
    src = p.add_mutually_exclusive_group()
    src.add_argument("--field", help="field definition file")
    src.add_argument("--builtin", help="named test field")
    _common(p)
    p.add_argument("--grade", type=int, help="expected grade of the input")
    p.add_argument("--constants", help="constants file from 'calibrate' (forces the general path)")
    p.add_argument("--method", choices=("auto", "1form", "2form", "general"))
    p.add_argument("--formats", help="field dump formats, comma separated (csv,bin)")

    p = sub.add_parser("verify", help="run the exact identity suite and the Green's-identity study")
    _common(p)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--proof-steps", action="store_true", help="also run the numerical proof-step checks")
    p.add_argument("--builtin", help="field for --proof-steps (default gauss-1form)")

    p = sub.add_parser("calibrate", help="fit the kernel constants for dimension n")
    _common(p, "per-dimension default", "per-dimension default")
    p.add_argument("--constants", help="where to write the constants (default OUT/constants.json)")
    lam = p.add_mutually_exclusive_group()
    lam.add_argument("--fit-lambda", dest="fit_lambda", action="store_true", default=None)
    lam.add_argument("--no-fit-lambda", dest="fit_lambda", action="store_false")

    p = sub.add_parser("bench", help="time direct vs FFT quadrature")
    _common(p, "-4,4", "16,32,64")
    p.add_argument("--full-direct-max", type=int, default=32, help="largest N evaluated fully on the direct path")
    return parser


def _glue_box(argv: Sequence[str]) -> list[str]:
    # "--box -4,4" would otherwise be read as an unknown option
    out: list[str] = []
    it = iter(argv)
    for a in it:
        if a == "--box":
            nxt = next(it, None)
            out.append(a if nxt is None else f"--box={nxt}")
        else:
            out.append(a)
    return out


def main(argv: Sequence[str] | None = None) -> int:
    from .expr import ParseError

    parser = build_parser()
    args = parser.parse_args(_glue_box(sys.argv[1:] if argv is None else argv))
    try:
        cfg = _config_from_args(args)
        if args.command == "verify":
            cfg.extra.update(trials=args.trials, seed=args.seed, proof_steps=args.proof_steps)
            return cmd_verify(cfg)
        if args.command == "calibrate":
            cfg.extra.update(grid_given=args.box is not None or args.res is not None, fit_lambda=args.fit_lambda)
            return cmd_calibrate(cfg)
        if args.command == "bench":
            cfg.extra.update(res_given=args.res is not None, full_direct_max=args.full_direct_max)
            if args.box is None and not args.config:
                cfg.box = (-4.0, 4.0)
            return cmd_bench(cfg)
        return cmd_decompose(cfg)
    except ParseError as exc:
        where = getattr(args, "field", None) or "input"
        print(f"{where}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValueError, KeyError, FileNotFoundError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())

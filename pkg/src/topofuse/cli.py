"""Command-line entry point.

Subcommands: solve, simp, kappa, bf16-study, bench, export. Option values
resolve as CLI flag > config-file key > built-in default; the config file is
a flat key=value text format (keys match the long flag names with
underscores, e.g. cg_cap=2000). Artifact filenames are deterministic
functions of the command, preset, and precision, so reruns overwrite in
place. All floats in emitted artifacts carry 9 significant digits.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .bench import (
    available_backends,
    run_bf16_study,
    run_matvec_suite,
)
from .conditioning import KAPPA_CSV_COLUMNS, estimate_kappa, kappa_csv_rows
from .element import SimpParams
from .mesh import PRESET_NAMES, build_edof, make_preset
from .operator import MatFreeOperator
from .simp import SimpConfig, default_schedule, run_simp
from .solver import CgConfig, solve_equilibrium

DEFAULTS = {
    "preset": "cantilever",
    "scale": 0.2,
    "variant": "fused",
    "precision": "fp64",
    "iters": 120,
    "cg_cap": 1000,
    "seed": 42,
    "threads": 0,
    "out": "runs",
    "serial": False,
    "backend": None,
    "pattern": "structured",
    "repeats": None,
    "compare_backends": False,
    "scales": None,
    "p_values": "3.0",
    "run": None,
    "slices": False,
}

HISTORY_COLUMNS = [
    "iteration",
    "compliance",
    "grayness",
    "volume",
    "cg_iterations",
    "cg_converged",
    "p",
    "beta",
    "move",
    "rmin",
    "restarted",
    "wall_s",
]


def load_config_file(path) -> dict:
    """Flat key=value file; '#' starts a comment; booleans true/false."""
    cfg = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower().replace("-", "_")
        lowered = value.lower()
        if lowered in ("true", "yes", "on"):
            cfg[key] = True
        elif lowered in ("false", "no", "off"):
            cfg[key] = False
        elif lowered in ("none", ""):
            cfg[key] = None
        else:
            cfg[key] = io.parse_value(value)
    return cfg


def parse_scale(token) -> float:
    """Mesh scale as a decimal or a fraction like 1/15.

    Fractions exist because thirds cannot be written as finite decimals and
    the preset dimension check rejects truncated approximations.
    """
    if isinstance(token, (int, float)):
        return float(token)
    text = str(token).strip()
    if "/" in text:
        num, _, den = text.partition("/")
        try:
            return float(num) / float(den)
        except ZeroDivisionError:
            raise ValueError(f"invalid scale {text!r}") from None
    return float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topofuse",
        description="Matrix-free 3D topology optimization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--preset", choices=PRESET_NAMES, help="problem preset")
        sp.add_argument(
            "--scale",
            type=parse_scale,
            help="mesh scale factor (0.2 = desk size; fractions like 1/15 accepted)",
        )
        sp.add_argument("--variant", choices=("three-stage", "fused"), help="matvec variant")
        sp.add_argument("--precision", choices=("fp64", "fp32", "bf16"), help="working precision")
        sp.add_argument("--iters", type=int, help="optimization iterations")
        sp.add_argument("--cg-cap", type=int, dest="cg_cap", help="CG iteration cap")
        sp.add_argument("--seed", type=int, help="base RNG seed")
        sp.add_argument("--threads", type=int, help="kernel thread count (0 = leave as is)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--serial", action="store_true", default=None, help="deterministic serial scatter")
        sp.add_argument("--backend", choices=("numba", "numpy"), help="kernel backend override")
        sp.add_argument("--config", help="flat key=value config file")

    solve = sub.add_parser("solve", help="single equilibrium solve at uniform density")
    add_common(solve)

    simp = sub.add_parser("simp", help="full continuation optimization run")
    add_common(simp)

    kappa = sub.add_parser("kappa", help="condition-number estimation sweep")
    add_common(kappa)
    kappa.add_argument("--scales", help="comma-separated mesh scales (default: --scale)")
    kappa.add_argument("--p-values", dest="p_values", help="comma-separated penalty exponents")

    study = sub.add_parser("bf16-study", help="four-row low-precision solve study")
    add_common(study)
    study.add_argument("--scales", help="comma-separated mesh scales (default: --scale)")

    bench = sub.add_parser("bench", help="matvec microbenchmark suite")
    add_common(bench)
    bench.add_argument("--pattern", choices=("structured", "seeded_random"), help="index pattern")
    bench.add_argument("--repeats", type=int, help="timing repeats (default: adaptive)")
    bench.add_argument(
        "--compare-backends",
        dest="compare_backends",
        action="store_true",
        default=None,
        help="time every importable backend",
    )

    export = sub.add_parser("export", help="re-emit a saved density snapshot")
    add_common(export)
    export.add_argument("--run", help="directory holding the optimization artifacts (default: --out)")
    export.add_argument("--slices", action="store_true", default=None, help="also write mid-plane text slices")

    return parser


def resolve_options(args: argparse.Namespace) -> dict:
    """CLI flag > config-file key > default, for every known option."""
    file_cfg = load_config_file(args.config) if getattr(args, "config", None) else {}
    cfg = {"command": args.command}
    for key, default in DEFAULTS.items():
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            cfg[key] = cli_value
        elif key in file_cfg:
            cfg[key] = file_cfg[key]
        else:
            cfg[key] = default
    cfg["variant"] = str(cfg["variant"]).replace("-", "_")
    cfg["scatter"] = "serial" if cfg["serial"] else "parallel_atomic"
    cfg["scale"] = parse_scale(cfg["scale"])  # config files may carry "1/15"
    return cfg


def _set_threads(threads: int) -> None:
    if threads and threads > 0:
        try:
            import numba

            numba.set_num_threads(threads)
        except ImportError:
            pass


def _parse_float_list(text, fallback: float) -> list[float]:
    if text is None:
        return [fallback]
    if isinstance(text, (int, float)):
        return [float(text)]
    return [parse_scale(tok) for tok in str(text).split(",") if tok.strip()]


def cmd_solve(cfg: dict) -> int:
    problem = make_preset(cfg["preset"], cfg["scale"])
    mesh, bcs = problem.mesh, problem.bcs
    op = MatFreeOperator(
        mesh,
        build_edof(mesh),
        bcs,
        np.full(mesh.n_elem, 0.5),
        SimpParams(3.0),
        cfg["precision"],
        cfg["variant"],
        cfg["scatter"],
        backend=cfg["backend"],
    )
    u, report = solve_equilibrium(op, bcs.force, CgConfig(max_iter=cfg["cg_cap"]))
    out = Path(cfg["out"])
    stem = f"solve_{cfg['preset']}_{cfg['precision']}_{cfg['variant']}"
    payload = {
        "preset": cfg["preset"],
        "scale": cfg["scale"],
        "n_elem": mesh.n_elem,
        "n_dof": mesh.n_dof,
        "scatter": cfg["scatter"],
        "backend": op.backend_name,
        "converged": report.converged,
        "termination": report.termination,
        "iterations": report.iterations,
        "rel_residual": report.rel_residual,
        "verified_rel_residual": report.verified_rel_residual,
        "compliance": report.compliance,
        "matvecs": report.matvecs,
        "wall_time_s": report.wall_time,
        "precision": report.precision,
        "variant": report.variant,
    }
    io.write_json(out / f"{stem}.json", payload)
    io.write_residual_history(out / f"{stem}_residuals.csv", report.residual_history)
    print(
        f"{stem}: {report.termination} in {report.iterations} iterations, "
        f"compliance {io.format_float(report.compliance)}"
    )
    return 0


def cmd_simp(cfg: dict) -> int:
    problem = make_preset(cfg["preset"], cfg["scale"])
    config = SimpConfig(
        schedule=default_schedule(cfg["iters"]),
        precision=cfg["precision"],
        variant=cfg["variant"],
        scatter=cfg["scatter"],
        seed=cfg["seed"],
        cg=CgConfig(max_iter=cfg["cg_cap"]),
        backend=cfg["backend"],
    )
    result = run_simp(problem, config)
    out = Path(cfg["out"])
    stem = f"simp_{cfg['preset']}_{cfg['precision']}"
    history_rows = [asdict(rec) for rec in result.history]
    io.write_csv(out / f"{stem}_history.csv", HISTORY_COLUMNS, history_rows)
    selected = result.selected
    summary = {
        "preset": cfg["preset"],
        "scale": cfg["scale"],
        "dims": [problem.mesh.nelx, problem.mesh.nely, problem.mesh.nelz],
        "volume_fraction": problem.volume_fraction,
        "precision": cfg["precision"],
        "variant": cfg["variant"],
        "scatter": cfg["scatter"],
        "iters": cfg["iters"],
        "cg_cap": cfg["cg_cap"],
        "seed": cfg["seed"],
        "selected": {
            "iteration": selected.iteration,
            "compliance": selected.compliance,
            "grayness": selected.grayness,
            "p": selected.p,
            "beta": selected.beta,
        },
        "restart_count": result.restart_count,
        "total_cg_iterations": result.total_cg_iterations,
        "wall_s": result.wall_s,
        "history": history_rows,
    }
    io.write_json(out / f"{stem}_summary.json", summary)
    dims = (problem.mesh.nelx, problem.mesh.nely, problem.mesh.nelz)
    io.write_density(out / f"{stem}_selected", selected.rho_phys, dims)
    print(
        f"{stem}: selected iteration {selected.iteration}, "
        f"compliance {io.format_float(selected.compliance)}, "
        f"grayness {io.format_float(selected.grayness)}, restarts {result.restart_count}"
    )
    return 0


def cmd_kappa(cfg: dict) -> int:
    scales = _parse_float_list(cfg["scales"], cfg["scale"])
    p_values = _parse_float_list(cfg["p_values"], 3.0)
    reports = []
    for scale in scales:
        problem = make_preset(cfg["preset"], scale)
        mesh = problem.mesh
        edof = build_edof(mesh)
        rho = np.full(mesh.n_elem, 0.5)
        for p in p_values:
            reports.append(
                estimate_kappa(
                    mesh, problem.bcs, rho, SimpParams(p), edof=edof, backend=cfg["backend"]
                )
            )
    rows = kappa_csv_rows(reports)
    out = Path(cfg["out"])
    io.write_csv(out / f"kappa_{cfg['preset']}.csv", list(KAPPA_CSV_COLUMNS), rows)
    io.write_json(out / f"kappa_{cfg['preset']}.json", {"preset": cfg["preset"], "rows": rows})
    for row in rows:
        print(
            f"n_elem {row['n_elem']:>8d}  p {row['p']:>4.2f}  "
            f"kappa {io.format_float(row['kappa'])}  eps_kappa {io.format_float(row['eps_kappa'])}"
        )
    return 0


def cmd_bf16_study(cfg: dict) -> int:
    scales = _parse_float_list(cfg["scales"], cfg["scale"])
    records = []
    columns = None
    for scale in scales:
        problem = make_preset(cfg["preset"], scale)
        report = run_bf16_study(problem, CgConfig(max_iter=cfg["cg_cap"]), backend=cfg["backend"])
        records.extend(report.records)
        columns = report.columns
    out = Path(cfg["out"])
    io.write_csv(out / f"bf16_study_{cfg['preset']}.csv", columns, records)
    io.write_json(
        out / f"bf16_study_{cfg['preset']}.json", {"preset": cfg["preset"], "rows": records}
    )
    for row in records:
        print(
            f"n_elem {row['n_elem']:>8d}  {row['label']:<10s} "
            f"compliance {io.format_float(row['compliance']):>12s}  "
            f"delta_c {io.format_float(row['delta_c_vs_ref'])}"
        )
    return 0


def cmd_bench(cfg: dict) -> int:
    problem = make_preset(cfg["preset"], cfg["scale"])
    n_elem = problem.mesh.n_elem
    precisions = ("fp64", "fp32")
    backends = available_backends() if cfg["compare_backends"] else None
    report = run_matvec_suite(
        n_elem,
        precisions=precisions,
        scatter=cfg["scatter"],
        index_pattern=cfg["pattern"],
        repeats=cfg["repeats"],
        backend=cfg["backend"],
        backends=backends,
        seed=cfg["seed"],
    )
    out = Path(cfg["out"])
    report.to_csv(out / f"bench_{cfg['preset']}.csv")
    io.write_json(
        out / f"bench_{cfg['preset']}.json",
        {"preset": cfg["preset"], "n_elem": n_elem, "rows": report.records},
    )
    for row in report.records:
        speedup = row["speedup_vs_fp64_3stage"]
        speedup_txt = io.format_float(speedup) if isinstance(speedup, float) else "n/a"
        print(
            f"{row['backend']:>5s} {row['precision']:>4s} {row['variant']:<11s} "
            f"mean {row['mean_us']:10.1f} us  speedup {speedup_txt}"
        )
    return 0


def cmd_export(cfg: dict) -> int:
    run_dir = Path(cfg["run"] or cfg["out"])
    snapshot = run_dir / f"simp_{cfg['preset']}_{cfg['precision']}_selected"
    if not snapshot.with_suffix(".json").exists():
        raise FileNotFoundError(
            f"no density snapshot at {snapshot}.json - run the simp command first"
        )
    rho, dims = io.read_density(snapshot)
    out = Path(cfg["out"])
    stem = f"export_{cfg['preset']}"
    bin_path, sidecar = io.write_density(out / f"{stem}_density", rho, dims)
    vtk_path = io.write_vtk(out / f"{stem}.vtk", rho, dims)
    written = [bin_path, sidecar, vtk_path]
    if cfg["slices"]:
        written.extend(io.write_slices(out / stem, rho, dims))
    for path in written:
        print(f"wrote {path}")
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "simp": cmd_simp,
    "kappa": cmd_kappa,
    "bf16-study": cmd_bf16_study,
    "bench": cmd_bench,
    "export": cmd_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_options(args)
        _set_threads(cfg["threads"])
        return COMMANDS[args.command](cfg)
    except (ValueError, RuntimeError, AssertionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

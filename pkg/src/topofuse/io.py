"""Artifact serialization: CSV/JSON reports, density snapshots, VTK export.

Numeric text output uses 9 significant digits everywhere, which makes one
emit/parse cycle a fixed point: parsing a written file and writing it again
reproduces the bytes. Density snapshots are kept lossless (flat binary plus a
JSON sidecar); the VTK file targets external viewers only.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.9g"
DENSITY_ORDER = "x-fastest"  # element index = ix + iy*nelx + iz*nelx*nely


def format_float(x: float) -> str:
    return FLOAT_FMT % float(x)


def format_value(v) -> str:
    """One CSV cell: ints verbatim, floats at 9 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def parse_value(text: str):
    """Inverse of format_value for scalar cells."""
    if text == "True":
        return True
    if text == "False":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_csv(path, columns, rows) -> None:
    """Rows are dicts keyed by column name; cells go through format_value."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(row.get(c, "")) for c in columns])


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        rows = [{c: parse_value(v) for c, v in zip(columns, line)} for line in reader]
    return columns, rows


def jsonable(obj):
    """Recursively convert reports to JSON-safe values, floats at 9 digits."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(format_float(obj))
    return obj


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_residual_history(path, history) -> None:
    rows = [{"iteration": i, "rel_residual": float(r)} for i, r in enumerate(history)]
    write_csv(path, ["iteration", "rel_residual"], rows)


def write_density(path_base, rho: np.ndarray, dims: tuple[int, int, int]) -> tuple[Path, Path]:
    """Lossless snapshot: <base>.bin raw float64 plus <base>.json sidecar."""
    nelx, nely, nelz = (int(d) for d in dims)
    rho = np.ascontiguousarray(rho, dtype=np.float64)
    if rho.size != nelx * nely * nelz:
        raise ValueError(f"density size {rho.size} != {nelx}*{nely}*{nelz}")
    base = Path(path_base)
    base.parent.mkdir(parents=True, exist_ok=True)
    bin_path = base.with_suffix(".bin")
    sidecar_path = base.with_suffix(".json")
    rho.tofile(bin_path)
    sidecar = {
        "dims": [nelx, nely, nelz],
        "order": DENSITY_ORDER,
        "dtype": "float64",
        "count": int(rho.size),
    }
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return bin_path, sidecar_path


def read_density(path_base) -> tuple[np.ndarray, tuple[int, int, int]]:
    base = Path(path_base)
    with open(base.with_suffix(".json")) as fh:
        sidecar = json.load(fh)
    if sidecar.get("order") != DENSITY_ORDER or sidecar.get("dtype") != "float64":
        raise ValueError(f"unsupported density snapshot layout: {sidecar}")
    rho = np.fromfile(base.with_suffix(".bin"), dtype=np.float64)
    dims = tuple(int(d) for d in sidecar["dims"])
    if rho.size != sidecar["count"] or rho.size != dims[0] * dims[1] * dims[2]:
        raise ValueError("density snapshot does not match its sidecar")
    return rho, dims


def write_vtk(path, rho: np.ndarray, dims: tuple[int, int, int]) -> Path:
    """Legacy-ASCII STRUCTURED_POINTS file with density as CELL_DATA."""
    nelx, nely, nelz = (int(d) for d in dims)
    rho = np.asarray(rho, dtype=np.float64)
    if rho.size != nelx * nely * nelz:
        raise ValueError(f"density size {rho.size} != {nelx}*{nely}*{nelz}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "# vtk DataFile Version 3.0",
        "density field",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nelx + 1} {nely + 1} {nelz + 1}",
        "ORIGIN 0 0 0",
        "SPACING 1 1 1",
        f"CELL_DATA {rho.size}",
        "SCALARS density double 1",
        "LOOKUP_TABLE default",
    ]
    # cell data in x-fastest order matches the element numbering directly
    lines.extend(format_float(v) for v in rho)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk_cell_data(path) -> tuple[np.ndarray, tuple[int, int, int]]:
    lines = Path(path).read_text().splitlines()
    dims = None
    start = None
    for i, line in enumerate(lines):
        if line.startswith("DIMENSIONS"):
            nx, ny, nz = (int(t) for t in line.split()[1:4])
            dims = (nx - 1, ny - 1, nz - 1)
        elif line.startswith("LOOKUP_TABLE"):
            start = i + 1
            break
    if dims is None or start is None:
        raise ValueError(f"not a structured-points density file: {path}")
    values = np.array([float(t) for t in lines[start:] if t.strip()], dtype=np.float64)
    return values, dims


def write_slices(path_base, rho: np.ndarray, dims: tuple[int, int, int]) -> list[Path]:
    """Mid-plane text grids, one file per axis, rows printed top row last.

    Grayscale values use a fixed %.3f so the files are diffable; these are
    viewer aids, not the lossless snapshot.
    """
    nelx, nely, nelz = (int(d) for d in dims)
    grid = np.asarray(rho, dtype=np.float64).reshape(nelz, nely, nelx)
    base = Path(path_base)
    base.parent.mkdir(parents=True, exist_ok=True)
    planes = {
        "z": grid[nelz // 2, :, :],  # (nely, nelx)
        "y": grid[:, nely // 2, :],  # (nelz, nelx)
        "x": grid[:, :, nelx // 2],  # (nelz, nely)
    }
    written = []
    for axis, plane in planes.items():
        out = base.parent / f"{base.name}_slice_{axis}.txt"
        rows = ["  ".join("%.3f" % v for v in row) for row in plane]
        out.write_text("\n".join(rows) + "\n")
        written.append(out)
    return written

"""Reading and writing fields, grids, checkpoints, traces and meshes."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Tuple

import numpy as np
from scipy.interpolate import RectBivariateSpline

from src.core.exceptions import ConfigError
from src.models.fields import CapGrid, EmbeddedSurface, ScalarField
from src.models.models import StepRecord

logger = logging.getLogger(__name__)

CSV_HEADER = "s,phi,value"


def write_field_csv(field: ScalarField, path: Path) -> Path:
    """
    Write a field as `s,phi,value` rows, one per node, s running fastest.

    Args:
        field: the nodal values to write.
        path: target file; missing parent directories are created.

    Returns:
        Path: the written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.column_stack([field.grid.s_nodes, field.grid.phi_nodes, field.values])
    np.savetxt(path, data, delimiter=",", header=CSV_HEADER, comments="", fmt="%.17g")
    return path


def read_field_csv(path: Path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw (s, phi, value) columns of a field CSV."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"density file not found: {path}")
    with path.open() as handle:
        header = handle.readline().strip().replace(" ", "")
    if header != CSV_HEADER:
        raise ConfigError(f"{path}: expected header '{CSV_HEADER}', got '{header}'")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1], data[:, 2]


def field_from_csv(path: Path, grid: CapGrid) -> ScalarField:
    """
    Load a CSV field onto `grid`. A CSV written on a different polar grid is
    resampled with a bicubic spline in (s, phi), periodic in phi.
    """
    s, phi, values = read_field_csv(path)
    s_axis = np.unique(s)
    phi_axis = np.unique(phi)
    if s_axis.size * phi_axis.size != values.size:
        raise ConfigError(f"{path}: nodes do not form a tensor (s, phi) grid")
    order = np.lexsort((s, phi))
    table = values[order].reshape(phi_axis.size, s_axis.size)

    if s_axis.size == grid.ns and phi_axis.size == grid.nphi and np.allclose(
        s_axis, grid.s, rtol=0.0, atol=1e-12
    ):
        return ScalarField(grid, table.ravel())

    logger.info(
        "Resampling %s from a %dx%d grid onto %dx%d (bicubic)",
        path, s_axis.size, phi_axis.size, grid.ns, grid.nphi,
    )
    period = 2.0 * np.pi
    phi_ext = np.concatenate([phi_axis[-3:] - period, phi_axis, phi_axis[:3] + period])
    table_ext = np.concatenate([table[-3:], table, table[:3]], axis=0)
    spline = RectBivariateSpline(phi_ext, s_axis, table_ext, kx=3, ky=3)
    s_target = np.clip(grid.s_nodes, s_axis[0], s_axis[-1])
    resampled = spline.ev(grid.phi_nodes, s_target)
    return ScalarField(grid, resampled)


def write_grid_json(grid: CapGrid, path: Path) -> Path:
    """
    Write the grid metadata (theta, Ns, Nphi) as JSON.

    Args:
        grid: the grid to describe.
        path: target file.

    Returns:
        Path: the written file.
    """
    path = Path(path)
    path.write_text(json.dumps({"theta": grid.theta, "Ns": grid.ns, "Nphi": grid.nphi}, indent=2))
    return path


def read_grid_json(path: Path) -> Dict[str, Any]:
    meta = json.loads(Path(path).read_text())
    missing = {"theta", "Ns", "Nphi"} - set(meta)
    if missing:
        raise ConfigError(f"{path}: grid metadata lacks {sorted(missing)}")
    return meta


def write_checkpoint(
    directory: Path, t: float, dt: float, h: ScalarField, json_name: str, csv_name: str
) -> Path:
    """
    Save a continuation state: the field as CSV next to a JSON header.

    Args:
        directory: checkpoint directory, created if missing.
        t: homotopy parameter of the accepted step.
        dt: step length to try next.
        h: the accepted solution at t.
        json_name: file name of the header.
        csv_name: file name of the field.

    Returns:
        Path: the JSON header, which `read_checkpoint` accepts.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_field_csv(h, directory / csv_name)
    header = {
        "t": t,
        "dt": dt,
        "theta": h.grid.theta,
        "Ns": h.grid.ns,
        "Nphi": h.grid.nphi,
        "field": csv_name,
    }
    path = directory / json_name
    path.write_text(json.dumps(header, indent=2, sort_keys=True))
    logger.info("Checkpoint written to %s (t=%.6g)", path, t)
    return path


def read_checkpoint(path: Path, grid: CapGrid) -> Tuple[float, float, ScalarField]:
    path = Path(path)
    if path.is_dir():
        candidates = sorted(path.glob("checkpoint*.json"))
        if not candidates:
            raise ConfigError(f"no checkpoint found in {path}")
        path = candidates[0]
    header = json.loads(path.read_text())
    if header["Ns"] != grid.ns or header["Nphi"] != grid.nphi or abs(header["theta"] - grid.theta) > 1e-15:
        raise ConfigError(f"checkpoint {path} was written for a different grid")
    h = field_from_csv(path.parent / header["field"], grid)
    return float(header["t"]), float(header["dt"]), h


def write_trace_csv(steps: Iterable[StepRecord], path: Path) -> Path:
    """
    Write the accepted continuation steps, one row per step.

    Args:
        steps: step records of a run; rejected steps are skipped.
        path: target file.

    Returns:
        Path: the written file.
    """
    rows = [(s.t, s.iterations, s.residual, s.cone_margin) for s in steps if s.accepted]
    data = np.array(rows, dtype=float).reshape(-1, 4)
    np.savetxt(
        path, data, delimiter=",", header="t,newton_iterations,residual,cone_margin",
        comments="", fmt=["%.17g", "%d", "%.6e", "%.6e"],
    )
    return Path(path)


def write_obj(surface: EmbeddedSurface, path: Path) -> Path:
    """
    Triangulate the polar grid: quads between rings, a fan around a pole
    vertex placed at the mean of the first ring.

    Args:
        surface: the reconstructed surface with its normals.
        path: target .obj file.

    Returns:
        Path: the written file.
    """
    grid = surface.grid
    ns, nphi = grid.ns, grid.nphi
    points = surface.points
    normals = surface.normals
    first_ring = np.arange(nphi) * ns
    pole = points[first_ring].mean(axis=0)

    lines = ["# capillary surface", f"# theta {grid.theta:.17g} Ns {ns} Nphi {nphi}"]
    lines += [f"v {x:.12g} {y:.12g} {z:.12g}" for x, y, z in points]
    lines.append(f"v {pole[0]:.12g} {pole[1]:.12g} {pole[2]:.12g}")
    lines += [f"vn {x:.12g} {y:.12g} {z:.12g}" for x, y, z in normals]
    lines.append("vn 0 0 1")
    pole_id = grid.size + 1

    def vid(i: int, j: int) -> int:
        return (j % nphi) * ns + i + 1

    for j in range(nphi):
        a, b = vid(0, j), vid(0, j + 1)
        lines.append(f"f {pole_id}//{pole_id} {a}//{a} {b}//{b}")
    for j in range(nphi):
        for i in range(ns - 1):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            lines.append(f"f {a}//{a} {b}//{b} {c}//{c}")
            lines.append(f"f {a}//{a} {c}//{c} {d}//{d}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_boundary_polyline(surface: EmbeddedSurface, path: Path) -> Path:
    """
    Write the boundary ring s = theta as a closed OBJ polyline.

    Args:
        surface: the reconstructed surface.
        path: target .obj file.

    Returns:
        Path: the written file.
    """
    grid = surface.grid
    ring = surface.points[grid.boundary_nodes]
    lines = ["# capillary boundary (s = theta)"]
    lines += [f"v {x:.12g} {y:.12g} {z:.12g}" for x, y, z in ring]
    ids = " ".join(str(i + 1) for i in range(len(ring)))
    lines.append(f"l {ids} 1")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_report_json(report: Dict[str, Any], path: Path) -> Path:
    """
    Write a run report as sorted, indented JSON.

    Args:
        report: JSON-ready mapping; other values are written with str().
        path: target file; missing parent directories are created.

    Returns:
        Path: the written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True, default=str) + "\n")
    return path

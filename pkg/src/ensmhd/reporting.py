"""Delimited output, legacy VTK export and figure rendering.

Every experiment writes CSV tables first (the primary, machine-readable
record) and renders matplotlib figures next to them; field snapshots go
out as legacy ASCII VTK for external viewers.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import matplotlib.tri as mtri
import numpy as np


def ensure_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------


def write_rate_csv(path, table) -> Path:
    """Rate table with schema h_or_dt, err_v, rate_v, err_w, rate_w."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["h_or_dt", "err_v", "rate_v", "err_w", "rate_w"])
        for row in table.rows:
            writer.writerow(
                [
                    f"{row.step:.10g}",
                    f"{row.err_v:.6e}",
                    "" if row.rate_v is None else f"{row.rate_v:.2f}",
                    f"{row.err_w:.6e}",
                    "" if row.rate_w is None else f"{row.rate_w:.2f}",
                ]
            )
    return path


def write_energy_csv(path, times, energies) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "time", "energy"])
        for n, (t, e) in enumerate(zip(times, energies)):
            writer.writerow([n, f"{t:.10g}", f"{e:.12e}"])
    return path


def write_distance_csv(path, rows) -> Path:
    """Channel comparison table: eps, l2_distance_to_single_run."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["eps", "l2_distance"])
        for eps, dist in rows:
            writer.writerow([f"{eps:.10g}", f"{dist:.6e}"])
    return path


# ----------------------------------------------------------------------
# legacy VTK
# ----------------------------------------------------------------------


def write_vtk(path, mesh, point_data=None, title="ensmhd fields") -> Path:
    """Legacy ASCII VTK unstructured grid with optional vertex data.

    ``point_data`` maps names to (nv,) scalar or (nv, 2) vector arrays.
    """
    path = Path(path)
    nv, nt = mesh.num_vertices, mesh.num_triangles
    with path.open("w") as fh:
        fh.write("# vtk DataFile Version 2.0\n")
        fh.write(f"{title}\n")
        fh.write("ASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.12g} {y:.12g} 0.0\n")
        fh.write(f"CELLS {nt} {4 * nt}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {nt}\n")
        fh.write("5\n" * nt)
        if point_data:
            fh.write(f"POINT_DATA {nv}\n")
            for name, values in point_data.items():
                values = np.asarray(values)
                if values.ndim == 1:
                    fh.write(f"SCALARS {name} double\nLOOKUP_TABLE default\n")
                    for val in values:
                        fh.write(f"{val:.12g}\n")
                else:
                    fh.write(f"VECTORS {name} double\n")
                    for vx, vy in values:
                        fh.write(f"{vx:.12g} {vy:.12g} 0.0\n")
    return path


# ----------------------------------------------------------------------
# figures
# ----------------------------------------------------------------------


def plot_rate_table(path, table, reference_order=None) -> Path:
    path = Path(path)
    steps = np.array([row.step for row in table.rows])
    err_v = np.array([row.err_v for row in table.rows])
    err_w = np.array([row.err_w for row in table.rows])

    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    ax.loglog(steps, err_v, "o-", label="field v")
    ax.loglog(steps, err_w, "s-", label="field w")
    if reference_order is not None:
        ref = err_v[0] * (steps / steps[0]) ** reference_order
        ax.loglog(steps, ref, "k--", lw=0.8, label=f"order {reference_order:g}")
    ax.set_xlabel(table.variable)
    ax.set_ylabel("ensemble-average error")
    ax.set_title(table.label)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_energy(path, times, energies, title="system energy") -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(times, energies, "o-", ms=3)
    ax.set_xlabel("time")
    ax.set_ylabel("energy")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_vertex_field(path, mesh, values, title="") -> Path:
    """Filled contours of a vertex-based scalar field."""
    path = Path(path)
    tri = mtri.Triangulation(mesh.vertices[:, 0], mesh.vertices[:, 1], mesh.triangles)
    width = float(np.ptp(mesh.vertices[:, 0]))
    height = float(np.ptp(mesh.vertices[:, 1]))
    scale = 5.0 / max(width, height)
    fig, ax = plt.subplots(figsize=(max(3.2, width * scale) + 1.2, max(2.6, height * scale)))
    im = ax.tricontourf(tri, np.asarray(values), levels=24, cmap="viridis")
    fig.colorbar(im, ax=ax, shrink=0.9)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path

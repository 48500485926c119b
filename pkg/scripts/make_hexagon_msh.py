"""Write a triangulated regular hexagon with a structured square patch at its centre.

The hexagon has circumradius 1 and vertices (+-1, 0), (+-1/2, +-sqrt(3)/2).
Away from the square the mesh is the equilateral lattice of spacing 1/n;
the square [-0.2, 0.2]^2 carries a right-triangle grid of the same spacing.
Every triangle has two vertices from one of the two point sets, so the
smallest element diameter equals the spacing exactly.

    python scripts/make_hexagon_msh.py 40 hexagon_n40.msh
"""
from __future__ import annotations

import argparse
import math

import numpy as np
from scipy.spatial import Delaunay

from layerdecay.mesh import GAMMA, Mesh, check_conformity, write_msh

SQUARE = 0.2
MARGIN = 0.6  # lattice points this many spacings around the square are dropped


def _lattice(n: int) -> np.ndarray:
    s = 1.0 / n
    i, j = np.meshgrid(np.arange(-2 * n, 2 * n + 1), np.arange(-n, n + 1))
    x = (i + 0.5 * j).ravel() * s
    y = (j * math.sqrt(3) / 2).ravel() * s
    tol = 1e-9
    inside = (np.abs(y) <= math.sqrt(3) / 2 + tol) & (
        math.sqrt(3) * np.abs(x) + np.abs(y) <= math.sqrt(3) + tol)
    return np.column_stack([x[inside], y[inside]])


def hexagon_mesh(n: int) -> Mesh:
    m = round(2 * SQUARE * n)
    if not math.isclose(m, 2 * SQUARE * n):
        raise ValueError("n must make the square side a whole number of spacings (n % 5 == 0)")
    s = 1.0 / n
    lat = _lattice(n)
    far = np.max(np.abs(lat), axis=1) > SQUARE + MARGIN * s
    lat = lat[far]
    g = -SQUARE + s * np.arange(m + 1)
    gx, gy = np.meshgrid(g, g)
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    pts = np.vstack([lat, grid])

    tri = Delaunay(pts, qhull_options="Qbb Qc Qz")
    if len(tri.coplanar):
        raise RuntimeError("Delaunay dropped points")
    simplices = tri.simplices
    cen = pts[simplices].mean(axis=1)
    keep = np.max(np.abs(cen), axis=1) > SQUARE
    simplices = simplices[keep]

    off = len(lat)
    I, J = np.meshgrid(np.arange(m), np.arange(m))
    I, J = I.ravel(), J.ravel()
    vid = lambda i, j: off + j * (m + 1) + i  # noqa: E731
    v00, v10, v11, v01 = vid(I, J), vid(I + 1, J), vid(I + 1, J + 1), vid(I, J + 1)
    square = np.vstack([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
    triangles = np.vstack([simplices, square])

    p = pts[triangles]
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = area < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    edges = np.sort(triangles[:, [[1, 2], [2, 0], [0, 1]]].reshape(-1, 2), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    bnd = uniq[counts == 1]
    mesh = Mesh(pts, triangles, bnd, np.full(len(bnd), GAMMA))
    check_conformity(mesh)
    return mesh


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("n", type=int, help="lattice points per unit length")
    ap.add_argument("out", help="output .msh path")
    args = ap.parse_args(argv)
    mesh = hexagon_mesh(args.n)
    write_msh(mesh, args.out)
    print(f"{args.out}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, "
          f"h = {mesh.h:.4g}, h_min = {mesh.h_min:.4g}")


if __name__ == "__main__":
    main()

"""Lagrange P1/P2 spaces on triangular meshes.

Local dof order: the three vertices, then the three edges, where local edge
``i`` is opposite local vertex ``i``.  Global numbering puts all vertex dofs
first (same index as the vertex) followed by one dof per mesh edge.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError
from .mesh import Mesh
from .quadrature import QuadratureRule, collapsed_gauss

_NODES = {
    1: np.eye(3),
    2: np.vstack([np.eye(3), [[0, .5, .5], [.5, 0, .5], [.5, .5, 0]]]),
}


def local_nodes(k: int) -> np.ndarray:
    """Barycentric coordinates of the local nodal points."""
    return _NODES[k]


def basis(k: int, bary: np.ndarray):
    """Shape function values and barycentric derivatives.

    Returns ``(phi, dphi)`` with shapes ``(nq, nloc)`` and ``(nq, nloc, 3)``;
    ``dphi[q, i, m]`` is the derivative of shape function ``i`` with respect
    to barycentric coordinate ``m``.
    """
    L = np.atleast_2d(np.asarray(bary, dtype=float))
    nq = L.shape[0]
    if k == 1:
        return L.copy(), np.broadcast_to(np.eye(3), (nq, 3, 3)).copy()
    if k != 2:
        raise InvalidArgumentError(f"unsupported degree {k}")
    phi = np.empty((nq, 6))
    dphi = np.zeros((nq, 6, 3))
    for i in range(3):
        phi[:, i] = L[:, i] * (2 * L[:, i] - 1)
        dphi[:, i, i] = 4 * L[:, i] - 1
    for i, (a, b) in enumerate([(1, 2), (2, 0), (0, 1)]):
        phi[:, 3 + i] = 4 * L[:, a] * L[:, b]
        dphi[:, 3 + i, a] = 4 * L[:, b]
        dphi[:, 3 + i, b] = 4 * L[:, a]
    return phi, dphi


def barycentric_gradients(mesh: Mesh) -> np.ndarray:
    """Physical gradients of the barycentric coordinates, shape ``(nt, 3, 2)``."""
    p = mesh.vertices[mesh.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns are edge vectors
    Jinv = np.linalg.inv(J)
    g = np.empty((mesh.n_triangles, 3, 2))
    g[:, 1] = Jinv[:, 0]
    g[:, 2] = Jinv[:, 1]
    g[:, 0] = -g[:, 1] - g[:, 2]
    return g


@dataclass(frozen=True, eq=False)
class FESpace:
    mesh: Mesh
    degree: int
    cell_dofs: np.ndarray   # (nt, nloc)
    points: np.ndarray      # (ndofs, 2)
    gamma_dofs: np.ndarray
    gamma_c_dofs: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.points.shape[0]

    @property
    def n_local(self) -> int:
        return self.cell_dofs.shape[1]

    @cached_property
    def boundary_dofs(self) -> np.ndarray:
        return np.union1d(self.gamma_dofs, self.gamma_c_dofs)

    @cached_property
    def interior_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_dofs, dtype=bool)
        mask[self.boundary_dofs] = False
        return np.flatnonzero(mask)

    @cached_property
    def grad_lambda(self) -> np.ndarray:
        return barycentric_gradients(self.mesh)

    def physical_basis(self, rule: QuadratureRule):
        """Shape values ``(nq, nloc)`` and physical gradients ``(nt, nq, nloc, 2)`` at rule points."""
        phi, dphi = basis(self.degree, rule.barycentric)
        grads = np.einsum("qim,emd->eqid", dphi, self.grad_lambda)
        return phi, grads

    def quadrature_points(self, rule: QuadratureRule) -> np.ndarray:
        """Physical quadrature points, shape ``(nt, nq, 2)``."""
        p = self.mesh.vertices[self.mesh.triangles]
        return np.einsum("qm,emd->eqd", rule.barycentric, p)

    def cells_of_dofs(self, dofs) -> np.ndarray:
        """Triangles owning at least one of *dofs*."""
        mask = np.zeros(self.n_dofs, dtype=bool)
        mask[np.asarray(dofs, dtype=np.int64)] = True
        return np.flatnonzero(mask[self.cell_dofs].any(axis=1))


def _edge_lookup(mesh: Mesh, pairs: np.ndarray) -> np.ndarray:
    nv = mesh.n_vertices
    keys = mesh.edges[:, 0] * nv + mesh.edges[:, 1]
    q = np.sort(pairs, axis=1)
    return np.searchsorted(keys, q[:, 0] * nv + q[:, 1])


def build_space(mesh: Mesh, k: int) -> FESpace:
    """Continuous Lagrange space of degree ``k`` (1 or 2) on *mesh*.

    A dof belongs to ``gamma_dofs`` when its nodal point lies on a GAMMA
    edge (endpoints included); the remaining boundary dofs form
    ``gamma_c_dofs``.
    """
    if k not in (1, 2):
        raise InvalidArgumentError(f"unsupported degree {k}; expected 1 or 2")
    nv = mesh.n_vertices
    gamma_e = mesh.gamma_edges
    all_b = mesh.boundary_edges
    gamma_v = np.unique(gamma_e)
    bnd_v = np.unique(all_b)
    if k == 1:
        cell_dofs = mesh.triangles.copy()
        points = mesh.vertices.copy()
        gamma = gamma_v
        bnd = bnd_v
    else:
        cell_dofs = np.hstack([mesh.triangles, nv + mesh.triangle_edges])
        mid = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
        points = np.vstack([mesh.vertices, mid])
        gamma = np.union1d(gamma_v, nv + _edge_lookup(mesh, gamma_e)) if len(gamma_e) else gamma_v
        bnd = np.union1d(bnd_v, nv + _edge_lookup(mesh, all_b))
    gamma = np.asarray(gamma, dtype=np.int64)
    gamma_c = np.setdiff1d(bnd, gamma).astype(np.int64)
    for a in (cell_dofs, points, gamma, gamma_c):
        a.setflags(write=False)
    return FESpace(mesh, k, cell_dofs, points, gamma, gamma_c)


def nodal_interpolate(space: FESpace, f: Callable) -> np.ndarray:
    """Coefficients ``c_i = f(a_i)`` at every nodal point ``a_i``.

    ``f`` is called once as ``f(x, y)`` with coordinate arrays.
    """
    x, y = space.points[:, 0], space.points[:, 1]
    vals = np.asarray(f(x, y), dtype=float)
    return np.broadcast_to(vals, x.shape).copy()


def evaluate(space: FESpace, coeffs, element: int, barycentric):
    """Value and physical gradient of the FE function at a point of *element*."""
    if not 0 <= element < space.mesh.n_triangles:
        raise InvalidArgumentError(f"element {element} out of range")
    lam = np.asarray(barycentric, dtype=float)
    if lam.shape != (3,) or np.any(lam < -1e-14) or abs(lam.sum() - 1) > 1e-12:
        raise InvalidArgumentError("barycentric coordinates must be nonnegative and sum to 1")
    phi, dphi = basis(space.degree, lam[None])
    c = np.asarray(coeffs, dtype=float)[space.cell_dofs[element]]
    grads = dphi[0] @ space.grad_lambda[element]  # (nloc, 2)
    return float(phi[0] @ c), c @ grads


def interpolation_stability(space: FESpace, n_trials: int = 100, seed: int = 0):
    """Measure the nodal product-interpolation constant on every element.

    For random pairs of FE functions ``phi``, ``psi`` computes per element the
    ratios ``|I_h(phi psi)|_{H^m(K)} / |phi psi|_{H^m(K)}`` for ``m = 0, 1``
    and returns the maxima ``(c0, c1)`` over all elements and trials.
    """
    rng = np.random.default_rng(seed)
    k = space.degree
    rule = collapsed_gauss(2 * k + 1)
    phi, grads = space.physical_basis(rule)
    w = rule.weights[None, :] * (2 * space.mesh.areas)[:, None]
    c0 = c1 = 0.0
    for _ in range(n_trials):
        a = rng.uniform(-1, 1, space.n_dofs)[space.cell_dofs]
        b = rng.uniform(-1, 1, space.n_dofs)[space.cell_dofs]
        av, bv = a @ phi.T, b @ phi.T  # (nt, nq)
        ag = np.einsum("ei,eqid->eqd", a, grads)
        bg = np.einsum("ei,eqid->eqd", b, grads)
        prod = av * bv
        prod_g = ag * bv[..., None] + bg * av[..., None]
        ab = a * b
        iv = ab @ phi.T
        ig = np.einsum("ei,eqid->eqd", ab, grads)
        l2_p = np.sum(w * prod ** 2, axis=1)
        l2_i = np.sum(w * iv ** 2, axis=1)
        h1_p = np.sum(w * np.sum(prod_g ** 2, axis=2), axis=1)
        h1_i = np.sum(w * np.sum(ig ** 2, axis=2), axis=1)
        c0 = max(c0, float(np.max(np.sqrt(l2_i / l2_p))))
        c1 = max(c1, float(np.max(np.sqrt(h1_i / h1_p))))
    return c0, c1


def write_coefficients_csv(path, coeffs) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["dof", "value"])
        for i, v in enumerate(np.asarray(coeffs, dtype=float)):
            wr.writerow([i, f"{v:.17g}"])


def read_coefficients_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = np.zeros(len(rows))
    for r in rows:
        out[int(r["dof"])] = float(r["value"])
    return out


def error_norms(space: FESpace, coeffs, exact: Callable, exact_grad: Callable, order: int = 6):
    """``(L2 error, H1-seminorm error)`` of the FE function against a smooth exact solution.

    ``exact(x, y)`` returns values and ``exact_grad(x, y)`` returns the pair
    ``(du/dx, du/dy)``; both are evaluated at the points of a collapsed Gauss
    rule with ``order`` points per direction.
    """
    rule = collapsed_gauss(order)
    phi, grads = space.physical_basis(rule)
    p = space.mesh.vertices[space.mesh.triangles]
    xq = np.einsum("qm,emd->eqd", rule.barycentric, p)
    c = np.asarray(coeffs, dtype=float)[space.cell_dofs]
    uh = c @ phi.T
    gh = np.einsum("ei,eqid->eqd", c, grads)
    u = np.asarray(exact(xq[..., 0], xq[..., 1]), dtype=float)
    gx, gy = exact_grad(xq[..., 0], xq[..., 1])
    w = rule.weights[None, :] * (2 * space.mesh.areas)[:, None]
    l2 = np.sum(w * (uh - u) ** 2)
    h1 = np.sum(w * ((gh[..., 0] - gx) ** 2 + (gh[..., 1] - gy) ** 2))
    return float(np.sqrt(l2)), float(np.sqrt(h1))

"""Layered element patches around a cell set and the discrete cutoff operator.

Closure intersection of two triangles of a conforming mesh is equivalent to
sharing a vertex, so patch growth is a breadth-first step over the
triangle/vertex incidence.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import List

import numpy as np

from .assembly import CoefficientField, local_mass, local_stiffness
from .errors import InvalidArgumentError, PreconditionError
from .mesh import Mesh, as_cellset
from .space import FESpace, basis, local_nodes


def _grow_mask(mesh: Mesh, mask: np.ndarray) -> np.ndarray:
    touched = (mesh.vertex_to_elements @ mask.astype(np.int32)) > 0
    return (mesh.incidence @ touched.astype(np.int32)) > 0


def grow_patch(mesh: Mesh, cells) -> np.ndarray:
    """``cells`` plus every triangle sharing at least one vertex with them."""
    mask = np.zeros(mesh.n_triangles, dtype=bool)
    mask[as_cellset(cells)] = True
    return as_cellset(np.flatnonzero(_grow_mask(mesh, mask) | mask))


@dataclass(frozen=True, eq=False)
class PatchLadder:
    mesh: Mesh
    base: np.ndarray
    layers: List[np.ndarray]   # P_0 = base, P_1, ..., P_L
    ell_max: int
    supp_lifting: np.ndarray

    def patch(self, ell: int) -> np.ndarray:
        if not 0 <= ell < len(self.layers):
            raise InvalidArgumentError(f"patch index {ell} outside 0..{len(self.layers) - 1}")
        return self.layers[ell]

    @property
    def depth(self) -> int:
        """Index L of the largest stored patch."""
        return len(self.layers) - 1


def build_ladder(mesh: Mesh, base, supp_lifting) -> PatchLadder:
    """Grow patches around *base* until they reach the lifting support.

    ``ell_max`` is the largest ``ell`` for which ``P_ell`` contains no
    triangle carrying a nonzero lifting coefficient, which is the same as
    ``P_ell`` staying clear of the set where the lifting is nonzero.  The
    ladder stores ``P_0 .. P_{ell_max + 1}`` when the latter exists.  With an
    empty support, growth stops once the patch covers the mesh (or stops
    growing) and ``ell_max`` is that saturation index.
    """
    base = as_cellset(base)
    supp = as_cellset(supp_lifting)
    gamma_v = np.zeros(mesh.n_vertices, dtype=bool)
    gamma_v[mesh.gamma_edges.ravel()] = True
    touching = gamma_v[mesh.triangles[base]].any(axis=1) if base.size else np.zeros(0, bool)
    if touching.any():
        bad = int(base[np.argmax(touching)])
        raise PreconditionError(f"base set is not suitable: element {bad} touches GAMMA")
    in_supp = np.zeros(mesh.n_triangles, dtype=bool)
    in_supp[supp] = True
    if in_supp[base].any():
        bad = int(base[np.argmax(in_supp[base])])
        raise PreconditionError(f"element {bad} of the base set lies in the lifting support")

    mask = np.zeros(mesh.n_triangles, dtype=bool)
    mask[base] = True
    layers = [base]
    while True:
        nxt = _grow_mask(mesh, mask) | mask
        if (nxt == mask).all():
            # saturated; only reachable without a lifting support in this component
            return PatchLadder(mesh, base, layers, len(layers) - 1, supp)
        layers.append(as_cellset(np.flatnonzero(nxt)))
        mask = nxt
        if in_supp[mask].any():
            return PatchLadder(mesh, base, layers, len(layers) - 2, supp)


def boundary_layer(ladder: PatchLadder, ell: int) -> np.ndarray:
    """``Z_ell = P_ell minus P_{ell-1}`` for ``1 <= ell <= L``."""
    if not 1 <= ell <= ladder.depth:
        raise InvalidArgumentError(f"layer index {ell} outside 1..{ladder.depth}")
    return as_cellset(np.setdiff1d(ladder.layers[ell], ladder.layers[ell - 1]))


@dataclass(frozen=True, eq=False)
class CutoffFunction:
    coeffs: np.ndarray
    ell: int

    @property
    def separates(self):
        return self.ell, self.ell + 1


def build_cutoff(space: FESpace, ladder: PatchLadder, ell: int) -> CutoffFunction:
    """Nodal indicator of the dofs of ``P_ell``: one there, zero at every other dof."""
    if not 0 <= ell < ladder.depth:
        raise InvalidArgumentError(f"cutoff index {ell} needs P_{ell + 1}; ladder depth is {ladder.depth}")
    eta = np.zeros(space.n_dofs)
    eta[np.unique(space.cell_dofs[ladder.layers[ell]])] = 1.0
    eta.setflags(write=False)
    return CutoffFunction(eta, ell)


def cutoff_apply(space: FESpace, cutoff: CutoffFunction, v) -> np.ndarray:
    """Nodal interpolant of ``eta * v``; coefficientwise product of nodal values."""
    v = np.asarray(v, dtype=float)
    if v.shape != (space.n_dofs,) or cutoff.coeffs.shape != v.shape:
        raise InvalidArgumentError("coefficient vector does not match the space")
    return cutoff.coeffs * v


def cutoff_gradient_constant(space: FESpace, cutoff: CutoffFunction) -> float:
    """``max_K ||grad eta||_inf * h_min``, evaluated at the local nodes of each element."""
    _, dphi = basis(space.degree, local_nodes(space.degree))
    c = cutoff.coeffs[space.cell_dofs]
    # gradient at local node q: sum_i c_i dphi[q, i, m] grad_lambda[e, m]
    g = np.einsum("ei,qim,emd->eqd", c, dphi, space.grad_lambda)
    gmax = float(np.max(np.linalg.norm(g, axis=2)))
    return gmax * space.mesh.h_min


def cutoff_layer_ratios(space: FESpace, ladder: PatchLadder, ell: int, A=None,
                        n_trials: int = 100, seed: int = 0):
    """Measured left/right ratios of the layer bounds for ``I_{h,ell}``.

    For random ``v`` and every ``K`` in ``Z_{ell+1}`` computes
    ``int_K v I v / ||v||^2_{L2(K)}`` and
    ``int_K A grad v . grad(I v) / (beta^1/2 ||v||_{a,K} (C_eta/h_min ||v||_K + alpha^-1/2 ||v||_{a,K}))``.
    Returns the maxima ``(r_l2, r_energy, c_eta)``.  Both ratios are bounded by
    the product-interpolation constant.
    """
    if A is None:
        A = CoefficientField.identity(space.mesh.n_triangles)
    Kloc = local_stiffness(space, A)
    Mloc = local_mass(space)
    cut = build_cutoff(space, ladder, ell)
    c_eta = cutoff_gradient_constant(space, cut)
    zone = boundary_layer(ladder, ell + 1)
    dofs = space.cell_dofs[zone]
    Kz, Mz = Kloc[zone], Mloc[zone]
    rng = np.random.default_rng(seed)
    r_l2 = r_en = 0.0
    hmin = space.mesh.h_min
    for _ in range(n_trials):
        v = rng.standard_normal(space.n_dofs)
        w = cutoff_apply(space, cut, v)
        vz, wz = v[dofs], w[dofs]
        l2 = np.einsum("ei,eij,ej->e", vz, Mz, vz)
        a_vv = np.einsum("ei,eij,ej->e", vz, Kz, vz)
        lhs_l2 = np.einsum("ei,eij,ej->e", vz, Mz, wz)
        lhs_en = np.einsum("ei,eij,ej->e", vz, Kz, wz)
        bound = np.sqrt(A.beta) * np.sqrt(a_vv) * (c_eta / hmin * np.sqrt(l2)
                                                   + np.sqrt(a_vv) / np.sqrt(A.alpha))
        r_l2 = max(r_l2, float(np.max(lhs_l2 / l2)))
        r_en = max(r_en, float(np.max(lhs_en / bound)))
    return r_l2, r_en, c_eta


def write_ladder_csv(path, ladder: PatchLadder) -> None:
    """Rows ``(layer, element)``: layer 0 is the base set, layer l >= 1 is Z_l."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["layer", "element"])
        for e in ladder.base:
            wr.writerow([0, int(e)])
        for ell in range(1, ladder.depth + 1):
            for e in boundary_layer(ladder, ell):
                wr.writerow([ell, int(e)])

"""Two-subdomain overlapping parallel Schwarz iteration on a structured rectangle.

Both subdomains are extracted from one parent grid, so exchanging interface
values is an exact copy of nodal coefficients through the parent numbering.
"""
from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import (DiscreteSolution, assemble_load, assemble_stiffness, solve_dirichlet)
from .errors import EstimationError, InvalidArgumentError, SolverError
from .mesh import GAMMA_C, Mesh, as_cellset, extract_submesh
from .space import FESpace, build_space

TRACE_COLUMNS = ("n", "E_total", "E_sub1", "E_sub2")
SWEEP_COLUMNS = ("ell_ov", "theta_geomean", "theta_sup")


def _parent_dof_map(parent: FESpace, sub: FESpace, cells: np.ndarray) -> np.ndarray:
    dof_map = np.full(sub.n_dofs, -1, dtype=np.int64)
    # submesh triangles keep the parent's local order, so local dofs line up
    dof_map[sub.cell_dofs] = parent.cell_dofs[cells]
    return dof_map


@dataclass(frozen=True, eq=False)
class Subdomain:
    parent: FESpace
    cells: np.ndarray
    mesh: Mesh
    space: FESpace
    dof_map: np.ndarray          # sub dof -> parent dof
    interface_dofs: np.ndarray   # sub-local, strictly inside the parent domain
    outer_dofs: np.ndarray       # sub-local, on the parent boundary
    stiffness: object = field(repr=False)
    _lu: object = field(repr=False)

    @property
    def inner_dofs(self) -> np.ndarray:
        return self.space.interior_dofs

    def restrict(self, parent_vector) -> np.ndarray:
        return np.asarray(parent_vector, dtype=float)[self.dof_map]

    def solve(self, load: np.ndarray, interface_values: np.ndarray) -> np.ndarray:
        """Discrete harmonic-plus-load solve with the given interface data and zero outer data."""
        u = np.zeros(self.space.n_dofs)
        u[self.interface_dofs] = interface_values
        inner = self.inner_dofs
        rhs = load[inner] - (self.stiffness @ u)[inner]
        u[inner] = self._lu.solve(rhs)
        return u

    def seminorm_sq(self, v) -> float:
        return float(v @ (self.stiffness @ v))


def _make_subdomain(parent: FESpace, cells) -> Subdomain:
    cells = as_cellset(cells)
    sub_mesh, _ = extract_submesh(parent.mesh, cells)
    space = build_space(sub_mesh, parent.degree)
    dof_map = _parent_dof_map(parent, space, cells)
    on_boundary = np.zeros(parent.n_dofs, dtype=bool)
    on_boundary[parent.boundary_dofs] = True
    g = space.gamma_dofs
    interface = g[~on_boundary[dof_map[g]]]
    outer = np.setdiff1d(space.boundary_dofs, interface)
    K = assemble_stiffness(space).tocsr()
    inner = space.interior_dofs
    lu = spla.splu(K[inner][:, inner].tocsc())
    return Subdomain(parent, cells, sub_mesh, space, dof_map, interface, outer, K, lu)


def split_columns(nx: int, ell_ov: int, split: Optional[int] = None):
    """1-based column ranges ``(first, last)`` of the two subdomains.

    The default split ``c = floor((nx - ell_ov) / 2)`` centres the overlap.
    """
    if int(ell_ov) != ell_ov or not 1 <= ell_ov <= nx - 2:
        raise InvalidArgumentError(f"overlap must be an integer in 1..{nx - 2}, got {ell_ov}")
    c = (nx - ell_ov) // 2 if split is None else int(split)
    if not 1 <= c or c + ell_ov > nx - 1:
        raise InvalidArgumentError(f"split column {c} leaves an empty side")
    return (1, c + ell_ov), (c + 1, nx)


def decompose_rectangle(mesh: Mesh, ell_ov: int, degree: int = 1,
                        split: Optional[int] = None, parent: Optional[FESpace] = None):
    """Split a structured rectangle into two subdomains overlapping by ``ell_ov`` columns."""
    if mesh.grid is None:
        raise InvalidArgumentError("decomposition needs a structured rectangle mesh")
    nx, ny = mesh.grid[0], mesh.grid[1]
    (a1, b1), (a2, b2) = split_columns(nx, ell_ov, split)
    if parent is None:
        parent = build_space(mesh, degree)
    cols = np.arange(mesh.n_triangles) // 2 % nx + 1
    return (_make_subdomain(parent, np.flatnonzero((cols >= a1) & (cols <= b1))),
            _make_subdomain(parent, np.flatnonzero((cols >= a2) & (cols <= b2))))


def global_reference(mesh: Mesh, f: Optional[Callable], tol: float = 1e-12,
                     degree: int = 1) -> DiscreteSolution:
    """Laplace solution with source ``f`` and zero data on the whole boundary."""
    mesh = mesh.with_tags(np.full(mesh.boundary_edges.shape[0], GAMMA_C))
    # direct solve keeps the reference accurate well below the iteration floor
    return solve_dirichlet(build_space(mesh, degree), lam=0.0, f=f, tol=tol, method="direct")


@dataclass
class SchwarzTrace:
    energies: List[float]                        # E_n = sum of subdomain errors
    sub_errors: List[tuple]                      # (|e1|^2, |e2|^2)
    reference_energy: float
    tol: float
    iterates: tuple = field(default=(), repr=False)

    @property
    def floor(self) -> float:
        return 100 * self.tol ** 2 * self.reference_energy

    @property
    def theta(self) -> float:
        return estimate_theta(self)

    def rows(self):
        for n, (e, (e1, e2)) in enumerate(zip(self.energies, self.sub_errors)):
            yield {"n": n, "E_total": e, "E_sub1": e1, "E_sub2": e2}


def _interface_source(dst: Subdomain, src: Subdomain) -> np.ndarray:
    """Positions in *src* of the parent dofs on *dst*'s interface."""
    lookup = np.full(dst.parent.n_dofs, -1, dtype=np.int64)
    lookup[src.dof_map] = np.arange(src.space.n_dofs)
    pos = lookup[dst.dof_map[dst.interface_dofs]]
    if np.any(pos < 0):
        raise InvalidArgumentError("interface of one subdomain is not covered by the other")
    return pos


def schwarz_iterate(sub1: Subdomain, sub2: Subdomain, f: Optional[Callable], n_iters: int,
                    reference: DiscreteSolution, init=None, tol: float = 1e-12,
                    executor: Optional[Executor] = None,
                    keep_iterates: bool = False, stop_at_floor: bool = True) -> SchwarzTrace:
    """Parallel Schwarz sweeps starting from *init* (zero by default).

    ``energies[0]`` is the error of the initial guess; entry ``n`` is the
    error after ``n`` sweeps.  Both subdomain solves of a sweep use the
    previous iterates.  The loop stops early once the error drops below
    ``100 tol^2 |||u_h|||^2`` unless ``stop_at_floor`` is false.
    """
    if sub1.parent is not sub2.parent:
        raise InvalidArgumentError("subdomains must share a parent space")
    if reference.space.n_dofs != sub1.parent.n_dofs:
        raise InvalidArgumentError("reference was not solved on the parent space")
    if n_iters < 0:
        raise InvalidArgumentError("n_iters must be nonnegative")
    subs = (sub1, sub2)
    if init is None:
        u = [np.zeros(s.space.n_dofs) for s in subs]
    else:
        u = [np.array(v, dtype=float) for v in init]
        if any(v.shape != (s.space.n_dofs,) for v, s in zip(u, subs)):
            raise InvalidArgumentError("init vectors do not match the subdomain spaces")
    loads = [assemble_load(s.space, f) for s in subs]
    refs = [s.restrict(reference.u) for s in subs]
    src = [_interface_source(sub1, sub2), _interface_source(sub2, sub1)]
    ref_energy = float(reference.u @ (assemble_stiffness(reference.space) @ reference.u))
    trace = SchwarzTrace([], [], ref_energy, tol)
    history = []

    def record():
        e = tuple(s.seminorm_sq(v - r) for s, v, r in zip(subs, u, refs))
        trace.sub_errors.append(e)
        trace.energies.append(e[0] + e[1])
        if keep_iterates:
            history.append(tuple(v.copy() for v in u))

    def step(i, data):
        return subs[i].solve(loads[i], data)

    record()
    for n in range(1, n_iters + 1):
        if stop_at_floor and trace.energies[-1] < trace.floor:
            break
        data = (u[1][src[0]], u[0][src[1]])
        try:
            if executor is None:
                new = [step(0, data[0]), step(1, data[1])]
            else:
                futures = [executor.submit(step, i, data[i]) for i in (0, 1)]
                new = [fut.result() for fut in futures]
        except (RuntimeError, SolverError) as exc:
            raise SolverError(f"subdomain solve failed in iteration {n}: {exc}") from exc
        u = new
        record()
    trace.iterates = tuple(history)
    return trace


def estimate_theta(trace, floor: Optional[float] = None, with_sup: bool = False):
    """Geometric mean of successive error ratios before the tolerance floor.

    Accepts a :class:`SchwarzTrace` or a plain sequence of error energies.
    With ``with_sup`` returns ``(geomean, supremum)``.
    """
    if isinstance(trace, SchwarzTrace):
        values = trace.energies
        if floor is None:
            floor = trace.floor
    else:
        values = list(trace)
    floor = 0.0 if floor is None else floor
    usable = []
    for v in values:
        if not v > floor:
            break
        usable.append(float(v))
    if len(usable) < 3:
        raise EstimationError(f"need at least 3 error values above the floor, got {len(usable)}")
    m = len(usable) - 1
    geo = math.exp((math.log(usable[-1]) - math.log(usable[0])) / m)
    if not with_sup:
        return geo
    sup = max(b / a for a, b in zip(usable, usable[1:]))
    return geo, sup


def restricted_init(subs: Sequence[Subdomain], parent_vector) -> tuple:
    return tuple(s.restrict(parent_vector) for s in subs)

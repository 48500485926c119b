"""Assembly and solution of -div(A grad u) + lam^2 u = f with Dirichlet data.

Dirichlet conditions are imposed by eliminating all boundary dofs: the
solution is split as ``u = u0 + ug`` where ``ug`` is the nodal lifting of the
boundary datum and ``u0`` solves the reduced SPD system on interior dofs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, SingularProblemError, SolverError
from .mesh import as_cellset
from .quadrature import quadrature
from .space import FESpace


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Piecewise-constant symmetric positive definite 2x2 coefficient, one matrix per element."""

    matrices: np.ndarray  # (nt, 2, 2)

    def __post_init__(self):
        m = np.array(self.matrices, dtype=float)
        if m.ndim != 3 or m.shape[1:] != (2, 2):
            raise InvalidArgumentError("coefficient matrices must have shape (nt, 2, 2)")
        if not np.allclose(m, m.transpose(0, 2, 1), rtol=1e-12, atol=0):
            raise InvalidArgumentError("coefficient matrices must be symmetric")
        if np.any(np.linalg.eigvalsh(m)[:, 0] <= 0):
            raise InvalidArgumentError("coefficient matrices must be positive definite")
        m.setflags(write=False)
        object.__setattr__(self, "matrices", m)

    @classmethod
    def identity(cls, n_triangles: int) -> "CoefficientField":
        return cls(np.broadcast_to(np.eye(2), (n_triangles, 2, 2)))

    @classmethod
    def constant(cls, n_triangles: int, A) -> "CoefficientField":
        return cls(np.broadcast_to(np.asarray(A, dtype=float), (n_triangles, 2, 2)))

    def scaled(self, s: float) -> "CoefficientField":
        return CoefficientField(s * self.matrices)

    @cached_property
    def _eigs(self):
        return np.linalg.eigvalsh(self.matrices)

    @property
    def alpha(self) -> float:
        return float(self._eigs[:, 0].min())

    @property
    def beta(self) -> float:
        return float(self._eigs[:, 1].max())


def _field(space: FESpace, A) -> CoefficientField:
    if A is None:
        return CoefficientField.identity(space.mesh.n_triangles)
    if not isinstance(A, CoefficientField):
        raise InvalidArgumentError("A must be a CoefficientField or None")
    if A.matrices.shape[0] != space.mesh.n_triangles:
        raise InvalidArgumentError("coefficient field does not match the mesh")
    return A


def local_stiffness(space: FESpace, A: Optional[CoefficientField] = None) -> np.ndarray:
    """Element stiffness matrices ``int_K A grad phi_i . grad phi_j``, shape ``(nt, nloc, nloc)``."""
    A = _field(space, A)
    rule = quadrature(2 * (space.degree - 1))
    _, grads = space.physical_basis(rule)
    w = rule.weights[None, :] * (2 * space.mesh.areas)[:, None]
    Ag = np.einsum("ecd,eqid->eqic", A.matrices, grads)
    return np.einsum("eq,eqic,eqjc->eij", w, Ag, grads)


def local_mass(space: FESpace) -> np.ndarray:
    """Element mass matrices ``int_K phi_i phi_j``, shape ``(nt, nloc, nloc)``."""
    rule = quadrature(2 * space.degree)
    phi, _ = space.physical_basis(rule)
    ref = np.einsum("q,qi,qj->ij", rule.weights, phi, phi)
    return (2 * space.mesh.areas)[:, None, None] * ref[None]


def assemble_global(space: FESpace, local: np.ndarray) -> sp.csr_matrix:
    dofs = space.cell_dofs
    nl = dofs.shape[1]
    rows = np.repeat(dofs, nl, axis=1).ravel()
    cols = np.tile(dofs, (1, nl)).ravel()
    n = space.n_dofs
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble_stiffness(space: FESpace, A: Optional[CoefficientField] = None) -> sp.csr_matrix:
    return assemble_global(space, local_stiffness(space, A))


def assemble_mass(space: FESpace) -> sp.csr_matrix:
    return assemble_global(space, local_mass(space))


def assemble_load(space: FESpace, f: Optional[Callable]) -> np.ndarray:
    """Load vector ``(f, phi_i)``; ``f(x, y)`` is evaluated at quadrature points."""
    out = np.zeros(space.n_dofs)
    if f is None:
        return out
    rule = quadrature(2 * space.degree)
    phi, _ = space.physical_basis(rule)
    xq = space.quadrature_points(rule)
    fq = np.broadcast_to(np.asarray(f(xq[..., 0], xq[..., 1]), dtype=float), xq.shape[:2])
    w = rule.weights[None, :] * (2 * space.mesh.areas)[:, None]
    local = np.einsum("eq,eq,qi->ei", w, fq, phi)
    np.add.at(out, space.cell_dofs.ravel(), local.ravel())
    return out


def nodal_lifting(space: FESpace, g: Optional[Callable]) -> np.ndarray:
    """Nodal lifting: ``g(a)`` at every GAMMA dof, zero elsewhere."""
    u = np.zeros(space.n_dofs)
    if g is None or space.gamma_dofs.size == 0:
        return u
    pts = space.points[space.gamma_dofs]
    vals = np.asarray(g(pts[:, 0], pts[:, 1]), dtype=float)
    u[space.gamma_dofs] = np.broadcast_to(vals, (pts.shape[0],))
    return u


def lifting_support(space: FESpace, lifting: np.ndarray) -> np.ndarray:
    """Cells owning at least one nonzero coefficient of *lifting*."""
    return as_cellset(space.cells_of_dofs(np.flatnonzero(lifting)))


def cg_solve(matrix, rhs, tol: float = 1e-12, max_iter: Optional[int] = None, x0=None,
             return_iterations: bool = False):
    """Jacobi-preconditioned conjugate gradients.

    Stops once the true residual satisfies ``||A x - b|| <= tol ||b||``.
    Raises :class:`SolverError` when ``max_iter`` is reached.
    """
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    A = sp.csr_matrix(matrix)
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = max(10 * n, 100)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        x[:] = 0.0
        return (x, 0) if return_iterations else x
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has a nonpositive diagonal entry; not SPD")
    inv_d = 1.0 / diag
    target = tol * bnorm
    r = b - A @ x
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    it = 0
    while True:
        if np.linalg.norm(r) <= target:
            r_true = b - A @ x
            if np.linalg.norm(r_true) <= target:
                break
            # recurrence drifted from the true residual; restart from it
            r = r_true
            z = inv_d * r
            p = z.copy()
            rz = r @ z
        if it >= max_iter:
            res = np.linalg.norm(b - A @ x) / bnorm
            raise SolverError(f"CG did not converge in {max_iter} iterations "
                              f"(relative residual {res:.3e})", residual=res, iterations=it)
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0:
            raise SolverError("matrix is not positive definite", iterations=it)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
    return (x, it) if return_iterations else x


@dataclass(eq=False)
class DiscreteSolution:
    space: FESpace
    lam: float
    A: CoefficientField
    u: np.ndarray
    lifting: np.ndarray
    support: np.ndarray
    iterations: int = 0
    tol: float = 1e-12
    _local: dict = field(default_factory=dict, repr=False)

    @property
    def u0(self) -> np.ndarray:
        return self.u - self.lifting

    @property
    def local_stiffness(self) -> np.ndarray:
        if "K" not in self._local:
            self._local["K"] = local_stiffness(self.space, self.A)
        return self._local["K"]

    @property
    def local_mass(self) -> np.ndarray:
        if "M" not in self._local:
            self._local["M"] = local_mass(self.space)
        return self._local["M"]

    @property
    def local_energy_matrices(self) -> np.ndarray:
        return self.local_stiffness + self.lam ** 2 * self.local_mass

    def element_form(self, v, w) -> np.ndarray:
        """Per-element ``int_K A grad v . grad w + lam^2 v w`` for coefficient vectors v, w."""
        dofs = self.space.cell_dofs
        return np.einsum("ei,eij,ej->e", np.asarray(v)[dofs], self.local_energy_matrices,
                         np.asarray(w)[dofs])

    @cached_property
    def element_energies(self) -> np.ndarray:
        return self.element_form(self.u, self.u)


def solve_dirichlet(space: FESpace, A: Optional[CoefficientField] = None, lam: float = 0.0,
                    g: Optional[Callable] = None, f: Optional[Callable] = None,
                    tol: float = 1e-12, max_iter: Optional[int] = None,
                    method: str = "cg", x0=None, check_assumption: bool = True) -> DiscreteSolution:
    """Solve the Dirichlet problem with datum ``g`` on GAMMA and zero on GAMMA_C.

    ``method`` is ``"cg"`` (Jacobi-preconditioned CG) or ``"direct"`` (sparse
    LU); both must meet the relative residual ``tol``.  ``x0`` is an optional
    initial guess for the full coefficient vector.

    The decay analysis needs ``lam > 0`` or a nonempty homogeneous part of
    the boundary; violating that raises :class:`SingularProblemError` unless
    ``check_assumption`` is false.  The reduced system itself stays SPD
    either way because every boundary dof is eliminated.
    """
    if lam < 0:
        raise InvalidArgumentError("lambda must be nonnegative")
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    if check_assumption and lam == 0 and space.mesh.gamma_c_edges.shape[0] == 0:
        raise SingularProblemError("lambda = 0 requires a nonempty homogeneous boundary part")
    A = _field(space, A)
    Kloc = local_stiffness(space, A)
    Mloc = local_mass(space)
    S = assemble_global(space, Kloc + lam ** 2 * Mloc)
    lifting = nodal_lifting(space, g)
    b = assemble_load(space, f) - S @ lifting
    inner = space.interior_dofs
    u = lifting.copy()
    iterations = 0
    if inner.size:
        S_ii = S[inner][:, inner]
        b_i = b[inner]
        if method == "cg":
            guess = None if x0 is None else np.asarray(x0, dtype=float)[inner]
            x, iterations = cg_solve(S_ii, b_i, tol=tol, max_iter=max_iter, x0=guess,
                                     return_iterations=True)
        elif method == "direct":
            x = spla.spsolve(S_ii.tocsc(), b_i)
            res = np.linalg.norm(S_ii @ x - b_i)
            if res > tol * max(np.linalg.norm(b_i), np.finfo(float).tiny):
                raise SolverError(f"direct solve residual {res:.3e} above tolerance", residual=res)
        else:
            raise InvalidArgumentError(f"unknown method {method!r}")
        u[inner] = x
    sol = DiscreteSolution(space, float(lam), A, u, lifting, lifting_support(space, lifting),
                           iterations, float(tol))
    sol._local.update(K=Kloc, M=Mloc)
    return sol


def energy_norm(solution: DiscreteSolution) -> float:
    return float(np.sqrt(max(solution.element_energies.sum(), 0.0)))


def h1_norm(space: FESpace, v) -> float:
    """Full H1 norm of a coefficient vector (identity coefficient)."""
    K = assemble_stiffness(space)
    M = assemble_mass(space)
    v = np.asarray(v, dtype=float)
    return float(np.sqrt(v @ (K @ v) + v @ (M @ v)))

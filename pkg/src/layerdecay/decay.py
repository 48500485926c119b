"""Patch energies, layer quotients and the flux identity behind the decay estimate."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .assembly import DiscreteSolution
from .errors import DegenerateProfileError, InvalidArgumentError, PreconditionError
from .mesh import as_cellset
from .patches import PatchLadder, boundary_layer, build_cutoff, cutoff_apply

PROFILE_COLUMNS = ("ell", "E", "E_rel", "Q")
SUMMARY_COLUMNS = ("lambda", "h", "h_min", "ell_max", "rho_hat", "mad", "scaled_rate")


def _element_energies(solution: DiscreteSolution) -> np.ndarray:
    # element matrices are PSD; clip roundoff-level negatives
    return np.maximum(solution.element_energies, 0.0)


def patch_energy(solution: DiscreteSolution, cells) -> float:
    """``sum_K int_K A grad u . grad u + lam^2 u^2`` over *cells*."""
    cells = as_cellset(cells)
    if cells.size and (cells[0] < 0 or cells[-1] >= solution.space.mesh.n_triangles):
        raise InvalidArgumentError("cell index out of range")
    return math.fsum(_element_energies(solution)[cells])


@dataclass(frozen=True, eq=False)
class DecayProfile:
    ladder: PatchLadder
    energies: np.ndarray     # E(0..ell_max)
    total: float
    relative: np.ndarray     # E_rel(0..ell_max)
    quotients: np.ndarray    # Q(0..ell_max-1)
    rho_hat: float
    mad: float
    h: float
    h_min: float
    lam: float

    @property
    def ell_max(self) -> int:
        return self.ladder.ell_max


def energy_profile(solution: DiscreteSolution, ladder: PatchLadder) -> DecayProfile:
    if not np.array_equal(ladder.supp_lifting, solution.support):
        raise PreconditionError("ladder was not built for this solution's lifting support")
    e = _element_energies(solution)
    total = math.fsum(e)
    # energies at roundoff level relative to the boundary data carry no decay information
    lift = math.fsum(solution.element_form(solution.lifting, solution.lifting))
    if not total > solution.tol * lift:
        raise DegenerateProfileError(
            f"solution energy {total:.3e} is zero up to solver tolerance; no decay profile")
    L = ladder.ell_max
    energies = np.empty(L + 1)
    energies[0] = math.fsum(e[ladder.layers[0]])
    for ell in range(1, L + 1):
        # accumulating nonnegative layer sums keeps E monotone in floating point
        energies[ell] = energies[ell - 1] + math.fsum(e[boundary_layer(ladder, ell)])
    rel = energies / total
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(rel[1:] > 0, rel[:-1] / rel[1:], np.nan)
    if q.size:
        rho = float(np.median(q))
        mad = float(np.median(np.abs(q - rho)))
    else:
        rho = mad = float("nan")
    mesh = solution.space.mesh
    return DecayProfile(ladder, energies, total, rel, q, rho, mad, mesh.h, mesh.h_min,
                        solution.lam)


def scaled_rate(profile: DecayProfile) -> float:
    """Per-layer contraction raised to ``1/h``: decay rate per unit physical distance."""
    return float(profile.rho_hat ** (1.0 / profile.h))


def exponential_fit(profile: DecayProfile):
    """Least-squares line through ``(ell, ln E_rel(ell))``; returns ``(slope, r_squared)``."""
    ell = np.arange(profile.relative.size)
    keep = profile.relative > 0
    fit = stats.linregress(ell[keep], np.log(profile.relative[keep]))
    return float(fit.slope), float(fit.rvalue ** 2)


def _mean_shift(solution: DiscreteSolution, ladder: PatchLadder, ell: int) -> float:
    space = solution.space
    inner = np.unique(space.cell_dofs[ladder.layers[ell]])
    if np.isin(inner, space.boundary_dofs).any():
        # shifted cutoff would not vanish on the boundary; use c = 0
        return 0.0
    zone = boundary_layer(ladder, ell + 1)
    M = solution.local_mass[zone]
    integrals = np.einsum("eij,ej->e", M, solution.u[space.cell_dofs[zone]]).sum()
    return float(integrals / space.mesh.areas[zone].sum())


def flux_identity_residual(solution: DiscreteSolution, ladder: PatchLadder, ell: int) -> float:
    """Relative defect of ``E(ell) = -sum_{K in Z_{ell+1}} a_K(u, I_{h,ell}(u - c))``.

    ``c = 0`` when ``lam > 0``.  For ``lam = 0`` the layer mean of ``u`` over
    ``Z_{ell+1}`` is subtracted, unless the inner patch reaches the boundary,
    in which case ``c = 0``.  Returns ``|E + flux| / |||u|||^2``.
    """
    if not 0 <= ell < ladder.ell_max:
        raise InvalidArgumentError(f"ell must satisfy 0 <= ell < ell_max = {ladder.ell_max}")
    space = solution.space
    total = math.fsum(_element_energies(solution))
    if total == 0.0:
        return 0.0
    c = _mean_shift(solution, ladder, ell) if solution.lam == 0 else 0.0
    cut = build_cutoff(space, ladder, ell)
    w = cutoff_apply(space, cut, solution.u - c)
    zone = boundary_layer(ladder, ell + 1)
    dofs = space.cell_dofs[zone]
    flux = math.fsum(np.einsum("ei,eij,ej->e", solution.u[dofs],
                               solution.local_energy_matrices[zone], w[dofs]))
    E = patch_energy(solution, ladder.layers[ell])
    return abs(E + flux) / total


def layers_for_width(delta: float, h_min: float) -> int:
    """``floor(delta / h_min)`` with slack for ratios that are integers up to roundoff."""
    return int(math.floor(delta / h_min * (1 + 1e-12)))


def fixed_width_ratio(solution: DiscreteSolution, ladder: PatchLadder, delta: float) -> float:
    """``E(0) / E(ell*)`` with ``ell* = floor(delta / h_min)``."""
    if delta < 0:
        raise InvalidArgumentError("delta must be nonnegative")
    h_min = solution.space.mesh.h_min
    ell_star = layers_for_width(delta, h_min)
    if ell_star > ladder.ell_max:
        raise InvalidArgumentError(
            f"delta = {delta} needs {ell_star} layers but ell_max = {ladder.ell_max}")
    e0 = patch_energy(solution, ladder.layers[0])
    e1 = patch_energy(solution, ladder.layers[ell_star])
    if e1 == 0.0:
        raise DegenerateProfileError("zero energy on the enlarged patch")
    return e0 / e1


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else f"{x:.17g}"


def write_profile_csv(path, profile: DecayProfile) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(PROFILE_COLUMNS)
        for ell in range(profile.ell_max + 1):
            q = profile.quotients[ell] if ell < profile.ell_max else float("nan")
            wr.writerow([ell, _fmt(profile.energies[ell]), _fmt(profile.relative[ell]), _fmt(q)])


def summary_row(profile: DecayProfile) -> dict:
    rate = scaled_rate(profile) if profile.quotients.size else float("nan")
    return {"lambda": profile.lam, "h": profile.h, "h_min": profile.h_min,
            "ell_max": profile.ell_max, "rho_hat": profile.rho_hat, "mad": profile.mad,
            "scaled_rate": rate}


def write_rows_csv(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(columns)
        for row in rows:
            wr.writerow([_fmt(row[c]) for c in columns])


def read_rows_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

"""Command-line runner for the decay, refinement, Schwarz and convergence studies.

Each run writes into one directory: a snapshot of the configuration, the CSV
tables and a plain-text ``run.log`` with mesh metrics.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List

import numpy as np

from . import decay
from .assembly import solve_dirichlet
from .config import ExperimentConfig, boundary_datum, gamma_predicate
from .errors import (ConfigError, EstimationError, InvalidArgumentError, LayerDecayError,
                     MeshFormatError, NonconformingMeshError, PreconditionError)
from .mesh import (Mesh, as_cellset, boundary_partition, generate_rectangle_mesh, mesh_metrics,
                   read_msh, select_cells_in_box)
from .patches import build_ladder
from .schwarz import (SWEEP_COLUMNS, TRACE_COLUMNS, decompose_rectangle, estimate_theta,
                      global_reference, restricted_init, schwarz_iterate)
from .space import build_space, error_norms

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
FLUX_COLUMNS = ("ell", "flux_residual")
FIXED_WIDTH_COLUMNS = ("lambda", "h", "h_min", "delta", "ell_star", "ratio")
CONVERGENCE_COLUMNS = ("h", "h1_error", "l2_error", "rate")
MESH_INFO_COLUMNS = ("nx", "ny", "n_vertices", "n_triangles", "h", "h_min", "min_angle_deg",
                     "gamma_edges", "gamma_c_edges")

log = logging.getLogger("layerdecay")

# errors caused by the inputs rather than by the numerics
_INPUT_ERRORS = (ConfigError, MeshFormatError, NonconformingMeshError, InvalidArgumentError,
                 PreconditionError)


def strip_solution(lam: float):
    """Exact solution on ``[0,2] x [0,1]`` with ``sin(pi y)`` on ``x = 0`` and zero elsewhere.

    Returns ``(u, grad_u)`` as callables of ``(x, y)``.
    """
    mu = math.sqrt(math.pi ** 2 + lam ** 2)
    s = math.sinh(2 * mu)

    def u(x, y):
        return np.sin(np.pi * y) * np.sinh(mu * (2 - x)) / s

    def grad(x, y):
        return (-mu * np.sin(np.pi * y) * np.cosh(mu * (2 - x)) / s,
                np.pi * np.cos(np.pi * y) * np.sinh(mu * (2 - x)) / s)
    return u, grad


def _tag(lam: float) -> str:
    return f"{lam:g}"


def _atomic_csv(path, columns, rows) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
    os.close(fd)
    try:
        decay.write_rows_csv(tmp, columns, rows)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _atomic_profile(path, profile) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
    os.close(fd)
    decay.write_profile_csv(tmp, profile)
    os.replace(tmp, path)


def build_mesh(cfg: ExperimentConfig, level: int = 0) -> Mesh:
    """Configured mesh; rectangle grids are refined ``level`` times by halving."""
    if cfg.is_rectangle:
        f = 2 ** level
        mesh = generate_rectangle_mesh(cfg.width, cfg.height, cfg.nx * f, cfg.ny * f)
        return boundary_partition(mesh, gamma_predicate(cfg.gamma_sides, cfg.width, cfg.height))
    path = cfg.resolve(cfg.msh_path)
    try:
        return read_msh(path, cfg.tag_map)
    except OSError as exc:
        raise ConfigError(f"msh_path: cannot read {path}: {exc.strerror}") from None


def _log_mesh(mesh: Mesh, label: str = "mesh") -> None:
    h, h_min, angle = mesh_metrics(mesh)
    log.info("%s: %d vertices, %d triangles, h = %.6g, h_min = %.6g, min angle = %.4g deg",
             label, mesh.n_vertices, mesh.n_triangles, h, h_min, math.degrees(angle))


def _base_cells(cfg: ExperimentConfig, mesh: Mesh) -> np.ndarray:
    if cfg.box is not None:
        cells = select_cells_in_box(mesh, cfg.box)
    else:
        cells = as_cellset(cfg.elements)
        if cells.size and (cells[0] < 0 or cells[-1] >= mesh.n_triangles):
            raise ConfigError(f"elements: indices must lie in 0..{mesh.n_triangles - 1}")
    if cells.size == 0:
        raise ConfigError("patch: the selection contains no elements")
    return cells


def _map(executor, fn: Callable, items) -> List:
    if executor is None:
        return [fn(x) for x in items]
    return list(executor.map(fn, items))


def _decay_cell(cfg, mesh, space, base, lam, out, stem):
    g = boundary_datum(cfg, mesh)
    sol = solve_dirichlet(space, lam=lam, g=g, tol=cfg.tol)
    ladder = build_ladder(mesh, base, sol.support)
    profile = decay.energy_profile(sol, ladder)
    _atomic_profile(os.path.join(out, f"profile_{stem}.csv"), profile)
    flux = [{"ell": ell, "flux_residual": decay.flux_identity_residual(sol, ladder, ell)}
            for ell in range(ladder.ell_max)]
    _atomic_csv(os.path.join(out, f"flux_{stem}.csv"), FLUX_COLUMNS, flux)
    fixed = None
    if cfg.delta is not None:
        fixed = {"lambda": lam, "h": mesh.h, "h_min": mesh.h_min, "delta": cfg.delta,
                 "ell_star": decay.layers_for_width(cfg.delta, mesh.h_min),
                 "ratio": decay.fixed_width_ratio(sol, ladder, cfg.delta)}
    worst = max((r["flux_residual"] for r in flux), default=0.0)
    log.info("lambda = %g: ell_max = %d, rho_hat = %.6g, mad = %.3g, CG iterations = %d, "
             "max flux residual = %.3g", lam, ladder.ell_max, profile.rho_hat, profile.mad,
             sol.iterations, worst)
    return decay.summary_row(profile), fixed


def run_decay(cfg: ExperimentConfig, out: str, executor=None) -> None:
    mesh = build_mesh(cfg)
    _log_mesh(mesh)
    space = build_space(mesh, cfg.degree)
    base = _base_cells(cfg, mesh)
    results = _map(executor, lambda lam: _decay_cell(cfg, mesh, space, base, lam, out,
                                                     f"lambda{_tag(lam)}"), cfg.lambdas)
    _atomic_csv(os.path.join(out, "summary.csv"), decay.SUMMARY_COLUMNS, [r[0] for r in results])
    if cfg.delta is not None:
        _atomic_csv(os.path.join(out, "fixed_width.csv"), FIXED_WIDTH_COLUMNS,
                    [r[1] for r in results])


def run_refine_sweep(cfg: ExperimentConfig, out: str, executor=None) -> None:
    levels = []
    for level in range(cfg.refinements):
        mesh = build_mesh(cfg, level)
        _log_mesh(mesh, f"level {level}")
        levels.append((mesh, build_space(mesh, cfg.degree), _base_cells(cfg, mesh)))
    cells = [(lam, level) for lam in cfg.lambdas for level in range(cfg.refinements)]

    def work(cell):
        lam, level = cell
        mesh, space, base = levels[level]
        stem = f"nx{mesh.grid[0]}_lambda{_tag(lam)}"
        return _decay_cell(cfg, mesh, space, base, lam, out, stem)

    results = _map(executor, work, cells)
    _atomic_csv(os.path.join(out, "summary.csv"), decay.SUMMARY_COLUMNS, [r[0] for r in results])
    if cfg.delta is not None:
        _atomic_csv(os.path.join(out, "fixed_width.csv"), FIXED_WIDTH_COLUMNS,
                    [r[1] for r in results])


def run_schwarz(cfg: ExperimentConfig, out: str, executor=None) -> None:
    mesh = build_mesh(cfg)
    _log_mesh(mesh)
    source = cfg.source
    f = lambda x, y: np.full(np.shape(x), source)  # noqa: E731
    ref = global_reference(mesh, f, tol=cfg.tol, degree=cfg.degree)
    parent_mesh = ref.space.mesh

    def work(ov):
        subs = decompose_rectangle(parent_mesh, ov, degree=cfg.degree, split=cfg.split,
                                   parent=ref.space)
        if cfg.init == "zero":
            init = None
        elif cfg.init == "reference":
            init = restricted_init(subs, ref.u)
        else:
            rng = np.random.default_rng(cfg.seed)
            init = tuple(rng.uniform(-1, 1, s.space.n_dofs) for s in subs)
        trace = schwarz_iterate(subs[0], subs[1], f, cfg.n_iters, ref, init=init, tol=cfg.tol,
                                stop_at_floor=cfg.init != "reference")
        _atomic_csv(os.path.join(out, f"trace_ov{ov}.csv"), TRACE_COLUMNS, list(trace.rows()))
        try:
            geo, sup = estimate_theta(trace, with_sup=True)
        except EstimationError as exc:
            log.info("overlap %d: %s", ov, exc)
            geo = sup = float("nan")
        log.info("overlap %d: %d sweeps, theta = %.6g, sup = %.6g", ov,
                 len(trace.energies) - 1, geo, sup)
        return {"ell_ov": ov, "theta_geomean": geo, "theta_sup": sup}

    rows = _map(executor, work, cfg.overlaps)
    _atomic_csv(os.path.join(out, "summary.csv"), SWEEP_COLUMNS, rows)


def run_convergence(cfg: ExperimentConfig, out: str, executor=None) -> None:
    lambdas = cfg.lambdas or (0.0,)
    meshes = []
    for level in range(cfg.refinements):
        mesh = build_mesh(cfg, level)
        _log_mesh(mesh, f"level {level}")
        meshes.append(mesh)

    def work(cell):
        lam, mesh = cell
        space = build_space(mesh, cfg.degree)
        sol = solve_dirichlet(space, lam=lam, g=lambda x, y: np.sin(np.pi * y), tol=cfg.tol)
        u, grad = strip_solution(lam)
        l2, h1 = error_norms(space, sol.u, u, grad)
        return mesh.h, h1, l2

    for lam in lambdas:
        errs = _map(executor, work, [(lam, m) for m in meshes])
        rows = []
        for i, (h, h1, l2) in enumerate(errs):
            rate = float("nan") if i == 0 else math.log(errs[i - 1][1] / h1) / math.log(errs[i - 1][0] / h)
            rows.append({"h": h, "h1_error": h1, "l2_error": l2, "rate": rate})
            log.info("lambda = %g, h = %.6g: H1 error %.6g, L2 error %.6g, rate %.4g",
                     lam, h, h1, l2, rate)
        _atomic_csv(os.path.join(out, f"convergence_lambda{_tag(lam)}.csv"),
                    CONVERGENCE_COLUMNS, rows)


def run_mesh_info(cfg: ExperimentConfig, out: str, executor=None) -> None:
    rows = []
    for level in range(cfg.refinements if cfg.is_rectangle else 1):
        mesh = build_mesh(cfg, level)
        _log_mesh(mesh, f"level {level}")
        h, h_min, angle = mesh_metrics(mesh)
        nx, ny = (mesh.grid[0], mesh.grid[1]) if mesh.grid else (0, 0)
        rows.append({"nx": nx, "ny": ny, "n_vertices": mesh.n_vertices,
                     "n_triangles": mesh.n_triangles, "h": h, "h_min": h_min,
                     "min_angle_deg": math.degrees(angle),
                     "gamma_edges": len(mesh.gamma_edges), "gamma_c_edges": len(mesh.gamma_c_edges)})
    _atomic_csv(os.path.join(out, "mesh_info.csv"), MESH_INFO_COLUMNS, rows)


RUNNERS = {
    "decay": run_decay,
    "refine-sweep": run_refine_sweep,
    "schwarz": run_schwarz,
    "convergence": run_convergence,
    "mesh-info": run_mesh_info,
}


def run(cfg: ExperimentConfig, out: str, threads: int = 1) -> None:
    """Execute *cfg* into directory *out* (created if needed)."""
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.ini"), "w") as fh:
        fh.write(cfg.to_ini())
    handler = logging.FileHandler(os.path.join(out, "run.log"), mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    try:
        log.info("kind = %s, degree = %d, tol = %g", cfg.kind, cfg.degree, cfg.tol)
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                RUNNERS[cfg.kind](cfg, out, pool)
        else:
            RUNNERS[cfg.kind](cfg, out, None)
    finally:
        log.removeHandler(handler)
        handler.close()


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment INI file")
    common.add_argument("--out", help="output directory (overrides [experiment] out)")
    common.add_argument("--tol", type=float, help="solver tolerance override")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweep cells")
    ap = argparse.ArgumentParser(prog="layerdecay", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="kind", required=True)
    for kind in RUNNERS:
        sub.add_parser(kind, parents=[common])
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("threads: must be at least 1")
        cfg = ExperimentConfig.load(args.config, kind=args.kind, tol=args.tol, out=args.out)
        if cfg.out is None:
            raise ConfigError("out: no output directory given (use --out or [experiment] out)")
        out = cfg.out if args.out else cfg.resolve(cfg.out)
        run(cfg, out, args.threads)
    except _INPUT_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LayerDecayError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

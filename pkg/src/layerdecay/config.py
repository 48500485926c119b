"""Experiment configuration: INI parsing, validation and boundary-datum presets."""
from __future__ import annotations

import configparser
import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .mesh import GAMMA, GAMMA_C, Mesh

KINDS = ("decay", "refine-sweep", "schwarz", "convergence", "mesh-info")
DATUMS = ("sin-pi-y", "constant-1", "custom")
SIDES = ("left", "right", "bottom", "top")
INITS = ("zero", "reference", "random")
_TAG_NAMES = {"gamma": GAMMA, "gamma_c": GAMMA_C}

# section -> keys; every key maps onto the dataclass field of the same name
_LAYOUT = {
    "experiment": ("kind", "degree", "lambdas", "tol", "out"),
    "mesh": ("width", "height", "nx", "ny", "gamma_sides", "refinements", "msh_path", "tag_map"),
    "data": ("datum", "datum_table"),
    "patch": ("box", "elements", "delta"),
    "schwarz": ("overlaps", "n_iters", "source", "init", "seed", "split"),
}


@dataclass
class ExperimentConfig:
    kind: str
    degree: int = 1
    lambdas: Tuple[float, ...] = ()
    tol: float = 1e-12
    out: Optional[str] = None
    width: Optional[float] = None
    height: Optional[float] = None
    nx: Optional[int] = None
    ny: Optional[int] = None
    gamma_sides: Tuple[str, ...] = ("left",)
    refinements: int = 1
    msh_path: Optional[str] = None
    tag_map: Dict[int, int] = field(default_factory=lambda: {1: GAMMA, 2: GAMMA_C})
    datum: str = "sin-pi-y"
    datum_table: Optional[str] = None
    box: Optional[Tuple[float, float, float, float]] = None
    elements: Optional[Tuple[int, ...]] = None
    delta: Optional[float] = None
    overlaps: Tuple[int, ...] = ()
    n_iters: int = 200
    source: float = 1.0
    init: str = "zero"
    seed: int = 0
    split: Optional[int] = None
    # directory that relative paths are resolved against; not serialized
    base_dir: str = field(default=".", compare=False, repr=False)

    @property
    def is_rectangle(self) -> bool:
        return self.msh_path is None

    def resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def validate(self) -> "ExperimentConfig":
        if self.kind not in KINDS:
            raise ConfigError(f"kind: expected one of {', '.join(KINDS)}, got {self.kind!r}")
        if self.degree not in (1, 2):
            raise ConfigError("degree: must be 1 or 2")
        if not self.tol > 0:
            raise ConfigError("tol: must be positive")
        if any(not (lam >= 0 and math.isfinite(lam)) for lam in self.lambdas):
            raise ConfigError("lambdas: values must be finite and nonnegative")
        grid = (self.width, self.height, self.nx, self.ny)
        has_grid = any(v is not None for v in grid)
        if has_grid == (self.msh_path is not None):
            raise ConfigError("mesh: give exactly one source, either width/height/nx/ny or msh_path")
        if has_grid:
            if any(v is None for v in grid):
                raise ConfigError("mesh: width, height, nx and ny are all required")
            if not (self.width > 0 and self.height > 0 and self.nx >= 1 and self.ny >= 1):
                raise ConfigError("mesh: width/height must be positive and nx/ny at least 1")
            bad = [s for s in self.gamma_sides if s not in SIDES]
            if bad:
                raise ConfigError(f"gamma_sides: unknown side {bad[0]!r}")
        if self.refinements < 1:
            raise ConfigError("refinements: must be at least 1")
        if self.datum not in DATUMS:
            raise ConfigError(f"datum: expected one of {', '.join(DATUMS)}")
        if (self.datum == "custom") != (self.datum_table is not None):
            raise ConfigError("datum_table: required exactly when datum = custom")
        if self.kind in ("decay", "refine-sweep"):
            if not self.lambdas:
                raise ConfigError("lambdas: at least one value is required")
            if (self.box is None) == (self.elements is None):
                raise ConfigError("patch: give exactly one of box or elements")
        if self.kind in ("refine-sweep", "schwarz", "convergence") and not self.is_rectangle:
            raise ConfigError(f"mesh: {self.kind} needs the rectangle generator")
        if self.kind == "refine-sweep" and self.elements is not None:
            raise ConfigError("elements: an explicit element list cannot follow refinement; use box")
        if self.delta is not None and self.delta < 0:
            raise ConfigError("delta: must be nonnegative")
        if self.kind == "schwarz":
            if not self.overlaps:
                raise ConfigError("overlaps: at least one value is required")
            if self.n_iters < 1:
                raise ConfigError("n_iters: must be at least 1")
            if self.init not in INITS:
                raise ConfigError(f"init: expected one of {', '.join(INITS)}")
            if any(ov < 1 or ov > self.nx - 2 for ov in self.overlaps):
                raise ConfigError(f"overlaps: values must lie in 1..{self.nx - 2}")
        if self.kind == "convergence":
            if self.datum != "sin-pi-y" or tuple(self.gamma_sides) != ("left",) \
                    or (self.width, self.height) != (2.0, 1.0):
                raise ConfigError("convergence: needs the [0,2]x[0,1] rectangle, "
                                  "gamma_sides = left and datum = sin-pi-y")
            if self.refinements < 2:
                raise ConfigError("refinements: convergence needs at least 2 meshes")
        return self

    # ---- serialization -------------------------------------------------

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for section, keys in _LAYOUT.items():
            items = {}
            for k in keys:
                v = getattr(self, k)
                if v is None:
                    continue
                items[k] = _dump(k, v)
            if items:
                cp[section] = items
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, base_dir: str = ".", **overrides) -> "ExperimentConfig":
        """Parse and validate; keyword *overrides* replace parsed values first."""
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        kw = {}
        for section in cp.sections():
            if section not in _LAYOUT:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in cp[section].items():
                if key not in _LAYOUT[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
                kw[key] = _load(key, raw)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        if "kind" not in kw:
            raise ConfigError("kind: missing from [experiment]")
        return cls(base_dir=base_dir, **kw).validate()

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_ini(text, base_dir=os.path.dirname(os.path.abspath(path)), **overrides)


_INTS = {"degree", "nx", "ny", "refinements", "n_iters", "seed", "split"}
_FLOATS = {"tol", "width", "height", "delta", "source"}
_STRS = {"kind", "out", "msh_path", "datum", "datum_table", "init"}


def _dump(key, v) -> str:
    if key == "tag_map":
        names = {GAMMA: "gamma", GAMMA_C: "gamma_c"}
        return ", ".join(f"{t}:{names[g]}" for t, g in sorted(v.items()))
    if isinstance(v, tuple):
        return ", ".join(_dump(key, x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _split(raw: str):
    return [p for p in (s.strip() for s in raw.replace(",", " ").split()) if p]


def _load(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _INTS:
            return int(raw)
        if key in _FLOATS:
            return float(raw)
        if key in _STRS:
            return raw
        if key in ("lambdas", "box"):
            vals = tuple(float(x) for x in _split(raw))
            if key == "box" and len(vals) != 4:
                raise ConfigError("box: expected xmin, xmax, ymin, ymax")
            return vals
        if key in ("elements", "overlaps"):
            return tuple(int(x) for x in _split(raw))
        if key == "gamma_sides":
            return tuple(_split(raw))
        if key == "tag_map":
            out = {}
            for item in _split(raw):
                tag, _, name = item.partition(":")
                if name not in _TAG_NAMES:
                    raise ConfigError(f"tag_map: unknown boundary part {name!r}")
                out[int(tag)] = _TAG_NAMES[name]
            return out
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    raise ConfigError(f"unknown key {key!r}")


# ---- boundary data ------------------------------------------------------

def gamma_predicate(sides, width: float, height: float):
    """Midpoint predicate selecting the named sides of ``[0, width] x [0, height]``."""
    eps = 1e-9 * max(width, height)
    tests = {
        "left": lambda x, y: x <= eps,
        "right": lambda x, y: x >= width - eps,
        "bottom": lambda x, y: y <= eps,
        "top": lambda x, y: y >= height - eps,
    }

    def pred(x, y):
        out = np.zeros(np.shape(x), dtype=bool)
        for s in sides:
            out |= tests[s](x, y)
        return out
    return pred


def _gamma_chains(mesh: Mesh):
    """Vertex chains through the GAMMA edges, in a deterministic order."""
    edges = mesh.gamma_edges
    adj: Dict[int, list] = {}
    for a, b in edges.tolist():
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    used = set()
    chains = []
    key = lambda v: (mesh.vertices[v, 0], mesh.vertices[v, 1])  # noqa: E731
    while len(used) < len(edges):
        free = [v for v in adj if any(tuple(sorted((v, w))) not in used for w in adj[v])]
        ends = [v for v in free if len(adj[v]) == 1]
        start = min(ends or free, key=key)
        chain = [start]
        v = start
        while True:
            nxt = sorted((w for w in adj[v] if tuple(sorted((v, w))) not in used), key=key)
            if not nxt:
                break
            used.add(tuple(sorted((v, nxt[0]))))
            v = nxt[0]
            chain.append(v)
        chains.append(chain)
    return chains


def arc_length_parameter(mesh: Mesh, x, y) -> np.ndarray:
    """Arc length along the GAMMA polyline of the closest point to each ``(x, y)``.

    Chains are traversed from their lexicographically smallest end; several
    chains are laid end to end.
    """
    pts = np.column_stack([np.ravel(x), np.ravel(y)])
    segs, starts = [], []
    offset = 0.0
    for chain in _gamma_chains(mesh):
        p = mesh.vertices[chain]
        lens = np.linalg.norm(np.diff(p, axis=0), axis=1)
        segs.append(np.stack([p[:-1], p[1:]], axis=1))
        starts.append(offset + np.concatenate([[0.0], np.cumsum(lens)[:-1]]))
        offset += lens.sum()
    if not segs:
        return np.zeros(pts.shape[0])
    seg = np.concatenate(segs)
    start = np.concatenate(starts)
    a, d = seg[:, 0], seg[:, 1] - seg[:, 0]
    dd = np.einsum("sd,sd->s", d, d)
    rel = pts[:, None, :] - a[None]
    t = np.clip(np.einsum("psd,sd->ps", rel, d) / dd, 0.0, 1.0)
    dist = np.linalg.norm(rel - t[..., None] * d[None], axis=2)
    best = np.argmin(dist, axis=1)
    rows = np.arange(pts.shape[0])
    s = start[best] + t[rows, best] * np.sqrt(dd[best])
    return s.reshape(np.shape(x))


def read_datum_table(path):
    """Two-column CSV ``(s, value)`` with a header row, sorted by ``s``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"datum_table: cannot read {path}: {exc.strerror}") from None
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in rows[1:] if r], dtype=float)
    except (ValueError, IndexError):
        raise ConfigError(f"datum_table: {path} must hold numeric (s, value) rows") from None
    if data.shape[0] < 1:
        raise ConfigError(f"datum_table: {path} has no data rows")
    if np.any(np.diff(data[:, 0]) <= 0):
        raise ConfigError("datum_table: arc-length column must be strictly increasing")
    return data[:, 0], data[:, 1]


def boundary_datum(config: ExperimentConfig, mesh: Mesh):
    """Callable ``g(x, y)`` for the configured datum on *mesh*."""
    if config.datum == "sin-pi-y":
        return lambda x, y: np.sin(np.pi * y)
    if config.datum == "constant-1":
        return lambda x, y: np.ones(np.shape(x))
    s_tab, v_tab = read_datum_table(config.resolve(config.datum_table))
    return lambda x, y: np.interp(arc_length_parameter(mesh, x, y), s_tab, v_tab)

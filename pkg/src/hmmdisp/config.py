"""Run configuration: a flat ``key = value`` file with dotted keys.

Recognised keys (defaults in brackets)::

    mesh.kind          rect | tri | perturbed | file        [rect]
    mesh.nx, mesh.ny   cell counts                          [16]
    mesh.domain        x0 x1 y0 y1                          [0 1 0 1]
    mesh.amplitude     perturbation fraction                [0.2]
    mesh.seed          perturbation seed                    [0]
    mesh.path          mesh file (kind = file)

    scenario.preset    five_spot | still | pure_diffusion_mms | coupled_mms | inline
    scenario.<name>    preset keyword (e.g. scenario.alpha = 0.01)
                       or, for inline scenarios, a coefficient expression:
                       porosity, permeability (may use c), dispersion (may use
                       speed = |u|), injected_conc, initial, q_inj, q_prod,
                       plus phi_min, alpha_D, Lambda_D, match_production

    time.T             final time       [preset value]
    time.N             number of steps  [preset value]
    time.nodes         explicit nodes "0 0.1 0.3 ..." (replaces T and N)

    solver.pressure.method / tol / max_iter / precond     [cg, 1e-10]
    solver.transport.method / tol / max_iter / precond    [bicgstab, 1e-10]

    output.dir         output directory [out]
    output.levels      all | last | none | every:K | comma list [last]
    diagnostics.energy, diagnostics.mass, diagnostics.dtc      [true true false]
    diagnostics.tol    dual seminorm tolerance [1e-8]

Relative ``mesh.path`` and ``output.dir`` are resolved against the config
file's directory.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .discrete import TimeGrid
from .errors import InputError
from .expressions import compile_expression
from .linalg import SolverConfig

SECTIONS = ("mesh", "scenario", "time", "solver", "output", "diagnostics")
MESH_KINDS = ("rect", "tri", "perturbed", "file")
INLINE_EXPRS = {
    "porosity": ("x", "y"),
    "permeability": ("x", "y", "c"),
    "dispersion": ("x", "y", "speed"),
    "injected_conc": ("x", "y", "t"),
    "initial": ("x", "y"),
    "q_inj": ("x", "y", "t"),
    "q_prod": ("x", "y", "t"),
}
INLINE_NUMBERS = ("phi_min", "alpha_D", "Lambda_D")


def parse_config(text):
    """``{key: value}`` from config text; raises :class:`InputError` naming the line."""
    out = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {no}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or any(ch.isspace() for ch in key):
            raise InputError(f"config line {no}: bad key {key!r}")
        if key.split(".", 1)[0] not in SECTIONS or "." not in key:
            raise InputError(f"config line {no}: unknown section in key {key!r}; "
                             f"keys look like <section>.<name> with section in {SECTIONS}")
        if key in out:
            raise InputError(f"config line {no}: duplicate key {key!r}")
        if not value:
            raise InputError(f"config line {no}: empty value for {key!r}")
        out[key] = value
    return out


def _bool(key, v):
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InputError(f"{key}: expected a boolean, got {v!r}")


def _num(key, v, kind=float):
    try:
        return kind(v)
    except ValueError:
        raise InputError(f"{key}: expected a number, got {v!r}") from None


def _floats(key, v):
    try:
        return [float(s) for s in v.replace(",", " ").split()]
    except ValueError:
        raise InputError(f"{key}: expected numbers, got {v!r}") from None


@dataclass
class RunConfig:
    """Validated configuration of a run or refinement study."""

    values: dict
    base_dir: str = "."
    text: str = ""
    mesh: dict = field(default_factory=dict)
    preset: str = "five_spot"
    scenario_args: dict = field(default_factory=dict)
    T: float = None
    N: int = None
    nodes: list = None
    pressure_solver: SolverConfig = None
    transport_solver: SolverConfig = None
    output_dir: str = "out"
    output_levels: str = "last"
    energy: bool = True
    mass: bool = True
    dtc: bool = False
    dual_tol: float = 1e-8

    @classmethod
    def from_text(cls, text, base_dir="."):
        cfg = cls(parse_config(text), base_dir=base_dir, text=text)
        cfg._interpret()
        return cfg

    @classmethod
    def from_file(cls, path):
        if not os.path.isfile(path):
            raise InputError(f"config file not found: {path}")
        with open(path) as fh:
            text = fh.read()
        return cls.from_text(text, os.path.dirname(os.path.abspath(path)))

    def _take(self, key, default=None):
        self._used.add(key)
        return self.values.get(key, default)

    def _interpret(self):
        self._used = set()
        kind = self._take("mesh.kind", "rect")
        if kind not in MESH_KINDS:
            raise InputError(f"mesh.kind must be one of {MESH_KINDS}, got {kind!r}")
        mesh = {"kind": kind}
        if kind == "file":
            path = self._take("mesh.path")
            if path is None:
                raise InputError("mesh.kind = file needs mesh.path")
            mesh["path"] = os.path.join(self.base_dir, path)
        else:
            mesh["nx"] = _num("mesh.nx", self._take("mesh.nx", "16"), int)
            mesh["ny"] = _num("mesh.ny", self._take("mesh.ny", str(mesh["nx"])), int)
            if mesh["nx"] < 1 or mesh["ny"] < 1:
                raise InputError("mesh.nx and mesh.ny must be >= 1")
            dom = _floats("mesh.domain", self._take("mesh.domain", "0 1 0 1"))
            if len(dom) != 4 or not (dom[1] > dom[0] and dom[3] > dom[2]):
                raise InputError("mesh.domain must be 'x0 x1 y0 y1' with x0 < x1, y0 < y1")
            mesh["domain"] = tuple(dom)
            if kind == "perturbed":
                mesh["amplitude"] = _num("mesh.amplitude", self._take("mesh.amplitude", "0.2"))
                mesh["seed"] = _num("mesh.seed", self._take("mesh.seed", "0"), int)
        self.mesh = mesh

        from .scenarios import PRESETS
        self.preset = self._take("scenario.preset", "five_spot")
        if self.preset != "inline" and self.preset not in PRESETS:
            raise InputError(f"unknown scenario preset {self.preset!r}; "
                             f"choose from {sorted(PRESETS)} or 'inline'")
        args = {}
        for key, v in self.values.items():
            if key.startswith("scenario.") and key != "scenario.preset":
                self._used.add(key)
                args[key[len("scenario."):]] = v
        self.scenario_args = args

        if "time.nodes" in self.values:
            if "time.N" in self.values or "time.T" in self.values:
                raise InputError("time.nodes excludes time.N and time.T")
            self.nodes = _floats("time.nodes", self._take("time.nodes"))
        else:
            if "time.N" in self.values:
                self.N = _num("time.N", self._take("time.N"), int)
                if self.N < 1:
                    raise InputError("time.N must be >= 1")
            if "time.T" in self.values:
                self.T = _num("time.T", self._take("time.T"))
                if not self.T > 0:
                    raise InputError("time.T must be positive")

        self.pressure_solver = self._solver("pressure", "cg")
        self.transport_solver = self._solver("transport", "bicgstab")
        self.output_dir = os.path.join(self.base_dir, self._take("output.dir", "out"))
        self.output_levels = self._take("output.levels", "last")
        self.energy = _bool("diagnostics.energy", self._take("diagnostics.energy", "true"))
        self.mass = _bool("diagnostics.mass", self._take("diagnostics.mass", "true"))
        self.dtc = _bool("diagnostics.dtc", self._take("diagnostics.dtc", "false"))
        self.dual_tol = _num("diagnostics.tol", self._take("diagnostics.tol", "1e-8"))
        unknown = sorted(set(self.values) - self._used)
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(unknown)}")
        self.selected_levels(1)  # validates the syntax early

    def _solver(self, which, method):
        p = f"solver.{which}."
        m = self._take(p + "method", method)
        tol = _num(p + "tol", self._take(p + "tol", "1e-10"))
        mi = self._take(p + "max_iter")
        pre = self._take(p + "precond", "auto")
        try:
            return SolverConfig(m, tol, None if mi is None else _num(p + "max_iter", mi, int),
                                None if pre == "none" else pre)
        except ValueError as exc:
            raise InputError(f"{p[:-1]}: {exc}") from None

    # --- builders -----------------------------------------------------------

    def build_mesh(self, factor=1):
        from .io import read_mesh
        from .mesh import generate_perturbed_mesh, generate_rect_mesh, generate_tri_mesh
        m = self.mesh
        if m["kind"] == "file":
            if factor != 1:
                raise InputError("refinement studies need a generated mesh (mesh.kind)")
            return read_mesh(m["path"])
        nx, ny = factor * m["nx"], factor * m["ny"]
        if m["kind"] == "rect":
            return generate_rect_mesh(nx, ny, m["domain"])
        if m["kind"] == "tri":
            return generate_tri_mesh(nx, ny, m["domain"])
        return generate_perturbed_mesh(nx, ny, m["domain"], m["amplitude"], m["seed"])

    def build_scenario(self, factor=1):
        """Scenario with its time grid; ``factor`` divides every step."""
        from .scenarios import preset
        if self.preset == "inline":
            sc = inline_scenario(self.scenario_args)
        else:
            kwargs = {k: _num("scenario." + k, v) for k, v in self.scenario_args.items()}
            try:
                sc = preset(self.preset, **kwargs)
            except TypeError as exc:
                raise InputError(f"bad parameter for preset {self.preset!r}: {exc}") from None
        if self.nodes is not None:
            nodes = np.asarray(self.nodes)
            if factor > 1:
                fine = [nodes[:-1] + (nodes[1:] - nodes[:-1]) * j / factor for j in range(factor)]
                nodes = np.append(np.stack(fine, axis=1).ravel(), nodes[-1])
            try:
                return sc.with_grid(TimeGrid(nodes))
            except ValueError as exc:
                raise InputError(f"time.nodes: {exc}") from None
        T = self.T if self.T is not None else sc.T
        N = self.N if self.N is not None else sc.grid.N
        return sc.with_grid(TimeGrid.uniform(T, N * factor))

    def selected_levels(self, N):
        choice = self.output_levels.strip().lower()
        if choice == "all":
            return list(range(N + 1))
        if choice == "last":
            return [N]
        if choice == "none":
            return []
        if choice.startswith("every:"):
            k = _num("output.levels", choice[6:], int)
            if k < 1:
                raise InputError("output.levels every:K needs K >= 1")
            return sorted(set(range(0, N + 1, k)) | {N})
        try:
            levels = sorted({int(s) for s in choice.split(",")})
        except ValueError:
            raise InputError(f"output.levels: cannot parse {self.output_levels!r}") from None
        return [k for k in levels if 0 <= k <= N]


def _field(expr, names):
    def f(pts, *rest):
        env = {"x": pts[:, 0], "y": pts[:, 1]}
        for name, val in zip(names, rest):
            env[name] = val
        return np.broadcast_to(np.asarray(expr(**{k: env.get(k, 0.0) for k in expr.variables}),
                                          dtype=float), (len(pts),)).copy()
    return f


def inline_scenario(args):
    """Scenario from expression strings; tensors are scalar multiples of Id."""
    from .transport import Scenario
    args = dict(args)
    exprs = {}
    for name, variables in INLINE_EXPRS.items():
        src = args.pop(name, None)
        if src is None:
            raise InputError(f"inline scenario needs scenario.{name}")
        exprs[name] = compile_expression(src, variables)
    nums = {k: _num("scenario." + k, args.pop(k)) for k in INLINE_NUMBERS if k in args}
    match = _bool("scenario.match_production", args.pop("match_production", "false"))
    if args:
        raise InputError(f"unknown inline scenario keys: {', '.join(sorted(args))}")
    eye = np.eye(2)

    def perm(pts, c):
        v = _field(exprs["permeability"], ("c",))(pts, c)
        return v[:, None, None] * eye[None]

    def disp(pts, zeta):
        speed = np.sqrt((np.asarray(zeta) ** 2).sum(axis=-1))
        v = _field(exprs["dispersion"], ("speed",))(pts, speed)
        return v[:, None, None] * eye[None]

    return Scenario(
        name="inline",
        porosity=_field(exprs["porosity"], ()),
        permeability=perm,
        dispersion=disp,
        injected_conc=_field(exprs["injected_conc"], ("t",)),
        initial=_field(exprs["initial"], ()),
        q_inj=_field(exprs["q_inj"], ("t",)),
        q_prod=_field(exprs["q_prod"], ("t",)),
        grid=TimeGrid.uniform(1.0, 1),
        match_production=match,
        description="inline coefficients",
        **nums,
    )

"""Run configuration: an INI-style text file with explicit seeds and lossless round trip."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .coefficients import (ElasticityTensorField, isotropic_constant, isotropic_modulated, laminate,
                           load_coefficient_file)
from .errors import GridMismatch, InvalidInput
from .fiber import SolverConfig
from .fullspace import DEFAULT_LADDER, TRUNCATIONS
from .grid import CellGrid

PRESET_NAMES = ("isotropic_constant", "isotropic_modulated", "laminate", "file")

# section -> field names
LAYOUT = {
    "coefficients": ("preset", "lam", "mu", "delta", "wave", "lam2", "mu2", "width", "file"),
    "grid": ("n",),
    "solver": ("cg_tol", "max_iter", "preconditioner"),
    "cascade": ("max_cycles",),
    "harness": ("eps", "truncation", "slope_tol"),
    "source": ("K_radius", "nodes", "node_radius", "seed"),
    "contour": ("M", "mu_candidates"),
    "run": ("out", "workers"),
}


@dataclass(frozen=True)
class RunConfig:
    preset: str = "isotropic_modulated"
    lam: float = 1.0
    mu: float = 1.0
    delta: float = 0.3
    wave: tuple = (1, 0, 0)
    lam2: float = 2.0
    mu2: float = 2.0
    width: float = 0.15
    file: str = ""
    n: int = 16
    cg_tol: float = 1e-12
    max_iter: int = 5000
    preconditioner: str = "constant_coefficient"
    max_cycles: int = 3
    eps: tuple = DEFAULT_LADDER
    truncation: str = "reduced_l2"
    slope_tol: float = 0.3
    K_radius: float = 1.0
    nodes: int = 7
    node_radius: float = 0.6
    seed: int = 0
    M: int = 64
    mu_candidates: tuple = field(default=(3.141592653589793, 1.5707963267948966, 0.7853981633974483,
                                          0.39269908169872414, 0.19634954084936207))
    out: str = "out"
    workers: int = 1

    def __post_init__(self):
        if self.preset not in PRESET_NAMES:
            raise InvalidInput(f"preset must be one of {PRESET_NAMES}")
        if self.preset == "file" and not self.file:
            raise InvalidInput("preset 'file' needs a coefficient file path")
        if self.n < 4 or self.n % 2:
            raise InvalidInput("grid n must be even and >= 4")
        if not 0 < self.cg_tol <= 1e-4:
            raise InvalidInput("cg_tol must lie in (0, 1e-4]")
        if self.max_iter < 1:
            raise InvalidInput("max_iter must be positive")
        if self.preconditioner not in ("none", "constant_coefficient"):
            raise InvalidInput("preconditioner must be 'none' or 'constant_coefficient'")
        if not 0 <= self.max_cycles <= 6:
            raise InvalidInput("max_cycles must lie in 0..6")
        if not self.eps or any(e <= 0 for e in self.eps):
            raise InvalidInput("eps ladder must be nonempty and positive")
        if self.truncation not in TRUNCATIONS:
            raise InvalidInput(f"truncation must be one of {TRUNCATIONS}")
        if not 0 < self.slope_tol < 1:
            raise InvalidInput("slope_tol must lie in (0, 1)")
        if self.K_radius <= 0 or not 0 < self.node_radius <= self.K_radius:
            raise InvalidInput("need 0 < node_radius <= K_radius")
        if self.nodes < 1:
            raise InvalidInput("at least one source node")
        if self.M < 8:
            raise InvalidInput("contour needs M >= 8 nodes")
        if not self.mu_candidates or any(m <= 0 or m > 3.141592653589794 for m in self.mu_candidates):
            raise InvalidInput("mu candidates must lie in (0, pi]")
        if self.workers < 1:
            raise InvalidInput("workers must be >= 1")
        if abs(self.delta) >= 1:
            raise InvalidInput("modulation delta must satisfy |delta| < 1")
        if len(self.wave) != 3:
            raise InvalidInput("wave must have three integer entries")

    def solver(self) -> SolverConfig:
        return SolverConfig(self.cg_tol, self.max_iter, self.preconditioner)

    def grid(self) -> CellGrid:
        return CellGrid(self.n)

    def coefficients(self) -> ElasticityTensorField:
        if self.preset == "file":
            A = load_coefficient_file(self.file)
            if A.grid.n_per_axis != self.n:
                raise GridMismatch(f"coefficient file has n={A.grid.n_per_axis}, config has n={self.n}")
            return A
        g = self.grid()
        if self.preset == "isotropic_constant":
            return isotropic_constant(g, self.lam, self.mu)
        if self.preset == "isotropic_modulated":
            return isotropic_modulated(g, self.lam, self.mu, self.delta, self.wave)
        return laminate(g, self.lam, self.mu, self.lam2, self.mu2, self.width)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def as_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name: str, text: str):
    kind = _TYPES[name]
    text = text.strip()
    try:
        if kind == "float":
            return float(text)
        if kind == "int":
            return int(text)
        if kind == "tuple":
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if name == "wave":
                return tuple(int(p) for p in parts)
            return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise InvalidInput(f"bad value for {name!r}: {text!r}") from exc
    return text


def serialize(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for section, names in LAYOUT.items():
        cp[section] = {n: _fmt(getattr(cfg, n)) for n in names}
    lines = []
    for section in cp.sections():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {v}" for k, v in cp[section].items())
        lines.append("")
    return "\n".join(lines)


def parse(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise InvalidInput(f"unreadable config: {exc}") from exc
    kw = {}
    for section in cp.sections():
        if section not in LAYOUT:
            raise InvalidInput(f"unknown section [{section}]")
        for key, val in cp[section].items():
            if key not in LAYOUT[section]:
                raise InvalidInput(f"unknown key {key!r} in [{section}]")
            kw[key] = _parse(key, val)
    return RunConfig(**kw)


def load(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidInput(f"cannot read config {path}: {exc}") from exc
    return parse(text)

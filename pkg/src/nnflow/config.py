"""JSON run configuration: parsing, validation, forcing presets."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
import hashlib
import json
from pathlib import Path

import numpy as np

from .constitutive import admissible
from .fields import Grid

PRESETS = ("zero", "uniform", "shear", "vortex-forcing")


class ConfigError(ValueError):
    pass


@dataclass
class ProblemConfig:
    d: int = 2
    lengths: list = field(default_factory=lambda: [1.0, 1.0])
    n: int = 32
    M: float = 1.0
    gamma: float = 1.5
    a: float = 1.0
    r: float = 2.0
    mu0: float = 1.0
    lambda0: float = 0.0
    q: float = 3.0
    f: dict = field(default_factory=lambda: {"preset": "zero"})
    g: dict = field(default_factory=lambda: {"preset": "zero"})


@dataclass
class LadderConfig:
    alpha: list = field(default_factory=lambda: [1e-2])
    delta: list = field(default_factory=lambda: [0.1])
    eps: list = field(default_factory=lambda: [0.1])
    eta: list = field(default_factory=lambda: [1e-2])
    warm_start: bool = True


@dataclass
class HBConfig:
    tau_star: float = 0.5
    nu: float = 1.0
    alpha_hb: float = 1.0
    beta: float = 0.0
    rho_check: dict = field(default_factory=lambda: {"constant": 1.0})
    eps_reg: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3])


@dataclass
class SolverConfig:
    tol: float = 1e-8
    theta: float = 0.5
    max_iter: int = 500
    method: str = "anderson"
    seed: int = 0


@dataclass
class OutputConfig:
    directory: str = "runs/default"
    diagnostics: bool = True
    fields: bool = True


@dataclass
class StabilityConfig:
    k: list = field(default_factory=lambda: [4, 8, 16])
    amplitude: float = 0.5
    component: int = 0


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    ladder: LadderConfig = field(default_factory=LadderConfig)
    hb: HBConfig | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    stability: StabilityConfig | None = None

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        blocks = {"problem": ProblemConfig, "ladder": LadderConfig, "hb": HBConfig,
                  "solver": SolverConfig, "output": OutputConfig, "stability": StabilityConfig}
        unknown = set(raw) - set(blocks)
        if unknown:
            raise ConfigError(f"unknown config blocks: {sorted(unknown)}")
        kw = {}
        for name, typ in blocks.items():
            if name not in raw or raw[name] is None:
                if name in ("hb", "stability"):
                    kw[name] = None
                continue
            sub = raw[name]
            if not isinstance(sub, dict):
                raise ConfigError(f"block {name!r} must be an object")
            allowed = {f.name for f in fields(typ)}
            extra = set(sub) - allowed
            if extra:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(extra)}")
            kw[name] = typ(**sub)
        cfg = cls(**kw)
        try:
            cfg.validate()
        except (TypeError, AttributeError) as exc:
            raise ConfigError(f"malformed config value: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    # -- validation ---------------------------------------------------------
    def validate(self) -> None:
        p = self.problem
        if p.d not in (2, 3):
            raise ConfigError("d must be 2 or 3")
        if len(p.lengths) != p.d:
            raise ConfigError("lengths must have d entries")
        if p.n < 4:
            raise ConfigError("grid needs n >= 4")
        if not (p.r > 1 and p.gamma > 1):
            raise ConfigError("need r > 1 and gamma > 1")
        if self.hb is None:
            rep = admissible(p.d, p.r, p.gamma)
            if not rep.admissible:
                raise ConfigError(f"(d, r, gamma) = ({p.d}, {p.r}, {p.gamma}) is not admissible")
            if not p.r > p.d / 2:
                raise ConfigError("need r > d/2")
        elif not 1 < p.gamma <= 2:
            raise ConfigError("Herschel-Bulkley runs need gamma in (1, 2]")
        if not p.q > p.d:
            raise ConfigError("q must exceed d")
        if p.M <= 0 or p.a <= 0 or p.mu0 <= 0 or p.lambda0 < 0:
            raise ConfigError("need M, a, mu0 > 0 and lambda0 >= 0")
        for key in ("f", "g"):
            _check_forcing(getattr(p, key), p.d, key)
        L = self.ladder
        lists = [L.alpha, L.delta, L.eps, L.eta]
        if len({len(x) for x in lists}) != 1 or not L.alpha:
            raise ConfigError("ladder schedules must be non-empty and of equal length")
        for name, seq in zip(("alpha", "delta", "eps", "eta"), lists):
            if any(b > a for a, b in zip(seq, seq[1:])):
                raise ConfigError(f"ladder schedule {name} must be non-increasing")
            if min(seq) < 0 or max(seq) > 1:
                raise ConfigError(f"ladder schedule {name} must lie in [0, 1]")
        if min(L.eps) <= 0:
            raise ConfigError("eps must be positive")
        if self.hb is None and min(L.eta) <= 0:
            raise ConfigError("eta must be positive")
        if self.hb is not None:
            h = self.hb
            if not (h.tau_star > 0 and h.nu > 0 and h.alpha_hb > 0 and h.beta >= 0):
                raise ConfigError("hb needs tau_star, nu, alpha_hb > 0 and beta >= 0")
            if not h.eps_reg or any(b > a for a, b in zip(h.eps_reg, h.eps_reg[1:])):
                raise ConfigError("hb eps_reg must be a non-empty non-increasing list")
            _check_scalar_spec(h.rho_check)
        s = self.solver
        if not 0 < s.theta <= 1:
            raise ConfigError("theta must lie in (0, 1]")
        if s.method not in ("anderson", "picard"):
            raise ConfigError("solver method must be 'anderson' or 'picard'")
        if s.tol <= 0 or s.max_iter < 1:
            raise ConfigError("need tol > 0 and max_iter >= 1")
        if self.stability is not None:
            st = self.stability
            if not st.k or min(st.k) <= 0 or not 0 <= st.component < p.d:
                raise ConfigError("stability needs positive k values and a valid component")

    # -- construction -------------------------------------------------------
    def grid(self) -> Grid:
        p = self.problem
        return Grid((p.n,) * p.d, tuple(p.lengths))


def _check_forcing(spec: dict, d: int, key: str) -> None:
    if not isinstance(spec, dict):
        raise ConfigError(f"{key} must be an object")
    if "constant" in spec:
        c = spec["constant"]
        if not isinstance(c, list) or len(c) != d:
            raise ConfigError(f"{key}.constant must be a list of {d} numbers")
        if set(spec) - {"constant"}:
            raise ConfigError(f"{key}: 'constant' takes no other keys")
        return
    if spec.get("preset") not in PRESETS:
        raise ConfigError(f"{key}.preset must be one of {PRESETS}")
    if set(spec) - {"preset", "amplitude"}:
        raise ConfigError(f"unknown keys in {key}")


def _check_scalar_spec(spec: dict) -> None:
    if not isinstance(spec, dict) or "constant" not in spec or set(spec) - {"constant", "modulation"}:
        raise ConfigError("rho_check must be {'constant': c[, 'modulation': m]}")
    if spec.get("constant", 0) < 0 or abs(spec.get("modulation", 0.0)) > spec.get("constant", 0):
        raise ConfigError("rho_check must be nonnegative")


def sample_forcing(grid: Grid, spec: dict) -> np.ndarray:
    """Sample a forcing spec onto the grid as a vector field."""
    d = grid.d
    out = np.zeros(grid.shape + (d,))
    if "constant" in spec:
        out[...] = np.asarray(spec["constant"], dtype=float)
        return out
    A = float(spec.get("amplitude", 1.0))
    X = grid.centers()
    xi = [(X[k] - grid.origin[k]) / grid.lengths[k] for k in range(d)]
    name = spec["preset"]
    if name == "zero":
        return out
    if name == "uniform":
        out[..., 0] = A
    elif name == "shear":
        out[..., 0] = A * np.sin(np.pi * xi[1])
    elif name == "vortex-forcing":
        # divergence-free cellular vortex
        out[..., 0] = A * np.sin(np.pi * xi[0]) ** 2 * np.sin(2 * np.pi * xi[1])
        out[..., 1] = -A * np.sin(2 * np.pi * xi[0]) * np.sin(np.pi * xi[1]) ** 2
    return out


def sample_scalar(grid: Grid, spec: dict) -> np.ndarray:
    c = float(spec["constant"])
    m = float(spec.get("modulation", 0.0))
    X = grid.centers()
    return c + m * np.cos(np.pi * (X[0] - grid.origin[0]) / grid.lengths[0])

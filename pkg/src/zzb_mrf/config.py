"""Run configuration: the reference tissue table and a flat key/value config format.

Format (one entry per line, ``#`` starts a comment)::

    frames = 50
    fa_bounds_deg = 10, 60
    spec = T2, 50, 80, 900, 2.0      # varying, min, max, fixed_other, weight

Scalar values are numbers or bare words; comma-separated values become
lists.  ``spec`` may repeat; every other key may appear once.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .bounds import QuadratureConfig, TissueSpec
from .epg_sim import EpgConfig
from .errors import ParseError

# Brain tissue pairs with their design weights
REFERENCE_SPECS = (
    TissueSpec("T1", 100, 500, 20, 0.0050),
    TissueSpec("T1", 500, 2000, 800, 0.0005),
    TissueSpec("T1", 700, 1100, 60, 0.0100),
    TissueSpec("T1", 1200, 1600, 90, 0.0100),
    TissueSpec("T1", 2000, 4000, 400, 0.0002),
    TissueSpec("T2", 10, 20, 150, 5.0000),
    TissueSpec("T2", 200, 1200, 1800, 0.0005),
    TissueSpec("T2", 50, 80, 900, 2.0000),
    TissueSpec("T2", 60, 120, 1500, 0.5000),
    TissueSpec("T2", 300, 2000, 3500, 0.0002),
)

REFERENCE_CFG = Path(__file__).with_name("reference_specs.cfg")


@dataclass
class RunConfig:
    """Every knob of a design/evaluation run, with defaults materialized."""

    frames: int = 50
    echo_time_ms: float = 3.0
    first_fa_bounds_deg: tuple[float, float] = (10.0, 180.0)
    fa_bounds_deg: tuple[float, float] = (10.0, 60.0)
    tr_bounds_ms: tuple[float, float] = (12.0, 15.0)
    fa_slew_deg: float = 1.0
    target_snr: float | None = 30.0
    sigma2: float | None = None
    n_grid: int = 64
    n_states: int | None = None
    inversion_efficiency: float = 1.0
    seed: int = 0
    objective: str = "zzb"
    max_iters: int = 30
    rel_tol: float = 1e-4
    fd_rel_step: float = 1e-3
    step_init: float = 0.05
    specs: list[TissueSpec] = field(default_factory=lambda: list(REFERENCE_SPECS))
    tissue: tuple[float, float] | None = None  # (t1, t2) for single-tissue commands

    @property
    def quad(self) -> QuadratureConfig:
        return QuadratureConfig(self.n_grid)

    @property
    def epg(self) -> EpgConfig:
        return EpgConfig(self.n_states, self.inversion_efficiency)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["specs"] = [[s.varying, s.range_min, s.range_max, s.fixed_other, s.weight] for s in self.specs]
        for k in ("first_fa_bounds_deg", "fa_bounds_deg", "tr_bounds_ms", "tissue"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if "specs" in d:
            d["specs"] = [TissueSpec(str(v), float(a), float(b), float(c), float(w)) for v, a, b, c, w in d["specs"]]
        for k in ("first_fa_bounds_deg", "fa_bounds_deg", "tr_bounds_ms", "tissue"):
            if d.get(k) is not None:
                d[k] = tuple(float(x) for x in d[k])
        return cls(**d)


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _scalar(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("none", "null", ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_config_text(text: str, path=None) -> RunConfig:
    values: dict = {}
    specs: list[TissueSpec] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        parts = [_scalar(p) for p in value.split(",")]
        if key == "spec":
            if len(parts) != 5:
                raise ParseError("spec needs 5 fields: varying, min, max, fixed_other, weight", path, lineno)
            try:
                specs.append(TissueSpec(str(parts[0]).upper(), *(float(p) for p in parts[1:])))
            except (TypeError, ValueError) as exc:
                raise ParseError(f"bad spec: {exc}", path, lineno) from exc
            continue
        if key not in _TYPES or key == "specs":
            raise ParseError(f"unknown key {key!r}", path, lineno)
        if key in values:
            raise ParseError(f"duplicate key {key!r}", path, lineno)
        values[key] = parts if len(parts) > 1 else parts[0]
    if specs:
        values["specs"] = specs
    try:
        cfg = RunConfig(**values)
        _coerce(cfg)
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), path) from exc
    return cfg


def _coerce(cfg: RunConfig):
    for k in ("first_fa_bounds_deg", "fa_bounds_deg", "tr_bounds_ms"):
        v = getattr(cfg, k)
        if not isinstance(v, (list, tuple)) or len(v) != 2:
            raise ValueError(f"{k} needs two values")
        setattr(cfg, k, (float(v[0]), float(v[1])))
    if cfg.tissue is not None:
        if not isinstance(cfg.tissue, (list, tuple)) or len(cfg.tissue) != 2:
            raise ValueError("tissue needs two values: t1, t2")
        cfg.tissue = (float(cfg.tissue[0]), float(cfg.tissue[1]))
    for k in ("frames", "n_grid", "seed", "max_iters"):
        v = getattr(cfg, k)
        if not isinstance(v, int):
            raise ValueError(f"{k} must be an integer")
    if cfg.n_states is not None and not isinstance(cfg.n_states, int):
        raise ValueError("n_states must be an integer")
    for k in ("echo_time_ms", "fa_slew_deg", "inversion_efficiency", "rel_tol", "fd_rel_step", "step_init"):
        setattr(cfg, k, float(getattr(cfg, k)))
    for k in ("target_snr", "sigma2"):
        v = getattr(cfg, k)
        if v is not None:
            setattr(cfg, k, float(v))
    if cfg.objective not in ("zzb", "crb"):
        raise ValueError(f"objective must be zzb or crb, got {cfg.objective!r}")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read config: {exc}", path) from exc
    return parse_config_text(text, path)


def format_config(cfg: RunConfig) -> str:
    lines = []
    d = cfg.to_dict()
    specs = d.pop("specs")
    for key, value in d.items():
        if isinstance(value, list):
            value = ", ".join(repr(float(v)) for v in value)
        elif value is None:
            value = "none"
        lines.append(f"{key} = {value}")
    for s in specs:
        lines.append("spec = " + ", ".join(str(x) for x in s))
    return "\n".join(lines) + "\n"

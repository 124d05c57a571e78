"""Run configuration: strict parsing of a YAML document into a ``RunConfig``.

A minimal document names the model and the horizon::

    params: {n: 3, g: 1.0}
    grid: {t_end: 5000}

Everything else has a default.  Unknown keys are rejected by name, at any
nesting level.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import yaml

from .dynamics import DEFAULT_MAX_PICARD, DEFAULT_PICARD_TOL, DEFAULT_WINDOW, SimGrid
from .errors import InputError
from .model import ModelParams

DEFAULT_DT = 1e-3
DEFAULT_RECORD_DT = 0.1
DEFAULT_THIN = 1.0
DEFAULT_BURN_FRAC = 0.1
DEFAULT_PROBES = 100

OUTPUT_KINDS = ("trajectory_csv", "lln", "stationary", "ordering", "hitting", "decay")


class ConfigError(InputError):
    """Invalid configuration; ``field`` is the dotted path of the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class Init:
    kind: str  # "stationary", "point" or "unranked"
    v: float = 0.0
    z: tuple[float, ...] = ()
    x: tuple[float, ...] = ()


@dataclass(frozen=True)
class Checks:
    """Pass thresholds for each analysis."""

    lln_x_tol: float = 0.05
    lln_l1_tol: float = 0.05
    lln_l_tol: float = 0.1
    ks_max: float = 0.05
    ordering_min: float = 0.95
    hitting_min_r2: float = 0.9
    decay_alpha: float = 0.01
    bar_rel_tol: float = 1e-10
    identity_rel_tol: float = 1e-12
    skorokhod_tol: float = 1e-10


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    grid: SimGrid
    replicas: int = 1
    base_seed: int = 0
    init: Init = Init("stationary")
    outputs: tuple[str, ...] = ()
    hitting_level: float | None = None
    decay_slices: tuple[float, ...] = ()
    burn_in: float = 0.0
    thin: float = DEFAULT_THIN
    record_dt: float = DEFAULT_RECORD_DT
    window: float = DEFAULT_WINDOW
    picard_tol: float = DEFAULT_PICARD_TOL
    max_picard: int = DEFAULT_MAX_PICARD
    probes: int = DEFAULT_PROBES
    checks: Checks = field(default_factory=Checks)

    @property
    def record_every(self) -> int:
        return int(round(self.record_dt / self.grid.dt))

    def to_dict(self) -> dict:
        """Canonical plain-data form; the digest is computed from this."""
        init = {"kind": self.init.kind}
        if self.init.kind == "point":
            init.update(v=self.init.v, z=list(self.init.z))
        elif self.init.kind == "unranked":
            init.update(x=list(self.init.x))
        return {
            "params": {"n": self.params.n, "g": self.params.g},
            "grid": {"dt": self.grid.dt, "t_end": self.grid.t_end, "record_dt": self.record_dt},
            "replicas": self.replicas,
            "base_seed": self.base_seed,
            "init": init,
            "outputs": list(self.outputs),
            "hitting_level": self.hitting_level,
            "decay_slices": list(self.decay_slices),
            "burn_in": self.burn_in,
            "thin": self.thin,
            "solver": {"window": self.window, "picard_tol": self.picard_tol,
                       "max_picard": self.max_picard},
            "probes": self.probes,
            "checks": dict(vars(self.checks)),
        }

    def digest(self) -> str:
        return _digest(self.to_dict())

    def params_digest(self) -> str:
        return _digest({"n": self.params.n, "g": self.params.g, "init": self.to_dict()["init"]})


def _digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# --------------------------------------------------------------------------
# field readers


def _mapping(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(where, f"expected a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(section: dict, allowed, where: str):
    for key in section:
        if key not in allowed:
            name = f"{where}.{key}" if where else str(key)
            raise ConfigError(name, "unknown key")


def _real(section: dict, key: str, where: str, default=None, *, positive=False, nonneg=False):
    name = f"{where}.{key}" if where else key
    if key not in section:
        if default is None:
            raise ConfigError(name, "required field is missing")
        return default
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(name, f"expected a number, got {val!r}")
    val = float(val)
    if not math.isfinite(val):
        raise ConfigError(name, f"must be finite, got {val!r}")
    if positive and not val > 0:
        raise ConfigError(name, f"must be positive, got {val!r}")
    if nonneg and val < 0:
        raise ConfigError(name, f"must be nonnegative, got {val!r}")
    return val


def _integer(section: dict, key: str, where: str, default=None, *, minimum=None, maximum=None):
    name = f"{where}.{key}" if where else key
    if key not in section:
        if default is None:
            raise ConfigError(name, "required field is missing")
        return default
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(name, f"expected an integer, got {val!r}")
    if minimum is not None and val < minimum:
        raise ConfigError(name, f"must be >= {minimum}, got {val}")
    if maximum is not None and val > maximum:
        raise ConfigError(name, f"must be <= {maximum}, got {val}")
    return val


def _vector(value, name: str, length: int | None = None) -> tuple[float, ...]:
    if not isinstance(value, list):
        raise ConfigError(name, f"expected a list of numbers, got {value!r}")
    out = []
    for k, item in enumerate(value):
        if isinstance(item, bool) or not isinstance(item, (int, float)) or not math.isfinite(item):
            raise ConfigError(f"{name}[{k}]", f"expected a finite number, got {item!r}")
        out.append(float(item))
    if length is not None and len(out) != length:
        raise ConfigError(name, f"expected {length} entries, got {len(out)}")
    return tuple(out)


def _is_multiple(a: float, b: float) -> bool:
    k = round(a / b)
    return k >= 1 and abs(k * b - a) <= 1e-9 * max(1.0, a)


# --------------------------------------------------------------------------
# sections


def _parse_init(raw, n: int) -> Init:
    if raw is None or raw == "stationary":
        return Init("stationary")
    if isinstance(raw, str):
        raise ConfigError("init", f"expected 'stationary', {{point: ...}} or {{unranked: ...}}, got {raw!r}")
    raw = _mapping(raw, "init")
    if len(raw) != 1:
        raise ConfigError("init", "give exactly one of stationary, point, unranked")
    (kind, body), = raw.items()
    if kind == "stationary":
        if body not in (None, {}):
            raise ConfigError("init.stationary", "takes no fields")
        return Init("stationary")
    if kind == "point":
        body = _mapping(body, "init.point")
        _reject_unknown(body, ("v", "z"), "init.point")
        v = _real(body, "v", "init.point")
        if "z" not in body:
            raise ConfigError("init.point.z", "required field is missing")
        z = _vector(body["z"], "init.point.z", n)
        if any(zi < 0 for zi in z):
            raise ConfigError("init.point.z", f"gaps must be nonnegative, got {list(z)}")
        return Init("point", v=v, z=z)
    if kind == "unranked":
        body = _mapping(body, "init.unranked")
        _reject_unknown(body, ("v", "x"), "init.unranked")
        v = _real(body, "v", "init.unranked", 0.0)
        if "x" not in body:
            raise ConfigError("init.unranked.x", "required field is missing")
        x = _vector(body["x"], "init.unranked.x", n + 1)
        if any(b < a for a, b in zip(x, x[1:])):
            raise ConfigError("init.unranked.x", "positions must be sorted ascending")
        return Init("unranked", v=v, x=x)
    raise ConfigError(f"init.{kind}", "unknown key")


def _parse_outputs(raw):
    if raw is None:
        return (), None, ()
    if not isinstance(raw, list):
        raise ConfigError("outputs", f"expected a list, got {raw!r}")
    kinds, level, slices = [], None, ()
    for k, item in enumerate(raw):
        name = f"outputs[{k}]"
        if isinstance(item, str):
            kind, body = item, None
        else:
            item = _mapping(item, name)
            if len(item) != 1:
                raise ConfigError(name, "each output is a name or a single-key mapping")
            (kind, body), = item.items()
        if kind not in OUTPUT_KINDS:
            raise ConfigError(f"outputs.{kind}", "unknown key")
        if kind in kinds:
            raise ConfigError(f"outputs.{kind}", "listed twice")
        if kind == "hitting":
            body = _mapping(body, "outputs.hitting")
            _reject_unknown(body, ("level",), "outputs.hitting")
            level = _real(body, "level", "outputs.hitting")
        elif kind == "decay":
            body = _mapping(body, "outputs.decay")
            _reject_unknown(body, ("slices",), "outputs.decay")
            if "slices" not in body:
                raise ConfigError("outputs.decay.slices", "required field is missing")
            slices = _vector(body["slices"], "outputs.decay.slices")
            if not slices or any(s <= 0 for s in slices) or list(slices) != sorted(set(slices)):
                raise ConfigError("outputs.decay.slices", "must be positive and strictly increasing")
        elif body is not None:
            raise ConfigError(f"outputs.{kind}", "takes no fields")
        kinds.append(kind)
    return tuple(kinds), level, slices


TOP_KEYS = ("params", "grid", "replicas", "base_seed", "init", "outputs", "burn_in", "thin",
            "solver", "probes", "checks")


def validate_config(text: str) -> RunConfig:
    """Parse and validate a YAML run configuration."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("document", f"not valid YAML: {exc}") from None
    doc = _mapping({} if doc is None else doc, "document")
    _reject_unknown(doc, TOP_KEYS, "")

    if "params" not in doc:
        raise ConfigError("params", "required field is missing")
    p = _mapping(doc["params"], "params")
    _reject_unknown(p, ("n", "g"), "params")
    n = _integer(p, "n", "params", minimum=1)
    g = _real(p, "g", "params")
    if not g > 0:
        raise ConfigError("g", f"must be positive, got {g!r}")

    if "grid" not in doc:
        raise ConfigError("grid", "required field is missing")
    gr = _mapping(doc["grid"], "grid")
    _reject_unknown(gr, ("dt", "t_end", "record_dt"), "grid")
    dt = _real(gr, "dt", "grid", DEFAULT_DT, positive=True)
    t_end = _real(gr, "t_end", "grid", positive=True)
    record_dt = _real(gr, "record_dt", "grid", dt * max(1, round(DEFAULT_RECORD_DT / dt)), positive=True)
    try:
        grid = SimGrid(dt, t_end)
    except InputError as exc:
        raise ConfigError("grid", str(exc)) from None
    if not _is_multiple(record_dt, dt):
        raise ConfigError("grid.record_dt", f"must be a whole multiple of dt={dt}")

    replicas = _integer(doc, "replicas", "", 1, minimum=1)
    base_seed = _integer(doc, "base_seed", "", 0, minimum=0, maximum=(1 << 64) - 1)
    init = _parse_init(doc.get("init"), n)
    outputs, level, slices = _parse_outputs(doc.get("outputs"))

    burn_in = _real(doc, "burn_in", "", DEFAULT_BURN_FRAC * t_end, nonneg=True)
    if not burn_in < t_end:
        raise ConfigError("burn_in", f"must be below grid.t_end={t_end}, got {burn_in}")
    thin = _real(doc, "thin", "", DEFAULT_THIN, positive=True)
    if "stationary" in outputs and not _is_multiple(thin, record_dt):
        raise ConfigError("thin", f"must be a whole multiple of grid.record_dt={record_dt}")
    for s in slices:
        if s > t_end or not _is_multiple(s, record_dt):
            raise ConfigError("outputs.decay.slices",
                              f"slice {s} must lie on the record grid (record_dt={record_dt}) within t_end")

    solver = _mapping(doc.get("solver", {}), "solver")
    _reject_unknown(solver, ("window", "picard_tol", "max_picard"), "solver")
    window = _real(solver, "window", "solver", DEFAULT_WINDOW, positive=True)
    picard_tol = _real(solver, "picard_tol", "solver", DEFAULT_PICARD_TOL, positive=True)
    max_picard = _integer(solver, "max_picard", "solver", DEFAULT_MAX_PICARD, minimum=1)

    probes = _integer(doc, "probes", "", DEFAULT_PROBES, minimum=1)

    ck = _mapping(doc.get("checks", {}), "checks")
    defaults = Checks()
    _reject_unknown(ck, tuple(vars(defaults)), "checks")
    checks = Checks(**{k: _real(ck, k, "checks", getattr(defaults, k), positive=True)
                       for k in vars(defaults)})

    if init.kind == "unranked" and any(o in outputs for o in ("lln", "ordering", "hitting")):
        raise ConfigError("outputs", "lln, ordering and hitting need ranked local times; "
                                     "use init stationary or point")

    if init.kind == "point":
        params = ModelParams(n, g, init.v, init.z)
    elif init.kind == "unranked":
        zs = tuple(b - a for a, b in zip(init.x, init.x[1:]))
        params = ModelParams(n, g, init.v, zs)
    else:
        params = ModelParams(n, g)

    return RunConfig(
        params=params, grid=grid, replicas=replicas, base_seed=base_seed, init=init,
        outputs=outputs, hitting_level=level, decay_slices=slices, burn_in=burn_in,
        thin=thin, record_dt=record_dt, window=window, picard_tol=picard_tol,
        max_picard=max_picard, probes=probes, checks=checks,
    )


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return validate_config(fh.read())

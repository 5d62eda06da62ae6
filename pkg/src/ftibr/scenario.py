"""Scenario configuration: dataclasses plus TOML load/dump.

Every physical quantity carries its unit in the key name (``r_g_ohm``,
``f_hz``...). Frequencies are given in Hz and converted to rad/s by the
simulation.
"""
import math
import sys
from dataclasses import asdict, dataclass, fields, replace
from importlib import resources
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

SPLITTERS = ("decentralized", "baseline_adaptive")
EVENT_KINDS = ("open_line", "swell", "resistance_step")


@dataclass(frozen=True)
class IbrConfig:
    r_g_ohm: float = 0.027
    l_g0_henry: float = 0.0367
    delta_l_g_henry: float = 0.0
    r_g_nominal_ohm: float = 0.027
    r_m_ohm: float = 0.027
    l_m_henry: float = 0.0367
    k_ohm: float = 10.0
    r_hat0_ohm: float = 0.027
    gamma_r: float = 100.0
    r_bar_ohm: float = 0.27
    epsilon_ohm: float = 0.027
    i0_amp: tuple = (0.0, 0.0)
    i_m0_amp: tuple = (0.0, 0.0)


@dataclass(frozen=True)
class Event:
    t_s: float
    kind: str
    ibr: int = 0
    fraction: float = 0.0
    r_g_ohm: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    splitter: str = "decentralized"
    rng_seed: int = 0
    # time
    t_end_s: float = 0.4
    dt_plant_s: float = 1e-5
    allocator_period_s: float = 1e-3
    record_every: int = 10
    # grid
    v_gd_volt: float = 392.0
    v_gq_volt: float = 0.0
    f_hz: float = 60.0
    # power references
    p_a_watt: float = 10_000.0
    q_a_var: float = 0.0
    s_base_va: float = 0.0  # 0 means |p_A| (or 1 when p_A = 0)
    # graph
    edges: tuple = ((1, 2), (2, 3))
    tau: float = 0.0  # 0 means lambda_max(L)
    # allocator
    alpha: float = 0.1
    iters_per_period: int = 50
    allocator_tol: float = 1e-9
    beta_nominal: float = 1.0
    beta_fault: float = 1e4
    threshold_ohm: float = 0.0  # 0 means 0.5 * r_bar per IBR
    hysteresis_ohm: float = 0.0  # 0 means 0.1 * r_bar per IBR
    certificate_margin: float = 2.0
    cost_mu: float = 1.0
    cost_l_smooth: float = 1.0
    # offline solve
    solve_beta: tuple = ()
    solve_max_iters: int = 100_000
    solve_tol: float = 1e-9
    # baseline splitter
    baseline_rate_per_s: float = 20.0
    ibrs: tuple = (IbrConfig(), IbrConfig(), IbrConfig())
    events: tuple = ()

    @property
    def n_ibrs(self):
        return len(self.ibrs)

    @property
    def s_base(self):
        if self.s_base_va > 0:
            return self.s_base_va
        return abs(self.p_a_watt) if self.p_a_watt != 0 else 1.0

    @property
    def omega_g(self):
        return 2.0 * math.pi * self.f_hz

    @property
    def steps(self):
        return int(round(self.t_end_s / self.dt_plant_s))

    @property
    def allocator_stride(self):
        return max(1, int(round(self.allocator_period_s / self.dt_plant_s)))


# key layout of the TOML file: section -> {toml key: dataclass field}
_SECTIONS = {
    "time": {
        "t_end_s": "t_end_s",
        "dt_plant_s": "dt_plant_s",
        "allocator_period_s": "allocator_period_s",
        "record_every": "record_every",
    },
    "grid": {"v_gd_volt": "v_gd_volt", "v_gq_volt": "v_gq_volt", "f_hz": "f_hz"},
    "power": {"p_a_watt": "p_a_watt", "q_a_var": "q_a_var", "s_base_va": "s_base_va"},
    "graph": {"edges": "edges", "tau": "tau"},
    "allocator": {
        "alpha": "alpha",
        "iters_per_period": "iters_per_period",
        "tol": "allocator_tol",
        "beta_nominal": "beta_nominal",
        "beta_fault": "beta_fault",
        "threshold_ohm": "threshold_ohm",
        "hysteresis_ohm": "hysteresis_ohm",
        "certificate_margin": "certificate_margin",
        "cost_mu": "cost_mu",
        "cost_l_smooth": "cost_l_smooth",
    },
    "solve": {"beta": "solve_beta", "max_iters": "solve_max_iters", "tol": "solve_tol"},
    "baseline": {"rate_per_s": "baseline_rate_per_s"},
}
_TOP = ("name", "splitter", "rng_seed")
_IBR_FIELDS = {f.name: f for f in fields(IbrConfig)}
_EVENT_FIELDS = {f.name for f in fields(Event)}
_CFG_FIELDS = {f.name: f for f in fields(ScenarioConfig)}


def _coerce(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, "expected a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, "expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, "expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, "expected a string")
        return value
    return value


def _vec2(value, path):
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(path, "expected a [d, q] pair")
    return tuple(_coerce(x, 0.0, path) for x in value)


def _ibr_from_table(table, base, path):
    unknown = set(table) - set(_IBR_FIELDS)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown key")
    kwargs = asdict(base)
    for key, value in table.items():
        if key in ("i0_amp", "i_m0_amp"):
            kwargs[key] = _vec2(value, f"{path}.{key}")
        else:
            kwargs[key] = _coerce(value, _IBR_FIELDS[key].default, f"{path}.{key}")
    kwargs["i0_amp"] = tuple(kwargs["i0_amp"])
    kwargs["i_m0_amp"] = tuple(kwargs["i_m0_amp"])
    return IbrConfig(**kwargs)


def _event_from_table(table, path):
    unknown = set(table) - _EVENT_FIELDS
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown key")
    if "t_s" not in table or "kind" not in table:
        raise ConfigError(path, "events need t_s and kind")
    kwargs = {}
    for f in fields(Event):
        if f.name in table:
            default = 0.0 if f.name == "t_s" else f.default
            kwargs[f.name] = _coerce(table[f.name], default, f"{path}.{f.name}")
    return Event(**kwargs)


def from_dict(data):
    """Build and validate a ScenarioConfig from parsed TOML."""
    kwargs = {}
    known = set(_TOP) | set(_SECTIONS) | {"n_ibrs", "ibr_defaults", "ibr", "events"}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown key")
    for key in _TOP:
        if key in data:
            kwargs[key] = _coerce(data[key], _CFG_FIELDS[key].default, key)
    for section, mapping in _SECTIONS.items():
        table = data.get(section, {})
        if not isinstance(table, dict):
            raise ConfigError(section, "expected a table")
        for key, value in table.items():
            path = f"{section}.{key}"
            if key not in mapping:
                raise ConfigError(path, "unknown key")
            name = mapping[key]
            if name == "edges":
                if not isinstance(value, list):
                    raise ConfigError(path, "expected a list of [i, j] pairs")
                edges = []
                for n, e in enumerate(value):
                    if not isinstance(e, list) or len(e) != 2 or not all(
                        isinstance(x, int) and not isinstance(x, bool) for x in e
                    ):
                        raise ConfigError(f"{path}[{n}]", "expected an [i, j] integer pair")
                    edges.append((e[0], e[1]))
                kwargs[name] = tuple(edges)
            elif name == "solve_beta":
                if not isinstance(value, list):
                    raise ConfigError(path, "expected a list of numbers")
                kwargs[name] = tuple(_coerce(b, 0.0, f"{path}[{n}]") for n, b in enumerate(value))
            else:
                kwargs[name] = _coerce(value, _CFG_FIELDS[name].default, path)

    defaults = _ibr_from_table(data.get("ibr_defaults", {}), IbrConfig(), "ibr_defaults")
    ibr_tables = data.get("ibr", [])
    if not isinstance(ibr_tables, list):
        raise ConfigError("ibr", "expected an array of tables")
    n_ibrs = data.get("n_ibrs", len(ibr_tables) if ibr_tables else 3)
    n_ibrs = _coerce(n_ibrs, 0, "n_ibrs")
    if n_ibrs < 1:
        raise ConfigError("n_ibrs", "must be at least 1")
    if ibr_tables and len(ibr_tables) != n_ibrs:
        raise ConfigError("ibr", f"has {len(ibr_tables)} entries, n_ibrs is {n_ibrs}")
    if ibr_tables:
        ibrs = tuple(_ibr_from_table(t, defaults, f"ibr[{n}]") for n, t in enumerate(ibr_tables))
    else:
        ibrs = (defaults,) * n_ibrs
    kwargs["ibrs"] = ibrs
    kwargs["events"] = tuple(
        _event_from_table(t, f"events[{n}]") for n, t in enumerate(data.get("events", []))
    )
    cfg = ScenarioConfig(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg):
    def need(ok, path, message):
        if not ok:
            raise ConfigError(path, message)

    need(cfg.splitter in SPLITTERS, "splitter", f"must be one of {SPLITTERS}")
    need(cfg.t_end_s > 0, "time.t_end_s", "must be positive")
    need(cfg.dt_plant_s > 0, "time.dt_plant_s", "must be positive")
    need(cfg.allocator_period_s >= cfg.dt_plant_s, "time.allocator_period_s",
         "must be at least dt_plant_s")
    need(cfg.record_every >= 1, "time.record_every", "must be at least 1")
    need(math.hypot(cfg.v_gd_volt, cfg.v_gq_volt) > 0, "grid.v_gd_volt", "grid voltage is zero")
    need(cfg.f_hz > 0, "grid.f_hz", "must be positive")
    need(cfg.s_base_va >= 0, "power.s_base_va", "must be non-negative")
    need(cfg.tau >= 0, "graph.tau", "must be non-negative (0 selects the default)")
    need(cfg.alpha > 0, "allocator.alpha", "must be positive")
    need(cfg.iters_per_period >= 1, "allocator.iters_per_period", "must be at least 1")
    need(cfg.allocator_tol > 0, "allocator.tol", "must be positive")
    need(cfg.beta_nominal > 0, "allocator.beta_nominal", "must be positive")
    need(cfg.beta_fault > 0, "allocator.beta_fault", "must be positive")
    need(cfg.threshold_ohm >= 0, "allocator.threshold_ohm", "must be non-negative")
    need(cfg.hysteresis_ohm >= 0, "allocator.hysteresis_ohm", "must be non-negative")
    need(cfg.certificate_margin >= 1, "allocator.certificate_margin", "must be at least 1")
    need(0 < cfg.cost_mu <= cfg.cost_l_smooth, "allocator.cost_mu", "need 0 < cost_mu <= cost_l_smooth")
    need(cfg.solve_max_iters >= 1, "solve.max_iters", "must be at least 1")
    need(cfg.solve_tol > 0, "solve.tol", "must be positive")
    need(not cfg.solve_beta or len(cfg.solve_beta) == cfg.n_ibrs, "solve.beta",
         "needs one entry per IBR")
    need(all(b > 0 for b in cfg.solve_beta), "solve.beta", "entries must be positive")
    need(cfg.baseline_rate_per_s > 0, "baseline.rate_per_s", "must be positive")
    need(cfg.baseline_rate_per_s * cfg.allocator_period_s <= 1.0, "baseline.rate_per_s",
         "rate * allocator_period_s must not exceed 1")
    for n, ibr in enumerate(cfg.ibrs):
        path = f"ibr[{n}]"
        for key in ("r_g_ohm", "l_g0_henry", "r_g_nominal_ohm", "r_m_ohm", "l_m_henry",
                    "k_ohm", "gamma_r", "r_bar_ohm", "epsilon_ohm"):
            need(getattr(ibr, key) > 0, f"{path}.{key}", "must be positive")
        need(ibr.l_g0_henry + ibr.delta_l_g_henry > 0, f"{path}.delta_l_g_henry",
             "true inductance must stay positive")
        need(abs(ibr.r_hat0_ohm) < ibr.r_bar_ohm, f"{path}.r_hat0_ohm",
             "initial estimate must satisfy |r_hat0| < r_bar")
        if cfg.threshold_ohm == 0 and cfg.hysteresis_ohm > 0:
            need(0.5 * ibr.r_bar_ohm > cfg.hysteresis_ohm, "allocator.hysteresis_ohm",
                 "must be below the threshold")
    if cfg.threshold_ohm > 0:
        hyst = cfg.hysteresis_ohm or 0.2 * cfg.threshold_ohm
        need(cfg.threshold_ohm > hyst, "allocator.threshold_ohm", "must exceed hysteresis")
    for n, e in enumerate(cfg.edges):
        for node in e:
            need(1 <= node <= cfg.n_ibrs, f"graph.edges[{n}]", f"node {node} outside 1..{cfg.n_ibrs}")
        need(e[0] != e[1], f"graph.edges[{n}]", "self-loops are not allowed")
    last_t = -math.inf
    for n, ev in enumerate(cfg.events):
        path = f"events[{n}]"
        need(ev.kind in EVENT_KINDS, f"{path}.kind", f"must be one of {EVENT_KINDS}")
        need(ev.t_s >= 0, f"{path}.t_s", "must be non-negative")
        need(ev.t_s >= last_t, f"{path}.t_s", "events must be sorted by time")
        last_t = ev.t_s
        if ev.kind in ("open_line", "resistance_step"):
            need(1 <= ev.ibr <= cfg.n_ibrs, f"{path}.ibr", f"must be in 1..{cfg.n_ibrs}")
        if ev.kind == "swell":
            need(ev.fraction > -1, f"{path}.fraction", "must exceed -1")
        if ev.kind == "resistance_step":
            need(ev.r_g_ohm > 0, f"{path}.r_g_ohm", "must be positive")


def to_dict(cfg):
    """Fully explicit TOML-ready mapping; ``from_dict(to_dict(c)) == c``."""
    out = {key: getattr(cfg, key) for key in _TOP}
    for section, mapping in _SECTIONS.items():
        table = {}
        for key, name in mapping.items():
            value = getattr(cfg, name)
            if name == "edges":
                value = [list(e) for e in value]
            elif name == "solve_beta":
                value = list(value)
            table[key] = value
        out[section] = table
    out["n_ibrs"] = cfg.n_ibrs
    out["ibr"] = []
    for ibr in cfg.ibrs:
        d = asdict(ibr)
        d["i0_amp"] = list(d["i0_amp"])
        d["i_m0_amp"] = list(d["i_m0_amp"])
        out["ibr"].append(d)
    out["events"] = [_event_to_dict(e) for e in cfg.events]
    return out


def _event_to_dict(ev):
    d = {"t_s": ev.t_s, "kind": ev.kind}
    if ev.kind in ("open_line", "resistance_step"):
        d["ibr"] = ev.ibr
    if ev.kind == "swell":
        d["fraction"] = ev.fraction
    if ev.kind == "resistance_step":
        d["r_g_ohm"] = ev.r_g_ohm
    return d


def loads(text):
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"invalid TOML: {exc}") from exc
    return from_dict(data)


def dumps(cfg):
    return tomli_w.dumps(to_dict(cfg))


def bundled_scenarios():
    root = resources.files(__package__) / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def bundled_text(name):
    res = resources.files(__package__) / "scenarios" / f"{name}.toml"
    if not res.is_file():
        raise ConfigError("<config>", f"no such file or bundled scenario: {name}")
    return res.read_text(encoding="utf-8")


def load(path_or_name):
    """Load a scenario from a TOML path, or by bundled scenario name."""
    path = Path(path_or_name)
    if path.is_file():
        return loads(path.read_text(encoding="utf-8"))
    return loads(bundled_text(str(path_or_name)))


def with_overrides(cfg, **changes):
    new = replace(cfg, **changes)
    validate(new)
    return new

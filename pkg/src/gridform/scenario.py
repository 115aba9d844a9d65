"""Scenario files: JSON parsing, validation (all errors collected), and
canonical serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

DEVICE_TYPES = ("gfm_load", "gfm", "mppt", "fixed_pq", "freq_support",
                "sync_gen", "thevenin")
FORMING_TYPES = ("gfm_load", "gfm", "sync_gen", "thevenin")

_DEVICE_FIELDS = {
    "common": {"id", "type", "bus"},
    "gfm_load": {"s_n", "p_set", "q_set", "droop", "filter", "envelope",
                 "i_n", "rocof_max", "dc", "blackstart", "secondary"},
    "gfm": {"s_n", "p_set", "q_set", "droop", "filter", "envelope", "i_n",
            "rocof_max", "p_available", "blackstart", "secondary", "gfl"},
    "mppt": {"s_n", "p_available", "q_setpoint", "i_n", "tau_s", "pll"},
    "fixed_pq": {"p", "q"},
    "freq_support": {"p_nominal", "k_fl", "q", "tau_f"},
    "sync_gen": {"s_n", "h", "d", "x_d_transient", "r_a", "r_gov", "t_gov",
                 "gov_deadband", "k_avr", "v_ref", "p_set"},
    "thevenin": {"scr", "x_r", "h_eq", "d_eq", "v_set", "p_import", "s_n"},
}

_REF_NAMES = {
    "gfm_load": {"p_set", "q_set", "v_set", "omega_set"},
    "gfm": {"p_set", "q_set", "v_set", "omega_set", "p_available"},
    "mppt": {"p_available", "p_order", "q_setpoint"},
    "fixed_pq": {"p", "q"},
    "freq_support": {"p_nominal", "q"},
    "sync_gen": {"p_set", "v_ref"},
    "thevenin": {"p_event", "p_import"},
}


class ScenarioError(Exception):
    """Carries every validation problem found, not just the first."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid scenario:\n  " + "\n  ".join(errors))


@dataclass(frozen=True)
class BaseValues:
    s_base_mva: float = 100.0
    v_base_kv: float = 20.0
    f_base_hz: float = 50.0


@dataclass
class ScenarioSpec:
    id: str
    duration: float
    base: BaseValues = field(default_factory=BaseValues)
    dt: float = 1e-4
    output_dt: float = 1e-3
    monitored_bus: str | None = None
    init_mode: str = "equilibrate"
    init_settle: float = 0.5
    buses: list[dict] = field(default_factory=list)
    lines: list[dict] = field(default_factory=list)
    devices: list[dict] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    outputs: dict = field(default_factory=lambda: {"channels": "all"})


def _num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) \
        and math.isfinite(x)


def parse_scenario(text: str) -> ScenarioSpec:
    """Parse and validate a UTF-8 JSON scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"not valid JSON: {exc}"]) from None
    if not isinstance(doc, dict):
        raise ScenarioError(["scenario root must be a JSON object"])
    errors: list[str] = []

    def bad(msg):
        errors.append(msg)

    sid = doc.get("id")
    if not isinstance(sid, str) or not sid:
        bad("missing or empty scenario 'id'")
        sid = "unnamed"
    duration = doc.get("duration")
    if not _num(duration) or duration < 0:
        bad("'duration' must be a number >= 0")
        duration = 0.0
    dt = doc.get("dt", 1e-4)
    if not _num(dt) or dt <= 0:
        bad("'dt' must be a positive number")
        dt = 1e-4
    output_dt = doc.get("output_dt", 1e-3)
    if not _num(output_dt) or output_dt <= 0:
        bad("'output_dt' must be a positive number")
        output_dt = 1e-3
    ratio = output_dt / dt
    if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
        bad(f"dt ({dt}) must divide output_dt ({output_dt})")

    bcfg = doc.get("base", {})
    base = BaseValues(
        s_base_mva=bcfg.get("s_base_mva", 100.0),
        v_base_kv=bcfg.get("v_base_kv", 20.0),
        f_base_hz=bcfg.get("f_base_hz", 50.0))
    for name in ("s_base_mva", "v_base_kv", "f_base_hz"):
        if not _num(getattr(base, name)) or getattr(base, name) <= 0:
            bad(f"base.{name} must be positive")

    init = doc.get("init", {})
    init_mode = init.get("mode", "equilibrate")
    if init_mode not in ("equilibrate", "zero"):
        bad(f"init.mode must be 'equilibrate' or 'zero', got {init_mode!r}")
    init_settle = init.get("settle", 0.5)
    if not _num(init_settle) or init_settle < 0:
        bad("init.settle must be >= 0")

    buses = doc.get("buses", [])
    bus_ids: set[str] = set()
    for b in buses:
        bid = b.get("id") if isinstance(b, dict) else None
        if not isinstance(bid, str):
            bad(f"bus entry {b!r} needs a string 'id'")
            continue
        if bid in bus_ids:
            bad(f"duplicate bus id {bid!r}")
        bus_ids.add(bid)

    lines = doc.get("lines", [])
    line_ids: set[str] = set()
    for ln in lines:
        lid = ln.get("id")
        if not isinstance(lid, str):
            bad(f"line entry {ln!r} needs a string 'id'")
            continue
        if lid in line_ids:
            bad(f"duplicate line id {lid!r}")
        line_ids.add(lid)
        for end in ("from", "to"):
            if ln.get(end) not in bus_ids:
                bad(f"line {lid!r}: {end} bus {ln.get(end)!r} does not exist")
        r, x = ln.get("r", 0.0), ln.get("x", 0.0)
        if not (_num(r) and _num(x)) or (r <= 0 and x <= 0):
            bad(f"line {lid!r}: needs r > 0 or x > 0")
        if ln.get("breaker", "closed") not in ("closed", "open"):
            bad(f"line {lid!r}: breaker must be 'closed' or 'open'")

    devices = doc.get("devices", [])
    dev_ids: set[str] = set()
    dev_type: dict[str, str] = {}
    gfm_buses: set[str] = set()
    any_forming = False
    any_blackstart = False
    for cfg in devices:
        did = cfg.get("id")
        if not isinstance(did, str):
            bad(f"device entry {cfg!r} needs a string 'id'")
            continue
        if did in dev_ids:
            bad(f"duplicate device id {did!r}")
        dev_ids.add(did)
        kind = cfg.get("type")
        if kind not in DEVICE_TYPES:
            bad(f"device {did!r}: unknown type {kind!r}")
            continue
        dev_type[did] = kind
        if cfg.get("bus") not in bus_ids:
            bad(f"device {did!r}: bus {cfg.get('bus')!r} does not exist")
        allowed = _DEVICE_FIELDS["common"] | _DEVICE_FIELDS[kind]
        for key in cfg:
            if key not in allowed:
                bad(f"device {did!r}: unknown field {key!r}")
        if kind in FORMING_TYPES:
            any_forming = True
        if kind in ("gfm", "gfm_load"):
            if cfg.get("bus") in gfm_buses:
                bad(f"device {did!r}: a grid-forming converter already "
                    f"occupies bus {cfg.get('bus')!r}")
            gfm_buses.add(cfg.get("bus"))
            if "blackstart" in cfg:
                any_blackstart = True
        # deep parameter validation via the device factory
        try:
            from .engine import build_device
            build_device(cfg, base.f_base_hz)
        except ScenarioError:
            raise
        except Exception as exc:
            bad(f"device {did!r}: {exc}")

    if devices and not any_forming:
        bad("no forming source among the devices "
            "(need one of: " + ", ".join(FORMING_TYPES) + ")")
    if any_blackstart and init_mode != "zero":
        bad("black-start devices require init.mode 'zero' (de-energized start)")

    monitored = doc.get("monitored_bus")
    if monitored is None and devices:
        for cfg in devices:
            if cfg.get("type") in FORMING_TYPES and cfg.get("bus") in bus_ids:
                monitored = cfg["bus"]
                break
    if monitored is not None and monitored not in bus_ids:
        bad(f"monitored_bus {monitored!r} does not exist")

    events = doc.get("events", [])
    for k, ev in enumerate(events):
        t = ev.get("time")
        act = ev.get("action")
        where = f"event #{k} ({act!r})"
        if not _num(t) or t < 0:
            bad(f"{where}: time must be a number >= 0")
        elif t > duration:
            bad(f"{where}: time {t} is beyond the scenario duration {duration}")
        if act in ("open_breaker", "close_breaker"):
            if ev.get("id") not in line_ids:
                bad(f"{where}: unknown breaker/line {ev.get('id')!r}")
        elif act in ("apply_fault", "clear_fault"):
            if ev.get("bus") not in bus_ids:
                bad(f"{where}: unknown bus {ev.get('bus')!r}")
            if act == "apply_fault":
                r, x = ev.get("r", 0.0), ev.get("x", 0.0)
                if not (_num(r) and _num(x)) or r < 0 or (r == 0 and x == 0):
                    bad(f"{where}: fault needs r >= 0 and a nonzero impedance")
        elif act == "set_reference":
            did = ev.get("device")
            if did not in dev_ids:
                bad(f"{where}: unknown device {did!r}")
            elif ev.get("name") not in _REF_NAMES.get(dev_type.get(did, ""), set()):
                bad(f"{where}: device {did!r} has no reference "
                    f"{ev.get('name')!r}")
            if not _num(ev.get("value")):
                bad(f"{where}: 'value' must be a number")
        elif act == "switch_mode":
            did = ev.get("device")
            if did not in dev_ids:
                bad(f"{where}: unknown device {did!r}")
            elif not (dev_type.get(did) == "gfm" and ev.get("mode") == "mppt"):
                bad(f"{where}: only a 'gfm' renewable may switch to 'mppt'")
        else:
            bad(f"{where}: unknown action")

    outputs = doc.get("outputs", {"channels": "all"})
    ch = outputs.get("channels", "all")
    if ch != "all" and not (isinstance(ch, list)
                            and all(isinstance(c, str) for c in ch)):
        bad("outputs.channels must be 'all' or a list of channel names")

    if errors:
        raise ScenarioError(errors)
    return ScenarioSpec(
        id=sid, duration=duration, base=base, dt=dt, output_dt=output_dt,
        monitored_bus=monitored, init_mode=init_mode, init_settle=init_settle,
        buses=buses, lines=lines, devices=devices, events=events,
        outputs=outputs)


def serialize_scenario(spec: ScenarioSpec) -> str:
    doc = {
        "id": spec.id,
        "base": {"s_base_mva": spec.base.s_base_mva,
                 "v_base_kv": spec.base.v_base_kv,
                 "f_base_hz": spec.base.f_base_hz},
        "duration": spec.duration,
        "dt": spec.dt,
        "output_dt": spec.output_dt,
        "monitored_bus": spec.monitored_bus,
        "init": {"mode": spec.init_mode, "settle": spec.init_settle},
        "buses": spec.buses,
        "lines": spec.lines,
        "devices": spec.devices,
        "events": spec.events,
        "outputs": spec.outputs,
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def load_scenario(path) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())

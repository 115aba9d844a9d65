"""Non-grid-forming devices: grid-following renewables, synchronous
machines, the Thevenin grid equivalent, and static loads.

Device classes share an informal protocol used by the engine:

* ``n_states`` continuous states, laid out in a global flat vector at
  offset ``i0``; derivatives are written into a plain list;
* injections/known voltages are complex phasors in the network frame on
  the system base; device internals run in per-unit on the device base.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TWO_PI = 2.0 * math.pi


@dataclass
class RampedRef:
    """A reference that moves linearly to a new target over a ramp time."""

    value: float
    _t0: float = 0.0
    _v0: float = 0.0
    _ramp: float = 0.0

    def __post_init__(self):
        self._v0 = self.value

    def set(self, target: float, ramp: float, t_now: float) -> None:
        self._v0 = self.get(t_now)
        self.value = target
        self._t0 = t_now
        self._ramp = max(ramp, 0.0)

    def get(self, t: float) -> float:
        if self._ramp <= 0.0 or t >= self._t0 + self._ramp:
            return self.value
        if t <= self._t0:
            return self._v0
        return self._v0 + (self.value - self._v0) * (t - self._t0) / self._ramp


class DeviceBase:
    forming = False
    n_states = 0

    def __init__(self, dev_id: str, bus: str):
        self.dev_id = dev_id
        self.bus = bus
        self.i0 = 0          # state offset, assigned by the engine
        self.bus_idx = -1    # assigned by the engine
        self.offline = False
        self.refs: dict[str, RampedRef] = {}

    def assign(self, i0: int) -> None:
        self.i0 = i0

    def set_reference(self, name: str, value: float, ramp: float, t: float) -> None:
        if name not in self.refs:
            raise KeyError(
                f"device {self.dev_id!r} has no reference {name!r}; "
                f"available: {sorted(self.refs)}")
        self.refs[name].set(value, ramp, t)

    # network construction hooks -------------------------------------------
    def register_network(self, net, scale: float) -> None:
        """Add shunts / internal buses owned by this device."""

    def initial_state(self) -> list[float]:
        return [0.0] * self.n_states


# ---------------------------------------------------------------------------
# grid-following renewable converter
# ---------------------------------------------------------------------------

class GflConverter(DeviceBase):
    """MPPT renewable: PLL-synchronized current source with a tau_s lag.

    Injected active power is capped at the instantaneously available power;
    current magnitude is capped at i_n with the angle preserved.
    """

    n_states = 4  # delta_pll, xi_pll, i_q, i_d   (PLL frame, device pu)

    def __init__(self, dev_id, bus, s_n=1.0, p_available=0.0, q_setpoint=0.0,
                 i_n=1.2, tau_s=0.002, pll_kp=1.3, pll_ki=250.0,
                 omega_base=TWO_PI * 50.0):
        super().__init__(dev_id, bus)
        self.s_n = s_n
        self.i_n = i_n
        self.tau_s = tau_s
        self.pll_kp = pll_kp
        self.pll_ki = pll_ki
        self.omega_b = omega_base
        self.refs = {
            "p_available": RampedRef(p_available),
            "p_order": RampedRef(p_available),
            "q_setpoint": RampedRef(q_setpoint),
        }
        self.lost_sync = False
        self._low_v_time = 0.0
        self._ref_cache = None
        self._inj_cache = None

    # -- helpers -------------------------------------------------------------

    def _orders(self, t):
        cache = self._ref_cache
        if cache is not None and cache[0] == t:
            return cache
        p_av = self.refs["p_available"].get(t)
        p_ord = min(self.refs["p_order"].get(t), p_av)
        q_ord = self.refs["q_setpoint"].get(t)
        self._ref_cache = (t, p_av, p_ord, q_ord)
        return self._ref_cache

    def _current_refs(self, t, v_q):
        _, p_av, p_ord, q_ord = self._orders(t)
        v_pos = max(v_q, 0.1)
        iq = p_ord / v_pos
        id_ = q_ord / v_pos
        mag = math.hypot(iq, id_)
        if mag > self.i_n:
            scale = self.i_n / mag
            iq *= scale
            id_ *= scale
        return iq, id_

    def injection(self, t, yl, v_bus: complex) -> complex:
        """Voltage-dependent Norton injection (network frame, system pu)."""
        if self.offline:
            return 0j
        cache = self._inj_cache
        if cache is not None and cache[0] == t:
            _, rot, i_net, iq, id_ = cache
        else:
            k = self.i0
            delta, iq, id_ = yl[k], yl[k + 2], yl[k + 3]
            rot = complex(math.cos(delta), math.sin(delta))
            i_net = complex(iq, -id_) * rot * self.s_n
            self._inj_cache = (t, rot, i_net, iq, id_)
        # instantaneous cap of injected active power at the available power,
        # plus the overvoltage current backoff every converter carries
        vz = v_bus * rot.conjugate()
        vm = abs(vz)
        if vm > 1.2:
            from .gfm import overvoltage_backoff
            i_net = i_net * overvoltage_backoff(vm)
        p = vz.real * iq - vz.imag * id_   # v_q*i_q + v_d*i_d with d = -imag
        p_av = self._orders(t)[1]
        if p > p_av > 0.0:
            return i_net * (p_av / p)
        return i_net

    def derivatives(self, t, yl, v_bus: complex, dy: list) -> None:
        k = self.i0
        if self.offline:
            dy[k] = 0.0
            dy[k + 1] = -yl[k + 1] / 0.02
            dy[k + 2] = -yl[k + 2] / 0.02
            dy[k + 3] = -yl[k + 3] / 0.02
            return
        delta, xi, iq, id_ = yl[k], yl[k + 1], yl[k + 2], yl[k + 3]
        vz = v_bus * complex(math.cos(delta), -math.sin(delta))
        v_q, v_d = vz.real, -vz.imag
        vm = abs(vz)
        eps = math.atan2(-v_d, v_q) if vm > 0.05 else 0.0
        omega = 1.0 + xi + self.pll_kp * eps
        omega = min(max(omega, 0.85), 1.15)
        iq_ref, id_ref = self._current_refs(t, v_q)
        dy[k] = self.omega_b * (omega - 1.0)
        dy[k + 1] = self.pll_ki * eps
        dy[k + 2] = (iq_ref - iq) / self.tau_s
        dy[k + 3] = (id_ref - id_) / self.tau_s

    def update_flags(self, v_mag: float, dt: float) -> None:
        if self.offline or v_mag < 0.1:
            self._low_v_time += dt
        else:
            self._low_v_time = 0.0
        if self._low_v_time > 0.1:
            self.lost_sync = True

    def init_steady(self, t, v_bus: complex) -> list[float]:
        delta = math.atan2(v_bus.imag, v_bus.real)
        vz = v_bus * complex(math.cos(delta), -math.sin(delta))
        iq, id_ = self._current_refs(t, vz.real)
        return [delta, 0.0, iq, id_]

    def channels(self, t, yl, v_bus: complex) -> dict[str, float]:
        inj = self.injection(t, yl, v_bus)
        s = v_bus * inj.conjugate()
        k = self.i0
        f_hz = (1.0 + yl[k + 1]) * self.omega_b / TWO_PI
        i_mag = math.hypot(yl[k + 2], yl[k + 3])
        return {f"P_{self.dev_id}": s.real, f"Q_{self.dev_id}": s.imag,
                f"f_{self.dev_id}": f_hz, f"Irms_{self.dev_id}": i_mag}


# ---------------------------------------------------------------------------
# synchronous generator (classical model + governor + first-order AVR)
# ---------------------------------------------------------------------------

class SyncGenerator(DeviceBase):
    forming = True
    n_states = 4  # delta, omega, e_q, p_m

    def __init__(self, dev_id, bus, s_n=1.0, h=5.0, d=1.0, x_d_transient=0.3,
                 r_a=0.005, r_gov=0.05, t_gov=0.5, gov_deadband=0.0,
                 k_avr=20.0, v_ref=1.0, p_set=0.0, omega_base=TWO_PI * 50.0):
        super().__init__(dev_id, bus)
        if h <= 0.0:
            raise ValueError("inertia constant must be positive")
        self.s_n = s_n
        self.h = h
        self.d = d
        self.x_dp = x_d_transient
        self.r_a = r_a
        self.r_gov = r_gov
        self.t_gov = t_gov
        self.gov_deadband = gov_deadband
        self.k_avr = k_avr
        self.omega_b = omega_base
        self.refs = {"p_set": RampedRef(p_set), "v_ref": RampedRef(v_ref)}
        self.emf_bus = f"{dev_id}.emf"

    def register_network(self, net, scale) -> None:
        from .network import Line
        net.add_bus(self.emf_bus)
        # machine branch on the system base
        net.add_line(Line(f"{self.dev_id}.xdp", self.emf_bus, self.bus,
                          self.r_a / self.s_n, self.x_dp / self.s_n))

    def known_voltage(self, yl) -> complex:
        k = self.i0
        delta, e_q = yl[k], yl[k + 2]
        return e_q * complex(math.cos(delta), math.sin(delta))

    def electrical_power(self, yl, i_emf: complex) -> float:
        """Air-gap power in device pu from the EMF-node injection."""
        k = self.i0
        e = self.known_voltage(yl)
        return (e * i_emf.conjugate()).real / self.s_n

    def derivatives(self, t, yl, i_emf: complex, v_term: complex, dy: list) -> None:
        k = self.i0
        omega, e_q, p_m = yl[k + 1], yl[k + 2], yl[k + 3]
        p_e = self.electrical_power(yl, i_emf)
        dy[k] = self.omega_b * (omega - 1.0)
        dy[k + 1] = (p_m - p_e - self.d * (omega - 1.0)) / (2.0 * self.h)
        # governor with optional deadband; r_gov <= 0 disables droop response
        dw = omega - 1.0
        if abs(dw) <= self.gov_deadband or self.r_gov <= 0.0:
            gov = 0.0
        else:
            gov = -(dw - math.copysign(self.gov_deadband, dw)) / self.r_gov
        target = self.refs["p_set"].get(t) + gov
        target = min(max(target, 0.0), 1.2)
        dy[k + 3] = (target - p_m) / self.t_gov
        # integral AVR holding the terminal voltage
        de = self.k_avr * (self.refs["v_ref"].get(t) - abs(v_term))
        if (e_q >= 1.8 and de > 0.0) or (e_q <= 0.2 and de < 0.0):
            de = 0.0
        dy[k + 2] = de

    def init_steady(self, delta, e_q, p_e_dev) -> list[float]:
        return [delta, 1.0, e_q, p_e_dev]

    def omega_of(self, yl) -> float:
        return yl[self.i0 + 1]

    def channels(self, t, yl, i_emf: complex, v_term: complex) -> dict:
        p_e = self.electrical_power(yl, i_emf) * self.s_n
        s_term = v_term * i_emf.conjugate()
        return {
            f"P_{self.dev_id}": p_e,
            f"Q_{self.dev_id}": s_term.imag,
            f"f_{self.dev_id}": yl[self.i0 + 1] * self.omega_b / TWO_PI,
        }


# ---------------------------------------------------------------------------
# Thevenin grid equivalent
# ---------------------------------------------------------------------------

class TheveninGrid(DeviceBase):
    """Bulk grid: EMF behind 1/SCR with an aggregated swing response.

    Frequency events are injected as an internal power step p_event; device
    support received from the study network counteracts it through the
    aggregate damping d_eq.
    """

    forming = True
    n_states = 2  # delta, omega

    def __init__(self, dev_id, bus, scr=2.0, x_r=10.0, h_eq=2.0, d_eq=100.0,
                 v_set=1.0, p_import=0.0, s_n=10.0, omega_base=TWO_PI * 50.0):
        super().__init__(dev_id, bus)
        if scr <= 0.0:
            raise ValueError("short-circuit ratio must be positive")
        self.scr = scr
        z = 1.0 / scr
        self.x_src = z * x_r / math.hypot(1.0, x_r)
        self.r_src = self.x_src / x_r
        self.h_eq = h_eq
        self.d_eq = d_eq
        self.v_set = v_set
        self.s_n = s_n
        self.omega_b = omega_base
        self.refs = {"p_event": RampedRef(0.0), "p_import": RampedRef(p_import)}
        self.p_sched = p_import  # refined after equilibration
        self.emf_bus = f"{dev_id}.emf"

    def register_network(self, net, scale) -> None:
        from .network import Line
        net.add_bus(self.emf_bus)
        net.add_line(Line(f"{self.dev_id}.zsrc", self.emf_bus, self.bus,
                          self.r_src, self.x_src))

    def known_voltage(self, yl) -> complex:
        delta = yl[self.i0]
        return self.v_set * complex(math.cos(delta), math.sin(delta))

    def absorbed_power(self, yl, i_emf: complex) -> float:
        e = self.known_voltage(yl)
        return -(e * i_emf.conjugate()).real

    def derivatives(self, t, yl, i_emf: complex, dy: list) -> None:
        k = self.i0
        omega = yl[k + 1]
        p_abs = self.absorbed_power(yl, i_emf)
        imbalance = (p_abs - self.p_sched) - self.refs["p_event"].get(t)
        dy[k] = self.omega_b * (omega - 1.0)
        dy[k + 1] = (imbalance - self.d_eq * (omega - 1.0)) / (2.0 * self.h_eq)

    def init_steady(self) -> list[float]:
        return [0.0, 1.0]

    def omega_of(self, yl) -> float:
        return yl[self.i0 + 1]

    def channels(self, t, yl, i_emf: complex) -> dict:
        return {
            f"P_{self.dev_id}": self.absorbed_power(yl, i_emf),
            f"f_{self.dev_id}": yl[self.i0 + 1] * self.omega_b / TWO_PI,
        }


# ---------------------------------------------------------------------------
# static loads
# ---------------------------------------------------------------------------

def _load_current(s: complex, v_bus: complex) -> complex:
    """Injection of a static load: constant power above the collapse guard,
    constant impedance below it, blended linearly over a narrow band around
    the 0.3 pu break voltage so the solve stays differentiable."""
    vm = abs(v_bus)
    vb = FixedPQLoad.V_BREAK
    lo, hi = vb - 0.02, vb + 0.02
    if vm >= hi:
        return -(s / v_bus).conjugate()
    i_z = -v_bus * s.conjugate() / (vb * vb)
    if vm <= lo:
        return i_z
    w = (vm - lo) / (hi - lo)
    return w * -(s / v_bus).conjugate() + (1.0 - w) * i_z


class FixedPQLoad(DeviceBase):
    """Constant-power draw, degrading to constant impedance below 0.3 pu."""

    n_states = 0
    V_BREAK = 0.3

    def __init__(self, dev_id, bus, p=0.0, q=0.0):
        super().__init__(dev_id, bus)
        self.refs = {"p": RampedRef(p), "q": RampedRef(q)}
        self._s_cache = None

    def _s(self, t) -> complex:
        cache = self._s_cache
        if cache is not None and cache[0] == t:
            return cache[1]
        s = complex(self.refs["p"].get(t), self.refs["q"].get(t))
        self._s_cache = (t, s)
        return s

    def injection(self, t, yl, v_bus: complex) -> complex:
        if self.offline:
            return 0j
        s = self._s(t)
        if s == 0j or v_bus == 0j:
            return 0j
        return _load_current(s, v_bus)

    def channels(self, t, yl, v_bus: complex) -> dict:
        s = v_bus * (-self.injection(t, yl, v_bus)).conjugate()
        return {f"P_{self.dev_id}": s.real, f"Q_{self.dev_id}": s.imag}


class FreqSupportLoad(DeviceBase):
    """Load with a power-frequency droop on the island frequency.

    Consumption p_nominal + k_fl*(f - f_n) is clamped at zero from below;
    the frequency measurement passes through a tau_f low-pass filter.
    """

    n_states = 1  # filtered frequency deviation [pu]

    def __init__(self, dev_id, bus, p_nominal=0.0, k_fl=0.0, q=0.0, tau_f=0.05):
        super().__init__(dev_id, bus)
        if k_fl < 0.0:
            raise ValueError("k_fl must be >= 0 (consumption falls with frequency)")
        self.k_fl = k_fl
        self.tau_f = tau_f
        self.refs = {"p_nominal": RampedRef(p_nominal), "q": RampedRef(q)}

    def consumption(self, t, yl) -> float:
        p = self.refs["p_nominal"].get(t) + self.k_fl * yl[self.i0]
        return max(p, 0.0)

    def injection(self, t, yl, v_bus: complex) -> complex:
        if self.offline:
            return 0j
        s = complex(self.consumption(t, yl), self.refs["q"].get(t))
        if s == 0j or v_bus == 0j:
            return 0j
        return _load_current(s, v_bus)

    def derivatives(self, t, yl, island_freq_dev: float, dy: list) -> None:
        k = self.i0
        if self.offline:
            dy[k] = -yl[k] / 0.02
            return
        dy[k] = (island_freq_dev - yl[k]) / self.tau_f

    def channels(self, t, yl, v_bus: complex) -> dict:
        s = v_bus * (-self.injection(t, yl, v_bus)).conjugate()
        return {f"P_{self.dev_id}": s.real, f"Q_{self.dev_id}": s.imag}

"""The composed grid-forming converter device (source or flexible load).

Average-value converter: an internal EMF behind the output filter
impedance. The EMF tracks its command with the current-loop time constant,
so the converter current (algebraic, solved with the network) follows its
reference with that same lag. Control: active/reactive droops with
virtual-inertia filters, a ROCOF-limited frequency reference, a voltage
loop composed as a virtual admittance (the PI-augmented bus-voltage error
divided by the filter impedance sets the current reference, whose integral
trims the bus voltage exactly onto the droop reference), angle-preserving
current saturation realized as an interface mode switch (the network sees
a current source at the limited reference while saturated), envelope
limit trimming, an optional phased black start, an optional slow
secondary trim, and (for loads) the DC-link / flexible-load stage.

Against an inductive network the virtual-admittance division routes
voltage-magnitude errors into reactive current, which is what saturates
during close faults; a converter-interfaced load additionally never
injects active current (its active reference is clamped at zero from
above).
"""

from __future__ import annotations

import math

from .control import (BlackStartSchedule, CascadeGains, DcSideParams,
                      DroopParams, OperatingEnvelope, dc_side_derivatives)
from .devices import DeviceBase, RampedRef, TWO_PI

# state layout
_DELTA, _EQ, _ED, _XP, _XQ, _WLIM = 0, 1, 2, 3, 4, 5
_XIVQ, _XIVD, _XENV = 6, 7, 8
_SECP, _SECQ = 9, 10
_VT, _VH, _XIDC = 11, 12, 13

K_ENV = 0.1        # envelope limit-integrator gain [pu-freq / pu-power / s]
TAU_ENV = 0.1      # limit-integrator release time [s]
TAU_RL = 0.002     # ROCOF-limiter tracking lag [s]
SAT_RELEASE = 0.98  # hysteresis for leaving the saturated interface mode
OV_START, OV_FULL = 1.2, 1.6  # converter overvoltage current backoff band


def overvoltage_backoff(v_mag: float) -> float:
    """Current derating factor of a saturated converter under overvoltage.

    Unity below OV_START, zero above OV_FULL; keeps a transiently
    anchor-less network (every converter current-limited at once) at a
    bounded voltage, the way hardware protection would.
    """
    if v_mag <= OV_START:
        return 1.0
    if v_mag >= OV_FULL:
        return 0.0
    return (OV_FULL - v_mag) / (OV_FULL - OV_START)


class GfmConverter(DeviceBase):
    forming = True

    def __init__(self, dev_id, bus, s_n=1.0, is_load=True, p_set=0.0,
                 q_set=0.0, droop: DroopParams | None = None,
                 gains: CascadeGains | None = None,
                 envelope: OperatingEnvelope | None = None,
                 x_l=0.15, r_f=0.015, b_c=0.05, tau_s=0.002, d_v=0.707,
                 i_n=1.2, rocof_max_hz=4.0, p_available=None,
                 dc: DcSideParams | None = None,
                 blackstart: BlackStartSchedule | None = None,
                 secondary: dict | None = None,
                 f_base=50.0):
        super().__init__(dev_id, bus)
        self.s_n = s_n
        self.is_load = is_load
        self.omega_b = TWO_PI * f_base
        self.droop = droop or DroopParams.tuned(s_n=1.0)
        self.gains = gains or CascadeGains.from_filter_pu(
            x_l, r_f, b_c, tau_s, self.omega_b, d_v=d_v)
        self.envelope = envelope or OperatingEnvelope(i_n=i_n)
        self.i_n = i_n
        self.rate_pu = rocof_max_hz / f_base
        self.x_l = x_l
        self.r_f = r_f
        self.b_c = b_c
        self.blackstart = blackstart
        self.dc = (dc or DcSideParams()) if is_load else None
        self.n_states = 14 if is_load else 11
        self.z_f = complex(r_f, x_l)
        self._inv_zf = 1.0 / self.z_f
        sec = secondary or {}
        self.sec_on = bool(sec.get("enabled", False))
        self.sec_kf = sec.get("k_f", 0.5)
        self.sec_kv = sec.get("k_v", 0.5)
        self.refs = {
            "p_set": RampedRef(p_set),        # consumption (load) / output (source)
            "q_set": RampedRef(q_set),        # injection-positive
            "v_set": RampedRef(self.droop.v_n),
            "omega_set": RampedRef(self.droop.omega_n),
        }
        if p_available is not None:
            self.refs["p_available"] = RampedRef(p_available)
        self.sat_mode = False      # network-interface mode, engine-managed
        self.env_limited = False
        self.dc_clamped = False

    # -- network hooks --------------------------------------------------------

    def register_network(self, net, scale) -> None:
        # filter capacitor as a constant shunt at nominal frequency
        net.add_shunt(self.bus, 1j * self.b_c * self.s_n)

    def emf_net(self, yl) -> complex:
        """Internal EMF phasor in the network frame, system voltage base."""
        k = self.i0
        delta = yl[k + _DELTA]
        return complex(yl[k + _EQ], -yl[k + _ED]) * complex(math.cos(delta),
                                                            math.sin(delta))

    def source_coeffs(self, yl) -> tuple[complex, complex]:
        """(c, g) of the unsaturated interface i_inj = c - g*v_bus
        (network frame, system base)."""
        g = self._inv_zf * self.s_n
        return self.emf_net(yl) * g, g

    # -- control algebra -------------------------------------------------------

    def _p_star_inj(self, t) -> float:
        """Active-power setpoint in the controller's injection convention."""
        p = self.refs["p_set"].get(t)
        return -p if self.is_load else p

    def _injection_limits(self, t) -> tuple[float, float]:
        env = self.envelope
        if self.is_load:
            lo, hi = -env.p_max, -env.p_min
        else:
            lo, hi = env.p_min, env.p_max
            if "p_available" in self.refs:
                hi = min(hi, self.refs["p_available"].get(t))
        return lo, hi

    def _droop_refs(self, t, yl) -> tuple[float, float, bool]:
        """(omega_cmd, v_ref, power_loops_on) from droops/black start."""
        k = self.i0
        dr = self.droop
        bs = self.blackstart
        loops_on = bs is None or bs.power_loops_on(t)
        if not loops_on:
            return dr.omega_n, bs.v_ref(t), False
        sec_p = yl[k + _SECP] if self.sec_on else 0.0
        sec_q = yl[k + _SECQ] if self.sec_on else 0.0
        scale = 1.0 if bs is None else bs.setpoint_scale(t)
        p_star = self._p_star_inj(t) * scale + sec_p
        q_star = self.refs["q_set"].get(t) * scale + sec_q
        omega_cmd = dr.k_p * (p_star - yl[k + _XP]) \
            + self.refs["omega_set"].get(t) + yl[k + _XENV]
        env = self.envelope
        omega_cmd = min(max(omega_cmd, env.omega_min), env.omega_max)
        v_ref = dr.k_q * (q_star - yl[k + _XQ]) + self.refs["v_set"].get(t)
        v_ref = min(max(v_ref, env.v_min), env.v_max)
        return omega_cmd, v_ref, True

    def current_reference(self, t, yl, v_q, v_d):
        """Saturated current reference in the device frame.

        Returns (i_ref_q, i_ref_d, limited).
        """
        k = self.i0
        g = self.gains
        _, v_ref, _ = self._droop_refs(t, yl)
        e_q = v_ref - v_q
        e_d = -v_d
        num = complex((1.0 + g.k_pv) * e_q + yl[k + _XIVQ],
                      -((1.0 + g.k_pv) * e_d + yl[k + _XIVD]))
        i_virt = num * self._inv_zf
        return self.limit_reference(i_virt.real, -i_virt.imag)

    def limit_reference(self, i_raw_q: float, i_raw_d: float):
        """Load-nature clamp plus angle-preserving magnitude saturation."""
        limited = False
        if self.is_load and i_raw_q > 0.0:
            i_raw_q = 0.0  # a load never injects active current
            limited = True
        mag = math.hypot(i_raw_q, i_raw_d)
        if mag > self.i_n:
            f = self.i_n / mag
            return i_raw_q * f, i_raw_d * f, True
        return i_raw_q, i_raw_d, limited

    def sat_injection(self, t, yl, v_bus: complex) -> complex:
        """Network-frame injection while in the saturated interface mode."""
        k = self.i0
        delta = yl[k + _DELTA]
        cd, sd = math.cos(delta), math.sin(delta)
        vz = v_bus * complex(cd, -sd)
        iq, id_, _ = self.current_reference(t, yl, vz.real, -vz.imag)
        return complex(iq, -id_) * complex(cd, sd) * self.s_n \
            * overvoltage_backoff(abs(v_bus))

    def derivatives(self, t, yl, v_bus: complex, i_inj: complex, dy: list) -> None:
        """i_inj is the solved network-frame injection (system base)."""
        k = self.i0
        delta = yl[k + _DELTA]
        e_q, e_d = yl[k + _EQ], yl[k + _ED]
        x_p, x_qf = yl[k + _XP], yl[k + _XQ]
        w = yl[k + _WLIM]
        dr, g = self.droop, self.gains

        cd, sd = math.cos(delta), math.sin(delta)
        rot_inv = complex(cd, -sd)
        vz = v_bus * rot_inv
        v_q, v_d = vz.real, -vz.imag
        iz = i_inj * rot_inv / self.s_n
        iq, id_ = iz.real, -iz.imag

        p = v_q * iq + v_d * id_
        q = v_q * id_ - v_d * iq

        omega_cmd, v_ref, loops_on = self._droop_refs(t, yl)

        # ROCOF-limited frequency reference
        slope = (omega_cmd - w) / TAU_RL
        if slope > self.rate_pu:
            slope = self.rate_pu
        elif slope < -self.rate_pu:
            slope = -self.rate_pu

        # voltage loop -> saturated current reference
        ev_q = v_ref - v_q
        ev_d = -v_d
        num = complex((1.0 + g.k_pv) * ev_q + yl[k + _XIVQ],
                      -((1.0 + g.k_pv) * ev_d + yl[k + _XIVD]))
        i_virt = num * self._inv_zf
        i_ref_q, i_ref_d, freeze = self.limit_reference(i_virt.real,
                                                        -i_virt.imag)
        dy[k + _XIVQ] = 0.0 if freeze else g.k_iv * ev_q
        dy[k + _XIVD] = 0.0 if freeze else g.k_iv * ev_d

        # the EMF command realizes the current reference through the filter;
        # tracking it with tau_s reproduces the current-loop response
        e_cmd = complex(v_q, -v_d) + self.z_f * complex(i_ref_q, -i_ref_d)
        dy[k + _EQ] = (e_cmd.real - e_q) / g.tau_s
        dy[k + _ED] = (-e_cmd.imag - e_d) / g.tau_s

        dy[k + _XP] = (p - x_p) / dr.tau_p
        dy[k + _XQ] = (q - x_qf) / dr.tau_q
        dy[k + _WLIM] = slope
        dy[k + _DELTA] = self.omega_b * (w - 1.0)

        # envelope limit trimming on the filtered injection
        lo, hi = self._injection_limits(t)
        if loops_on and x_p > hi:
            dy[k + _XENV] = K_ENV * (hi - x_p)
        elif loops_on and x_p < lo:
            dy[k + _XENV] = K_ENV * (lo - x_p)
        else:
            dy[k + _XENV] = -yl[k + _XENV] / TAU_ENV

        if self.sec_on:
            dy[k + _SECP] = self.sec_kf * (self.refs["omega_set"].get(t) - w)
            dy[k + _SECQ] = self.sec_kv * (self.refs["v_set"].get(t) - v_q)
        else:
            dy[k + _SECP] = 0.0
            dy[k + _SECQ] = 0.0

        if self.is_load:
            # lossless averaged bridge: DC input power equals the EMF power
            p_dc_in = -(e_q * iq + e_d * id_)
            d_vt, d_vh, d_xi, _ = dc_side_derivatives(
                yl[k + _VT], yl[k + _VH], yl[k + _XIDC], p_dc_in, self.dc)
            dy[k + _VT] = d_vt
            dy[k + _VH] = d_vh
            dy[k + _XIDC] = d_xi

    # -- initialization ---------------------------------------------------------

    def target_voltage(self, t, q_inj: float) -> float:
        """Droop-consistent terminal-voltage magnitude for equilibration."""
        if self.blackstart is not None and not self.blackstart.power_loops_on(0.0):
            return 0.0
        env = self.envelope
        v = self.droop.k_q * (self.refs["q_set"].get(t) - q_inj) + \
            self.refs["v_set"].get(t)
        return min(max(v, env.v_min), env.v_max)

    def scheduled_injection(self, t) -> float:
        """Scheduled active injection on the system base."""
        return self._p_star_inj(t) * self.s_n

    def init_steady(self, t, v_bus: complex, i_inj_sys: complex) -> list[float]:
        delta = math.atan2(v_bus.imag, v_bus.real)
        rot_inv = complex(math.cos(delta), -math.sin(delta))
        iz = i_inj_sys * rot_inv / self.s_n
        vz = v_bus * rot_inv
        iq, id_ = iz.real, -iz.imag
        v_q, v_d = vz.real, -vz.imag
        p = v_q * iq + v_d * id_
        q = v_q * id_ - v_d * iq
        y = [0.0] * self.n_states
        y[_DELTA] = delta
        emf = vz + self.z_f * iz
        y[_EQ], y[_ED] = emf.real, -emf.imag
        y[_XP], y[_XQ] = p, q
        y[_WLIM] = 1.0
        # voltage-trim integrators hold the filter drop at zero voltage error
        drop = self.z_f * iz
        y[_XIVQ], y[_XIVD] = drop.real, -drop.imag
        if self.is_load:
            p_cons = max(-p, 0.0)
            v_h = math.sqrt(p_cons * self.dc.r_h)
            v_h = min(max(v_h, self.dc.v_h_min), self.dc.v_h_max)
            y[_VT] = self.dc.v_t_nom
            y[_VH] = v_h
            y[_XIDC] = v_h
        return y

    def initial_state(self) -> list[float]:
        # de-energized start (black start): everything zero except the
        # precharged DC link and unit frame speed
        y = [0.0] * self.n_states
        y[_WLIM] = 1.0
        if self.is_load:
            y[_VT] = self.dc.v_t_nom
        return y

    # -- reporting ----------------------------------------------------------------

    def omega_of(self, yl) -> float:
        return yl[self.i0 + _WLIM]

    def update_flags(self, t, yl) -> None:
        k = self.i0
        self.env_limited = abs(yl[k + _XENV]) > 1e-4
        if self.is_load:
            d = dc_side_derivatives(yl[k + _VT], yl[k + _VH], yl[k + _XIDC],
                                    yl[k + _VH] ** 2 / self.dc.r_h, self.dc)
            self.dc_clamped = d[3]

    def channels(self, t, yl, v_bus: complex, i_inj: complex) -> dict:
        k = self.i0
        s = v_bus * i_inj.conjugate()
        sign = -1.0 if self.is_load else 1.0
        out = {
            f"P_{self.dev_id}": sign * s.real,
            f"Q_{self.dev_id}": sign * s.imag,
            f"f_{self.dev_id}": yl[k + _WLIM] * self.omega_b / TWO_PI,
            f"Irms_{self.dev_id}": abs(i_inj) / self.s_n,
        }
        if self.is_load:
            out[f"Vdc_link_{self.dev_id}"] = yl[k + _VT]
            out[f"Vdc_load_{self.dev_id}"] = yl[k + _VH]
        return out

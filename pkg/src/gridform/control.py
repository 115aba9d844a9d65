"""Grid-forming converter control blocks.

Every block works in per-unit on the converter's own rating with time in
seconds. Power is measured injection-positive inside the controller; a
converter-interfaced load therefore carries a negative active-power
setpoint, which makes the frequency droop reduce consumption under low
frequency and raise it under high frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .frames import DqPair

OMEGA_NOMINAL = 1.0
V_NOMINAL = 1.0

# Droop tuning constants: maximum permissible deviations at rated power error.
FREQ_DEVIATION_MAX = 0.02
VOLT_DEVIATION_MAX = 0.10

ROCOF_MAX_HZ_S = 4.0


class SequenceViolation(Exception):
    """A black-start schedule engages power loops before voltage is formed."""


# ---------------------------------------------------------------------------
# parameter blocks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DroopParams:
    """Power-frequency and reactive-voltage droop settings (device pu)."""

    k_p: float
    k_q: float
    tau_p: float = 0.05
    tau_q: float = 0.05
    omega_n: float = OMEGA_NOMINAL
    v_n: float = V_NOMINAL
    s_n: float = 1.0

    def __post_init__(self):
        if self.tau_p <= 0.0 or self.tau_q <= 0.0:
            raise ValueError("droop filter time constants must be positive")

    @classmethod
    def tuned(cls, s_n: float = 1.0, omega_n: float = OMEGA_NOMINAL,
              v_n: float = V_NOMINAL, tau_p: float = 0.05,
              tau_q: float = 0.05) -> "DroopParams":
        """Gains sized for 2% frequency / 10% voltage deviation at rated error."""
        return cls(
            k_p=FREQ_DEVIATION_MAX * omega_n / s_n,
            k_q=VOLT_DEVIATION_MAX * v_n / s_n,
            tau_p=tau_p, tau_q=tau_q,
            omega_n=omega_n, v_n=v_n, s_n=s_n,
        )


@dataclass(frozen=True)
class CascadeGains:
    """Current- and voltage-loop PI gains tied to the output filter.

    l_f is the filter inductance in inductance units (pu-ohm-seconds,
    i.e. pu reactance divided by the base angular frequency); c_f likewise
    in capacitance units. With those units the tuning formulas hold exactly:

        k_pc = l_f / tau_s          k_ic = r_f / tau_s
        k_pv = 2 c_f d_v omega_v    k_iv = omega_v**2 c_f
    """

    k_pc: float
    k_ic: float
    k_pv: float
    k_iv: float
    l_f: float
    r_f: float
    c_f: float
    tau_s: float
    d_v: float = 0.707
    omega_v: float = 0.0

    @classmethod
    def tune(cls, l_f: float, r_f: float, c_f: float, tau_s: float,
             d_v: float = 0.707, omega_v: float | None = None) -> "CascadeGains":
        if min(l_f, r_f, c_f, tau_s) <= 0.0:
            raise ValueError("filter parameters and tau_s must be positive")
        if omega_v is None:
            # voltage-loop bandwidth ten times below the 1/tau_s current loop
            omega_v = 1.0 / (10.0 * tau_s)
        return cls(
            k_pc=l_f / tau_s,
            k_ic=r_f / tau_s,
            k_pv=2.0 * c_f * d_v * omega_v,
            k_iv=omega_v ** 2 * c_f,
            l_f=l_f, r_f=r_f, c_f=c_f, tau_s=tau_s,
            d_v=d_v, omega_v=omega_v,
        )

    @classmethod
    def from_filter_pu(cls, x_l: float, r_f: float, b_c: float, tau_s: float,
                       omega_base: float, d_v: float = 0.707,
                       omega_v: float | None = None) -> "CascadeGains":
        """Tune from per-unit reactance/susceptance at the given base frequency."""
        return cls.tune(x_l / omega_base, r_f, b_c / omega_base, tau_s,
                        d_v=d_v, omega_v=omega_v)


@dataclass(frozen=True)
class OperatingEnvelope:
    """Steady-operation limits (device pu). p_min/p_max bound the load's
    consumption for a grid-forming load and the output for a source."""

    p_min: float = 0.0
    p_max: float = 1.2
    q_min: float = -0.6
    q_max: float = 0.6
    omega_min: float = 0.95
    omega_max: float = 1.05
    v_min: float = 0.85
    v_max: float = 1.15
    i_n: float = 1.2
    rocof_max: float = ROCOF_MAX_HZ_S

    def __post_init__(self):
        pairs = (("p", self.p_min, self.p_max), ("q", self.q_min, self.q_max),
                 ("omega", self.omega_min, self.omega_max),
                 ("v", self.v_min, self.v_max))
        for name, lo, hi in pairs:
            if lo >= hi:
                raise ValueError(f"{name}_min must be below {name}_max")
        if self.p_min < 0.0:
            raise ValueError("p_min must be >= 0 (a load consumes)")
        if self.i_n <= 0.0:
            raise ValueError("i_n must be positive")


@dataclass(frozen=True)
class SecondaryCommands:
    """Operator commands consumed by the slow secondary trim."""

    v_ref: float = V_NOMINAL
    omega_ref: float = OMEGA_NOMINAL
    p_ref: float = 0.0
    q_ref: float = 0.0
    ramp_v: float = 1.0
    ramp_omega: float = 1.0
    ramp_p: float = 1.0
    ramp_q: float = 1.0

    def validate(self, env: OperatingEnvelope) -> None:
        if not (env.omega_min <= self.omega_ref <= env.omega_max):
            raise ValueError("omega_ref outside operating envelope")
        if not (env.v_min <= self.v_ref <= env.v_max):
            raise ValueError("v_ref outside operating envelope")


# ---------------------------------------------------------------------------
# droop blocks
# ---------------------------------------------------------------------------

@dataclass
class LowPassState:
    """First-order filter y' = (u - y)/tau, stepped exactly for constant u."""

    y: float = 0.0

    def step(self, u: float, tau: float, dt: float) -> float:
        self.y += (u - self.y) * -math.expm1(-dt / tau)
        return self.y


def active_droop(p_c: float, p_star: float, params: DroopParams,
                 filter_state: LowPassState, dt: float | None = None) -> float:
    """Frequency reference from the active-power droop.

    Advances the measurement low-pass (virtual inertia) when dt is given,
    then returns k_p*(P* - filtered P) + omega_n. The caller applies rate
    limiting before integrating the result to an angle.
    """
    if dt is not None:
        filter_state.step(p_c, params.tau_p, dt)
    return params.k_p * (p_star - filter_state.y) + params.omega_n


def reactive_droop(q_c: float, q_star: float, params: DroopParams,
                   filter_state: LowPassState, dt: float | None = None) -> float:
    """q-axis voltage reference from the reactive droop (d-axis ref is zero)."""
    if dt is not None:
        filter_state.step(q_c, params.tau_q, dt)
    return params.k_q * (q_star - filter_state.y) + params.v_n


# ---------------------------------------------------------------------------
# cascaded voltage / current loops
# ---------------------------------------------------------------------------

@dataclass
class PiState:
    """Integral terms of a two-axis PI controller."""

    q: float = 0.0
    d: float = 0.0

    def advance(self, k_i: float, e: DqPair, dt: float, freeze: bool = False) -> None:
        if not freeze:
            self.q += k_i * e.q * dt
            self.d += k_i * e.d * dt


OMEGA_ELEC_DEFAULT = 2.0 * math.pi * 50.0


def voltage_loop(v_ref: DqPair, v_meas: DqPair, gains: CascadeGains,
                 integ_state: PiState,
                 omega_elec: float = OMEGA_ELEC_DEFAULT) -> DqPair:
    """Per-axis PI on the voltage error plus capacitor decoupling.

    omega_elec is the frame speed in electrical rad/s. Returns the
    pre-saturation current reference.
    """
    e_q = v_ref.q - v_meas.q
    e_d = v_ref.d - v_meas.d
    wc = omega_elec * gains.c_f
    return DqPair(
        gains.k_pv * e_q + integ_state.q + wc * v_meas.d,
        gains.k_pv * e_d + integ_state.d - wc * v_meas.q,
    )


def current_loop(i_ref: DqPair, i_meas: DqPair, gains: CascadeGains,
                 integ_state: PiState,
                 omega_elec: float = OMEGA_ELEC_DEFAULT) -> DqPair:
    """Per-axis PI on the current error plus inductive decoupling.

    Returns the modulation-voltage contribution (the measured terminal
    voltage feed-forward is added by the caller).
    """
    e_q = i_ref.q - i_meas.q
    e_d = i_ref.d - i_meas.d
    wl = omega_elec * gains.l_f
    return DqPair(
        gains.k_pc * e_q + integ_state.q + wl * i_meas.d,
        gains.k_pc * e_d + integ_state.d - wl * i_meas.q,
    )


def saturate_current(i_ref: DqPair, i_n: float) -> DqPair:
    """Angle-preserving qd current limit.

    phi = atan2(i_q, i_d); the per-axis limits i_n|sin phi| and i_n|cos phi|
    are applied symmetrically (positive upper, negative lower), which keeps
    the reference collinear with the input and its magnitude <= i_n. The
    origin is returned unchanged (phi undefined there, always inside limits).
    """
    if i_n <= 0.0:
        raise ValueError("i_n must be positive")
    q, d = i_ref.q, i_ref.d
    if q == 0.0 and d == 0.0:
        return i_ref
    mag = math.hypot(q, d)
    lim_q = i_n * abs(q) / mag  # i_n*|sin(atan2(q, d))|
    lim_d = i_n * abs(d) / mag  # i_n*|cos(atan2(q, d))|
    return DqPair(
        min(max(q, -lim_q), lim_q),
        min(max(d, -lim_d), lim_d),
    )


def rocof_limit_slope(omega_cmd: float, omega_state: float,
                      rate_pu_s: float, tau: float = 0.002) -> float:
    """Slew-limited tracking slope for the frequency reference.

    d(omega)/dt = clip((cmd - state)/tau, +-rate); the clip guarantees the
    emitted reference never changes faster than the ROCOF limit.
    """
    slope = (omega_cmd - omega_state) / tau
    if slope > rate_pu_s:
        return rate_pu_s
    if slope < -rate_pu_s:
        return -rate_pu_s
    return slope


# ---------------------------------------------------------------------------
# DC side (flexible resistive load behind a DC-DC stage)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DcSideParams:
    """DC-link regulation with the load voltage as the actuator."""

    c_dc: float = 0.1        # link capacitance constant [s]: c*v*dv/dt = p_in - p_h
    r_h: float = 1.25        # load resistance [pu]
    v_h_min: float = 0.7
    v_h_max: float = 1.1
    v_t_nom: float = 1.0
    tau_act: float = 0.002   # DC-DC actuator lag [s]
    k_p: float = 15.0
    k_i: float = 400.0


@dataclass
class DcSideState:
    v_t_dc: float = 1.0
    v_h_dc: float = 0.0
    xi: float = 0.0
    clamped: bool = False


def dc_side_derivatives(v_t: float, v_h: float, xi: float, p_in: float,
                        params: DcSideParams) -> tuple[float, float, float, bool]:
    """Right-hand side of the DC-side states plus the clamp indicator.

    p_in is the power delivered into the DC link by the grid-side converter.
    """
    p_h = v_h * v_h / params.r_h
    err = v_t - params.v_t_nom
    v_h_cmd = xi + params.k_p * err
    clamped = False
    if v_h_cmd < params.v_h_min:
        v_h_cmd = params.v_h_min
        clamped = True
    elif v_h_cmd > params.v_h_max:
        v_h_cmd = params.v_h_max
        clamped = True
    d_v_t = (p_in - p_h) / (params.c_dc * max(v_t, 0.1))
    if v_t <= 0.05 and d_v_t < 0.0:
        d_v_t = 0.0  # the link cannot discharge below zero
    d_v_h = (v_h_cmd - v_h) / params.tau_act
    d_xi = 0.0 if clamped else params.k_i * err
    return d_v_t, d_v_h, d_xi, clamped


def dc_side_step(state: DcSideState, p_grid_side: float, dt: float,
                 params: DcSideParams) -> DcSideState:
    """Advance the DC side one step (RK4 on the three local states)."""
    y = (state.v_t_dc, state.v_h_dc, state.xi)

    def f(s):
        return dc_side_derivatives(s[0], s[1], s[2], p_grid_side, params)[:3]

    k1 = f(y)
    k2 = f(tuple(y[i] + 0.5 * dt * k1[i] for i in range(3)))
    k3 = f(tuple(y[i] + 0.5 * dt * k2[i] for i in range(3)))
    k4 = f(tuple(y[i] + dt * k3[i] for i in range(3)))
    nxt = tuple(y[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])
                for i in range(3))
    clamped = dc_side_derivatives(nxt[0], nxt[1], nxt[2], p_grid_side, params)[3]
    return DcSideState(v_t_dc=nxt[0], v_h_dc=nxt[1], xi=nxt[2], clamped=clamped)


# ---------------------------------------------------------------------------
# black start
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlackStartSchedule:
    """Phased energization: voltage ramp first, power loops later.

    Phase 1: power loops disconnected, the voltage reference ramps from zero
    to v_target between t_ramp_start and t_ramp_end.
    Phase 2: from t_power on, the droop loops are engaged and the power
    setpoint ramps to its scheduled value over p_ramp seconds.
    Phase 3 (paired renewable only) is realized by a mode-switch event.
    """

    t_ramp_start: float = 0.0
    t_ramp_end: float = 5.0
    t_power: float = 7.0
    p_ramp: float = 3.0
    v_target: float = V_NOMINAL

    def __post_init__(self):
        if self.t_ramp_end < self.t_ramp_start:
            raise SequenceViolation("voltage ramp ends before it starts")
        if self.t_power < self.t_ramp_end:
            raise SequenceViolation(
                "power loops engage at t="
                f"{self.t_power}s before the voltage reference reaches nominal "
                f"at t={self.t_ramp_end}s"
            )

    def v_ref(self, t: float) -> float:
        if t <= self.t_ramp_start:
            return 0.0
        if t >= self.t_ramp_end or self.t_ramp_end == self.t_ramp_start:
            return self.v_target
        frac = (t - self.t_ramp_start) / (self.t_ramp_end - self.t_ramp_start)
        return self.v_target * frac

    def power_loops_on(self, t: float) -> bool:
        return t >= self.t_power

    def setpoint_scale(self, t: float) -> float:
        """Fraction of the scheduled power setpoint applied at time t."""
        if t < self.t_power:
            return 0.0
        if self.p_ramp <= 0.0 or t >= self.t_power + self.p_ramp:
            return 1.0
        return (t - self.t_power) / self.p_ramp


def blackstart_sequence(schedule: BlackStartSchedule, t: float) -> dict:
    """Mode and references of the phased start at time t."""
    if not schedule.power_loops_on(t):
        phase = 1 if t < schedule.t_ramp_end else 2
        return {"phase": phase, "power_loops": False,
                "v_ref": schedule.v_ref(t), "setpoint_scale": 0.0}
    return {"phase": 3, "power_loops": True,
            "v_ref": schedule.v_target,
            "setpoint_scale": schedule.setpoint_scale(t)}

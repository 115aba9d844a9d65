"""Simulation engine: device/network assembly, steady-state equilibration,
the fixed-step RK4 run loop, the event scheduler, and run verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .control import (BlackStartSchedule, CascadeGains, DcSideParams,
                      DroopParams, OperatingEnvelope)
from .devices import (FixedPQLoad, FreqSupportLoad, GflConverter, RampedRef,
                      SyncGenerator, TheveninGrid)
from .events import SimEvent, sort_events
from .gfm import GfmConverter, SAT_RELEASE
from .integrate import NumericalDivergence, check_divergence
from .network import (IslandWithoutFormingSource, Line, Network,
                      SolveDidNotConverge)
from .timeseries import TimeSeries

V_BREAK = FixedPQLoad.V_BREAK
LIMIT_SUSTAIN_S = 1.0


@dataclass
class RunVerdict:
    status: str                      # stable | unstable | limit_violation
    t_diverge: float | None = None
    detail: str = ""

    @property
    def stable(self) -> bool:
        return self.status == "stable"


@dataclass
class _Alg:
    """Algebraic solution of one integration stage."""

    v_full: list                     # bus phasors (network frame, system base)
    i_emf: list[complex]
    island_f: list[float]            # forming-weighted speed per island [pu]
    bus_island: np.ndarray
    i_gfm: list[complex]             # per grid-forming converter injection


def build_device(cfg: dict, f_base: float):
    """Instantiate a device from its validated scenario block."""
    kind = cfg["type"]
    omega_b = 2.0 * math.pi * f_base
    dev_id, bus = cfg["id"], cfg["bus"]
    if kind in ("gfm_load", "gfm"):
        is_load = kind == "gfm_load"
        s_n = cfg.get("s_n", 1.0)
        dcfg = cfg.get("droop", {})
        auto = DroopParams.tuned(s_n=1.0, tau_p=dcfg.get("tau_p", 0.01),
                                 tau_q=dcfg.get("tau_q", 0.01))
        droop = DroopParams(k_p=dcfg.get("k_p", auto.k_p),
                            k_q=dcfg.get("k_q", auto.k_q),
                            tau_p=auto.tau_p, tau_q=auto.tau_q)
        fcfg = cfg.get("filter", {})
        x_l = fcfg.get("x_l", 0.15)
        r_f = fcfg.get("r", 0.015)
        b_c = fcfg.get("b_c", 0.05)
        tau_s = fcfg.get("tau_s", 0.002)
        gains = CascadeGains.from_filter_pu(x_l, r_f, b_c, tau_s, omega_b,
                                            d_v=fcfg.get("d_v", 0.707))
        ecfg = cfg.get("envelope", {})
        env = OperatingEnvelope(**ecfg) if ecfg else OperatingEnvelope(
            i_n=cfg.get("i_n", 1.2))
        dc = None
        if is_load:
            dc = DcSideParams(**cfg.get("dc", {}))
        bs = None
        if "blackstart" in cfg:
            bs = BlackStartSchedule(**cfg["blackstart"])
        dev = GfmConverter(
            dev_id, bus, s_n=s_n, is_load=is_load,
            p_set=cfg.get("p_set", 0.0), q_set=cfg.get("q_set", 0.0),
            droop=droop, gains=gains, envelope=env,
            x_l=x_l, r_f=r_f, b_c=b_c, tau_s=tau_s,
            i_n=cfg.get("i_n", 1.2),
            rocof_max_hz=cfg.get("rocof_max", 4.0),
            p_available=cfg.get("p_available"),
            dc=dc, blackstart=bs, secondary=cfg.get("secondary"),
            f_base=f_base)
        dev.gfl_config = cfg.get("gfl", {})
        return dev
    if kind == "mppt":
        pll = cfg.get("pll", {})
        return GflConverter(
            dev_id, bus, s_n=cfg.get("s_n", 1.0),
            p_available=cfg.get("p_available", 0.0),
            q_setpoint=cfg.get("q_setpoint", 0.0),
            i_n=cfg.get("i_n", 1.2), tau_s=cfg.get("tau_s", 0.002),
            pll_kp=pll.get("k_p", 1.3), pll_ki=pll.get("k_i", 250.0),
            omega_base=omega_b)
    if kind == "sync_gen":
        return SyncGenerator(
            dev_id, bus, s_n=cfg.get("s_n", 1.0), h=cfg.get("h", 5.0),
            d=cfg.get("d", 1.0), x_d_transient=cfg.get("x_d_transient", 0.3),
            r_a=cfg.get("r_a", 0.005), r_gov=cfg.get("r_gov", 0.05),
            t_gov=cfg.get("t_gov", 0.5), gov_deadband=cfg.get("gov_deadband", 0.0),
            k_avr=cfg.get("k_avr", 20.0), v_ref=cfg.get("v_ref", 1.0),
            p_set=cfg.get("p_set", 0.0), omega_base=omega_b)
    if kind == "thevenin":
        return TheveninGrid(
            dev_id, bus, scr=cfg.get("scr", 2.0), x_r=cfg.get("x_r", 10.0),
            h_eq=cfg.get("h_eq", 2.0), d_eq=cfg.get("d_eq", 100.0),
            v_set=cfg.get("v_set", 1.0), p_import=cfg.get("p_import", 0.0),
            s_n=cfg.get("s_n", 10.0), omega_base=omega_b)
    if kind == "fixed_pq":
        return FixedPQLoad(dev_id, bus, p=cfg.get("p", 0.0), q=cfg.get("q", 0.0))
    if kind == "freq_support":
        return FreqSupportLoad(
            dev_id, bus, p_nominal=cfg.get("p_nominal", 0.0),
            k_fl=cfg.get("k_fl", 0.0), q=cfg.get("q", 0.0),
            tau_f=cfg.get("tau_f", 0.05))
    raise ValueError(f"unknown device type {kind!r}")


class Engine:
    """One scenario run. Owns the network, the devices, and the state vector."""

    def __init__(self, spec):
        self.spec = spec
        self.f_base = spec.base.f_base_hz
        self.dt = spec.dt
        self.net = Network()
        self.scenario_buses = [b["id"] for b in spec.buses]
        for b in spec.buses:
            self.net.add_bus(b["id"])
        for ln in spec.lines:
            self.net.add_line(Line(ln["id"], ln["from"], ln["to"],
                                   ln["r"], ln["x"],
                                   closed=ln.get("breaker", "closed") == "closed"))
        self.devices = [build_device(cfg, self.f_base) for cfg in spec.devices]
        self.by_id = {d.dev_id: d for d in self.devices}
        for dev in self.devices:
            dev.register_network(self.net, 1.0)
        for dev in self.devices:
            dev.bus_idx = self.net.index(dev.bus)
            if hasattr(dev, "emf_bus"):
                dev.emf_idx = self.net.index(dev.emf_bus)
        self.events = sort_events([
            SimEvent(time=e["time"], action=e["action"],
                     target=e.get("id") or e.get("bus") or e.get("device", ""),
                     params=e, order=k)
            for k, e in enumerate(spec.events)
        ])
        self.monitored_idx = (self.net.index(spec.monitored_bus)
                              if spec.monitored_bus else None)
        self._layout()
        self._classify()
        self._v_warm = [0j] * self.net.n
        self._v_prev = None
        self._limit_time = 0.0
        self._limit_detail = ""

    # -- state layout -----------------------------------------------------------

    def _layout(self):
        off = 0
        for dev in self.devices:
            dev.assign(off)
            off += dev.n_states
        self.n_states = off

    # -- island / partition bookkeeping ------------------------------------------

    def _classify(self):
        islands = self.net.detect_islands()
        bus_island = np.zeros(self.net.n, dtype=int)
        for isl_id, members in enumerate(islands):
            for m in members:
                bus_island[m] = isl_id
        forming = [d for d in self.devices if d.forming]
        live = {int(bus_island[d.bus_idx]) for d in forming}
        self.islands = islands
        self.bus_island = bus_island
        self.live_islands = live
        dead = [k for k in range(self.net.n) if int(bus_island[k]) not in live]
        for dev in self.devices:
            dev.offline = int(bus_island[dev.bus_idx]) not in live
        # known-voltage set: EMF internal nodes plus de-energized buses
        self.emf_devs = [d for d in self.devices
                         if isinstance(d, (SyncGenerator, TheveninGrid))]
        known = sorted(set(d.emf_idx for d in self.emf_devs) | set(dead))
        self.known = known
        self.known_pos = {k: j for j, k in enumerate(known)}
        # per-island forming groups for the frequency aggregate
        self.island_forming = [[] for _ in islands]
        for d in forming:
            self.island_forming[int(bus_island[d.bus_idx])].append(d)
        self.gfm_devs = [d for d in self.devices if isinstance(d, GfmConverter)]
        self.var_devs = [d for d in self.devices
                         if isinstance(d, (GflConverter, FixedPQLoad,
                                           FreqSupportLoad))]
        self.dyn_devs = [d for d in self.devices if d.n_states > 0]
        self._prepare_solver()

    def monitored_alive(self) -> bool:
        if self.monitored_idx is None:
            return True
        return int(self.bus_island[self.monitored_idx]) in self.live_islands

    def _prepare_solver(self):
        """(Re)factorize with the source admittance of every unsaturated
        grid-forming converter on the diagonal, and cache row maps plus
        plain-python matrix rows for the per-stage solve (python complex
        arithmetic beats numpy dispatch at these sizes)."""
        extra = {d.bus_idx: d._inv_zf * d.s_n
                 for d in self.gfm_devs if not (d.sat_mode or d.offline)}
        self.net.prepare(self.known, extra_diag=extra)
        net = self.net
        unknown = net._unknown
        upos = {k: j for j, k in enumerate(unknown)}
        self._u_idx = list(unknown)
        self._nu = len(unknown)
        self._nk = len(self.known)
        self._A = net._a
        self._a_rows = ([list(row) for row in net._a]
                        if net._a is not None else [])
        self._yuk_rows = ([list(row) for row in net._yuk]
                          if (net._yuk is not None and self._nk) else None)
        self._yku_rows = ([list(row) for row in net._yku]
                          if (net._yku is not None and self._nu and self._nk)
                          else None)
        self._ykk_rows = ([list(row) for row in net._ykk]
                          if self._nk else None)
        self._gfm_unsat = [(j, d, upos[d.bus_idx])
                           for j, d in enumerate(self.gfm_devs)
                           if not (d.sat_mode or d.offline)]
        self._gfm_sat = [(j, d, upos.get(d.bus_idx), d.bus_idx)
                         for j, d in enumerate(self.gfm_devs)
                         if d.sat_mode and not d.offline]
        self._var_rows = [(d, upos[d.bus_idx], d.bus_idx)
                          for d in self.var_devs
                          if not d.offline and d.bus_idx in upos]
        self._small = self._nu <= 8
        self._v_prev = None
        self._a_real = None

    def _algebra(self, t, yl) -> _Alg:
        i_gfm = [0j] * len(self.gfm_devs)
        v = self._v_warm          # python list of bus phasors, persistent
        nu, nk = self._nu, self._nk
        prev = self._v_prev
        if prev is not None:
            for k in self._u_idx:
                cur = v[k]
                v[k] = cur + cur - prev[k]
                prev[k] = cur
        else:
            self._v_prev = list(v)
        known = self.known
        for _pass in range(4):
            vk = [0j] * nk
            for dev in self.emf_devs:
                vk[self.known_pos[dev.emf_idx]] = dev.known_voltage(yl)
            for pos in range(nk):
                v[known[pos]] = vk[pos]
            rhs = [0j] * nu
            unsat = self._gfm_unsat
            cs = [0j] * len(unsat)
            for m, (j, dev, row) in enumerate(unsat):
                c, _ = dev.source_coeffs(yl)
                cs[m] = c
                rhs[row] += c
            if self._yuk_rows is not None:
                for r in range(nu):
                    acc = 0j
                    yr = self._yuk_rows[r]
                    for c in range(nk):
                        acc += yr[c] * vk[c]
                    rhs[r] -= acc
            if nu:
                self._solve_stage(t, yl, rhs, v)
            # converter currents and interface-mode consistency
            flips = False
            for m, (j, dev, row) in enumerate(unsat):
                vb = v[dev.bus_idx]
                inj = cs[m] - dev._inv_zf * dev.s_n * vb
                i_gfm[j] = inj
                if abs(inj) / dev.s_n > dev.i_n * (1.0 + 1e-9):
                    dev.sat_mode = True
                    flips = True
            for j, dev, row, bidx in self._gfm_sat:
                vb = v[bidx]
                i_gfm[j] = dev.sat_injection(t, yl, vb)
                free = (dev.emf_net(yl) - vb) * dev._inv_zf * dev.s_n
                if abs(free) / dev.s_n < SAT_RELEASE * dev.i_n:
                    dev.sat_mode = False
                    flips = True
            if not flips:
                break
            self._prepare_solver()
        if v:
            v_peak = max(abs(x) for x in v)
            if v_peak > 5.0:
                raise NumericalDivergence(t, f"(bus voltage {v_peak:.2f} pu)")
        if self.emf_devs:
            i_emf_all = [0j] * nk
            for pos in range(nk):
                acc = 0j
                row = self._ykk_rows[pos]
                for c in range(nk):
                    acc += row[c] * vk[c]
                if self._yku_rows is not None:
                    row2 = self._yku_rows[pos]
                    for r in range(nu):
                        acc += row2[r] * v[self._u_idx[r]]
                i_emf_all[pos] = acc
            i_emf = [i_emf_all[self.known_pos[d.emf_idx]]
                     for d in self.emf_devs]
        else:
            i_emf = []
        island_f = []
        for group in self.island_forming:
            if group:
                wsum = sum(d.s_n for d in group)
                island_f.append(sum(d.s_n * d.omega_of(yl) for d in group) / wsum)
            else:
                island_f.append(1.0)
        return _Alg(v, i_emf, island_f, self.bus_island, i_gfm)

    def _solve_stage(self, t, yl, rhs, v):
        """Fixed-point stage solve over the voltage-dependent injections.

        Static loads / grid-following units iterate in the inner loop with
        adaptive under-relaxation; saturated grid-forming converters (whose
        injected direction follows the voltage) are frozen per outer pass,
        which keeps the iteration contractive through deep faults.
        """
        nu = self._nu
        u_idx = self._u_idx
        var_rows = self._var_rows
        sat = self._gfm_sat
        small = self._small
        a_rows = self._a_rows
        static = not (var_rows or sat)
        from .gfm import overvoltage_backoff
        sat_dir = {}
        for j, dev, row, bidx in sat:
            if row is not None:
                inj = dev.sat_injection(t, yl, v[bidx])
                ov = overvoltage_backoff(abs(v[bidx]))
                sat_dir[dev.dev_id] = inj / ov if ov > 1e-9 else inj
        outer_damp = 1.0
        prev_worst = None
        for _outer in range(60):
            kappa = 1.0
            prev_delta = None
            converged = False
            for _ in range(200):
                cur = list(rhs)
                for dev, row, bidx in var_rows:
                    cur[row] += dev.injection(t, yl, v[bidx])
                for j, dev, row, bidx in sat:
                    if row is not None:
                        cur[row] += sat_dir[dev.dev_id] \
                            * overvoltage_backoff(abs(v[bidx]))
                delta = 0.0
                if small:
                    for r in range(nu):
                        acc = 0j
                        row = a_rows[r]
                        for c in range(nu):
                            acc += row[c] * cur[c]
                        d = acc - v[u_idx[r]]
                        err = abs(d.real) + abs(d.imag)
                        if err > delta:
                            delta = err
                        v[u_idx[r]] += kappa * d
                else:
                    vu = self._A @ np.asarray(cur)
                    for r in range(nu):
                        d = complex(vu[r]) - v[u_idx[r]]
                        err = abs(d.real) + abs(d.imag)
                        if err > delta:
                            delta = err
                        v[u_idx[r]] += kappa * d
                if static or delta < 1e-9:
                    converged = True
                    break
                # damp alternating (constant-power) injection updates
                if prev_delta is not None and delta > 0.999 * prev_delta \
                        and kappa > 0.2:
                    kappa *= 0.5
                prev_delta = delta
            if not converged:
                self._solve_newton(t, yl, rhs, v)
                return
            if not sat:
                return
            worst = 0.0
            for j, dev, row, bidx in sat:
                if row is None:
                    continue
                inj = dev.sat_injection(t, yl, v[bidx])
                ov = overvoltage_backoff(abs(v[bidx]))
                new_dir = inj / ov if ov > 1e-9 else inj
                old = sat_dir[dev.dev_id]
                worst = max(worst, abs(new_dir - old))
                sat_dir[dev.dev_id] = old + outer_damp * (new_dir - old)
            if worst < 1e-9:
                return
            if prev_worst is not None and worst > 0.9 * prev_worst \
                    and outer_damp > 0.25:
                outer_damp *= 0.5
            prev_worst = worst
        self._solve_newton(t, yl, rhs, v)

    def _solve_newton(self, t, yl, rhs, v):
        """Damped Newton on the stage network equations.

        Fallback for operating points where the fixed-point iteration loses
        contraction (depressed voltages with constant-power loads, every
        converter current-limited). Injections depend only on their own bus
        voltage, so the Jacobian assembles from per-device 2x2 blocks.
        """
        nu = self._nu
        u_idx = self._u_idx
        a = self._A
        if a is None:
            raise SolveDidNotConverge("no unknown buses to solve")
        if self._a_real is None:
            self._a_real = np.block([[a.real, -a.imag], [a.imag, a.real]])
        devs = [(dev, row, bidx, False) for dev, row, bidx in self._var_rows]
        devs += [(dev, row, bidx, True)
                 for j, dev, row, bidx in self._gfm_sat if row is not None]

        def injection(dev, is_sat, vb):
            if is_sat:
                return dev.sat_injection(t, yl, vb)
            return dev.injection(t, yl, vb)

        def g_of(vu):
            cur = list(rhs)
            for dev, row, bidx, is_sat in devs:
                cur[row] += injection(dev, is_sat, vu[row])
            return a @ np.asarray(cur)

        vu = np.asarray([v[k] for k in u_idx], dtype=complex)
        h = 1e-7
        fnorm_prev = None
        for it in range(40):
            g = g_of(vu)
            f = vu - g
            fnorm = float(np.abs(f).max())
            if fnorm < 1e-9:
                break
            # per-bus 2x2 injection Jacobian by central differences
            b = np.zeros((2 * nu, 2 * nu))
            for dev, row, bidx, is_sat in devs:
                v0 = vu[row]
                ipr = injection(dev, is_sat, v0 + h)
                imr = injection(dev, is_sat, v0 - h)
                ipm = injection(dev, is_sat, v0 + 1j * h)
                imm = injection(dev, is_sat, v0 - 1j * h)
                dre = (ipr - imr) / (2 * h)
                dim = (ipm - imm) / (2 * h)
                b[row, row] += dre.real
                b[nu + row, row] += dre.imag
                b[row, nu + row] += dim.real
                b[nu + row, nu + row] += dim.imag
            j_f = np.eye(2 * nu) - self._a_real @ b
            f_st = np.concatenate([f.real, f.imag])
            try:
                step = np.linalg.solve(j_f, -f_st)
            except np.linalg.LinAlgError:
                raise SolveDidNotConverge("singular stage Jacobian") from None
            alpha = 1.0
            for _ in range(8):
                cand = vu + alpha * (step[:nu] + 1j * step[nu:])
                fc = cand - g_of(cand)
                if float(np.abs(fc).max()) < fnorm:
                    vu = cand
                    break
                alpha *= 0.5
            else:
                raise SolveDidNotConverge(
                    f"stage Newton stalled (|F| = {fnorm:.2e})")
            fnorm_prev = fnorm
        else:
            raise SolveDidNotConverge(
                f"stage Newton did not converge (|F| = {fnorm:.2e})")
        for r in range(nu):
            v[u_idx[r]] = complex(vu[r])

    def _derivs(self, t, y: np.ndarray) -> np.ndarray:
        yl = y.tolist()
        alg = self._algebra(t, yl)
        dy = [0.0] * self.n_states
        v = alg.v_full
        for j, dev in enumerate(self.emf_devs):
            if isinstance(dev, SyncGenerator):
                dev.derivatives(t, yl, alg.i_emf[j], v[dev.bus_idx], dy)
            else:
                dev.derivatives(t, yl, alg.i_emf[j], dy)
        for j, dev in enumerate(self.gfm_devs):
            dev.derivatives(t, yl, v[dev.bus_idx], alg.i_gfm[j], dy)
        for dev in self.dyn_devs:
            if isinstance(dev, GflConverter):
                dev.derivatives(t, yl, v[dev.bus_idx], dy)
            elif isinstance(dev, FreqSupportLoad):
                fdev = alg.island_f[int(alg.bus_island[dev.bus_idx])] - 1.0
                dev.derivatives(t, yl, fdev, dy)
        return np.asarray(dy)

    # -- steady-state equilibration ---------------------------------------------

    def equilibrate(self, n_iter=800, tol=1e-10) -> np.ndarray:
        """Iterative phasor initialization: internal angles/EMFs are adjusted
        until every forming device carries its schedule (one device is the
        angle reference and absorbs losses/mismatch, settled by the droop
        during the pre-roll)."""
        t0 = 0.0
        gfms = self.gfm_devs
        syncs = [d for d in self.emf_devs if isinstance(d, SyncGenerator)]
        grids = [d for d in self.emf_devs if isinstance(d, TheveninGrid)]
        slack = grids[0] if grids else (syncs[0] if syncs else
                                        max(gfms, key=lambda d: d.s_n, default=None))
        if slack is None:
            raise IslandWithoutFormingSource("scenario has no forming source")
        dead = [k for k in range(self.net.n)
                if int(self.bus_island[k]) not in self.live_islands]
        known = sorted(set(d.emf_idx for d in self.emf_devs)
                       | set(d.bus_idx for d in gfms) | set(dead))
        pos = {k: j for j, k in enumerate(known)}
        self.net.prepare(known)

        ang = {d.dev_id: 0.0 for d in gfms + syncs}
        vm = {d.dev_id: 1.0 for d in gfms}
        emf = {d.dev_id: 1.05 for d in syncs}
        # angle-update gains from the local network stiffness (half-step of
        # the dP/d(angle) sensitivity at each device's interface bus)
        ydiag = np.abs(np.diag(self.net.admittance()))
        gain = {}
        for d in gfms:
            gain[d.dev_id] = 0.5 * d.s_n / max(ydiag[d.bus_idx], 1.0)
        for d in syncs:
            gain[d.dev_id] = 0.5 * d.s_n / max(ydiag[d.emf_idx], 1.0)
        yl0 = [0.0] * self.n_states  # placeholder for ref-only lookups
        i_known = np.zeros(len(known), dtype=complex)
        v_full = np.zeros(self.net.n, dtype=complex)

        def equil_injection(dev, vb):
            # grid-following units inject their scheduled current at the
            # solved voltage; static loads evaluate as at runtime
            if isinstance(dev, GflConverter):
                if abs(vb) < 0.05 or dev.offline:
                    return 0j
                delta = math.atan2(vb.imag, vb.real)
                iq, id_ = dev._current_refs(t0, abs(vb))
                return complex(iq, -id_) * complex(math.cos(delta),
                                                   math.sin(delta)) * dev.s_n
            return dev.injection(t0, yl0, vb)

        for it in range(n_iter):
            v_known = np.zeros(len(known), dtype=complex)
            for d in grids:
                v_known[pos[d.emf_idx]] = d.v_set
            for d in syncs:
                v_known[pos[d.emf_idx]] = emf[d.dev_id] * complex(
                    math.cos(ang[d.dev_id]), math.sin(ang[d.dev_id]))
            for d in gfms:
                v_known[pos[d.bus_idx]] = vm[d.dev_id] * complex(
                    math.cos(ang[d.dev_id]), math.sin(ang[d.dev_id]))
            i_fixed = np.zeros(self.net.n, dtype=complex)
            var_devs = self.var_devs

            def var_inj(vf):
                iv = np.zeros(self.net.n, dtype=complex)
                for dev in var_devs:
                    iv[dev.bus_idx] += equil_injection(dev, vf[dev.bus_idx])
                return iv

            v_full, i_known = self.net.solve(
                i_fixed, v_known, var_injection=var_inj if var_devs else None,
                v_warm=v_full if it else None)
            worst = 0.0
            for d in gfms:
                i_inj = i_known[pos[d.bus_idx]]
                vb = v_full[d.bus_idx]
                # a known bus aggregates every device on it: take out the
                # co-located static/GFL injections to get this converter's own
                for other in var_devs:
                    if other.bus_idx == d.bus_idx:
                        i_inj = i_inj - equil_injection(other, vb)
                s = vb * i_inj.conjugate()
                if d is not slack:
                    err = (d.scheduled_injection(t0) - s.real) / d.s_n
                    step = gain[d.dev_id] * err
                    ang[d.dev_id] += min(max(step, -0.05), 0.05)
                    worst = max(worst, abs(err))
                v_new = d.target_voltage(t0, s.imag / d.s_n)
                worst = max(worst, abs(v_new - vm[d.dev_id]))
                vm[d.dev_id] += 0.2 * (v_new - vm[d.dev_id])
            for d in syncs:
                i_inj = i_known[pos[d.emf_idx]]
                e = v_known[pos[d.emf_idx]]
                p = (e * i_inj.conjugate()).real
                if d is not slack:
                    err = (d.refs["p_set"].get(t0) * d.s_n - p) / d.s_n
                    step = gain[d.dev_id] * err
                    ang[d.dev_id] += min(max(step, -0.05), 0.05)
                    worst = max(worst, abs(err))
                v_err = d.refs["v_ref"].get(t0) - abs(v_full[d.bus_idx])
                emf[d.dev_id] += 0.1 * v_err
                worst = max(worst, abs(v_err))
            if worst < tol and it > 2:
                break

        y0 = np.zeros(self.n_states)
        for d in self.devices:
            if isinstance(d, GfmConverter):
                i_inj = i_known[pos[d.bus_idx]]
                for other in self.var_devs:
                    if other.bus_idx == d.bus_idx:
                        i_inj = i_inj - equil_injection(other,
                                                        v_full[d.bus_idx])
                states = d.init_steady(t0, v_full[d.bus_idx], i_inj)
            elif isinstance(d, SyncGenerator):
                i_inj = i_known[pos[d.emf_idx]]
                e = emf[d.dev_id] * complex(math.cos(ang[d.dev_id]),
                                            math.sin(ang[d.dev_id]))
                p_dev = (e * i_inj.conjugate()).real / d.s_n
                states = d.init_steady(ang[d.dev_id], emf[d.dev_id], p_dev)
                d.refs["p_set"].set(p_dev, 0.0, 0.0)
                d.refs["v_ref"].set(abs(v_full[d.bus_idx]), 0.0, 0.0)
            elif isinstance(d, TheveninGrid):
                states = d.init_steady()
                d.p_sched = -(complex(d.v_set, 0.0)
                              * np.conj(i_known[pos[d.emf_idx]])).real
            elif isinstance(d, GflConverter):
                states = d.init_steady(t0, v_full[d.bus_idx])
            else:
                states = d.initial_state()
            if d.n_states:
                y0[d.i0:d.i0 + d.n_states] = states
        # back to the runtime solver
        self._v_warm = [complex(x) for x in v_full]
        self._prepare_solver()
        return y0

    # -- events --------------------------------------------------------------------

    def _apply_event(self, ev: SimEvent, t: float, y: np.ndarray) -> tuple[bool, np.ndarray]:
        dirty = False
        if ev.action == "open_breaker":
            self.net.set_breaker(ev.target, False)
            dirty = True
        elif ev.action == "close_breaker":
            self.net.set_breaker(ev.target, True)
            dirty = True
        elif ev.action == "apply_fault":
            self.net.apply_fault(ev.target, complex(ev.params.get("r", 0.0),
                                                    ev.params.get("x", 0.001)))
            dirty = True
        elif ev.action == "clear_fault":
            self.net.clear_fault(ev.target)
            dirty = True
        elif ev.action == "set_reference":
            dev = self.by_id[ev.target]
            dev.set_reference(ev.params["name"], ev.params["value"],
                              ev.params.get("ramp", 0.0), t)
        elif ev.action == "switch_mode":
            y = self._switch_mode(ev.target, ev.params["mode"], t, y)
            dirty = True
        return dirty, y

    def _switch_mode(self, dev_id: str, mode: str, t: float, y: np.ndarray) -> np.ndarray:
        old = self.by_id[dev_id]
        if mode != "mppt" or not isinstance(old, GfmConverter):
            raise ValueError(
                f"unsupported mode switch {dev_id!r} -> {mode!r} "
                "(only a grid-forming renewable may switch to mppt)")
        yl = y.tolist()
        alg = self._algebra(t, yl)
        v_bus = alg.v_full[old.bus_idx]
        cfg = dict(old.gfl_config)
        new = GflConverter(
            dev_id, old.bus, s_n=old.s_n,
            p_available=cfg.get("p_available", old.refs["p_set"].get(t)),
            q_setpoint=cfg.get("q_setpoint", 0.0),
            i_n=cfg.get("i_n", old.i_n), tau_s=cfg.get("tau_s", old.gains.tau_s),
            omega_base=old.omega_b)
        new.bus_idx = old.bus_idx
        # continuity: PLL takes over at the present voltage angle and converter
        # frequency; the dq current state carries over with a frame rotation;
        # the power order ramps from the present operating point
        k = old.i0
        w_old = yl[k + 5]
        delta_pll = math.atan2(v_bus.imag, v_bus.real)
        inj = alg.i_gfm[self.gfm_devs.index(old)]
        iz = inj / old.s_n * complex(math.cos(delta_pll), -math.sin(delta_pll))
        s_now = (v_bus * inj.conjugate()).real / old.s_n
        ref = RampedRef(s_now)
        ref.set(new.refs["p_available"].get(t), cfg.get("ramp", 1.0), t)
        new.refs["p_order"] = ref
        states = [delta_pll, w_old - 1.0, iz.real, -iz.imag]
        # rebuild the global layout with the swapped device
        idx = self.devices.index(old)
        self.devices[idx] = new
        self.by_id[dev_id] = new
        new_y = []
        for d in self.devices:
            if d is new:
                new_y.extend(states)
            elif d.n_states:
                new_y.extend(yl[d.i0:d.i0 + d.n_states])
        self._layout()
        y2 = np.asarray(new_y)
        return y2

    # -- channel recording -----------------------------------------------------------

    def _record(self, t, yl, alg, sink: dict, n_prev: int):
        row: dict[str, float] = {}
        mon = (int(self.bus_island[self.monitored_idx])
               if self.monitored_idx is not None else None)
        if mon is not None:
            row["f_sys"] = alg.island_f[mon] * self.f_base
        for j, dev in enumerate(self.emf_devs):
            ch = dev.channels(t, yl, alg.i_emf[j], alg.v_full[dev.bus_idx]) \
                if isinstance(dev, SyncGenerator) else \
                dev.channels(t, yl, alg.i_emf[j])
            row.update(ch)
        for j, dev in enumerate(self.gfm_devs):
            row.update(dev.channels(t, yl, alg.v_full[dev.bus_idx],
                                    alg.i_gfm[j]))
        for dev in self.devices:
            if dev in self.emf_devs or dev in self.gfm_devs:
                continue
            row.update(dev.channels(t, yl, alg.v_full[dev.bus_idx]))
        for b in self.scenario_buses:
            row[f"V_{b}"] = abs(alg.v_full[self.net.index(b)])
        for name, value in row.items():
            col = sink.get(name)
            if col is None:
                col = sink[name] = [0.0] * n_prev  # channel appeared mid-run
            col.append(value)
        for name, col in sink.items():
            if len(col) == n_prev:  # channel vanished: hold the last value
                col.append(col[-1] if col else 0.0)

    def _update_flags(self, t, yl, alg, rec_dt):
        flagged = []
        for dev in self.gfm_devs:
            if dev.is_load:
                dev.update_flags(t, yl)
                if dev.env_limited or dev.dc_clamped:
                    flagged.append(dev.dev_id)
        for dev in self.devices:
            if isinstance(dev, GflConverter):
                dev.update_flags(abs(alg.v_full[dev.bus_idx]), rec_dt)
        if flagged:
            self._limit_time += rec_dt
            self._limit_detail = "flexibility exhausted: " + ", ".join(flagged)
        else:
            self._limit_time = 0.0

    # -- main loop ----------------------------------------------------------------------

    def run(self) -> tuple[TimeSeries, RunVerdict]:
        spec = self.spec
        out_dt = spec.output_dt
        if not spec.buses and not spec.devices:
            return (TimeSeries(dt=out_dt, channels={},
                               metadata={"scenario": spec.id, "verdict": "stable"}),
                    RunVerdict("stable"))
        dt = self.dt
        n_steps = int(round(spec.duration / dt))
        rec_every = max(int(round(out_dt / dt)), 1)
        if spec.init_mode == "equilibrate":
            y = self.equilibrate()
            settle = spec.init_settle
            t_pre = -settle
            while t_pre < -1e-12:
                y = self._rk4(t_pre, y, dt)
                t_pre += dt
        else:
            y = np.zeros(self.n_states)
            for d in self.devices:
                if d.n_states:
                    y[d.i0:d.i0 + d.n_states] = d.initial_state()

        sink: dict[str, list[float]] = {}
        verdict = RunVerdict("stable")
        ev_i = 0
        i = 0
        n_rec = 0
        try:
            while True:
                t = i * dt
                dirty = False
                while ev_i < len(self.events) and self.events[ev_i].time <= t + 1e-9:
                    d, y = self._apply_event(self.events[ev_i], t, y)
                    dirty = dirty or d
                    ev_i += 1
                if dirty:
                    self._classify()
                    if not self.monitored_alive():
                        verdict = RunVerdict(
                            "unstable", t_diverge=t + dt,
                            detail="monitored island lost its forming source")
                        break
                if i % rec_every == 0:
                    yl = y.tolist()
                    alg = self._algebra(t, yl)
                    self._record(t, yl, alg, sink, n_rec)
                    n_rec += 1
                    self._update_flags(t, yl, alg, out_dt)
                if i >= n_steps:
                    break
                y = self._rk4(t, y, dt)
                check_divergence(y, t + dt)
                i += 1
        except NumericalDivergence as exc:
            verdict = RunVerdict("unstable", t_diverge=exc.t, detail=exc.detail)
        except SolveDidNotConverge as exc:
            verdict = RunVerdict("unstable", t_diverge=i * dt,
                                 detail=f"network solve stalled: {exc}")
        if verdict.stable and self._limit_time >= LIMIT_SUSTAIN_S:
            verdict = RunVerdict("limit_violation", detail=self._limit_detail)
        channels = {k: np.asarray(v) for k, v in sink.items()}
        meta = {"scenario": spec.id, "verdict": verdict.status,
                "f_base": self.f_base}
        if verdict.t_diverge is not None:
            meta["t_diverge"] = verdict.t_diverge
        series = TimeSeries(dt=out_dt, channels=channels, metadata=meta)
        return series, verdict

    def _rk4(self, t, y, dt):
        f = self._derivs
        k1 = f(t, y)
        half = 0.5 * dt
        k2 = f(t + half, y + half * k1)
        k3 = f(t + half, y + half * k2)
        k4 = f(t + dt, y + dt * k3)
        return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def run_scenario(spec) -> tuple[TimeSeries, RunVerdict]:
    return Engine(spec).run()

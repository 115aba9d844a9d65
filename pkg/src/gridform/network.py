"""Algebraic network solution.

The grid is quasi-stationary: branches and shunts form a complex nodal
admittance matrix at nominal frequency (phasor q - j*d on the system base)
and every integration stage solves Y*V = I. Buses fall into two groups:

* known-voltage buses: internal EMF nodes of Thevenin/synchronous sources
  and every bus of a de-energized island (held at zero);
* unknown buses, solved by partitioning: Y_uu V_u = I_u - Y_uk V_k.

Voltage-dependent injections (constant-power loads, power-capped
current sources) are resolved by fixed-point iteration on V_u.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SOLVE_TOL = 1e-12
SOLVE_MAX_ITER = 120


class NetworkError(Exception):
    pass


class SingularNetwork(NetworkError):
    pass


class IslandWithoutFormingSource(NetworkError):
    """An energized island has no voltage-forming device."""


class SolveDidNotConverge(NetworkError):
    pass


@dataclass
class Bus:
    id: str
    v_nominal: float = 1.0
    fault: complex | None = None  # shunt fault impedance when faulted


@dataclass
class Line:
    id: str
    from_bus: str
    to_bus: str
    r: float
    x: float
    closed: bool = True

    def __post_init__(self):
        if self.r <= 0.0 and self.x <= 0.0:
            raise ValueError(f"line {self.id}: needs r > 0 or x > 0")

    @property
    def y_series(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass
class Network:
    """Bus/branch model plus the cached partitioned admittance solve."""

    buses: list[Bus] = field(default_factory=list)
    lines: list[Line] = field(default_factory=list)
    shunts: dict[str, complex] = field(default_factory=dict)  # fixed (filter caps)

    def __post_init__(self):
        self._index: dict[str, int] = {}
        self._lines_by_id: dict[str, Line] = {}
        self._rebuild_maps()
        self._cache_valid = False

    # -- construction ------------------------------------------------------

    def _rebuild_maps(self):
        self._index = {b.id: i for i, b in enumerate(self.buses)}
        if len(self._index) != len(self.buses):
            raise NetworkError("duplicate bus ids")
        self._lines_by_id = {ln.id: ln for ln in self.lines}
        if len(self._lines_by_id) != len(self.lines):
            raise NetworkError("duplicate line ids")

    def add_bus(self, bus_id: str, v_nominal: float = 1.0) -> int:
        self.buses.append(Bus(bus_id, v_nominal))
        self._rebuild_maps()
        self._cache_valid = False
        return self._index[bus_id]

    def add_line(self, line: Line) -> None:
        self.lines.append(line)
        self._rebuild_maps()
        self._cache_valid = False

    def add_shunt(self, bus_id: str, y: complex) -> None:
        self.shunts[bus_id] = self.shunts.get(bus_id, 0j) + y
        self._cache_valid = False

    def index(self, bus_id: str) -> int:
        try:
            return self._index[bus_id]
        except KeyError:
            raise NetworkError(f"unknown bus {bus_id!r}") from None

    @property
    def n(self) -> int:
        return len(self.buses)

    # -- topology events ----------------------------------------------------

    def set_breaker(self, line_id: str, closed: bool) -> None:
        try:
            self._lines_by_id[line_id].closed = closed
        except KeyError:
            raise NetworkError(f"unknown breaker/line {line_id!r}") from None
        self._cache_valid = False

    def apply_fault(self, bus_id: str, z: complex) -> None:
        if z.real < 0.0:
            raise NetworkError("fault resistance must be >= 0")
        self.buses[self.index(bus_id)].fault = z
        self._cache_valid = False

    def clear_fault(self, bus_id: str) -> None:
        self.buses[self.index(bus_id)].fault = None
        self._cache_valid = False

    # -- admittance & islands ------------------------------------------------

    def admittance(self) -> np.ndarray:
        """Dense node-admittance matrix from branch, shunt, and fault data."""
        y = np.zeros((self.n, self.n), dtype=complex)
        for ln in self.lines:
            if not ln.closed:
                continue
            i, j = self._index[ln.from_bus], self._index[ln.to_bus]
            ys = ln.y_series
            y[i, i] += ys
            y[j, j] += ys
            y[i, j] -= ys
            y[j, i] -= ys
        for bus_id, ysh in self.shunts.items():
            k = self._index[bus_id]
            y[k, k] += ysh
        for b in self.buses:
            if b.fault is not None:
                k = self._index[b.id]
                if b.fault == 0:
                    raise NetworkError("bolted faults need a small nonzero impedance")
                y[k, k] += 1.0 / b.fault
        return y

    def detect_islands(self) -> list[list[int]]:
        """Connected components over closed branches (sorted, deterministic)."""
        parent = list(range(self.n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for ln in self.lines:
            if ln.closed:
                ra = find(self._index[ln.from_bus])
                rb = find(self._index[ln.to_bus])
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        groups: dict[int, list[int]] = {}
        for k in range(self.n):
            groups.setdefault(find(k), []).append(k)
        return [groups[r] for r in sorted(groups)]

    # -- partitioned solve ----------------------------------------------------

    def prepare(self, known: list[int],
                extra_diag: dict[int, complex] | None = None) -> None:
        """Factorize for the given known-voltage bus set (cached until a
        topology change or a different known set).

        extra_diag adds device source admittances to the diagonal of the
        unknown-bus block (voltage-source-behind-impedance interfaces whose
        EMF contribution enters through the injection vector).
        """
        known = sorted(known)
        y = self.admittance()
        unknown = [k for k in range(self.n) if k not in set(known)]
        self._known = known
        self._unknown = unknown
        self._y_full = y
        if unknown:
            yuu = y[np.ix_(unknown, unknown)].copy()
            if extra_diag:
                upos = {k: j for j, k in enumerate(unknown)}
                for k, g in extra_diag.items():
                    if k in upos:
                        yuu[upos[k], upos[k]] += g
            try:
                self._a = np.linalg.inv(yuu)
            except np.linalg.LinAlgError:
                raise SingularNetwork(
                    "admittance submatrix is singular (floating subnetwork?)"
                ) from None
            self._yuk = y[np.ix_(unknown, known)] if known else None
        else:
            self._a = None
            self._yuk = None
        self._yku = y[np.ix_(known, unknown)] if (known and unknown) else None
        self._ykk = y[np.ix_(known, known)] if known else None
        self._cache_valid = True

    @property
    def cache_valid(self) -> bool:
        return self._cache_valid

    def solve(self, i_fixed: np.ndarray, v_known: np.ndarray,
              var_injection=None, v_warm: np.ndarray | None = None):
        """Solve bus voltages for fixed injections plus optional
        voltage-dependent injections.

        i_fixed : complex injections at unknown buses (full-length array)
        v_known : voltages of the known buses, in `prepare` order
        var_injection : callable(v_full) -> full-length injection array for
            voltage-dependent devices; iterated to SOLVE_TOL
        Returns (v_full, i_known) where i_known are the currents injected by
        the known-voltage sources, in `prepare` order.
        """
        if not self._cache_valid:
            raise NetworkError("network not prepared (topology changed)")
        unknown, known = self._unknown, self._known
        v_full = np.zeros(self.n, dtype=complex)
        if known:
            v_full[known] = v_known
        if unknown:
            rhs0 = i_fixed[unknown]
            if self._yuk is not None and known:
                rhs0 = rhs0 - self._yuk @ v_known
            if var_injection is None:
                v_u = self._a @ rhs0
                v_full[unknown] = v_u
            else:
                v_u = (v_warm[unknown] if v_warm is not None
                       else np.zeros(len(unknown), dtype=complex))
                v_full[unknown] = v_u
                for _ in range(SOLVE_MAX_ITER):
                    iv = var_injection(v_full)
                    v_new = self._a @ (rhs0 + iv[unknown])
                    delta = np.abs(v_new - v_u).max()
                    v_u = v_new
                    v_full[unknown] = v_u
                    if delta < SOLVE_TOL:
                        break
                else:
                    raise SolveDidNotConverge(
                        f"load iteration did not reach {SOLVE_TOL}"
                    )
        if known:
            i_known = self._ykk @ v_known
            if unknown and self._yku is not None:
                i_known = i_known + self._yku @ v_full[unknown]
        else:
            i_known = np.zeros(0, dtype=complex)
        return v_full, i_known

    def residual(self, v_full: np.ndarray, i_full: np.ndarray) -> float:
        """Infinity-norm of Y*V - I over unknown buses."""
        if not self._unknown:
            return 0.0
        r = self._y_full @ v_full - i_full
        return float(np.abs(r[self._unknown]).max())

    def dump_admittance(self) -> dict:
        """JSON-friendly admittance snapshot for debugging."""
        y = self.admittance()
        return {
            "buses": [b.id for b in self.buses],
            "real": [[float(v) for v in row] for row in y.real],
            "imag": [[float(v) for v in row] for row in y.imag],
        }


def solve_network(net: Network, interfaces: dict):
    """One-shot functional solve for a device-interface description.

    interfaces maps bus id -> one of
        ("voltage", complex)   known-voltage bus
        ("current", complex)   fixed current injection
        ("pq_load", complex)   constant-power draw S = P + jQ
    Raises IslandWithoutFormingSource if an island carries injections or
    loads but contains neither a voltage source nor any shunt path.
    """
    islands = net.detect_islands()
    known, v_known = [], []
    i_fixed = np.zeros(net.n, dtype=complex)
    pq: dict[int, complex] = {}
    for bus_id, (kind, value) in interfaces.items():
        k = net.index(bus_id)
        if kind == "voltage":
            known.append(k)
            v_known.append(value)
        elif kind == "current":
            i_fixed[k] += value
        elif kind == "pq_load":
            pq[k] = pq.get(k, 0j) + value
        else:
            raise NetworkError(f"unknown interface kind {kind!r}")
    shunted = {net.index(b) for b in net.shunts}
    shunted |= {net.index(b.id) for b in net.buses if b.fault is not None}
    for members in islands:
        mset = set(members)
        if mset & set(known) or mset & shunted:
            continue
        if any(i_fixed[m] != 0 for m in members) or mset & set(pq):
            raise IslandWithoutFormingSource(
                f"island {sorted(net.buses[m].id for m in members)} has "
                "injections but no voltage-forming source"
            )
    order = np.argsort(known) if known else []
    known_sorted = [known[int(j)] for j in order]
    v_known_sorted = np.array([v_known[int(j)] for j in order], dtype=complex)
    net.prepare(known_sorted)

    def var_inj(v_full):
        iv = np.zeros(net.n, dtype=complex)
        for k, s in pq.items():
            v = v_full[k]
            vm = abs(v)
            if vm >= 0.3:
                iv[k] = -(s / v).conjugate()
            else:
                # collapse guard: constant impedance below 0.3 pu
                iv[k] = -v * s.conjugate() / (0.3 * 0.3)
        return iv

    v_full, i_known = net.solve(i_fixed, v_known_sorted,
                                var_injection=var_inj if pq else None)
    return v_full, {net.buses[k].id: i_known[j]
                    for j, k in enumerate(known_sorted)}

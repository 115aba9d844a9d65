import numpy as np
import pytest

from gridform.network import (Bus, IslandWithoutFormingSource, Line, Network,
                              NetworkError, solve_network)


def two_bus_net(r=0.0, x=0.1):
    net = Network()
    net.add_bus("B1")
    net.add_bus("B2")
    net.add_line(Line("L12", "B1", "B2", r, x))
    return net


def test_single_bus_thevenin_no_load():
    net = Network()
    net.add_bus("B1")
    net.add_bus("EMF")
    net.add_line(Line("LT", "EMF", "B1", 0.05, 0.5))
    v, i_src = solve_network(net, {"EMF": ("voltage", 1.0 + 0j)})
    assert v[net.index("B1")] == pytest.approx(1.0 + 0j, abs=1e-12)
    assert i_src["EMF"] == pytest.approx(0.0 + 0j, abs=1e-12)


def test_two_bus_voltage_divider_hand_arithmetic():
    # 1.0 pu source behind j0.1 feeding a known current draw of 0.5 - 0.2j:
    # V2 = 1.0 - j0.1*(0.5 - 0.2j) = 1.0 - 0.02 - 0.05j = 0.98 - 0.05j
    net = two_bus_net(r=0.0, x=0.1)
    v, i_src = solve_network(net, {
        "B1": ("voltage", 1.0 + 0j),
        "B2": ("current", -(0.5 - 0.2j)),
    })
    assert v[net.index("B2")] == pytest.approx(0.98 - 0.05j, abs=1e-12)
    assert i_src["B1"] == pytest.approx(0.5 - 0.2j, abs=1e-12)


def test_constant_power_load_iteration_and_residual():
    net = two_bus_net(r=0.02, x=0.2)
    s_load = 0.6 + 0.1j
    v, i_src = solve_network(net, {
        "B1": ("voltage", 1.0 + 0j),
        "B2": ("pq_load", s_load),
    })
    v2 = v[net.index("B2")]
    i = i_src["B1"]
    # the drawn power at B2 matches the constant-power spec
    s_drawn = v2 * np.conj(i)
    assert s_drawn.real == pytest.approx(s_load.real, abs=1e-9)
    assert s_drawn.imag == pytest.approx(s_load.imag, abs=1e-9)
    # solve residual on the unknown bus
    i_full = np.zeros(2, dtype=complex)
    i_full[net.index("B2")] = -np.conj(s_load / v2)
    assert net.residual(v, i_full) < 1e-10


def test_kirchhoff_on_random_network():
    rng = np.random.default_rng(5)
    net = Network()
    n = 8
    for k in range(n):
        net.add_bus(f"B{k}")
    # ring plus chords
    for k in range(n):
        net.add_line(Line(f"L{k}", f"B{k}", f"B{(k + 1) % n}",
                          rng.uniform(0.005, 0.02), rng.uniform(0.05, 0.2)))
    net.add_line(Line("LC1", "B0", "B4", 0.01, 0.1))
    net.add_shunt("B3", 0.05j)
    interfaces = {"B0": ("voltage", 1.02 + 0j)}
    inj = {}
    for k in range(1, n):
        c = complex(rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3))
        interfaces[f"B{k}"] = ("current", c)
        inj[k] = c
    v, i_src = solve_network(net, interfaces)
    y = net.admittance()
    i_all = y @ v
    # bus injections match the declared devices everywhere (KCL to 1e-9)
    for k in range(1, n):
        assert abs(i_all[k] - inj[k]) < 1e-9
    assert abs(i_all[0] - i_src["B0"]) < 1e-9
    # power balance: generation = consumption + I^2 R losses
    s_src = v[0] * np.conj(i_src["B0"])
    s_inj = sum(v[k] * np.conj(inj[k]) for k in inj)
    loss = 0.0
    for ln in net.lines:
        i_l = (v[net.index(ln.from_bus)] - v[net.index(ln.to_bus)]) * ln.y_series
        loss += abs(i_l) ** 2 * ln.r
    assert (s_src + s_inj).real == pytest.approx(loss, abs=1e-9)


def test_detect_islands_and_forming_error():
    net = two_bus_net()
    assert net.detect_islands() == [[0, 1]]
    net.set_breaker("L12", False)
    assert net.detect_islands() == [[0], [1]]
    # island with injections but no source and no shunt path
    with pytest.raises(IslandWithoutFormingSource):
        solve_network(net, {
            "B1": ("voltage", 1.0 + 0j),
            "B2": ("current", 0.1 + 0j),
        })


def test_breaker_involution_restores_matrix_bit_exactly():
    net = two_bus_net()
    net.add_shunt("B2", 0.03j)
    y0 = net.admittance()
    net.set_breaker("L12", False)
    y_open = net.admittance()
    assert not np.array_equal(y0, y_open)
    net.set_breaker("L12", True)
    assert np.array_equal(net.admittance(), y0)


def test_fault_apply_clear_restores_matrix():
    net = two_bus_net()
    y0 = net.admittance()
    net.apply_fault("B2", 0.01 + 0.05j)
    v, _ = solve_network(net, {"B1": ("voltage", 1.0 + 0j)})
    assert abs(v[1]) < 0.6  # the fault depresses the bus
    net.clear_fault("B2")
    assert np.array_equal(net.admittance(), y0)


def test_all_breakers_open_every_bus_its_own_island():
    net = Network()
    for k in range(4):
        net.add_bus(f"B{k}")
    net.add_line(Line("La", "B0", "B1", 0.01, 0.1))
    net.add_line(Line("Lb", "B1", "B2", 0.01, 0.1))
    net.add_line(Line("Lc", "B2", "B3", 0.01, 0.1))
    for ln in net.lines:
        net.set_breaker(ln.id, False)
    assert net.detect_islands() == [[0], [1], [2], [3]]


def test_unknown_ids_raise():
    net = two_bus_net()
    with pytest.raises(NetworkError):
        net.set_breaker("nope", False)
    with pytest.raises(NetworkError):
        net.apply_fault("B9", 0.1j)
    with pytest.raises(NetworkError):
        net.index("B9")


def test_line_validation():
    with pytest.raises(ValueError):
        Line("bad", "A", "B", 0.0, 0.0)


def test_admittance_dump_round_trips():
    net = two_bus_net()
    dump = net.dump_admittance()
    y = np.array(dump["real"]) + 1j * np.array(dump["imag"])
    assert np.allclose(y, net.admittance())
    assert dump["buses"] == ["B1", "B2"]

import math

import numpy as np
import pytest

from gridform.frames import (DqPair, FrameAngle, abc_to_dq, active_power,
                             dq_to_abc, reactive_power, rotate, wrap_angle)


def balanced(peak, omega_t, phase=0.0):
    return (
        peak * math.cos(omega_t + phase),
        peak * math.cos(omega_t + phase - 2 * math.pi / 3),
        peak * math.cos(omega_t + phase + 2 * math.pi / 3),
    )


def test_aligned_balanced_set_maps_to_q_axis():
    for wt in (0.0, 0.4, 2.0, 5.5):
        pair = abc_to_dq(balanced(1.0, wt), FrameAngle(wt))
        assert pair.q == pytest.approx(1.0, abs=1e-12)
        assert pair.d == pytest.approx(0.0, abs=1e-12)


def test_zero_phases_give_zero():
    pair = abc_to_dq((0.0, 0.0, 0.0), FrameAngle(1.234))
    assert pair.q == 0.0 and pair.d == 0.0


def test_quarter_turn_offset():
    # frame leading the signal by pi/2 puts the vector on the +d axis
    wt = 0.9
    pair = abc_to_dq(balanced(1.0, wt), FrameAngle(wt + math.pi / 2))
    assert pair.q == pytest.approx(0.0, abs=1e-12)
    assert pair.d == pytest.approx(1.0, abs=1e-12)


def test_round_trip_identity():
    rng = np.random.default_rng(7)
    for _ in range(200):
        peak = rng.uniform(0.1, 2.0)
        phase = rng.uniform(0, 2 * math.pi)
        wt = rng.uniform(0, 2 * math.pi)
        theta = rng.uniform(0, 2 * math.pi)
        x = balanced(peak, wt, phase)
        back = dq_to_abc(abc_to_dq(x, theta), theta)
        for a, b in zip(x, back):
            assert a == pytest.approx(b, abs=1e-12)


def test_power_invariance():
    # 3-phase instantaneous power equals 1.5*(vq*iq + vd*id)
    rng = np.random.default_rng(11)
    for _ in range(200):
        wt = rng.uniform(0, 2 * math.pi)
        th = rng.uniform(0, 2 * math.pi)
        v = balanced(rng.uniform(0.5, 1.5), wt, rng.uniform(0, 6))
        i = balanced(rng.uniform(0.1, 2.0), wt, rng.uniform(0, 6))
        p_abc = sum(a * b for a, b in zip(v, i))
        vp, ip = abc_to_dq(v, th), abc_to_dq(i, th)
        assert p_abc == pytest.approx(1.5 * active_power(vp, ip), abs=1e-10)


def test_reactive_sign_lagging_current():
    # current lagging voltage by 90 deg -> positive reactive power
    wt = 1.1
    v = abc_to_dq(balanced(1.0, wt), wt)
    i = abc_to_dq(balanced(1.0, wt, -math.pi / 2), wt)
    assert reactive_power(v, i) == pytest.approx(1.0, abs=1e-12)
    assert active_power(v, i) == pytest.approx(0.0, abs=1e-12)


def test_phasor_convention_round_trip_and_rotation():
    pair = DqPair(0.8, -0.3)
    z = pair.as_complex()
    assert DqPair.from_complex(z) == pair
    # rotating frame-to-frame and back is the identity
    z2 = rotate(rotate(z, 0.7), -0.7)
    assert z2 == pytest.approx(z, abs=1e-15)


def test_wrap_angle():
    assert wrap_angle(2 * math.pi) == pytest.approx(0.0, abs=1e-12)
    assert wrap_angle(-0.1) == pytest.approx(2 * math.pi - 0.1, abs=1e-12)
    fa = FrameAngle(7.0)
    assert 0.0 <= fa.theta < 2 * math.pi

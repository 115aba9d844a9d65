"""Rotating-frame (qd) transforms and the two-axis quantity type.

Conventions used throughout the package:

* amplitude-invariant Park transform, q-axis aligned: a balanced set of
  peak V whose phase-a cosine argument equals the frame angle maps to
  (q, d) = (V, 0);
* the complex phasor attached to a qd pair is ``q - 1j*d``, which makes
  standard phasor algebra hold (V = jX I for an inductor, S = V * conj(I));
* instantaneous three-phase power equals 1.5*(v_q*i_q + v_d*i_d) in natural
  units; with peak-valued per-unit bases the 1.5 factor is absorbed and
  p = v_q*i_q + v_d*i_d, q = v_q*i_d - v_d*i_q.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

_TWO_PI = 2.0 * math.pi
_TWO_THIRDS = 2.0 / 3.0
_SHIFT = _TWO_PI / 3.0


def wrap_angle(theta: float) -> float:
    """Wrap an angle to [0, 2*pi)."""
    theta = math.fmod(theta, _TWO_PI)
    if theta < 0.0:
        theta += _TWO_PI
    return theta


@dataclass(frozen=True)
class DqPair:
    """A two-axis quantity (q first, then d) in a rotating frame, per-unit."""

    q: float
    d: float

    @property
    def magnitude(self) -> float:
        return math.hypot(self.q, self.d)

    def as_complex(self) -> complex:
        return complex(self.q, -self.d)

    @staticmethod
    def from_complex(z: complex) -> "DqPair":
        return DqPair(z.real, -z.imag)


@dataclass
class FrameAngle:
    """A reference-frame angle [rad, wrapped to [0, 2*pi)] and speed [pu]."""

    theta: float
    omega: float = 1.0

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise ValueError("frame angle must be finite")
        self.theta = wrap_angle(self.theta)


def abc_to_dq(v_abc, theta) -> DqPair:
    """Transform instantaneous three-phase values to the rotating qd frame.

    Parameters
    ----------
    v_abc : sequence of three floats
        Instantaneous phase quantities (a, b, c).
    theta : FrameAngle or float
        Frame angle in radians.
    """
    th = theta.theta if isinstance(theta, FrameAngle) else theta
    a, b, c = v_abc
    thb = th - _SHIFT
    thc = th + _SHIFT
    q = _TWO_THIRDS * (a * math.cos(th) + b * math.cos(thb) + c * math.cos(thc))
    d = _TWO_THIRDS * (a * math.sin(th) + b * math.sin(thb) + c * math.sin(thc))
    return DqPair(q, d)


def dq_to_abc(pair: DqPair, theta) -> tuple[float, float, float]:
    """Inverse of :func:`abc_to_dq` for balanced quantities (zero sequence 0)."""
    th = theta.theta if isinstance(theta, FrameAngle) else theta
    thb = th - _SHIFT
    thc = th + _SHIFT
    a = pair.q * math.cos(th) + pair.d * math.sin(th)
    b = pair.q * math.cos(thb) + pair.d * math.sin(thb)
    c = pair.q * math.cos(thc) + pair.d * math.sin(thc)
    return (a, b, c)


def rotate(z: complex, delta: float) -> complex:
    """Rotate a phasor by +delta radians (frame-to-frame conversion)."""
    return z * complex(math.cos(delta), math.sin(delta))


def active_power(v: DqPair, i: DqPair) -> float:
    """Per-unit active power for peak-based per-unit qd quantities."""
    return v.q * i.q + v.d * i.d


def reactive_power(v: DqPair, i: DqPair) -> float:
    """Per-unit reactive power (positive for lagging current)."""
    return v.q * i.d - v.d * i.q

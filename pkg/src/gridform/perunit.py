"""Per-unit base system."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class PerUnitBase:
    """Per-unit base quantities for a study.

    s_base : base power [VA]
    v_base : line-to-line RMS voltage [V]
    f_base : frequency [Hz]
    """

    s_base: float
    v_base: float
    f_base: float

    def __post_init__(self):
        for name in ("s_base", "v_base", "f_base"):
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise ValueError(f"{name} must be strictly positive, got {value!r}")

    @property
    def omega_base(self) -> float:
        """Angular frequency base [rad/s]."""
        return 2.0 * math.pi * self.f_base

    @property
    def z_base(self) -> float:
        """Impedance base [ohm]."""
        return self.v_base ** 2 / self.s_base

    @property
    def i_base(self) -> float:
        """Current base [A] (three-phase, line quantities)."""
        return self.s_base / (math.sqrt(3.0) * self.v_base)

"""Fixed-step explicit integration (classic 4th-order Runge-Kutta)."""

from __future__ import annotations

import numpy as np

DIVERGENCE_LIMIT = 1.0e6


class NumericalDivergence(Exception):
    """A state left the numerically meaningful range (instability)."""

    def __init__(self, t: float, detail: str = ""):
        self.t = t
        self.detail = detail
        super().__init__(f"state diverged at t={t:.6f}s {detail}".rstrip())


def rk4_step(f, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    """One classic RK4 step of y' = f(t, y).

    f must be side-effect free with respect to y; identical inputs give
    bit-identical outputs (fixed evaluation order, no randomness).
    """
    k1 = f(t, y)
    half = 0.5 * dt
    k2 = f(t + half, y + half * k1)
    k3 = f(t + half, y + half * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def check_divergence(y: np.ndarray, t: float, limit: float = DIVERGENCE_LIMIT) -> None:
    """Raise :class:`NumericalDivergence` if any state magnitude exceeds limit."""
    m = np.abs(y).max() if y.size else 0.0
    if not np.isfinite(m) or m > limit:
        raise NumericalDivergence(t, f"(max |state| = {m:.3e})")

"""Run metrics extracted from emitted time series."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .timeseries import TimeSeries

ROCOF_WINDOW_S = 0.02
SETTLE_BAND = 0.01
SETTLE_TAIL_S = 0.5


class MetricsError(Exception):
    pass


@dataclass
class RunMetrics:
    nadir_hz: float                  # minimum frequency over the run
    nadir_dev_hz: float              # nadir minus nominal
    max_rocof_hz_s: float
    v_extrema: dict[str, tuple[float, float]] = field(default_factory=dict)
    settling_time_s: float | None = None
    max_rms_current: dict[str, float] = field(default_factory=dict)
    verdict: str = "stable"

    def as_dict(self) -> dict:
        return {
            "nadir_hz": self.nadir_hz,
            "nadir_dev_hz": self.nadir_dev_hz,
            "max_rocof_hz_s": self.max_rocof_hz_s,
            "v_extrema": {k: list(v) for k, v in self.v_extrema.items()},
            "settling_time_s": self.settling_time_s,
            "max_rms_current": self.max_rms_current,
            "verdict": self.verdict,
        }


def rocof(f: np.ndarray, dt: float, window_s: float = ROCOF_WINDOW_S) -> np.ndarray:
    """Centered finite-difference frequency slope over the given window."""
    w = max(int(round(window_s / (2.0 * dt))), 1)
    if len(f) <= 2 * w:
        return np.zeros(0)
    return (f[2 * w:] - f[:-2 * w]) / (2.0 * w * dt)


def settling_time(x: np.ndarray, dt: float, band: float = SETTLE_BAND,
                  tail_s: float = SETTLE_TAIL_S) -> float | None:
    """First time after which x stays within +-band of its final mean.

    The final value is the mean of the last tail_s of the record; the band
    is relative to that mean (absolute if the mean is near zero).
    """
    n_tail = max(int(round(tail_s / dt)), 1)
    if len(x) < n_tail + 2:
        return None
    final = float(np.mean(x[-n_tail:]))
    tol = band * max(abs(final), 1.0)
    outside = np.nonzero(np.abs(x - final) > tol)[0]
    if len(outside) == 0:
        return 0.0
    k = int(outside[-1]) + 1
    if k >= len(x):
        return None  # never settles
    return k * dt


def extract_metrics(series: TimeSeries, f_channel: str = "f_sys",
                    f_nominal: float | None = None) -> RunMetrics:
    """Compute run metrics from an emitted (or reloaded) time series."""
    if f_channel not in series.channels:
        raise MetricsError(f"required channel {f_channel!r} missing from series")
    f = series[f_channel]
    if f_nominal is None:
        f_nominal = float(series.metadata.get("f_base", 50.0))
    r = rocof(f, series.dt)
    v_extrema = {}
    max_i = {}
    for name, col in series.channels.items():
        if name.startswith("V_"):
            v_extrema[name[2:]] = (float(col.min()), float(col.max()))
        elif name.startswith("Irms_"):
            max_i[name[5:]] = float(col.max())
    return RunMetrics(
        nadir_hz=float(f.min()),
        nadir_dev_hz=float(f.min()) - f_nominal,
        max_rocof_hz_s=float(np.abs(r).max()) if len(r) else 0.0,
        v_extrema=v_extrema,
        settling_time_s=settling_time(f, series.dt),
        max_rms_current=max_i,
        verdict=str(series.metadata.get("verdict", "stable")),
    )

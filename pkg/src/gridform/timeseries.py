"""Uniformly sampled named channels with CSV round-trip."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


def _fmt6(x: float) -> str:
    """Fixed 6-significant-digit decimal used in emitted CSV files."""
    return f"{x:.6g}"


@dataclass
class TimeSeries:
    """Named per-unit channels on a uniform time grid.

    All channels have equal length; dt is the sample interval in seconds.
    """

    dt: float
    channels: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"channels have unequal lengths: {sorted(lengths)}")

    @property
    def n_samples(self) -> int:
        if not self.channels:
            return 0
        return len(next(iter(self.channels.values())))

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise KeyError(
                f"channel {name!r} not recorded; available: {sorted(self.channels)}"
            ) from None

    def has_nan(self) -> bool:
        return any(np.isnan(v).any() for v in self.channels.values())

    def save_csv(self, path) -> None:
        """Write `time,<channel>,...` rows with 6-significant-digit values."""
        names = list(self.channels)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time"] + names)
            t = self.time
            cols = [self.channels[n] for n in names]
            for k in range(self.n_samples):
                writer.writerow([_fmt6(t[k])] + [_fmt6(c[k]) for c in cols])

    @staticmethod
    def load_csv(path, dt: float | None = None, metadata: dict | None = None) -> "TimeSeries":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(x) for x in row] for row in reader if row]
        names = header[1:]
        data = np.asarray(rows, dtype=float)
        if dt is None:
            if len(rows) < 2:
                raise ValueError("cannot infer dt from fewer than two samples")
            dt = data[1, 0] - data[0, 0]
        channels = {n: np.ascontiguousarray(data[:, j + 1]) for j, n in enumerate(names)}
        return TimeSeries(dt=dt, channels=channels, metadata=metadata or {})

"""Tone power measurement: window, zero-pad, FFT, read the peak bin.

A captured tone y[n] = h*sqrt(pt)*exp(j*2*pi*f0*n*T) + z[n] is rectangular
windowed over its N samples, zero-padded to the FFT size Ns and transformed.
The estimated receive power is the peak-bin energy normalized by N^2:

    p_hat = |Y_fft[k_hat]|^2 / N^2,   k_hat = round(Ns*T*f0)

For an on-bin tone this is exact; off-bin tones see the usual sinc^2
scalloping of the rectangular window. Coherent integration over N samples
buys ~10*log10(N) of SNR against white noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import Position, to_db, write_grid_csv
from .signals import IQRecord


def default_fft_size(num_samples: int) -> int:
    """Next power of two at or above 8x the window length."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    size = 1
    while size < 8 * num_samples:
        size *= 2
    return size


def zero_pad(samples: np.ndarray, fft_size: int) -> np.ndarray:
    """Pad a window with trailing zeros up to fft_size."""
    n = len(samples)
    if fft_size < n:
        raise ValueError(f"fft_size {fft_size} is smaller than the window ({n} samples)")
    out = np.zeros(fft_size, dtype=np.complex128)
    out[:n] = samples
    return out


@dataclass(frozen=True)
class PowerMeasurement:
    position: Position
    power_linear: float
    power_db: float
    fft_size: int
    num_samples: int
    peak_bin: int


def measure_power(record: IQRecord, f0_hz: float, fft_size: int | None = None) -> PowerMeasurement:
    """Estimate receive power of a tone capture at the known tone frequency."""
    n = record.num_samples
    t = record.sample_interval_s
    if abs(f0_hz) >= 0.5 / t:
        raise ValueError(f"tone frequency {f0_hz} Hz outside the Nyquist band")
    ns = default_fft_size(n) if fft_size is None else int(fft_size)
    if ns < n:
        raise ValueError(f"fft_size {ns} is smaller than the record ({n} samples)")
    k_hat = int(round(ns * t * f0_hz)) % ns
    spectrum = np.fft.fft(zero_pad(record.samples, ns))
    p_lin = float(np.abs(spectrum[k_hat]) ** 2) / n**2
    return PowerMeasurement(
        position=record.position,
        power_linear=p_lin,
        power_db=float(to_db(p_lin)),
        fft_size=ns,
        num_samples=n,
        peak_bin=k_hat,
    )


@dataclass(frozen=True)
class PowerMap:
    """Measured power over a campaign grid, in dB relative to unit transmit scale (dBr).

    No absolute power calibration is applied: values differ from the
    simulated gain map by the constant 10*log10(beta*pt).
    """

    x_m: np.ndarray
    y_m: np.ndarray
    values_dbr: np.ndarray

    def __post_init__(self):
        if self.values_dbr.shape != (len(self.y_m), len(self.x_m)):
            raise ValueError("values shape must be (len(y_m), len(x_m))")

    def argmax_position(self) -> Position:
        iy, ix = np.unravel_index(int(np.argmax(self.values_dbr)), self.values_dbr.shape)
        return Position(float(self.x_m[ix]), float(self.y_m[iy]))

    def to_csv(self, path) -> None:
        write_grid_csv(path, self.x_m, self.y_m, self.values_dbr, "power_dbr")


def sweep_measure(records: list[IQRecord], f0_hz: float, fft_size: int | None = None) -> PowerMap:
    """Measure every record of a tone campaign and assemble the grid power map.

    All records must share the sample interval and length, and their
    positions must tile a complete rectangular grid.
    """
    if len(records) == 0:
        raise ValueError("no records to measure")
    t0 = records[0].sample_interval_s
    n0 = records[0].num_samples
    for rec in records:
        if rec.sample_interval_s != t0 or rec.num_samples != n0:
            raise ValueError("records disagree on sample interval or length")

    xs = np.unique([rec.position.x_m for rec in records])
    ys = np.unique([rec.position.y_m for rec in records])
    if len(xs) * len(ys) != len(records):
        raise ValueError("record positions do not tile a complete grid")
    values = np.full((len(ys), len(xs)), np.nan)
    for rec in records:
        m = measure_power(rec, f0_hz, fft_size)
        iy = int(np.searchsorted(ys, rec.position.y_m))
        ix = int(np.searchsorted(xs, rec.position.x_m))
        if not np.isnan(values[iy, ix]):
            raise ValueError(f"duplicate record position {rec.position}")
        values[iy, ix] = m.power_db
    return PowerMap(x_m=xs, y_m=ys, values_dbr=values)

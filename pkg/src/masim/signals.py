"""Transmit waveforms, channel application, noise and IQ record files.

Two probing waveforms are supported: a single complex tone for power
measurement sweeps and a cyclic-prefixed OFDM frame for channel sounding.
Synthetic IQ captures are stored as little-endian binary records so a
campaign (one record per grid position) can be replayed deterministically.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .channel import PathStateInfo, Position, channel_response

MAIQ_MAGIC = b"MAIQ"
MAIQ_VERSION = 1
# magic, version u32, x f64, y f64, T f64, N u64, seed u64
_HEADER = struct.Struct("<4sIdddQQ")


def derive_seed(master_seed: int, *labels) -> int:
    """Stable uint64 stream seed from a master seed and any hashable labels.

    Built on numpy SeedSequence so per-position streams are independent and
    the sweep order never matters.
    """
    entropy = [int(master_seed)]
    for lab in labels:
        if isinstance(lab, str):
            entropy.extend(lab.encode())
        else:
            entropy.append(int(lab))
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class NoiseSpec:
    """Circularly symmetric complex Gaussian noise.

    power is the per-sample variance sigma^2; bandwidth_hz is the sample rate
    the noise applies at (band-limited noise sampled at its own bandwidth is
    white sample to sample).
    """

    power: float
    bandwidth_hz: float

    def __post_init__(self):
        if self.power < 0.0:
            raise ValueError(f"noise power must be >= 0: {self.power}")
        if self.bandwidth_hz <= 0.0:
            raise ValueError(f"noise bandwidth must be > 0: {self.bandwidth_hz}")

    @staticmethod
    def from_snr_db(snr_db: float, bandwidth_hz: float, tx_power: float = 1.0) -> "NoiseSpec":
        return NoiseSpec(power=tx_power * 10.0 ** (-snr_db / 10.0), bandwidth_hz=bandwidth_hz)


@dataclass(frozen=True)
class OfdmNumerology:
    """OFDM sounding numerology: I subcarriers at spacing df, M symbols, CP length Tc.

    One symbol lasts To = 1/df + Tc. Time-domain synthesis runs at the
    occupied bandwidth I*df, so the useful part of a symbol is exactly I
    samples and the delay resolution of the sounder is 1/(I*df).
    """

    subcarrier_spacing_hz: float
    num_subcarriers: int
    num_symbols: int
    cp_duration_s: float

    def __post_init__(self):
        if self.subcarrier_spacing_hz <= 0.0:
            raise ValueError("subcarrier_spacing_hz must be > 0")
        if self.num_subcarriers < 1 or self.num_symbols < 1:
            raise ValueError("num_subcarriers and num_symbols must be >= 1")
        if self.cp_duration_s < 0.0:
            raise ValueError("cp_duration_s must be >= 0")
        cp = self.cp_duration_s * self.sample_rate_hz
        if abs(cp - round(cp)) > 1e-6:
            raise ValueError(f"cp_duration_s must be an integer number of samples at I*df, got {cp:.6f}")

    @staticmethod
    def default() -> "OfdmNumerology":
        # 120 kHz spacing, 3168 subcarriers (380.16 MHz occupied), 100 symbols
        df = 120e3
        return OfdmNumerology(
            subcarrier_spacing_hz=df,
            num_subcarriers=3168,
            num_symbols=100,
            cp_duration_s=1.0 / (16.0 * df),
        )

    @property
    def occupied_bandwidth_hz(self) -> float:
        return self.num_subcarriers * self.subcarrier_spacing_hz

    @property
    def sample_rate_hz(self) -> float:
        return self.occupied_bandwidth_hz

    @property
    def sample_interval_s(self) -> float:
        return 1.0 / self.sample_rate_hz

    @property
    def useful_duration_s(self) -> float:
        return 1.0 / self.subcarrier_spacing_hz

    @property
    def symbol_duration_s(self) -> float:
        return self.useful_duration_s + self.cp_duration_s

    @property
    def cp_samples(self) -> int:
        return int(round(self.cp_duration_s * self.sample_rate_hz))

    @property
    def samples_per_symbol(self) -> int:
        return self.num_subcarriers + self.cp_samples

    @property
    def frame_samples(self) -> int:
        return self.num_symbols * self.samples_per_symbol

    @property
    def delay_step_s(self) -> float:
        """Delay-domain bin width of the sounder, 1/(I*df)."""
        return 1.0 / self.occupied_bandwidth_hz


@dataclass
class IQRecord:
    """One synthetic IQ capture at a fixed antenna position."""

    position: Position
    samples: np.ndarray
    sample_interval_s: float
    seed: int

    @property
    def num_samples(self) -> int:
        return len(self.samples)


def write_iq_record(path, record: IQRecord) -> None:
    header = _HEADER.pack(
        MAIQ_MAGIC,
        MAIQ_VERSION,
        record.position.x_m,
        record.position.y_m,
        record.sample_interval_s,
        record.num_samples,
        record.seed,
    )
    payload = np.ascontiguousarray(record.samples, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_iq_record(path) -> IQRecord:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise ValueError(f"truncated IQ record header: {path}")
        magic, version, x, y, t, n, seed = _HEADER.unpack(raw)
        if magic != MAIQ_MAGIC:
            raise ValueError(f"bad IQ record magic {magic!r}: {path}")
        if version != MAIQ_VERSION:
            raise ValueError(f"unsupported IQ record version {version}: {path}")
        data = fh.read(16 * n)
    if len(data) != 16 * n:
        raise ValueError(f"truncated IQ record payload: {path}")
    samples = np.frombuffer(data, dtype="<c16").astype(np.complex128)
    return IQRecord(position=Position(x, y), samples=samples, sample_interval_s=t, seed=seed)


def gen_tone(f0_hz: float, num_samples: int, sample_interval_s: float) -> np.ndarray:
    """Unit-amplitude complex tone s[n] = exp(j*2*pi*f0*n*T).

    f0 must lie strictly inside the sampled band (|f0| < 1/(2T)).
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    if sample_interval_s <= 0.0:
        raise ValueError("sample_interval_s must be > 0")
    if abs(f0_hz) >= 0.5 / sample_interval_s:
        raise ValueError(f"tone at {f0_hz} Hz aliases at sample interval {sample_interval_s}")
    n = np.arange(num_samples)
    return np.exp(2j * np.pi * f0_hz * sample_interval_s * n)


def qpsk_symbols(num_subcarriers: int, num_symbols: int, seed: int) -> np.ndarray:
    """Seeded QPSK subcarrier grid b[i, m], E|b|^2 = 1/I (constant modulus)."""
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=(num_subcarriers, num_symbols, 2))
    re = 2.0 * bits[..., 0] - 1.0
    im = 2.0 * bits[..., 1] - 1.0
    return (re + 1j * im) / np.sqrt(2.0 * num_subcarriers)


def gen_ofdm(numerology: OfdmNumerology, symbols, sample_rate_hz: float | None = None):
    """Build a CP-OFDM frame.

    symbols is either an int seed for QPSK or an explicit (I, M) complex
    grid. Returns (samples, symbol_grid). Each symbol's first cp_samples
    samples are an exact copy of its last cp_samples (circular extension).
    """
    I = numerology.num_subcarriers
    M = numerology.num_symbols
    if isinstance(symbols, (int, np.integer)):
        b = qpsk_symbols(I, M, int(symbols))
    else:
        b = np.asarray(symbols, dtype=np.complex128)
        if b.shape != (I, M):
            raise ValueError(f"symbol grid must be shape ({I}, {M}), got {b.shape}")
    fs = numerology.sample_rate_hz if sample_rate_hz is None else float(sample_rate_hz)
    p = fs / numerology.subcarrier_spacing_hz
    if abs(p - round(p)) > 1e-6:
        raise ValueError("sample rate must be an integer multiple of the subcarrier spacing")
    p = int(round(p))
    if p < I:
        raise ValueError(f"sample rate {fs} cannot carry {I} subcarriers")
    n_cp = numerology.cp_duration_s * fs
    if abs(n_cp - round(n_cp)) > 1e-6:
        raise ValueError("cp duration must be an integer number of samples at the chosen rate")
    n_cp = int(round(n_cp))

    spec = np.zeros((M, p), dtype=np.complex128)
    spec[:, :I] = b.T
    payload = np.fft.ifft(spec, axis=1) * p  # payload[m, k] = sum_i b[i,m] exp(j*2*pi*i*k/p)
    frame = np.concatenate([payload[:, p - n_cp:], payload], axis=1)
    return frame.reshape(-1), b


def apply_channel(
    tx: np.ndarray,
    psi: PathStateInfo,
    position: Position,
    sample_interval_s: float,
    mode: str = "tone",
    numerology: OfdmNumerology | None = None,
    tx_power: float = 1.0,
) -> np.ndarray:
    """Propagate a transmit buffer through the multipath channel at one position.

    mode "tone": narrowband flat fading, y = h(r) * sqrt(pt) * tx. Path delays
    act only through the carrier phase already inside h(r).

    mode "shift": per-path integer-sample delay, y = sum_l h_l * sqrt(pt) *
    tx shifted by round(tau_l/T). Each tau_l must sit on the sample grid and
    inside the buffer.

    mode "ofdm": per-symbol circular convolution, realized as the per-
    subcarrier phase exp(-j*2*pi*i*df*tau_l). Requires the numerology used to
    build tx and delays shorter than the cyclic prefix.
    """
    tx = np.asarray(tx, dtype=np.complex128)
    amp = np.sqrt(tx_power)
    if mode == "tone":
        return channel_response(psi, position) * amp * tx

    lam = psi.wavelength_m
    d = psi.directions @ position.as_array()
    h_l = (
        math.sqrt(psi.large_scale_gain)
        * psi.amplitudes
        * np.exp(-2j * np.pi * (d / lam + psi.carrier_hz * psi.delays_s))
    )

    if mode == "shift":
        out = np.zeros_like(tx)
        for hl, tau in zip(h_l, psi.delays_s):
            shift = tau / sample_interval_s
            if abs(shift - round(shift)) > 1e-6:
                raise ValueError(f"delay {tau} is not an integer number of samples")
            shift = int(round(shift))
            if shift >= len(tx):
                raise ValueError(f"delay of {shift} samples exceeds buffer length {len(tx)}")
            out[shift:] += hl * amp * tx[: len(tx) - shift]
        return out

    if mode == "ofdm":
        if numerology is None:
            raise ValueError("ofdm mode requires the numerology used to build tx")
        fs = 1.0 / sample_interval_s
        p = int(round(fs / numerology.subcarrier_spacing_hz))
        n_cp = int(round(numerology.cp_duration_s * fs))
        sym_len = p + n_cp
        if len(tx) % sym_len != 0:
            raise ValueError("tx length is not a whole number of OFDM symbols")
        cp_span = numerology.cp_duration_s
        if np.any(psi.delays_s > cp_span):
            raise ValueError("path delay exceeds the cyclic prefix")
        df = numerology.subcarrier_spacing_hz
        i_idx = np.arange(p)
        # channel frequency response on the synthesis bins
        resp = np.sum(h_l[:, None] * np.exp(-2j * np.pi * i_idx[None, :] * df * psi.delays_s[:, None]), axis=0)
        frame = tx.reshape(-1, sym_len)
        payload = frame[:, n_cp:]
        spec = np.fft.fft(payload, axis=1) * resp[None, :]
        out_payload = np.fft.ifft(spec, axis=1) * amp
        out = np.concatenate([out_payload[:, p - n_cp:], out_payload], axis=1)
        return out.reshape(-1)

    raise ValueError(f"unknown apply_channel mode: {mode}")


def add_noise(samples: np.ndarray, spec: NoiseSpec, seed: int) -> np.ndarray:
    """Add seeded circularly symmetric Gaussian noise of variance spec.power."""
    if spec.power == 0.0:
        return np.array(samples, dtype=np.complex128, copy=True)
    rng = np.random.default_rng(seed)
    scale = np.sqrt(spec.power / 2.0)
    n = rng.standard_normal(len(samples)) + 1j * rng.standard_normal(len(samples))
    return np.asarray(samples, dtype=np.complex128) + scale * n

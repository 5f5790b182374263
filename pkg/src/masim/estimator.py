"""Channel sounding estimator: PAS search, per-path ZF beamforming, OFDM radar.

The sounding campaign treats the Q antenna positions of a grid sweep as one
large virtual array. Processing follows the measurement chain:

  1. power angular spectrum PAS(theta, phi) = f^H R f over an angle grid,
     where R is the sample covariance of received snapshots and f the
     virtual-array response at the scanned angle,
  2. peak picking on the PAS to count paths and read their angles,
  3. per-path zero-forcing weights that null every other found path,
  4. system-response calibration and symbol averaging of the per-subcarrier
     response, giving one channel frequency response per position,
  5. per-path delay and amplitude from the beamformed delay profile, and a
     power delay spectrum (PDS) per position as a by-product.

Delay estimates carry the carrier phase: after locating the delay-domain
peak, tau_hat is snapped to the nearest value whose carrier rotation
exp(-j*2*pi*fc*tau) reproduces the measured path phase. This keeps gain
fields simulated from the estimate phase-faithful to the measurement.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.constants import c as SPEED_OF_LIGHT_M_PER_S

from .channel import PathComponent, PathStateInfo, Position, to_db
from .signals import IQRecord, OfdmNumerology


class DegenerateGeometryError(ValueError):
    """Raised when found angles are too close for the aperture to separate."""


@dataclass(frozen=True)
class AngleGrid:
    """Uniform search grid over elevation x azimuth, degrees, [-90, 90] each."""

    elevation_step_deg: float = 0.5
    azimuth_step_deg: float = 0.5

    def __post_init__(self):
        for step in (self.elevation_step_deg, self.azimuth_step_deg):
            if step <= 0.0:
                raise ValueError("angle steps must be > 0")
            if abs(180.0 / step - round(180.0 / step)) > 1e-9:
                raise ValueError(f"angle step {step} does not divide the 180 degree range")

    def elevations_deg(self) -> np.ndarray:
        n = int(round(180.0 / self.elevation_step_deg))
        return -90.0 + self.elevation_step_deg * np.arange(n + 1)

    def azimuths_deg(self) -> np.ndarray:
        n = int(round(180.0 / self.azimuth_step_deg))
        return -90.0 + self.azimuth_step_deg * np.arange(n + 1)


def array_response(elevation_deg: float, azimuth_deg: float, positions: np.ndarray, wavelength_m: float) -> np.ndarray:
    """Virtual-array response f(theta, phi), entry exp(-j*2*pi*d(theta,phi,r_q)/lambda) per position."""
    el = math.radians(elevation_deg)
    az = math.radians(azimuth_deg)
    d = positions[:, 0] * (math.cos(el) * math.sin(az)) + positions[:, 1] * math.sin(el)
    return np.exp(-2j * np.pi * d / wavelength_m)


@dataclass
class SoundingCampaign:
    """A full OFDM sounding sweep: one IQ record per grid position.

    Records are re-sorted into row-major (y, then x) order at construction so
    every estimate is independent of the order records were captured or
    loaded in. tx_symbols is the known (I, M) subcarrier grid; sys_response
    is the combined TX/RX system frequency response (None means flat).
    """

    records: list[IQRecord]
    numerology: OfdmNumerology
    tx_symbols: np.ndarray
    carrier_hz: float
    sys_response: np.ndarray | None = None
    tx_power: float = 1.0
    _samples: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.records) < 2:
            raise ValueError("a sounding campaign needs at least 2 positions")
        expect = self.numerology.frame_samples
        t = self.numerology.sample_interval_s
        for rec in self.records:
            if rec.num_samples != expect:
                raise ValueError(f"record has {rec.num_samples} samples, numerology expects {expect}")
            if abs(rec.sample_interval_s - t) > 1e-15:
                raise ValueError("record sample interval disagrees with the numerology")
        i, m = self.numerology.num_subcarriers, self.numerology.num_symbols
        if self.tx_symbols.shape != (i, m):
            raise ValueError(f"tx_symbols must be ({i}, {m}), got {self.tx_symbols.shape}")
        if self.sys_response is not None and len(self.sys_response) != i:
            raise ValueError("sys_response length must match the subcarrier count")
        if self.carrier_hz <= 0.0:
            raise ValueError("carrier_hz must be > 0")
        if self.tx_power <= 0.0:
            raise ValueError("tx_power must be > 0")
        self.records = sorted(self.records, key=lambda r: (r.position.y_m, r.position.x_m))

    @property
    def num_positions(self) -> int:
        return len(self.records)

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT_M_PER_S / self.carrier_hz

    def positions_array(self) -> np.ndarray:
        return np.array([[r.position.x_m, r.position.y_m] for r in self.records])

    def resolved_sys_response(self) -> np.ndarray:
        if self.sys_response is None:
            return np.ones(self.numerology.num_subcarriers, dtype=np.complex128)
        return np.asarray(self.sys_response, dtype=np.complex128)

    def samples_matrix(self) -> np.ndarray:
        """(Q, N) matrix of all record samples, cached."""
        if self._samples is None:
            self._samples = np.vstack([r.samples for r in self.records])
        return self._samples

    def grid_axes(self) -> tuple[np.ndarray, np.ndarray] | None:
        """(x values, y values) when positions tile a complete grid, else None."""
        pos = self.positions_array()
        xs = np.unique(pos[:, 0])
        ys = np.unique(pos[:, 1])
        if len(xs) * len(ys) != len(pos):
            return None
        # records are (y, x) sorted, so a complete grid must match exactly
        expect_x = np.tile(xs, len(ys))
        expect_y = np.repeat(ys, len(xs))
        if np.array_equal(pos[:, 0], expect_x) and np.array_equal(pos[:, 1], expect_y):
            return xs, ys
        return None


@dataclass(frozen=True)
class PasMatrix:
    """Power angular spectrum over the angle grid, raw quadratic-form values."""

    values: np.ndarray  # (n_elevation, n_azimuth)
    elevations_deg: np.ndarray
    azimuths_deg: np.ndarray

    @property
    def values_db_rel_max(self) -> np.ndarray:
        return to_db(self.values / np.max(self.values))

    def to_csv(self, path) -> None:
        """Rows of elevation_deg,azimuth_deg,pas_db with the max pinned at 0 dB."""
        vdb = self.values_db_rel_max
        lines = ["elevation_deg,azimuth_deg,pas_db"]
        for ie, el in enumerate(self.elevations_deg):
            for ia, az in enumerate(self.azimuths_deg):
                lines.append(f"{el:.9g},{az:.9g},{vdb[ie, ia]:.9g}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SpectrumPeak:
    elevation_deg: float
    azimuth_deg: float
    value: float
    rel_max_db: float


@dataclass(frozen=True)
class PdsMatrix:
    """Per-position power delay spectrum, each row normalized to peak 1."""

    values: np.ndarray  # (Q, num_delay_bins)
    delay_step_s: float

    def delays_s(self) -> np.ndarray:
        return self.delay_step_s * np.arange(self.values.shape[1])

    def to_csv(self, path) -> None:
        vdb = to_db(self.values)
        delays_ns = self.delays_s() * 1e9
        lines = ["position_index,delay_ns,pds_db"]
        for q in range(self.values.shape[0]):
            for n, dns in enumerate(delays_ns):
                lines.append(f"{q},{dns:.9g},{vdb[q, n]:.9g}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


@dataclass(frozen=True)
class EstimatedPath:
    elevation_deg: float
    azimuth_deg: float
    amplitude: float
    delay_s: float
    prominence_db: float


@dataclass(frozen=True)
class EstimatedPsi:
    """Estimated path state information, paths sorted by descending amplitude.

    Amplitudes are normalized against the total measured channel power, so
    sum(amplitude^2) is the power fraction the found paths explain (<= 1).
    prominence_db is each path's PAS peak height relative to the strongest
    peak (0 for the dominant path, negative below it).
    """

    paths: tuple[EstimatedPath, ...]
    carrier_hz: float
    grid_step_deg: float

    def __post_init__(self):
        amps = [p.amplitude for p in self.paths]
        if any(amps[i] < amps[i + 1] for i in range(len(amps) - 1)):
            raise ValueError("estimated paths must be sorted by descending amplitude")
        if sum(a * a for a in amps) > 1.0 + 1e-6:
            raise ValueError("estimated amplitudes exceed unit total power")

    @property
    def num_paths(self) -> int:
        return len(self.paths)

    def as_path_state_info(self, large_scale_gain: float = 1.0) -> PathStateInfo:
        return PathStateInfo(
            paths=tuple(
                PathComponent(p.elevation_deg, p.azimuth_deg, p.amplitude, p.delay_s) for p in self.paths
            ),
            carrier_hz=self.carrier_hz,
            large_scale_gain=large_scale_gain,
        )

    def to_json_dict(self) -> dict:
        return {
            "paths": [
                {
                    "elevation_deg": p.elevation_deg,
                    "azimuth_deg": p.azimuth_deg,
                    "amplitude": p.amplitude,
                    "delay_s": p.delay_s,
                    "prominence_db": p.prominence_db,
                }
                for p in self.paths
            ],
            "carrier_hz": self.carrier_hz,
            "grid_step_deg": self.grid_step_deg,
        }

    @staticmethod
    def from_json_dict(data: dict) -> "EstimatedPsi":
        known = {"paths", "carrier_hz", "grid_step_deg"}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown estimated PSI fields: {sorted(extra)}")
        paths = tuple(
            EstimatedPath(
                elevation_deg=p["elevation_deg"],
                azimuth_deg=p["azimuth_deg"],
                amplitude=p["amplitude"],
                delay_s=p["delay_s"],
                prominence_db=p.get("prominence_db", 0.0),
            )
            for p in data["paths"]
        )
        return EstimatedPsi(paths=paths, carrier_hz=data["carrier_hz"], grid_step_deg=data["grid_step_deg"])


def _snapshot_matrix(campaign: SoundingCampaign, max_snapshots: int) -> np.ndarray:
    """(n_snap, Q) matrix of received snapshots, CP samples excluded."""
    num = campaign.numerology
    y = campaign.samples_matrix()
    sym = num.samples_per_symbol
    payload_idx = np.concatenate(
        [m * sym + num.cp_samples + np.arange(num.num_subcarriers) for m in range(num.num_symbols)]
    )
    if max_snapshots < len(payload_idx):
        sel = np.unique(np.round(np.linspace(0, len(payload_idx) - 1, max_snapshots)).astype(int))
        payload_idx = payload_idx[sel]
    return y[:, payload_idx].T


def compute_pas(
    campaign: SoundingCampaign,
    grid: AngleGrid | None = None,
    max_snapshots: int = 128,
    taper_beta: float | None = 2.8,
) -> PasMatrix:
    """Power angular spectrum PAS(theta, phi) = f^H R f over the angle grid.

    R is the sample covariance of up to max_snapshots received time samples
    (evenly spread over the frame, CP excluded). A separable Kaiser taper is
    applied across the position grid before correlation; the rectangular
    aperture's -13 dB sidelobes would otherwise masquerade as paths. Gridded
    campaigns use a separable two-stage transform so large sweeps stay
    affordable; arbitrary position sets fall back to a direct scan.
    """
    grid = grid or AngleGrid()
    els = grid.elevations_deg()
    azs = grid.azimuths_deg()
    lam = campaign.wavelength_m
    snaps = _snapshot_matrix(campaign, max_snapshots)  # (n_snap, Q)
    n_snap = snaps.shape[0]
    el_rad = np.radians(els)
    az_rad = np.radians(azs)
    sin_az = np.sin(az_rad)

    axes = campaign.grid_axes()
    pas = np.empty((len(els), len(azs)))
    if axes is not None:
        xs, ys = axes
        if taper_beta is not None:
            w2d = np.outer(np.kaiser(len(ys), taper_beta), np.kaiser(len(xs), taper_beta))
        else:
            w2d = np.ones((len(ys), len(xs)))
        s3 = snaps.reshape(n_snap, len(ys), len(xs)) * w2d[None, :, :]
        # stage 1: collapse y for every elevation, C[e, n, x]
        e_y = np.exp(2j * np.pi * np.outer(np.sin(el_rad), ys) / lam)
        c = np.tensordot(e_y, s3, axes=([1], [1]))
        # stage 2: per elevation row, collapse x for every azimuth
        for ie in range(len(els)):
            u_row = math.cos(el_rad[ie]) * sin_az
            e_x = np.exp(2j * np.pi * np.outer(u_row, xs) / lam)
            t = e_x @ c[ie].T  # (n_az, n_snap)
            pas[ie] = np.sum(np.abs(t) ** 2, axis=1)
    else:
        pos = campaign.positions_array()
        y = snaps.T  # (Q, n_snap)
        for ie in range(len(els)):
            u_row = math.cos(el_rad[ie]) * sin_az
            d = np.outer(u_row, pos[:, 0]) + math.sin(el_rad[ie]) * pos[None, :, 1]
            a = np.exp(2j * np.pi * d / lam)  # conj of the array response
            t = a @ y
            pas[ie] = np.sum(np.abs(t) ** 2, axis=1)
    return PasMatrix(values=pas, elevations_deg=els, azimuths_deg=azs)


def find_paths(pas: PasMatrix, max_paths: int = 8, prominence_db: float = 20.0) -> list[SpectrumPeak]:
    """Pick path candidates: 8-neighborhood local maxima within prominence_db of the global max."""
    v = pas.values
    local_max = v == ndimage.maximum_filter(v, size=3, mode="constant", cval=-np.inf)
    peak_val = float(np.max(v))
    if peak_val <= 0.0:
        return []
    keep = local_max & (v >= peak_val * 10.0 ** (-prominence_db / 10.0))
    ie_all, ia_all = np.nonzero(keep)
    order = np.argsort(v[ie_all, ia_all])[::-1]
    peaks = []
    for k in order[:max_paths]:
        ie, ia = int(ie_all[k]), int(ia_all[k])
        val = float(v[ie, ia])
        peaks.append(
            SpectrumPeak(
                elevation_deg=float(pas.elevations_deg[ie]),
                azimuth_deg=float(pas.azimuths_deg[ia]),
                value=val,
                rel_max_db=float(10.0 * np.log10(val / peak_val)),
            )
        )
    return peaks


def zf_weights(
    found_angles: list[tuple[float, float]],
    target_index: int,
    positions: np.ndarray,
    wavelength_m: float,
) -> np.ndarray:
    """Zero-forcing beamformer for one found path.

    w = (1/sqrt(Q)) * (I - F (F^H F)^-1 F^H) f_target, where F stacks the
    array responses of every other found path. The projection is applied
    twice for numerically exact nulls. Raises DegenerateGeometryError when
    the interferer geometry is rank deficient for this aperture.
    """
    q = positions.shape[0]
    n_paths = len(found_angles)
    if not 0 <= target_index < n_paths:
        raise IndexError(f"target_index {target_index} out of range for {n_paths} paths")
    if q <= n_paths:
        raise DegenerateGeometryError(f"{q} positions cannot zero-force {n_paths} paths")
    el, az = found_angles[target_index]
    f_t = array_response(el, az, positions, wavelength_m)
    others = [a for i, a in enumerate(found_angles) if i != target_index]
    if not others:
        return f_t / math.sqrt(q)
    f_mat = np.column_stack([array_response(e, a, positions, wavelength_m) for (e, a) in others])
    gram = f_mat.conj().T @ f_mat
    if np.linalg.cond(gram) > 1e10:
        raise DegenerateGeometryError("found angles are too close for the aperture to separate")
    w = f_t - f_mat @ np.linalg.solve(gram, f_mat.conj().T @ f_t)
    w = w - f_mat @ np.linalg.solve(gram, f_mat.conj().T @ w)
    if np.linalg.norm(w) < 1e-6 * np.linalg.norm(f_t):
        # nothing of the target survives the interferer nulls, so the
        # beamformed response would be pure noise amplification
        raise DegenerateGeometryError("target steering vector lies in the interferer span")
    return w / math.sqrt(q)


def raw_subcarrier_response(campaign: SoundingCampaign) -> np.ndarray:
    """Per-position, per-subcarrier response before system calibration.

    FFT of each symbol's payload, equalized by the known transmit symbols
    and coherently averaged over the M symbols. Returns (Q, I).
    """
    num = campaign.numerology
    i_n, m_n = num.num_subcarriers, num.num_symbols
    y = campaign.samples_matrix().reshape(campaign.num_positions, m_n, num.samples_per_symbol)
    payload = y[:, :, num.cp_samples:]
    spec = np.fft.fft(payload, axis=2)  # (Q, M, I)
    eq = spec / (i_n * math.sqrt(campaign.tx_power) * campaign.tx_symbols.T[None, :, :])
    return np.mean(eq, axis=1)


def calibrate(raw: np.ndarray, sys_response: np.ndarray, floor: float = 1e-6):
    """Divide out the system response; subcarriers with |H_sys| <= floor are flagged unusable.

    Returns (calibrated, usable_mask). Unusable subcarriers are zeroed, not
    divided, so downstream sums can skip them.
    """
    sys_response = np.asarray(sys_response, dtype=np.complex128)
    usable = np.abs(sys_response) > floor
    cal = np.zeros_like(raw)
    cal[..., usable] = raw[..., usable] / sys_response[usable]
    return cal, usable


def frequency_response(campaign: SoundingCampaign, floor: float = 1e-6):
    """Calibrated channel frequency response per position, (Q, I), plus usable mask."""
    return calibrate(raw_subcarrier_response(campaign), campaign.resolved_sys_response(), floor)


def compute_pds(campaign: SoundingCampaign, floor: float = 1e-6) -> PdsMatrix:
    """Power delay spectrum per position from the I-point IDFT of the frequency response.

    Each position's spectrum is normalized by its own peak, so the maximum
    of every row is exactly 1.
    """
    h_freq, _ = frequency_response(campaign, floor)
    h_delay = np.fft.ifft(h_freq, axis=1)
    pds = np.abs(h_delay) ** 2
    peaks = np.max(pds, axis=1)
    if np.any(peaks == 0.0):
        raise ValueError("all-zero delay response at some position")
    return PdsMatrix(values=pds / peaks[:, None], delay_step_s=campaign.numerology.delay_step_s)


def _parabolic_offset(y_m1: float, y_0: float, y_p1: float) -> float:
    """Vertex offset of the parabola through three equispaced samples, clipped to [-0.5, 0.5]."""
    denom = y_m1 - 2.0 * y_0 + y_p1
    if denom == 0.0:
        return 0.0
    return float(np.clip(0.5 * (y_m1 - y_p1) / denom, -0.5, 0.5))


def estimate_delay_amplitude(
    campaign: SoundingCampaign,
    weights: list[np.ndarray],
    angles: list[tuple[float, float]],
    peaks_rel_db: list[float] | None = None,
    grid_step_deg: float = 0.5,
    oversample: int = 8,
    min_peak_to_median_db: float = 12.0,
    floor: float = 1e-6,
) -> EstimatedPsi:
    """Per-path delays and amplitudes from the beamformed frequency responses.

    For each found path the ZF-beamformed response G[i] is transformed to an
    oversampled delay profile; the peak is refined by parabolic
    interpolation of |h[n]|^2 and then snapped to the nearest delay that
    reproduces the measured carrier phase. The amplitude is the coherent
    subcarrier average |mean_i G[i]*exp(j*2*pi*i*df*tau_hat)|, normalized by
    the total channel power so path amplitudes follow the unit-power
    convention of estimated PSI. Paths without a dominant delay peak are
    dropped with a warning.
    """
    if len(weights) != len(angles):
        raise ValueError("weights and angles must pair up")
    num = campaign.numerology
    i_n = num.num_subcarriers
    df = num.subcarrier_spacing_hz
    fc = campaign.carrier_hz
    h_freq, usable = frequency_response(campaign, floor)
    if not np.any(usable):
        raise ValueError("no usable subcarriers after calibration")
    positions = campaign.positions_array()
    lam = campaign.wavelength_m
    idx = np.arange(i_n)
    n_fft = oversample * i_n

    # total channel power per subcarrier, noise-debiased from the upper half
    # of the delay range where no physical path can sit
    h_delay = np.fft.ifft(h_freq, axis=1)
    noise_per_bin = float(np.mean(np.abs(h_delay[:, i_n // 2:]) ** 2))
    p_total = float(np.mean(np.abs(h_freq[:, usable]) ** 2)) - i_n * noise_per_bin
    if p_total <= 0.0:
        raise ValueError("measured channel power does not rise above the noise floor")

    found = []
    for k, (w, (el, az)) in enumerate(zip(weights, angles)):
        f_hat = array_response(el, az, positions, lam)
        denom = np.vdot(w, f_hat)
        g = (w.conj() @ h_freq) / denom
        g[~usable] = 0.0
        profile = np.abs(np.fft.ifft(g, n=n_fft)) ** 2
        peak = int(np.argmax(profile))
        med = float(np.median(profile))
        peak_db = 10.0 * math.log10(profile[peak] / med) if med > 0.0 else np.inf
        if peak_db < min_peak_to_median_db:
            warnings.warn(
                f"path {k} at ({el}, {az}) deg has no dominant delay peak "
                f"({peak_db:.1f} dB over median), dropping it"
            )
            continue
        y3 = profile.take([peak - 1, peak, peak + 1], mode="wrap")
        delta = _parabolic_offset(*y3)
        tau0 = (peak + delta) * num.delay_step_s / oversample
        # measured carrier phase of the path, then phase-consistent snap
        rot = np.exp(2j * np.pi * idx * df * tau0)
        m0 = np.mean(g[usable] * rot[usable])
        psi_ph = math.atan2(m0.imag, m0.real)
        cycles = round(tau0 * fc + psi_ph / (2.0 * math.pi))
        tau_hat = (cycles - psi_ph / (2.0 * math.pi)) / fc
        while tau_hat < 0.0:
            tau_hat += 1.0 / fc
        rot = np.exp(2j * np.pi * idx * df * tau_hat)
        amp_raw = abs(np.mean(g[usable] * rot[usable]))
        rel_db = peaks_rel_db[k] if peaks_rel_db is not None else 0.0
        found.append((el, az, amp_raw, tau_hat, rel_db))

    amps = np.array([f[2] for f in found]) / math.sqrt(p_total)
    total = float(np.sum(amps**2))
    if total > 1.0:
        amps = amps / math.sqrt(total)
    order = np.argsort(amps)[::-1]
    paths = tuple(
        EstimatedPath(
            elevation_deg=found[k][0],
            azimuth_deg=found[k][1],
            amplitude=float(amps[k]),
            delay_s=found[k][3],
            prominence_db=found[k][4],
        )
        for k in order
    )
    return EstimatedPsi(paths=paths, carrier_hz=fc, grid_step_deg=grid_step_deg)


def estimate_psi(
    campaign: SoundingCampaign,
    grid: AngleGrid | None = None,
    max_paths: int = 8,
    prominence_db: float = 20.0,
    max_snapshots: int = 128,
    taper_beta: float | None = 2.8,
    oversample: int = 8,
    pas: PasMatrix | None = None,
) -> EstimatedPsi:
    """Full estimation chain: PAS, peak picking, ZF beamforming, delay/amplitude.

    Pass a precomputed pas (from compute_pas on the same campaign and grid)
    to skip the spectrum scan.
    """
    grid = grid or AngleGrid()
    if pas is None:
        pas = compute_pas(campaign, grid, max_snapshots=max_snapshots, taper_beta=taper_beta)
    peaks = find_paths(pas, max_paths=max_paths, prominence_db=prominence_db)
    if not peaks:
        raise ValueError("no paths found in the angular spectrum")
    angles = [(p.elevation_deg, p.azimuth_deg) for p in peaks]
    positions = campaign.positions_array()
    lam = campaign.wavelength_m
    weights = [zf_weights(angles, i, positions, lam) for i in range(len(angles))]
    return estimate_delay_amplitude(
        campaign,
        weights,
        angles,
        peaks_rel_db=[p.rel_max_db for p in peaks],
        grid_step_deg=grid.elevation_step_deg,
        oversample=oversample,
    )

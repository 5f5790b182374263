"""Scenario configs, on-disk campaigns, and the staged processing pipeline.

A campaign directory holds one .maiq record per grid position plus a JSON
manifest pinning down how the records were produced: the full scenario
config, per-record noise seeds, and (for sounding) the transmit symbol
seed. The manifest is enough to re-derive everything the estimator needs
without touching the channel model that produced the data.

run_pipeline() chains sound -> estimate -> measure -> optimize -> export
through content-addressed stage directories: each stage directory name
embeds a hash of everything the stage depends on, so re-running with the
same inputs is a cache hit and changing any input re-runs exactly the
stages downstream of the change.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .channel import (
    MovementRegion,
    PathComponent,
    PathStateInfo,
    gain_map,
    read_grid_csv,
)
from .estimator import (
    AngleGrid,
    EstimatedPsi,
    SoundingCampaign,
    compute_pas,
    compute_pds,
    estimate_psi,
)
from .mover import SimulatedSlideTrack, optimize
from .powermeter import PowerMap, sweep_measure
from .signals import (
    IQRecord,
    NoiseSpec,
    OfdmNumerology,
    add_noise,
    apply_channel,
    derive_seed,
    gen_tone,
    qpsk_symbols,
    read_iq_record,
    write_iq_record,
)

MANIFEST_FORMAT = "maiq-campaign/1"
MANIFEST_NAME = "manifest.json"


class ConfigError(ValueError):
    """A scenario config, PSI file, or campaign manifest failed validation."""


class StageError(RuntimeError):
    """A pipeline stage failed. The offending stage name is in .stage."""

    def __init__(self, stage: str, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage


def _atomic_write_bytes(path, data: bytes) -> None:
    # write-then-rename so a crashed run never leaves a truncated file
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _atomic_write_json(path, obj) -> None:
    _atomic_write_bytes(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _canonical_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _reject_unknown(data: dict, known, what: str) -> None:
    extra = set(data) - set(known)
    if extra:
        raise ConfigError(f"unknown {what} fields: {sorted(extra)}")


def _require(data: dict, keys, what: str) -> None:
    missing = set(keys) - set(data)
    if missing:
        raise ConfigError(f"missing {what} fields: {sorted(missing)}")


_REGION_KEYS = ("x_extent_m", "y_extent_m", "x_step_m", "y_step_m")
_NUMEROLOGY_KEYS = ("subcarrier_spacing_hz", "num_subcarriers", "num_symbols", "cp_duration_s")


def _region_to_dict(region: MovementRegion) -> dict:
    return {k: getattr(region, k) for k in _REGION_KEYS}


def _region_from_dict(data: dict, what: str) -> MovementRegion:
    _require(data, _REGION_KEYS, what)
    _reject_unknown(data, _REGION_KEYS, what)
    try:
        return MovementRegion(**{k: float(data[k]) for k in _REGION_KEYS})
    except ValueError as e:
        raise ConfigError(f"bad {what}: {e}") from e


def _numerology_to_dict(num: OfdmNumerology) -> dict:
    return {k: getattr(num, k) for k in _NUMEROLOGY_KEYS}


def _numerology_from_dict(data: dict) -> OfdmNumerology:
    _require(data, _NUMEROLOGY_KEYS, "numerology")
    _reject_unknown(data, _NUMEROLOGY_KEYS, "numerology")
    try:
        return OfdmNumerology(
            subcarrier_spacing_hz=float(data["subcarrier_spacing_hz"]),
            num_subcarriers=int(data["num_subcarriers"]),
            num_symbols=int(data["num_symbols"]),
            cp_duration_s=float(data["cp_duration_s"]),
        )
    except ValueError as e:
        raise ConfigError(f"bad numerology: {e}") from e


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to reproduce a campaign, minus the channel itself.

    region is the fine grid the power meter and mover work on;
    sounding_region is the (usually coarser) grid the OFDM sounder sweeps.
    noise_power is the per-sample complex noise variance applied at whatever
    sample rate the active mode runs at. tx_position_m is instrument
    metadata carried through manifests; the planar model never consumes it.
    """

    carrier_hz: float
    bandwidth_hz: float
    tx_position_m: tuple[float, float, float]
    region: MovementRegion
    sounding_region: MovementRegion
    numerology: OfdmNumerology
    noise_power: float
    tone_f0_hz: float
    samples_per_measurement: int
    master_seed: int

    def __post_init__(self):
        object.__setattr__(self, "tx_position_m", tuple(float(v) for v in self.tx_position_m))
        if len(self.tx_position_m) != 3:
            raise ConfigError("tx_position_m must be an (x, y, z) triple")
        if self.carrier_hz <= 0.0:
            raise ConfigError(f"carrier_hz must be > 0: {self.carrier_hz}")
        if self.bandwidth_hz <= 0.0:
            raise ConfigError(f"bandwidth_hz must be > 0: {self.bandwidth_hz}")
        if self.numerology.occupied_bandwidth_hz > self.bandwidth_hz * (1 + 1e-12):
            raise ConfigError(
                f"numerology occupies {self.numerology.occupied_bandwidth_hz} Hz, "
                f"more than the configured bandwidth {self.bandwidth_hz} Hz"
            )
        if abs(self.tone_f0_hz) >= self.bandwidth_hz / 2.0:
            raise ConfigError(f"tone_f0_hz {self.tone_f0_hz} is at or above Nyquist for {self.bandwidth_hz} Hz")
        if self.noise_power < 0.0:
            raise ConfigError(f"noise_power must be >= 0: {self.noise_power}")
        if self.samples_per_measurement < 2:
            raise ConfigError("samples_per_measurement must be >= 2")
        if not isinstance(self.master_seed, int) or isinstance(self.master_seed, bool) or self.master_seed < 0:
            raise ConfigError(f"master_seed must be a non-negative integer: {self.master_seed!r}")

    def to_json_dict(self) -> dict:
        return {
            "carrier_hz": self.carrier_hz,
            "bandwidth_hz": self.bandwidth_hz,
            "tx_position_m": list(self.tx_position_m),
            "region": _region_to_dict(self.region),
            "sounding_region": _region_to_dict(self.sounding_region),
            "numerology": _numerology_to_dict(self.numerology),
            "noise_power": self.noise_power,
            "tone_f0_hz": self.tone_f0_hz,
            "samples_per_measurement": self.samples_per_measurement,
            "master_seed": self.master_seed,
        }

    @staticmethod
    def from_json_dict(data: dict) -> "ScenarioConfig":
        known = (
            "carrier_hz",
            "bandwidth_hz",
            "tx_position_m",
            "region",
            "sounding_region",
            "numerology",
            "noise_power",
            "tone_f0_hz",
            "samples_per_measurement",
            "master_seed",
        )
        _require(data, known, "scenario")
        _reject_unknown(data, known, "scenario")
        return ScenarioConfig(
            carrier_hz=float(data["carrier_hz"]),
            bandwidth_hz=float(data["bandwidth_hz"]),
            tx_position_m=tuple(data["tx_position_m"]),
            region=_region_from_dict(data["region"], "region"),
            sounding_region=_region_from_dict(data["sounding_region"], "sounding_region"),
            numerology=_numerology_from_dict(data["numerology"]),
            noise_power=float(data["noise_power"]),
            tone_f0_hz=float(data["tone_f0_hz"]),
            samples_per_measurement=int(data["samples_per_measurement"]),
            master_seed=int(data["master_seed"]),
        )

    def canonical_bytes(self) -> bytes:
        return _canonical_bytes(self.to_json_dict())

    def scenario_hash(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()[:12]

    def save(self, path) -> None:
        _atomic_write_json(path, self.to_json_dict())

    @staticmethod
    def load(path) -> "ScenarioConfig":
        return ScenarioConfig.from_json_dict(_load_json(path))


def _load_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"no such file: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{p} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{p} must hold a JSON object")
    return data


def psi_to_json_dict(psi: PathStateInfo) -> dict:
    return {
        "carrier_hz": psi.carrier_hz,
        "large_scale_gain": psi.large_scale_gain,
        "normalized": psi.normalized,
        "paths": [
            {
                "elevation_deg": p.elevation_deg,
                "azimuth_deg": p.azimuth_deg,
                "amplitude": p.amplitude,
                "delay_s": p.delay_s,
            }
            for p in psi.paths
        ],
    }


def psi_from_json_dict(data: dict) -> PathStateInfo:
    """Parse path state from JSON, accepting estimator output as well.

    The estimator adds prominence_db per path and a top-level grid_step_deg;
    both are ignored here so an estimate file can seed a simulation.
    """
    _require(data, ("carrier_hz", "paths"), "path state")
    _reject_unknown(
        data, ("carrier_hz", "large_scale_gain", "normalized", "paths", "grid_step_deg"), "path state"
    )
    path_keys = ("elevation_deg", "azimuth_deg", "amplitude", "delay_s", "prominence_db")
    paths = []
    for i, p in enumerate(data["paths"]):
        _require(p, ("elevation_deg", "azimuth_deg", "amplitude", "delay_s"), f"path {i}")
        _reject_unknown(p, path_keys, f"path {i}")
        paths.append(
            PathComponent(
                elevation_deg=float(p["elevation_deg"]),
                azimuth_deg=float(p["azimuth_deg"]),
                amplitude=float(p["amplitude"]),
                delay_s=float(p["delay_s"]),
            )
        )
    try:
        return PathStateInfo(
            paths=tuple(paths),
            carrier_hz=float(data["carrier_hz"]),
            large_scale_gain=float(data.get("large_scale_gain", 1.0)),
            normalized=bool(data.get("normalized", False)),
        )
    except ValueError as e:
        raise ConfigError(f"bad path state: {e}") from e


def load_psi(path) -> PathStateInfo:
    return psi_from_json_dict(_load_json(path))


def save_psi(path, psi: PathStateInfo) -> None:
    _atomic_write_json(path, psi_to_json_dict(psi))


# ---------------------------------------------------------------------------
# campaign synthesis


def _check_carrier(cfg: ScenarioConfig, psi: PathStateInfo) -> None:
    if abs(cfg.carrier_hz - psi.carrier_hz) > 1e-3:
        raise ConfigError(
            f"scenario carrier {cfg.carrier_hz} Hz and path state carrier {psi.carrier_hz} Hz disagree"
        )


def iter_tone_records(cfg: ScenarioConfig, psi: PathStateInfo):
    """Yield one noisy tone capture per point of cfg.region, row-major."""
    _check_carrier(cfg, psi)
    t = 1.0 / cfg.bandwidth_hz
    tone = gen_tone(cfg.tone_f0_hz, cfg.samples_per_measurement, t)
    noise = NoiseSpec(cfg.noise_power, cfg.bandwidth_hz)
    for i, pos in enumerate(cfg.region.positions()):
        seed = derive_seed(cfg.master_seed, "tone", i)
        rx = apply_channel(tone, psi, pos, t, mode="tone")
        yield IQRecord(position=pos, samples=add_noise(rx, noise, seed), sample_interval_s=t, seed=seed)


def _sounding_frames(psi, positions, numerology, tx_symbols, tx_power=1.0):
    """Noiseless received OFDM frames for a block of positions, (Q, frame_samples).

    Frequency-domain synthesis: the per-position channel response on the I
    occupied bins is applied per symbol and inverted in one batched IFFT.
    Matches apply_channel(mode="ofdm") at the numerology's native rate.
    """
    lam = psi.wavelength_m
    n_sub = numerology.num_subcarriers
    df = numerology.subcarrier_spacing_hz
    d = positions @ psi.directions.T  # (Q, L) path distance deltas
    steer = np.exp(-2j * np.pi * d / lam)
    i_idx = np.arange(n_sub)
    coeff = (
        math.sqrt(psi.large_scale_gain)
        * psi.amplitudes[:, None]
        * np.exp(-2j * np.pi * (psi.carrier_hz + i_idx[None, :] * df) * psi.delays_s[:, None])
    )  # (L, I)
    h_freq = steer @ coeff  # (Q, I)
    n_cp = numerology.cp_samples
    sym_len = n_sub + n_cp
    scale = n_sub * math.sqrt(tx_power)
    frames = np.empty((len(positions), numerology.frame_samples), dtype=np.complex128)
    for m in range(numerology.num_symbols):
        payload = np.fft.ifft(tx_symbols[:, m][None, :] * h_freq, axis=1) * scale
        frames[:, m * sym_len : m * sym_len + n_cp] = payload[:, n_sub - n_cp :]
        frames[:, m * sym_len + n_cp : (m + 1) * sym_len] = payload
    return frames


def iter_sounding_records(cfg: ScenarioConfig, psi: PathStateInfo, tx_symbols: np.ndarray):
    """Yield one noisy OFDM capture per point of cfg.sounding_region, row-major."""
    _check_carrier(cfg, psi)
    num = cfg.numerology
    if np.any(psi.delays_s > num.cp_duration_s):
        raise ConfigError("path delay exceeds the cyclic prefix; pick a longer CP")
    noise = NoiseSpec(cfg.noise_power, num.sample_rate_hz)
    positions = cfg.sounding_region.positions()
    # block the batched IFFTs to keep peak memory around 64 MiB of samples
    block = max(1, (1 << 22) // num.frame_samples)
    for start in range(0, len(positions), block):
        chunk = positions[start : start + block]
        pos_arr = np.array([[p.x_m, p.y_m] for p in chunk])
        frames = _sounding_frames(psi, pos_arr, num, tx_symbols)
        for k, pos in enumerate(chunk):
            seed = derive_seed(cfg.master_seed, "sound", start + k)
            yield IQRecord(
                position=pos,
                samples=add_noise(frames[k], noise, seed),
                sample_interval_s=num.sample_interval_s,
                seed=seed,
            )


def build_sounding_campaign(cfg: ScenarioConfig, psi: PathStateInfo) -> SoundingCampaign:
    """Synthesize a sounding campaign in memory (no files)."""
    tx_seed = derive_seed(cfg.master_seed, "tx")
    num = cfg.numerology
    tx = qpsk_symbols(num.num_subcarriers, num.num_symbols, tx_seed)
    return SoundingCampaign(
        records=list(iter_sounding_records(cfg, psi, tx)),
        numerology=num,
        tx_symbols=tx,
        carrier_hz=cfg.carrier_hz,
    )


@dataclass(frozen=True)
class RecordEntry:
    file: str
    x_m: float
    y_m: float
    seed: int


@dataclass(frozen=True)
class CampaignManifest:
    """Index of an on-disk campaign: scenario, mode, and per-record seeds."""

    mode: str
    scenario: ScenarioConfig
    records: tuple[RecordEntry, ...]
    tx_power: float = 1.0
    tx_symbol_seed: int | None = None
    sys_response: tuple[complex, ...] | None = None

    def __post_init__(self):
        if self.mode not in ("tone", "ofdm"):
            raise ConfigError(f"campaign mode must be 'tone' or 'ofdm': {self.mode!r}")
        if not self.records:
            raise ConfigError("a campaign manifest needs at least one record")
        if self.mode == "ofdm" and self.tx_symbol_seed is None:
            raise ConfigError("an ofdm manifest must carry tx_symbol_seed")
        if self.tx_power <= 0.0:
            raise ConfigError(f"tx_power must be > 0: {self.tx_power}")
        if self.sys_response is not None and len(self.sys_response) != self.scenario.numerology.num_subcarriers:
            raise ConfigError("sys_response length must match the subcarrier count")

    @property
    def region(self) -> MovementRegion:
        return self.scenario.sounding_region if self.mode == "ofdm" else self.scenario.region

    def to_json_dict(self) -> dict:
        sys_resp = None
        if self.sys_response is not None:
            sys_resp = [[v.real, v.imag] for v in self.sys_response]
        return {
            "format": MANIFEST_FORMAT,
            "mode": self.mode,
            "scenario": self.scenario.to_json_dict(),
            "scenario_hash": self.scenario.scenario_hash(),
            "tx_power": self.tx_power,
            "tx_symbol_seed": self.tx_symbol_seed,
            "sys_response": sys_resp,
            "records": [
                {"file": r.file, "x_m": r.x_m, "y_m": r.y_m, "seed": r.seed} for r in self.records
            ],
        }

    @staticmethod
    def from_json_dict(data: dict) -> "CampaignManifest":
        known = ("format", "mode", "scenario", "scenario_hash", "tx_power", "tx_symbol_seed", "sys_response", "records")
        _require(data, known, "manifest")
        _reject_unknown(data, known, "manifest")
        if data["format"] != MANIFEST_FORMAT:
            raise ConfigError(f"unsupported manifest format: {data['format']!r}")
        scenario = ScenarioConfig.from_json_dict(data["scenario"])
        if data["scenario_hash"] != scenario.scenario_hash():
            raise ConfigError("manifest scenario_hash does not match its scenario")
        entries = []
        for i, r in enumerate(data["records"]):
            keys = ("file", "x_m", "y_m", "seed")
            _require(r, keys, f"record {i}")
            _reject_unknown(r, keys, f"record {i}")
            entries.append(RecordEntry(str(r["file"]), float(r["x_m"]), float(r["y_m"]), int(r["seed"])))
        sys_resp = data["sys_response"]
        if sys_resp is not None:
            sys_resp = tuple(complex(re, im) for re, im in sys_resp)
        tx_seed = data["tx_symbol_seed"]
        return CampaignManifest(
            mode=str(data["mode"]),
            scenario=scenario,
            records=tuple(entries),
            tx_power=float(data["tx_power"]),
            tx_symbol_seed=None if tx_seed is None else int(tx_seed),
            sys_response=sys_resp,
        )

    def save(self, dir_path) -> None:
        _atomic_write_json(Path(dir_path) / MANIFEST_NAME, self.to_json_dict())

    @staticmethod
    def load(dir_path) -> "CampaignManifest":
        return CampaignManifest.from_json_dict(_load_json(Path(dir_path) / MANIFEST_NAME))


def synthesize_campaign(cfg: ScenarioConfig, psi: PathStateInfo, mode: str, out_dir) -> Path:
    """Write a full campaign (records plus manifest) under out_dir.

    Record files land first and the manifest last, each via rename, so a
    directory with a manifest is always a complete campaign.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tx_seed = None
    if mode == "tone":
        records = iter_tone_records(cfg, psi)
    elif mode == "ofdm":
        tx_seed = derive_seed(cfg.master_seed, "tx")
        num = cfg.numerology
        tx = qpsk_symbols(num.num_subcarriers, num.num_symbols, tx_seed)
        records = iter_sounding_records(cfg, psi, tx)
    else:
        raise ConfigError(f"campaign mode must be 'tone' or 'ofdm': {mode!r}")

    entries = []
    for i, rec in enumerate(records):
        fname = f"rec_{i:06d}.maiq"
        tmp = out / (fname + ".tmp")
        write_iq_record(tmp, rec)
        os.replace(tmp, out / fname)
        entries.append(RecordEntry(fname, rec.position.x_m, rec.position.y_m, rec.seed))
    CampaignManifest(mode=mode, scenario=cfg, records=tuple(entries), tx_symbol_seed=tx_seed).save(out)
    return out


def load_campaign(dir_path) -> tuple[CampaignManifest, list[IQRecord]]:
    """Load a campaign directory, checking every record against the manifest."""
    manifest = CampaignManifest.load(dir_path)
    base = Path(dir_path)
    records = []
    for entry in manifest.records:
        path = base / entry.file
        if not path.exists():
            raise ConfigError(f"manifest lists {entry.file} but the file is missing")
        rec = read_iq_record(path)
        if (rec.position.x_m, rec.position.y_m) != (entry.x_m, entry.y_m):
            raise ConfigError(f"{entry.file}: position disagrees with the manifest")
        if rec.seed != entry.seed:
            raise ConfigError(f"{entry.file}: seed disagrees with the manifest")
        records.append(rec)
    expect = manifest.region.positions()
    got = [r.position for r in records]
    if got != expect:
        raise ConfigError("campaign records do not tile the region declared in the manifest")
    return manifest, records


def load_sounding_campaign(dir_path) -> tuple[CampaignManifest, SoundingCampaign]:
    """Rebuild a SoundingCampaign (records, symbols, system response) from disk."""
    manifest, records = load_campaign(dir_path)
    if manifest.mode != "ofdm":
        raise ConfigError(f"expected an ofdm campaign, found mode {manifest.mode!r}")
    num = manifest.scenario.numerology
    tx = qpsk_symbols(num.num_subcarriers, num.num_symbols, manifest.tx_symbol_seed)
    sys_resp = None if manifest.sys_response is None else np.array(manifest.sys_response)
    campaign = SoundingCampaign(
        records=records,
        numerology=num,
        tx_symbols=tx,
        carrier_hz=manifest.scenario.carrier_hz,
        sys_response=sys_resp,
        tx_power=manifest.tx_power,
    )
    return manifest, campaign


def measure_campaign(dir_path, f0_hz: float | None = None, fft_size: int | None = None) -> PowerMap:
    """Run the FFT power meter over every record of an on-disk tone campaign."""
    manifest, records = load_campaign(dir_path)
    if manifest.mode != "tone":
        raise ConfigError(f"expected a tone campaign, found mode {manifest.mode!r}")
    f0 = manifest.scenario.tone_f0_hz if f0_hz is None else f0_hz
    return sweep_measure(records, f0, fft_size)


# ---------------------------------------------------------------------------
# pipeline


_STAGE_ORDER = ("sound", "estimate", "measure", "optimize", "export")
_STAGE_DEPS = {
    "sound": (),
    "estimate": ("sound",),
    "measure": (),
    "optimize": ("estimate",),
    # export depends on whatever else was requested; resolved at run time
    "export": (),
}


@dataclass
class PipelineResult:
    stage_dirs: dict
    artifacts: dict
    cached: set


def _stage_artifacts(name: str, sdir: Path) -> dict:
    if name == "sound":
        return {"sounding_campaign": sdir / "campaign"}
    if name == "measure":
        return {"tone_campaign": sdir / "campaign", "power_map": sdir / "power_map.csv"}
    if name == "estimate":
        return {
            "estimated_psi": sdir / "estimated_psi.json",
            "pas": sdir / "pas.csv",
            "pds": sdir / "pds.csv",
        }
    if name == "optimize":
        return {"move_result": sdir / "move_result.json"}
    return {"export_dir": sdir, "gain_map": sdir / "gain_map.csv"}


def run_pipeline(
    cfg: ScenarioConfig,
    psi: PathStateInfo,
    stages,
    out_dir,
    angle_grid: AngleGrid | None = None,
    max_paths: int = 8,
    prominence_db: float = 20.0,
    fft_size: int | None = None,
    optimize_budget: int = 50,
    refine_step_m: float | None = None,
) -> PipelineResult:
    """Run the requested stages (deps pulled in automatically) under out_dir.

    Stage directories are content-addressed: <stage>-<hash> where the hash
    covers the scenario, the path state, the stage parameters, and the
    hashes of upstream stages. A directory holding a .complete marker is
    trusted as a cache hit and not recomputed.
    """
    requested = set(stages)
    unknown = requested - set(_STAGE_ORDER)
    if unknown:
        raise ConfigError(f"unknown pipeline stages: {sorted(unknown)}")
    # close over dependencies
    while True:
        need = {d for s in requested for d in _stage_deps(s, requested)} - requested
        if not need:
            break
        requested |= need
    ordered = [s for s in _STAGE_ORDER if s in requested]

    params = {
        "sound": {},
        "measure": {"fft_size": fft_size},
        "estimate": {
            "angle_grid": list(_grid_steps(angle_grid)),
            "max_paths": max_paths,
            "prominence_db": prominence_db,
        },
        "optimize": {"budget": optimize_budget, "refine_step_m": refine_step_m},
        "export": {},
    }

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = PipelineResult(stage_dirs={}, artifacts={}, cached=set())
    hashes = {}
    for name in ordered:
        parents = sorted(_stage_deps(name, requested))
        payload = {
            "stage": name,
            "scenario": cfg.to_json_dict(),
            "psi": psi_to_json_dict(psi),
            "params": params[name],
            "parents": [hashes[p] for p in parents],
        }
        digest = hashlib.sha256(_canonical_bytes(payload)).hexdigest()[:12]
        hashes[name] = digest
        sdir = out / f"{name}-{digest}"
        result.stage_dirs[name] = sdir
        marker = sdir / ".complete"
        if marker.exists():
            result.cached.add(name)
        else:
            sdir.mkdir(parents=True, exist_ok=True)
            try:
                _run_stage(
                    name,
                    sdir,
                    cfg,
                    psi,
                    result.artifacts,
                    angle_grid=angle_grid,
                    max_paths=max_paths,
                    prominence_db=prominence_db,
                    fft_size=fft_size,
                    optimize_budget=optimize_budget,
                    refine_step_m=refine_step_m,
                )
            except Exception as e:
                raise StageError(name, e) from e
            _atomic_write_bytes(marker, (digest + "\n").encode())
        result.artifacts.update(_stage_artifacts(name, sdir))
    return result


def _stage_deps(name: str, requested) -> tuple:
    if name == "export":
        return tuple(s for s in requested if s != "export")
    return _STAGE_DEPS[name]


def _grid_steps(grid: AngleGrid | None) -> tuple[float, float]:
    grid = grid or AngleGrid()
    return grid.elevation_step_deg, grid.azimuth_step_deg


def _run_stage(name, sdir, cfg, psi, artifacts, *, angle_grid, max_paths, prominence_db, fft_size, optimize_budget, refine_step_m):
    if name == "sound":
        synthesize_campaign(cfg, psi, "ofdm", sdir / "campaign")
    elif name == "measure":
        synthesize_campaign(cfg, psi, "tone", sdir / "campaign")
        measure_campaign(sdir / "campaign", fft_size=fft_size).to_csv(sdir / "power_map.csv")
    elif name == "estimate":
        _, campaign = load_sounding_campaign(artifacts["sounding_campaign"])
        grid = angle_grid or AngleGrid()
        pas = compute_pas(campaign, grid)
        est = estimate_psi(campaign, grid, max_paths=max_paths, prominence_db=prominence_db, pas=pas)
        pas.to_csv(sdir / "pas.csv")
        compute_pds(campaign).to_csv(sdir / "pds.csv")
        _atomic_write_json(sdir / "estimated_psi.json", est.to_json_dict())
    elif name == "optimize":
        est = EstimatedPsi.from_json_dict(_load_json(artifacts["estimated_psi"]))
        track = SimulatedSlideTrack(
            psi=psi,
            region=cfg.region,
            noise=NoiseSpec(cfg.noise_power, cfg.bandwidth_hz),
            f0_hz=cfg.tone_f0_hz,
            num_samples=cfg.samples_per_measurement,
            master_seed=derive_seed(cfg.master_seed, "mover"),
        )
        step = refine_step_m if refine_step_m is not None else max(cfg.region.x_step_m, cfg.region.y_step_m)
        res = optimize(est, cfg.region, track, refine_step_m=step, budget=optimize_budget)
        _atomic_write_json(sdir / "move_result.json", res.to_json_dict())
    elif name == "export":
        gain_map(psi, cfg.region).to_csv(sdir / "gain_map.csv")
        for key, fname in (
            ("power_map", "power_map.csv"),
            ("estimated_psi", "estimated_psi.json"),
            ("pas", "pas.csv"),
            ("pds", "pds.csv"),
            ("move_result", "move_result.json"),
        ):
            src = artifacts.get(key)
            if src is not None:
                shutil.copyfile(src, sdir / fname)
    else:  # pragma: no cover - guarded by run_pipeline
        raise ValueError(f"unknown stage {name!r}")


# ---------------------------------------------------------------------------
# map comparison


@dataclass(frozen=True)
class DbMap:
    """A bare dB-valued grid, e.g. one read back from CSV."""

    x_m: np.ndarray
    y_m: np.ndarray
    db: np.ndarray


def load_map_csv(path) -> DbMap:
    x, y, values, column = read_grid_csv(path)
    if not (column.endswith("_db") or column.endswith("_dbr")):
        raise ConfigError(f"{path}: column {column!r} is not a dB quantity")
    return DbMap(x_m=x, y_m=y, db=values)


def _map_db(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(m, DbMap):
        return m.x_m, m.y_m, m.db
    if hasattr(m, "values_db"):
        return m.x_m, m.y_m, np.asarray(m.values_db)
    if hasattr(m, "values_dbr"):
        return m.x_m, m.y_m, np.asarray(m.values_dbr)
    raise TypeError(f"not a map type: {type(m).__name__}")


@dataclass(frozen=True)
class CompareReport:
    """How two dB maps on the same grid relate: b relative to a."""

    correlation: float
    offset_db: float
    max_abs_residual_db: float
    rms_residual_db: float
    argmax_shift_steps: tuple[int, int]

    def to_json_dict(self) -> dict:
        return {
            "correlation": self.correlation,
            "offset_db": self.offset_db,
            "max_abs_residual_db": self.max_abs_residual_db,
            "rms_residual_db": self.rms_residual_db,
            "argmax_shift_steps": list(self.argmax_shift_steps),
        }


def compare_maps(a, b) -> CompareReport:
    """Compare two maps point by point. Grids must be identical.

    offset_db is mean(b - a); residuals are what remains after removing it.
    A power map and the gain map it measures should correlate to 1 with the
    offset equal to the link budget terms the gain map leaves out.
    """
    ax, ay, adb = _map_db(a)
    bx, by, bdb = _map_db(b)
    if not (np.array_equal(ax, bx) and np.array_equal(ay, by)):
        raise ValueError("maps are on different grids")
    if adb.shape != bdb.shape:
        raise ValueError("maps have different shapes")
    diff = bdb - adb
    offset = float(diff.mean())
    resid = diff - offset
    va = (adb - adb.mean()).ravel()
    vb = (bdb - bdb.mean()).ravel()
    denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if denom == 0.0:
        corr = 1.0 if float(np.max(np.abs(resid))) < 1e-12 else 0.0
    else:
        corr = float(va @ vb / denom)
    ia = np.unravel_index(int(np.argmax(adb)), adb.shape)
    ib = np.unravel_index(int(np.argmax(bdb)), bdb.shape)
    return CompareReport(
        correlation=corr,
        offset_db=offset,
        max_abs_residual_db=float(np.max(np.abs(resid))),
        rms_residual_db=float(np.sqrt(np.mean(resid**2))),
        argmax_shift_steps=(int(ib[1] - ia[1]), int(ib[0] - ia[0])),
    )

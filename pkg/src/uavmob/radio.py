"""Antenna patterns, line-of-sight probability, path loss, RSRP and SINR.

Every function here is pure. Angles are degrees, powers dBm, gains dB.
Vectorised helpers take numpy arrays of cell attributes so the simulator
can evaluate one UE against all cells in a single call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

if TYPE_CHECKING:
    from .topology import CellRecord

SPEED_OF_LIGHT = 299_792_458.0
FRONT_TO_BACK_DB = 30.0
AZIMUTH_ROLLOFF_DB = 12.0


class RadioError(ValueError):
    """Raised for geometrically undefined inputs (e.g. zero distance)."""


@dataclass(frozen=True)
class Position:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        for v in (self.x, self.y, self.z):
            if not math.isfinite(v):
                raise ValueError(f"non-finite coordinate in {self!r}")
        if self.z < 0:
            raise ValueError(f"altitude must be >= 0, got {self.z}")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def distance(self, other: "Position") -> float:
        return math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))


@dataclass(frozen=True)
class AntennaConfig:
    """Sector antenna: vertical uniform linear array plus azimuth roll-off."""

    azimuth_deg: float = 0.0
    mech_tilt_deg: float = 6.0
    element_count: int = 8
    element_spacing_wavelengths: float = 0.5
    max_gain_dbi: float = 8.0
    azimuth_beamwidth_deg: float = 65.0

    def __post_init__(self):
        if int(self.element_count) != self.element_count or self.element_count < 1:
            raise ValueError("element_count must be a positive integer")
        if not self.element_spacing_wavelengths > 0:
            raise ValueError("element_spacing_wavelengths must be > 0")
        if not 0 < self.azimuth_beamwidth_deg <= 360:
            raise ValueError("azimuth_beamwidth_deg must be in (0, 360]")
        object.__setattr__(self, "azimuth_deg", self.azimuth_deg % 360.0)


@dataclass(frozen=True)
class PropagationParams:
    carrier_hz: float = 3.6e9
    tx_power_dbm: float = 30.0
    pl_exponent_los: float = 2.1
    pl_exponent_nlos: float = 3.3
    nlos_extra_loss_db: float = 10.0
    los_sigmoid_a: float = 9.6
    los_sigmoid_b: float = 0.28
    shadowing_sigma_db: float = 0.0
    # per resource element: -174 dBm/Hz + 10log10(30 kHz) + 7 dB noise figure
    noise_power_dbm: float = -122.0
    detection_threshold_dbm: float = -110.0
    # "drawn": Bernoulli LoS state per (UE, cell), redrawn every decorrelation
    # distance. "expected": dB-domain blend weighted by the LoS probability.
    los_mode: str = "expected"
    los_decorrelation_m: float = 10.0

    def __post_init__(self):
        if self.carrier_hz <= 0:
            raise ValueError("carrier_hz must be > 0")
        if self.pl_exponent_los <= 0 or self.pl_exponent_nlos <= 0:
            raise ValueError("path-loss exponents must be > 0")
        if self.shadowing_sigma_db < 0:
            raise ValueError("shadowing_sigma_db must be >= 0")
        if self.los_mode not in ("drawn", "expected"):
            raise ValueError(f"unknown los_mode {self.los_mode!r}")
        if self.los_decorrelation_m <= 0:
            raise ValueError("los_decorrelation_m must be > 0")


# --------------------------------------------------------------------------
# antenna


def vertical_pattern_db(elevation_deg, mech_tilt_deg, element_count, spacing_wl):
    """Normalised array factor of a vertical ULA steered to ``-mech_tilt``.

    Returns ``20*log10|sin(N psi/2) / (N sin(psi/2))|`` floored at
    ``-FRONT_TO_BACK_DB``; exactly 0 dB at the steering angle.
    """
    el = np.radians(np.asarray(elevation_deg, dtype=float))
    steer = np.radians(-np.asarray(mech_tilt_deg, dtype=float))
    n = np.asarray(element_count, dtype=float)
    half_psi = math.pi * np.asarray(spacing_wl, dtype=float) * (np.sin(el) - np.sin(steer))
    den = n * np.sin(half_psi)
    with np.errstate(divide="ignore", invalid="ignore"):
        af = np.where(np.abs(den) < 1e-12, 1.0, np.abs(np.sin(n * half_psi) / den))
        af_db = 20.0 * np.log10(np.maximum(af, 1e-300))
    af_db = np.where(n == 1, 0.0, af_db)
    return np.maximum(af_db, -FRONT_TO_BACK_DB)


def azimuth_pattern_db(azimuth_off_deg, beamwidth_deg):
    """Parabolic horizontal roll-off, clamped at the front-to-back floor."""
    phi = (np.asarray(azimuth_off_deg, dtype=float) + 180.0) % 360.0 - 180.0
    att = AZIMUTH_ROLLOFF_DB * (phi / np.asarray(beamwidth_deg, dtype=float)) ** 2
    return -np.minimum(att, FRONT_TO_BACK_DB)


def antenna_gain(cfg: AntennaConfig, elevation_deg, azimuth_off_deg):
    """Gain in dBi towards a direction given relative to the antenna.

    ``elevation_deg`` is measured from the horizon (positive upwards) and
    ``azimuth_off_deg`` from the antenna azimuth. Never exceeds
    ``cfg.max_gain_dbi``.
    """
    vert = vertical_pattern_db(
        elevation_deg, cfg.mech_tilt_deg, cfg.element_count, cfg.element_spacing_wavelengths
    )
    horiz = azimuth_pattern_db(azimuth_off_deg, cfg.azimuth_beamwidth_deg)
    gain = cfg.max_gain_dbi + np.maximum(vert + horiz, -FRONT_TO_BACK_DB)
    return float(gain) if np.ndim(gain) == 0 else gain


# --------------------------------------------------------------------------
# geometry and propagation


def _geometry(ue_xyz: np.ndarray, cell_xyz: np.ndarray):
    """Returns (3D distance, elevation seen from cell, bearing from cell)."""
    delta = np.asarray(ue_xyz, dtype=float) - np.asarray(cell_xyz, dtype=float)
    horiz = np.hypot(delta[..., 0], delta[..., 1])
    dist = np.sqrt(horiz**2 + delta[..., 2] ** 2)
    elevation = np.degrees(np.arctan2(delta[..., 2], horiz))
    # bearing measured clockwise from +y (north), matching antenna azimuth
    bearing = np.degrees(np.arctan2(delta[..., 0], delta[..., 1])) % 360.0
    return dist, elevation, bearing


def los_probability_from_elevation(elevation_deg, a: float, b: float):
    """Sigmoid ``1 / (1 + a exp(-b (theta - a)))`` of the elevation angle."""
    theta = np.asarray(elevation_deg, dtype=float)
    with np.errstate(over="ignore"):
        p = 1.0 / (1.0 + a * np.exp(-b * (theta - a)))
    return float(p) if np.ndim(p) == 0 else p


def los_probability(ue: Position, cell: Position, params: PropagationParams) -> float:
    if ue == cell:
        raise RadioError("LoS probability undefined for co-located UE and cell")
    _, elevation, _ = _geometry(ue.as_array(), cell.as_array())
    return los_probability_from_elevation(elevation, params.los_sigmoid_a, params.los_sigmoid_b)


def fspl_1m_db(carrier_hz: float) -> float:
    return 20.0 * math.log10(4.0 * math.pi * carrier_hz / SPEED_OF_LIGHT)


def path_loss_db(distance_m, params: PropagationParams, los):
    """Log-distance path loss referenced to free space at 1 m.

    ``los`` is a boolean (array) for a drawn state, or a probability in
    [0, 1] for the expected (dB-blended) loss.
    """
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise RadioError("path loss undefined at zero distance")
    ref = fspl_1m_db(params.carrier_hz)
    logd = np.log10(d)
    pl_los = ref + 10.0 * params.pl_exponent_los * logd
    pl_nlos = ref + 10.0 * params.pl_exponent_nlos * logd + params.nlos_extra_loss_db
    w = np.asarray(los, dtype=float)
    pl = w * pl_los + (1.0 - w) * pl_nlos
    return float(pl) if np.ndim(pl) == 0 else pl


@dataclass(frozen=True)
class CellArrays:
    """Column view of a cell list, for vectorised link budgets."""

    xyz: np.ndarray
    tx_power_dbm: np.ndarray
    azimuth_deg: np.ndarray
    mech_tilt_deg: np.ndarray
    element_count: np.ndarray
    spacing_wl: np.ndarray
    max_gain_dbi: np.ndarray
    beamwidth_deg: np.ndarray
    freq_layer: np.ndarray

    @classmethod
    def from_cells(cls, cells: Sequence["CellRecord"]) -> "CellArrays":
        return cls(
            xyz=np.array([[c.position.x, c.position.y, c.position.z] for c in cells], dtype=float).reshape(-1, 3),
            tx_power_dbm=np.array([c.tx_power_dbm for c in cells], dtype=float),
            azimuth_deg=np.array([c.antenna.azimuth_deg for c in cells], dtype=float),
            mech_tilt_deg=np.array([c.antenna.mech_tilt_deg for c in cells], dtype=float),
            element_count=np.array([c.antenna.element_count for c in cells], dtype=float),
            spacing_wl=np.array([c.antenna.element_spacing_wavelengths for c in cells], dtype=float),
            max_gain_dbi=np.array([c.antenna.max_gain_dbi for c in cells], dtype=float),
            beamwidth_deg=np.array([c.antenna.azimuth_beamwidth_deg for c in cells], dtype=float),
            freq_layer=np.array([c.freq_layer for c in cells], dtype=int),
        )


def link_geometry(arrays: CellArrays, ue_xyz):
    return _geometry(np.asarray(ue_xyz, dtype=float)[None, :], arrays.xyz)


def rsrp_vector(arrays: CellArrays, ue_xyz, params: PropagationParams, los=None, shadowing_db=None):
    """RSRP (dBm) from every cell at one UE position.

    ``los=None`` uses the expected loss; otherwise a boolean mask. Shadowing
    is a per-cell loss in dB (positive means weaker).
    """
    dist, elevation, bearing = link_geometry(arrays, ue_xyz)
    if np.any(dist <= 0):
        raise RadioError("RSRP undefined at zero distance")
    gain = arrays.max_gain_dbi + np.maximum(
        vertical_pattern_db(elevation, arrays.mech_tilt_deg, arrays.element_count, arrays.spacing_wl)
        + azimuth_pattern_db(bearing - arrays.azimuth_deg, arrays.beamwidth_deg),
        -FRONT_TO_BACK_DB,
    )
    if los is None:
        los = los_probability_from_elevation(elevation, params.los_sigmoid_a, params.los_sigmoid_b)
    pl = path_loss_db(dist, params, los)
    out = arrays.tx_power_dbm + gain - pl
    if shadowing_db is not None:
        out = out - shadowing_db
    return out


def rsrp(cell: "CellRecord", ue_pos: Position, params: PropagationParams,
         los: Optional[bool] = None, shadowing_db: float = 0.0) -> float:
    """RSRP of one cell at ``ue_pos``.

    The LoS state is drawn by the caller (``los`` True/False); ``None`` means
    the expected loss over the LoS probability.
    """
    arrays = CellArrays.from_cells([cell])
    mask = None if los is None else np.array([bool(los)])
    return float(rsrp_vector(arrays, ue_pos.as_array(), params, mask, np.array([shadowing_db]))[0])


def db_to_mw(x):
    return np.power(10.0, np.asarray(x, dtype=float) / 10.0)


def sinr_from_rsrp(rsrp_dbm, freq_layer, serving_idx: int, noise_dbm: float) -> float:
    """Serving power over co-layer interference plus noise, in dB."""
    p = db_to_mw(rsrp_dbm)
    layers = np.asarray(freq_layer)
    co = layers == layers[serving_idx]
    interference = p[co].sum() - p[serving_idx]
    return float(10.0 * np.log10(p[serving_idx] / (max(interference, 0.0) + db_to_mw(noise_dbm))))


def sinr(serving: "CellRecord", all_cells: Sequence["CellRecord"], ue_pos: Position,
         params: PropagationParams) -> float:
    """Expected-loss SINR of ``serving`` at ``ue_pos``; shadowing off."""
    try:
        idx = next(i for i, c in enumerate(all_cells) if c.ecgi == serving.ecgi)
    except StopIteration:
        raise ValueError(f"serving cell {serving.ecgi} not in cell list") from None
    arrays = CellArrays.from_cells(all_cells)
    values = rsrp_vector(arrays, ue_pos.as_array(), params)
    return sinr_from_rsrp(values, arrays.freq_layer, idx, params.noise_power_dbm)

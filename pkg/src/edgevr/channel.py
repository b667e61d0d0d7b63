"""mmWave downlink model.

Single base station at the center of a square room serving headsets over a
28 GHz carrier. Large-scale fading follows the 3GPP indoor-office model
(LOS probability and pathloss), shadowing is a fixed margin per LOS state,
and both ends use sectored beams whose alignment is drawn per slot. The
per-user rate is Shannon capacity over the allocated band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ChannelConfig

LOS = "LOS"
NLOS = "NLOS"


def db_to_linear(gain_db: float) -> float:
    return 10.0 ** (gain_db / 10.0)


def dbm_to_watts(power_dbm: float) -> float:
    return 10.0 ** (power_dbm / 10.0) * 1e-3


@dataclass(frozen=True)
class ChannelParams:
    """Link-budget constants in linear units."""

    carrier_freq_hz: float
    tx_power_w: float
    noise_psd_w_per_hz: float
    beamwidth_rad: float
    mainlobe_gain: float
    sidelobe_gain: float
    shadow_los_db: float
    shadow_nlos_db: float
    min_distance_m: float = 1.0

    def __post_init__(self):
        if self.carrier_freq_hz <= 0 or self.tx_power_w <= 0:
            raise ValueError("carrier frequency and transmit power must be > 0")
        if self.noise_psd_w_per_hz <= 0:
            raise ValueError("noise PSD must be > 0")
        if not 0 < self.beamwidth_rad < 2 * math.pi:
            raise ValueError("beamwidth must be in (0, 2*pi)")
        if self.min_distance_m <= 0:
            raise ValueError("min distance must be > 0")

    @classmethod
    def from_config(cls, cfg: ChannelConfig) -> "ChannelParams":
        return cls(
            carrier_freq_hz=cfg.carrier_freq_hz,
            tx_power_w=dbm_to_watts(cfg.tx_power_dbm),
            noise_psd_w_per_hz=dbm_to_watts(cfg.noise_psd_dbm_hz),
            beamwidth_rad=math.radians(cfg.beamwidth_deg),
            mainlobe_gain=db_to_linear(cfg.mainlobe_gain_db),
            sidelobe_gain=db_to_linear(cfg.sidelobe_gain_db),
            shadow_los_db=cfg.shadow_los_db,
            shadow_nlos_db=cfg.shadow_nlos_db,
            min_distance_m=cfg.min_distance_m,
        )


@dataclass(frozen=True)
class LinkRealization:
    """One slot's channel draw for one user."""

    distance_m: float
    los: str
    pathloss_db: float
    channel_gain: float   # 10^(-pathloss/20), includes shadowing
    antenna_gain: float   # product of tx/rx sector gains


def los_probability(distance_m: float) -> float:
    """Indoor-office LOS probability; valid for the room sizes used here (< 49 m)."""
    if distance_m <= 0:
        raise ValueError("distance must be > 0")
    if distance_m <= 5.0:
        return 1.0
    return math.exp(-(distance_m - 5.0) / 70.8)


def pathloss_db(distance_m: float, carrier_freq_hz: float, los: str,
                shadow_db: float, min_distance_m: float = 1.0) -> float:
    """Indoor-office pathloss plus a fixed shadowing margin, in dB.

    NLOS is lower-bounded by the LOS curve. Distances below ``min_distance_m``
    are clamped to it.
    """
    d = max(distance_m, min_distance_m)
    f_ghz = carrier_freq_hz / 1e9
    loss_los = 32.4 + 17.3 * math.log10(d) + 20.0 * math.log10(f_ghz)
    if los == LOS:
        loss = loss_los
    elif los == NLOS:
        loss = max(loss_los,
                   17.3 + 38.3 * math.log10(d) + 24.9 * math.log10(f_ghz))
    else:
        raise ValueError(f"los must be '{LOS}' or '{NLOS}', got {los!r}")
    return loss + shadow_db


def antenna_gain_outcomes(params: ChannelParams) -> tuple[list[float], list[float]]:
    """Possible tx*rx sector gain products and their probabilities.

    Each end points its mainlobe at the peer with probability beamwidth/2pi,
    independently, so the product takes three values.
    """
    p_main = params.beamwidth_rad / (2.0 * math.pi)
    p_side = 1.0 - p_main
    gains = [params.mainlobe_gain ** 2,
             params.mainlobe_gain * params.sidelobe_gain,
             params.sidelobe_gain ** 2]
    probs = [p_main ** 2, 2.0 * p_main * p_side, p_side ** 2]
    return gains, probs


def sample_antenna_gain(params: ChannelParams, rng: np.random.Generator) -> float:
    gains, probs = antenna_gain_outcomes(params)
    u = rng.random()
    if u < probs[0]:
        return gains[0]
    if u < probs[0] + probs[1]:
        return gains[1]
    return gains[2]


def sample_link(position_xy: tuple[float, float], bs_xy: tuple[float, float],
                params: ChannelParams, rng: np.random.Generator) -> LinkRealization:
    """Draw one slot's link state. Consumes exactly two uniforms from ``rng``."""
    d = math.hypot(position_xy[0] - bs_xy[0], position_xy[1] - bs_xy[1])
    d = max(d, params.min_distance_m)
    los = LOS if rng.random() < los_probability(d) else NLOS
    shadow = params.shadow_los_db if los == LOS else params.shadow_nlos_db
    loss = pathloss_db(d, params.carrier_freq_hz, los, shadow,
                       params.min_distance_m)
    return LinkRealization(
        distance_m=d,
        los=los,
        pathloss_db=loss,
        channel_gain=10.0 ** (-loss / 20.0),
        antenna_gain=sample_antenna_gain(params, rng),
    )


def rate_bps(bandwidth_hz: float, channel_gain: float, antenna_gain: float,
             params: ChannelParams) -> float:
    """Shannon rate of the allocated band; zero bandwidth carries zero rate."""
    if bandwidth_hz < 0:
        raise ValueError("bandwidth must be >= 0")
    if bandwidth_hz == 0.0:
        return 0.0
    snr = (params.tx_power_w * channel_gain * antenna_gain
           / (params.noise_psd_w_per_hz * bandwidth_hz))
    return bandwidth_hz * math.log2(1.0 + snr)

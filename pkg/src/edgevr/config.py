"""Run configuration: flat ``section.key = value`` text files.

Every tunable of the simulator lives here with its default. Files are plain
text, one assignment per line, ``#`` starts a comment. Unknown keys are hard
errors so typos cannot silently fall back to defaults. ``save`` always emits
the full key set in a fixed order, so save -> load -> save is byte-stable and
the SHA-256 of the canonical dump identifies a configuration.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    """Raised for unknown keys, unparsable values, or failed validation."""


@dataclass
class SimConfig:
    users: int = 5
    horizon: int = 300             # decision slots per episode
    fps: float = 100.0             # sensor refresh rate, frames/s
    slot_s: float = 0.01           # decision slot length; must equal 1/fps
    mtp_s: float = 0.02            # motion-to-photon deadline
    atw_age_s: float = 0.5         # age charged when a frame falls back to timewarp
    merge_s: float = 0.002         # on-device merge time reserved before the deadline
    compress_s: float = 0.005      # per-tile compression service time
    decompress_s: float = 0.008    # per-tile decompression service time
    queue_feature_len: int = 8     # tiles per queue exposed in the observation
    aqm_strict_compress: bool = False  # widen the compression-queue drop margin by compress_s
    seed: int = 0


@dataclass
class ChannelConfig:
    carrier_freq_hz: float = 28e9
    tx_power_dbm: float = 30.0
    noise_psd_dbm_hz: float = -147.0
    beamwidth_deg: float = 30.0
    mainlobe_gain_db: float = 10.0
    sidelobe_gain_db: float = -10.0
    shadow_los_db: float = 3.0
    shadow_nlos_db: float = 8.03
    room_side_m: float = 20.0      # square room, base station at the center
    min_distance_m: float = 1.0
    redraw_per_slot: bool = True   # False freezes each user's link for the episode


@dataclass
class WorkloadConfig:
    episodes: int = 1000
    window: int = 5                # prediction window: frames reachable from one sensor slot
    bits_per_pixel: int = 40
    screen_width: int = 2064
    screen_height: int = 2208
    compression_ratio: float = 0.016
    fg_pixel_fraction_max: float = 0.5
    fg_vertex_min: int = 1000
    fg_vertex_max: int = 40000
    bg_vertex_min: int = 10000
    bg_vertex_max: int = 20000
    fg_vertex_cycles_min: float = 100.0
    fg_vertex_cycles_max: float = 600.0
    bg_vertex_cycles_min: float = 100.0
    bg_vertex_cycles_max: float = 200.0
    fg_pixel_cycles_min: float = 5.0
    fg_pixel_cycles_max: float = 50.0
    bg_pixel_cycles_min: float = 5.0
    bg_pixel_cycles_max: float = 20.0
    smoothing: float = 0.0         # first-order smoothing of consecutive draws, 0 = i.i.d.
    mobility: str = "static"       # static | waypoint
    walk_speed_mps: float = 1.0


@dataclass
class ResourceConfig:
    total_bandwidth_hz: float = 500e6
    total_edge_gpu_hz: float = 70e9
    device_gpu_hz: float = 3e9


@dataclass
class RewardConfig:
    energy_weight: float = 0.1         # weight of device energy against age, 1/J
    cost_limit: float = 0.0            # constraint budget on infeasible frames
    drop_penalty: float = 1e-4         # reward penalty per queue-managed drop
    render_energy_coeff: float = 1e-25 # J per cycle per Hz^2 of device rendering
    decompress_energy_j: float = 10.0  # J per tile decompressed on the device


@dataclass
class NormConfig:
    load_cycles: float = 1e8   # observation divisor for rendering loads
    gpu_hz: float = 1e10       # observation divisor for GPU frequencies


@dataclass
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    resources: ResourceConfig = field(default_factory=ResourceConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    norm: NormConfig = field(default_factory=NormConfig)

    # -- derived quantities -------------------------------------------------

    @property
    def screen_pixels(self) -> int:
        return self.workload.screen_width * self.workload.screen_height

    @property
    def background_size_bits(self) -> float:
        return float(self.workload.bits_per_pixel * self.screen_pixels)

    def validate(self) -> None:
        s, w, r = self.sim, self.workload, self.resources
        checks = [
            (s.users >= 1, "sim.users: must be >= 1"),
            (s.horizon >= 1, "sim.horizon: must be >= 1"),
            (s.fps > 0, "sim.fps: must be > 0"),
            (s.slot_s > 0, "sim.slot_s: must be > 0"),
            (abs(s.slot_s * s.fps - 1.0) <= 1e-9,
             "sim.slot_s: must equal 1/sim.fps"),
            (s.mtp_s > 0, "sim.mtp_s: must be > 0"),
            (s.atw_age_s >= s.mtp_s, "sim.atw_age_s: must be >= sim.mtp_s"),
            (s.merge_s >= 0, "sim.merge_s: must be >= 0"),
            (s.compress_s >= 0, "sim.compress_s: must be >= 0"),
            (s.decompress_s >= 0, "sim.decompress_s: must be >= 0"),
            (s.queue_feature_len >= 1, "sim.queue_feature_len: must be >= 1"),
            (w.episodes >= 1, "workload.episodes: must be >= 1"),
            (w.window >= 1, "workload.window: must be >= 1"),
            (w.bits_per_pixel > 0, "workload.bits_per_pixel: must be > 0"),
            (0 <= w.fg_pixel_fraction_max <= 1,
             "workload.fg_pixel_fraction_max: must be in [0, 1]"),
            (0 <= w.smoothing < 1, "workload.smoothing: must be in [0, 1)"),
            (w.mobility in ("static", "waypoint"),
             "workload.mobility: must be 'static' or 'waypoint'"),
            (w.walk_speed_mps >= 0, "workload.walk_speed_mps: must be >= 0"),
            (0 < w.compression_ratio <= 1,
             "workload.compression_ratio: must be in (0, 1]"),
            (r.total_bandwidth_hz >= 0, "resources.total_bandwidth_hz: must be >= 0"),
            (r.total_edge_gpu_hz >= 0, "resources.total_edge_gpu_hz: must be >= 0"),
            (r.device_gpu_hz > 0, "resources.device_gpu_hz: must be > 0"),
            (self.channel.beamwidth_deg > 0 and self.channel.beamwidth_deg < 360,
             "channel.beamwidth_deg: must be in (0, 360)"),
            (self.channel.room_side_m > 0, "channel.room_side_m: must be > 0"),
            (self.channel.min_distance_m > 0, "channel.min_distance_m: must be > 0"),
            (self.reward.drop_penalty >= 0, "reward.drop_penalty: must be >= 0"),
            (self.reward.cost_limit >= 0, "reward.cost_limit: must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        for rng_name in ("fg_vertex", "bg_vertex"):
            lo = getattr(w, f"{rng_name}_min")
            hi = getattr(w, f"{rng_name}_max")
            if not 0 <= lo <= hi:
                raise ConfigError(f"workload.{rng_name}_min/max: need 0 <= min <= max")
        for rng_name in ("fg_vertex_cycles", "bg_vertex_cycles",
                         "fg_pixel_cycles", "bg_pixel_cycles"):
            lo = getattr(w, f"{rng_name}_min")
            hi = getattr(w, f"{rng_name}_max")
            if not 0 <= lo <= hi:
                raise ConfigError(f"workload.{rng_name}_min/max: need 0 <= min <= max")

    # -- serialization ------------------------------------------------------

    def to_text(self) -> str:
        lines = ["# edgevr run configuration"]
        for section_f in dataclasses.fields(self):
            section = getattr(self, section_f.name)
            lines.append("")
            for f in dataclasses.fields(section):
                lines.append(f"{section_f.name}.{f.name} = "
                             f"{_format(getattr(section, f.name))}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "RunConfig":
        cfg = cls()
        known = _key_table(cfg)
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
            section, attr, typ = known[key]
            try:
                setattr(getattr(cfg, section), attr, _parse(value, typ))
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_text(Path(path).read_text(), source=str(path))


def _key_table(cfg: RunConfig) -> dict[str, tuple[str, str, type]]:
    table: dict[str, tuple[str, str, type]] = {}
    for section_f in dataclasses.fields(cfg):
        section = getattr(cfg, section_f.name)
        for f in dataclasses.fields(section):
            table[f"{section_f.name}.{f.name}"] = (section_f.name, f.name, f.type)
    return table


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _parse(token: str, typ) -> object:
    name = typ if isinstance(typ, str) else typ.__name__
    if name == "bool":
        if token.lower() in ("true", "1", "yes"):
            return True
        if token.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected true/false, got '{token}'")
    if name == "int":
        try:
            return int(token)
        except ValueError:
            raise ValueError(f"expected integer, got '{token}'") from None
    if name == "float":
        try:
            return float(token)
        except ValueError:
            raise ValueError(f"expected number, got '{token}'") from None
    return token

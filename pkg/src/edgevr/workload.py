"""Rendering workload traces.

Each decision slot a user contributes one foreground request (the object
layer re-rendered every frame) and a window of candidate background
requests, one per reachable future frame. Complexities are drawn uniformly
from configured ranges, optionally smoothed across slots. Traces are flat
columnar text so runs are replayable and diffable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig


class TraceParseError(ValueError):
    """Malformed trace file; names the offending record and field."""


@dataclass(frozen=True)
class WorkloadParams:
    window: int                   # frames reachable from one sensor slot
    bits_per_pixel: int
    screen_pixels: int
    compression_ratio: float
    fg_pixel_fraction_max: float
    fg_vertex_range: tuple[int, int]
    bg_vertex_range: tuple[int, int]
    fg_vertex_cycles_range: tuple[float, float]
    bg_vertex_cycles_range: tuple[float, float]
    fg_pixel_cycles_range: tuple[float, float]
    bg_pixel_cycles_range: tuple[float, float]
    smoothing: float
    mobility: str
    walk_speed_mps: float
    room_side_m: float
    slot_s: float

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "WorkloadParams":
        w = cfg.workload
        return cls(
            window=w.window,
            bits_per_pixel=w.bits_per_pixel,
            screen_pixels=cfg.screen_pixels,
            compression_ratio=w.compression_ratio,
            fg_pixel_fraction_max=w.fg_pixel_fraction_max,
            fg_vertex_range=(w.fg_vertex_min, w.fg_vertex_max),
            bg_vertex_range=(w.bg_vertex_min, w.bg_vertex_max),
            fg_vertex_cycles_range=(w.fg_vertex_cycles_min, w.fg_vertex_cycles_max),
            bg_vertex_cycles_range=(w.bg_vertex_cycles_min, w.bg_vertex_cycles_max),
            fg_pixel_cycles_range=(w.fg_pixel_cycles_min, w.fg_pixel_cycles_max),
            bg_pixel_cycles_range=(w.bg_pixel_cycles_min, w.bg_pixel_cycles_max),
            smoothing=w.smoothing,
            mobility=w.mobility,
            walk_speed_mps=w.walk_speed_mps,
            room_side_m=cfg.channel.room_side_m,
            slot_s=cfg.sim.slot_s,
        )


@dataclass(frozen=True)
class TrackRecord:
    """One (episode, user, slot) row of a trace."""

    episode: int
    user: int
    slot: int
    x: float
    y: float
    n_vf: int        # foreground vertex count
    c_vf: float      # cycles per foreground vertex
    c_pf: float      # cycles per foreground pixel
    n_pf: int        # foreground pixel count; 0 means no foreground object
    bg: tuple[tuple[int, float, float], ...]   # per future frame: (n_vb, c_vb, c_pb)


@dataclass(frozen=True)
class RequestProfile:
    """Loads and sizes derived from one record, ready for the pipeline."""

    fg_load_cycles: float
    fg_size_bits: float
    bg_load_cycles: tuple[float, ...]   # indexed by frame offset 0..window-1
    bg_size_bits: float


def estimate_flops(vertex_cycles: float, vertices: float,
                   pixel_cycles: float, pixels: float) -> float:
    """Rendering cost in GPU cycles: per-vertex work plus per-pixel work."""
    if min(vertex_cycles, vertices, pixel_cycles, pixels) < 0:
        raise ValueError("workload terms must be >= 0")
    return vertex_cycles * vertices + pixel_cycles * pixels


def foreground_size_bits(n_pf: int, bits_per_pixel: int, screen_pixels: int) -> float:
    if not 0 <= n_pf <= screen_pixels:
        raise ValueError(f"foreground pixels {n_pf} outside [0, {screen_pixels}]")
    return float(bits_per_pixel * n_pf)


def background_size_bits(bits_per_pixel: int, screen_pixels: int) -> float:
    """Background tiles always carry the full visual field."""
    return float(bits_per_pixel * screen_pixels)


def profile_of(record: TrackRecord, params: WorkloadParams) -> RequestProfile:
    bg_size = background_size_bits(params.bits_per_pixel, params.screen_pixels)
    return RequestProfile(
        fg_load_cycles=estimate_flops(record.c_vf, record.n_vf,
                                      record.c_pf, record.n_pf),
        fg_size_bits=foreground_size_bits(record.n_pf, params.bits_per_pixel,
                                          params.screen_pixels),
        bg_load_cycles=tuple(
            estimate_flops(c_vb, n_vb, c_pb, params.screen_pixels)
            for n_vb, c_vb, c_pb in record.bg),
        bg_size_bits=bg_size,
    )


# ---------------------------------------------------------------------------
# generation


class _Smoothed:
    """Uniform draws with optional first-order smoothing toward the previous
    value; a convex mix keeps every draw inside the configured range."""

    def __init__(self, lo: float, hi: float, smoothing: float,
                 rng: np.random.Generator):
        self.lo, self.hi, self.s, self.rng = lo, hi, smoothing, rng
        self.prev: float | None = None

    def draw(self) -> float:
        fresh = self.rng.uniform(self.lo, self.hi)
        if self.s > 0 and self.prev is not None:
            fresh = self.s * self.prev + (1.0 - self.s) * fresh
        self.prev = fresh
        return fresh


class _Walker:
    """Random-waypoint motion inside the room; static mode stays put."""

    def __init__(self, params: WorkloadParams, rng: np.random.Generator):
        self.params, self.rng = params, rng
        side = params.room_side_m
        self.pos = np.array([rng.uniform(0, side), rng.uniform(0, side)])
        self.target = self.pos.copy()

    def step(self) -> tuple[float, float]:
        p = self.params
        if p.mobility == "waypoint":
            hop = p.walk_speed_mps * p.slot_s
            delta = self.target - self.pos
            dist = float(np.hypot(*delta))
            if dist <= hop:
                self.pos = self.target.copy()
                side = p.room_side_m
                self.target = np.array([self.rng.uniform(0, side),
                                        self.rng.uniform(0, side)])
            else:
                self.pos = self.pos + delta * (hop / dist)
        return float(self.pos[0]), float(self.pos[1])


def generate_traces(params: WorkloadParams, episodes: int, users: int,
                    horizon: int, seed: int) -> list[TrackRecord]:
    """Draw a full trace set; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    max_fg_pixels = int(math.floor(params.fg_pixel_fraction_max
                                   * params.screen_pixels))
    records: list[TrackRecord] = []
    for ep in range(episodes):
        for u in range(users):
            walker = _Walker(params, rng)
            fg_v = _Smoothed(*params.fg_vertex_range, params.smoothing, rng)
            fg_cv = _Smoothed(*params.fg_vertex_cycles_range, params.smoothing, rng)
            fg_cp = _Smoothed(*params.fg_pixel_cycles_range, params.smoothing, rng)
            fg_px = _Smoothed(0, max_fg_pixels, params.smoothing, rng)
            for k in range(horizon):
                x, y = walker.step()
                bg = tuple(
                    (int(rng.integers(params.bg_vertex_range[0],
                                      params.bg_vertex_range[1] + 1)),
                     rng.uniform(*params.bg_vertex_cycles_range),
                     rng.uniform(*params.bg_pixel_cycles_range))
                    for _ in range(params.window))
                records.append(TrackRecord(
                    episode=ep, user=u, slot=k, x=x, y=y,
                    n_vf=int(round(fg_v.draw())),
                    c_vf=fg_cv.draw(),
                    c_pf=fg_cp.draw(),
                    n_pf=int(round(fg_px.draw())),
                    bg=bg,
                ))
    return records


# ---------------------------------------------------------------------------
# trace files

_FIXED_FIELDS = ["episode", "user", "slot", "x", "y",
                 "n_vf", "c_vf", "c_pf", "n_pf"]
_INT_FIELDS = {"episode", "user", "slot", "n_vf", "n_pf"}


def _header_fields(window: int) -> list[str]:
    fields = list(_FIXED_FIELDS)
    for j in range(window):
        fields += [f"n_vb{j}", f"c_vb{j}", f"c_pb{j}"]
    return fields


def save_traces(path: str | Path, records: list[TrackRecord]) -> None:
    if not records:
        raise ValueError("refusing to write an empty trace file")
    window = len(records[0].bg)
    lines = [" ".join(_header_fields(window))]
    for r in records:
        cells = [str(r.episode), str(r.user), str(r.slot),
                 repr(r.x), repr(r.y),
                 str(r.n_vf), repr(r.c_vf), repr(r.c_pf), str(r.n_pf)]
        for n_vb, c_vb, c_pb in r.bg:
            cells += [str(n_vb), repr(c_vb), repr(c_pb)]
        lines.append(" ".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


class TraceSet:
    """Loaded trace, indexed by (episode, user, slot)."""

    def __init__(self, records: list[TrackRecord], warnings: list[str] | None = None):
        if not records:
            raise TraceParseError("trace holds no records")
        self.window = len(records[0].bg)
        self.warnings = warnings or []
        self._by_key: dict[tuple[int, int, int], TrackRecord] = {}
        episodes, users, slots = set(), set(), set()
        for r in records:
            key = (r.episode, r.user, r.slot)
            if key in self._by_key:
                raise TraceParseError(f"duplicate record for episode={r.episode} "
                                      f"user={r.user} slot={r.slot}")
            self._by_key[key] = r
            episodes.add(r.episode)
            users.add(r.user)
            slots.add(r.slot)
        self.episodes = sorted(episodes)
        self.users = max(users) + 1
        self.horizon = max(slots) + 1
        for ep in self.episodes:
            for u in range(self.users):
                for k in range(self.horizon):
                    if (ep, u, k) not in self._by_key:
                        raise TraceParseError(
                            f"missing record episode={ep} user={u} slot={k}")

    def record(self, episode: int, user: int, slot: int) -> TrackRecord:
        try:
            return self._by_key[(episode, user, slot)]
        except KeyError:
            raise KeyError(f"no trace record for episode={episode} "
                           f"user={user} slot={slot}") from None


def load_traces(path: str | Path,
                params: WorkloadParams | None = None) -> TraceSet:
    """Parse a trace file; with ``params`` given, out-of-range values are
    collected as warnings on the returned set."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise TraceParseError(f"{path}: empty file")
    header = lines[0].split()
    if header[:len(_FIXED_FIELDS)] != _FIXED_FIELDS or \
            (len(header) - len(_FIXED_FIELDS)) % 3 != 0:
        raise TraceParseError(f"{path}: unrecognized header")
    window = (len(header) - len(_FIXED_FIELDS)) // 3
    if window < 1:
        raise TraceParseError(f"{path}: header has no background columns")
    records: list[TrackRecord] = []
    for idx, line in enumerate(lines[1:]):
        if not line.strip():
            continue
        cells = line.split()
        if len(cells) != len(header):
            raise TraceParseError(f"record {idx}: expected {len(header)} "
                                  f"fields, got {len(cells)}")
        values: dict[str, float | int] = {}
        for name, cell in zip(header, cells):
            base = name.rstrip("0123456789")
            try:
                values[name] = int(cell) if (name in _INT_FIELDS
                                             or base == "n_vb") else float(cell)
            except ValueError:
                raise TraceParseError(
                    f"record {idx}: field '{name}': bad value '{cell}'") from None
        bg = tuple((values[f"n_vb{j}"], values[f"c_vb{j}"], values[f"c_pb{j}"])
                   for j in range(window))
        records.append(TrackRecord(
            episode=values["episode"], user=values["user"], slot=values["slot"],
            x=values["x"], y=values["y"], n_vf=values["n_vf"],
            c_vf=values["c_vf"], c_pf=values["c_pf"], n_pf=values["n_pf"],
            bg=bg))
    warnings = _range_warnings(records, params) if params is not None else []
    return TraceSet(records, warnings)


def _range_warnings(records: list[TrackRecord],
                    params: WorkloadParams) -> list[str]:
    out: list[str] = []
    max_fg = params.fg_pixel_fraction_max * params.screen_pixels

    def check(cond: bool, rec: TrackRecord, msg: str):
        if not cond:
            out.append(f"episode={rec.episode} user={rec.user} "
                       f"slot={rec.slot}: {msg}")

    for r in records:
        check(0 <= r.x <= params.room_side_m and 0 <= r.y <= params.room_side_m,
              r, f"position ({r.x:.2f}, {r.y:.2f}) outside the room")
        check(params.fg_vertex_range[0] <= r.n_vf <= params.fg_vertex_range[1],
              r, f"n_vf={r.n_vf} outside configured range")
        check(params.fg_vertex_cycles_range[0] <= r.c_vf
              <= params.fg_vertex_cycles_range[1],
              r, f"c_vf={r.c_vf} outside configured range")
        check(params.fg_pixel_cycles_range[0] <= r.c_pf
              <= params.fg_pixel_cycles_range[1],
              r, f"c_pf={r.c_pf} outside configured range")
        check(0 <= r.n_pf <= max_fg, r, f"n_pf={r.n_pf} outside configured range")
        for j, (n_vb, c_vb, c_pb) in enumerate(r.bg):
            check(params.bg_vertex_range[0] <= n_vb <= params.bg_vertex_range[1],
                  r, f"n_vb{j}={n_vb} outside configured range")
            check(params.bg_vertex_cycles_range[0] <= c_vb
                  <= params.bg_vertex_cycles_range[1],
                  r, f"c_vb{j}={c_vb} outside configured range")
            check(params.bg_pixel_cycles_range[0] <= c_pb
                  <= params.bg_pixel_cycles_range[1],
                  r, f"c_pb{j}={c_pb} outside configured range")
    return out

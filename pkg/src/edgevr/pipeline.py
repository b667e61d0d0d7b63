"""Per-user tile pipeline: queues, deadlines, drops, and frame assembly.

Every decision slot each user emits one foreground tile (re-rendered every
frame) and up to ``window`` background tile candidates for future frames.
Tiles flow through five FIFO single-server queues:

    render_edge -> transmit                      (foreground rendered remotely)
    render_edge -> compress -> transmit -> decompress   (background remotely)
    render_device                                 (either kind rendered locally)

and finish in a per-user pool where frames are assembled. Rendering and
transmission progress at the slot's allocated rates (piecewise constant per
slot, partial service carries across slot boundaries); compression and
decompression take fixed per-tile times. Queue management runs at slot
boundaries and evicts tiles whose remaining lifetime cannot cover the work
still ahead of them.

Timing bookkeeping is continuous within a slot window: a tile finishing one
stage mid-window immediately joins the next stage and may be served there in
the same window.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .config import RunConfig
from .workload import RequestProfile

FG = "fg"
BG = "bg"

RENDER_EDGE = "render_edge"
COMPRESS = "compress"
TRANSMIT = "transmit"
DECOMPRESS = "decompress"
RENDER_DEVICE = "render_device"

# fixed ordering used by drop counters and observations
QUEUE_ORDER = (RENDER_EDGE, COMPRESS, TRANSMIT, DECOMPRESS, RENDER_DEVICE)

POOL = "pool"
MERGED = "merged"
EXPIRED = "expired"
DROPPED = "dropped"

# absorbs the last-ulp noise of slot arithmetic in boundary comparisons;
# one picosecond, far below any modeled service time
_EDGE = 1e-12


class PipelineInvariantError(RuntimeError):
    """A structural invariant of the queue network was violated."""


@dataclass(frozen=True)
class PipelineParams:
    slot_s: float
    mtp_s: float          # motion-to-photon budget of every frame
    atw_age_s: float      # age charged when a frame falls back to timewarp
    merge_s: float        # reserved on-device merge time before the deadline
    compress_s: float
    decompress_s: float
    window: int           # frames reachable from one sensor slot
    compression_ratio: float
    aqm_strict_compress: bool = False

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "PipelineParams":
        return cls(
            slot_s=cfg.sim.slot_s,
            mtp_s=cfg.sim.mtp_s,
            atw_age_s=cfg.sim.atw_age_s,
            merge_s=cfg.sim.merge_s,
            compress_s=cfg.sim.compress_s,
            decompress_s=cfg.sim.decompress_s,
            window=cfg.workload.window,
            compression_ratio=cfg.workload.compression_ratio,
            aqm_strict_compress=cfg.sim.aqm_strict_compress,
        )


@dataclass
class Tile:
    user: int
    kind: str                  # FG | BG
    sensor_slot: int
    frame_slot: int
    load_cycles: float         # remaining rendering work
    payload_bits: float        # current logical size of the tile
    remaining_bits: float      # transmission progress
    fixed_remaining_s: float   # compress/decompress progress
    stage: str
    arrival_s: float           # arrival time into the current stage
    deadline_s: float          # absolute display deadline of the target frame
    seq: int                   # global enqueue order, breaks exact ties
    begun: bool = False        # head has received service in the current stage
    elapsed_s: float = 0.0     # time since the sensor sample was taken


@dataclass(frozen=True)
class SlotResources:
    """Service rates of one user for one slot window."""

    edge_gpu_hz: float
    transmit_bps: float
    device_gpu_hz: float
    bandwidth_hz: Optional[float] = None   # bookkeeping only


@dataclass(frozen=True)
class FrameOutcome:
    user: int
    frame_slot: int
    fg_feasible: bool
    bg_feasible: bool
    merged: bool                      # frame assembled from fresh tiles
    source_slot: Optional[int]        # newest feasible background sensor slot
    age_s: float
    fg_latency_s: Optional[float]     # motion-to-photon latency of the fg tile


@dataclass(frozen=True)
class Event:
    time_s: float
    user: int
    seq: int
    kind: str
    sensor_slot: int
    frame_slot: int
    transition: str


class _UserQueues:
    __slots__ = ("q", "depart", "pool")

    def __init__(self):
        self.q: dict[str, deque[Tile]] = {s: deque() for s in QUEUE_ORDER}
        self.depart: dict[str, float] = {s: 0.0 for s in QUEUE_ORDER}
        self.pool: list[Tile] = []


class QueueNetwork:
    """All per-user queues plus lifecycle accounting for one episode."""

    def __init__(self, users: int, params: PipelineParams):
        if users < 1:
            raise ValueError("need at least one user")
        self.params = params
        self.n_users = users
        self._users = [_UserQueues() for _ in range(users)]
        self.counts = {"enqueued": 0, "merged": 0, "expired": 0, "dropped": 0}
        self.events: Optional[list[Event]] = None
        self.clock = 0.0
        self._seq = 0
        self._last_eval: list[Optional[int]] = [None] * users

    def user(self, u: int) -> _UserQueues:
        return self._users[u]

    def enable_events(self) -> list[Event]:
        self.events = []
        return self.events

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _emit(self, time_s: float, tile: Tile, transition: str) -> None:
        if self.events is not None:
            self.events.append(Event(time_s, tile.user, tile.seq, tile.kind,
                                     tile.sensor_slot, tile.frame_slot,
                                     transition))


def background_deadline(sensor_slot: int, frame_slot: int, slot_s: float,
                        mtp_s: float, window: int) -> float:
    """Lifetime budget of a background tile rendered at ``sensor_slot`` for
    ``frame_slot``: the slot gap plus the motion-to-photon budget."""
    gap = frame_slot - sensor_slot
    if not 0 <= gap < window:
        raise ValueError(f"frame {frame_slot} unreachable from sensor slot "
                         f"{sensor_slot} with window {window}")
    return gap * slot_s + mtp_s


def _insert_foreground(q: deque[Tile], tile: Tile) -> None:
    # Foreground jumps ahead of waiting background tiles but never preempts a
    # tile already in service, and keeps FIFO order among foreground tiles.
    i = 1 if (q and q[0].begun) else 0
    while i < len(q) and q[i].kind == FG:
        i += 1
    q.insert(i, tile)


def enqueue_decisions(net: QueueNetwork, slot: int,
                      fg_on_device: Sequence[int],
                      bg_selected: Sequence[Sequence[int]],
                      bg_on_device: Sequence[Sequence[int]],
                      profiles: Sequence[RequestProfile]) -> list[Tile]:
    """Admit one slot's decided tiles at the slot boundary."""
    p = net.params
    now = slot * p.slot_s
    created: list[Tile] = []
    for u in range(net.n_users):
        uq = net.user(u)
        prof = profiles[u]
        fg_stage = RENDER_DEVICE if fg_on_device[u] else RENDER_EDGE
        fg = Tile(user=u, kind=FG, sensor_slot=slot, frame_slot=slot,
                  load_cycles=prof.fg_load_cycles,
                  payload_bits=prof.fg_size_bits,
                  remaining_bits=prof.fg_size_bits,
                  fixed_remaining_s=0.0, stage=fg_stage, arrival_s=now,
                  deadline_s=slot * p.slot_s + p.mtp_s, seq=net.next_seq())
        _insert_foreground(uq.q[fg_stage], fg)
        net._emit(now, fg, f"enqueue->{fg_stage}")
        created.append(fg)
        for j in range(p.window):
            if not bg_selected[u][j]:
                continue
            frame = slot + j
            # validates reachability of the target frame
            background_deadline(slot, frame, p.slot_s, p.mtp_s, p.window)
            bg_stage = RENDER_DEVICE if bg_on_device[u][j] else RENDER_EDGE
            bg = Tile(user=u, kind=BG, sensor_slot=slot, frame_slot=frame,
                      load_cycles=prof.bg_load_cycles[j],
                      payload_bits=prof.bg_size_bits,
                      remaining_bits=prof.bg_size_bits,
                      fixed_remaining_s=0.0, stage=bg_stage, arrival_s=now,
                      deadline_s=frame * p.slot_s + p.mtp_s,
                      seq=net.next_seq())
            uq.q[bg_stage].append(bg)
            net._emit(now, bg, f"enqueue->{bg_stage}")
            created.append(bg)
    net.counts["enqueued"] += len(created)
    return created


# ---------------------------------------------------------------------------
# slot-window service


def _drain_rate(uq: _UserQueues, stage: str, rate: float, work_attr: str,
                t0: float, t1: float) -> list[tuple[Tile, float]]:
    """Serve the head of a rate-driven queue over [t0, t1); returns
    completions in departure order. Unfinished head work carries over."""
    q = uq.q[stage]
    done: list[tuple[Tile, float]] = []
    cursor = t0
    while q:
        head = q[0]
        start = cursor if cursor >= head.arrival_s else head.arrival_s
        if start >= t1:
            break
        work = getattr(head, work_attr)
        if work <= 0.0:
            dep = start
        elif rate <= 0.0:
            break   # idles until the rate comes back
        else:
            dep = start + work / rate
        if dep <= t1:
            q.popleft()
            setattr(head, work_attr, 0.0)
            if dep + _EDGE < uq.depart[stage]:
                raise PipelineInvariantError(
                    f"clock regression in {stage}: {dep} < {uq.depart[stage]}")
            uq.depart[stage] = dep
            done.append((head, dep))
            cursor = dep
        else:
            head.begun = True
            setattr(head, work_attr, max(0.0, work - rate * (t1 - start)))
            break
    return done


def _drain_fixed(uq: _UserQueues, stage: str, t0: float,
                 t1: float) -> list[tuple[Tile, float]]:
    """Same as :func:`_drain_rate` for fixed-service-time queues."""
    q = uq.q[stage]
    done: list[tuple[Tile, float]] = []
    cursor = t0
    while q:
        head = q[0]
        start = cursor if cursor >= head.arrival_s else head.arrival_s
        if start >= t1:
            break
        dep = start + head.fixed_remaining_s
        if dep <= t1:
            q.popleft()
            head.fixed_remaining_s = 0.0
            if dep + _EDGE < uq.depart[stage]:
                raise PipelineInvariantError(
                    f"clock regression in {stage}: {dep} < {uq.depart[stage]}")
            uq.depart[stage] = dep
            done.append((head, dep))
            cursor = dep
        else:
            head.begun = True
            head.fixed_remaining_s -= t1 - start
            break
    return done


def _move(net: QueueNetwork, tile: Tile, stage: str, when: float) -> None:
    src = tile.stage
    tile.stage = stage
    tile.arrival_s = when
    tile.begun = False
    tile.elapsed_s = when - tile.sensor_slot * net.params.slot_s
    net._emit(when, tile, f"{src}->{stage}")


def _to_pool(net: QueueNetwork, uq: _UserQueues, tile: Tile,
             when: float) -> None:
    _move(net, tile, POOL, when)
    uq.pool.append(tile)


def advance(net: QueueNetwork, resources: Sequence[SlotResources],
            t0: float, t1: float) -> None:
    """Run every queue over the window [t0, t1) at the given rates.

    Queues are processed in feed order so a tile can traverse several stages
    within one window; arrivals into the transmit queue from rendering and
    compression are interleaved by arrival time.
    """
    if t1 <= t0:
        raise ValueError("window must have positive length")
    if t0 + _EDGE < net.clock:
        raise PipelineInvariantError(f"clock regression: window starts at {t0} "
                                     f"before {net.clock}")
    if len(resources) != net.n_users:
        raise ValueError("need one resource entry per user")
    p = net.params
    for u in range(net.n_users):
        uq = net.user(u)
        res = resources[u]
        to_transmit: list[Tile] = []

        for tile, dep in _drain_rate(uq, RENDER_EDGE, res.edge_gpu_hz,
                                     "load_cycles", t0, t1):
            if tile.kind == FG:
                _move(net, tile, TRANSMIT, dep)
                to_transmit.append(tile)
            else:
                tile.fixed_remaining_s = p.compress_s
                _move(net, tile, COMPRESS, dep)
                uq.q[COMPRESS].append(tile)

        for tile, dep in _drain_fixed(uq, COMPRESS, t0, t1):
            tile.payload_bits *= p.compression_ratio
            tile.remaining_bits = tile.payload_bits
            _move(net, tile, TRANSMIT, dep)
            to_transmit.append(tile)

        # merge fresh arrivals behind anything still queued; earlier windows'
        # leftovers always arrived before this window began
        to_transmit.sort(key=lambda t: (t.arrival_s, t.kind != FG, t.seq))
        uq.q[TRANSMIT].extend(to_transmit)

        for tile, dep in _drain_rate(uq, TRANSMIT, res.transmit_bps,
                                     "remaining_bits", t0, t1):
            if tile.kind == FG:
                _to_pool(net, uq, tile, dep)
            else:
                tile.fixed_remaining_s = p.decompress_s
                _move(net, tile, DECOMPRESS, dep)
                uq.q[DECOMPRESS].append(tile)

        for tile, dep in _drain_fixed(uq, DECOMPRESS, t0, t1):
            _to_pool(net, uq, tile, dep)

        for tile, dep in _drain_rate(uq, RENDER_DEVICE, res.device_gpu_hz,
                                     "load_cycles", t0, t1):
            _to_pool(net, uq, tile, dep)

    net.clock = t1


# ---------------------------------------------------------------------------
# queue management


def _aqm_threshold(params: PipelineParams, stage: str, kind: str) -> float:
    """Minimum remaining lifetime a tile needs to be worth keeping: the merge
    margin plus every fixed service stage still ahead of it."""
    m = params.merge_s
    if stage == RENDER_EDGE:
        return m if kind == FG else m + params.compress_s + params.decompress_s
    if stage == COMPRESS:
        extra = params.compress_s if params.aqm_strict_compress else 0.0
        return m + params.decompress_s + extra
    if stage == TRANSMIT:
        return m if kind == FG else m + params.decompress_s
    return m   # DECOMPRESS, RENDER_DEVICE


def apply_aqm(net: QueueNetwork, now: float) -> np.ndarray:
    """Evict tiles that can no longer meet their deadline; call at slot
    boundaries. Returns per-user drop counts indexed by ``QUEUE_ORDER``."""
    drops = np.zeros((net.n_users, len(QUEUE_ORDER)), dtype=np.int64)
    for u in range(net.n_users):
        uq = net.user(u)
        for qi, stage in enumerate(QUEUE_ORDER):
            q = uq.q[stage]
            if not q:
                continue
            kept: list[Tile] = []
            for tile in q:
                rest = tile.deadline_s - now
                if rest <= _aqm_threshold(net.params, stage, tile.kind) + _EDGE:
                    tile.stage = DROPPED
                    drops[u, qi] += 1
                    net._emit(now, tile, f"aqm[{stage}]")
                else:
                    kept.append(tile)
            if drops[u, qi]:
                q.clear()
                q.extend(kept)
    net.counts["dropped"] += int(drops.sum())
    return drops


# ---------------------------------------------------------------------------
# frame assembly


def age_metric(merged: bool, frame_slot: int, source_slot: int,
               slot_s: float, atw_age_s: float) -> float:
    """Age of the sensor information shown for a frame; timewarp fallback is
    charged the full stale-pose penalty."""
    if not merged:
        return atw_age_s
    lag = frame_slot - source_slot
    if lag < 0:
        raise ValueError("source slot cannot be later than the frame")
    return lag * slot_s


def evaluate_frame(net: QueueNetwork, user: int,
                   frame_slot: int) -> FrameOutcome:
    """Assemble one user's frame at its display deadline.

    A tile counts if it reached the pool with the merge margin still ahead of
    the deadline. The freshest feasible background source wins; the frame is
    merged only when the foreground made it too. Every pool tile for this or
    an earlier frame is consumed (used or expired).
    """
    p = net.params
    last = net._last_eval[user]
    if last is not None and frame_slot <= last:
        raise PipelineInvariantError(
            f"frame {frame_slot} of user {user} evaluated out of order "
            f"(last was {last})")
    net._last_eval[user] = frame_slot

    deadline = frame_slot * p.slot_s + p.mtp_s
    limit = deadline + _EDGE
    uq = net.user(user)
    fg_tile: Optional[Tile] = None
    fg_ok = False
    best: Optional[Tile] = None
    for tile in uq.pool:
        if tile.frame_slot != frame_slot:
            continue
        feasible = tile.arrival_s + p.merge_s <= limit
        if tile.kind == FG:
            if fg_tile is None or (feasible and not fg_ok):
                fg_tile = tile
                fg_ok = feasible
        elif feasible and (best is None or tile.sensor_slot > best.sensor_slot):
            best = tile

    bg_ok = best is not None
    merged = fg_ok and bg_ok
    if merged:
        assert fg_tile is not None and best is not None
        fg_tile.stage = MERGED
        best.stage = MERGED
        net.counts["merged"] += 2
        net._emit(deadline, fg_tile, MERGED)
        net._emit(deadline, best, MERGED)
    age = age_metric(merged, frame_slot, best.sensor_slot if merged else 0,
                     p.slot_s, p.atw_age_s)

    kept: list[Tile] = []
    for tile in uq.pool:
        if tile.frame_slot > frame_slot:
            kept.append(tile)
        elif tile.stage != MERGED:
            tile.stage = EXPIRED
            net.counts["expired"] += 1
            net._emit(deadline, tile, EXPIRED)
    uq.pool = kept

    fg_latency = None
    if fg_tile is not None:
        fg_latency = fg_tile.arrival_s - frame_slot * p.slot_s + p.merge_s
    return FrameOutcome(
        user=user, frame_slot=frame_slot, fg_feasible=fg_ok,
        bg_feasible=bg_ok, merged=merged,
        source_slot=best.sensor_slot if bg_ok else None,
        age_s=age, fg_latency_s=fg_latency)


def flush_remaining(net: QueueNetwork) -> None:
    """Expire everything still in flight; closes the per-episode tile
    accounting so enqueued == merged + expired + dropped."""
    for u in range(net.n_users):
        uq = net.user(u)
        for stage in QUEUE_ORDER:
            for tile in uq.q[stage]:
                tile.stage = EXPIRED
                net.counts["expired"] += 1
            uq.q[stage].clear()
        for tile in uq.pool:
            tile.stage = EXPIRED
            net.counts["expired"] += 1
        uq.pool = []


# ---------------------------------------------------------------------------
# per-slot device energy


def device_energy(fg_on_device: int, bg_selected: Sequence[int],
                  bg_on_device: Sequence[int], profile: RequestProfile,
                  device_gpu_hz: float, render_energy_coeff: float,
                  decompress_energy_j: float) -> float:
    """Device-side energy committed by one slot's decision: decompression of
    the tiles rendered remotely plus local rendering energy."""
    decompressed = sum(x * (1 - z) for x, z in zip(bg_selected, bg_on_device))
    local_cycles = fg_on_device * profile.fg_load_cycles
    for j, (x, z) in enumerate(zip(bg_selected, bg_on_device)):
        local_cycles += x * z * profile.bg_load_cycles[j]
    return (decompress_energy_j * decompressed
            + render_energy_coeff * local_cycles * device_gpu_hz ** 2)

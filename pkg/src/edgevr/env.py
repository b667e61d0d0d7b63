"""Decision-process interface over the tile pipeline.

One environment instance replays one trace episode at a time. Each step takes
the joint decision for the current slot (placement bits for every user's
tiles plus bandwidth and edge-GPU allocation weights), runs the pipeline over
the slot window, and settles the frame whose display deadline falls inside
that window.

Reward is the negative sum over users of frame age plus weighted device
energy, minus a small penalty per queue-managed drop. Cost counts users whose
settled frame could not be assembled from fresh tiles, which is the quantity
a constrained learner keeps below budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import islice
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelParams, LOS, LinkRealization, pathloss_db, rate_bps, sample_link
from .config import RunConfig
from .pipeline import (
    COMPRESS,
    DECOMPRESS,
    PipelineParams,
    QUEUE_ORDER,
    QueueNetwork,
    RENDER_DEVICE,
    RENDER_EDGE,
    SlotResources,
    TRANSMIT,
    advance,
    apply_aqm,
    device_energy,
    enqueue_decisions,
    evaluate_frame,
    flush_remaining,
)
from .workload import RequestProfile, TraceSet, WorkloadParams, profile_of


@dataclass(frozen=True)
class ObservationLayout:
    """Index arithmetic of the flat per-user observation blocks."""

    users: int
    window: int
    queue_feats: int   # tiles per queue exposed, zero-padded

    @property
    def per_user_dim(self) -> int:
        # link + device GPU + fg request (2) | bg requests | five queues | drops
        return 4 + 2 * self.window + 11 * self.queue_feats + 5

    @property
    def total_dim(self) -> int:
        return self.users * self.per_user_dim

    @property
    def aqm_offset(self) -> int:
        """Offset of the drop-count block inside one user's slice."""
        return 4 + 2 * self.window + 11 * self.queue_feats

    def user_slice(self, u: int) -> slice:
        d = self.per_user_dim
        return slice(u * d, (u + 1) * d)


@dataclass(frozen=True)
class Action:
    fg_on_device: np.ndarray    # (U,) 0/1, 1 renders the foreground locally
    bg_selected: np.ndarray     # (U, W) 0/1, candidate frames to prerender
    bg_on_device: np.ndarray    # (U, W) 0/1, placement of selected candidates
    bandwidth_hz: np.ndarray    # (U,) sums to the configured total
    edge_gpu_hz: np.ndarray     # (U,) sums to the configured total


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    cost: float
    done: bool
    info: dict


def compose_reward(age_sum_s: float, energy_sum_j: float, drop_count: float,
                   energy_weight: float, drop_penalty: float) -> float:
    """Negative weighted sum of frame age, device energy, and evictions."""
    return -(age_sum_s + energy_weight * energy_sum_j) \
        - drop_penalty * drop_count


def _softmax_share(weights: np.ndarray, total: float) -> np.ndarray:
    z = np.exp(weights - weights.max())
    share = total * (z / z.sum())
    # pin the sum to the total exactly; the correction is within rounding noise
    share[-1] = total - share[:-1].sum()
    if share[-1] < 0.0:
        share[-1] = 0.0
        share *= total / share.sum()
    return share


class VREnv:
    """Multi-user pipeline control environment over a fixed trace set."""

    def __init__(self, config: RunConfig, traces: TraceSet):
        config.validate()
        if traces.window != config.workload.window:
            raise ValueError(f"trace window {traces.window} does not match "
                             f"configured window {config.workload.window}")
        if traces.users < config.sim.users:
            raise ValueError(f"trace covers {traces.users} users, config "
                             f"needs {config.sim.users}")
        if traces.horizon < config.sim.horizon:
            raise ValueError(f"trace covers {traces.horizon} slots, config "
                             f"needs {config.sim.horizon}")
        self.config = config
        self.traces = traces
        self.chan = ChannelParams.from_config(config.channel)
        self.pp = PipelineParams.from_config(config)
        self.layout = ObservationLayout(
            users=config.sim.users,
            window=config.workload.window,
            queue_feats=config.sim.queue_feature_len)
        half = config.channel.room_side_m / 2.0
        self.bs_xy = (half, half)
        # best-case link: shortest LOS path with both mainlobes aligned
        ref_loss = pathloss_db(self.chan.min_distance_m,
                               self.chan.carrier_freq_hz, LOS,
                               self.chan.shadow_los_db,
                               self.chan.min_distance_m)
        self._href = 10.0 ** (-ref_loss / 20.0) * self.chan.mainlobe_gain ** 2
        self._size_norm = config.background_size_bits
        self._load_norm = config.norm.load_cycles
        self.wl = WorkloadParams.from_config(config)
        self._episode_set = set(traces.episodes)
        self.net: Optional[QueueNetwork] = None
        self._event_writer = None
        self._episode = 0
        self._slot = 0
        self._done = True
        self._rng: Optional[np.random.Generator] = None
        self._links: list[LinkRealization] = []
        self._profiles: list[RequestProfile] = []
        self._drops = np.zeros((self.layout.users, len(QUEUE_ORDER)),
                               dtype=np.int64)

    # -- session ------------------------------------------------------------

    def attach_event_writer(self, writer) -> None:
        """``writer(event)`` is called for every pipeline event; implies event
        collection on every subsequent episode."""
        self._event_writer = writer

    def reset(self, episode: int = 0, seed: int = 0) -> np.ndarray:
        if episode not in self._episode_set:
            raise ValueError(f"episode {episode} not present in the trace")
        self._episode = episode
        self._slot = 0
        self._done = False
        self._rng = np.random.default_rng(seed)
        self.net = QueueNetwork(self.layout.users, self.pp)
        if self._event_writer is not None:
            self.net.enable_events()
        self._draw_slot_state(0, fresh_episode=True)
        self._drops = apply_aqm(self.net, 0.0)   # trivially empty at t=0
        return self._observe()

    def _draw_slot_state(self, slot: int, fresh_episode: bool = False) -> None:
        redraw = self.config.channel.redraw_per_slot
        links: list[LinkRealization] = []
        profiles: list[RequestProfile] = []
        for u in range(self.layout.users):
            rec = self.traces.record(self._episode, u, slot)
            if redraw or fresh_episode:
                links.append(sample_link((rec.x, rec.y), self.bs_xy,
                                         self.chan, self._rng))
            else:
                links.append(self._links[u])
            profiles.append(profile_of(rec, self.wl))
        self._links = links
        self._profiles = profiles

    # -- actions ------------------------------------------------------------

    def decode_action(self, raw: dict) -> Action:
        """Validate a wire-format action and resolve allocation weights."""
        if not isinstance(raw, dict):
            raise ValueError("action must be an object")
        expect = {"zf", "xb", "zb", "wB", "wF"}
        got = set(raw)
        if got != expect:
            missing = sorted(expect - got)
            extra = sorted(got - expect)
            parts = []
            if missing:
                parts.append(f"missing {missing}")
            if extra:
                parts.append(f"unexpected {extra}")
            raise ValueError("bad action fields: " + ", ".join(parts))
        U = self.layout.users
        W = self.layout.window
        zf = _binary_vector("zf", raw["zf"], U)
        xb = _binary_matrix("xb", raw["xb"], U, W)
        zb = _binary_matrix("zb", raw["zb"], U, W)
        w_band = _weight_vector("wB", raw["wB"], U)
        w_gpu = _weight_vector("wF", raw["wF"], U)
        return Action(
            fg_on_device=zf, bg_selected=xb, bg_on_device=zb,
            bandwidth_hz=_softmax_share(
                w_band, self.config.resources.total_bandwidth_hz),
            edge_gpu_hz=_softmax_share(
                w_gpu, self.config.resources.total_edge_gpu_hz))

    # -- stepping -----------------------------------------------------------

    def step(self, action: Action) -> StepResult:
        if self._done or self.net is None:
            raise RuntimeError("episode finished; call reset first")
        cfg = self.config
        k = self._slot
        t0 = k * self.pp.slot_s
        t1 = (k + 1) * self.pp.slot_s

        energies = [
            device_energy(int(action.fg_on_device[u]),
                          action.bg_selected[u], action.bg_on_device[u],
                          self._profiles[u], cfg.resources.device_gpu_hz,
                          cfg.reward.render_energy_coeff,
                          cfg.reward.decompress_energy_j)
            for u in range(self.layout.users)
        ]
        enqueue_decisions(self.net, k, action.fg_on_device,
                          action.bg_selected, action.bg_on_device,
                          self._profiles)
        resources = [
            SlotResources(
                edge_gpu_hz=float(action.edge_gpu_hz[u]),
                transmit_bps=rate_bps(float(action.bandwidth_hz[u]),
                                      self._links[u].channel_gain,
                                      self._links[u].antenna_gain, self.chan),
                device_gpu_hz=cfg.resources.device_gpu_hz,
                bandwidth_hz=float(action.bandwidth_hz[u]))
            for u in range(self.layout.users)
        ]
        advance(self.net, resources, t0, t1)

        frame = self._frame_due(k)
        ages: list[Optional[float]] = [None] * self.layout.users
        feasible: list[Optional[int]] = [None] * self.layout.users
        sources: list[Optional[int]] = [None] * self.layout.users
        cost = 0.0
        age_sum = 0.0
        if frame is not None:
            for u in range(self.layout.users):
                outcome = evaluate_frame(self.net, u, frame)
                ages[u] = outcome.age_s
                feasible[u] = int(outcome.merged)
                sources[u] = outcome.source_slot
                age_sum += outcome.age_s
                cost += 1.0 - feasible[u]

        drops_penalized = self._drops
        reward = compose_reward(age_sum, sum(energies),
                                float(drops_penalized.sum()),
                                cfg.reward.energy_weight,
                                cfg.reward.drop_penalty)

        self._slot = k + 1
        done = self._slot >= cfg.sim.horizon
        if done:
            self._done = True
            flush_remaining(self.net)
            self._flush_events()
            obs = np.zeros(self.layout.total_dim)
        else:
            self._draw_slot_state(self._slot)
            self._drops = apply_aqm(self.net, self._slot * self.pp.slot_s)
            self._flush_events()
            obs = self._observe()

        info = {
            "slot": k,
            "evaluated_frame": frame,
            "age_s": ages,
            "feasible": feasible,
            "source_slot": sources,
            "energy_j": energies,
            "drops": drops_penalized.tolist(),
        }
        return StepResult(observation=obs, reward=float(reward),
                          cost=float(cost), done=done, info=info)

    def _frame_due(self, k: int) -> Optional[int]:
        """Frame whose display deadline falls in (k*slot, (k+1)*slot]."""
        q = self.pp.mtp_s / self.pp.slot_s
        r = round(q)
        if abs(q - r) < 1e-9:
            frame = k + 1 - int(r)
        else:
            frame = math.floor(k + 1 - q + 1e-9)
        return frame if frame >= 0 else None

    def _flush_events(self) -> None:
        if self._event_writer is None or self.net is None \
                or self.net.events is None:
            return
        for ev in self.net.events:
            self._event_writer(ev)
        self.net.events.clear()

    # -- observations ---------------------------------------------------------

    def _observe(self) -> np.ndarray:
        assert self.net is not None
        cfg = self.config
        lay = self.layout
        now = self._slot * self.pp.slot_s
        M = lay.queue_feats
        obs = np.zeros(lay.total_dim)
        for u in range(lay.users):
            uq = self.net.user(u)
            link = self._links[u]
            prof = self._profiles[u]
            o = u * lay.per_user_dim
            obs[o] = link.channel_gain * link.antenna_gain / self._href
            obs[o + 1] = cfg.resources.device_gpu_hz / cfg.norm.gpu_hz
            obs[o + 2] = prof.fg_load_cycles / self._load_norm
            obs[o + 3] = prof.fg_size_bits / self._size_norm
            o += 4
            for j in range(lay.window):
                obs[o] = prof.bg_load_cycles[j] / self._load_norm
                obs[o + 1] = 1.0   # background size is the full screen
                o += 2
            for tile in islice(uq.q[RENDER_EDGE], M):
                obs[o] = tile.load_cycles / self._load_norm
                obs[o + 1] = tile.payload_bits / self._size_norm
                obs[o + 2] = (tile.deadline_s - now) / self.pp.mtp_s
                o += 3
            for qi, (stage, attr) in enumerate((
                    (COMPRESS, "payload_bits"), (TRANSMIT, "remaining_bits"),
                    (DECOMPRESS, "payload_bits"))):
                o = u * lay.per_user_dim + 4 + 2 * lay.window + 3 * M + 2 * M * qi
                for tile in islice(uq.q[stage], M):
                    obs[o] = getattr(tile, attr) / self._size_norm
                    obs[o + 1] = (tile.deadline_s - now) / self.pp.mtp_s
                    o += 2
            o = u * lay.per_user_dim + 4 + 2 * lay.window + 9 * M
            for tile in islice(uq.q[RENDER_DEVICE], M):
                obs[o] = tile.load_cycles / self._load_norm
                obs[o + 1] = (tile.deadline_s - now) / self.pp.mtp_s
                o += 2
            o = u * lay.per_user_dim + lay.aqm_offset
            obs[o:o + 5] = self._drops[u]
        return obs

    # -- protocol metadata ----------------------------------------------------

    def spec_dict(self) -> dict:
        lay = self.layout
        cfg = self.config
        return {
            "dims": {
                "obs": lay.total_dim,
                "binary": lay.users * (1 + 2 * lay.window),
                "alloc": 2 * lay.users,
            },
            "users": lay.users,
            "window": lay.window,
            "queue_feats": lay.queue_feats,
            "horizon": cfg.sim.horizon,
            "slot_s": cfg.sim.slot_s,
            "mtp_s": cfg.sim.mtp_s,
            "totals": {
                "bandwidth_hz": cfg.resources.total_bandwidth_hz,
                "edge_gpu_hz": cfg.resources.total_edge_gpu_hz,
            },
            "layout": {
                "per_user": lay.per_user_dim,
                "aqm_offset": lay.aqm_offset,
                "aqm_len": 5,
            },
            "reward": {
                "energy_weight": cfg.reward.energy_weight,
                "drop_penalty": cfg.reward.drop_penalty,
                "cost_limit": cfg.reward.cost_limit,
            },
            "episodes": list(self.traces.episodes),
            "config_sha256": cfg.config_hash(),
        }


def _binary_vector(name: str, values, n: int) -> np.ndarray:
    out = np.zeros(n, dtype=np.int64)
    if not isinstance(values, (list, tuple, np.ndarray)) or len(values) != n:
        raise ValueError(f"{name} must be a sequence of {n} binaries")
    for i, v in enumerate(values):
        f = float(v)
        if f not in (0.0, 1.0):
            raise ValueError(f"{name}[{i}] must be 0 or 1, got {v!r}")
        out[i] = int(f)
    return out


def _binary_matrix(name: str, values, n: int, m: int) -> np.ndarray:
    if not isinstance(values, (list, tuple, np.ndarray)) or len(values) != n:
        raise ValueError(f"{name} must be a sequence of {n} rows")
    out = np.zeros((n, m), dtype=np.int64)
    for i, row in enumerate(values):
        out[i] = _binary_vector(f"{name}[{i}]", row, m)
    return out


def _weight_vector(name: str, values, n: int) -> np.ndarray:
    if not isinstance(values, (list, tuple, np.ndarray)) or len(values) != n:
        raise ValueError(f"{name} must be a sequence of {n} weights")
    out = np.asarray([float(v) for v in values])
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} must be finite")
    return out

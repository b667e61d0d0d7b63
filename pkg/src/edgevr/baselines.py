"""Fixed reference policies and episode evaluation.

The placement baselines differ only in where tiles render and which future
frame gets prerendered:

* ``pff``  render everything on the device, prerender the next frame
* ``plf``  render everything on the device, prerender the farthest frame
* ``meclf`` render everything at the edge, prerender the farthest frame
* ``random`` fair coin per placement bit, Dirichlet allocation weights

All of them split bandwidth and edge GPU evenly (zero weights) except
``random``. Policies are pure functions of (observation, slot, rng) so the
same callables drive the in-process environment and a remote session.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .env import VREnv

BASELINE_NAMES = ("pff", "plf", "meclf", "random")

Policy = Callable[[Sequence[float], int, np.random.Generator], dict]


def make_policy(name: str, users: int, window: int) -> Policy:
    if name not in BASELINE_NAMES:
        raise ValueError(f"unknown baseline {name!r}, expected one of "
                         f"{', '.join(BASELINE_NAMES)}")
    if name == "random":
        def random_policy(obs, slot, rng):
            return {
                "zf": rng.integers(0, 2, users).tolist(),
                "xb": rng.integers(0, 2, (users, window)).tolist(),
                "zb": rng.integers(0, 2, (users, window)).tolist(),
                "wB": np.log(rng.dirichlet(np.ones(users)) + 1e-300).tolist(),
                "wF": np.log(rng.dirichlet(np.ones(users)) + 1e-300).tolist(),
            }
        return random_policy

    on_device = name != "meclf"
    offset = min(1, window - 1) if name == "pff" else window - 1
    row = [0] * window
    row[offset] = 1
    raw = {
        "zf": [1 if on_device else 0] * users,
        "xb": [list(row) for _ in range(users)],
        "zb": [[0] * window for _ in range(users)],
        "wB": [0.0] * users,
        "wF": [0.0] * users,
    }

    def fixed_policy(obs, slot, rng):
        return raw
    return fixed_policy


@dataclass(frozen=True)
class EpisodeMetrics:
    episode: int
    mean_age_ms: float        # over settled frames
    mean_energy_j: float      # per user-slot
    mean_cost: float          # infeasible users per slot
    drops_total: int
    feasible_fraction: float


class EpisodeAccumulator:
    """Folds per-step results into episode metrics; works on raw step info
    dicts so both local and wire-driven runs share it."""

    def __init__(self, episode: int):
        self.episode = episode
        self.steps = 0
        self.users = 0
        self.reward_sum = 0.0
        self.cost_sum = 0.0
        self.age_sum = 0.0
        self.energy_sum = 0.0
        self.frames = 0
        self.feasible = 0
        self.drops = 0

    def add(self, reward: float, cost: float, info: dict) -> None:
        self.steps += 1
        self.users = len(info["energy_j"])
        self.reward_sum += reward
        self.cost_sum += cost
        self.energy_sum += sum(info["energy_j"])
        for age in info["age_s"]:
            if age is not None:
                self.age_sum += age
                self.frames += 1
        for f in info["feasible"]:
            if f:
                self.feasible += 1
        self.drops += int(np.sum(info["drops"]))

    def result(self) -> EpisodeMetrics:
        frames = max(self.frames, 1)
        return EpisodeMetrics(
            episode=self.episode,
            mean_age_ms=1e3 * self.age_sum / frames,
            mean_energy_j=self.energy_sum / max(self.users * self.steps, 1),
            mean_cost=self.cost_sum / max(self.steps, 1),
            drops_total=self.drops,
            feasible_fraction=(self.feasible / self.frames
                               if self.frames else 1.0),
        )


def episode_seeds(seed: int, episode: int) -> tuple[int, int]:
    """Decorrelated (environment, policy) seeds for one episode; fixed by
    (seed, episode) so reruns replay exactly."""
    s1, s2 = np.random.SeedSequence([seed, episode]).generate_state(2)
    return int(s1), int(s2)


def evaluate_policy(env: VREnv, name: str, episodes: Iterable[int],
                    seed: int = 0) -> list[EpisodeMetrics]:
    """Run a baseline over trace episodes in-process."""
    policy = make_policy(name, env.layout.users, env.layout.window)
    out: list[EpisodeMetrics] = []
    for ep in episodes:
        env_seed, pol_seed = episode_seeds(seed, ep)
        rng = np.random.default_rng(pol_seed)
        obs = env.reset(ep, env_seed)
        acc = EpisodeAccumulator(ep)
        done = False
        slot = 0
        while not done:
            step = env.step(env.decode_action(policy(obs, slot, rng)))
            acc.add(step.reward, step.cost, step.info)
            obs = step.observation
            done = step.done
            slot += 1
        out.append(acc.result())
    return out

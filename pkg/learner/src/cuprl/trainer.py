"""Training loop against a served environment.

Each iteration collects a fixed number of complete episodes over a pool of
lock-stepped sessions, estimates reward and cost advantages with GAE, then
runs the three update phases from :mod:`cuprl.updates`. Progress goes to a
CSV log (one row per iteration, ``# key=value`` meta lines on top, floats
via ``repr``) and periodic ``.npz`` checkpoints.

Ablations:

* ``ws``  drop the per-user queue-drop counters from the observation
* ``wr``  undo the service's drop penalty, training on the bare reward
* ``wrs`` both
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import nets, updates
from .client import SessionPool
from .gae import CONVENTIONS, cost_return, gae

ABLATIONS = ("none", "ws", "wr", "wrs")

LOG_COLUMNS = ("iteration", "return", "cost_return", "total_age_ms",
               "total_energy_j", "v_p", "drops")


@dataclass
class Hyperparams:
    iterations: int = 200
    tracks: int = 8              # concurrent episodes per iteration
    mini_epochs: int = 30        # minibatch steps per update phase
    mini_batch: int = 200
    gamma: float = 0.99
    lam: float = 0.95
    eta: float = 0.01            # dual stepsize gain
    clip: float = 0.2
    v0: float = 0.0              # initial constraint multiplier
    cost_limit: Optional[float] = None   # None: take the service's limit
    lr: float = 3e-4
    hidden: int = 256
    kl_cap: float = 0.05
    binary_bias: float = -2.0    # lean initial selections; dense random
                                 # starts burn energy and stall learning
    gae_convention: str = "standard"
    normalize_adv: bool = True
    seed: int = 0
    checkpoint_every: int = 50

    def __post_init__(self):
        if self.gae_convention not in CONVENTIONS:
            raise ValueError(f"unknown convention {self.gae_convention!r}")


class ObsFilter:
    """Selects the observation dimensions the policy gets to see."""

    def __init__(self, spec: dict, drop_aqm: bool):
        full = spec["dims"]["obs"]
        layout = spec["layout"]
        keep = np.ones(full, dtype=bool)
        if drop_aqm:
            per_user = layout["per_user"]
            off = layout["aqm_offset"]
            for base in range(0, spec["users"] * per_user, per_user):
                keep[base + off:base + off + layout["aqm_len"]] = False
        self.index = np.flatnonzero(keep)
        self.dim = int(self.index.size)

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        return obs[..., self.index]


@dataclass
class Batch:
    obs: np.ndarray       # (tracks, steps, obs_dim) filtered
    bits: np.ndarray      # (tracks, steps, n_binary)
    alloc: np.ndarray     # (tracks, steps, n_alloc)
    logp: np.ndarray      # (tracks, steps)
    rewards: np.ndarray   # (tracks, steps) training reward
    costs: np.ndarray     # (tracks, steps)
    stats: dict = field(default_factory=dict)


class Trainer:
    def __init__(self, host: str, port: int, hp: Hyperparams = None,
                 ablation: str = "none", out_dir: Optional[str] = None):
        if ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {ablation!r}")
        self.hp = hp or Hyperparams()
        self.ablation = ablation
        self.pool = SessionPool(host, port, self.hp.tracks)
        spec = self.pool.spec
        self.spec = spec
        self.users = spec["users"]
        self.window = spec["window"]
        self.horizon = spec["horizon"]
        self.episodes = list(spec["episodes"])
        self.n_binary = spec["dims"]["binary"]
        self.n_alloc = spec["dims"]["alloc"]
        self.drop_penalty = spec["reward"]["drop_penalty"]
        self.cost_limit = (spec["reward"]["cost_limit"]
                           if self.hp.cost_limit is None
                           else self.hp.cost_limit)
        self.filter = ObsFilter(spec, drop_aqm=ablation in ("ws", "wrs"))
        self.undo_drop_penalty = ablation in ("wr", "wrs")

        torch.manual_seed(self.hp.seed)
        self.policy = nets.PolicyNet(self.filter.dim, self.n_binary,
                                     self.n_alloc, self.hp.hidden)
        with torch.no_grad():
            self.policy.binary_head.bias.fill_(self.hp.binary_bias)
        self.value = nets.ValueNet(self.filter.dim, self.hp.hidden)
        self.cost_value = nets.ValueNet(self.filter.dim, self.hp.hidden)
        self.policy_optim = torch.optim.Adam(self.policy.parameters(),
                                             lr=self.hp.lr)
        self.value_optim = torch.optim.Adam(self.value.parameters(),
                                            lr=self.hp.lr)
        self.cost_optim = torch.optim.Adam(self.cost_value.parameters(),
                                           lr=self.hp.lr)
        self.v = self.hp.v0
        self.coeff = updates.projection_coeff(self.hp.gamma, self.hp.lam)
        self._gen = torch.Generator().manual_seed(self.hp.seed)
        self._batch_rng = np.random.default_rng(self.hp.seed + 1)

        self.out_dir = Path(out_dir) if out_dir else None
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        self.log_path: Optional[Path] = None
        self.rows: list[dict] = []

    # -- collection ---------------------------------------------------

    def _action_dict(self, bits: torch.Tensor, alloc: torch.Tensor) -> dict:
        u, w = self.users, self.window
        b = bits.numpy().astype(int)
        a = alloc.numpy().astype(float)
        return {
            "zf": b[:u].tolist(),
            "xb": b[u:u + u * w].reshape(u, w).tolist(),
            "zb": b[u + u * w:].reshape(u, w).tolist(),
            "wB": a[:u].tolist(),
            "wF": a[u:].tolist(),
        }

    def collect(self, iteration: int) -> Batch:
        hp = self.hp
        h, k = hp.tracks, self.horizon
        pairs = []
        for i in range(h):
            seq = np.random.SeedSequence([hp.seed, iteration, i])
            seed = int(seq.generate_state(1)[0])
            episode = self.episodes[(iteration * h + i) % len(self.episodes)]
            pairs.append((episode, seed))
        obs = np.asarray(self.pool.reset(pairs), dtype=np.float64)
        obs = self.filter(obs)

        batch = Batch(
            obs=np.empty((h, k, self.filter.dim)),
            bits=np.empty((h, k, self.n_binary)),
            alloc=np.empty((h, k, self.n_alloc)),
            logp=np.empty((h, k)),
            rewards=np.empty((h, k)),
            costs=np.empty((h, k)),
        )
        raw_return = np.zeros(h)
        age_ms = np.zeros(h)
        energy_j = np.zeros(h)
        drops = np.zeros(h)

        for step in range(k):
            t_obs = torch.as_tensor(obs, dtype=torch.float32)
            with torch.no_grad():
                logits, mean, log_std = self.policy(t_obs)
                bits, alloc = nets.sample(logits, mean, log_std, self._gen)
                logp = nets.log_prob(logits, mean, log_std, bits, alloc)
            actions = [self._action_dict(bits[i], alloc[i])
                       for i in range(h)]
            replies = self.pool.step(actions)

            batch.obs[:, step] = obs
            batch.bits[:, step] = bits.numpy()
            batch.alloc[:, step] = alloc.numpy()
            batch.logp[:, step] = logp.numpy()
            nxt = np.empty_like(obs)
            for i, reply in enumerate(replies):
                info = reply["info"]
                n_drop = float(np.sum(info["drops"]))
                reward = reply["reward"]
                raw_return[i] += reward
                if self.undo_drop_penalty:
                    reward += self.drop_penalty * n_drop
                batch.rewards[i, step] = reward
                batch.costs[i, step] = reply["cost"]
                drops[i] += n_drop
                age_ms[i] += 1e3 * sum(a for a in info["age_s"]
                                       if a is not None)
                energy_j[i] += float(np.sum(info["energy_j"]))
                if reply["done"] != (step == k - 1):
                    raise RuntimeError("episode length disagrees with spec")
                nxt[i] = self.filter(np.asarray(reply["obs"],
                                                dtype=np.float64))
            obs = nxt

        for name, arr in (("obs", batch.obs), ("logp", batch.logp),
                          ("rewards", batch.rewards), ("costs", batch.costs)):
            if not np.all(np.isfinite(arr)):
                raise RuntimeError(f"non-finite {name} in iteration "
                                   f"{iteration}")
        batch.stats = {
            "return": float(raw_return.mean()),
            "total_age_ms": float(age_ms.mean()),
            "total_energy_j": float(energy_j.mean()),
            "drops": float(drops.mean()),
        }
        return batch

    # -- update -------------------------------------------------------

    def update(self, batch: Batch) -> dict:
        hp = self.hp
        h, k = batch.rewards.shape
        flat_obs = torch.as_tensor(batch.obs.reshape(h * k, -1),
                                   dtype=torch.float32)
        with torch.no_grad():
            values = self.value(flat_obs).numpy().reshape(h, k)
            cost_values = self.cost_value(flat_obs).numpy().reshape(h, k)

        adv = np.stack([gae(batch.rewards[i], values[i], hp.gamma, hp.lam,
                            0.0, hp.gae_convention) for i in range(h)])
        cadv = np.stack([gae(batch.costs[i], cost_values[i], hp.gamma,
                             hp.lam, 0.0, hp.gae_convention)
                         for i in range(h)])
        v_targets = adv + values
        c_targets = cadv + cost_values
        jc = float(np.mean([cost_return(batch.costs[i], hp.gamma)
                            for i in range(h)]))

        flat = adv.reshape(-1)
        if hp.normalize_adv:
            flat = updates.normalize(flat)
        t_adv = torch.as_tensor(flat, dtype=torch.float32)
        t_cadv = torch.as_tensor(cadv.reshape(-1), dtype=torch.float32)
        t_bits = torch.as_tensor(batch.bits.reshape(h * k, -1),
                                 dtype=torch.float32)
        t_alloc = torch.as_tensor(batch.alloc.reshape(h * k, -1),
                                  dtype=torch.float32)
        t_logp = torch.as_tensor(batch.logp.reshape(-1),
                                 dtype=torch.float32)

        batcher = updates.Minibatcher(h * k, hp.mini_batch, self._batch_rng)
        steps, kl = updates.improve_policy(
            self.policy, self.policy_optim, flat_obs, t_bits, t_alloc,
            t_logp, t_adv, hp.clip, hp.mini_epochs, batcher, hp.kl_cap)

        self.v = updates.stepsize_update(self.v, hp.eta, jc,
                                         self.cost_limit)

        updates.project_policy(
            self.policy, self.policy_optim, flat_obs, t_bits, t_alloc,
            t_logp, t_cadv, self.v, self.coeff, hp.mini_epochs, batcher)

        v_loss = updates.fit_values(
            self.value, self.value_optim, flat_obs,
            torch.as_tensor(v_targets.reshape(-1), dtype=torch.float32),
            hp.mini_epochs, batcher)
        c_loss = updates.fit_values(
            self.cost_value, self.cost_optim, flat_obs,
            torch.as_tensor(c_targets.reshape(-1), dtype=torch.float32),
            hp.mini_epochs, batcher)

        return {"cost_return": jc, "v_p": self.v, "improve_steps": steps,
                "kl": kl, "value_loss": v_loss, "cost_value_loss": c_loss}

    # -- logging and checkpoints ---------------------------------------

    def _open_log(self) -> None:
        if not self.out_dir:
            return
        self.log_path = self.out_dir / "training.csv"
        meta = {
            "config_sha256": self.spec.get("config_sha256", "unknown"),
            "ablation": self.ablation,
            "seed": self.hp.seed,
            "tracks": self.hp.tracks,
            "iterations": self.hp.iterations,
            "gae_convention": self.hp.gae_convention,
        }
        lines = [f"# {key}={value}" for key, value in meta.items()]
        lines.append(",".join(LOG_COLUMNS))
        self.log_path.write_text("\n".join(lines) + "\n")

    def _append_row(self, row: dict) -> None:
        self.rows.append(row)
        if not self.log_path:
            return
        rendered = [str(row["iteration"])]
        rendered += [repr(float(row[c])) for c in LOG_COLUMNS[1:]]
        with self.log_path.open("a") as handle:
            handle.write(",".join(rendered) + "\n")

    def save_checkpoint(self, iteration: int) -> Path:
        path = self.out_dir / f"ckpt_{iteration:06d}.npz"
        arrays = {}
        for prefix, module in (("policy", self.policy),
                               ("value", self.value),
                               ("cost_value", self.cost_value)):
            for name, tensor in module.state_dict().items():
                arrays[f"{prefix}/{name}"] = tensor.numpy()
        np.savez(path, iteration=iteration, v=self.v,
                 ablation=self.ablation, obs_dim=self.filter.dim,
                 **arrays)
        return path

    def load_checkpoint(self, path) -> int:
        data = np.load(path)
        for prefix, module in (("policy", self.policy),
                               ("value", self.value),
                               ("cost_value", self.cost_value)):
            state = {key.split("/", 1)[1]: torch.as_tensor(data[key])
                     for key in data.files if key.startswith(prefix + "/")}
            module.load_state_dict(state)
        self.v = float(data["v"])
        return int(data["iteration"])

    # -- main loop ------------------------------------------------------

    def train(self, progress: bool = False) -> list[dict]:
        self._open_log()
        for p in range(self.hp.iterations):
            batch = self.collect(p)
            metrics = self.update(batch)
            row = {"iteration": p, **batch.stats,
                   "cost_return": metrics["cost_return"],
                   "v_p": metrics["v_p"], }
            for column in LOG_COLUMNS[1:]:
                if not np.isfinite(row[column]):
                    raise RuntimeError(f"non-finite {column} in iteration "
                                       f"{p}")
            self._append_row(row)
            if self.out_dir and self.hp.checkpoint_every > 0 and (
                    (p + 1) % self.hp.checkpoint_every == 0
                    or p == self.hp.iterations - 1):
                self.save_checkpoint(p)
            if progress and (p % 10 == 0 or p == self.hp.iterations - 1):
                print(f"iter {p:4d}  return={row['return']:.1f}  "
                      f"jc={row['cost_return']:.2f}  v={row['v_p']:.3f}  "
                      f"drops={row['drops']:.0f}")
        return self.rows

    def close(self) -> None:
        self.pool.close()


def train(host: str, port: int, hp: Hyperparams = None,
          ablation: str = "none", out_dir: Optional[str] = None,
          progress: bool = False) -> list[dict]:
    trainer = Trainer(host, port, hp, ablation, out_dir)
    try:
        return trainer.train(progress=progress)
    finally:
        trainer.close()


def read_training_log(path) -> tuple[dict, list[dict]]:
    """Parse a training CSV back into (meta, rows)."""
    meta: dict = {}
    rows: list[dict] = []
    header: Optional[list[str]] = None
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
            continue
        if header is None:
            header = line.split(",")
            if tuple(header) != LOG_COLUMNS:
                raise ValueError(f"unexpected header {header}")
            continue
        parts = line.split(",")
        row = {"iteration": int(parts[0])}
        row.update({c: float(x) for c, x in zip(LOG_COLUMNS[1:], parts[1:])})
        rows.append(row)
    if header is None:
        raise ValueError("no header line found")
    return meta, rows


def hyperparams_to_json(hp: Hyperparams) -> str:
    return json.dumps(asdict(hp), indent=1, sort_keys=True)

"""Policy and value update steps.

One training iteration applies, in order:

1. clipped-surrogate reward ascent over a fixed number of minibatches,
   aborted early if the policy drifts too far in KL from the behaviour
   policy,
2. the dual stepsize update ``v <- max(v + eta * (jc - limit), 0)``,
3. a projection phase that descends KL to the post-ascent policy plus the
   multiplier-weighted cost surrogate, and
4. least-squares fits of both critics to precomputed targets.

The projection's cost term carries the factor ``(1 - gamma*lam)/(1 - gamma)``
that converts an advantage average back to a return gradient scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import nets


def clipped_surrogate(ratio: torch.Tensor, adv: torch.Tensor,
                      clip: float) -> torch.Tensor:
    """Mean of min(ratio * adv, clamp(ratio) * adv); ascend to improve."""
    clipped = torch.clamp(ratio, 1.0 - clip, 1.0 + clip)
    return torch.minimum(ratio * adv, clipped * adv).mean()


def stepsize_update(v: float, eta: float, jc: float, limit: float) -> float:
    """Projected dual ascent on the discounted-cost constraint."""
    return max(v + eta * (jc - limit), 0.0)


def projection_coeff(gamma: float, lam: float) -> float:
    return (1.0 - gamma * lam) / (1.0 - gamma)


def normalize(adv: np.ndarray) -> np.ndarray:
    """Shift to zero mean, unit scale; a degenerate batch stays centred."""
    std = adv.std()
    if std < 1e-8:
        return adv - adv.mean()
    return (adv - adv.mean()) / std


@dataclass
class Minibatcher:
    """Uniform minibatch index source over a flat sample pool."""

    size: int
    batch: int
    rng: np.random.Generator

    def __post_init__(self):
        if self.size <= 0 or self.batch <= 0:
            raise ValueError("pool and batch sizes must be positive")

    def draw(self) -> np.ndarray:
        if self.size <= self.batch:
            return self.rng.permutation(self.size)
        return self.rng.choice(self.size, self.batch, replace=False)


def improve_policy(policy: nets.PolicyNet, optim: torch.optim.Optimizer,
                   obs: torch.Tensor, bits: torch.Tensor,
                   alloc: torch.Tensor, logp_old: torch.Tensor,
                   adv: torch.Tensor, clip: float, steps: int,
                   batcher: Minibatcher, kl_cap: float) -> tuple[int, float]:
    """Ascend the clipped surrogate; returns (steps taken, final KL).

    ``logp_old`` are the behaviour log-probabilities from collection. The
    loop stops once the full-batch KL to the behaviour policy exceeds
    ``kl_cap``.
    """
    with torch.no_grad():
        ref = tuple(t.clone() for t in policy(obs))
    done = 0
    kl_val = 0.0
    for _ in range(steps):
        idx = torch.as_tensor(batcher.draw())
        logits, mean, log_std = policy(obs[idx])
        logp = nets.log_prob(logits, mean, log_std, bits[idx], alloc[idx])
        ratio = torch.exp(logp - logp_old[idx])
        loss = -clipped_surrogate(ratio, adv[idx], clip)
        optim.zero_grad()
        loss.backward()
        optim.step()
        done += 1
        with torch.no_grad():
            cur = policy(obs)
            kl_val = float(nets.kl_divergence(*ref, *cur).mean())
        if kl_val > kl_cap:
            break
    return done, kl_val


def project_policy(policy: nets.PolicyNet, optim: torch.optim.Optimizer,
                   obs: torch.Tensor, bits: torch.Tensor,
                   alloc: torch.Tensor, logp_old: torch.Tensor,
                   cost_adv: torch.Tensor, v: float, coeff: float,
                   steps: int, batcher: Minibatcher) -> float:
    """Descend KL(post-ascent || current) + v * coeff * ratio * cost_adv."""
    with torch.no_grad():
        anchor = tuple(t.clone() for t in policy(obs))
    last = 0.0
    for _ in range(steps):
        idx = torch.as_tensor(batcher.draw())
        ref = tuple(t[idx] for t in anchor)
        logits, mean, log_std = policy(obs[idx])
        kl = nets.kl_divergence(*ref, logits, mean, log_std).mean()
        logp = nets.log_prob(logits, mean, log_std, bits[idx], alloc[idx])
        ratio = torch.exp(logp - logp_old[idx])
        penalty = (ratio * cost_adv[idx]).mean()
        loss = kl + v * coeff * penalty
        optim.zero_grad()
        loss.backward()
        optim.step()
        last = float(loss.detach())
    return last


def fit_values(value: nets.ValueNet, optim: torch.optim.Optimizer,
               obs: torch.Tensor, targets: torch.Tensor, steps: int,
               batcher: Minibatcher) -> float:
    """Minibatch least squares against fixed targets.

    Fitting happens in the critic's normalised output space; the returned
    last loss is in raw units for logging.
    """
    value.rescale(targets)
    z_targets = value.normalize_targets(targets)
    last = 0.0
    for _ in range(steps):
        idx = torch.as_tensor(batcher.draw())
        loss = torch.mean((value.normalized(obs[idx]) - z_targets[idx]) ** 2)
        optim.zero_grad()
        loss.backward()
        optim.step()
        last = float(loss.detach()) * float(value.out_std) ** 2
    return last

"""Policy and value networks.

The action space is a block of independent Bernoulli placement bits
followed by a block of unconstrained allocation weights. The policy head
emits logits for the bits and a diagonal Gaussian (state-dependent mean,
free log-scale) for the weights; log-probabilities are taken in that
unconstrained space, before the service's softmax decode. Hidden layers
are tanh so the surrogate stays smooth under small parameter steps.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

_LOG_2PI = math.log(2.0 * math.pi)


def _trunk(in_dim: int, hidden: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(in_dim, hidden), nn.Tanh(),
        nn.Linear(hidden, hidden), nn.Tanh(),
    )


class PolicyNet(nn.Module):
    def __init__(self, obs_dim: int, n_binary: int, n_alloc: int,
                 hidden: int = 256):
        super().__init__()
        self.obs_dim = obs_dim
        self.n_binary = n_binary
        self.n_alloc = n_alloc
        self.trunk = _trunk(obs_dim, hidden)
        self.binary_head = nn.Linear(hidden, n_binary)
        self.alloc_head = nn.Linear(hidden, n_alloc)
        self.alloc_log_std = nn.Parameter(torch.zeros(n_alloc))

    def forward(self, obs: torch.Tensor):
        """Distribution parameters ``(logits, mean, log_std)`` for ``obs``."""
        h = self.trunk(obs)
        logits = self.binary_head(h)
        mean = self.alloc_head(h)
        log_std = self.alloc_log_std.expand_as(mean)
        return logits, mean, log_std


class ValueNet(nn.Module):
    """Critic with an internal output normaliser.

    The head is trained against z-scored targets; predictions are mapped
    back through the stored statistics. When the statistics move, the head
    weights are rescaled so already-learned predictions are preserved and
    only the conditioning of the fit changes. Value targets here sit a few
    orders of magnitude away from unit scale, which a fixed-rate optimiser
    on a raw head never catches up with.
    """

    def __init__(self, obs_dim: int, hidden: int = 256):
        super().__init__()
        self.trunk = _trunk(obs_dim, hidden)
        self.head = nn.Linear(hidden, 1)
        self.register_buffer("out_mean", torch.zeros(()))
        self.register_buffer("out_std", torch.ones(()))

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        return (self.head(self.trunk(obs)).squeeze(-1) * self.out_std
                + self.out_mean)

    def normalized(self, obs: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk(obs)).squeeze(-1)

    def normalize_targets(self, targets: torch.Tensor) -> torch.Tensor:
        return (targets - self.out_mean) / self.out_std

    @torch.no_grad()
    def rescale(self, targets: torch.Tensor) -> None:
        mean = targets.mean()
        std = torch.clamp(targets.std(), min=1e-6)
        self.head.weight.mul_(self.out_std / std)
        self.head.bias.mul_(self.out_std / std)
        self.head.bias.add_((self.out_mean - mean) / std)
        self.out_mean.copy_(mean)
        self.out_std.copy_(std)


def log_prob(logits: torch.Tensor, mean: torch.Tensor,
             log_std: torch.Tensor, bits: torch.Tensor,
             alloc: torch.Tensor) -> torch.Tensor:
    """Joint log-density of one action under the factored policy."""
    bit_lp = -F.binary_cross_entropy_with_logits(logits, bits,
                                                 reduction="none").sum(-1)
    z = (alloc - mean) * torch.exp(-log_std)
    alloc_lp = (-0.5 * z * z - log_std - 0.5 * _LOG_2PI).sum(-1)
    return bit_lp + alloc_lp


def sample(logits: torch.Tensor, mean: torch.Tensor, log_std: torch.Tensor,
           generator: torch.Generator | None = None):
    """Draw ``(bits, alloc)`` from the factored policy."""
    probs = torch.sigmoid(logits)
    bits = torch.bernoulli(probs, generator=generator)
    noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
    alloc = mean + torch.exp(log_std) * noise
    return bits, alloc


def kl_divergence(p_logits: torch.Tensor, p_mean: torch.Tensor,
                  p_log_std: torch.Tensor, q_logits: torch.Tensor,
                  q_mean: torch.Tensor,
                  q_log_std: torch.Tensor) -> torch.Tensor:
    """Closed-form KL(p || q); both factors sum over their block."""
    p = torch.sigmoid(p_logits)
    kl_bits = (p * (F.logsigmoid(p_logits) - F.logsigmoid(q_logits))
               + (1.0 - p) * (F.logsigmoid(-p_logits)
                              - F.logsigmoid(-q_logits))).sum(-1)
    var_ratio = torch.exp(2.0 * (p_log_std - q_log_std))
    mean_term = (p_mean - q_mean) ** 2 * torch.exp(-2.0 * q_log_std)
    kl_alloc = (q_log_std - p_log_std
                + 0.5 * (var_ratio + mean_term) - 0.5).sum(-1)
    return kl_bits + kl_alloc

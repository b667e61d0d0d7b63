"""Discounted returns and generalised advantage estimation.

Two temporal-difference index conventions are supported. ``standard`` is
the usual one-step residual

    d[t] = r[t] + gamma * V[t+1] - V[t]

with a caller-supplied bootstrap for V[K]. ``literal`` keeps the shifted
indexing some derivations write down,

    d[t] = r[t] + gamma * V[t] - V[t-1],      V[-1] := V[0]

so the first residual reduces to r[0] - (1 - gamma) * V[0]. Both share the
same exponentially weighted sum A[t] = sum_j (gamma*lam)^(j-t) d[t+j].
"""

from __future__ import annotations

import numpy as np

CONVENTIONS = ("standard", "literal")


def td_residuals(rewards: np.ndarray, values: np.ndarray, gamma: float,
                 terminal_value: float = 0.0,
                 convention: str = "standard") -> np.ndarray:
    """One-step residuals d[t] for a single trajectory.

    ``rewards`` and ``values`` must have the same length K, ``values[t]``
    being the critic at the state the t-th reward was earned from.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape or rewards.ndim != 1:
        raise ValueError("rewards and values must be equal-length 1-d arrays")
    if convention == "standard":
        nxt = np.append(values[1:], terminal_value)
        return rewards + gamma * nxt - values
    if convention == "literal":
        prev = np.concatenate(([values[0]], values[:-1]))
        return rewards + gamma * values - prev
    raise ValueError(f"unknown convention {convention!r}")


def gae(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float,
        terminal_value: float = 0.0,
        convention: str = "standard") -> np.ndarray:
    """Advantage estimates for one trajectory, backward recursion."""
    delta = td_residuals(rewards, values, gamma, terminal_value, convention)
    adv = np.empty_like(delta)
    acc = 0.0
    for t in range(len(delta) - 1, -1, -1):
        acc = delta[t] + gamma * lam * acc
        adv[t] = acc
    return adv


def cost_return(costs: np.ndarray, gamma: float) -> float:
    """Discounted sum sum_k gamma^k c[k] of a per-step cost sequence."""
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 1:
        raise ValueError("costs must be a 1-d array")
    if costs.size == 0:
        return 0.0
    return float(np.polynomial.polynomial.polyval(gamma, costs))

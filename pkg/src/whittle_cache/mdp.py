"""Per-content controlled birth-death MDP.

A content's request queue grows with Poisson arrivals (rate lambda) and, while
the content is cached (action 1), drains with exponential deliveries at rate
nu * s (one exponential clock per outstanding request). Decisions happen at
the embedded chain's jump epochs: conditioned on a jump, the queue moves up
with probability lambda / (lambda + nu*s*a) and down otherwise. The queue is
capped at s_max; an arrival at the cap is dropped, which the embedded chain
models as a self-loop.

The per-epoch stage cost is s - w*(1 - a): holding cost for the queue length,
minus the passivity subsidy w when the content is not cached.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PASSIVE, ACTIVE = 0, 1


@dataclass(frozen=True)
class PerContentParams:
    """Parameters of one content's queue MDP.

    lam    -- request arrival rate (> 0), requests per unit time
    nu     -- per-request delivery rate (> 0); a cached queue of length s
              drains at total rate nu * s
    s_max  -- queue cap (>= 1); arrivals at the cap are dropped
    alpha  -- discount factor in (0, 1) for the discounted formulation
    """

    lam: float
    nu: float
    s_max: int
    alpha: float = 0.98

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"arrival rate must be positive, got {self.lam}")
        if not self.nu > 0:
            raise ValueError(f"delivery rate must be positive, got {self.nu}")
        if not (isinstance(self.s_max, (int, np.integer)) and self.s_max >= 1):
            raise ValueError(f"s_max must be a positive integer, got {self.s_max}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"discount factor must lie in (0,1), got {self.alpha}")

    @property
    def n_states(self) -> int:
        return self.s_max + 1

    def states(self) -> np.ndarray:
        return np.arange(self.n_states)


@dataclass(frozen=True)
class Transition:
    """One sampled jump of the embedded chain."""

    from_state: int
    action: int
    to_state: int
    stage_cost: float


def _check_state(params: PerContentParams, s: int) -> None:
    if not 0 <= s <= params.s_max:
        raise ValueError(f"state {s} outside [0, {params.s_max}]")


def up_probability(params: PerContentParams, s: int, a: int) -> float:
    """Probability that the next jump moves the queue from s to s+1.

    Equals lam / (lam + nu*s*a); at the cap it is 0 because the arrival is
    dropped (the complementary mass there is a self-loop for the portion an
    arrival would have taken, plus the usual down-move when serving).
    """
    _check_state(params, s)
    if a not in (PASSIVE, ACTIVE):
        raise ValueError(f"action must be 0 or 1, got {a}")
    if s == params.s_max:
        return 0.0
    return params.lam / (params.lam + params.nu * s * a)


def down_probability(params: PerContentParams, s: int, a: int) -> float:
    """Probability that the next jump moves the queue from s to s-1."""
    _check_state(params, s)
    if a not in (PASSIVE, ACTIVE):
        raise ValueError(f"action must be 0 or 1, got {a}")
    d = params.nu * s * a
    return d / (params.lam + d)


def self_probability(params: PerContentParams, s: int, a: int) -> float:
    """Self-loop mass; nonzero only at the cap, where arrivals are dropped."""
    return 1.0 - up_probability(params, s, a) - down_probability(params, s, a)


def stage_cost(s: int, a: int, w: float) -> float:
    """Per-epoch cost: queue holding cost minus the passivity subsidy."""
    return s - w * (1 - a)


def transition_matrix(params: PerContentParams, policy: np.ndarray) -> np.ndarray:
    """Embedded-chain transition matrix under a per-state action vector."""
    policy = np.asarray(policy)
    if policy.shape != (params.n_states,):
        raise ValueError(
            f"policy must have one action per state ({params.n_states}), "
            f"got shape {policy.shape}"
        )
    n = params.n_states
    P = np.zeros((n, n))
    for s in range(n):
        a = int(policy[s])
        up = up_probability(params, s, a)
        down = down_probability(params, s, a)
        if s + 1 < n:
            P[s, s + 1] = up
        if s - 1 >= 0:
            P[s, s - 1] = down
        P[s, s] = 1.0 - up - down
    return P


def jump_from_uniform(params: PerContentParams, s: int, a: int, u: float) -> int:
    """Next state from one uniform draw: up on [0, p_up), down on [p_up, p_up+p_down).

    Single inversion point shared by every sampler in the package, so runs
    that pre-draw their uniforms reproduce runs that draw lazily.
    """
    _check_state(params, s)
    up = up_probability(params, s, a)
    if u < up:
        return s + 1
    if u < up + down_probability(params, s, a):
        return s - 1
    return s


def sample_transition(
    params: PerContentParams, s: int, a: int, rng: np.random.Generator, w: float = 0.0
) -> Transition:
    """Sample one embedded-chain jump from state s under action a.

    Deterministic given the generator state; the caller owns the stream.
    """
    to = jump_from_uniform(params, s, a, rng.random())
    return Transition(from_state=s, action=a, to_state=to, stage_cost=stage_cost(s, a, w))


def content_rng(master_seed: int, content_id: int) -> np.random.Generator:
    """Independent per-content stream derived from (master seed, content id)."""
    return np.random.default_rng(np.random.SeedSequence((master_seed, content_id)))

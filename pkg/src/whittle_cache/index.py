"""Exact Whittle-index machinery for the per-content queue MDP.

Two independent routes to the index live here:

* a closed form built from the stationary distributions of threshold
  policies on the embedded jump chain (`whittle_index_closed_form`,
  `whittle_table`), and
* dynamic-programming oracles (`discounted_value_iteration`,
  `relative_value_iteration`, `indifference_index_oracle`, `passive_set`)
  that locate the subsidy at which the greedy action flips from active to
  passive.

The two routes agree wherever the threshold-R and threshold-(R-1) policies
are both average-cost optimal at their crossing subsidy — in particular at
every state of an instance whose whole table is certified indexable. On
truncated instances the optimal threshold can jump past intermediate states
(the cap is absorbing under the passive action, so "give up and camp at the
cap" competes with serving); at states skipped by such a jump the closed
form reports the crossing of two never-optimal policies while the DP greedy
flips elsewhere, and the `indexable` certificate on the table is the signal
that this regime has been entered.

A threshold policy with threshold R keeps the content out of the cache at
queue lengths s <= R (so the queue can only grow there) and caches it for
s > R. Under that policy states below R are transient and the chain has a
product-form stationary distribution obtained from the cut balance between
adjacent states. Threshold -1 means "always active"; because an empty queue
drains at rate nu*s*a = 0 regardless of the action, its embedded chain
coincides with the threshold-0 chain, and consequently the index of state 0
is exactly 0: both actions have identical dynamics at s = 0 and differ only
by the subsidy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import BracketNotFound, DegenerateDenominator, MaxIterationsExceeded
from .mdp import (
    PerContentParams,
    down_probability,
    stage_cost,
    up_probability,
)

DEFAULT_ITERATION_CAP = 10**6


@dataclass(frozen=True)
class StationaryDist:
    """Embedded-chain stationary distribution of a threshold policy."""

    threshold: int
    probs: np.ndarray

    @property
    def mean_queue_length(self) -> float:
        return float(np.arange(len(self.probs)) @ self.probs)

    def passive_mass(self) -> float:
        """Stationary probability of taking the passive action (s <= R)."""
        upper = self.threshold + 1  # empty slice for threshold -1
        return float(self.probs[:upper].sum()) if upper > 0 else 0.0


@dataclass(frozen=True)
class WhittleTable:
    """Closed-form index for every threshold, plus the monotonicity certificate."""

    params: PerContentParams
    indices: np.ndarray
    indexable: bool


@dataclass(frozen=True)
class ValueFunctions:
    """Solution of a per-content dynamic program.

    j     -- optimal value per state (discounted cost-to-go, or bias for the
             average-cost solver, normalized so j[0] = 0)
    q     -- state-action values consistent with j
    gain  -- average cost per epoch (average-cost solver only)
    """

    j: np.ndarray
    q: np.ndarray
    gain: Optional[float] = None

    def greedy_policy(self, tie_tol: float = 0.0) -> np.ndarray:
        """Greedy action per state; ties within tie_tol resolve to passive."""
        return (self.q[:, 1] < self.q[:, 0] - tie_tol).astype(int)


def threshold_policy(params: PerContentParams, R: int) -> np.ndarray:
    """Action vector of the threshold-R policy: passive at s <= R, active above."""
    if not -1 <= R <= params.s_max:
        raise ValueError(f"threshold {R} outside [-1, {params.s_max}]")
    return (np.arange(params.n_states) > R).astype(int)


def stationary_distribution(params: PerContentParams, R: int) -> StationaryDist:
    """Closed-form stationary distribution of the threshold-R embedded chain.

    Built from the cut-balance recursion: for adjacent recurrent states,
    probs[s+1] / probs[s] = up(s) / down(s+1), with up(s) = 1 on the passive
    side (s <= R) and lam/(lam + nu*s) above, and down(s+1) always the active
    down-move probability. States below R are transient and carry zero mass.
    R = -1 selects the always-active chain; R = s_max makes the cap absorbing.
    """
    if not -1 <= R <= params.s_max:
        raise ValueError(f"threshold {R} outside [-1, {params.s_max}]")
    n = params.n_states
    probs = np.zeros(n)
    if R == params.s_max:
        probs[-1] = 1.0
        return StationaryDist(threshold=R, probs=probs)

    policy = threshold_policy(params, R)
    lo = max(R, 0)
    weights = np.zeros(n)
    weights[lo] = 1.0
    for s in range(lo, params.s_max):
        up = up_probability(params, s, int(policy[s]))
        down = down_probability(params, s + 1, 1)  # s+1 > R, always active
        weights[s + 1] = weights[s] * up / down
    probs = weights / weights.sum()
    return StationaryDist(threshold=R, probs=probs)


def whittle_index_closed_form(params: PerContentParams, R: int) -> float:
    """Closed-form index of state R.

    Ratio of the mean-queue-length difference to the passive-probability
    difference between the threshold-R and threshold-(R-1) policies; this is
    the subsidy at which the two policies' average costs per epoch cross.
    """
    if not 0 <= R <= params.s_max:
        raise ValueError(f"threshold {R} outside [0, {params.s_max}]")
    here = stationary_distribution(params, R)
    below = stationary_distribution(params, R - 1)
    numerator = here.mean_queue_length - below.mean_queue_length
    denominator = here.passive_mass() - below.passive_mass()
    if abs(denominator) < 1e-12:
        raise DegenerateDenominator(R, denominator)
    return numerator / denominator


def whittle_table(params: PerContentParams) -> WhittleTable:
    """Closed-form index at every state plus the monotonicity certificate.

    The certificate is exact: indexable means the index sequence is
    non-decreasing in R up to 1e-9 ties. Truncating the queue at s_max
    deflates the last entry (it always equals nu*s_max/(lam+nu*s_max) < 1),
    so deep tables legitimately fail the full-table certificate even when
    their interior is monotone.
    """
    indices = np.array(
        [whittle_index_closed_form(params, R) for R in range(params.n_states)]
    )
    indexable = bool(np.all(np.diff(indices) >= -1e-9))
    return WhittleTable(params=params, indices=indices, indexable=indexable)


def _split_probabilities(params: PerContentParams):
    """(up, down, stay) vectors for both actions over the state grid."""
    n = params.n_states
    out = {}
    for a in (0, 1):
        up = np.array([up_probability(params, s, a) for s in range(n)])
        down = np.array([down_probability(params, s, a) for s in range(n)])
        out[a] = (up, down, 1.0 - up - down)
    return out


def _expected_values(v: np.ndarray, up: np.ndarray, down: np.ndarray, stay: np.ndarray):
    """E[v(next state)] under (up, down, stay) move probabilities."""
    ev = stay * v
    ev[:-1] += up[:-1] * v[1:]
    ev[1:] += down[1:] * v[:-1]
    return ev


def _policy_kernel(moves, cost, policy):
    """Transition matrix and stage-cost vector of a fixed per-state policy."""
    n = len(policy)
    p = np.zeros((n, n))
    c = np.empty(n)
    for s, a in enumerate(policy):
        up, down, stay = (m[s] for m in moves[a])
        p[s, s] = stay
        if s + 1 < n:
            p[s, s + 1] = up
        if s > 0:
            p[s, s - 1] = down
        c[s] = cost[s, a]
    return p, c


def _greedy(q: np.ndarray) -> np.ndarray:
    """Greedy action per state from state-action values; ties go passive."""
    return (q[:, 1] < q[:, 0]).astype(int)


def discounted_value_iteration(
    params: PerContentParams,
    w: float,
    tol: float = 1e-10,
    max_iter: int = DEFAULT_ITERATION_CAP,
) -> ValueFunctions:
    """Discounted-cost Bellman fixed point for the per-content MDP at subsidy w.

    Rounds of policy improvement with exact linear-solve evaluation (plain
    value iteration needs ~1/(1-alpha) sweeps per digit, which is painful at
    alpha = 0.999); the result is certified by checking that the sup-norm
    Bellman residual of the returned value vector is at most tol.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    n = params.n_states
    states = np.arange(n)
    moves = _split_probabilities(params)
    cost = np.stack([stage_cost(states, a, w) for a in (0, 1)], axis=1)
    alpha = params.alpha

    def q_of(v):
        return np.stack(
            [cost[:, a] + alpha * _expected_values(v, *moves[a]) for a in (0, 1)],
            axis=1,
        )

    j = np.zeros(n)
    solved = set()
    residual = np.inf
    for _ in range(max_iter):
        q = q_of(j)
        tj = q.min(axis=1)
        residual = float(np.max(np.abs(tj - j)))
        if residual <= tol:
            return ValueFunctions(j=j, q=q)
        key = tuple(_greedy(q))
        if key not in solved:
            solved.add(key)
            p, c = _policy_kernel(moves, cost, np.array(key))
            j = np.linalg.solve(np.eye(n) - alpha * p, c)
        else:
            j = tj  # plain contraction sweep polishes solve roundoff below tol
    raise MaxIterationsExceeded("discounted value iteration", max_iter, residual)


def _poisson_solve(p: np.ndarray, c: np.ndarray):
    """Gain and bias (bias[0] = 0) of a unichain policy from its balance system.

    Every policy of this MDP is unichain: passive moves climb toward the cap
    and active moves still go up with probability lam/(lam+nu*s) > 0, so the
    cap belongs to the single recurrent class (or is itself absorbing).
    """
    n = len(c)
    a = np.empty((n, n))
    a[:, 0] = 1.0  # column for the gain, replacing the pinned bias[0]
    a[:, 1:] = (np.eye(n) - p)[:, 1:]
    x = np.linalg.solve(a, c)
    bias = np.concatenate(([0.0], x[1:]))
    return float(x[0]), bias


def relative_value_iteration(
    params: PerContentParams,
    w: float,
    tol: float = 1e-9,
    max_iter: int = DEFAULT_ITERATION_CAP,
) -> ValueFunctions:
    """Average-cost dynamic programming for the per-content MDP at subsidy w.

    Damped relative value iteration (the embedded birth-death chain is
    2-periodic away from the cap, so the undamped operator can cycle). Stops
    when the span of the Bellman increment is below tol; the gain estimate is
    the midpoint of that increment and the bias is normalized to j[0] = 0.

    Near subsidies where two policies tie on average cost the damped sweeps
    contract arbitrarily slowly, so whenever the span stalls the current
    greedy policy is evaluated exactly through its balance equations and the
    sweep restarts from that bias (each policy is accelerated at most once).
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    n = params.n_states
    states = np.arange(n)
    moves = _split_probabilities(params)
    cost = np.stack([stage_cost(states, a, w) for a in (0, 1)], axis=1)

    v = np.zeros(n)
    span = np.inf
    check_every = 64
    span_at_check = np.inf
    accelerated = set()
    for it in range(max_iter):
        q = np.stack(
            [cost[:, a] + _expected_values(v, *moves[a]) for a in (0, 1)],
            axis=1,
        )
        tv = q.min(axis=1)
        delta = tv - v
        span = float(delta.max() - delta.min())
        if span <= tol:
            gain = float((delta.max() + delta.min()) / 2.0)
            bias = v - v[0]
            q = q - gain - v[0]  # Q consistent with the normalized bias
            return ValueFunctions(j=bias, q=q, gain=gain)
        if it % check_every == check_every - 1:
            if span > 0.5 * span_at_check:
                key = tuple(_greedy(q))
                if key not in accelerated:
                    accelerated.add(key)
                    p, c = _policy_kernel(moves, cost, np.array(key))
                    _, v = _poisson_solve(p, c)
                    span_at_check = np.inf
                    continue
            span_at_check = span
        v = 0.5 * v + 0.5 * tv
        v = v - v[0]
    raise MaxIterationsExceeded("relative value iteration", max_iter, span)


def threshold_of_policy(policy) -> Optional[int]:
    """Threshold of a per-state action vector, or None if not threshold-shaped.

    Convention: the threshold is the number of leading passive states, so
    [0,0,1,1] -> 2, [1,1,1] -> 0, and an all-passive vector of length n -> n.
    """
    policy = np.asarray(policy)
    if policy.ndim != 1 or not np.isin(policy, (0, 1)).all():
        raise ValueError("policy must be a flat vector of 0/1 actions")
    active = np.flatnonzero(policy)
    r = int(active[0]) if active.size else len(policy)
    if np.all(policy[r:] == 1):
        return r
    return None


def passive_set(
    params: PerContentParams,
    w: float,
    tol: float = 1e-9,
    tie_tol: float = 1e-9,
) -> set:
    """States where the average-cost greedy action at subsidy w is passive.

    Ties within tie_tol resolve to passive, so the set is closed at the
    indifference point.
    """
    vf = relative_value_iteration(params, w, tol=tol)
    policy = vf.greedy_policy(tie_tol=tie_tol)
    return set(int(s) for s in np.flatnonzero(policy == 0))


def indifference_index_oracle(
    params: PerContentParams,
    R: int,
    tol: float = 1e-6,
    rvi_tol: float = 1e-11,
) -> float:
    """Smallest subsidy at which the greedy action at state R turns passive.

    Bisects on the predicate "the average-cost greedy action at R is
    passive", which is single-crossing in w (each state, once passive,
    stays passive as the subsidy grows — the set-nesting property that
    `passive_set` sweeps certify). Returns 0.0 when R is already passive at
    w = 0, and raises BracketNotFound when R is still active at the top of
    the search interval w_hi = 10*(s_max+1).
    """
    if not 0 <= R <= params.s_max:
        raise ValueError(f"state {R} outside [0, {params.s_max}]")
    if not tol > 0:
        raise ValueError("tolerance must be positive")

    def passive_at(w: float) -> bool:
        vf = relative_value_iteration(params, w, tol=rvi_tol)
        return bool(vf.q[R, 1] >= vf.q[R, 0])  # tie -> passive

    w_hi = 10.0 * (params.s_max + 1)
    if passive_at(0.0):
        return 0.0
    if not passive_at(w_hi):
        raise BracketNotFound(R, w_hi)
    lo, hi = 0.0, w_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if passive_at(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)

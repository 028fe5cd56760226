"""Threshold-aware Q-learning of per-content Whittle indices.

Three learners share this module. The average-cost baseline
(`q_whittle_step`, `q_whittle_run`) is relative Q-learning with a fixed
reference entry and epsilon-greedy exploration: every state-action pair is
fair game, which is exactly why it converges slowly. The threshold-gated
learner (`qplus_whittle_update`, `qplus_whittle_w_update`,
`qplus_whittle_run`) exploits the threshold structure of the optimal
policy: while learning the index of state R it behaves according to the
threshold-R policy (fair coin at R), updates only the Q-entries that
policy visits, and bootstraps through the gate Q(s',1) above R / Q(s',0)
below R / min over actions at R. Its linear-function-approximation variant
(`lfa_update`, `lfa_w_update`, `lfa_run`) runs the same recursion on
feature weights; with one-hot features it reproduces the tabular learner
float for float, which the tests pin down.

Q-values and weights move on the fast step size gamma_n, the Whittle
estimate of the sweep's threshold state moves on the slow step size eta_n
(`StepSizeSchedule`), and each sweep hands its final estimate to the next
threshold as a warm start.

Convergence diagnostics live at the bottom. `ThresholdFixedPoint` solves
the gated Bellman equations of one sweep, restricted to the states the
behavior policy can reach, as an explicitly piecewise-affine function of
the subsidy; its knee `w_star` (`equilibrium_subsidy`) is the point where
the two Q-values at R tie, i.e. the equilibrium the coupled recursion
settles at. `tsa_telemetry` assembles the Lyapunov residuals
(eta_n/gamma_n)*||theta_n - f(W_n)||^2 + ||W_n - W*||^2 that quantify how
fast a run approaches that equilibrium.

The long-run entry points compile their inner loops with numba. Compiled
sweeps consume pre-drawn uniforms in a fixed order (one coin draw and one
jump draw per epoch, whether or not the coin is needed), so a pure-Python
replay of the update operations with the same draws lands on identical
floats; `record_sweep` is that replay and doubles as the snapshot
collector for telemetry.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from numba import njit

from .mdp import (
    ACTIVE,
    PASSIVE,
    PerContentParams,
    Transition,
    down_probability,
    jump_from_uniform,
    up_probability,
)

THEOREM1 = "theorem1"
GEOMETRIC = "geometric"

# fast/slow decay exponents of the polynomial ("theorem1") schedule
GAMMA_EXPONENT = 5.0 / 9.0
ETA_EXPONENT = 10.0 / 9.0

ONEHOT = "onehot"
GAUSSIAN_RBF = "gaussian-rbf"


# ---------------------------------------------------------------------------
# step-size schedules


@dataclass(frozen=True)
class StepSizeSchedule:
    """Two-timescale step sizes: fast gamma_n for Q/weights, slow eta_n for W.

    Kind "theorem1" decays polynomially, gamma_n = gamma0/(n+1)^(5/9) and
    eta_n = eta0/(n+1)^(10/9), so the timescale ratio eta_n/gamma_n is
    non-increasing and vanishes. Kind "geometric" divides both step sizes
    by decay_factor every decay_period epochs (defaults 1.1 every 1000).
    """

    kind: str = THEOREM1
    gamma0: float = 0.1
    eta0: float = 0.01
    decay_factor: float = 1.1
    decay_period: int = 1000

    def __post_init__(self):
        if self.kind not in (THEOREM1, GEOMETRIC):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not (self.gamma0 > 0 and np.isfinite(self.gamma0)):
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")
        if not (self.eta0 > 0 and np.isfinite(self.eta0)):
            raise ValueError(f"eta0 must be positive, got {self.eta0}")
        if self.kind == GEOMETRIC:
            if not self.decay_factor >= 1.0:
                raise ValueError("decay_factor must be >= 1")
            if not isinstance(self.decay_period, int) or self.decay_period < 1:
                raise ValueError("decay_period must be a positive integer")


def step_sizes(schedule: StepSizeSchedule, n: int) -> tuple[float, float]:
    """(gamma_n, eta_n) at iteration n >= 0."""
    if n < 0:
        raise ValueError(f"iteration counter must be >= 0, got {n}")
    if schedule.kind == THEOREM1:
        return (
            schedule.gamma0 * (n + 1.0) ** -GAMMA_EXPONENT,
            schedule.eta0 * (n + 1.0) ** -ETA_EXPONENT,
        )
    scale = schedule.decay_factor ** float(n // schedule.decay_period)
    return schedule.gamma0 / scale, schedule.eta0 / scale


def schedule_arrays(schedule: StepSizeSchedule, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (gamma_n, eta_n) for n = 0..T-1, as consumed by the sweeps."""
    if schedule.kind == THEOREM1:
        n1 = np.arange(1, T + 1, dtype=np.float64)
        return (
            schedule.gamma0 * n1**-GAMMA_EXPONENT,
            schedule.eta0 * n1**-ETA_EXPONENT,
        )
    scale = schedule.decay_factor ** (np.arange(T) // schedule.decay_period).astype(
        np.float64
    )
    return schedule.gamma0 / scale, schedule.eta0 / scale


# ---------------------------------------------------------------------------
# feature families


@dataclass(frozen=True)
class FeatureSpec:
    """Feature family for the LFA learner, bound to a state-space size.

    "onehot" is the exact tabular embedding: dimension 2*(s_max+1), entry
    2*s + a set to 1. "gaussian-rbf" places d/2 Gaussian bumps per action,
    centred evenly on the normalized queue axis s/s_max in [0, 1], then
    rescales the whole family by its largest norm so max ||phi(s,a)|| = 1.
    The bandwidth defaults to the centre spacing.
    """

    kind: str
    s_max: int
    d: Optional[int] = None
    bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.kind not in (ONEHOT, GAUSSIAN_RBF):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.s_max < 1:
            raise ValueError(f"s_max must be >= 1, got {self.s_max}")
        if self.kind == ONEHOT:
            if self.d is not None and self.d != 2 * (self.s_max + 1):
                raise ValueError("onehot dimension is fixed at 2*(s_max+1)")
        else:
            if self.d is None or self.d < 4 or self.d % 2:
                raise ValueError("gaussian-rbf needs an even dimension d >= 4")
            if self.bandwidth is not None and not self.bandwidth > 0:
                raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    @property
    def dim(self) -> int:
        return 2 * (self.s_max + 1) if self.kind == ONEHOT else self.d


@lru_cache(maxsize=None)
def feature_matrix(spec: FeatureSpec) -> np.ndarray:
    """Read-only (s_max+1, 2, d) table of feature vectors phi(s, a)."""
    n, d = spec.s_max + 1, spec.dim
    mat = np.zeros((n, 2, d))
    if spec.kind == ONEHOT:
        for s in range(n):
            for a in (PASSIVE, ACTIVE):
                mat[s, a, 2 * s + a] = 1.0
    else:
        half = d // 2
        centers = np.linspace(0.0, 1.0, half)
        width = spec.bandwidth if spec.bandwidth is not None else 1.0 / (half - 1)
        x = np.arange(n) / spec.s_max
        bumps = np.exp(-0.5 * ((x[:, None] - centers[None, :]) / width) ** 2)
        mat[:, PASSIVE, :half] = bumps
        mat[:, ACTIVE, half:] = bumps
        mat /= np.linalg.norm(mat, axis=2).max()
    mat.setflags(write=False)
    return mat


def features(spec: FeatureSpec, s: int, a: int) -> np.ndarray:
    """phi(s, a) as a read-only length-d vector."""
    if not (0 <= s <= spec.s_max and a in (PASSIVE, ACTIVE)):
        raise ValueError(f"state-action ({s}, {a}) out of range")
    return feature_matrix(spec)[s, a]


# ---------------------------------------------------------------------------
# learner states and single-epoch updates


@dataclass
class TabularLearnerState:
    """Mutable tabular learner: Q-table (s_max+1, 2) and per-state W estimates.

    The iteration counter n drives the step-size schedule and is advanced
    by the runners, once per decision epoch.
    """

    q: np.ndarray
    w: np.ndarray
    n: int = 0
    current_state: int = 0


def tabular_state(params: PerContentParams, start: int = 0) -> TabularLearnerState:
    """Fresh all-zero tabular learner positioned at `start`."""
    n_states = params.n_states
    return TabularLearnerState(
        q=np.zeros((n_states, 2)), w=np.zeros(n_states), current_state=start
    )


@dataclass
class LfaLearnerState:
    """Mutable weight-vector learner for a fixed feature family."""

    theta: np.ndarray
    w: np.ndarray
    feature_spec: FeatureSpec
    n: int = 0
    current_state: int = 0

    def __post_init__(self):
        norms = np.linalg.norm(feature_matrix(self.feature_spec), axis=2)
        if norms.max() > 1.0 + 1e-12:
            raise ValueError("feature family violates the norm bound ||phi|| <= 1")
        if self.theta.shape != (self.feature_spec.dim,):
            raise ValueError(
                f"theta must have shape ({self.feature_spec.dim},), got {self.theta.shape}"
            )


def lfa_state(spec: FeatureSpec, start: int = 0) -> LfaLearnerState:
    """Fresh all-zero weight learner positioned at `start`."""
    return LfaLearnerState(
        theta=np.zeros(spec.dim),
        w=np.zeros(spec.s_max + 1),
        feature_spec=spec,
        current_state=start,
    )


def threshold_action(R: int, s: int, u_coin: float) -> int:
    """Behavior action of the threshold-R policy: fair coin exactly at R."""
    if s > R:
        return ACTIVE
    if s < R:
        return PASSIVE
    return ACTIVE if u_coin < 0.5 else PASSIVE


def epsilon_greedy_action(
    q_row: np.ndarray, u_explore: float, u_pick: float, epsilon: float = 0.1
) -> int:
    """Cost-greedy action with epsilon-uniform exploration (ties go passive)."""
    if u_explore < epsilon:
        return ACTIVE if u_pick < 0.5 else PASSIVE
    return ACTIVE if q_row[ACTIVE] < q_row[PASSIVE] else PASSIVE


def q_whittle_step(
    state: TabularLearnerState,
    transition: Transition,
    schedule: StepSizeSchedule,
    reference: tuple[int, int] = (0, 0),
) -> TabularLearnerState:
    """One average-cost relative Q-learning epoch plus the coupled W step.

    The Q target bootstraps through min_a Q(s', a), recentred by the fixed
    reference entry Q[reference]. The transition's stage cost must already
    carry the visited state's subsidy, i.e. the caller samples it with
    w = state.w[s]. The Whittle estimate of the visited state then moves by
    eta_n times the action gap of the freshly updated table.
    """
    gamma, eta = step_sizes(schedule, state.n)
    s, a = transition.from_state, transition.action
    boot = min(state.q[transition.to_state, PASSIVE], state.q[transition.to_state, ACTIVE])
    target = transition.stage_cost + boot - state.q[reference]
    state.q[s, a] += gamma * (target - state.q[s, a])
    state.w[s] += eta * (state.q[s, PASSIVE] - state.q[s, ACTIVE])
    return state


def gated_bootstrap(q: np.ndarray, s_next: int, R: int) -> float:
    """Backup value the threshold-R learner assigns to the landing state."""
    if s_next > R:
        return q[s_next, ACTIVE]
    if s_next < R:
        return q[s_next, PASSIVE]
    return min(q[R, PASSIVE], q[R, ACTIVE])


def qplus_whittle_update(
    state: TabularLearnerState,
    R: int,
    transition: Transition,
    schedule: StepSizeSchedule,
    alpha: float = 0.98,
) -> TabularLearnerState:
    """One threshold-gated discounted Q update; writes exactly the visited entry.

    Active epochs pay the bare holding cost s, passive epochs pay
    s - W_n(R); the subsidy enters through the sampled transition's stage
    cost (the runners sample with w = state.w[R]). The bootstrap is gated
    by the same threshold, so no value outside the behavior policy's reach
    is ever read or written.
    """
    gamma, _ = step_sizes(schedule, state.n)
    s, a = transition.from_state, transition.action
    target = transition.stage_cost + alpha * gated_bootstrap(
        state.q, transition.to_state, R
    )
    state.q[s, a] += gamma * (target - state.q[s, a])
    return state


def qplus_whittle_w_update(
    state: TabularLearnerState, R: int, schedule: StepSizeSchedule
) -> TabularLearnerState:
    """Slow-timescale Whittle step at the sweep's threshold state only."""
    _, eta = step_sizes(schedule, state.n)
    state.w[R] += eta * (state.q[R, PASSIVE] - state.q[R, ACTIVE])
    return state


def lfa_update(
    state: LfaLearnerState,
    R: int,
    transition: Transition,
    schedule: StepSizeSchedule,
    alpha: float = 0.98,
) -> LfaLearnerState:
    """Semi-gradient TD step; the increment lies along phi(S_n, A_n).

    Identical in structure to `qplus_whittle_update` with Q(s, a) read and
    written through phi(s, a)^T theta, including the threshold-gated
    bootstrap and the subsidy carried by the transition's stage cost.
    """
    gamma, _ = step_sizes(schedule, state.n)
    mat = feature_matrix(state.feature_spec)
    s, a, s_next = transition.from_state, transition.action, transition.to_state
    if s_next > R:
        boot = mat[s_next, ACTIVE] @ state.theta
    elif s_next < R:
        boot = mat[s_next, PASSIVE] @ state.theta
    else:
        boot = min(mat[R, PASSIVE] @ state.theta, mat[R, ACTIVE] @ state.theta)
    phi = mat[s, a]
    delta = transition.stage_cost + alpha * boot - phi @ state.theta
    state.theta += gamma * delta * phi
    return state


def lfa_w_update(
    state: LfaLearnerState, R: int, schedule: StepSizeSchedule
) -> LfaLearnerState:
    """Slow-timescale Whittle step through the approximated action gap at R."""
    _, eta = step_sizes(schedule, state.n)
    mat = feature_matrix(state.feature_spec)
    gap = mat[R, PASSIVE] @ state.theta - mat[R, ACTIVE] @ state.theta
    state.w[R] += eta * gap
    return state


# ---------------------------------------------------------------------------
# compiled sweep loops

_NO_FLOATS = np.empty(0)
_NO_INTS = np.empty(0, dtype=np.int64)


def _jump_tables(params: PerContentParams) -> tuple[np.ndarray, np.ndarray]:
    """Up/down jump probabilities indexed [s, a] for the compiled sweeps."""
    n = params.n_states
    up = np.empty((n, 2))
    down = np.empty((n, 2))
    for s in range(n):
        for a in (PASSIVE, ACTIVE):
            up[s, a] = up_probability(params, s, a)
            down[s, a] = down_probability(params, s, a)
    return up, down


@njit(cache=True)
def _tabular_sweep_kernel(
    q,
    w0,
    R,
    s0,
    alpha,
    up,
    down,
    gammas,
    etas,
    u,
    w_out,
    m_out,
    m_cs,
    m_ca,
    m_a_act,
    m_b_act,
    m_a_pas,
    m_b_pas,
    m_w_star,
    m_w_true,
):
    """One threshold-R sweep on a mutable Q-table; returns (w_T, s_T, bad).

    Mirrors qplus_whittle_update + qplus_whittle_w_update epoch for epoch,
    consuming u[n, 0] for the coin and u[n, 1] for the jump. Optionally
    fills w_out with the per-epoch W iterate and m_out with the Lyapunov
    residual against the piecewise-affine fixed point (A + B*w per
    on-sweep coordinate, active piece below m_w_star, passive above).
    """
    w = w0
    s = s0
    bad = 0
    for n in range(gammas.shape[0]):
        if s > R:
            a = 1
        elif s < R:
            a = 0
        else:
            a = 1 if u[n, 0] < 0.5 else 0
        if (a == 1 and s < R) or (a == 0 and s > R):
            bad += 1
        uj = u[n, 1]
        if uj < up[s, a]:
            s_next = s + 1
        elif uj < up[s, a] + down[s, a]:
            s_next = s - 1
        else:
            s_next = s
        if s_next > R:
            boot = q[s_next, 1]
        elif s_next < R:
            boot = q[s_next, 0]
        else:
            boot = q[R, 0] if q[R, 0] < q[R, 1] else q[R, 1]
        stage = s - w if a == 0 else float(s)
        target = stage + alpha * boot
        q[s, a] += gammas[n] * (target - q[s, a])
        w += etas[n] * (q[R, 0] - q[R, 1])
        s = s_next
        if w_out.shape[0]:
            w_out[n] = w
        if m_out.shape[0]:
            if w <= m_w_star:
                aa, bb = m_a_act, m_b_act
            else:
                aa, bb = m_a_pas, m_b_pas
            acc = 0.0
            for k in range(m_cs.shape[0]):
                diff = q[m_cs[k], m_ca[k]] - (aa[k] + bb[k] * w)
                acc += diff * diff
            m_out[n] = (etas[n] / gammas[n]) * acc + (w - m_w_true) ** 2
    return w, s, bad


@njit(cache=True)
def _lfa_sweep_kernel(theta, w0, R, s0, alpha, feats, up, down, gammas, etas, u, w_out):
    """One threshold-R sweep on mutable weights; returns (w_T, s_T, bad).

    Mirrors lfa_update + lfa_w_update with the same uniform consumption as
    the tabular kernel, so shared seeds give comparable trajectories.
    """
    w = w0
    s = s0
    bad = 0
    d = theta.shape[0]
    for n in range(gammas.shape[0]):
        if s > R:
            a = 1
        elif s < R:
            a = 0
        else:
            a = 1 if u[n, 0] < 0.5 else 0
        if (a == 1 and s < R) or (a == 0 and s > R):
            bad += 1
        uj = u[n, 1]
        if uj < up[s, a]:
            s_next = s + 1
        elif uj < up[s, a] + down[s, a]:
            s_next = s - 1
        else:
            s_next = s
        if s_next > R:
            boot = 0.0
            for j in range(d):
                boot += feats[s_next, 1, j] * theta[j]
        elif s_next < R:
            boot = 0.0
            for j in range(d):
                boot += feats[s_next, 0, j] * theta[j]
        else:
            b0 = 0.0
            b1 = 0.0
            for j in range(d):
                b0 += feats[R, 0, j] * theta[j]
                b1 += feats[R, 1, j] * theta[j]
            boot = b0 if b0 < b1 else b1
        stage = s - w if a == 0 else float(s)
        pred = 0.0
        for j in range(d):
            pred += feats[s, a, j] * theta[j]
        delta = stage + alpha * boot - pred
        step = gammas[n] * delta
        for j in range(d):
            theta[j] += step * feats[s, a, j]
        g0 = 0.0
        g1 = 0.0
        for j in range(d):
            g0 += feats[R, 0, j] * theta[j]
            g1 += feats[R, 1, j] * theta[j]
        w += etas[n] * (g0 - g1)
        s = s_next
        if w_out.shape[0]:
            w_out[n] = w
    return w, s, bad


@njit(cache=True)
def _q_whittle_kernel(q, w, s0, epsilon, ref_s, ref_a, up, down, gammas, etas, u):
    """Average-cost baseline loop; returns the final state.

    Mirrors q_whittle_step epoch for epoch, consuming u[n, 0] for the
    explore coin, u[n, 1] for the uniform action and u[n, 2] for the jump.
    """
    s = s0
    for n in range(gammas.shape[0]):
        if u[n, 0] < epsilon:
            a = 1 if u[n, 1] < 0.5 else 0
        else:
            a = 1 if q[s, 1] < q[s, 0] else 0
        uj = u[n, 2]
        if uj < up[s, a]:
            s_next = s + 1
        elif uj < up[s, a] + down[s, a]:
            s_next = s - 1
        else:
            s_next = s
        stage = s - w[s] if a == 0 else float(s)
        boot = (q[s_next, 0] if q[s_next, 0] < q[s_next, 1] else q[s_next, 1]) - q[
            ref_s, ref_a
        ]
        q[s, a] += gammas[n] * (stage + boot - q[s, a])
        w[s] += etas[n] * (q[s, 0] - q[s, 1])
        s = s_next
    return s


# ---------------------------------------------------------------------------
# runners


@dataclass
class SweepResult:
    """Outcome of one threshold sweep."""

    R: int
    w_final: float
    s_final: int
    off_policy_updates: int
    w_trace: Optional[np.ndarray] = None
    m_trace: Optional[np.ndarray] = None


@dataclass
class LearnRun:
    """Outcome of a full index-learning run.

    `w` holds each state's estimate frozen at the end of its own sweep
    (the baseline learner updates all of them throughout instead).
    `off_policy_updates` counts writes that violate the threshold gating
    and is None for the baseline, which explores everywhere by design.
    """

    w: np.ndarray
    epochs: int
    off_policy_updates: Optional[int]
    sweep_initial_w: Optional[np.ndarray] = None
    w_trace: Optional[np.ndarray] = None
    m_trace: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None
    theta: Optional[np.ndarray] = None


def qplus_whittle_sweep(
    params: PerContentParams,
    R: int,
    schedule: StepSizeSchedule,
    T: int,
    *,
    rng=None,
    q: Optional[np.ndarray] = None,
    w0: float = 0.0,
    start: Optional[int] = None,
    record: bool = False,
    fixed_point: Optional["ThresholdFixedPoint"] = None,
    w_true: Optional[float] = None,
) -> SweepResult:
    """Run T threshold-R epochs on (possibly warm) Q-table q, in place.

    The episode starts at s = R unless overridden, so both coin branches
    are exercised immediately. Passing a `fixed_point` (and optionally a
    different `w_true`) makes the sweep emit the per-epoch Lyapunov
    residual m_trace without storing weight snapshots.
    """
    rng = np.random.default_rng(rng)
    if q is None:
        q = np.zeros((params.n_states, 2))
    gammas, etas = schedule_arrays(schedule, T)
    u = rng.random((T, 2))
    w_out = np.empty(T) if record else _NO_FLOATS
    if fixed_point is not None:
        m_out = np.empty(T)
        m_cs, m_ca = fixed_point.coord_s, fixed_point.coord_a
        m_a_act, m_b_act = fixed_point.affine(ACTIVE)
        m_a_pas, m_b_pas = fixed_point.affine(PASSIVE)
        m_w_star = fixed_point.w_star
        m_w_true = fixed_point.w_star if w_true is None else w_true
    else:
        m_out = _NO_FLOATS
        m_cs = m_ca = _NO_INTS
        m_a_act = m_b_act = m_a_pas = m_b_pas = _NO_FLOATS
        m_w_star = m_w_true = 0.0
    w_final, s_final, bad = _tabular_sweep_kernel(
        q,
        float(w0),
        R,
        R if start is None else start,
        params.alpha,
        *_jump_tables(params),
        gammas,
        etas,
        u,
        w_out,
        m_out,
        m_cs,
        m_ca,
        m_a_act,
        m_b_act,
        m_a_pas,
        m_b_pas,
        m_w_star,
        m_w_true,
    )
    return SweepResult(
        R=R,
        w_final=w_final,
        s_final=s_final,
        off_policy_updates=bad,
        w_trace=w_out if record else None,
        m_trace=m_out if fixed_point is not None else None,
    )


def qplus_whittle_run(
    params: PerContentParams,
    schedule: StepSizeSchedule,
    T: int,
    *,
    rng=None,
    record: bool = False,
) -> LearnRun:
    """Learn the whole index table by sweeping thresholds R = 0..s_max.

    Each sweep runs T epochs under its threshold behavior policy starting
    at s = R, with the step-size clock reset; the Q-table is carried
    across sweeps and each sweep's final Whittle estimate seeds the next
    threshold's initial one (warm start).
    """
    rng = np.random.default_rng(rng)
    n_states = params.n_states
    q = np.zeros((n_states, 2))
    w = np.zeros(n_states)
    starts = np.zeros(n_states)
    traces = [] if record else None
    bad = 0
    for R in range(n_states):
        starts[R] = w[R - 1] if R else 0.0
        result = qplus_whittle_sweep(
            params, R, schedule, T, rng=rng, q=q, w0=starts[R], record=record
        )
        w[R] = result.w_final
        bad += result.off_policy_updates
        if record:
            traces.append(result.w_trace)
    return LearnRun(
        w=w,
        epochs=n_states * T,
        off_policy_updates=bad,
        sweep_initial_w=starts,
        w_trace=np.concatenate(traces) if record else None,
        q=q,
    )


def lfa_sweep(
    params: PerContentParams,
    R: int,
    schedule: StepSizeSchedule,
    T: int,
    feature_spec: FeatureSpec,
    *,
    rng=None,
    theta: Optional[np.ndarray] = None,
    w0: float = 0.0,
    start: Optional[int] = None,
    record: bool = False,
) -> tuple[SweepResult, np.ndarray]:
    """Run T threshold-R epochs on the weight vector; returns (result, theta)."""
    rng = np.random.default_rng(rng)
    if theta is None:
        theta = np.zeros(feature_spec.dim)
    gammas, etas = schedule_arrays(schedule, T)
    u = rng.random((T, 2))
    w_out = np.empty(T) if record else _NO_FLOATS
    w_final, s_final, bad = _lfa_sweep_kernel(
        theta,
        float(w0),
        R,
        R if start is None else start,
        params.alpha,
        feature_matrix(feature_spec),
        *_jump_tables(params),
        gammas,
        etas,
        u,
        w_out,
    )
    result = SweepResult(
        R=R,
        w_final=w_final,
        s_final=s_final,
        off_policy_updates=bad,
        w_trace=w_out if record else None,
    )
    return result, theta


def lfa_run(
    params: PerContentParams,
    schedule: StepSizeSchedule,
    feature_spec: FeatureSpec,
    T: int,
    *,
    rng=None,
    record: bool = False,
) -> LearnRun:
    """Sweep-structured weight learning; mirrors qplus_whittle_run exactly.

    With onehot features and the same rng seed this reproduces the tabular
    run's Whittle trajectory float for float.
    """
    if feature_spec.s_max != params.s_max:
        raise ValueError(
            f"feature family is built for s_max={feature_spec.s_max}, "
            f"params have s_max={params.s_max}"
        )
    rng = np.random.default_rng(rng)
    n_states = params.n_states
    theta = np.zeros(feature_spec.dim)
    w = np.zeros(n_states)
    starts = np.zeros(n_states)
    traces = [] if record else None
    bad = 0
    for R in range(n_states):
        starts[R] = w[R - 1] if R else 0.0
        result, theta = lfa_sweep(
            params,
            R,
            schedule,
            T,
            feature_spec,
            rng=rng,
            theta=theta,
            w0=starts[R],
            record=record,
        )
        w[R] = result.w_final
        bad += result.off_policy_updates
        if record:
            traces.append(result.w_trace)
    return LearnRun(
        w=w,
        epochs=n_states * T,
        off_policy_updates=bad,
        sweep_initial_w=starts,
        w_trace=np.concatenate(traces) if record else None,
        theta=theta,
    )


def q_whittle_run(
    params: PerContentParams,
    schedule: StepSizeSchedule,
    T: int,
    *,
    rng=None,
    epsilon: float = 0.1,
    reference: tuple[int, int] = (0, 0),
    start: int = 0,
) -> LearnRun:
    """Average-cost baseline: epsilon-greedy exploration, per-state W updates."""
    rng = np.random.default_rng(rng)
    n_states = params.n_states
    q = np.zeros((n_states, 2))
    w = np.zeros(n_states)
    gammas, etas = schedule_arrays(schedule, T)
    u = rng.random((T, 3))
    _q_whittle_kernel(
        q, w, start, epsilon, reference[0], reference[1], *_jump_tables(params), gammas, etas, u
    )
    return LearnRun(w=w, epochs=T, off_policy_updates=None, q=q)


# ---------------------------------------------------------------------------
# reference replay (pure Python, used by tests and for weight snapshots)


@dataclass
class SweepTrace:
    """Per-epoch history of one threshold sweep.

    theta rows are the fast weights after each epoch: the raw weight
    vector for an LFA sweep, the Q-table flattened in onehot layout
    (index 2*s + a) for a tabular sweep.
    """

    R: int
    n: np.ndarray
    theta: np.ndarray
    w: np.ndarray


def record_sweep(
    params: PerContentParams,
    R: int,
    schedule: StepSizeSchedule,
    T: int,
    *,
    rng=None,
    feature_spec: Optional[FeatureSpec] = None,
    w0: float = 0.0,
) -> SweepTrace:
    """Pure-Python sweep with per-epoch weight snapshots.

    Drives the single-epoch update operations with the same pre-drawn
    uniforms the compiled kernels consume, so (given equal seeds) its
    trajectory coincides with theirs; it exists to feed `tsa_telemetry`
    and to pin the kernels down in tests. Starts from zero weights at
    s = R.
    """
    rng = np.random.default_rng(rng)
    u = rng.random((T, 2))
    tabular = feature_spec is None
    if tabular:
        state = tabular_state(params, start=R)
        d = 2 * params.n_states
    else:
        state = lfa_state(feature_spec, start=R)
        d = feature_spec.dim
    state.w[R] = w0
    thetas = np.empty((T, d))
    ws = np.empty(T)
    for n in range(T):
        state.n = n
        s = state.current_state
        a = threshold_action(R, s, u[n, 0])
        to = jump_from_uniform(params, s, a, u[n, 1])
        transition = Transition(
            from_state=s, action=a, to_state=to, stage_cost=s - state.w[R] * (1 - a)
        )
        if tabular:
            qplus_whittle_update(state, R, transition, schedule, alpha=params.alpha)
            qplus_whittle_w_update(state, R, schedule)
            thetas[n] = state.q.reshape(-1)
        else:
            lfa_update(state, R, transition, schedule, alpha=params.alpha)
            lfa_w_update(state, R, schedule)
            thetas[n] = state.theta
        ws[n] = state.w[R]
        state.current_state = to
    return SweepTrace(R=R, n=np.arange(T), theta=thetas, w=ws)


# ---------------------------------------------------------------------------
# two-timescale diagnostics


class ThresholdFixedPoint:
    """Gated Bellman fixed point of one sweep, affine in the subsidy w.

    Restricted to the states the sweep's behavior policy reaches from its
    start at R (R-1 below via the serve-down step, R itself, everything
    above), the gated update has a unique fixed point for every subsidy w.
    Because the stage cost is affine in w and the gate's argmin at R flips
    exactly once, the fixed point is piecewise affine, Q_w = A + B*w per
    reachable coordinate, with the active-argmin piece below the knee
    w_star and the passive piece above. At w_star the two Q-values at R
    tie, so w_star is the equilibrium subsidy of the coupled recursion.
    """

    def __init__(self, params: PerContentParams, R: int):
        if not 0 <= R <= params.s_max:
            raise ValueError(f"threshold {R} outside state space 0..{params.s_max}")
        self.params = params
        self.R = R
        coords: list[tuple[int, int]] = []
        if R >= 1:
            coords.append((R - 1, PASSIVE))
        coords.append((R, PASSIVE))
        coords.append((R, ACTIVE))
        coords.extend((s, ACTIVE) for s in range(R + 1, params.s_max + 1))
        self.coord_s = np.array([s for s, _ in coords], dtype=np.int64)
        self.coord_a = np.array([a for _, a in coords], dtype=np.int64)
        index = {c: k for k, c in enumerate(coords)}
        k_n = len(coords)
        self._pieces: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        roots = {}
        i_pas, i_act = index[(R, PASSIVE)], index[(R, ACTIVE)]
        for branch in (PASSIVE, ACTIVE):
            flow = np.zeros((k_n, k_n))
            base = np.zeros(k_n)
            subsidy = np.zeros(k_n)
            for k, (s, a) in enumerate(coords):
                base[k] = s
                if a == PASSIVE:
                    subsidy[k] = -1.0
                for s_next, p in self._jump_dist(s, a):
                    if s_next > R:
                        flow[k, index[(s_next, ACTIVE)]] += p
                    elif s_next < R:
                        flow[k, index[(s_next, PASSIVE)]] += p
                    else:
                        flow[k, index[(R, branch)]] += p
            lhs = np.eye(k_n) - params.alpha * flow
            a_vec = np.linalg.solve(lhs, base)
            b_vec = np.linalg.solve(lhs, subsidy)
            self._pieces[branch] = (a_vec, b_vec)
            gap_a = a_vec[i_pas] - a_vec[i_act]
            gap_b = b_vec[i_pas] - b_vec[i_act]
            roots[branch] = -gap_a / gap_b
        spread = abs(roots[PASSIVE] - roots[ACTIVE])
        scale = max(1.0, abs(roots[PASSIVE]), abs(roots[ACTIVE]))
        if spread > 1e-8 * scale:
            raise ArithmeticError(
                f"fixed-point pieces disagree on the knee: {roots[PASSIVE]} vs {roots[ACTIVE]}"
            )
        self.w_star = 0.5 * (roots[PASSIVE] + roots[ACTIVE])
        self._i_pas, self._i_act = i_pas, i_act

    def _jump_dist(self, s: int, a: int) -> list[tuple[int, float]]:
        p_up = up_probability(self.params, s, a)
        p_down = down_probability(self.params, s, a)
        dist = []
        if p_up > 0:
            dist.append((s + 1, p_up))
        if p_down > 0:
            dist.append((s - 1, p_down))
        stay = 1.0 - p_up - p_down
        if stay > 0:
            dist.append((s, stay))
        return dist

    def affine(self, branch: int) -> tuple[np.ndarray, np.ndarray]:
        """(A, B) with fixed point A + B*w on the given argmin branch."""
        return self._pieces[branch]

    def q_table(self, w: float) -> np.ndarray:
        """(s_max+1, 2) table: fixed-point values on reachable coordinates, 0 off."""
        branch = ACTIVE if w <= self.w_star else PASSIVE
        a_vec, b_vec = self._pieces[branch]
        table = np.zeros((self.params.n_states, 2))
        table[self.coord_s, self.coord_a] = a_vec + b_vec * w
        return table

    def theta(self, w: float) -> np.ndarray:
        """Fixed point embedded as onehot weights (index 2*s + a)."""
        return self.q_table(w).reshape(-1)

    def action_gap(self, w: float) -> float:
        """Q_w(R, passive) - Q_w(R, active); zero exactly at w_star."""
        branch = ACTIVE if w <= self.w_star else PASSIVE
        a_vec, b_vec = self._pieces[branch]
        values = a_vec + b_vec * w
        return values[self._i_pas] - values[self._i_act]

    @property
    def support(self) -> np.ndarray:
        """Boolean (s_max+1, 2) mask of the coordinates the sweep drives."""
        mask = np.zeros((self.params.n_states, 2), dtype=bool)
        mask[self.coord_s, self.coord_a] = True
        return mask


def equilibrium_subsidy(params: PerContentParams, R: int) -> float:
    """Subsidy at which the threshold-R sweep's coupled recursion is stationary."""
    return ThresholdFixedPoint(params, R).w_star


@dataclass
class TsaTelemetry:
    """Per-epoch two-timescale residuals of one sweep.

    m is the Lyapunov value (eta_n/gamma_n)*theta_err_sq + w_err_sq;
    nonnegative by construction, and shrinking m certifies that the
    coupled iterates approach (f(w_true), w_true).
    """

    n: np.ndarray
    theta_err_sq: np.ndarray
    w_err_sq: np.ndarray
    m: np.ndarray


def tsa_telemetry(
    trace: SweepTrace,
    f_oracle: Optional[Callable[[float], np.ndarray]],
    w_true: float,
    schedule: StepSizeSchedule,
) -> TsaTelemetry:
    """Lyapunov residuals of a recorded sweep.

    f_oracle maps a subsidy to the fixed-point weights (use
    ThresholdFixedPoint(...).theta for tabular/onehot sweeps); for feature
    families whose fixed point has no tractable oracle, pass None and only
    the Whittle residual is reported.
    """
    gammas, etas = schedule_arrays(schedule, len(trace.n))
    if f_oracle is None:
        theta_err_sq = np.zeros(len(trace.n))
    else:
        residual = trace.theta - np.stack([f_oracle(w) for w in trace.w])
        theta_err_sq = np.einsum("ij,ij->i", residual, residual)
    w_err_sq = (trace.w - w_true) ** 2
    return TsaTelemetry(
        n=trace.n,
        theta_err_sq=theta_err_sq,
        w_err_sq=w_err_sq,
        m=(etas / gammas) * theta_err_sq + w_err_sq,
    )

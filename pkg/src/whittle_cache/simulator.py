"""Multi-content continuous-time cache simulator.

Competing exponential clocks over per-content request queues, a hard B-slot
cache re-selected at every state change, and exact piecewise-constant cost
accounting (the time integral of the summed queue lengths; events happen at
their exact jump times, so there is no discretization error).

Policies: index tables (cache the B contents with the largest current
index, ties to the lower id), LRU/LFU keyed on request arrivals, and a
uniformly random slate. Index values come from either the exact solver or
a learner -- the simulator treats both identically.

Episodes consume pre-drawn uniforms in fixed-width rows (one row per
resolved event) so the compiled event loop and the pure-Python reference
loop walk byte-identical trajectories from a shared generator; costs are
a pure function of (config, seed) either way. Service completions always
come from exponential clocks; when a recorded trace drives the arrivals,
the replay preempts the service clock at each logged request instant
(memorylessness makes the restart exact).
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .errors import DeadSystem

INDEX = 0
LRU = 1
LFU = 2
RANDOM = 3

_CHUNK_ROWS = 1 << 16


@dataclass
class SystemConfig:
    """Rates and capacities of an M-content system.

    `s_max` may be a scalar (shared cap) or one cap per content. Arrival
    rates of zero are allowed here (the episode then freezes once nothing
    can move); workload construction is stricter.
    """

    lams: np.ndarray
    nus: np.ndarray
    s_max: np.ndarray
    B: int

    def __init__(self, lams, nus, s_max, B):
        self.lams = np.asarray(lams, dtype=np.float64)
        self.nus = np.asarray(nus, dtype=np.float64)
        if self.lams.ndim != 1 or self.lams.size == 0:
            raise ValueError("lams must be a non-empty 1-d array")
        m = self.lams.size
        if self.nus.shape != (m,):
            raise ValueError("nus must match lams in length")
        self.s_max = np.broadcast_to(np.asarray(s_max, dtype=np.int64), (m,)).copy()
        self.B = int(B)
        if (self.lams < 0).any() or not np.isfinite(self.lams).all():
            raise ValueError("arrival rates must be finite and >= 0")
        if (self.nus <= 0).any() or not np.isfinite(self.nus).all():
            raise ValueError("service rates must be positive")
        if (self.s_max < 1).any():
            raise ValueError("queue caps must be >= 1")
        if self.B < 1:
            raise ValueError("cache size B must be >= 1")

    @property
    def n_contents(self) -> int:
        return self.lams.size


@dataclass
class SystemState:
    queues: np.ndarray
    cache: set
    clock: float = 0.0
    cost_integral: float = 0.0


@dataclass
class Metrics:
    """Outcome of one episode; `occupancy[m, s]` is time spent with queue s."""

    policy: str
    seed: int
    accumulated_cost: float
    average_cost: float
    events: int
    occupancy: np.ndarray
    arrivals: np.ndarray
    departures: np.ndarray
    dropped: int


@dataclass
class PolicyAggregate:
    policy: str
    n: int
    mean_accumulated_cost: float
    stderr_accumulated_cost: float
    mean_average_cost: float


@dataclass
class ComparisonResult:
    rows: list
    aggregates: list


# ---------------------------------------------------------------------------
# policies


class IndexPolicy:
    """Cache the B contents with the largest table[m][S_m]; ties to lower id.

    A table entry of -inf means "never cache in this state": such contents
    are excluded even when slots are free, so the slate can be smaller
    than B (down to empty).
    """

    def __init__(self, tables: Sequence[np.ndarray], kind: str = "whittle-oracle"):
        self.kind = kind
        self.tables = [np.asarray(t, dtype=np.float64) for t in tables]

    def reset(self, n_contents: int) -> None:
        if len(self.tables) != n_contents:
            raise ValueError(
                f"policy has {len(self.tables)} index tables for {n_contents} contents"
            )

    def note_arrival(self, m: int, clock: float) -> None:
        pass

    def scores(self, queues: np.ndarray) -> np.ndarray:
        return np.array([t[s] for t, s in zip(self.tables, queues)])


class LruPolicy:
    """Cache the B most recently requested contents ("use" = request arrival)."""

    kind = "lru"

    def __init__(self):
        self.last_request = np.empty(0)

    def reset(self, n_contents: int) -> None:
        self.last_request = np.full(n_contents, -1.0)

    def note_arrival(self, m: int, clock: float) -> None:
        self.last_request[m] = clock

    def scores(self, queues: np.ndarray) -> np.ndarray:
        return self.last_request


class LfuPolicy:
    """Cache the B most frequently requested contents (cumulative counts)."""

    kind = "lfu"

    def __init__(self):
        self.counts = np.empty(0)

    def reset(self, n_contents: int) -> None:
        self.counts = np.zeros(n_contents)

    def note_arrival(self, m: int, clock: float) -> None:
        self.counts[m] += 1.0

    def scores(self, queues: np.ndarray) -> np.ndarray:
        return self.counts


class RandomPolicy:
    """A fresh uniformly random B-subset at every decision epoch.

    Inside an episode the selection consumes the episode's own uniform
    stream; standalone `select_cache` calls fall back to `rng`.
    """

    kind = "random"

    def __init__(self, rng=None):
        self.rng = np.random.default_rng(rng)

    def reset(self, n_contents: int) -> None:
        pass

    def note_arrival(self, m: int, clock: float) -> None:
        pass


def _top_b(scores: np.ndarray, B: int) -> set:
    """Largest-score B ids, lowest id on ties; -inf scores never selected."""
    m = scores.size
    take = min(B, m)
    chosen = np.zeros(m, dtype=bool)
    out = set()
    for _ in range(take):
        best = -1
        for i in range(m):
            if chosen[i] or scores[i] == -np.inf:
                continue
            if best < 0 or scores[i] > scores[best]:
                best = i
        if best < 0:
            break
        chosen[best] = True
        out.add(best)
    return out


def _random_subset(u: np.ndarray, m: int, take: int) -> set:
    """Partial Fisher-Yates driven by `take` uniforms."""
    ids = np.arange(m)
    for i in range(take):
        j = i + int(u[i] * (m - i))
        ids[i], ids[j] = ids[j], ids[i]
    return set(ids[:take].tolist())


def select_cache(policy, state: SystemState, B: int) -> set:
    """The policy's cache slate for the current queues (|slate| = min(B, M))."""
    m = state.queues.size
    if isinstance(policy, RandomPolicy):
        return _random_subset(policy.rng.random(min(B, m)), m, min(B, m))
    return _top_b(policy.scores(state.queues), B)


# ---------------------------------------------------------------------------
# event sampling


def next_event(state: SystemState, config: SystemConfig, rng) -> tuple:
    """Sample the next jump: (dt, ("arrival"|"departure", content)).

    Total rate = arrivals into non-full queues + services of cached
    contents; the holding time is exponential at that rate and the event
    is picked proportionally (arrivals of content 0..M-1, then
    departures). `cost_integral`/`clock` bookkeeping is the caller's job.
    """
    arr = config.lams * (state.queues < config.s_max)
    dep = np.zeros(config.n_contents)
    for m in state.cache:
        dep[m] = config.nus[m] * state.queues[m]
    total = arr.sum() + dep.sum()
    if total <= 0.0:
        raise DeadSystem(
            "no event can occur: all queues are at rest and nothing is cached"
        )
    dt = -np.log1p(-rng.random()) / total
    x = rng.random() * total
    acc = 0.0
    for m in range(config.n_contents):
        acc += arr[m]
        if x < acc:
            return dt, ("arrival", m)
    for m in range(config.n_contents):
        acc += dep[m]
        if x < acc:
            return dt, ("departure", m)
    return dt, ("departure", int(np.nonzero(dep)[0][-1]))  # x == total roundoff


# ---------------------------------------------------------------------------
# compiled event loop


@njit(cache=True)
def _episode_kernel(
    queues,
    active,
    clock,
    cost,
    events,
    dropped,
    lam,
    nu,
    smax,
    B,
    horizon,
    policy_code,
    tables,
    last_req,
    counts,
    trace_mode,
    trace_times,
    trace_ids,
    trace_ptr,
    u,
    occupancy,
    arrivals,
    departures,
):
    """Run until the horizon or until the pre-drawn rows run out.

    One row of u per resolved iteration: u[r, 0] is a unit-rate exponential
    variate (transformed by the caller so this loop stays pure arithmetic),
    u[r, 1] picks the event, u[r, 2:] reshuffles the random policy's slate.
    Returns (clock, cost, events, dropped, trace_ptr, rows_used, done).
    """
    m_count = queues.shape[0]
    rows = u.shape[0]
    r = 0
    while True:
        if clock >= horizon:
            return clock, cost, events, dropped, trace_ptr, r, True
        dep_total = 0.0
        for m in range(m_count):
            if active[m] == 1:
                dep_total += nu[m] * queues[m]
        if trace_mode == 0:
            arr_total = 0.0
            for m in range(m_count):
                if queues[m] < smax[m]:
                    arr_total += lam[m]
            total = arr_total + dep_total
            if total <= 0.0:
                s_sum = 0.0
                for m in range(m_count):
                    occupancy[m, queues[m]] += horizon - clock
                    s_sum += queues[m]
                cost += (horizon - clock) * s_sum
                return horizon, cost, events, dropped, trace_ptr, r, True
            if r >= rows:
                return clock, cost, events, dropped, trace_ptr, r, False
            dt = u[r, 0] / total
            if clock + dt >= horizon:
                s_sum = 0.0
                for m in range(m_count):
                    occupancy[m, queues[m]] += horizon - clock
                    s_sum += queues[m]
                cost += (horizon - clock) * s_sum
                return horizon, cost, events, dropped, trace_ptr, r + 1, True
            s_sum = 0.0
            for m in range(m_count):
                occupancy[m, queues[m]] += dt
                s_sum += queues[m]
            cost += dt * s_sum
            clock += dt
            x = u[r, 1] * total
            acc = 0.0
            target = -1
            is_arrival = True
            for m in range(m_count):
                if queues[m] < smax[m]:
                    acc += lam[m]
                    if x < acc:
                        target = m
                        break
            if target < 0:
                is_arrival = False
                for m in range(m_count):
                    if active[m] == 1:
                        acc += nu[m] * queues[m]
                        if x < acc:
                            target = m
                            break
                if target < 0:  # x landed on total due to roundoff
                    for m in range(m_count - 1, -1, -1):
                        if active[m] == 1 and queues[m] > 0:
                            target = m
                            break
                if target < 0:  # only arrivals were possible
                    is_arrival = True
                    for m in range(m_count - 1, -1, -1):
                        if queues[m] < smax[m]:
                            target = m
                            break
            if is_arrival:
                queues[target] += 1
                arrivals[target] += 1
                last_req[target] = clock
                counts[target] += 1.0
            else:
                queues[target] -= 1
                departures[target] += 1
            events += 1
        else:
            next_arr = np.inf
            if trace_ptr < trace_times.shape[0]:
                next_arr = trace_times[trace_ptr]
            if dep_total <= 0.0 and next_arr >= horizon:
                s_sum = 0.0
                for m in range(m_count):
                    occupancy[m, queues[m]] += horizon - clock
                    s_sum += queues[m]
                cost += (horizon - clock) * s_sum
                return horizon, cost, events, dropped, trace_ptr, r, True
            if r >= rows:
                return clock, cost, events, dropped, trace_ptr, r, False
            if dep_total > 0.0:
                dt = u[r, 0] / dep_total
            else:
                dt = np.inf
            if clock + dt < next_arr and clock + dt < horizon:
                s_sum = 0.0
                for m in range(m_count):
                    occupancy[m, queues[m]] += dt
                    s_sum += queues[m]
                cost += dt * s_sum
                clock += dt
                x = u[r, 1] * dep_total
                acc = 0.0
                target = -1
                for m in range(m_count):
                    if active[m] == 1:
                        acc += nu[m] * queues[m]
                        if x < acc:
                            target = m
                            break
                if target < 0:
                    for m in range(m_count - 1, -1, -1):
                        if active[m] == 1 and queues[m] > 0:
                            target = m
                            break
                queues[target] -= 1
                departures[target] += 1
                events += 1
            elif next_arr < horizon:
                step = next_arr - clock
                s_sum = 0.0
                for m in range(m_count):
                    occupancy[m, queues[m]] += step
                    s_sum += queues[m]
                cost += step * s_sum
                clock = next_arr
                target = trace_ids[trace_ptr]
                trace_ptr += 1
                last_req[target] = clock
                counts[target] += 1.0
                if queues[target] < smax[target]:
                    queues[target] += 1
                    arrivals[target] += 1
                    events += 1
                else:
                    dropped += 1
                    r += 1
                    continue  # no state change: keep the current slate
            else:
                s_sum = 0.0
                for m in range(m_count):
                    occupancy[m, queues[m]] += horizon - clock
                    s_sum += queues[m]
                cost += (horizon - clock) * s_sum
                return horizon, cost, events, dropped, trace_ptr, r + 1, True
        # re-select the cache slate at the state change
        take = B if B < m_count else m_count
        for m in range(m_count):
            active[m] = 0
        if policy_code == RANDOM:
            ids = np.arange(m_count)
            for i in range(take):
                j = i + int(u[r, 2 + i] * (m_count - i))
                tmp = ids[i]
                ids[i] = ids[j]
                ids[j] = tmp
            for i in range(take):
                active[ids[i]] = 1
        else:
            chosen = np.zeros(m_count, dtype=np.uint8)
            for _ in range(take):
                best = -1
                best_score = 0.0
                for m in range(m_count):
                    if chosen[m] == 1:
                        continue
                    if policy_code == INDEX:
                        score = tables[m, queues[m]]
                        if score == -np.inf:  # opted out of caching here
                            continue
                    elif policy_code == LRU:
                        score = last_req[m]
                    else:
                        score = counts[m]
                    if best < 0 or score > best_score:
                        best = m
                        best_score = score
                if best < 0:
                    break
                chosen[best] = 1
                active[best] = 1
        r += 1


# ---------------------------------------------------------------------------
# episodes


def _policy_code(policy) -> int:
    if isinstance(policy, IndexPolicy):
        return INDEX
    if isinstance(policy, LruPolicy):
        return LRU
    if isinstance(policy, LfuPolicy):
        return LFU
    if isinstance(policy, RandomPolicy):
        return RANDOM
    raise ValueError(f"unknown policy object {policy!r}")


def _padded_tables(policy, config: SystemConfig) -> np.ndarray:
    width = int(config.s_max.max()) + 1
    out = np.zeros((config.n_contents, width))
    if isinstance(policy, IndexPolicy):
        for m, table in enumerate(policy.tables):
            if table.shape != (config.s_max[m] + 1,):
                raise ValueError(
                    f"content {m}: index table covers {table.shape[0]} states, "
                    f"need {config.s_max[m] + 1}"
                )
            out[m, : table.size] = table
    return out


def run_episode(
    config: SystemConfig,
    horizon: float,
    policy,
    seed: int,
    *,
    trace: Optional[tuple] = None,
    initial_queues=None,
    compiled: bool = True,
    chunk_rows: int = _CHUNK_ROWS,
) -> Metrics:
    """Simulate [0, horizon) and return exact time-averaged metrics.

    `trace`, if given, is (times, content_ids) driving arrivals by replay
    (service clocks stay exponential; arrivals into full queues are
    dropped and counted). If at some instant nothing can move, the state
    simply holds to the horizon -- the cost integral stays exact -- so a
    no-arrivals configuration just accrues the initial backlog forever;
    only `next_event` treats a dead system as an error.

    The pure-Python path (compiled=False) consumes the identical uniform
    stream and must produce the identical trajectory; it exists as a
    readable reference and as the cross-check in the tests.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    m_count = config.n_contents
    policy.reset(m_count)
    code = _policy_code(policy)
    tables = _padded_tables(policy, config)
    rng = np.random.default_rng(seed)
    take = min(config.B, m_count)

    if initial_queues is None:
        queues = np.zeros(m_count, dtype=np.int64)
    else:
        queues = np.asarray(initial_queues, dtype=np.int64).copy()
        if queues.shape != (m_count,):
            raise ValueError("initial_queues must give one length per content")
        if (queues < 0).any() or (queues > config.s_max).any():
            raise ValueError("initial queue lengths must lie in [0, s_max]")
    active = np.zeros(m_count, dtype=np.int64)
    last_req = np.full(m_count, -1.0)
    counts = np.zeros(m_count)
    # initial slate at t=0, before any event
    if code == RANDOM:
        initial = _random_subset(rng.random(take), m_count, take)
    elif code == INDEX:
        initial = _top_b(
            np.array([t[s] for t, s in zip(policy.tables, queues)]), config.B
        )
    elif code == LRU:
        initial = _top_b(last_req, config.B)
    else:
        initial = _top_b(counts, config.B)
    for m in initial:
        active[m] = 1

    if trace is None:
        trace_mode = 0
        trace_times = np.empty(0)
        trace_ids = np.empty(0, dtype=np.int64)
    else:
        trace_mode = 1
        trace_times = np.asarray(trace[0], dtype=np.float64)
        trace_ids = np.asarray(trace[1], dtype=np.int64)
        if trace_ids.size and (trace_ids.min() < 0 or trace_ids.max() >= m_count):
            raise ValueError("trace content ids out of range for this config")

    width = int(config.s_max.max()) + 1
    occupancy = np.zeros((m_count, width))
    arrivals = np.zeros(m_count, dtype=np.int64)
    departures = np.zeros(m_count, dtype=np.int64)
    stride = 2 + (take if code == RANDOM else 0)
    clock, cost, events, dropped, ptr = 0.0, 0.0, 0, 0, 0

    step = _episode_kernel if compiled else _episode_reference
    while True:
        u = rng.random((chunk_rows, stride))
        # holding times as unit exponentials up front, so the event loop is
        # pure arithmetic and compiles to the exact same floats as python
        u[:, 0] = -np.log1p(-u[:, 0])
        clock, cost, events, dropped, ptr, _, done = step(
            queues, active, clock, cost, events, dropped,
            config.lams, config.nus, config.s_max, config.B, float(horizon),
            code, tables, last_req, counts,
            trace_mode, trace_times, trace_ids, ptr,
            u, occupancy, arrivals, departures,
        )
        if done:
            break

    if isinstance(policy, LruPolicy):
        policy.last_request = last_req
    elif isinstance(policy, LfuPolicy):
        policy.counts = counts
    return Metrics(
        policy=policy.kind,
        seed=seed,
        accumulated_cost=cost,
        average_cost=cost / horizon,
        events=events,
        occupancy=occupancy,
        arrivals=arrivals,
        departures=departures,
        dropped=dropped,
    )


def _episode_reference(
    queues, active, clock, cost, events, dropped, lam, nu, smax, B, horizon,
    policy_code, tables, last_req, counts, trace_mode, trace_times, trace_ids,
    trace_ptr, u, occupancy, arrivals, departures,
):
    """Pure-Python twin of _episode_kernel (same signature, same stream)."""
    return _episode_kernel.py_func(
        queues, active, clock, cost, events, dropped, lam, nu, smax, B, horizon,
        policy_code, tables, last_req, counts, trace_mode, trace_times, trace_ids,
        trace_ptr, u, occupancy, arrivals, departures,
    )


def run_comparison(
    config: SystemConfig,
    horizon: float,
    policies: Sequence,
    seeds: Sequence[int],
    *,
    trace: Optional[tuple] = None,
) -> ComparisonResult:
    """run_episode over the (policy, seed) grid plus per-policy aggregates.

    Seeds are shared across policies (paired comparison); the standard
    error is over seeds, 0.0 when only one seed is given.
    """
    if len(seeds) == 0:
        raise ValueError("need at least one seed")
    rows = []
    aggregates = []
    for policy in policies:
        costs = []
        for seed in seeds:
            metrics = run_episode(config, horizon, policy, int(seed), trace=trace)
            rows.append(metrics)
            costs.append(metrics.accumulated_cost)
        costs = np.array(costs)
        stderr = float(costs.std(ddof=1) / np.sqrt(costs.size)) if costs.size > 1 else 0.0
        aggregates.append(
            PolicyAggregate(
                policy=policy.kind,
                n=costs.size,
                mean_accumulated_cost=float(costs.mean()),
                stderr_accumulated_cost=stderr,
                mean_average_cost=float(costs.mean() / horizon),
            )
        )
    return ComparisonResult(rows=rows, aggregates=aggregates)

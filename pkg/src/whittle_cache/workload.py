"""Workload construction: skewed synthetic rates and trace-file ingestion.

A Workload is just a vector of per-content Poisson arrival rates with
labels. Synthetic workloads follow a power-law popularity profile over
popularity ranks; recorded workloads come from a request log in the trace
CSV format (header ``timestamp,content_id``, ``#`` comment lines ignored,
timestamps non-decreasing), with per-content rates estimated as request
count over the global time span of the log.

There is no canonical total request rate for synthetic workloads, so
`zipf_workload` takes it explicitly; 0.8 * nu * B keeps the relaxed
system stable and is the documented default used by the CLI.
"""

from dataclasses import dataclass
from typing import Iterable, TextIO, Union

import numpy as np

from .errors import EmptyTrace, NonMonotonicTimestamps

TRACE_HEADER = "timestamp,content_id"


@dataclass
class Workload:
    """Per-content arrival rates; labels give the content ids they belong to."""

    rates: np.ndarray
    labels: np.ndarray
    source: str

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.rates.shape != self.labels.shape or self.rates.ndim != 1:
            raise ValueError("rates and labels must be matching 1-d arrays")
        if self.rates.size == 0:
            raise ValueError("a workload needs at least one content")
        if not (self.rates > 0).all() or not np.isfinite(self.rates).all():
            raise ValueError("all arrival rates must be positive and finite")

    @property
    def n_contents(self) -> int:
        return self.rates.size

    @property
    def total_rate(self) -> float:
        return float(self.rates.sum())


def zipf_workload(M: int, kappa: float, total_rate: float) -> Workload:
    """Rates proportional to rank^-kappa over ranks 1..M, summing to total_rate.

    kappa=0 degenerates to uniform rates; content id m-1 carries rank m.
    """
    if M < 1:
        raise ValueError(f"need at least one content, got M={M}")
    if kappa < 0:
        raise ValueError(f"popularity exponent must be >= 0, got {kappa}")
    if not total_rate > 0 or not np.isfinite(total_rate):
        raise ValueError(f"total_rate must be positive and finite, got {total_rate}")
    weights = np.arange(1, M + 1, dtype=np.float64) ** -kappa
    rates = total_rate * weights / weights.sum()
    return Workload(
        rates=rates,
        labels=np.arange(M),
        source=f"zipf(M={M}, kappa={kappa}, total_rate={total_rate})",
    )


@dataclass
class TraceEvents:
    """A parsed (or generated) request log, sorted by timestamp."""

    times: np.ndarray
    content_ids: np.ndarray
    malformed: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.content_ids = np.asarray(self.content_ids, dtype=np.int64)
        if self.times.shape != self.content_ids.shape or self.times.ndim != 1:
            raise ValueError("times and content_ids must be matching 1-d arrays")

    @property
    def n_events(self) -> int:
        return self.times.size

    @property
    def span(self) -> float:
        return float(self.times[-1] - self.times[0]) if self.n_events else 0.0


def parse_trace(reader: Union[TextIO, Iterable[str]]) -> tuple:
    """Read a trace CSV and estimate per-content rates from it.

    Returns (TraceEvents, Workload). Malformed lines (wrong field count,
    unparseable or negative values) are counted on the TraceEvents rather
    than aborting the parse; a decreasing timestamp aborts with the line
    number since replay order would be meaningless. Rates are request
    counts over the global first-to-last time span, so every content that
    appears gets a positive rate.
    """
    times, ids = [], []
    malformed = 0
    previous = None
    seen_header = False
    for line_number, raw in enumerate(reader, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if not seen_header and line == TRACE_HEADER:
            seen_header = True
            continue
        parts = line.split(",")
        if len(parts) != 2:
            malformed += 1
            continue
        try:
            t = float(parts[0])
            cid = int(parts[1])
        except ValueError:
            malformed += 1
            continue
        if not np.isfinite(t) or t < 0 or cid < 0:
            malformed += 1
            continue
        if previous is not None and t < previous:
            raise NonMonotonicTimestamps(line_number, t, previous)
        previous = t
        times.append(t)
        ids.append(cid)
    if not times:
        raise EmptyTrace("no parseable events in trace input")
    events = TraceEvents(
        times=np.array(times), content_ids=np.array(ids), malformed=malformed
    )
    if events.span <= 0:
        raise ValueError(
            "all requests share one timestamp; rates need a positive time span"
        )
    labels, counts = np.unique(events.content_ids, return_counts=True)
    workload = Workload(
        rates=counts / events.span, labels=labels, source="trace"
    )
    return events, workload


def poisson_trace(workload: Workload, horizon: float, rng=None) -> TraceEvents:
    """Sample a request log from the workload's independent Poisson streams.

    Uses the superposition construction: event count ~ Poisson(total rate x
    horizon), times uniform on [0, horizon) sorted, each event labeled
    proportionally to the rates. Feeding the result back through
    `parse_trace` recovers the rates up to sampling error.
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    rng = np.random.default_rng(rng)
    n = rng.poisson(workload.total_rate * horizon)
    times = np.sort(rng.uniform(0.0, horizon, size=n))
    ids = rng.choice(workload.labels, size=n, p=workload.rates / workload.total_rate)
    return TraceEvents(times=times, content_ids=ids)


def write_trace(events: TraceEvents, fh: TextIO, comments: Iterable[str] = ()) -> None:
    """Emit the trace CSV (repr-exact timestamps, LF endings)."""
    for comment in comments:
        fh.write(f"# {comment}\n")
    fh.write(TRACE_HEADER + "\n")
    for t, cid in zip(events.times, events.content_ids):
        fh.write(f"{float(t)!r},{int(cid)}\n")


def average_active_contents(events: TraceEvents) -> float:
    """Time-averaged number of simultaneously active contents.

    A content counts as active between its first and last request, so the
    average is the total activity-interval length over the log's span.
    Useful as a cache-size (B) heuristic for replayed logs.
    """
    if events.n_events == 0:
        raise EmptyTrace("cannot measure activity of an empty trace")
    if events.span <= 0:
        return 0.0
    order = events.content_ids
    firsts, lasts = {}, {}
    for t, cid in zip(events.times, order):
        cid = int(cid)
        if cid not in firsts:
            firsts[cid] = t
        lasts[cid] = t
    widths = sum(lasts[c] - firsts[c] for c in firsts)
    return float(widths / events.span)

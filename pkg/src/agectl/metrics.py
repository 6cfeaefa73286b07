"""Offline evaluation: age, delay, throughput, fairness.

The central object is the age sawtooth: instantaneous age grows at slope
one and drops to (receive_time - gen_ts) whenever a fresher update lands.
In simulation the drop value is the one-way delivery delay; over real
sockets only the source clock is trusted, so the round-trip time stands in
for it and the same sawtooth is built from the source's ACK log.
"""

import math
from dataclasses import dataclass

DEFAULT_WARMUP_FRAC = 0.10


@dataclass(frozen=True)
class AgeTrace:
    """Piecewise-linear age sawtooth.

    breakpoints: time-ordered (time, age) pairs; between consecutive
    entries the age is breakpoints[i].age + (t - breakpoints[i].time).
    The first entry anchors the trajectory at the start of the horizon.
    """

    breakpoints: tuple

    def age_at(self, t: float) -> float:
        if not self.breakpoints or t < self.breakpoints[0][0]:
            raise ValueError(f"time {t} precedes the trace anchor")
        ref_t, ref_a = self.breakpoints[0]
        for bt, ba in self.breakpoints:
            if bt > t:
                break
            ref_t, ref_a = bt, ba
        return ref_a + (t - ref_t)


def default_horizon(t_begin: float, t_end: float, warmup_frac: float = DEFAULT_WARMUP_FRAC):
    """Trim the leading warm-up fraction of a run."""
    return (t_begin + warmup_frac * (t_end - t_begin), t_end)


def age_trace_from_deliveries(log, horizon) -> AgeTrace:
    """Sawtooth from monitor deliveries: resets to r - g at each receive.

    log: time-ordered (receive_time, gen_ts_seconds) with strictly
    increasing gen_ts (the monitor already filtered staleness). The age at
    the horizon start continues the trajectory of the freshest update
    delivered before it; before any delivery it ramps from the first
    update's generation.
    """
    if not log:
        raise ValueError("empty delivery log")
    t0, t1 = horizon
    if t1 <= t0:
        raise ValueError("empty horizon")
    freshest_gen = None
    points = []
    for r, g in log:
        if r <= t0:
            freshest_gen = g
            continue
        if r > t1:
            break
        points.append((r, r - g))
    if freshest_gen is None:
        freshest_gen = log[0][1]  # ramp from the first generation instant
    anchor_age = t0 - freshest_gen
    if anchor_age < 0:
        raise ValueError("horizon starts before the first update was generated")
    return AgeTrace(breakpoints=tuple([(t0, anchor_age)] + points))


def age_trace_from_rtt_samples(ack_log, horizon) -> AgeTrace:
    """Sawtooth from the source's ACK log: resets to the RTT sample.

    ack_log: time-ordered (ack_time, rtt_seconds). This is the round-trip
    approximation of age used when only the source clock is available.
    """
    return age_trace_from_deliveries([(t, t - rtt) for t, rtt in ack_log], horizon)


def time_average_age(trace: AgeTrace, horizon=None) -> float:
    """Exact trapezoid integral of the sawtooth divided by the horizon."""
    pts = trace.breakpoints
    if horizon is None:
        horizon = (pts[0][0], pts[-1][0])
    t0, t1 = horizon
    if t1 <= t0:
        raise ValueError("empty horizon")
    if t0 < pts[0][0]:
        raise ValueError("trace does not cover the horizon start")
    total = 0.0
    t, age = t0, trace.age_at(t0)
    for bt, ba in pts:
        if bt <= t0:
            continue
        if bt >= t1:
            break
        d = bt - t
        total += age * d + 0.5 * d * d
        t, age = bt, ba
    d = t1 - t
    total += age * d + 0.5 * d * d
    return total / (t1 - t0)


def step_average(steps, t0: float, t1: float) -> float:
    """Time-weighted mean of a step function given as (time, value) pairs.

    The value at t0 is the last step at or before t0 (0 if none).
    """
    if t1 <= t0:
        raise ValueError("empty horizon")
    total = 0.0
    t = t0
    level = 0.0
    for st, v in steps:
        if st <= t0:
            level = v
            continue
        if st >= t1:
            break
        total += level * (st - t)
        t, level = st, v
    total += level * (t1 - t)
    return total / (t1 - t0)


def jain_fairness(values) -> float:
    """(sum x)^2 / (n * sum x^2); 1.0 means perfect equality."""
    values = list(values)
    if not values:
        raise ValueError("no values")
    if any(v < 0 for v in values):
        raise ValueError("values must be non-negative")
    sq = sum(v * v for v in values)
    if sq == 0:
        raise ValueError("all values are zero")
    s = sum(values)
    return (s * s) / (len(values) * sq)


@dataclass(frozen=True)
class SummaryStats:
    avg_age: float  # seconds; nan when nothing was delivered
    avg_delay: float
    throughput: float  # payload bits per second
    avg_inter_delivery: float
    delivered_count: int
    loss_fraction: float


def summarize(monitor_log, horizon, payload_bytes: int, sent_count=None) -> SummaryStats:
    """Run-level statistics over one source's deliveries within a horizon.

    monitor_log: (receive_time, seq, gen_ts_seconds) rows. sent_count, when
    known exactly, overrides the sequence-span estimate; superseded or lost
    updates count as losses either way.
    """
    t0, t1 = horizon
    rows = [row for row in monitor_log if t0 <= row[0] <= t1]
    if not rows:
        return SummaryStats(
            avg_age=math.nan, avg_delay=math.nan, throughput=0.0,
            avg_inter_delivery=math.nan, delivered_count=0, loss_fraction=math.nan,
        )
    delivered = len(rows)
    delays = [r - g for r, _, g in rows]
    avg_delay = sum(delays) / delivered
    throughput = delivered * payload_bytes * 8 / (t1 - t0)
    if delivered > 1:
        avg_inter_delivery = (rows[-1][0] - rows[0][0]) / (delivered - 1)
    else:
        avg_inter_delivery = math.nan
    # build the trace from the full log so the pre-horizon trajectory anchors it
    trace = age_trace_from_deliveries([(r, g) for r, _, g in monitor_log], (t0, t1))
    avg_age = time_average_age(trace, (t0, t1))
    if sent_count is None:
        sent_count = rows[-1][1] - rows[0][1] + 1  # seq span within the horizon
    loss_fraction = 1.0 - delivered / sent_count if sent_count else math.nan
    return SummaryStats(
        avg_age=avg_age,
        avg_delay=avg_delay,
        throughput=throughput,
        avg_inter_delivery=avg_inter_delivery,
        delivered_count=delivered,
        loss_fraction=loss_fraction,
    )

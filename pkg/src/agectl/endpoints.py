"""Protocol actors: update sources and the acknowledging monitor.

Each endpoint is a single logical event loop consuming time-ordered events
(timer fired, packet in). The caller owns scheduling: it asks `timers()`
for pending deadlines, calls `fire(kind, now)` when one expires, and
`on_ack(...)` when a datagram arrives. Both calls return the updates to
transmit, so the same state machines run unchanged under the discrete
event simulator and over real sockets.

Backlog is the set of updates sent but not yet acknowledged or superseded.
An in-sequence ACK for seq n clears everything up to n: the monitor
discards out-of-sequence arrivals, so an older in-flight update can never
contribute to freshness once n is acknowledged.
"""

import logging
from collections import deque
from dataclasses import replace

from .controller import (
    ControlInputs,
    ControllerState,
    control_step,
    epoch_length,
    epoch_log_row,
    update_lambda,
)
from .estimation import DEFAULT_SMOOTHING, EpochWindow, NetworkEstimator, NoSamples
from .wire import DEFAULT_PAYLOAD_BYTES, AckPacket, UpdatePacket

log = logging.getLogger(__name__)

# timer kinds handed back by timers()
SEND = "send"
EPOCH = "epoch"
FALLBACK = "fallback"

MODE_ACP_PLUS = "acp+"
MODE_LAZY = "lazy"
MODE_CONSTANT = "constant"

DEFAULT_BOOTSTRAP_RATE = 1.0  # updates/s until the first RTT sample exists
DEFAULT_INITIAL_TIMEOUT = 1.0  # lazy resend guard before any RTT estimate


class Monitor:
    """Receives updates, discards stale ones, acknowledges the rest."""

    def __init__(self):
        self.highest_seq_received = None
        self.delivery_log = []  # (receive_time, seq, gen_ts_ns)
        self.discarded = 0

    def on_update(self, pkt: UpdatePacket, now: float):
        """Return the ACK to send, or None for an out-of-sequence update."""
        if self.highest_seq_received is not None and pkt.seq <= self.highest_seq_received:
            self.discarded += 1
            return None
        self.highest_seq_received = pkt.seq
        self.delivery_log.append((now, pkt.seq, pkt.gen_ts))
        return AckPacket(seq=pkt.seq, gen_ts=pkt.gen_ts)


class SourceBase:
    """Shared bookkeeping: sequence space, backlog, estimates, logs."""

    mode = None

    def __init__(self, payload_bytes=DEFAULT_PAYLOAD_BYTES, alpha=DEFAULT_SMOOTHING):
        self.payload_bytes = payload_bytes
        self.next_seq = 0
        self.outstanding = deque()  # (seq, gen_ts_seconds), ascending seq
        self.highest_acked_seq = None
        self.estimator = NetworkEstimator(alpha)
        self.backlog_trace = []  # (time, backlog) over the whole session
        self.ack_log = []  # (ack_time, seq, rtt_seconds)
        self.epoch_rows = []
        self.violations = 0
        self.discarded_acks = 0
        self.first_send_time = None

    @property
    def backlog(self) -> int:
        return len(self.outstanding)

    def start(self, now: float) -> list:
        raise NotImplementedError

    def timers(self) -> list:
        """Pending (kind, deadline) pairs the driver must schedule."""
        raise NotImplementedError

    def fire(self, kind: str, now: float) -> list:
        raise NotImplementedError

    def _emit(self, now: float) -> UpdatePacket:
        pkt = UpdatePacket(
            seq=self.next_seq,
            gen_ts=round(now * 1e9),
            payload=bytes(self.payload_bytes),
        )
        self.next_seq += 1
        if self.first_send_time is None:
            self.first_send_time = now
        self.outstanding.append((pkt.seq, now))
        self._backlog_changed(now)
        return pkt

    def _backlog_changed(self, now: float) -> None:
        self.backlog_trace.append((now, len(self.outstanding)))

    def on_ack(self, ack: AckPacket, now: float) -> list:
        """Consume an ACK; returns updates to transmit in response (if any)."""
        if ack.seq >= self.next_seq:
            self.violations += 1
            log.warning("ack for never-sent seq %d discarded", ack.seq)
            return []
        if self.highest_acked_seq is not None and ack.seq <= self.highest_acked_seq:
            self.discarded_acks += 1
            return []
        gen_seconds = ack.gen_ts / 1e9
        self.estimator.record_ack(now, gen_seconds)
        rtt = now - gen_seconds
        self.ack_log.append((now, ack.seq, rtt))
        while self.outstanding and self.outstanding[0][0] <= ack.seq:
            self.outstanding.popleft()
        self.highest_acked_seq = ack.seq
        self._backlog_changed(now)
        return self._after_ack(now, rtt)

    def _after_ack(self, now: float, rtt: float) -> list:
        return []


class ConstantSource(SourceBase):
    """Fixed-rate generate-at-will source."""

    mode = MODE_CONSTANT

    def __init__(self, rate: float, **kw):
        super().__init__(**kw)
        if rate <= 0:
            raise ValueError(f"rate must be positive, got {rate}")
        self.rate = rate
        self.next_send_time = None

    def start(self, now: float) -> list:
        pkt = self._emit(now)
        self.next_send_time = now + 1.0 / self.rate
        return [pkt]

    def timers(self):
        return [(SEND, self.next_send_time)] if self.next_send_time is not None else []

    def fire(self, kind, now):
        assert kind == SEND
        pkt = self._emit(now)
        self.next_send_time = now + 1.0 / self.rate
        return [pkt]


class LazySource(SourceBase):
    """One update per round trip: send when the pipe empties.

    A fresh update goes out whenever an in-sequence ACK clears the backlog;
    a guard timer of one smoothed RTT after the last send replaces updates
    whose ACKs never show up, so the source keeps about one update in
    flight.
    """

    mode = MODE_LAZY

    def __init__(self, initial_timeout=DEFAULT_INITIAL_TIMEOUT, **kw):
        super().__init__(**kw)
        self.initial_timeout = initial_timeout
        self.fallback_time = None

    def _guard_delay(self) -> float:
        rtt = self.estimator.rtt_bar
        return rtt if rtt is not None else self.initial_timeout

    def start(self, now: float) -> list:
        pkt = self._emit(now)
        self.fallback_time = now + self._guard_delay()
        return [pkt]

    def timers(self):
        return [(FALLBACK, self.fallback_time)] if self.fallback_time is not None else []

    def fire(self, kind, now):
        assert kind == FALLBACK
        pkt = self._emit(now)
        self.fallback_time = now + self._guard_delay()
        return [pkt]

    def _after_ack(self, now, rtt):
        out = []
        if not self.outstanding:
            out.append(self._emit(now))
        self.fallback_time = now + self._guard_delay()
        return out


class AcpPlusSource(SourceBase):
    """Rate-adaptive source driven by the epoch controller.

    One update goes out immediately at session start; the first ACK seeds
    the rate at one update per measured round trip and opens the first
    measurement epoch. Before that the source ticks at a conservative
    bootstrap rate, and epochs without any ACK log a hold row and leave the
    rate untouched.
    """

    mode = MODE_ACP_PLUS

    def __init__(self, bootstrap_rate=DEFAULT_BOOTSTRAP_RATE, **kw):
        super().__init__(**kw)
        self.rate = bootstrap_rate
        self.in_bootstrap = True
        self.controller_state = None
        self.epoch_window = None
        self.next_send_time = None
        self.next_epoch_time = None

    def start(self, now: float) -> list:
        self.controller_state = ControllerState(rate=self.rate, epoch_start=now)
        self.epoch_window = EpochWindow(
            epoch_start=now, anchor_time=now, anchor_age=0.0, backlog_at_start=0
        )
        pkt = self._emit(now)
        self.next_send_time = now + 1.0 / self.rate
        self.next_epoch_time = now + epoch_length(self.rate)
        return [pkt]

    def timers(self):
        out = []
        if self.next_send_time is not None:
            out.append((SEND, self.next_send_time))
        if self.next_epoch_time is not None:
            out.append((EPOCH, self.next_epoch_time))
        return out

    def _backlog_changed(self, now):
        super()._backlog_changed(now)
        if self.epoch_window is not None:
            self.epoch_window.set_backlog(now, len(self.outstanding))

    def fire(self, kind, now):
        if kind == SEND:
            pkt = self._emit(now)
            self.next_send_time = now + 1.0 / self.rate
            return [pkt]
        assert kind == EPOCH
        self._close_epoch(now)
        return []

    def _after_ack(self, now, rtt):
        if self.in_bootstrap:
            # first RTT sample: adopt one update per round trip and start
            # epoch accounting from here
            self.in_bootstrap = False
            self.rate = 1.0 / self.estimator.rtt_bar
            self.controller_state = ControllerState(rate=self.rate, epoch_start=now)
            self.epoch_window = EpochWindow(
                epoch_start=now,
                anchor_time=self.first_send_time,
                anchor_age=0.0,
                backlog_at_start=len(self.outstanding),
            )
            self.next_send_time = now + 1.0 / self.rate
            self.next_epoch_time = now + epoch_length(self.rate)
        self.epoch_window.add_ack(now, rtt)
        return []

    def _close_epoch(self, now):
        state = self.controller_state
        k = state.epoch_index
        try:
            age_avg = self.epoch_window.age_average(now)
            backlog_avg = self.epoch_window.backlog_average(now)
        except NoSamples:
            # stalled epoch: reuse the previous averages so control keeps acting
            age_avg = state.prev_age_avg
            backlog_avg = state.prev_backlog_avg

        if age_avg is None or not self.estimator.ready:
            action_str, b_star, b_k, delta_k = "hold", 0.0, 0.0, 0.0
            new_state = state
        elif state.prev_age_avg is None:
            action_str, b_star, b_k, delta_k = "init", 0.0, 0.0, 0.0
            new_state = state
        else:
            inputs = ControlInputs(
                b_k=backlog_avg - state.prev_backlog_avg,
                delta_k=age_avg - state.prev_age_avg,
                backlog_avg=backlog_avg,
            )
            action, new_state = control_step(state, inputs)
            self.rate = update_lambda(
                state.rate, self.estimator.z_bar, self.estimator.rtt_bar,
                action.target_backlog_change,
            )
            self.next_send_time = now + 1.0 / self.rate
            action_str, b_star = str(action), action.target_backlog_change
            b_k, delta_k = inputs.b_k, inputs.delta_k

        self.controller_state = replace(
            new_state,
            rate=self.rate,
            epoch_index=k + 1,
            epoch_start=now,
            prev_age_avg=age_avg,
            prev_backlog_avg=backlog_avg,
        )
        self.epoch_window = self.epoch_window.roll(now)
        self.next_epoch_time = now + epoch_length(self.rate)
        self.epoch_rows.append(
            epoch_log_row(
                k, now, self.rate, action_str, b_star, b_k, delta_k,
                self.controller_state.flag, self.controller_state.gamma,
            )
        )


def make_source(mode: str, **kw) -> SourceBase:
    """Build a source from a mode string: acp+ | lazy | constant:<rate>."""
    if mode == MODE_ACP_PLUS:
        return AcpPlusSource(**kw)
    if mode == MODE_LAZY:
        return LazySource(**kw)
    if mode.startswith(MODE_CONSTANT):
        _, _, rate = mode.partition(":")
        if not rate:
            raise ValueError("constant mode needs a rate, e.g. constant:100")
        return ConstantSource(rate=float(rate), **kw)
    raise ValueError(f"unknown source mode {mode!r}")

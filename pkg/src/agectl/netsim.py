"""Deterministic discrete-event simulation of end-to-end update paths.

Topology: every source's updates cross an optional shared multiaccess
uplink (slotted contention with binary exponential backoff) and then a
tandem of FCFS store-and-forward stations to the monitor. ACKs return
through the same stations in the reverse direction (each direction has its
own queue), plus an uncontended downlink when a multiaccess hop is
present; alternatively the config can declare an instantaneous reverse
path to isolate forward effects.

Every random stream is derived from (seed, entity id), so adding a source
or station never perturbs the draws of the others, and identical
(config, seed) pairs replay identical event traces.
"""

import heapq
import math
import random
from collections import deque
from dataclasses import dataclass

from .endpoints import EPOCH, SEND, Monitor, SourceBase, make_source
from .metrics import (
    age_trace_from_deliveries,
    default_horizon,
    step_average,
    time_average_age,
)
from .wire import ACK_SIZE, UPDATE_HEADER_SIZE

# event priorities at equal timestamps: packets move first, then the
# contention slot machinery, then epoch closings, then send/guard timers
PRIO_PACKET = 0
PRIO_SLOT = 1
PRIO_EPOCH = 2
PRIO_TIMER = 3

DETERMINISTIC = "deterministic"
EXPONENTIAL = "exponential"

# event-trace record kinds
GENERATED = "generated"
ENQUEUED = "enqueued"
DROPPED = "dropped"
SERVICE_START = "service_start"
DELIVERED = "delivered"
ACK_DELIVERED = "ack_delivered"


class EventQueue:
    """Global clock plus a priority event heap."""

    def __init__(self):
        self._heap = []
        self._count = 0
        self.now = 0.0

    def push(self, time, priority, fn, *args):
        self._count += 1
        heapq.heappush(self._heap, (time, priority, self._count, fn, args))

    def run_until(self, t_end):
        heap = self._heap
        while heap and heap[0][0] <= t_end:
            time, _, _, fn, args = heapq.heappop(heap)
            self.now = time
            fn(*args)
        self.now = t_end

    def drain(self):
        heap = self._heap
        while heap:
            time, _, _, fn, args = heapq.heappop(heap)
            self.now = time
            fn(*args)


@dataclass(frozen=True)
class StationConfig:
    """One hop: single FCFS server, optional finite buffer, then propagation."""

    service: str  # DETERMINISTIC or EXPONENTIAL
    rate: float  # bits/s; the mean for EXPONENTIAL service
    buffer: int | None = None  # packets including the one in service
    prop_delay: float = 0.0

    def __post_init__(self):
        if self.service not in (DETERMINISTIC, EXPONENTIAL):
            raise ValueError(f"unknown service kind {self.service!r}")
        if self.rate <= 0:
            raise ValueError("station rate must be positive")
        if self.buffer is not None and self.buffer < 1:
            raise ValueError("finite buffer must hold at least one packet")
        if self.prop_delay < 0:
            raise ValueError("propagation delay must be non-negative")


@dataclass(frozen=True)
class MultiaccessConfig:
    """Shared uplink: slotted persistence with binary exponential backoff."""

    link_rate: float = 12e6
    slot: float = 2e-5
    persistence: float = 0.25
    max_backoff_exp: int = 10
    per_source_loss: float = 0.0  # stand-in for channel (shadowing) losses

    def __post_init__(self):
        if not 0 < self.persistence <= 1:
            raise ValueError("persistence must be in (0, 1]")
        if self.slot <= 0:
            raise ValueError("slot must be positive")
        if not 0 <= self.per_source_loss < 1:
            raise ValueError("per_source_loss must be in [0, 1)")


@dataclass(frozen=True)
class SimConfig:
    stations: tuple
    n_sources: int = 1
    protocol: str = "acp+"  # one mode string, or comma list with one entry per source
    duration: float = 10.0
    seed: int = 0
    payload_bytes: int = 1024
    multiaccess: MultiaccessConfig | None = None
    ack_path: str = "symmetric"  # or "instant"
    alpha: float = 0.875
    bootstrap_rate: float = 1.0
    record_trace: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(self.stations))
        if not self.stations:
            raise ValueError("at least one station is required")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.n_sources < 1:
            raise ValueError("need at least one source")
        if self.ack_path not in ("symmetric", "instant"):
            raise ValueError(f"unknown ack_path {self.ack_path!r}")
        modes = self.protocol.split(",")
        if len(modes) not in (1, self.n_sources):
            raise ValueError("protocol must be one mode or one per source")

    def mode_for(self, src: int) -> str:
        modes = self.protocol.split(",")
        return modes[0] if len(modes) == 1 else modes[src]


class SimPacket:
    """Network-level envelope around a wire packet."""

    __slots__ = ("src", "seq", "bits", "wire", "is_update")

    def __init__(self, src, seq, bits, wire, is_update):
        self.src = src
        self.seq = seq
        self.bits = bits
        self.wire = wire
        self.is_update = is_update


class PoissonSource(SourceBase):
    """Memoryless generate-at-will source: exponential gaps at a fixed rate.

    Simulation-only load generator (mode string "poisson:<rate>"); it feeds
    the queueing experiments that assume Poisson update streams.
    """

    mode = "poisson"

    def __init__(self, rate, rng, **kw):
        super().__init__(**kw)
        if rate <= 0:
            raise ValueError(f"rate must be positive, got {rate}")
        self.rate = rate
        self.rng = rng
        self.next_send_time = None

    def start(self, now):
        pkt = self._emit(now)
        self.next_send_time = now + self.rng.expovariate(self.rate)
        return [pkt]

    def timers(self):
        return [(SEND, self.next_send_time)] if self.next_send_time is not None else []

    def fire(self, kind, now):
        assert kind == SEND
        pkt = self._emit(now)
        self.next_send_time = now + self.rng.expovariate(self.rate)
        return [pkt]


class StationQueue:
    """One direction of a station: FCFS single server with drop-tail buffer."""

    def __init__(self, evq, cfg: StationConfig, rng, sink, tracer=None, on_drop=None):
        self.evq = evq
        self.cfg = cfg
        self.rng = rng
        self.sink = sink  # sink(pkt) called at the instant the packet exits
        self.tracer = tracer
        self.on_drop = on_drop
        self.queue = deque()
        self.busy = False
        self.dropped = 0

    def accept(self, pkt):
        if self.cfg.buffer is not None and len(self.queue) >= self.cfg.buffer:
            self.dropped += 1
            if self.on_drop:
                self.on_drop(pkt)
            return
        self.queue.append(pkt)
        if self.tracer:
            self.tracer(ENQUEUED, pkt)
        if not self.busy:
            self._start()

    def _service_time(self, pkt):
        if self.cfg.service == DETERMINISTIC:
            return pkt.bits / self.cfg.rate
        return self.rng.expovariate(self.cfg.rate / pkt.bits)

    def _start(self):
        self.busy = True
        pkt = self.queue[0]
        if self.tracer:
            self.tracer(SERVICE_START, pkt)
        self.evq.push(self.evq.now + self._service_time(pkt), PRIO_PACKET, self._complete)

    def _complete(self):
        pkt = self.queue.popleft()
        if self.queue:
            self._start()
        else:
            self.busy = False
        if self.cfg.prop_delay > 0:
            self.evq.push(self.evq.now + self.cfg.prop_delay, PRIO_PACKET, self.sink, pkt)
        else:
            self.sink(pkt)


class MultiaccessChannel:
    """Shared uplink with per-source FIFO queues and slotted contention.

    A packet arriving to an idle channel with no other contender transmits
    at once. Otherwise each station holding a head-of-line packet attempts
    in a contention slot chosen as backoff-plus-geometric(persistence)
    idle slots ahead; the earliest attempt wins the channel and ties
    collide, after which each collider redraws with a binary-exponential
    backoff window. Collided packets are retried, never lost; the
    configured per-source loss is applied on successful transmissions
    instead. Slot countdowns freeze while the channel is busy.
    """

    def __init__(self, evq, cfg: MultiaccessConfig, n_sources, seed, sink,
                 tracer=None, on_drop=None):
        self.evq = evq
        self.cfg = cfg
        self.n = n_sources
        self.sink = sink  # sink(pkt) on successful (and not lost) transmission
        self.tracer = tracer
        self.on_drop = on_drop
        self.queues = [deque() for _ in range(n_sources)]
        self.attempts = [0] * n_sources
        self.target = {}  # station -> absolute grid slot of its next attempt
        self.rngs = [random.Random(f"{seed}/ma/{i}") for i in range(n_sources)]
        self.loss_rngs = [random.Random(f"{seed}/ma-loss/{i}") for i in range(n_sources)]
        self.busy_until = 0.0
        self.serial = 0  # invalidates scheduled attempt events on re-targeting
        self.access_delays = []  # enqueue-to-transmission-end, successes only
        self.collisions = 0
        self.lost = 0

    def accept(self, src, pkt):
        now = self.evq.now
        q = self.queues[src]
        fresh = not q
        q.append((pkt, now))
        if self.tracer:
            self.tracer(ENQUEUED, pkt)
        if not fresh:
            return  # not head of line yet; targeted when it gets there
        if now >= self.busy_until and not self.target:
            self._transmit([src])  # idle channel, sole contender: go now
        else:
            self.target[src] = self._slot_after(max(now, self.busy_until)) + self._geom(src)
            self._schedule_attempt()

    def _slot_after(self, t):
        return math.ceil(t / self.cfg.slot - 1e-9)

    def _geom(self, src):
        """Idle slots until a persistence-p station attempts (0-based)."""
        p = self.cfg.persistence
        if p >= 1.0:
            return 0
        u = 1.0 - self.rngs[src].random()  # (0, 1]
        return int(math.log(u) / math.log(1.0 - p))

    def _frame_time(self, bits):
        return bits / self.cfg.link_rate

    def _schedule_attempt(self):
        if not self.target:
            return
        self.serial += 1
        t = min(self.target.values())
        self.evq.push(t * self.cfg.slot, PRIO_SLOT, self._attempt, self.serial, t)

    def _attempt(self, serial, t):
        if serial != self.serial:
            return  # superseded by re-targeting
        senders = [i for i, ti in self.target.items() if ti == t]
        self._transmit(senders)

    def _transmit(self, senders):
        now = self.evq.now
        self.serial += 1  # invalidate any pending attempt event
        frame = max(self._frame_time(self.queues[i][0][0].bits) for i in senders)
        self.busy_until = now + frame
        resume = self._slot_after(self.busy_until)
        attempt_slot = self._slot_after(now)
        for i in senders:
            self.target.pop(i, None)
        # stations that lost this round resume their countdown after the frame
        for i in self.target:
            self.target[i] = resume + max(self.target[i] - attempt_slot, 1)
        if len(senders) == 1:
            self.evq.push(self.busy_until, PRIO_PACKET, self._success, senders[0], resume)
        else:
            self.evq.push(self.busy_until, PRIO_PACKET, self._collision, tuple(senders), resume)

    def _success(self, src, resume):
        now = self.evq.now
        pkt, enq_time = self.queues[src].popleft()
        self.attempts[src] = 0
        self.access_delays.append(now - enq_time)
        if self.queues[src]:
            self.target[src] = resume + self._geom(src)
        else:
            self.target.pop(src, None)
        self._schedule_attempt()
        if self.cfg.per_source_loss and self.loss_rngs[src].random() < self.cfg.per_source_loss:
            self.lost += 1
            if self.on_drop:
                self.on_drop(pkt)
        else:
            self.sink(pkt)

    def _collision(self, senders, resume):
        self.collisions += 1
        for i in senders:
            self.attempts[i] += 1
            window = 1 << min(self.attempts[i], self.cfg.max_backoff_exp)
            self.target[i] = resume + self.rngs[i].randrange(window) + self._geom(i)
        self._schedule_attempt()


class RunResult:
    """Everything one simulation produced, in memory."""

    def __init__(self, cfg, trace, sources, monitors, counts, channel, network):
        self.cfg = cfg
        self.trace = trace  # (time, source_id, kind, seq)
        self.sources = sources
        self.monitors = monitors
        self.generated, self.delivered, self.dropped = counts
        self.channel = channel  # MultiaccessChannel or None
        self._network = network

    def in_flight(self, src):
        return self.generated[src] - self.delivered[src] - self.dropped[src]

    def resident_census(self):
        """Per-source update count found by walking queues and pending events."""
        return self._network.resident_census()

    def delivery_rows(self, src):
        """(receive_time, seq, gen_ts_seconds) per delivery at the monitor."""
        return [(r, seq, g / 1e9) for r, seq, g in self.monitors[src].delivery_log]

    def backlog_average(self, src, horizon):
        return step_average(self.sources[src].backlog_trace, *horizon)


class _Network:
    """Wires endpoints, channel and stations together and drives the clock."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.evq = EventQueue()
        self.trace = [] if cfg.record_trace else None
        self.generated = [0] * cfg.n_sources
        self.delivered = [0] * cfg.n_sources
        self.dropped = [0] * cfg.n_sources
        self.update_bits = (UPDATE_HEADER_SIZE + cfg.payload_bytes) * 8
        self.ack_bits = ACK_SIZE * 8

        self.sources = []
        for i in range(cfg.n_sources):
            kw = dict(payload_bytes=cfg.payload_bytes, alpha=cfg.alpha)
            mode = cfg.mode_for(i)
            if mode == "acp+":
                kw["bootstrap_rate"] = cfg.bootstrap_rate
            if mode.startswith("poisson"):
                _, _, rate = mode.partition(":")
                src = PoissonSource(rate=float(rate),
                                    rng=random.Random(f"{cfg.seed}/source/{i}"), **kw)
            else:
                src = make_source(mode, **kw)
            self.sources.append(src)
        self.monitors = [Monitor() for _ in range(cfg.n_sources)]
        self.timer_marks = [{} for _ in range(cfg.n_sources)]

        tracer = self._trace_packet if cfg.record_trace else None
        seed = cfg.seed

        # forward chain: multiaccess -> stations -> monitor
        self.fwd_stations = []
        next_sink = self._monitor_in
        for idx in reversed(range(len(cfg.stations))):
            st = StationQueue(
                self.evq, cfg.stations[idx],
                random.Random(f"{seed}/station/{idx}/fwd"),
                next_sink, tracer=tracer, on_drop=self._drop_update,
            )
            self.fwd_stations.insert(0, st)
            next_sink = st.accept
        self.forward_entry = next_sink

        self.channel = None
        if cfg.multiaccess is not None:
            self.channel = MultiaccessChannel(
                self.evq, cfg.multiaccess, cfg.n_sources, seed,
                sink=next_sink, tracer=tracer, on_drop=self._drop_update,
            )

        # reverse chain for ACKs: stations reversed, then the downlink
        if cfg.ack_path == "symmetric":
            next_sink = self._source_in
            if cfg.multiaccess is not None:
                downlink_cfg = StationConfig(
                    service=DETERMINISTIC, rate=cfg.multiaccess.link_rate
                )
                downlink = StationQueue(
                    self.evq, downlink_cfg,
                    random.Random(f"{seed}/downlink"), next_sink,
                )
                next_sink = downlink.accept
            for idx in range(len(cfg.stations)):
                st = StationQueue(
                    self.evq, cfg.stations[idx],
                    random.Random(f"{seed}/station/{idx}/rev"),
                    next_sink,
                )
                next_sink = st.accept
            self.reverse_entry = next_sink
        else:
            self.reverse_entry = self._source_in

    # -- trace and accounting hooks

    def _record(self, kind, pkt):
        if self.trace is not None and pkt.is_update:
            self.trace.append((self.evq.now, pkt.src, kind, pkt.seq))

    def _trace_packet(self, kind, pkt):
        self._record(kind, pkt)

    def _drop_update(self, pkt):
        if pkt.is_update:
            self.dropped[pkt.src] += 1
            self._record(DROPPED, pkt)

    # -- packet movement

    def _send_update(self, src, wire_pkt):
        pkt = SimPacket(src, wire_pkt.seq, self.update_bits, wire_pkt, True)
        self.generated[src] += 1
        self._record(GENERATED, pkt)
        if self.channel is not None:
            self.channel.accept(src, pkt)
        else:
            self.forward_entry(pkt)

    def _monitor_in(self, pkt):
        now = self.evq.now
        src = pkt.src
        self.delivered[src] += 1
        self._record(DELIVERED, pkt)
        ack = self.monitors[src].on_update(pkt.wire, now)
        if ack is None:
            return
        ack_pkt = SimPacket(src, ack.seq, self.ack_bits, ack, False)
        self.reverse_entry(ack_pkt)

    def _source_in(self, pkt):
        now = self.evq.now
        src = pkt.src
        self._record(ACK_DELIVERED, pkt)
        out = self.sources[src].on_ack(pkt.wire, now)
        for wire_pkt in out:
            self._send_update(src, wire_pkt)
        self._reconcile_timers(src)

    # -- endpoint timers

    def _reconcile_timers(self, src):
        marks = self.timer_marks[src]
        for kind, t in self.sources[src].timers():
            if marks.get(kind) != t:
                marks[kind] = t
                prio = PRIO_EPOCH if kind == EPOCH else PRIO_TIMER
                self.evq.push(t, prio, self._timer_fire, src, kind, t)

    def _timer_fire(self, src, kind, t):
        if self.timer_marks[src].get(kind) != t:
            return  # superseded schedule
        for wire_pkt in self.sources[src].fire(kind, self.evq.now):
            self._send_update(src, wire_pkt)
        self._reconcile_timers(src)

    # -- run

    def run(self):
        for src in range(self.cfg.n_sources):
            for wire_pkt in self.sources[src].start(0.0):
                self._send_update(src, wire_pkt)
            self._reconcile_timers(src)
        self.evq.run_until(self.cfg.duration)
        return RunResult(
            self.cfg,
            self.trace if self.trace is not None else [],
            self.sources,
            self.monitors,
            (self.generated, self.delivered, self.dropped),
            self.channel,
            self,
        )

    def resident_census(self):
        """Updates actually sitting in the network, counted per source.

        Walks the channel and station queues plus the event heap (packets
        in propagation ride inside pending delivery events).
        """
        counts = [0] * self.cfg.n_sources
        if self.channel is not None:
            for q in self.channel.queues:
                for pkt, _ in q:
                    counts[pkt.src] += 1
        for st in self.fwd_stations:
            for pkt in st.queue:
                counts[pkt.src] += 1
        for _, _, _, _, args in self.evq._heap:
            for arg in args:
                if isinstance(arg, SimPacket) and arg.is_update:
                    counts[arg.src] += 1
        return counts


def run_simulation(cfg: SimConfig) -> RunResult:
    return _Network(cfg).run()


# -- load/delay characterization of a single station


class _LoadProbe:
    """Poisson packet injector plus system-time statistics for one station."""

    def __init__(self, station_cfg, arrival_rate, packets, seed, packet_bits,
                 warmup_frac=0.1):
        self.evq = EventQueue()
        self.rng = random.Random(f"{seed}/arrivals")
        self.rate = arrival_rate
        self.remaining = packets
        self.skip = int(packets * warmup_frac)
        self.seen = 0
        self.total = 0.0
        self.counted = 0
        self.packet_bits = packet_bits
        self.born = {}
        self.station = StationQueue(
            self.evq, station_cfg, random.Random(f"{seed}/service"), self._sink
        )
        self._next_seq = 0

    def _arrive(self):
        pkt = SimPacket(0, self._next_seq, self.packet_bits, None, True)
        self._next_seq += 1
        self.born[pkt.seq] = self.evq.now
        self.station.accept(pkt)
        self.remaining -= 1
        if self.remaining > 0:
            self.evq.push(
                self.evq.now + self.rng.expovariate(self.rate), PRIO_TIMER, self._arrive
            )

    def _sink(self, pkt):
        self.seen += 1
        system_time = self.evq.now - self.born.pop(pkt.seq)
        if self.seen > self.skip:
            self.total += system_time
            self.counted += 1

    def mean_system_time(self):
        self.evq.push(0.0, PRIO_TIMER, self._arrive)
        self.evq.drain()
        return self.total / self.counted


def simulate_station_system_time(station_cfg, arrival_rate, packets, seed=0,
                                 packet_bits=8 * (UPDATE_HEADER_SIZE + 1024)):
    """Mean time through one station under Poisson arrivals (event-driven)."""
    probe = _LoadProbe(station_cfg, arrival_rate, packets, seed, packet_bits)
    return probe.mean_system_time()


def rtt_vs_load_curve(station_cfg, rtt_base, loads, mode="analytic",
                      packet_bits=8 * (UPDATE_HEADER_SIZE + 1024),
                      packets=200_000, seed=0):
    """Mean round-trip time per offered load through a single station.

    Analytic mode: a deterministic server below capacity adds nothing to
    rtt_base and saturates at the full-buffer wait above it; an exponential
    server adds the mean system time 1/(mu - lambda) while stable. An
    unstable load on an unbounded buffer is flagged as an infinite point.
    Simulate mode runs the event-driven station under Poisson arrivals and
    reports rtt_base plus the measured mean system time.
    """
    mu = station_cfg.rate / packet_bits  # packets per second
    out = []
    for load in loads:
        if load <= 0:
            raise ValueError("loads must be positive")
        if mode == "simulate":
            rtt = rtt_base + simulate_station_system_time(
                station_cfg, load, packets, seed=f"{seed}/load{load}",
                packet_bits=packet_bits,
            )
        elif station_cfg.service == DETERMINISTIC:
            if load < mu:
                rtt = rtt_base
            elif station_cfg.buffer is None:
                rtt = math.inf  # unstable point
            else:
                rtt = rtt_base + (station_cfg.buffer - 1) / mu
        else:
            if load < mu:
                rtt = rtt_base + 1.0 / (mu - load)
            elif station_cfg.buffer is None:
                rtt = math.inf  # unstable point
            else:
                rtt = rtt_base + station_cfg.buffer / mu
        out.append((load, rtt))
    return out


# -- constant-rate sweep for the age-minimizing operating point


@dataclass(frozen=True)
class SweepPoint:
    rate: float
    avg_age: float
    avg_backlog: float


@dataclass(frozen=True)
class SweepResult:
    best_rate: float
    best_age: float
    backlog_at_best: float
    curve: tuple


def sweep_min_age(station_rate_bits, rates, duration, seed=0, payload_bytes=1024,
                  warmup_frac=0.1, stations=2):
    """Find the update rate minimizing age over an exponential tandem.

    Each candidate rate runs one memoryless (Poisson) source over
    `stations` equal-rate exponential-service stations with an
    instantaneous ACK path; with zero propagation the source backlog
    equals the number of updates inside the tandem, so the sweep reports
    the system occupancy at the best rate.
    """
    curve = []
    for i, rate in enumerate(rates):
        cfg = SimConfig(
            stations=tuple(
                StationConfig(service=EXPONENTIAL, rate=station_rate_bits)
                for _ in range(stations)
            ),
            n_sources=1,
            protocol=f"poisson:{rate}",
            duration=duration,
            seed=seed,
            payload_bytes=payload_bytes,
            ack_path="instant",
            record_trace=False,
        )
        result = run_simulation(cfg)
        horizon = default_horizon(0.0, duration, warmup_frac)
        deliveries = [(r, g) for r, _, g in result.delivery_rows(0)]
        trace = age_trace_from_deliveries(deliveries, horizon)
        age = time_average_age(trace, horizon)
        backlog = result.backlog_average(0, horizon)
        curve.append(SweepPoint(rate=rate, avg_age=age, avg_backlog=backlog))
    best = min(curve, key=lambda p: p.avg_age)
    return SweepResult(
        best_rate=best.rate,
        best_age=best.avg_age,
        backlog_at_best=best.avg_backlog,
        curve=tuple(curve),
    )

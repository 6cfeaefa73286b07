"""Live endpoints over UDP sockets, plus an in-path delay/loss proxy.

The protocol state machines come unchanged from `endpoints`; this module
only supplies wall clocks, datagram IO and CSV output. All timers run on
the monotonic clock relative to session start, and generation timestamps
travel as that clock's nanoseconds, so round-trip math never needs the
peer's clock. The proxy relays datagrams between a source-facing and a
monitor-facing socket, applying per-direction delay and loss; with
reordering disabled it never releases a datagram before an earlier one of
the same direction.
"""

import heapq
import logging
import os
import random
import select
import socket
import time
from dataclasses import dataclass

from .csvio import ack_csv_path, write_ack_log, write_epoch_log, write_monitor_log
from .endpoints import Monitor, make_source
from .estimation import DEFAULT_SMOOTHING
from .wire import (
    DEFAULT_PAYLOAD_BYTES,
    WireError,
    decode_ack,
    decode_update,
    encode_ack,
    encode_update,
)

log = logging.getLogger(__name__)

SEED_ENV_VAR = "AGECTL_SEED"
CONSTANT = "constant"
EXPONENTIAL = "exponential"

_POLL = 0.05  # upper bound on select timeouts; keeps duration checks timely


def _parse_addr(text):
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


def run_source(peer, mode, duration, out, payload_bytes=DEFAULT_PAYLOAD_BYTES,
               alpha=DEFAULT_SMOOTHING, listen=None, stop=None):
    """Drive an update source against a remote monitor; returns exit status.

    Writes the per-epoch controller log to `out` and the per-ACK RTT
    samples next to it (needed to estimate age when only this end's clock
    is trusted).
    """
    peer_addr = _parse_addr(peer) if isinstance(peer, str) else peer
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.bind(_parse_addr(listen) if listen else ("0.0.0.0", 0))
        sock.setblocking(False)
        source = make_source(mode, payload_bytes=payload_bytes, alpha=alpha)
        decode_errors = 0
        t0 = time.monotonic()

        def send_all(packets):
            for pkt in packets:
                sock.sendto(encode_update(pkt), peer_addr)

        if duration > 0:
            send_all(source.start(0.0))
        while True:
            now = time.monotonic() - t0
            if now >= duration or (stop is not None and stop.is_set()):
                break
            deadlines = [t for _, t in source.timers()]
            timeout = min(deadlines) - now if deadlines else _POLL
            readable, _, _ = select.select([sock], [], [],
                                           max(0.0, min(timeout, duration - now, _POLL)))
            now = time.monotonic() - t0
            if readable:
                while True:
                    try:
                        data, _ = sock.recvfrom(65535)
                    except (BlockingIOError, InterruptedError):
                        break
                    try:
                        ack = decode_ack(data)
                    except WireError as exc:
                        decode_errors += 1
                        log.debug("undecodable ack datagram: %s", exc)
                        continue
                    send_all(source.on_ack(ack, now))
            while True:
                now = time.monotonic() - t0
                due = [(t, kind) for kind, t in source.timers() if t <= now]
                if not due:
                    break
                _, kind = min(due)
                send_all(source.fire(kind, now))
        write_epoch_log(out, source.epoch_rows)
        write_ack_log(ack_csv_path(out), source.ack_log)
        if decode_errors:
            log.warning("%d undecodable datagrams ignored", decode_errors)
        if source.violations:
            log.warning("%d acks for never-sent sequence numbers", source.violations)
        return 0
    except OSError as exc:
        log.error("source socket failure: %s", exc)
        return 1
    finally:
        sock.close()


def run_monitor(listen, duration, out, stop=None):
    """Receive updates, ACK the fresh ones, log deliveries; returns exit status."""
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.bind(_parse_addr(listen) if isinstance(listen, str) else listen)
        sock.setblocking(False)
        monitor = Monitor()
        decode_errors = 0
        t0 = time.monotonic()
        while True:
            now = time.monotonic() - t0
            if now >= duration or (stop is not None and stop.is_set()):
                break
            readable, _, _ = select.select([sock], [], [],
                                           max(0.0, min(duration - now, _POLL)))
            now = time.monotonic() - t0
            if not readable:
                continue
            while True:
                try:
                    data, addr = sock.recvfrom(65535)
                except (BlockingIOError, InterruptedError):
                    break
                try:
                    pkt = decode_update(data)
                except WireError as exc:
                    decode_errors += 1
                    log.debug("undecodable update datagram: %s", exc)
                    continue
                ack = monitor.on_update(pkt, now)
                if ack is not None:
                    sock.sendto(encode_ack(ack), addr)
        write_monitor_log(out, monitor.delivery_log)
        if decode_errors:
            log.warning("%d undecodable datagrams ignored", decode_errors)
        if monitor.discarded:
            log.info("%d out-of-sequence updates discarded", monitor.discarded)
        return 0
    except OSError as exc:
        log.error("monitor socket failure: %s", exc)
        return 1
    finally:
        sock.close()


@dataclass
class ProxyConfig:
    """Relay between a source-facing and a monitor-facing UDP socket.

    delay/loss apply per direction as (forward, reverse) pairs; scalars
    mean the same value both ways. With reorder off, each direction is
    released strictly FIFO even when sampled delays would overtake.
    """

    listen: str
    forward: str
    delay: float = 0.0  # seconds each way, or (fwd, rev)
    delay_dist: str = CONSTANT  # or EXPONENTIAL (delay = mean)
    loss: float = 0.0  # probability each way, or (fwd, rev)
    reorder: bool = False
    seed: int | None = None

    def pair(self, value):
        if isinstance(value, (tuple, list)):
            return float(value[0]), float(value[1])
        return float(value), float(value)

    def __post_init__(self):
        for d in self.pair(self.delay):
            if d < 0:
                raise ValueError("delays must be non-negative")
        for p in self.pair(self.loss):
            if not 0 <= p < 1:
                raise ValueError("loss probability must be in [0, 1)")
        if self.delay_dist not in (CONSTANT, EXPONENTIAL):
            raise ValueError(f"unknown delay distribution {self.delay_dist!r}")


class ProxyStats:
    def __init__(self):
        self.received = [0, 0]  # per direction: 0 = forward, 1 = reverse
        self.forwarded = [0, 0]
        self.dropped = [0, 0]


def run_proxy(cfg: ProxyConfig, duration=None, stop=None, stats=None):
    """Forward datagrams with sampled delay and loss until stopped."""
    seed = cfg.seed
    if seed is None:
        env = os.environ.get(SEED_ENV_VAR)
        seed = int(env) if env else None
    rng = random.Random(seed)
    delays = cfg.pair(cfg.delay)
    losses = cfg.pair(cfg.loss)
    stats = stats if stats is not None else ProxyStats()

    sock_src = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)  # faces the source
    sock_mon = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)  # faces the monitor
    try:
        sock_src.bind(_parse_addr(cfg.listen))
        sock_mon.bind(("0.0.0.0", 0))
        for s in (sock_src, sock_mon):
            s.setblocking(False)
        forward_addr = _parse_addr(cfg.forward)
        source_addr = None  # learned from the first forward datagram

        heap = []  # (release_time, counter, out_sock, out_addr, data)
        counter = 0
        last_release = [0.0, 0.0]
        t0 = time.monotonic()

        def sample_delay(direction):
            mean = delays[direction]
            if cfg.delay_dist == CONSTANT or mean == 0:
                return mean
            return rng.expovariate(1.0 / mean)

        while True:
            now = time.monotonic() - t0
            if stop is not None and stop.is_set():
                break
            if duration is not None and now >= duration:
                break
            timeout = heap[0][0] - now if heap else _POLL
            if duration is not None:
                timeout = min(timeout, duration - now)
            readable, _, _ = select.select([sock_src, sock_mon], [], [],
                                           max(0.0, min(timeout, _POLL)))
            now = time.monotonic() - t0
            for s in readable:
                while True:
                    try:
                        data, addr = s.recvfrom(65535)
                    except (BlockingIOError, InterruptedError):
                        break
                    if s is sock_src:
                        direction = 0
                        source_addr = addr
                        out = (sock_mon, forward_addr)
                    else:
                        direction = 1
                        if source_addr is None:
                            continue  # nothing to return to yet
                        out = (sock_src, source_addr)
                    stats.received[direction] += 1
                    if losses[direction] and rng.random() < losses[direction]:
                        stats.dropped[direction] += 1
                        continue
                    release = now + sample_delay(direction)
                    if not cfg.reorder:
                        release = max(release, last_release[direction])
                        last_release[direction] = release
                    counter += 1
                    heapq.heappush(heap, (release, counter, direction, out, data))
            now = time.monotonic() - t0
            while heap and heap[0][0] <= now:
                _, _, direction, (out_sock, out_addr), data = heapq.heappop(heap)
                try:
                    out_sock.sendto(data, out_addr)
                    stats.forwarded[direction] += 1
                except OSError as exc:
                    log.warning("proxy send failed: %s", exc)
        return 0
    except OSError as exc:
        log.error("proxy socket failure: %s", exc)
        return 1
    finally:
        sock_src.close()
        sock_mon.close()

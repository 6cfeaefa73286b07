"""CSV layouts shared by the live runners, the simulator and reports."""

import csv

from .controller import EPOCH_LOG_COLUMNS

MONITOR_COLUMNS = ("receive_time", "seq", "gen_ts")
ACK_COLUMNS = ("ack_time", "seq", "rtt")
TRACE_COLUMNS = ("time", "source_id", "kind", "seq")
SUMMARY_COLUMNS = (
    "run_id", "protocol", "sources", "avg_age_ms", "avg_delay_ms",
    "throughput_bps", "inter_delivery_ms", "backlog_avg", "fairness",
    "inter_ack_ms",
)


def write_rows(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        w.writerows(rows)


def write_epoch_log(path, rows):
    write_rows(path, EPOCH_LOG_COLUMNS, rows)


def write_monitor_log(path, rows):
    write_rows(path, MONITOR_COLUMNS, rows)


def write_ack_log(path, rows):
    write_rows(path, ACK_COLUMNS, rows)


def write_trace(path, rows):
    write_rows(path, TRACE_COLUMNS, rows)


def read_monitor_log(path):
    """(receive_time, seq, gen_ts_ns) rows."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append((float(row["receive_time"]), int(row["seq"]), int(row["gen_ts"])))
    return out


def read_ack_log(path):
    """(ack_time, seq, rtt_seconds) rows."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append((float(row["ack_time"]), int(row["seq"]), float(row["rtt"])))
    return out


def ack_csv_path(out_path):
    """Companion file holding the source's per-ACK RTT samples."""
    base = str(out_path)
    if base.endswith(".csv"):
        base = base[: -len(".csv")]
    return base + "_acks.csv"

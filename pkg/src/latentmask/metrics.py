"""Training-efficiency metrics from logged iteration records.

MIT: mean wall-clock seconds per iteration.
MLT/MLI: wall seconds / iterations per valid loss-decrease event, where an
event fires whenever the EMA-smoothed loss drops at least delta below the
last recorded milestone (delta = 1% of the initial smoothed loss).
MAT@k: fine-tuning wall seconds per percentage point of top-k accuracy
gained between the first and last recorded evaluations.
"""

import csv
from dataclasses import dataclass, field

DEFAULT_EMA_WINDOW = 50
EVENT_DELTA_FRACTION = 0.01

CSV_COLUMNS = ("step", "wall_time_s", "loss", "top1", "top5")


class UndefinedMetric(Exception):
    """Raised when a metric's precondition fails (no events, no accuracy gain)."""


@dataclass
class IterationRecord:
    step: int
    wall_time: float
    loss: float
    top1: float = None
    top5: float = None

    def __post_init__(self):
        if self.wall_time <= 0:
            raise ValueError("wall_time must be > 0")


class EventCounter:
    """Streaming loss-decrease event counter.

    EMA with alpha = 2 / (window + 1); the first smoothed value fixes the
    event threshold delta. The milestone (record minimum) only moves when
    an event fires, so the count tallies cumulative decrease in units of
    delta. Feeding a series in chunks gives the same count as feeding it
    whole.
    """

    def __init__(self, window=DEFAULT_EMA_WINDOW):
        self.alpha = 2.0 / (window + 1)
        self.ema = None
        self.record_min = None
        self.delta = None
        self.count = 0

    def feed(self, loss):
        if self.ema is None:
            self.ema = loss
            self.delta = EVENT_DELTA_FRACTION * abs(loss)
            self.record_min = loss
        else:
            self.ema += self.alpha * (loss - self.ema)
        if self.ema < self.record_min - self.delta:
            self.count += 1
            self.record_min = self.ema

    def feed_all(self, losses):
        for x in losses:
            self.feed(x)
        return self.count


@dataclass
class MetricsLog:
    records: list = field(default_factory=list)
    ema_window: int = DEFAULT_EMA_WINDOW

    def append(self, record):
        if self.records and record.step <= self.records[-1].step:
            raise ValueError("steps must be strictly increasing")
        self.records.append(record)

    def _require_nonempty(self):
        if not self.records:
            raise ValueError("metrics log is empty")

    def total_wall_time(self):
        return sum(r.wall_time for r in self.records)

    def smoothed_losses(self):
        out = []
        ema = None
        alpha = 2.0 / (self.ema_window + 1)
        for r in self.records:
            ema = r.loss if ema is None else ema + alpha * (r.loss - ema)
            out.append(ema)
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.records:
                w.writerow([r.step, repr(r.wall_time), repr(r.loss),
                            "" if r.top1 is None else repr(r.top1),
                            "" if r.top5 is None else repr(r.top5)])

    @classmethod
    def from_csv(cls, path, ema_window=DEFAULT_EMA_WINDOW):
        log = cls(ema_window=ema_window)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                log.append(IterationRecord(
                    step=int(row["step"]),
                    wall_time=float(row["wall_time_s"]),
                    loss=float(row["loss"]),
                    top1=float(row["top1"]) if row.get("top1") else None,
                    top5=float(row["top5"]) if row.get("top5") else None))
        return log


def mit(log):
    """Mean iteration wall time in seconds."""
    log._require_nonempty()
    return log.total_wall_time() / len(log.records)


def loss_decrease_events(log):
    log._require_nonempty()
    counter = EventCounter(window=log.ema_window)
    return counter.feed_all(r.loss for r in log.records)


def mlt(log):
    """Mean wall seconds per loss-decrease event."""
    events = loss_decrease_events(log)
    if events == 0:
        raise UndefinedMetric("no loss-decrease events")
    return log.total_wall_time() / events


def mli(log):
    """Mean iterations per loss-decrease event."""
    events = loss_decrease_events(log)
    if events == 0:
        raise UndefinedMetric("no loss-decrease events")
    return len(log.records) / events


def mat(log, k=1):
    """Wall seconds per percentage point of top-k accuracy gained."""
    log._require_nonempty()
    if k not in (1, 5):
        raise ValueError("k must be 1 or 5")
    attr = "top1" if k == 1 else "top5"
    accs = [getattr(r, attr) for r in log.records if getattr(r, attr) is not None]
    if not accs:
        raise UndefinedMetric(f"no top-{k} accuracy recorded")
    gain = accs[-1] - accs[0]
    if gain <= 0:
        raise UndefinedMetric(f"no top-{k} accuracy gain")
    return log.total_wall_time() / (100.0 * gain)


def summary(log):
    """All metrics as strings; undefined ones read 'undefined'."""
    out = {}
    out["mit"] = f"{mit(log):.6g}"
    for name, fn in (("mlt", mlt), ("mli", mli),
                     ("mat@1", lambda lg: mat(lg, 1)), ("mat@5", lambda lg: mat(lg, 5))):
        try:
            out[name] = f"{fn(log):.6g}"
        except UndefinedMetric:
            out[name] = "undefined"
    return out

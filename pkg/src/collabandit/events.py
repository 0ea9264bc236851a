"""Logged interactions and the line-oriented event-log format.

One event per line, TAB-separated::

    timestamp  displayed_arm  click  u:f1,...,fdu  a1:f1,...,fd;a2:f1,...,fd;...
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np
from numpy.typing import NDArray

from .errors import MalformedEvent, ParseError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Candidate:
    arm_id: str
    features: NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class EventRecord:
    timestamp: int
    displayed_arm: str
    click: int
    user_features: NDArray[np.float64]
    arm_ids: tuple[str, ...]
    features: NDArray[np.float64]  # (K, d), row k belongs to arm_ids[k]

    @property
    def pool(self) -> list[Candidate]:
        return [Candidate(a, self.features[k]) for k, a in enumerate(self.arm_ids)]

    @property
    def k(self) -> int:
        return len(self.arm_ids)

    def displayed_index(self) -> int:
        try:
            return self.arm_ids.index(self.displayed_arm)
        except ValueError:
            raise MalformedEvent(f"displayed arm {self.displayed_arm!r} not in pool") from None

    @classmethod
    def from_pool(cls, timestamp: int, displayed_arm: str, click: int,
                  user_features, pool: Sequence[Candidate]) -> "EventRecord":
        return cls(
            timestamp,
            displayed_arm,
            click,
            np.asarray(user_features, dtype=np.float64),
            tuple(c.arm_id for c in pool),
            np.array([c.features for c in pool], dtype=np.float64, ndmin=2),
        )


def _fmt(x: float) -> str:
    return repr(float(x))


def format_event(ev: EventRecord) -> str:
    user = ",".join(_fmt(v) for v in ev.user_features)
    pool = ";".join(
        f"{a}:" + ",".join(_fmt(v) for v in row) for a, row in zip(ev.arm_ids, ev.features)
    )
    return f"{ev.timestamp}\t{ev.displayed_arm}\t{ev.click}\tu:{user}\t{pool}"


def _floats(text: str, what: str, lineno: int | None) -> list[float]:
    if not text:
        raise ParseError(f"empty {what} feature list", lineno)
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise ParseError(f"bad number in {what} features", lineno) from None
    if not all(np.isfinite(vals)):
        raise ParseError(f"non-finite {what} feature", lineno)
    return vals


def parse_event(line: str, lineno: int | None = None) -> EventRecord:
    """Parse one log line. Raises :class:`ParseError` on any format violation."""
    fields = line.rstrip("\r\n").split("\t")
    if len(fields) != 5:
        raise ParseError(f"expected 5 TAB-separated fields, got {len(fields)}", lineno)
    ts, displayed, click, user, pool = fields
    try:
        timestamp = int(ts)
        click_v = int(click)
    except ValueError:
        raise ParseError("timestamp and click must be integers", lineno) from None
    if click_v not in (0, 1):
        raise ParseError(f"click must be 0 or 1, got {click_v}", lineno)
    if not displayed:
        raise ParseError("empty displayed arm id", lineno)
    if not user.startswith("u:"):
        raise ParseError("user field must start with 'u:'", lineno)
    user_feats = _floats(user[2:], "user", lineno)
    ids: list[str] = []
    rows: list[list[float]] = []
    for item in pool.split(";"):
        arm, sep, feats = item.partition(":")
        if not sep or not arm:
            raise ParseError(f"bad candidate entry {item[:40]!r}", lineno)
        ids.append(arm)
        rows.append(_floats(feats, f"arm {arm}", lineno))
    if len({len(r) for r in rows}) != 1:
        raise ParseError("candidates have differing feature dimensions", lineno)
    return EventRecord(
        timestamp, displayed, click_v, np.array(user_feats), tuple(ids), np.array(rows)
    )


class LogReader:
    """Iterate events from a log, skipping (and counting) lines that fail to parse."""

    def __init__(self, source: str | Path | TextIO | Iterable[str]):
        self.source = source
        self.skipped = 0
        self.read = 0

    def __iter__(self) -> Iterator[EventRecord]:
        if isinstance(self.source, (str, Path)):
            with open(self.source, encoding="utf-8") as fh:
                yield from self._events(fh)
        else:
            yield from self._events(self.source)

    def _events(self, lines: Iterable[str]) -> Iterator[EventRecord]:
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                ev = parse_event(line, lineno)
            except ParseError as exc:
                self.skipped += 1
                logger.warning("skipping malformed event: %s", exc)
                continue
            self.read += 1
            yield ev


def read_log(path: str | Path) -> list[EventRecord]:
    return list(LogReader(path))


def write_log(events: Iterable[EventRecord], out: str | Path | TextIO) -> int:
    if isinstance(out, (str, Path)):
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            return write_log(events, fh)
    n = 0
    for ev in events:
        out.write(format_event(ev) + "\n")
        n += 1
    return n

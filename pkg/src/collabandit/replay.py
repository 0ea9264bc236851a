"""Offline evaluation of a policy on a logged event stream by replay.

Each event's user is mapped to its cluster, the policy picks from the
logged pool, and only when the pick equals the logged arm does the click
count and the policy learn. Under uniform logging this gives an unbiased
estimate of the policy's online CTR.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from numpy.typing import ArrayLike

from .clustering import ClusterModel
from .errors import MalformedEvent
from .events import EventRecord
from .policies import Policy, select_update

logger = logging.getLogger(__name__)

DEFAULT_BUCKET = 2000
DEFAULT_WINDOW = 500


def rolling_average(series: ArrayLike, window: int) -> list[float]:
    """Trailing mean over the last ``window`` points; the head averages what is available."""
    if window < 1:
        raise ValueError("window must be at least 1")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        return []
    csum = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(0, idx - window)
    return ((csum[idx] - csum[lo]) / (idx - lo)).tolist()


@dataclass
class MetricsSeries:
    bucket_size: int = DEFAULT_BUCKET
    window: int = DEFAULT_WINDOW
    matched: list[int] = field(default_factory=list)
    clicks: list[int] = field(default_factory=list)
    events: int = 0
    malformed: int = 0
    choices: list[str] | None = None

    @property
    def total_matched(self) -> int:
        return int(sum(self.matched))

    @property
    def total_clicks(self) -> int:
        return int(sum(self.clicks))

    @property
    def ctr(self) -> float:
        m = self.total_matched
        return self.total_clicks / m if m else 0.0

    @property
    def bucket_ctr(self) -> list[float]:
        return [c / m if m else 0.0 for m, c in zip(self.matched, self.clicks)]

    @property
    def cumulative_ctr(self) -> list[float]:
        m = np.cumsum(self.matched, dtype=np.float64)
        c = np.cumsum(self.clicks, dtype=np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(m > 0, c / np.where(m > 0, m, 1), 0.0)
        return out.tolist()

    @property
    def rolling_ctr(self) -> list[float]:
        return rolling_average(self.bucket_ctr, self.window)


def replay(
    policy: Policy,
    cluster_model: ClusterModel | None,
    events: Iterable[EventRecord],
    bucket_size: int = DEFAULT_BUCKET,
    window: int = DEFAULT_WINDOW,
    count: str = "matched",
    record_choices: bool = False,
    progress_every: int = 1_000_000,
) -> MetricsSeries:
    """Replay ``events`` through ``policy`` and bucket the matched clicks.

    ``count="matched"`` closes a bucket after every ``bucket_size`` matched
    events; ``count="raw"`` after every ``bucket_size`` logged events. A
    trailing partial bucket is kept. Events whose displayed arm is missing
    from the pool (or whose dimensions disagree with the policy) are skipped
    and counted in ``malformed``.
    """
    if bucket_size < 1:
        raise ValueError("bucket_size must be at least 1")
    if count not in ("matched", "raw"):
        raise ValueError("count must be 'matched' or 'raw'")
    out = MetricsSeries(bucket_size=bucket_size, window=window)
    if record_choices:
        out.choices = []
    d = policy.cfg.feature_dim if policy.uses_features else None
    bucket_m = bucket_c = bucket_n = 0
    for ev in events:
        out.events += 1
        if progress_every and out.events % progress_every == 0:
            logger.info("replayed %d events, %d matched", out.events, out.total_matched + bucket_m)
        try:
            _check(ev, d, cluster_model if policy.uses_clusters else None)
        except MalformedEvent as exc:
            out.malformed += 1
            logger.debug("skipping event %d: %s", ev.timestamp, exc)
            continue
        chosen, matched = select_update(policy, ev, cluster_model)
        if out.choices is not None:
            out.choices.append(chosen)
        bucket_n += 1
        if matched:
            bucket_m += 1
            bucket_c += ev.click
        full = bucket_m if count == "matched" else bucket_n
        if full == bucket_size:
            out.matched.append(bucket_m)
            out.clicks.append(bucket_c)
            bucket_m = bucket_c = bucket_n = 0
    if bucket_n and (bucket_m or count == "raw"):
        out.matched.append(bucket_m)
        out.clicks.append(bucket_c)
    return out


def _check(ev: EventRecord, d: int | None, model: ClusterModel | None) -> None:
    if ev.displayed_arm not in ev.arm_ids:
        raise MalformedEvent(f"displayed arm {ev.displayed_arm!r} not in pool")
    if ev.features.ndim != 2 or ev.features.shape[0] != len(ev.arm_ids):
        raise MalformedEvent("pool features do not match the arm list")
    if d is not None and ev.features.shape[1] != d:
        raise MalformedEvent(f"arm features have dim {ev.features.shape[-1]}, expected {d}")
    if ev.click not in (0, 1):
        raise MalformedEvent(f"click {ev.click!r} is not 0/1")
    if model is not None and ev.user_features.shape[0] != model.dim:
        raise MalformedEvent(f"user features have dim {ev.user_features.shape[0]}, expected {model.dim}")


def normalize_by_random(
    policy_series: MetricsSeries | list[float],
    random_series: MetricsSeries | list[float],
    which: str = "cumulative",
) -> list[float | None]:
    """Bucket-wise ratio of a policy's CTR to the random policy's.

    ``None`` marks buckets where the random CTR is zero or missing.
    """
    def pick(s):
        if isinstance(s, MetricsSeries):
            if s is policy_series and isinstance(random_series, MetricsSeries):
                if s.bucket_size != random_series.bucket_size:
                    raise ValueError("series use different bucket sizes")
            return s.cumulative_ctr if which == "cumulative" else s.rolling_ctr
        return list(s)

    num, den = pick(policy_series), pick(random_series)
    out: list[float | None] = []
    for i, v in enumerate(num):
        r = den[i] if i < len(den) else None
        out.append(v / r if r else None)
    return out


def pct_over(ratio: float | None) -> float | None:
    """Ratio to percentage lift, e.g. 1.5 -> 50.0."""
    return None if ratio is None else (ratio - 1.0) * 100.0

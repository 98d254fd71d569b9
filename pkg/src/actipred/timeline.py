"""Binned multichannel binary activity series.

Turns raw event streams (or pre-binned signals) into per-user series of
0/1 activity bins with an explicit coverage mask, filters out sparsely
observed users, and computes pooled weekly activity profiles.

Conventions used throughout the package:

* bins are half-open intervals ``[b * width, (b + 1) * width)`` in local
  time (a fixed minute offset applied to the raw timestamps); an event on
  a boundary belongs to the later bin;
* ``start_bin`` is an absolute bin index, ``floor(epoch_minutes / width)``,
  so the time-of-week phase of a bin is ``bin % week_length`` (bin 0 starts
  on a Thursday, the epoch weekday);
* a bin may be active only where the coverage mask is true -- coverage
  distinguishes "no data collected" from "no activity".
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._validation import DataValidationError, as_bit_array

#: Canonical channel order of the four activity signals.
CHANNELS = ("call", "text", "movement", "proximity")

MINUTES_PER_WEEK = 7 * 24 * 60


class CoverageWarning(UserWarning):
    """Events fell outside the declared coverage intervals and were dropped."""


@dataclass(frozen=True)
class BinConfig:
    """Time discretization: bin width plus a fixed local-time offset.

    ``timezone_offset_min`` is added to raw UTC timestamps before binning,
    keeping the weekly grid stable (no DST modeling).
    """

    bin_width_min: int = 15
    timezone_offset_min: int = 0

    def __post_init__(self) -> None:
        if self.bin_width_min <= 0 or 60 % self.bin_width_min != 0:
            raise DataValidationError(
                f"bin width must be a positive divisor of 60 minutes, got {self.bin_width_min}"
            )

    @property
    def week_length(self) -> int:
        """Number of bins in one week (672 for 15-minute bins)."""
        return MINUTES_PER_WEEK // self.bin_width_min

    def bin_of_timestamp(self, ts_seconds: float) -> int:
        """Absolute bin index of an epoch timestamp, after the local offset."""
        if not math.isfinite(ts_seconds):
            raise DataValidationError(f"timestamp must be finite, got {ts_seconds!r}")
        minutes = ts_seconds / 60.0 + self.timezone_offset_min
        return math.floor(minutes / self.bin_width_min)


@dataclass
class ActivitySeries:
    """Binary activity of one user: (channels, bins) bits plus coverage.

    ``bits[c, t]`` is 1 iff channel ``c`` was active in bin ``start_bin + t``;
    activity is only allowed where ``coverage[t]`` is true.
    """

    user_id: str
    start_bin: int
    bits: np.ndarray
    coverage: np.ndarray
    channels: tuple[str, ...] = CHANNELS

    def __post_init__(self) -> None:
        self.bits = as_bit_array(self.bits, "bits", ndim=2)
        self.coverage = np.asarray(self.coverage)
        if self.coverage.dtype != bool:
            self.coverage = as_bit_array(self.coverage, "coverage", ndim=1).astype(bool)
        self.channels = tuple(self.channels)
        if self.bits.shape[0] != len(self.channels):
            raise DataValidationError(
                f"user {self.user_id!r}: {self.bits.shape[0]} bit rows for "
                f"{len(self.channels)} channels"
            )
        if self.bits.shape[1] != self.coverage.shape[0]:
            raise DataValidationError(
                f"user {self.user_id!r}: bits span {self.bits.shape[1]} bins but "
                f"coverage spans {self.coverage.shape[0]}"
            )
        if (self.bits[:, ~self.coverage] != 0).any():
            raise DataValidationError(
                f"user {self.user_id!r}: active bins outside coverage"
            )

    @property
    def n_bins(self) -> int:
        return self.bits.shape[1]

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def active_counts(self) -> np.ndarray:
        """Number of active bins per channel."""
        return self.bits.sum(axis=1, dtype=np.int64)

    def week_bins(self, config: BinConfig) -> np.ndarray:
        """Time-of-week index of every bin in the series."""
        return (self.start_bin + np.arange(self.n_bins, dtype=np.int64)) % config.week_length


@dataclass
class WeeklyProfile:
    """Pooled mean activity per time-of-week bin.

    ``rates[c, w]`` is the fraction of covered bins at time-of-week ``w``
    in which channel ``c`` was active; NaN where no covered bin exists
    (``support[w] == 0``).
    """

    rates: np.ndarray
    support: np.ndarray
    channels: tuple[str, ...] = CHANNELS

    @property
    def defined(self) -> np.ndarray:
        return self.support > 0

    @property
    def week_length(self) -> int:
        return self.support.shape[0]


def _check_same_channels(series: list[ActivitySeries]) -> tuple[str, ...]:
    channels = series[0].channels
    for s in series[1:]:
        if s.channels != channels:
            raise DataValidationError(
                f"user {s.user_id!r}: channel order {s.channels} differs from {channels}"
            )
    return channels


def bin_events(
    events,
    coverage_intervals,
    config: BinConfig = BinConfig(),
    channels: tuple[str, ...] = CHANNELS,
) -> list[ActivitySeries]:
    """Bin an event stream into per-user binary activity series.

    Parameters
    ----------
    events : iterable of (user_id, channel, timestamp_seconds)
        Raw activity events; a bin is active iff at least one event of the
        channel falls inside it.
    coverage_intervals : mapping user_id -> iterable of (start_s, end_s)
        Periods during which data collection was running.  Bins intersecting
        any interval are marked covered.  Events outside coverage are counted,
        reported via :class:`CoverageWarning`, and dropped.
    config : BinConfig

    Returns
    -------
    list of ActivitySeries, one per user with at least one covered bin,
    sorted by user id.  An empty event stream with no coverage yields an
    empty list.
    """
    channel_index = {c: k for k, c in enumerate(channels)}
    per_user_events: dict[str, list[tuple[int, int]]] = {}
    for record in events:
        user_id, channel, ts = record
        if channel not in channel_index:
            raise DataValidationError(
                f"unknown channel {channel!r} in event record {record!r}; "
                f"expected one of {channels}"
            )
        per_user_events.setdefault(str(user_id), []).append(
            (channel_index[channel], config.bin_of_timestamp(float(ts)))
        )

    covered_bins: dict[str, set[int]] = {}
    width = config.bin_width_min
    for user_id, intervals in coverage_intervals.items():
        bins: set[int] = set()
        for start_s, end_s in intervals:
            if not (math.isfinite(start_s) and math.isfinite(end_s)):
                raise DataValidationError(
                    f"user {user_id!r}: non-finite coverage interval ({start_s}, {end_s})"
                )
            if end_s <= start_s:
                continue
            start_min = start_s / 60.0 + config.timezone_offset_min
            end_min = end_s / 60.0 + config.timezone_offset_min
            bins.update(range(math.floor(start_min / width), math.ceil(end_min / width)))
        if bins:
            covered_bins[str(user_id)] = bins

    dropped = 0
    out: list[ActivitySeries] = []
    for user_id in sorted(set(per_user_events) | set(covered_bins)):
        bins = covered_bins.get(user_id)
        user_events = per_user_events.get(user_id, [])
        if not bins:
            dropped += len(user_events)
            continue
        start = min(bins)
        n = max(bins) - start + 1
        coverage = np.zeros(n, dtype=bool)
        coverage[np.fromiter(bins, dtype=np.int64) - start] = True
        bits = np.zeros((len(channels), n), dtype=np.uint8)
        for ch, b in user_events:
            if b in bins:
                bits[ch, b - start] = 1
            else:
                dropped += 1
        out.append(ActivitySeries(user_id, start, bits, coverage, channels))

    if dropped:
        warnings.warn(
            f"dropped {dropped} event(s) outside coverage intervals", CoverageWarning
        )
    return out


def filter_users(
    series: list[ActivitySeries], min_active: int
) -> tuple[list[ActivitySeries], dict[str, np.ndarray]]:
    """Keep users with at least ``min_active`` active bins in every channel.

    Returns the retained series and, for each retained user, the
    per-channel active-bin counts.
    """
    if min_active < 0:
        raise DataValidationError(f"min_active must be >= 0, got {min_active}")
    retained = []
    counts: dict[str, np.ndarray] = {}
    for s in series:
        c = s.active_counts()
        if (c >= min_active).all():
            retained.append(s)
            counts[s.user_id] = c
    return retained, counts


def weekly_profile(series: list[ActivitySeries], config: BinConfig = BinConfig()) -> WeeklyProfile:
    """Mean activity per time-of-week bin, pooled over all users and weeks."""
    if not series:
        raise DataValidationError("weekly_profile requires at least one series")
    channels = _check_same_channels(series)
    week = config.week_length
    support = np.zeros(week, dtype=np.int64)
    active = np.zeros((len(channels), week), dtype=np.int64)
    for s in series:
        w = s.week_bins(config)
        support += np.bincount(w[s.coverage], minlength=week)
        for c in range(len(channels)):
            active[c] += np.bincount(w[s.bits[c] == 1], minlength=week)
    if support.sum() == 0:
        raise DataValidationError("weekly_profile requires at least one covered bin")
    with np.errstate(invalid="ignore", divide="ignore"):
        rates = active / support
    rates[:, support == 0] = np.nan
    return WeeklyProfile(rates=rates, support=support, channels=channels)


# ---------------------------------------------------------------------------
# External interfaces: published JSON signal format and raw CSV inputs.
# ---------------------------------------------------------------------------

def to_signals_dict(series: list[ActivitySeries], config: BinConfig) -> dict:
    """Serialize series to the published JSON signal structure."""
    out = {}
    for s in series:
        out[s.user_id] = {
            "start_bin": int(s.start_bin),
            "bin_width_min": config.bin_width_min,
            "channels": {ch: s.bits[c].tolist() for c, ch in enumerate(s.channels)},
            "coverage": s.coverage.astype(int).tolist(),
        }
    return out


def from_signals_dict(data: dict) -> tuple[list[ActivitySeries], BinConfig]:
    """Parse the published JSON signal structure.

    The top level maps user id to ``{start_bin, bin_width_min, channels,
    coverage}``.  All users must agree on bin width and channel order.
    """
    series: list[ActivitySeries] = []
    widths = set()
    channel_order: tuple[str, ...] | None = None
    for user_id, rec in data.items():
        try:
            width = int(rec["bin_width_min"])
            start_bin = int(rec["start_bin"])
            chans = rec["channels"]
            coverage = rec["coverage"]
        except (KeyError, TypeError) as exc:
            raise DataValidationError(f"user {user_id!r}: malformed signal record ({exc})")
        widths.add(width)
        order = tuple(chans.keys())
        if channel_order is None:
            channel_order = order
        elif order != channel_order:
            raise DataValidationError(
                f"user {user_id!r}: channel order {order} differs from {channel_order}"
            )
        bits = np.array([chans[ch] for ch in order])
        series.append(ActivitySeries(str(user_id), start_bin, bits, coverage, order))
    if not series:
        raise DataValidationError("signal file contains no users")
    if len(widths) != 1:
        raise DataValidationError(f"inconsistent bin widths across users: {sorted(widths)}")
    return series, BinConfig(bin_width_min=widths.pop())


def save_signals_json(series: list[ActivitySeries], config: BinConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_signals_dict(series, config), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_signals_json(path) -> tuple[list[ActivitySeries], BinConfig]:
    with open(path) as fh:
        return from_signals_dict(json.load(fh))


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def read_events_csv(path):
    """Yield (user_id, channel, timestamp_seconds) from a CSV file.

    Expected columns: ``user_id,channel,unix_timestamp_seconds``; a header
    row is detected and skipped.
    """
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and not _is_number(row[-1])):
                continue
            if len(row) != 3:
                raise DataValidationError(f"{path}:{lineno}: expected 3 columns, got {row!r}")
            if not _is_number(row[2]):
                raise DataValidationError(f"{path}:{lineno}: bad timestamp in {row!r}")
            yield row[0], row[1], float(row[2])


def read_coverage_csv(path) -> dict[str, list[tuple[float, float]]]:
    """Read per-user coverage intervals from ``user_id,start_ts,end_ts`` rows."""
    intervals: dict[str, list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and not _is_number(row[-1])):
                continue
            if len(row) != 3:
                raise DataValidationError(f"{path}:{lineno}: expected 3 columns, got {row!r}")
            if not (_is_number(row[1]) and _is_number(row[2])):
                raise DataValidationError(f"{path}:{lineno}: bad interval in {row!r}")
            intervals.setdefault(row[0], []).append((float(row[1]), float(row[2])))
    return intervals

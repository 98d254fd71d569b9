"""History windows as integer codes, and count tables over them.

A window of ``h`` consecutive bins across ``C`` channels is packed into a
single unsigned integer.  Bit layout (version 1, fixed for portability of
serialized tables): channel-major, oldest bin least significant, i.e. the
bit for channel ``c`` at within-window position ``k`` (``k = 0`` oldest)
lives at ``c * h + k``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import DataValidationError, as_bit_array
from .timeline import CHANNELS, ActivitySeries

#: Identifier of the bit layout above, written into serialized tables.
BIT_LAYOUT = "channel-major-oldest-lsb-v1"

#: Code width (bits) up to which tables are stored as dense arrays.
DENSE_BITS_MAX = 24

#: Hard ceiling on the code width.
CODE_BITS_MAX = 48


def default_channel_names(n: int) -> tuple[str, ...]:
    return CHANNELS if n == len(CHANNELS) else tuple(f"ch{i}" for i in range(n))


@dataclass(frozen=True)
class WindowSpec:
    """Geometry of a predictive window.

    ``history_bins`` consecutive bins form the pattern; the predicted bin
    lies ``lead_bins`` after the most recent history bin (lead time in
    minutes is ``lead_bins * bin_width``).
    """

    history_bins: int
    lead_bins: int = 1
    channel_count: int = len(CHANNELS)
    max_code_bits: int = DENSE_BITS_MAX

    def __post_init__(self) -> None:
        if self.history_bins < 1 or self.lead_bins < 1 or self.channel_count < 1:
            raise DataValidationError(
                f"history_bins, lead_bins, channel_count must be >= 1, got {self}"
            )
        if self.max_code_bits > CODE_BITS_MAX:
            raise DataValidationError(
                f"max_code_bits must be <= {CODE_BITS_MAX}, got {self.max_code_bits}"
            )
        if self.code_bits > self.max_code_bits:
            raise DataValidationError(
                f"window of {self.history_bins} bins x {self.channel_count} channels "
                f"needs {self.code_bits} bits, above the {self.max_code_bits}-bit ceiling"
            )

    @property
    def code_bits(self) -> int:
        return self.history_bins * self.channel_count

    @property
    def n_codes(self) -> int:
        return 1 << self.code_bits

    def with_lead(self, lead_bins: int) -> "WindowSpec":
        return replace(self, lead_bins=lead_bins)

    def bit_weights(self) -> np.ndarray:
        """Per-flattened-position powers of two (position ``c * h + k``)."""
        return np.left_shift(np.int64(1), np.arange(self.code_bits, dtype=np.int64))


def encode_window(window, spec: WindowSpec) -> int:
    """Pack an (history_bins, channel_count) 0/1 matrix into its code.

    Row 0 is the oldest bin; column ``c`` is channel ``c``.
    """
    w = as_bit_array(window, "window", ndim=2)
    if w.shape != (spec.history_bins, spec.channel_count):
        raise DataValidationError(
            f"window shape {w.shape} does not match spec "
            f"({spec.history_bins}, {spec.channel_count})"
        )
    flat = w.flatten(order="F").astype(np.int64)
    return int(flat @ spec.bit_weights())


def decode_window(code: int, spec: WindowSpec) -> np.ndarray:
    """Inverse of :func:`encode_window`."""
    if not 0 <= code < spec.n_codes:
        raise DataValidationError(f"code {code} out of range [0, {spec.n_codes})")
    bits = (np.int64(code) >> np.arange(spec.code_bits, dtype=np.int64)) & 1
    return bits.astype(np.uint8).reshape(spec.history_bins, spec.channel_count, order="F")


def encode_rows(X: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Codes of flattened windows (n, history_bins * channel_count)."""
    return X.astype(np.int64) @ spec.bit_weights()


def decode_rows(codes: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Flattened windows (n, history_bins * channel_count) from codes."""
    codes = np.asarray(codes, dtype=np.int64)
    return ((codes[:, None] >> np.arange(spec.code_bits, dtype=np.int64)) & 1).astype(np.uint8)


@dataclass
class Instances:
    """A batch of (pattern, future state) pairs extracted from one source.

    ``anchors`` holds the absolute bin index of the most recent history bin
    of each window; the predicted bin is ``anchors + spec.lead_bins``.
    """

    spec: WindowSpec
    codes: np.ndarray
    futures: np.ndarray
    anchors: np.ndarray
    user_id: str | None = None
    channels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        self.codes = np.asarray(self.codes, dtype=np.int64)
        self.futures = as_bit_array(self.futures, "futures", ndim=2)
        self.anchors = np.asarray(self.anchors, dtype=np.int64)
        if not (len(self.codes) == len(self.futures) == len(self.anchors)):
            raise DataValidationError("codes, futures, anchors must have equal length")
        if self.futures.shape[1] != self.spec.channel_count:
            raise DataValidationError(
                f"futures have {self.futures.shape[1]} channels, spec says "
                f"{self.spec.channel_count}"
            )
        if self.channels is None:
            self.channels = default_channel_names(self.spec.channel_count)

    def __len__(self) -> int:
        return len(self.codes)

    @property
    def n(self) -> int:
        return len(self.codes)

    def windows(self) -> np.ndarray:
        """Flattened history matrices, one row per instance."""
        return decode_rows(self.codes, self.spec)

    def future_bins(self) -> np.ndarray:
        """Absolute bin index of each predicted bin."""
        return self.anchors + self.spec.lead_bins

    def subset(self, index) -> "Instances":
        return Instances(
            self.spec,
            self.codes[index],
            self.futures[index],
            self.anchors[index],
            self.user_id,
            self.channels,
        )

    @classmethod
    def concatenate(cls, parts: list["Instances"]) -> "Instances":
        if not parts:
            raise DataValidationError("cannot concatenate zero instance batches")
        spec = parts[0].spec
        for p in parts[1:]:
            if p.spec != spec:
                raise DataValidationError(f"mixed window specs: {p.spec} vs {spec}")
        user_ids = {p.user_id for p in parts}
        return cls(
            spec,
            np.concatenate([p.codes for p in parts]),
            np.concatenate([p.futures for p in parts]),
            np.concatenate([p.anchors for p in parts]),
            user_ids.pop() if len(user_ids) == 1 else None,
            parts[0].channels,
        )


def extract_instances(series: ActivitySeries, spec: WindowSpec) -> Instances:
    """All maximally overlapping (window, future) pairs of one series.

    Anchors advance one bin at a time.  A position yields an instance only
    when every history bin and the future bin are covered; windows touching
    coverage gaps are skipped rather than zero-filled.  Series shorter than
    ``history_bins + lead_bins`` yield an empty batch.
    """
    if series.n_channels != spec.channel_count:
        raise DataValidationError(
            f"series has {series.n_channels} channels, spec says {spec.channel_count}"
        )
    h, f = spec.history_bins, spec.lead_bins
    T = series.n_bins
    empty = Instances(
        spec,
        np.empty(0, np.int64),
        np.empty((0, spec.channel_count), np.uint8),
        np.empty(0, np.int64),
        series.user_id,
        series.channels,
    )
    if T < h + f:
        return empty

    # Window code at each start position, one channel at a time.
    weights = np.left_shift(np.int64(1), np.arange(h, dtype=np.int64))
    codes = np.zeros(T - h + 1, dtype=np.int64)
    for c in range(spec.channel_count):
        ch_codes = sliding_window_view(series.bits[c], h).astype(np.int64) @ weights
        codes |= ch_codes << (c * h)

    cov = series.coverage
    full_history = np.convolve(cov.astype(np.int64), np.ones(h, np.int64), "valid") == h
    starts = np.arange(T - h - f + 1)
    valid = full_history[starts] & cov[starts + h - 1 + f]
    if not valid.any():
        return empty
    starts = starts[valid]
    return Instances(
        spec,
        codes[starts],
        series.bits[:, starts + h - 1 + f].T.copy(),
        series.start_bin + starts + h - 1,
        series.user_id,
        series.channels,
    )


def extract_all(series_list: list[ActivitySeries], spec: WindowSpec) -> list[Instances]:
    """Per-user extraction over a population."""
    return [extract_instances(s, spec) for s in series_list]


class PatternTable:
    """Counts of pattern occurrences and of active futures per pattern.

    Stores, for every window code, how often it occurred (``N`` in total)
    and how often each channel was active in the predicted bin.  Dense
    storage (arrays indexed by code) is used up to :data:`DENSE_BITS_MAX`
    code bits, a sorted sparse index beyond that.
    """

    def __init__(self, spec: WindowSpec, channels: tuple[str, ...] | None = None,
                 dense: bool | None = None):
        self.spec = spec
        self.channels = channels or default_channel_names(spec.channel_count)
        self.dense = (spec.code_bits <= DENSE_BITS_MAX) if dense is None else dense
        C = spec.channel_count
        if self.dense:
            self._counts = np.zeros(spec.n_codes, dtype=np.int64)
            self._active = np.zeros((spec.n_codes, C), dtype=np.int64)
            self._codes = None
        else:
            self._counts = np.zeros(0, dtype=np.int64)
            self._active = np.zeros((0, C), dtype=np.int64)
            self._codes = np.zeros(0, dtype=np.int64)

    # -- construction -------------------------------------------------

    def add(self, instances: Instances) -> "PatternTable":
        """Accumulate one batch of instances (in place)."""
        if instances.spec != self.spec:
            raise DataValidationError(f"spec mismatch: {instances.spec} vs {self.spec}")
        codes, futures = instances.codes, instances.futures
        if len(codes) == 0:
            return self
        if codes.min() < 0 or codes.max() >= self.spec.n_codes:
            raise DataValidationError(
                f"pattern code out of range [0, {self.spec.n_codes})"
            )
        C = self.spec.channel_count
        if self.dense:
            self._counts += np.bincount(codes, minlength=self.spec.n_codes)
            for c in range(C):
                self._active[:, c] += np.bincount(
                    codes[futures[:, c] == 1], minlength=self.spec.n_codes
                )
        else:
            uniq, inv = np.unique(codes, return_inverse=True)
            counts = np.bincount(inv, minlength=len(uniq))
            active = np.zeros((len(uniq), C), dtype=np.int64)
            for c in range(C):
                active[:, c] = np.bincount(
                    inv[futures[:, c] == 1], minlength=len(uniq)
                )
            self._merge_sparse(uniq, counts, active)
        return self

    def _merge_sparse(self, codes, counts, active) -> None:
        all_codes = np.concatenate([self._codes, codes])
        all_counts = np.concatenate([self._counts, counts])
        all_active = np.concatenate([self._active, active])
        uniq, inv = np.unique(all_codes, return_inverse=True)
        counts_out = np.zeros(len(uniq), dtype=np.int64)
        np.add.at(counts_out, inv, all_counts)
        active_out = np.zeros((len(uniq), self.spec.channel_count), dtype=np.int64)
        np.add.at(active_out, inv, all_active)
        self._codes, self._counts, self._active = uniq, counts_out, active_out

    def merge(self, other: "PatternTable") -> "PatternTable":
        """Combine two tables; equals building one table from both streams."""
        if other.spec != self.spec:
            raise DataValidationError(f"spec mismatch: {other.spec} vs {self.spec}")
        out = PatternTable(self.spec, self.channels, dense=self.dense)
        if self.dense and other.dense:
            out._counts = self._counts + other._counts
            out._active = self._active + other._active
        else:
            a_codes, a_counts, a_active = self._sparse_view()
            b_codes, b_counts, b_active = other._sparse_view()
            out.dense = False
            out._codes = np.zeros(0, dtype=np.int64)
            out._counts = np.zeros(0, dtype=np.int64)
            out._active = np.zeros((0, self.spec.channel_count), dtype=np.int64)
            out._merge_sparse(np.concatenate([a_codes, b_codes]),
                              np.concatenate([a_counts, b_counts]),
                              np.concatenate([a_active, b_active]))
        return out

    def _sparse_view(self):
        if self.dense:
            codes = np.flatnonzero(self._counts)
            return codes, self._counts[codes], self._active[codes]
        return self._codes, self._counts, self._active

    # -- queries -------------------------------------------------------

    @property
    def total(self) -> int:
        """N: number of accumulated instances."""
        return int(self._counts.sum())

    @property
    def future_active(self) -> np.ndarray:
        """n_i: number of instances with an active future, per channel."""
        return self._active.sum(axis=0)

    @property
    def n_patterns(self) -> int:
        return int((self._counts > 0).sum())

    def pattern_codes(self) -> np.ndarray:
        """Codes with at least one occurrence, ascending."""
        return self._sparse_view()[0].copy()

    def counts_for(self, codes) -> np.ndarray:
        """Occurrences of each code (0 for unseen)."""
        codes = np.asarray(codes, dtype=np.int64)
        if self.dense:
            return self._counts[codes]
        idx = np.searchsorted(self._codes, codes)
        idx = np.clip(idx, 0, max(len(self._codes) - 1, 0))
        if len(self._codes) == 0:
            return np.zeros(codes.shape, dtype=np.int64)
        hit = self._codes[idx] == codes
        return np.where(hit, self._counts[idx], 0)

    def active_for(self, codes) -> np.ndarray:
        """Active-future counts (n, C) of each code (0 for unseen)."""
        codes = np.asarray(codes, dtype=np.int64)
        if self.dense:
            return self._active[codes]
        if len(self._codes) == 0:
            return np.zeros((len(codes), self.spec.channel_count), dtype=np.int64)
        idx = np.searchsorted(self._codes, codes)
        idx = np.clip(idx, 0, len(self._codes) - 1)
        hit = (self._codes[idx] == codes)[:, None]
        return np.where(hit, self._active[idx], 0)

    def probabilities(self, codes) -> tuple[np.ndarray, np.ndarray]:
        """Per-channel empirical future-activity probability of each code.

        Returns ``(p, support)`` where ``p`` is (n, C) with NaN for codes
        never seen (no estimate rather than 0/0).
        """
        support = self.counts_for(codes)
        active = self.active_for(codes)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = active / support[:, None]
        p[support == 0] = np.nan
        return p, support

    # -- serialization ---------------------------------------------------

    def to_csv(self, path) -> None:
        """Write the table as versioned CSV (one row per seen pattern)."""
        codes, counts, active = self._sparse_view()
        with open(path, "w", newline="") as fh:
            fh.write(f"# actipred-pattern-table v1 layout={BIT_LAYOUT}\n")
            fh.write(
                f"# history_bins={self.spec.history_bins} "
                f"lead_bins={self.spec.lead_bins} "
                f"channel_count={self.spec.channel_count} "
                f"max_code_bits={self.spec.max_code_bits}\n"
            )
            writer = csv.writer(fh)
            writer.writerow(["code", "total"] + [f"n_{ch}" for ch in self.channels])
            for i, code in enumerate(codes):
                writer.writerow([int(code), int(counts[i])] + [int(x) for x in active[i]])

    @classmethod
    def from_csv(cls, path) -> "PatternTable":
        with open(path, newline="") as fh:
            header = fh.readline().strip()
            if not header.startswith("# actipred-pattern-table v1"):
                raise DataValidationError(f"{path}: not a v1 pattern table ({header!r})")
            if f"layout={BIT_LAYOUT}" not in header:
                raise DataValidationError(f"{path}: unsupported bit layout ({header!r})")
            meta = dict(
                item.split("=") for item in fh.readline().strip("#\n ").split()
            )
            spec = WindowSpec(
                history_bins=int(meta["history_bins"]),
                lead_bins=int(meta["lead_bins"]),
                channel_count=int(meta["channel_count"]),
                max_code_bits=int(meta.get("max_code_bits", DENSE_BITS_MAX)),
            )
            reader = csv.reader(fh)
            columns = next(reader)
            channels = tuple(c[2:] for c in columns[2:])
            table = cls(spec, channels)
            rows = list(reader)
        if rows:
            codes = np.array([int(r[0]) for r in rows], dtype=np.int64)
            counts = np.array([int(r[1]) for r in rows], dtype=np.int64)
            active = np.array([[int(x) for x in r[2:]] for r in rows], dtype=np.int64)
            if codes.min() < 0 or codes.max() >= spec.n_codes:
                raise DataValidationError(f"{path}: pattern code out of range")
            if table.dense:
                table._counts[codes] = counts
                table._active[codes] = active
            else:
                table._merge_sparse(codes, counts, active)
        return table


def build_table(
    instances: Instances | list[Instances],
    spec: WindowSpec | None = None,
    dense: bool | None = None,
) -> PatternTable:
    """Count table over one or several instance batches."""
    parts = [instances] if isinstance(instances, Instances) else list(instances)
    if spec is None:
        if not parts:
            raise DataValidationError("build_table needs a spec when no instances given")
        spec = parts[0].spec
    table = PatternTable(spec, parts[0].channels if parts else None, dense=dense)
    for p in parts:
        table.add(p)
    return table

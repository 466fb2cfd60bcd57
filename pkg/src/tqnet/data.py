"""Dataset handling: CSV ingestion, chronological splits, per-channel
standardization, sliding windows, periodicity detection, and a synthetic
generator with a known ground-truth channel correlation.

Layout conventions: a :class:`SeriesTable` stores the file layout (rows =
timesteps, columns = channels).  Split parts flip to channels x time so a
training window ``x`` is a cheap column slice.  Splits are chronological;
validation/test parts optionally include ``lookback`` context rows from the
preceding part so their first prediction target starts exactly at the split
boundary (the usual long-horizon benchmark convention).  Window start indices
``t`` are absolute positions in the original table — the model's query bank
phase depends on them, so they must agree across splits.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class SeriesTable:
    """Immutable multivariate series: data[t, c] plus channel/time labels."""

    names: tuple
    timestamps: tuple
    data: np.ndarray  # (timesteps, channels) float64

    def __post_init__(self):
        d = self.data
        if d.ndim != 2:
            raise DataError(f"series data must be 2-D, got shape {d.shape}")
        if d.shape != (len(self.timestamps), len(self.names)):
            raise DataError(
                f"data shape {d.shape} does not match {len(self.timestamps)} "
                f"timestamps x {len(self.names)} channels"
            )
        d.setflags(write=False)

    @property
    def timesteps(self):
        return self.data.shape[0]

    @property
    def channels(self):
        return self.data.shape[1]

    def select_channels(self, indices):
        idx = list(indices)
        return SeriesTable(
            names=tuple(self.names[i] for i in idx),
            timestamps=self.timestamps,
            data=self.data[:, idx].copy(),
        )

    def head(self, n):
        if n >= self.timesteps:
            return self
        return SeriesTable(
            names=self.names,
            timestamps=self.timestamps[:n],
            data=self.data[:n].copy(),
        )


def load_csv(path):
    """Read a header + timestamp-column CSV into a :class:`SeriesTable`.

    Column 1 is a timestamp label (kept verbatim), the rest must be numeric.
    Ragged rows, blank cells, and non-numeric cells raise :class:`DataError`
    naming the offending row and column.
    """
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        if len(header) < 2:
            raise DataError(f"{path}: need a timestamp column plus >=1 channel")
        names = tuple(h.strip() for h in header[1:])
        timestamps = []
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} fields, expected "
                    f"{len(header)}"
                )
            timestamps.append(row[0])
            vals = np.empty(len(names), dtype=np.float64)
            for c, cell in enumerate(row[1:]):
                try:
                    vals[c] = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {names[c]!r}: "
                        f"non-numeric value {cell!r}"
                    ) from None
            rows.append(vals)
        if not rows:
            raise DataError(f"{path}: no data rows")
    return SeriesTable(names=names, timestamps=tuple(timestamps), data=np.array(rows))


def write_csv(table, path, float_fmt="%.10g"):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("date",) + tuple(table.names))
        for t in range(table.timesteps):
            writer.writerow(
                (table.timestamps[t],)
                + tuple(float_fmt % v for v in table.data[t])
            )


def write_matrix_csv(path, names, matrix, float_fmt="%.10g"):
    """Square labelled matrix (correlations): header row of names, then rows."""
    matrix = np.asarray(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for row in matrix:
            writer.writerow(tuple(float_fmt % v for v in row))


def read_matrix_csv(path):
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            names = tuple(next(reader))
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        rows = [list(map(float, row)) for row in reader if row]
    matrix = np.array(rows, dtype=np.float64)
    if matrix.shape != (len(names), len(names)):
        raise DataError(
            f"{path}: expected a {len(names)}x{len(names)} matrix, "
            f"got shape {matrix.shape}"
        )
    return names, matrix


# ---------------------------------------------------------------------------
# splitting, scaling, windows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Chronological split ratios plus the border-context convention."""

    train: float = 0.7
    val: float = 0.1
    test: float = 0.2
    border_context: bool = True
    max_rows: int | None = None

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or not math.isclose(
            self.train + self.val + self.test, 1.0, abs_tol=1e-9
        ):
            raise ConfigError(
                f"split ratios must be non-negative and sum to 1, got "
                f"({self.train}, {self.val}, {self.test})"
            )
        if self.max_rows is not None and self.max_rows < 1:
            raise ConfigError(f"max_rows must be positive, got {self.max_rows}")

    def boundaries(self, timesteps):
        """(n_train, n_val, n_test) row counts after the optional row cap."""
        n = timesteps if self.max_rows is None else min(timesteps, self.max_rows)
        n_train = int(n * self.train)
        n_test = int(n * self.test)
        n_val = n - n_train - n_test
        if min(n_train, n_val, n_test) <= 0:
            raise DataError(
                f"split of {n} rows gives empty part: "
                f"({n_train}, {n_val}, {n_test})"
            )
        return n_train, n_val, n_test


@dataclass(frozen=True)
class Scaler:
    """Per-channel affine standardization fitted on training rows only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows):
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        return cls(mean=mean, std=np.maximum(std, 1e-8))

    def transform(self, rows):
        return (rows - self.mean) / self.std

    def inverse(self, rows):
        return rows * self.std + self.mean


@dataclass(frozen=True)
class SplitPart:
    """One chronological part, channels-major, with its absolute offset."""

    name: str
    series: np.ndarray  # (channels, part_timesteps) float32, standardized
    t0: int  # absolute table index of series[:, 0]


@dataclass(frozen=True)
class DataSplits:
    train: SplitPart
    val: SplitPart
    test: SplitPart
    scaler: Scaler
    boundaries: tuple  # (n_train, n_val, n_test)

    @property
    def parts(self):
        return {"train": self.train, "val": self.val, "test": self.test}


def split_and_scale(table, spec, lookback=0):
    """Split chronologically, standardize with train statistics.

    With ``spec.border_context`` true, val/test parts are extended backwards
    by ``lookback`` rows so the first forecast origin sits at the boundary.
    """
    n_train, n_val, n_test = spec.boundaries(table.timesteps)
    n = n_train + n_val + n_test
    raw = table.data[:n]
    scaler = Scaler.fit(raw[:n_train])
    std_all = np.ascontiguousarray(scaler.transform(raw).T, dtype=np.float32)

    ctx = lookback if spec.border_context else 0
    bounds = {
        "train": (0, n_train),
        "val": (n_train - ctx, n_train + n_val),
        "test": (n_train + n_val - ctx, n),
    }
    parts = {}
    for name, (lo, hi) in bounds.items():
        if lo < 0:
            raise DataError(
                f"{name} part needs {ctx} context rows but only {lo + ctx} exist"
            )
        parts[name] = SplitPart(name=name, series=std_all[:, lo:hi], t0=lo)
    return DataSplits(
        train=parts["train"],
        val=parts["val"],
        test=parts["test"],
        scaler=scaler,
        boundaries=(n_train, n_val, n_test),
    )


@dataclass(frozen=True)
class WindowSample:
    """One supervised sample: x (C x L), y (C x H), absolute start t."""

    x: np.ndarray
    y: np.ndarray
    t: int


def make_windows(part, lookback, horizon):
    """Every maximal sliding window of the part, in chronological order."""
    total = part.series.shape[1]
    n = total - lookback - horizon + 1
    if n <= 0:
        raise DataError(
            f"{part.name} part has {total} steps, too short for "
            f"lookback {lookback} + horizon {horizon}"
        )
    out = []
    for s in range(n):
        out.append(
            WindowSample(
                x=part.series[:, s : s + lookback],
                y=part.series[:, s + lookback : s + lookback + horizon],
                t=part.t0 + s,
            )
        )
    return out


# ---------------------------------------------------------------------------
# periodicity detection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ACFResult:
    lags: np.ndarray
    per_channel: np.ndarray  # (max_lag + 1, channels)
    mean: np.ndarray  # (max_lag + 1,)
    threshold: float
    candidates: tuple  # ((lag, value), ...) ranked by value, descending
    suggestion: int | None


def compute_acf(data, max_lag=None):
    """Mean-over-channels autocorrelation and ranked period candidates.

    Uses the biased per-channel estimator (normalized by the lag-0 term).
    Candidates are local maxima of the mean curve above the 2/sqrt(T) noise
    band, ranked by height; the top one is the suggested period.  Constant
    channels contribute zero correlation rather than NaN.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DataError(f"compute_acf expects (timesteps, channels), got {data.shape}")
    T, C = data.shape
    if T < 3:
        raise DataError(f"series too short for autocorrelation (T={T})")
    if max_lag is None:
        max_lag = min(T // 2, 512)
    max_lag = int(max_lag)
    if not 1 <= max_lag < T:
        raise ConfigError(f"max_lag must be in [1, {T - 1}], got {max_lag}")

    centered = data - data.mean(axis=0)
    nfft = 1 << int(math.ceil(math.log2(2 * T)))
    spec = np.fft.rfft(centered, n=nfft, axis=0)
    acov = np.fft.irfft(spec * np.conj(spec), n=nfft, axis=0)[: max_lag + 1]
    denom = acov[0].copy()
    degenerate = denom <= 1e-12 * T
    denom[degenerate] = 1.0
    per_channel = acov / denom
    per_channel[:, degenerate] = 0.0
    per_channel[0, :] = np.where(degenerate, 0.0, 1.0)

    mean = per_channel.mean(axis=1)
    threshold = 2.0 / math.sqrt(T)
    cands = []
    for k in range(1, max_lag):
        if mean[k] > mean[k - 1] and mean[k] >= mean[k + 1] and mean[k] > threshold:
            cands.append((k, float(mean[k])))
    cands.sort(key=lambda kv: (-kv[1], kv[0]))
    return ACFResult(
        lags=np.arange(max_lag + 1),
        per_channel=per_channel,
        mean=mean,
        threshold=threshold,
        candidates=tuple(cands),
        suggestion=cands[0][0] if cands else None,
    )


# ---------------------------------------------------------------------------
# synthetic data with known channel structure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Periodic mixture generator.

    ``latents`` sinusoids at harmonics 1..K of the base period are mixed into
    ``channels`` series by a random matrix M.  Harmonics at distinct integer
    multiples of the base frequency are orthogonal over whole periods, so the
    noiseless channel correlation is exactly normalize(M @ M.T) — that matrix
    is returned as the ground truth.  Optional iid noise, impulse spikes, and
    zeroed-out (missing) points are applied after mixing.
    """

    channels: int = 8
    timesteps: int = 2400
    period: int = 24
    latents: int = 3
    noise_sigma: float = 0.1
    spike_rate: float = 0.0
    spike_scale: float = 5.0
    missing_rate: float = 0.0
    mixing_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.period < 2:
            raise ConfigError(f"period must be >= 2, got {self.period}")
        if self.channels < 1 or self.latents < 1:
            raise ConfigError("channels and latents must be positive")
        if self.timesteps < 2 * self.period:
            raise ConfigError(
                f"timesteps ({self.timesteps}) must cover at least two periods"
            )
        if 2 * self.latents >= self.period:
            raise ConfigError(
                f"latents ({self.latents}) too many for period {self.period}: "
                "highest harmonic must stay below the foldover frequency"
            )
        for name in ("noise_sigma", "spike_scale", "mixing_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("spike_rate", "missing_rate"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")


def ground_truth_correlation(mixing):
    """normalize(M @ M.T): the noiseless channel correlation of the mixture."""
    cov = mixing @ mixing.T
    d = np.sqrt(np.maximum(np.diag(cov), 1e-24))
    corr = cov / np.outer(d, d)
    np.fill_diagonal(corr, 1.0)
    return corr


def generate_synthetic(spec):
    """Deterministic per seed; returns (table, ground-truth correlation)."""
    rng = np.random.default_rng(spec.seed)
    C, T, W, K = spec.channels, spec.timesteps, spec.period, spec.latents
    phases = rng.uniform(0.0, 2.0 * math.pi, size=K)
    mixing = rng.normal(0.0, spec.mixing_scale, size=(C, K))

    t = np.arange(T, dtype=np.float64)
    latents = np.sin(
        2.0 * math.pi * np.outer(t, np.arange(1, K + 1)) / W + phases
    )  # (T, K)
    x = latents @ mixing.T
    if spec.noise_sigma > 0:
        x = x + rng.normal(0.0, spec.noise_sigma, size=(T, C))
    if spec.spike_rate > 0:
        hit = rng.random((T, C)) < spec.spike_rate
        signs = rng.choice((-1.0, 1.0), size=(T, C))
        x = x + hit * signs * spec.spike_scale
    if spec.missing_rate > 0:
        x = np.where(rng.random((T, C)) < spec.missing_rate, 0.0, x)

    table = SeriesTable(
        names=tuple(f"ch{c}" for c in range(C)),
        timestamps=tuple(str(i) for i in range(T)),
        data=x,
    )
    return table, ground_truth_correlation(mixing)


def channel_correlation(data):
    """Empirical Pearson correlation between channels (columns).

    Constant channels get zero correlation with everything and one with
    themselves instead of NaN.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise DataError(f"need (timesteps >= 2, channels), got {data.shape}")
    centered = data - data.mean(axis=0)
    cov = centered.T @ centered / data.shape[0]
    d = np.sqrt(np.diag(cov))
    degenerate = d <= 1e-12
    d = np.where(degenerate, 1.0, d)
    corr = cov / np.outer(d, d)
    corr[degenerate, :] = 0.0
    corr[:, degenerate] = 0.0
    np.fill_diagonal(corr, 1.0)
    return corr

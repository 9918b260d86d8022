"""Sampled input/output datasets: CSV persistence, splitting, summary stats.

On-disk format: UTF-8 CSV with header ``t,u1,...,um,y1,...,yp``, one row per
sample, decimal point '.', values written with 17 significant digits so that
a save/load round trip is bit-exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = ["Dataset", "SplitSpec", "load_csv", "normalize", "save_csv", "split"]


@dataclass(frozen=True)
class Dataset:
    """Immutable container for one input/output record.

    Parameters
    ----------
    u : np.ndarray, shape (N, m)
        Input samples, plant units.
    y : np.ndarray, shape (N, p)
        Output samples.
    dt : float
        Sample period in seconds (informational).
    name : str
        Identifier used in reports.
    """

    u: np.ndarray
    y: np.ndarray
    dt: float = 1.0
    name: str = "dataset"

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if u.ndim == 1:
            u = u.reshape(-1, 1)
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        if u.ndim != 2 or y.ndim != 2:
            raise DataError("u and y must be 1-D or 2-D arrays")
        u = u.copy()
        y = y.copy()
        u.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        if u.shape[0] != y.shape[0]:
            raise DataError(
                f"u and y must have the same length, got {u.shape[0]} and {y.shape[0]}"
            )
        if u.shape[0] < 2:
            raise DataError(f"dataset needs at least 2 samples, got {u.shape[0]}")
        if u.shape[1] < 1 or y.shape[1] < 1:
            raise DataError("input and output dimensions must be at least 1")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise DataError("dataset contains non-finite entries")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise DataError(f"sample period must be finite and positive, got {self.dt}")

    @property
    def n_samples(self) -> int:
        return self.u.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.u.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.y.shape[1]

    def summary(self) -> dict:
        """Basic per-channel statistics, used by reports."""
        return {
            "name": self.name,
            "samples": self.n_samples,
            "inputs": self.n_inputs,
            "outputs": self.n_outputs,
            "dt": self.dt,
            "u_rms": [float(v) for v in np.sqrt(np.mean(self.u**2, axis=0))],
            "y_rms": [float(v) for v in np.sqrt(np.mean(self.y**2, axis=0))],
            "y_min": [float(v) for v in self.y.min(axis=0)],
            "y_max": [float(v) for v in self.y.max(axis=0)],
        }

    def scaled(self, u_scale: float = 1.0, y_scale: float = 1.0,
               u_offset: float = 0.0, y_offset: float = 0.0) -> "Dataset":
        """Affine rescaling (explicit, never applied implicitly)."""
        return Dataset(
            u=(self.u - u_offset) * u_scale,
            y=(self.y - y_offset) * y_scale,
            dt=self.dt,
            name=self.name + ":scaled",
        )


def normalize(ds: Dataset) -> tuple[Dataset, dict]:
    """Per-channel zero-mean unit-std rescaling of u and y.

    Returns the rescaled dataset together with the affine parameters so the
    transformation is recorded and invertible. Channels with std below 1e-12
    keep scale 1 to avoid blowing up constant signals.
    """
    u_mean = ds.u.mean(axis=0)
    y_mean = ds.y.mean(axis=0)
    u_std = ds.u.std(axis=0)
    y_std = ds.y.std(axis=0)
    u_std = np.where(u_std < 1e-12, 1.0, u_std)
    y_std = np.where(y_std < 1e-12, 1.0, y_std)
    out = Dataset(
        u=(ds.u - u_mean) / u_std,
        y=(ds.y - y_mean) / y_std,
        dt=ds.dt,
        name=ds.name + ":normalized",
    )
    params = {
        "u_mean": [float(v) for v in u_mean],
        "u_std": [float(v) for v in u_std],
        "y_mean": [float(v) for v in y_mean],
        "y_std": [float(v) for v in y_std],
    }
    return out, params


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous-prefix train/test partition.

    The split index is floor(N * train_fraction); both sides must keep at
    least 2 samples.
    """

    train_fraction: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise DataError(
                f"train_fraction must lie in (0, 1), got {self.train_fraction}"
            )

    def index(self, n: int) -> int:
        k = int(math.floor(n * self.train_fraction))
        if k < 2 or n - k < 2:
            raise DataError(
                f"split of {n} samples at fraction {self.train_fraction} leaves "
                f"fewer than 2 samples on one side"
            )
        return k


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Split into (prefix, remainder) preserving temporal order."""
    k = spec.index(ds.n_samples)
    head = Dataset(ds.u[:k], ds.y[:k], dt=ds.dt, name=ds.name + ":train")
    tail = Dataset(ds.u[k:], ds.y[k:], dt=ds.dt, name=ds.name + ":test")
    return head, tail


def _expected_header(m: int, p: int) -> list[str]:
    return ["t"] + [f"u{i+1}" for i in range(m)] + [f"y{i+1}" for i in range(p)]


def save_csv(ds: Dataset, path) -> None:
    """Write a dataset in the canonical CSV layout (17 significant digits)."""
    n, m = ds.u.shape
    p = ds.y.shape[1]
    try:
        fh = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
    with fh:
        writer = csv.writer(fh)
        writer.writerow(_expected_header(m, p))
        for k in range(n):
            t = k * ds.dt
            row = [f"{t:.17g}"]
            row += [f"{v:.17g}" for v in ds.u[k]]
            row += [f"{v:.17g}" for v in ds.y[k]]
            writer.writerow(row)


def load_csv(path, name: str | None = None) -> Dataset:
    """Load a dataset written by :func:`save_csv` (or compatible).

    The header must be ``t,u1..um,y1..yp``; dt is inferred from the first
    two t values. Errors cite the offending 1-based line number.
    """
    try:
        fh = open(path, "r", newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        m, p = _parse_header(header, path)
        width = 1 + m + p
        t_vals: list[float] = []
        u_rows: list[list[float]] = []
        y_rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                raise DataError(
                    f"{path}: line {lineno}: expected {width} cells, got {len(row)}"
                )
            try:
                vals = [float(c) for c in row]
            except ValueError:
                bad = next(c for c in row if not _is_number(c))
                raise DataError(
                    f"{path}: line {lineno}: non-numeric cell {bad!r}"
                ) from None
            t_vals.append(vals[0])
            u_rows.append(vals[1 : 1 + m])
            y_rows.append(vals[1 + m :])
    if len(t_vals) < 2:
        raise DataError(f"{path}: need at least 2 data rows, got {len(t_vals)}")
    dt = t_vals[1] - t_vals[0]
    if not (math.isfinite(dt) and dt > 0):
        raise DataError(f"{path}: line 3: non-increasing time column (dt={dt})")
    return Dataset(
        u=np.array(u_rows, dtype=float),
        y=np.array(y_rows, dtype=float),
        dt=dt,
        name=name if name is not None else str(path),
    )


def _parse_header(header: list[str], path) -> tuple[int, int]:
    if not header or header[0] != "t":
        raise DataError(f"{path}: line 1: header must start with 't', got {header[:1]}")
    m = 0
    i = 1
    while i < len(header) and header[i] == f"u{m+1}":
        m += 1
        i += 1
    p = 0
    while i < len(header) and header[i] == f"y{p+1}":
        p += 1
        i += 1
    if i != len(header) or m < 1 or p < 1:
        raise DataError(
            f"{path}: line 1: malformed header {header}; expected t,u1..um,y1..yp"
        )
    return m, p


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False

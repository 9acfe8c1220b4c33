"""Cost models for collective communication and matrix inversion.

Three deterministic point models drive the planners and the simulator:

* all-reduce of m elements:      alpha_ar + beta_ar * m
* broadcast of a d x d factor:   alpha_bcast + beta_bcast * d(d+1)/2
  (only the packed upper triangle travels)
* inverting a d x d factor:      alpha_inv * exp(beta_inv * d)

Coefficients are fitted from benchmark samples by ordinary least squares
(log-transformed for the exponential model).  Parameter sets are labeled
with the worker count they were measured on; the models themselves take no
worker-count argument.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "AllReduceParams",
    "BcastParams",
    "InverseParams",
    "BenchSample",
    "PerfParams",
    "LinearFit",
    "allreduce_time",
    "bcast_time",
    "inverse_time",
    "fit_linear",
    "fit_exponential",
    "nct_threshold",
    "read_params",
    "write_params",
    "read_bench_csv",
    "write_bench_csv",
]

DEFAULT_NCT_SCAN_MAX = 16384


@dataclass(frozen=True)
class AllReduceParams:
    """Startup latency (s) and per-element cost (s/element) of all-reduce."""

    alpha_ar: float
    beta_ar: float

    def __post_init__(self):
        if self.alpha_ar < 0:
            raise ValueError(f"alpha_ar must be >= 0, got {self.alpha_ar}")
        if self.beta_ar <= 0:
            raise ValueError(f"beta_ar must be > 0, got {self.beta_ar}")


@dataclass(frozen=True)
class BcastParams:
    """Startup latency (s) and per-element cost (s/element) of broadcast."""

    alpha_bcast: float
    beta_bcast: float

    def __post_init__(self):
        if self.alpha_bcast < 0:
            raise ValueError(f"alpha_bcast must be >= 0, got {self.alpha_bcast}")
        if self.beta_bcast <= 0:
            raise ValueError(f"beta_bcast must be > 0, got {self.beta_bcast}")


@dataclass(frozen=True)
class InverseParams:
    """Exponential compute model for dense symmetric inversion on one device."""

    alpha_inv: float
    beta_inv: float

    def __post_init__(self):
        if self.alpha_inv <= 0:
            raise ValueError(f"alpha_inv must be > 0, got {self.alpha_inv}")
        if self.beta_inv <= 0:
            raise ValueError(f"beta_inv must be > 0, got {self.beta_inv}")


@dataclass(frozen=True)
class BenchSample:
    """One benchmark point: a size (elements or dimension) and a time in seconds."""

    size: int
    time: float

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"size must be a positive integer, got {self.size}")
        if not math.isfinite(self.time) or self.time <= 0:
            raise ValueError(f"time must be finite and positive, got {self.time}")


@dataclass(frozen=True)
class PerfParams:
    """The full fitted coefficient set of one cluster calibration."""

    allreduce: AllReduceParams
    bcast: BcastParams
    inverse: InverseParams
    fitted_world_size: int

    def __post_init__(self):
        if self.fitted_world_size < 1:
            raise ValueError(f"fitted_world_size must be >= 1, got {self.fitted_world_size}")


@dataclass(frozen=True)
class LinearFit:
    alpha: float
    beta: float
    r_squared: float


def allreduce_time(m: int | float, p: AllReduceParams) -> float:
    """Predicted all-reduce time for m elements."""
    if m < 0:
        raise ValueError(f"element count must be >= 0, got {m}")
    return p.alpha_ar + p.beta_ar * m


def bcast_time(d: int, p: BcastParams) -> float:
    """Predicted broadcast time for one d x d symmetric factor (packed payload)."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return p.alpha_bcast + p.beta_bcast * (d * (d + 1) / 2)


def inverse_time(d: int, p: InverseParams) -> float:
    """Predicted time to invert one d x d factor on a single device."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return p.alpha_inv * math.exp(p.beta_inv * d)


def fit_linear(samples: Sequence[BenchSample]) -> LinearFit:
    """Ordinary least-squares affine fit of time against size.

    Needs at least two samples with distinct sizes.  r_squared is 1.0 for an
    exact fit, including the degenerate case of zero total variance.
    """
    if len(samples) < 2:
        raise ValueError(f"need at least 2 samples, got {len(samples)}")
    sizes = np.array([s.size for s in samples], dtype=np.float64)
    times = np.array([s.time for s in samples], dtype=np.float64)
    if np.all(sizes == sizes[0]):
        raise ValueError("all sample sizes are identical; the fit is underdetermined")
    design = np.column_stack([np.ones_like(sizes), sizes])
    coef, *_ = np.linalg.lstsq(design, times, rcond=None)
    alpha, beta = float(coef[0]), float(coef[1])
    resid = times - (alpha + beta * sizes)
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((times - times.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return LinearFit(alpha=alpha, beta=beta, r_squared=r2)


def fit_exponential(samples: Sequence[BenchSample]) -> InverseParams:
    """Fit alpha * exp(beta * d) by linear least squares on log(time)."""
    if len(samples) < 2:
        raise ValueError(f"need at least 2 samples, got {len(samples)}")
    for s in samples:
        if s.time <= 0:
            raise ValueError(f"nonpositive time sample {s.time} cannot be log-fitted")
    sizes = np.array([s.size for s in samples], dtype=np.float64)
    logs = np.log([s.time for s in samples])
    if np.all(sizes == sizes[0]):
        raise ValueError("all sample sizes are identical; the fit is underdetermined")
    design = np.column_stack([np.ones_like(sizes), sizes])
    coef, *_ = np.linalg.lstsq(design, logs, rcond=None)
    return InverseParams(alpha_inv=float(np.exp(coef[0])), beta_inv=float(coef[1]))


def nct_threshold(
    inv: InverseParams, bc: BcastParams, d_max: int = DEFAULT_NCT_SCAN_MAX
) -> int | None:
    """Smallest dimension at which inverting costs at least as much as broadcasting.

    Below the threshold, broadcasting dominates and a tensor is cheaper to
    invert redundantly on every worker (non-communicated).  Returns None when
    no crossover exists up to d_max.
    """
    d = np.arange(1, d_max + 1, dtype=np.float64)
    comp = inv.alpha_inv * np.exp(inv.beta_inv * d)
    comm = bc.alpha_bcast + bc.beta_bcast * (d * (d + 1) / 2)
    hits = np.nonzero(comp >= comm)[0]
    if hits.size == 0:
        return None
    return int(hits[0]) + 1


# --- calibration file I/O -------------------------------------------------

_PARAM_KEYS = (
    "alpha_ar",
    "beta_ar",
    "alpha_bcast",
    "beta_bcast",
    "alpha_inv",
    "beta_inv",
    "fitted_world_size",
)


def _decimal_str(x: float) -> str:
    # Shortest decimal that parses back to the same float, without exponent.
    return format(Decimal(repr(x)), "f")


def write_params(path, params: PerfParams) -> None:
    """Write a calibration as flat key-value lines in decimal notation."""
    values = {
        "alpha_ar": params.allreduce.alpha_ar,
        "beta_ar": params.allreduce.beta_ar,
        "alpha_bcast": params.bcast.alpha_bcast,
        "beta_bcast": params.bcast.beta_bcast,
        "alpha_inv": params.inverse.alpha_inv,
        "beta_inv": params.inverse.beta_inv,
    }
    lines = [f"{k} {_decimal_str(values[k])}" for k in _PARAM_KEYS[:-1]]
    lines.append(f"fitted_world_size {params.fitted_world_size}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_params(path) -> PerfParams:
    """Read a calibration written by write_params."""
    seen: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}: malformed line {lineno}: {raw!r}")
        key, value = parts
        if key not in _PARAM_KEYS:
            raise ValueError(f"{path}: unknown parameter {key!r} on line {lineno}")
        if key in seen:
            raise ValueError(f"{path}: duplicate parameter {key!r} on line {lineno}")
        seen[key] = value
    missing = [k for k in _PARAM_KEYS if k not in seen]
    if missing:
        raise ValueError(f"{path}: missing parameters: {', '.join(missing)}")
    return PerfParams(
        allreduce=AllReduceParams(float(seen["alpha_ar"]), float(seen["beta_ar"])),
        bcast=BcastParams(float(seen["alpha_bcast"]), float(seen["beta_bcast"])),
        inverse=InverseParams(float(seen["alpha_inv"]), float(seen["beta_inv"])),
        fitted_world_size=int(seen["fitted_world_size"]),
    )


def read_bench_csv(path) -> list[BenchSample]:
    """Read benchmark samples from a CSV with header ``size,time_seconds``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["size", "time_seconds"]:
            raise ValueError(f"{path}: expected header 'size,time_seconds', got {header}")
        samples = []
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: malformed row {row!r}")
            samples.append(BenchSample(size=int(row[0]), time=float(row[1])))
    return samples


def write_bench_csv(path, samples: Iterable[BenchSample]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["size", "time_seconds"])
        for s in samples:
            writer.writerow([s.size, repr(s.time)])

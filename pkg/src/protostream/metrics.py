"""Normalized streaming performance: per-size omega scores (time-averaged
ratio of streaming accuracy to the offline baseline at matching events)
and their mean across buffer sizes. Omega above 1 is legitimate and is
never clamped."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, NumericError, UsageError
from .protocol import AccuracyCurve


@dataclass(frozen=True)
class OmegaResult:
    """Omega for one buffer size (0 is the unbounded/no-buffer sentinel)."""

    buffer_size: int
    omega: float
    num_events: int


@dataclass(frozen=True)
class MuTotalResult:
    """Mean omega across distinct buffer sizes."""

    buffer_sizes: tuple[int, ...]
    mu: float


def omega_score(stream_curve: AccuracyCurve, offline_curve: AccuracyCurve,
                buffer_size: int = 0) -> OmegaResult:
    """Average the event-wise ratio stream/offline over the run.

    Both curves must share identical event times; every offline accuracy
    must be positive.
    """
    if not np.array_equal(stream_curve.times, offline_curve.times):
        raise DataFormatError("stream and offline curves have mismatched event times")
    if (offline_curve.values <= 0).any():
        raise NumericError("offline accuracy must be positive at every event")
    ratios = stream_curve.values / offline_curve.values
    return OmegaResult(int(buffer_size), float(ratios.mean()), stream_curve.num_events)


def mu_total(omegas) -> MuTotalResult:
    """Arithmetic mean of omega over distinct buffer sizes."""
    omegas = list(omegas)
    if not omegas:
        raise UsageError("mu_total needs at least one omega result")
    sizes = [o.buffer_size for o in omegas]
    if len(set(sizes)) != len(sizes):
        raise UsageError(f"duplicate buffer sizes in mu_total input: {sorted(sizes)}")
    mu = float(np.mean([o.omega for o in omegas]))
    return MuTotalResult(tuple(sorted(sizes)), mu)

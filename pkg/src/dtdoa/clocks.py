"""Per-node clock error model.

A receiver timestamps a packet arriving at true time ``r`` (seconds, ideal
clock) with its own free-running counter. The recorded value, converted to
seconds, is

    s = alpha + (1 + beta) * r + h(r) + w

where ``alpha`` is the initial counter offset, ``beta`` the relative
frequency deviation of the oscillator, ``h`` a slowly-varying drift term and
``w`` fast noise. Timestamps are kept in ticks of the nominal counter
frequency and computed in extended precision so that the noiseless model is
exact to well below a femtosecond.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

FloatOrArray = Union[float, np.ndarray]


@dataclass(frozen=True)
class DriftSpec:
    """Slow non-stationary clock error component.

    kind:
        "none"    no drift.
        "linear"  h(r) = rate_s_per_s * r.
        "sine"    h(r) = amplitude_s * sin(2*pi*r / period_s).
    """

    kind: str = "none"
    rate_s_per_s: float = 0.0
    amplitude_s: float = 0.0
    period_s: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "linear", "sine"):
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if self.kind == "sine" and self.period_s <= 0:
            raise ValueError("sine drift requires a positive period")

    def evaluate(self, r: FloatOrArray) -> FloatOrArray:
        if self.kind == "none":
            return 0.0
        if self.kind == "linear":
            return self.rate_s_per_s * np.asanyarray(r)
        return self.amplitude_s * np.sin(2.0 * np.pi * np.asanyarray(r) / self.period_s)


@dataclass(frozen=True)
class NoiseSpec:
    """Fast per-timestamp error component.

    kind:
        "none"           exact timestamps (fractional ticks).
        "quantize"       truncation to whole ticks, a uniform error of one
                         tick width; the dominant effect in real counters.
        "gaussian"       zero-mean Gaussian jitter with sigma_s seconds.
        "gaussian_bias"  Gaussian jitter plus a constant per-node bias.
    """

    kind: str = "quantize"
    sigma_s: float = 0.0
    bias_s: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "quantize", "gaussian", "gaussian_bias"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma_s < 0:
            raise ValueError("noise sigma must be >= 0")


@dataclass(frozen=True)
class ClockModel:
    """Complete error model of one node's local clock."""

    alpha_s: float = 0.0
    beta: float = 0.0
    drift: DriftSpec = DriftSpec()
    noise: NoiseSpec = NoiseSpec()

    def __post_init__(self) -> None:
        if abs(self.beta) >= 1e-3:
            raise ValueError(f"|beta| must be < 1e-3, got {self.beta}")


IDEAL_CLOCK = ClockModel(noise=NoiseSpec(kind="none"))


def local_timestamp(
    clock: ClockModel,
    reception_time_s: FloatOrArray,
    tick_rate_hz: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Timestamp reception times through a clock model, returning ticks.

    ``reception_time_s`` may be a scalar or an array; one noise draw is made
    per element, so results are deterministic given the generator state.
    Output is extended-precision ticks ("quantize" yields integer values).
    """
    if tick_rate_hz <= 0:
        raise ValueError(f"tick rate must be positive, got {tick_rate_hz}")
    r = np.atleast_1d(np.asarray(reception_time_s, dtype=np.longdouble))
    s = np.longdouble(clock.alpha_s) + (1.0 + np.longdouble(clock.beta)) * r
    if clock.drift.kind != "none":
        s = s + clock.drift.evaluate(r)
    noise = clock.noise
    if noise.kind in ("gaussian", "gaussian_bias"):
        s = s + rng.normal(0.0, noise.sigma_s, size=r.shape)
        if noise.kind == "gaussian_bias":
            s = s + np.longdouble(noise.bias_s)
    ticks = s * np.longdouble(tick_rate_hz)
    if noise.kind == "quantize":
        ticks = np.floor(ticks)
    return ticks if np.ndim(reception_time_s) else ticks[0]

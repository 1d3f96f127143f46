"""Flip-flop capture of an asynchronous trigger and the cascaded delay chain.

Capture model
-------------
An arrival ``t`` is compared with its nearest sampling edge ``E``. Outside
the window (distance greater than ``window_width / 2``) the register
captures deterministically at the first edge at or after ``t``. Inside it,
the latch goes metastable and resolves to either ``E`` or ``E + period``;
the later edge is chosen with ``resolve_probability``. A window of zero
width never goes metastable.

Delay chain
-----------
Four cascaded elements (2 ODELAY + 2 IDELAY) advance together, so one
modification adds ``4 * tap_step``. The default step of 4444 fs makes 225
modifications span one 4 ns cycle. At that step 511 taps give about
9.08 ns, more than the roughly 8 ns quoted for the hardware; set
``element_max_delay`` to model a saturating element instead.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, TapSaturationError
from .timebase import PS, ClockDomain, Duration, RngHandle, TimeStamp, next_edges_at_or_after

PROFILES = ("hard_window", "linear_ramp")

DEFAULT_WINDOW = 90 * PS
DEFAULT_TAP_STEP = 4444  # fs
CHAIN_ELEMENTS = 4
TAPS_PER_ELEMENT = 512


@dataclass(frozen=True)
class MetastabilityModel:
    window_width: Duration = DEFAULT_WINDOW
    resolve_probability: float = 0.5
    profile: str = "hard_window"

    def __post_init__(self):
        if self.window_width < 0:
            raise ConfigurationError("window_width must be >= 0")
        if not 0.0 <= self.resolve_probability <= 1.0:
            raise ConfigurationError("resolve_probability must lie in [0, 1]")
        if self.profile not in PROFILES:
            raise ConfigurationError(f"unknown metastability profile {self.profile!r}")


@dataclass(frozen=True)
class LatchOutcome:
    captured_edge: TimeStamp
    was_metastable: bool


def latch_many(
    arrivals: np.ndarray,
    clock: ClockDomain,
    model: MetastabilityModel,
    rng: RngHandle,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised capture. Returns ``(captured_edges, was_metastable)``."""
    t = np.asarray(arrivals, dtype=np.int64)
    n = t.shape[0]
    captured = next_edges_at_or_after(clock, t)
    period, width = clock.period, model.window_width
    # resolution draws are always consumed so the stream position is independent of geometry
    u_resolve = rng.random(n)
    if width == 0:
        return captured, np.zeros(n, dtype=bool)

    lower = clock.phase + ((t - clock.phase) // period) * period
    offset = t - lower
    near_lower = 2 * offset <= period
    nearest = np.where(near_lower, lower, lower + period)
    distance = np.where(near_lower, offset, period - offset)

    inside = (2 * distance <= width) & (nearest >= clock.phase)
    if model.profile == "linear_ramp":
        u_event = rng.random(n)
        probability = 1.0 - 2.0 * distance / width
        metastable = inside & (u_event < probability)
    else:
        metastable = inside

    later = u_resolve < model.resolve_probability
    resolved = np.where(later, nearest + period, nearest)
    return np.where(metastable, resolved, captured), metastable


def latch_trigger(
    arrival: TimeStamp,
    clock: ClockDomain,
    model: MetastabilityModel,
    rng: RngHandle,
) -> LatchOutcome:
    edges, meta = latch_many(np.array([arrival], dtype=np.int64), clock, model, rng)
    return LatchOutcome(int(edges[0]), bool(meta[0]))


@dataclass(frozen=True)
class DelayChain:
    elements: int = CHAIN_ELEMENTS
    taps_per_element: int = TAPS_PER_ELEMENT
    tap_step: Duration = DEFAULT_TAP_STEP
    current_tap: int = 0
    element_max_delay: Duration | None = None

    def __post_init__(self):
        if self.elements < 1 or self.taps_per_element < 1:
            raise ConfigurationError("delay chain needs at least one element and one tap")
        if self.tap_step <= 0:
            raise ConfigurationError("tap_step must be positive")
        if not 0 <= self.current_tap < self.taps_per_element:
            raise ConfigurationError(
                f"tap {self.current_tap} outside [0, {self.taps_per_element - 1}]"
            )
        if self.element_max_delay is not None and self.element_max_delay < 0:
            raise ConfigurationError("element_max_delay must be >= 0")

    @property
    def max_tap(self) -> int:
        return self.taps_per_element - 1

    @property
    def step_per_modification(self) -> Duration:
        return self.elements * self.tap_step

    def at_tap(self, tap: int) -> "DelayChain":
        return replace(self, current_tap=tap)

    def reset(self) -> "DelayChain":
        return self.at_tap(0)

    def delay_at(self, tap: int) -> Duration:
        per_element = tap * self.tap_step
        if self.element_max_delay is not None:
            per_element = min(per_element, self.element_max_delay)
        return self.elements * per_element


def chain_delay(chain: DelayChain) -> Duration:
    """Total delay of all cascaded elements at the current tap."""
    return chain.delay_at(chain.current_tap)


def increment_tap(chain: DelayChain) -> DelayChain:
    """Advance every element by one tap."""
    if chain.current_tap >= chain.max_tap:
        raise TapSaturationError(f"delay chain already at tap {chain.max_tap}")
    return chain.at_tap(chain.current_tap + 1)

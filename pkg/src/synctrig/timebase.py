"""Integer-femtosecond time base, clock domains, jitter and seeded randomness.

Every time and duration in the package is a plain ``int`` counting
femtoseconds. Vectorised paths use ``numpy.int64`` arrays, which cover
roughly 2.5 hours of simulated time.

Randomness
----------
:class:`RngHandle` wraps numpy's PCG64 bit generator, seeded through
``SeedSequence(seed, spawn_key=(stream_id, *path))``. PCG64 output and
``SeedSequence`` hashing are defined on fixed-width unsigned integers, so a
given ``(seed, stream_id, path)`` yields the same stream on every platform.
Sub-streams are derived with :meth:`RngHandle.child`, which never consumes
state from the parent; a consumer that needs to replay draws takes a
:meth:`RngHandle.clone`.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

from .errors import ConfigurationError

TimeStamp = int
Duration = int

FS = 1
PS = 1_000
NS = 1_000_000
US = 1_000_000_000
MS = 1_000_000_000_000

UNITS = {"fs": FS, "ps": PS, "ns": NS, "us": US, "µs": US, "ms": MS}

DEFAULT_CLOCK_PERIOD = 4 * NS  # 250 MHz sampling clock

_U64 = 1 << 64


def parse_duration(value: Union[int, str]) -> Duration:
    """Parse ``"40 ns"``, ``"4444 fs"``, ``"4.4 ps"`` or a bare int (fs).

    Fractional femtosecond results are rejected rather than rounded.
    """
    if isinstance(value, bool):
        raise ConfigurationError(f"not a duration: {value!r}")
    if isinstance(value, int):
        return value
    if not isinstance(value, str):
        raise ConfigurationError(f"not a duration: {value!r}")
    text = value.strip()
    for unit in sorted(UNITS, key=len, reverse=True):
        if text.endswith(unit):
            number = text[: -len(unit)].strip()
            break
    else:
        unit, number = "fs", text
    try:
        exact = Fraction(number) * UNITS[unit]
    except (ValueError, ZeroDivisionError):
        raise ConfigurationError(f"not a duration: {value!r}") from None
    if exact.denominator != 1:
        raise ConfigurationError(f"{value!r} is not a whole number of femtoseconds")
    return int(exact)


def format_duration(value: Duration) -> str:
    """Render in the largest unit that keeps the value exact."""
    for unit, scale in (("ms", MS), ("us", US), ("ns", NS), ("ps", PS)):
        if value and value % scale == 0:
            return f"{value // scale} {unit}"
    return f"{value} fs"


@dataclass(frozen=True)
class ClockDomain:
    """A free-running clock with edges at ``phase + k * period`` for k >= 0."""

    period: Duration = DEFAULT_CLOCK_PERIOD
    phase: Duration = 0

    def __post_init__(self):
        if self.period <= 0:
            raise ConfigurationError(f"clock period must be positive, got {self.period}")
        if not 0 <= self.phase < self.period:
            raise ConfigurationError(
                f"clock phase must lie in [0, {self.period}), got {self.phase}"
            )

    @classmethod
    def with_offset(cls, period: Duration, offset: Duration) -> "ClockDomain":
        """Clock whose edges sit at ``offset`` modulo ``period`` (offset may be any int)."""
        return cls(period=period, phase=offset % period)

    def edge(self, k: int) -> TimeStamp:
        if k < 0:
            raise ValueError("edge index must be non-negative")
        return self.phase + k * self.period


def next_edge_at_or_after(clock: ClockDomain, t: TimeStamp) -> TimeStamp:
    """Smallest edge time ``e >= t``."""
    if t <= clock.phase:
        return clock.phase
    cycles = -((clock.phase - t) // clock.period)  # ceil((t - phase) / period)
    return clock.phase + cycles * clock.period


def next_edges_at_or_after(clock: ClockDomain, t: np.ndarray) -> np.ndarray:
    """Vectorised :func:`next_edge_at_or_after`."""
    t = np.asarray(t, dtype=np.int64)
    cycles = -((clock.phase - t) // clock.period)
    return clock.phase + np.maximum(cycles, 0) * clock.period


JITTER_KINDS = ("none", "uniform", "gaussian")


@dataclass(frozen=True)
class JitterSpec:
    """Zero-mean bounded jitter.

    ``uniform`` draws integers in ``[-half_width, +half_width]``.
    ``gaussian`` is truncated to ``[-clamp, +clamp]`` by rejection
    (clamp defaults to 5 sigma) and rounded to whole femtoseconds.
    """

    kind: str = "none"
    half_width: Duration = 0
    sigma: Duration = 0
    clamp: Duration | None = None

    def __post_init__(self):
        if self.kind not in JITTER_KINDS:
            raise ConfigurationError(f"unknown jitter kind {self.kind!r}")
        if self.half_width < 0 or self.sigma < 0:
            raise ConfigurationError("jitter half_width and sigma must be >= 0")
        if self.kind == "gaussian":
            if self.clamp is None:
                object.__setattr__(self, "clamp", 5 * self.sigma)
            elif self.clamp < 0:
                raise ConfigurationError("jitter clamp must be >= 0")

    @classmethod
    def none(cls) -> "JitterSpec":
        return cls()

    @classmethod
    def uniform(cls, half_width: Duration) -> "JitterSpec":
        return cls(kind="uniform", half_width=half_width)

    @classmethod
    def gaussian(cls, sigma: Duration, clamp: Duration | None = None) -> "JitterSpec":
        return cls(kind="gaussian", sigma=sigma, clamp=clamp)

    @property
    def bound(self) -> Duration:
        """Largest possible absolute draw."""
        if self.kind == "uniform":
            return self.half_width
        if self.kind == "gaussian":
            return self.clamp
        return 0

    @property
    def is_none(self) -> bool:
        return self.bound == 0


def _key(k: Union[int, str]) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    if not 0 <= k < _U64:
        raise ValueError(f"stream key out of range: {k}")
    return int(k)


class RngHandle:
    """Seeded random stream identified by ``(seed, stream_id)``."""

    def __init__(self, seed: int, stream_id: int = 0, path: tuple[int, ...] = ()):
        if not 0 <= seed < _U64 or not 0 <= stream_id < _U64:
            raise ValueError("seed and stream_id must be 64-bit unsigned integers")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.path = tuple(path)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self):
        return f"RngHandle(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"

    def clone(self) -> "RngHandle":
        """Copy including the current position in the stream."""
        other = RngHandle(self.seed, self.stream_id, self.path)
        other.generator.bit_generator.state = self.generator.bit_generator.state
        return other

    def child(self, *keys: Union[int, str]) -> "RngHandle":
        """Independent sub-stream; does not advance this handle."""
        return RngHandle(self.seed, self.stream_id, self.path + tuple(_key(k) for k in keys))

    def random(self, n: int) -> np.ndarray:
        return self.generator.random(n)


def sample_jitter_array(spec: JitterSpec, rng: RngHandle, n: int) -> np.ndarray:
    """``n`` signed jitter draws as an int64 array."""
    if spec.kind == "none" or n == 0:
        return np.zeros(n, dtype=np.int64)
    gen = rng.generator
    if spec.kind == "uniform":
        return gen.integers(-spec.half_width, spec.half_width, size=n, endpoint=True, dtype=np.int64)
    if spec.sigma == 0 or spec.clamp == 0:
        return np.zeros(n, dtype=np.int64)
    x = gen.standard_normal(n) * spec.sigma
    bad = np.abs(x) > spec.clamp
    while bad.any():
        x[bad] = gen.standard_normal(int(bad.sum())) * spec.sigma
        bad = np.abs(x) > spec.clamp
    return np.rint(x).astype(np.int64)


def sample_jitter(spec: JitterSpec, rng: RngHandle) -> int:
    """One signed jitter draw in femtoseconds."""
    return int(sample_jitter_array(spec, rng, 1)[0])

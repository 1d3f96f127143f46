"""Self-adaptive delay calibration.

The master resets its delay chain, then for every tap sends a burst of
loopback probe pulses through the trigger fan-out and back into its own
sampling register. A tap is flagged when any received interval differs
from the emitted one. The committed tap is the midpoint of the longest
run of unflagged taps (lowest start wins a tie; no wraparound because
delay is monotone in the tap index).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence, TextIO, Union

import numpy as np

from .errors import CalibrationError, ConfigurationError, InsufficientDataError
from .metastability import DelayChain, MetastabilityModel, chain_delay, increment_tap, latch_many
from .timebase import NS, ClockDomain, Duration, RngHandle
from .topology import Topology, clock_domains, propagation_delays

FULL_PULSE_COUNT = 50_000
DESK_PULSE_COUNT = 10_000
SWEEP_PULSE_COUNT = 1_000_000
SWEEP_INTERVAL = 800 * NS

TAPS_CSV_HEADER = ("tap", "total_delay_fs", "error_count", "error_flag", "metastable_probability")


@dataclass(frozen=True)
class ProbeConfig:
    pulse_count: int = FULL_PULSE_COUNT
    interval: Duration = 40 * NS

    def __post_init__(self):
        if self.pulse_count < 2:
            raise ConfigurationError("probe pulse_count must be >= 2")
        if self.interval <= 0:
            raise ConfigurationError("probe interval must be positive")


@dataclass(frozen=True)
class ProbeRecord:
    received_count: int
    measured_intervals: np.ndarray
    error_count: int
    metastable_count: int = 0  # simulator-only diagnostic; hardware cannot see it


@dataclass(frozen=True)
class TapScan:
    error_flags: np.ndarray
    error_counts: np.ndarray
    total_delays: np.ndarray
    intervals_per_tap: int
    metastable_counts: np.ndarray | None = None

    def __post_init__(self):
        if not np.array_equal(self.error_flags, self.error_counts > 0):
            raise ValueError("error_flags must equal error_counts > 0")

    def __len__(self):
        return len(self.error_flags)

    @property
    def probabilities(self) -> np.ndarray:
        """Fraction of measured intervals that were wrong, per tap."""
        return self.error_counts / self.intervals_per_tap


@dataclass(frozen=True)
class StableRegion:
    start_tap: int
    end_tap: int
    mid_tap: int

    @property
    def length(self) -> int:
        return self.end_tap - self.start_tap + 1

    @property
    def margin_taps(self) -> int:
        """Taps between the midpoint and the nearer end of the region."""
        return min(self.mid_tap - self.start_tap, self.end_tap - self.mid_tap)


@dataclass(frozen=True)
class CalibrationResult:
    scan: TapScan
    region: StableRegion
    committed_tap: int
    chain: DelayChain

    @property
    def margin(self) -> Duration:
        """Lower bound on the time between the committed arrival and any flagged arrival."""
        return self.region.margin_taps * self.chain.step_per_modification


def _master_clock(topo: Topology, clocks: dict[int, ClockDomain] | None, rng: RngHandle) -> ClockDomain:
    if clocks is None:
        clocks = clock_domains(topo, rng)
    return clocks[topo.master]


def run_probe_burst(
    topo: Topology,
    chain: DelayChain,
    model: MetastabilityModel,
    cfg: ProbeConfig,
    rng: RngHandle,
    *,
    clocks: dict[int, ClockDomain] | None = None,
) -> ProbeRecord:
    """One burst of loopback pulses at the chain's current tap.

    Pulses leave on master clock edges, pass through the chain and the
    master -> fan-out -> master loop, and are captured by the master's
    sampling register. Slaves ignore them.
    """
    master = topo.master
    topo.find_path(master, master)  # raises TopologyError without a return link
    clock = _master_clock(topo, clocks, rng)
    if cfg.interval % clock.period:
        raise ConfigurationError(
            f"probe interval {cfg.interval} fs is not a whole number of {clock.period} fs cycles"
        )
    n = cfg.pulse_count
    emit = clock.phase + np.arange(n, dtype=np.int64) * cfg.interval
    arrivals = emit + chain_delay(chain) + propagation_delays(topo, master, master, rng.child("path"), n)
    captured, metastable = latch_many(arrivals, clock, model, rng.child("latch"))
    intervals = np.diff(captured)
    return ProbeRecord(
        received_count=n,
        measured_intervals=intervals,
        error_count=int(np.count_nonzero(intervals != cfg.interval)),
        metastable_count=int(np.count_nonzero(metastable)),
    )


def scan_all_taps(
    topo: Topology,
    model: MetastabilityModel,
    cfg: ProbeConfig,
    rng: RngHandle,
    *,
    chain: DelayChain | None = None,
    clocks: dict[int, ClockDomain] | None = None,
) -> TapScan:
    """Probe every tap in order, starting from the reset (minimum) delay."""
    chain = (chain or DelayChain()).reset()
    if clocks is None:
        clocks = clock_domains(topo, rng)
    taps = chain.taps_per_element
    counts = np.zeros(taps, dtype=np.int64)
    meta = np.zeros(taps, dtype=np.int64)
    delays = np.zeros(taps, dtype=np.int64)
    for tap in range(taps):
        record = run_probe_burst(topo, chain, model, cfg, rng.child("tap", tap), clocks=clocks)
        counts[tap] = record.error_count
        meta[tap] = record.metastable_count
        delays[tap] = chain_delay(chain)
        if tap < chain.max_tap:
            chain = increment_tap(chain)
    return TapScan(counts > 0, counts, delays, cfg.pulse_count - 1, meta)


def _flags(scan: Union[TapScan, Sequence[bool], np.ndarray]) -> np.ndarray:
    if isinstance(scan, TapScan):
        return scan.error_flags
    return np.asarray(scan, dtype=bool)


def zero_runs(flags) -> list[tuple[int, int]]:
    """Inclusive ``(start, end)`` of every maximal run of unflagged taps."""
    return _runs(~_flags(flags))


def error_clusters(flags) -> list[tuple[int, int]]:
    """Inclusive ``(start, end)`` of every maximal run of flagged taps."""
    return _runs(_flags(flags))


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(s), int(e) - 1) for s, e in zip(edges[::2], edges[1::2])]


def find_stable_region(scan) -> StableRegion:
    """Longest zero run over the linear tap range; lowest start breaks a tie."""
    runs = zero_runs(scan)
    if not runs:
        raise CalibrationError("every tap is flagged; no stable region")
    start, end = max(runs, key=lambda r: (r[1] - r[0], -r[0]))
    return StableRegion(start, end, (start + end) // 2)


@dataclass(frozen=True)
class ClusterStats:
    clusters: list[tuple[int, int]]

    @property
    def widths(self) -> list[int]:
        return [e - s + 1 for s, e in self.clusters]

    @property
    def centers(self) -> list[float]:
        return [(s + e) / 2 for s, e in self.clusters]

    @property
    def spacings(self) -> list[float]:
        c = self.centers
        return [b - a for a, b in zip(c, c[1:])]

    @property
    def mean_width(self) -> float:
        return float(np.mean(self.widths)) if self.clusters else 0.0


def cluster_stats(flags) -> ClusterStats:
    return ClusterStats(error_clusters(flags))


def run_self_adaptation(
    topo: Topology,
    model: MetastabilityModel,
    cfg: ProbeConfig,
    rng: RngHandle,
    *,
    chain: DelayChain | None = None,
    clocks: dict[int, ClockDomain] | None = None,
    on_complete: Callable[[CalibrationResult], None] | None = None,
) -> CalibrationResult:
    """Scan all taps, pick the stable region and commit its midpoint."""
    topo.master  # raises without a master
    chain = (chain or DelayChain()).reset()
    scan = scan_all_taps(topo, model, cfg, rng, chain=chain, clocks=clocks)
    region = find_stable_region(scan)
    result = CalibrationResult(scan, region, region.mid_tap, chain.at_tap(region.mid_tap))
    if on_complete is not None:
        on_complete(result)
    return result


def monitor_intervals(
    expected: Union[Duration, Sequence[Duration], np.ndarray],
    observed_edges: Sequence[int] | np.ndarray,
    period: Duration | None = None,
) -> bool:
    """Jitter flag: True iff some consecutive interval differs from ``expected``.

    ``expected`` is one interval or one per consecutive pair. With
    ``period`` the observed intervals are first rounded to whole cycles.
    """
    edges = np.asarray(observed_edges, dtype=np.int64)
    if edges.size < 2:
        raise InsufficientDataError("need at least two edges to measure an interval")
    intervals = np.diff(edges)
    if period is not None:
        intervals = ((2 * intervals + period) // (2 * period)) * period
    return bool(np.any(intervals != np.asarray(expected, dtype=np.int64)))


def write_taps_csv(scan: TapScan, out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TAPS_CSV_HEADER)
    for tap in range(len(scan)):
        writer.writerow((
            tap,
            int(scan.total_delays[tap]),
            int(scan.error_counts[tap]),
            int(scan.error_flags[tap]),
            f"{scan.error_counts[tap] / scan.intervals_per_tap:.6f}",
        ))

"""Two-level trigger schedule, slave capture/output, and skew measurement.

Within a level-1 block pulse 0 asks the ADC to measure the qubit and pulse
1 lets the slave decide whether to emit a pi pulse from that result; with
more than two pulses per block the roles alternate. Level 2 repeats the
block ``level2_count`` times.

The master emits each trigger on its first clock edge at or after the
scheduled time. A slave's analog output is its captured edge plus a small
per-event output-path offset, which is what the skew measurement sees.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterator, TextIO

import numpy as np

from .calibration import monitor_intervals
from .errors import ConfigurationError, InsufficientDataError
from .metastability import DelayChain, MetastabilityModel, chain_delay, latch_many
from .timebase import NS, PS, US, ClockDomain, Duration, JitterSpec, RngHandle, next_edges_at_or_after, sample_jitter_array
from .topology import Topology, clock_domains, propagation_delays

ROLES = ("measure", "conditional_reset")
MEASURE, CONDITIONAL_RESET = 0, 1

RESET_BUDGET = 1 * US
SKEW_BOUND = 25 * PS
DEFAULT_OUTPUT_JITTER = JitterSpec.gaussian(sigma=5 * PS, clamp=25 * PS)

RUN_CSV_HEADER = ("pulse_index", "awg_id", "output_time_fs", "role", "emitted_pi", "metastable")


@dataclass(frozen=True)
class TriggerConfig:
    output_delay: Duration = 0
    pulse_width: Duration = 20 * NS
    level1_interval: Duration = 400 * NS
    level1_count: int = 2
    level2_interval: Duration = 1 * US
    level2_count: int = 10

    def __post_init__(self):
        for name in ("output_delay", "pulse_width", "level1_interval", "level2_interval"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.level1_count < 1 or self.level2_count < 1:
            raise ConfigurationError("trigger counts must be >= 1")
        if self.level1_interval * (self.level1_count - 1) >= self.level2_interval:
            raise ConfigurationError(
                "level-1 blocks overlap: level1_interval * (level1_count - 1) "
                f"= {self.level1_interval * (self.level1_count - 1)} fs must be < "
                f"level2_interval = {self.level2_interval} fs"
            )

    @property
    def pulse_count(self) -> int:
        return self.level1_count * self.level2_count

    @property
    def block_span(self) -> Duration:
        return self.level1_interval * (self.level1_count - 1) + self.pulse_width


@dataclass(frozen=True)
class QubitStateModel:
    excited_probability: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.excited_probability <= 1.0:
            raise ConfigurationError("excited_probability must lie in [0, 1]")


@dataclass(frozen=True)
class Schedule:
    pulse_index: np.ndarray
    emit_time: np.ndarray
    role: np.ndarray

    def __len__(self):
        return len(self.pulse_index)

    def __iter__(self) -> Iterator[tuple[int, int, str]]:
        for k, t, r in zip(self.pulse_index, self.emit_time, self.role):
            yield int(k), int(t), ROLES[r]


def generate_schedule(cfg: TriggerConfig) -> Schedule:
    """Emit times ``output_delay + j * level2_interval + i * level1_interval``."""
    i = np.tile(np.arange(cfg.level1_count, dtype=np.int64), cfg.level2_count)
    j = np.repeat(np.arange(cfg.level2_count, dtype=np.int64), cfg.level1_count)
    emit = cfg.output_delay + j * cfg.level2_interval + i * cfg.level1_interval
    return Schedule(
        pulse_index=np.arange(cfg.pulse_count, dtype=np.int64),
        emit_time=emit,
        role=(i % 2).astype(np.int8),
    )


def validate_reset_budget(cfg: TriggerConfig) -> str | None:
    """Warning text if a level-1 block does not fit the 1 us reset budget, else None."""
    if cfg.block_span > RESET_BUDGET:
        return (
            f"level-1 block spans {cfg.block_span} fs, exceeding the "
            f"{RESET_BUDGET} fs artificial-reset budget"
        )
    return None


@dataclass(frozen=True)
class AwgTrace:
    """Per-pulse record for one AWG; ``emitted_pi`` is -1 where absent."""

    pulse_index: np.ndarray
    captured_edge: np.ndarray
    output_time: np.ndarray
    emitted_pi: np.ndarray
    metastable: np.ndarray

    def rows(self) -> Iterator[tuple[int, int, bool | None]]:
        for k, t, pi in zip(self.pulse_index, self.output_time, self.emitted_pi):
            yield int(k), int(t), None if pi < 0 else bool(pi)


@dataclass(frozen=True)
class RunReport:
    schedule: Schedule
    traces: dict[int, AwgTrace]
    metastable_events: dict[int, int] = field(default_factory=dict)
    jitter_flags: dict[int, bool] = field(default_factory=dict)

    @property
    def per_awg_outputs(self) -> dict[int, list[tuple[int, int, bool | None]]]:
        return {awg: list(trace.rows()) for awg, trace in self.traces.items()}


def simulate_run(
    topo: Topology,
    chain: DelayChain,
    model: MetastabilityModel,
    cfg: TriggerConfig,
    qubits: QubitStateModel,
    rng: RngHandle,
    *,
    clocks: dict[int, ClockDomain] | None = None,
    output_jitter: JitterSpec = DEFAULT_OUTPUT_JITTER,
) -> RunReport:
    """Play the schedule to every slave through the committed delay chain.

    Callers gate this on a committed calibration (see the command
    protocol); the chain passed in is used as-is.
    """
    if clocks is None:
        clocks = clock_domains(topo, rng)
    schedule = generate_schedule(cfg)
    n = len(schedule)
    master = topo.master
    emitted = next_edges_at_or_after(clocks[master], schedule.emit_time)
    expected = np.diff(emitted)
    departure = emitted + chain_delay(chain)
    is_reset = schedule.role == CONDITIONAL_RESET

    traces, meta_counts, flags = {}, {}, {}
    for awg in topo.slaves:
        arrivals = departure + propagation_delays(topo, master, awg, rng.child("path", awg), n)
        captured, metastable = latch_many(arrivals, clocks[awg], model, rng.child("latch", awg))
        output = captured + sample_jitter_array(output_jitter, rng.child("output", awg), n)

        excited = rng.child("qubit", awg).random(n) < qubits.excited_probability
        emitted_pi = np.full(n, -1, dtype=np.int8)
        resets = np.flatnonzero(is_reset)
        # a reset pulse always follows its block's measure pulse
        emitted_pi[resets] = excited[resets - 1]

        traces[awg] = AwgTrace(schedule.pulse_index, captured, output, emitted_pi, metastable)
        meta_counts[awg] = int(np.count_nonzero(metastable))
        flags[awg] = monitor_intervals(expected, captured) if n >= 2 else False
    return RunReport(schedule, traces, meta_counts, flags)


def measure_skew(report: RunReport) -> tuple[Duration, np.ndarray]:
    """Per-pulse spread of output times across AWGs, and its maximum."""
    if len(report.traces) < 2:
        raise InsufficientDataError("skew needs at least two AWGs")
    traces = list(report.traces.values())
    common = traces[0].pulse_index
    for trace in traces[1:]:
        common = np.intersect1d(common, trace.pulse_index)
    if common.size == 0:
        raise InsufficientDataError("no pulse was latched by every AWG")
    times = np.vstack([t.output_time[np.searchsorted(t.pulse_index, common)] for t in traces])
    per_pulse = times.max(axis=0) - times.min(axis=0)
    return int(per_pulse.max()), per_pulse


def nearest_rank(values: np.ndarray, q: float) -> int:
    """Nearest-rank percentile (exact, integer-valued)."""
    ordered = np.sort(np.asarray(values))
    rank = max(1, int(np.ceil(q / 100 * len(ordered))))
    return int(ordered[rank - 1])


def skew_summary(per_pulse: np.ndarray, bound: Duration = SKEW_BOUND) -> dict[str, int | float]:
    return {
        "pulses": int(per_pulse.size),
        "min_fs": int(per_pulse.min()),
        "p50_fs": nearest_rank(per_pulse, 50),
        "p90_fs": nearest_rank(per_pulse, 90),
        "p99_fs": nearest_rank(per_pulse, 99),
        "max_fs": int(per_pulse.max()),
        "within_bound_fraction": float(np.mean(per_pulse <= bound)),
    }


def write_run_csv(report: RunReport, out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(RUN_CSV_HEADER)
    awgs = sorted(report.traces)
    roles = report.schedule.role
    for k in range(len(report.schedule)):
        for awg in awgs:
            trace = report.traces[awg]
            pi = int(trace.emitted_pi[k])
            writer.writerow((
                k,
                awg,
                int(trace.output_time[k]),
                ROLES[roles[k]],
                "" if pi < 0 else pi,
                int(trace.metastable[k]),
            ))

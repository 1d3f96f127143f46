"""Scenario runner: drives calibration and runs through the command protocol."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from .calibration import (
    SWEEP_INTERVAL,
    SWEEP_PULSE_COUNT,
    CalibrationResult,
    ProbeConfig,
    TapScan,
    run_self_adaptation,
    scan_all_taps,
)
from .errors import InvariantViolation
from .protocol import Controller, ReportJitter, SelfAdaptComplete, StartSelfAdapt
from .scenario import Scenario
from .timebase import ClockDomain
from .topology import Topology
from .trigger import RunReport, simulate_run

log = logging.getLogger(__name__)


@dataclass
class Session:
    scenario: Scenario
    topology: Topology
    clocks: dict[int, ClockDomain]
    controller: Controller

    @classmethod
    def open(cls, scenario: Scenario) -> "Session":
        topo = scenario.build_topology()
        return cls(scenario, topo, scenario.clocks(topo), Controller(topo.master, topo.slaves))


def calibrate(session: Session) -> CalibrationResult:
    s, topo = session.scenario, session.topology
    ctl = session.controller
    ctl.send(topo.master, StartSelfAdapt())
    result = run_self_adaptation(
        topo, s.metastability, s.probe, s.rng().child("calibration"),
        chain=s.chain, clocks=session.clocks,
        on_complete=lambda r: ctl.send(topo.master, SelfAdaptComplete(r.committed_tap)),
    )
    if result.scan.error_flags[result.committed_tap]:
        raise InvariantViolation(f"committed tap {result.committed_tap} is flagged")
    log.info("calibration committed tap %d", result.committed_tap)
    return result


def run(session: Session, uncalibrated: bool = False) -> tuple[CalibrationResult | None, RunReport]:
    s, topo = session.scenario, session.topology
    ctl = session.controller
    calibration = None
    if uncalibrated:
        chain = s.chain.reset()
    else:
        calibration = calibrate(session)
        chain = calibration.chain
    ctl.arm_all(uncalibrated=uncalibrated)
    ctl.run_all(s.trigger, uncalibrated=uncalibrated)
    report = simulate_run(topo, chain, s.metastability, s.trigger, s.qubits,
                          s.rng().child("run"), clocks=session.clocks, output_jitter=s.output_jitter)
    for awg, flagged in report.jitter_flags.items():
        if flagged:
            ctl.send(awg, ReportJitter())
    return calibration, report


def sweep(session: Session, long_mode: bool = False) -> TapScan:
    s = session.scenario
    probe = ProbeConfig(SWEEP_PULSE_COUNT, SWEEP_INTERVAL) if long_mode else s.probe
    return scan_all_taps(session.topology, s.metastability, probe, s.rng().child("sweep"),
                         chain=s.chain, clocks=session.clocks)


def full_scale(scenario: Scenario) -> Scenario:
    """Probe bursts of 50,000 pulses at 40 ns, as on the hardware."""
    return replace(scenario, probe=ProbeConfig())


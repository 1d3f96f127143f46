"""Seeded simulator of self-adaptive synchronous triggering for an AWG array."""

from .calibration import (
    CalibrationResult,
    ProbeConfig,
    ProbeRecord,
    StableRegion,
    TapScan,
    cluster_stats,
    find_stable_region,
    monitor_intervals,
    run_probe_burst,
    run_self_adaptation,
    scan_all_taps,
)
from .errors import (
    CalibrationError,
    ConfigurationError,
    InsufficientDataError,
    InvariantViolation,
    ProtocolError,
    RoleError,
    SequencingError,
    SyncTrigError,
    TapSaturationError,
    TopologyError,
)
from .metastability import (
    DelayChain,
    LatchOutcome,
    MetastabilityModel,
    chain_delay,
    increment_tap,
    latch_many,
    latch_trigger,
)
from .scenario import Scenario, load_scenario, parse_scenario
from .timebase import (
    FS,
    NS,
    PS,
    US,
    ClockDomain,
    JitterSpec,
    RngHandle,
    next_edge_at_or_after,
    sample_jitter,
)
from .topology import (
    Link,
    Node,
    Topology,
    build_star_topology,
    clock_domains,
    max_supported_awgs,
    propagation_delay,
    resources_for_qubits,
)
from .trigger import (
    QubitStateModel,
    RunReport,
    TriggerConfig,
    generate_schedule,
    measure_skew,
    simulate_run,
    validate_reset_budget,
)

__version__ = "0.1.0"

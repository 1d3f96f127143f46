import io

import numpy as np
import pytest
from scipy import integrate, stats

from synctrig.calibration import ProbeConfig, run_self_adaptation
from synctrig.errors import ConfigurationError, InsufficientDataError
from synctrig.metastability import DelayChain, MetastabilityModel
from synctrig.timebase import NS, PS, US, JitterSpec, RngHandle
from synctrig.topology import build_star_topology
from synctrig.trigger import (
    AwgTrace,
    QubitStateModel,
    RunReport,
    TriggerConfig,
    generate_schedule,
    measure_skew,
    simulate_run,
    skew_summary,
    validate_reset_budget,
    write_run_csv,
)

NO_JITTER = JitterSpec.none()
MODEL = MetastabilityModel()


def run(topo, chain, cfg, *, model=MODEL, qubits=QubitStateModel(0.5), seed=0, output_jitter=NO_JITTER):
    return simulate_run(topo, chain, model, cfg, qubits, RngHandle(seed), output_jitter=output_jitter)


def report_from(times_by_awg):
    traces = {}
    for awg, times in times_by_awg.items():
        t = np.asarray(times, dtype=np.int64)
        idx = np.arange(len(t))
        traces[awg] = AwgTrace(idx, t, t, np.full(len(t), -1, np.int8), np.zeros(len(t), bool))
    schedule = generate_schedule(TriggerConfig(level1_count=1, level2_count=len(t)))
    return RunReport(schedule, traces)


def range_within_probability(n, bound_sigmas, clamp_sigmas):
    """P(max - min <= bound) for n iid normals truncated at +-clamp (units of sigma)."""
    z = stats.norm.cdf(clamp_sigmas) - stats.norm.cdf(-clamp_sigmas)

    def cdf(x):
        x = min(max(x, -clamp_sigmas), clamp_sigmas)
        return (stats.norm.cdf(x) - stats.norm.cdf(-clamp_sigmas)) / z

    def integrand(x):
        return stats.norm.pdf(x) / z * (cdf(x + bound_sigmas) - cdf(x)) ** (n - 1)

    return n * integrate.quad(integrand, -clamp_sigmas, clamp_sigmas, limit=200)[0]


# -- schedule --------------------------------------------------------------

def test_single_block_schedule():
    cfg = TriggerConfig(output_delay=0, level1_interval=500 * NS, level1_count=2,
                        level2_interval=5 * US, level2_count=1)
    assert list(generate_schedule(cfg)) == [(0, 0, "measure"), (1, 500 * NS, "conditional_reset")]


def test_level2_repetition_schedule():
    cfg = TriggerConfig(output_delay=100 * NS, level1_count=1, level2_interval=800 * NS, level2_count=3)
    assert [t for _, t, _ in generate_schedule(cfg)] == [100 * NS, 900 * NS, 1700 * NS]


def test_overlapping_blocks_rejected():
    with pytest.raises(ConfigurationError):
        TriggerConfig(level1_interval=500 * NS, level1_count=3, level2_interval=1 * US)


def test_roles_alternate_beyond_two_pulses():
    cfg = TriggerConfig(level1_interval=100 * NS, level1_count=4, level2_interval=1 * US, level2_count=2)
    roles = [r for _, _, r in generate_schedule(cfg)]
    assert roles == ["measure", "conditional_reset"] * 4


def test_schedule_is_pure():
    cfg = TriggerConfig()
    assert list(generate_schedule(cfg)) == list(generate_schedule(cfg))


@pytest.mark.parametrize(
    "l1_interval, width, ok",
    [(480 * NS, 20 * NS, True), (1180 * NS, 20 * NS, False), (980 * NS, 20 * NS, True)],
)
def test_reset_budget(l1_interval, width, ok):
    cfg = TriggerConfig(pulse_width=width, level1_interval=l1_interval, level2_interval=2 * US)
    assert (validate_reset_budget(cfg) is None) is ok


# -- simulate_run ----------------------------------------------------------

def test_hand_enumerated_small_run():
    # master->fan 1 ns, fan->s1 1 ns, fan->s2 5 ns, return 1 ns; chain at tap 10 adds 177,760 fs
    topo = build_star_topology(2, 28, [1 * NS, 1 * NS, 5 * NS, 1 * NS])
    cfg = TriggerConfig(output_delay=100 * NS, pulse_width=10 * NS, level1_interval=500 * NS,
                        level1_count=3, level2_interval=2 * US, level2_count=1)
    report = run(topo, DelayChain(current_tap=10), cfg,
                 model=MetastabilityModel(window_width=0), qubits=QubitStateModel(1.0))
    s1, s2 = topo.slaves
    assert report.per_awg_outputs[s1] == [(0, 104 * NS, None), (1, 604 * NS, True), (2, 1104 * NS, None)]
    assert report.per_awg_outputs[s2] == [(0, 108 * NS, None), (1, 608 * NS, True), (2, 1108 * NS, None)]
    assert report.metastable_events == {s1: 0, s2: 0}
    assert report.jitter_flags == {s1: False, s2: False}


def test_master_emits_on_its_clock_edge():
    topo = build_star_topology(1, 28, 1 * NS)
    cfg = TriggerConfig(output_delay=101 * NS, level1_count=1, level2_count=2, level2_interval=1 * US)
    report = run(topo, DelayChain(), cfg, model=MetastabilityModel(window_width=0))
    (slave,) = topo.slaves
    # emitted at 104 ns, arrives 106 ns, captured at 108 ns
    assert report.traces[slave].captured_edge.tolist() == [108 * NS, 1108 * NS]


def test_identical_slaves_have_zero_skew():
    topo = build_star_topology(2, 28, 1 * NS)
    cal = run_self_adaptation(topo, MODEL, ProbeConfig(200), RngHandle(0))
    cfg = TriggerConfig(level1_count=2, level2_count=5)
    report = run(topo, cal.chain, cfg)
    a, b = (report.traces[s].output_time for s in topo.slaves)
    assert np.array_equal(a, b)
    assert measure_skew(report)[0] == 0


def test_uncalibrated_edge_aligned_outputs_split_by_one_period():
    topo = build_star_topology(2, 28, 2 * NS)
    cfg = TriggerConfig(level1_interval=40 * NS, level2_interval=100 * NS, level2_count=500)
    diffs = set()
    for seed in range(5):
        report = run(topo, DelayChain(), cfg, seed=seed)
        a, b = (report.traces[s].output_time for s in topo.slaves)
        diffs |= set(np.abs(a - b).tolist())
    assert diffs == {0, 4 * NS}


def test_ground_state_never_resets():
    topo = build_star_topology(3, 28, 1 * NS)
    report = run(topo, DelayChain(), TriggerConfig(level2_count=50), qubits=QubitStateModel(0.0))
    for trace in report.traces.values():
        assert not (trace.emitted_pi == 1).any()
        assert (trace.emitted_pi[1::2] == 0).all()
        assert (trace.emitted_pi[0::2] == -1).all()


def test_pi_pulse_rate_tracks_excited_probability():
    topo = build_star_topology(2, 28, 1 * NS)
    p, blocks = 0.3, 20_000
    report = run(topo, DelayChain(), TriggerConfig(level2_count=blocks), qubits=QubitStateModel(p))
    for trace in report.traces.values():
        rate = np.mean(trace.emitted_pi[1::2] == 1)
        assert abs(rate - p) <= 3 * np.sqrt(p * (1 - p) / blocks)


def test_jitter_flags_match_recount():
    topo = build_star_topology(4, 28, 2 * NS)
    cfg = TriggerConfig(level1_interval=40 * NS, level2_interval=100 * NS, level2_count=3)
    seen = set()
    for seed in range(30):
        report = run(topo, DelayChain(), cfg, seed=seed)
        emitted = report.schedule.emit_time
        for awg, trace in report.traces.items():
            slipped = any((b - a) != (eb - ea) for a, b, ea, eb in
                          zip(trace.captured_edge, trace.captured_edge[1:], emitted, emitted[1:]))
            assert report.jitter_flags[awg] == slipped
            seen.add(slipped)
    assert seen == {True, False}


def test_calibrated_run_with_bounded_jitter_has_no_metastability():
    base = build_star_topology(3, 28, 1_700_000)
    cal = run_self_adaptation(base, MODEL, ProbeConfig(1000), RngHandle(2))
    jitter = JitterSpec.uniform(int(0.4 * cal.margin))
    topo = build_star_topology(3, 28, 1_700_000, jitter)
    for seed in range(3):
        report = run(topo, cal.chain, TriggerConfig(level2_count=5000), seed=seed)
        assert sum(report.metastable_events.values()) == 0
        assert not any(report.jitter_flags.values())


def test_run_is_reproducible():
    topo = build_star_topology(3, 28, 2 * NS, JitterSpec.gaussian(3 * PS))
    cfg = TriggerConfig(level2_count=20)
    a = run(topo, DelayChain(), cfg, seed=9, output_jitter=JitterSpec.gaussian(5 * PS))
    b = run(topo, DelayChain(), cfg, seed=9, output_jitter=JitterSpec.gaussian(5 * PS))
    buf_a, buf_b = io.StringIO(), io.StringIO()
    write_run_csv(a, buf_a)
    write_run_csv(b, buf_b)
    assert buf_a.getvalue() == buf_b.getvalue()


# -- skew ------------------------------------------------------------------

def test_skew_of_identical_outputs_is_zero():
    assert measure_skew(report_from({2: [5, 10], 3: [5, 10]}))[0] == 0


def test_two_point_skew():
    max_skew, per_pulse = measure_skew(report_from({2: [1000], 3: [1000 + 12 * PS]}))
    assert max_skew == 12 * PS
    assert per_pulse.tolist() == [12 * PS]


def test_skew_needs_two_awgs():
    with pytest.raises(InsufficientDataError):
        measure_skew(report_from({2: [0, 1]}))


def test_ten_awg_skew_matches_range_distribution():
    topo = build_star_topology(10, 28, 1 * NS)
    cal = run_self_adaptation(topo, MODEL, ProbeConfig(500), RngHandle(1))
    cfg = TriggerConfig(level1_count=1, level2_count=10_000)
    report = run(topo, cal.chain, cfg, seed=4, output_jitter=JitterSpec.gaussian(5 * PS, 25 * PS))
    _, per_pulse = measure_skew(report)
    fraction = np.mean(per_pulse <= 25 * PS)
    expected = range_within_probability(10, 5.0, 5.0)
    assert expected == pytest.approx(0.98515, abs=1e-4)
    assert abs(fraction - expected) <= 4 * np.sqrt(expected * (1 - expected) / per_pulse.size)


def test_skew_summary_percentiles():
    summary = skew_summary(np.array([10, 20, 30, 40], dtype=np.int64), bound=25)
    assert summary["p50_fs"] == 20
    assert summary["p99_fs"] == 40
    assert summary["max_fs"] == 40
    assert summary["within_bound_fraction"] == 0.5


def test_run_csv_layout():
    topo = build_star_topology(2, 28, 1 * NS)
    report = run(topo, DelayChain(), TriggerConfig(level2_count=1), qubits=QubitStateModel(1.0))
    buf = io.StringIO()
    write_run_csv(report, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "pulse_index,awg_id,output_time_fs,role,emitted_pi,metastable"
    assert lines[1:] == [
        "0,2,4000000,measure,,0",
        "0,3,4000000,measure,,0",
        "1,2,404000000,conditional_reset,1,0",
        "1,3,404000000,conditional_reset,1,0",
    ]

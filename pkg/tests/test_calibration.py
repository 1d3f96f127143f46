import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synctrig.calibration import (
    ProbeConfig,
    cluster_stats,
    find_stable_region,
    monitor_intervals,
    run_probe_burst,
    run_self_adaptation,
    scan_all_taps,
    write_taps_csv,
)
from synctrig.errors import CalibrationError, ConfigurationError, InsufficientDataError, TopologyError
from synctrig.metastability import DelayChain, MetastabilityModel
from synctrig.timebase import NS, PS, RngHandle
from synctrig.topology import Link, Node, Topology, build_star_topology

MODEL = MetastabilityModel()
DESK = ProbeConfig(pulse_count=10_000)
PERIOD = 4 * NS
STEP = DelayChain().step_per_modification


def star(link_delay, n_slaves=1):
    return build_star_topology(n_slaves, 28, link_delay)


def flagged_by_geometry(loopback, window=90 * PS, taps=512, step=STEP):
    """Taps whose noiseless loopback arrival falls inside the window around an edge."""
    out = []
    for i in range(taps):
        offset = (loopback + i * step) % PERIOD
        if window and 2 * min(offset, PERIOD - offset) <= window:
            out.append(i)
    return out


def brute_stable_region(flags):
    best = None
    n = len(flags)
    for start in range(n):
        for end in range(start, n):
            if any(flags[start:end + 1]):
                break
            if best is None or end - start > best[1] - best[0]:
                best = (start, end)
    if best is None:
        return None
    return best[0], best[1], (best[0] + best[1]) // 2


def brute_jitter_flag(expected, edges):
    for a, b in zip(edges, edges[1:]):
        if b - a != expected:
            return True
    return False


# -- probe burst -----------------------------------------------------------

def test_mid_cycle_burst_has_no_errors():
    rec = run_probe_burst(star(1 * NS), DelayChain(), MODEL, ProbeConfig(100), RngHandle(0))
    assert rec.error_count == 0
    assert rec.received_count == 100


def test_edge_aligned_burst_has_errors():
    rec = run_probe_burst(star(2 * NS), DelayChain(), MODEL, DESK, RngHandle(0))
    assert rec.error_count > 0


def test_two_pulse_burst_measures_one_interval():
    rec = run_probe_burst(star(1 * NS), DelayChain(), MODEL, ProbeConfig(2), RngHandle(0))
    assert rec.measured_intervals.tolist() == [40 * NS]


@pytest.mark.parametrize("p", [0.5, 0.2])
def test_edge_error_rate_matches_bernoulli_runs(p):
    # consecutive pulses resolve independently; an interval is wrong iff they differ
    model = MetastabilityModel(resolve_probability=p)
    rec = run_probe_burst(star(2 * NS), DelayChain(), model, DESK, RngHandle(5))
    expected = 2 * p * (1 - p)
    assert abs(rec.error_count / (DESK.pulse_count - 1) - expected) < 0.03
    assert set(np.unique(rec.measured_intervals)) <= {36 * NS, 40 * NS, 44 * NS}


def test_probe_interval_must_be_whole_cycles():
    with pytest.raises(ConfigurationError):
        run_probe_burst(star(1 * NS), DelayChain(), MODEL, ProbeConfig(10, 41 * NS), RngHandle(0))


def test_probe_needs_return_path():
    nodes = [Node(0, "clock_root"), Node(1, "master_awg"), Node(2, "slave_awg"), Node(3, "fanout_unit")]
    links = [Link(0, 1, 0, purpose="clock"), Link(0, 2, 0, purpose="clock"),
             Link(1, 3, 1 * NS), Link(3, 2, 1 * NS)]
    with pytest.raises(TopologyError):
        run_probe_burst(Topology(nodes, links), DelayChain(), MODEL, ProbeConfig(10), RngHandle(0))


def test_probe_config_validation():
    with pytest.raises(ConfigurationError):
        ProbeConfig(pulse_count=1)


# -- tap scan --------------------------------------------------------------

@pytest.fixture(scope="module")
def default_scan():
    return scan_all_taps(star(1 * NS, 10), MODEL, DESK, RngHandle(1))


def test_scan_flags_match_geometry(default_scan):
    assert np.flatnonzero(default_scan.error_flags).tolist() == flagged_by_geometry(2 * NS)


def test_scan_cluster_geometry(default_scan):
    stats = cluster_stats(default_scan)
    assert len(stats.clusters) == 2
    assert all(abs(s - 225) <= 1 for s in stats.spacings)
    assert all(abs(w - 5) <= 2 for w in stats.widths)
    assert abs(stats.mean_width * 17.78 * PS - 90 * PS) <= 0.25 * 90 * PS


def test_scan_records_tap_delays(default_scan):
    assert default_scan.total_delays.tolist() == [i * STEP for i in range(512)]
    assert default_scan.intervals_per_tap == DESK.pulse_count - 1


def test_zero_window_scan_is_clean():
    scan = scan_all_taps(star(2 * NS), MetastabilityModel(window_width=0), ProbeConfig(100), RngHandle(1))
    assert not scan.error_flags.any()


def test_one_period_shift_leaves_pattern_unchanged():
    a = scan_all_taps(star(1 * NS), MODEL, ProbeConfig(200), RngHandle(1))
    b = scan_all_taps(star(3 * NS), MODEL, ProbeConfig(200), RngHandle(1))
    assert np.array_equal(a.error_flags, b.error_flags)


def test_shift_by_225_modifications_translates_pattern():
    base = 1_300_000
    a = scan_all_taps(star(base), MODEL, ProbeConfig(200), RngHandle(1))
    # loop has two links, so half of 225 modifications goes on each
    b = scan_all_taps(star(base + 225 * STEP // 2), MODEL, ProbeConfig(200), RngHandle(1))
    assert np.array_equal(b.error_flags[:512 - 225], a.error_flags[225:])


# -- stable region ---------------------------------------------------------

def flags_at(*ranges):
    flags = np.zeros(512, dtype=bool)
    for lo, hi in ranges:
        flags[lo:hi + 1] = True
    return flags


@pytest.mark.parametrize(
    "flags, expected",
    [
        (flags_at(), (0, 511, 255)),
        (flags_at((100, 104)), (105, 511, 308)),
        (flags_at((10, 14), (235, 239)), (240, 511, 375)),
    ],
)
def test_find_stable_region_examples(flags, expected):
    r = find_stable_region(flags)
    assert (r.start_tap, r.end_tap, r.mid_tap) == expected == brute_stable_region(list(flags))


def test_ties_go_to_lowest_start():
    r = find_stable_region(flags_at((5, 5)) | flags_at((11, 511)))
    assert (r.start_tap, r.end_tap) == (0, 4)


def test_all_flagged_is_a_calibration_failure():
    with pytest.raises(CalibrationError):
        find_stable_region(np.ones(512, dtype=bool))


@given(st.lists(st.booleans(), min_size=1, max_size=64))
@settings(max_examples=500)
def test_find_stable_region_matches_oracle(flags):
    expected = brute_stable_region(flags)
    if expected is None:
        with pytest.raises(CalibrationError):
            find_stable_region(flags)
        return
    r = find_stable_region(flags)
    assert (r.start_tap, r.end_tap, r.mid_tap) == expected
    assert not any(flags[r.start_tap:r.end_tap + 1])


# -- self adaptation -------------------------------------------------------

def test_committed_tap_keeps_clear_of_flagged_taps(default_scan):
    result = run_self_adaptation(star(1 * NS, 10), MODEL, DESK, RngHandle(1))
    flagged = np.flatnonzero(result.scan.error_flags)
    assert np.min(np.abs(flagged - result.committed_tap)) >= 20
    assert result.committed_tap == result.region.mid_tap
    assert result.chain.current_tap == result.committed_tap


def test_zero_window_commits_middle_tap():
    result = run_self_adaptation(star(1 * NS), MetastabilityModel(window_width=0), ProbeConfig(10), RngHandle(0))
    assert result.committed_tap == 255


def test_committed_tap_is_seed_independent_without_jitter():
    topo = star(1_234_567)
    taps = {run_self_adaptation(topo, MODEL, ProbeConfig(500), RngHandle(s)).committed_tap for s in (1, 2, 77)}
    assert len(taps) == 1


def test_completion_callback_fires():
    seen = []
    result = run_self_adaptation(star(1 * NS), MODEL, ProbeConfig(50), RngHandle(0), on_complete=seen.append)
    assert seen == [result]


def test_margin_is_in_time_units():
    result = run_self_adaptation(star(1 * NS), MODEL, ProbeConfig(50), RngHandle(0))
    assert result.margin == result.region.margin_taps * STEP


# -- monitor ---------------------------------------------------------------

@pytest.mark.parametrize(
    "edges, flag",
    [([0, 40 * NS, 80 * NS], False), ([0, 40 * NS, 84 * NS], True)],
)
def test_monitor_examples(edges, flag):
    assert monitor_intervals(40 * NS, edges) is flag


def test_monitor_needs_two_edges():
    with pytest.raises(InsufficientDataError):
        monitor_intervals(40 * NS, [0])


def test_monitor_quantizes_to_cycles():
    assert monitor_intervals(40 * NS, [0, 40 * NS + 1 * NS], period=4 * NS) is False
    assert monitor_intervals(40 * NS, [0, 40 * NS + 3 * NS], period=4 * NS) is True


@given(
    st.lists(st.integers(-1, 1), min_size=1, max_size=40),
    st.integers(1, 20),
)
def test_monitor_matches_recount(slips, cycles):
    expected = cycles * PERIOD
    edges = [0]
    for s in slips:
        edges.append(edges[-1] + expected + s * PERIOD)
    assert monitor_intervals(expected, edges) == brute_jitter_flag(expected, edges)


def test_taps_csv_layout(default_scan):
    buf = io.StringIO()
    write_taps_csv(default_scan, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "tap,total_delay_fs,error_count,error_flag,metastable_probability"
    assert len(lines) == 513
    assert lines[1] == "0,0,0,0,0.000000"
    tap, delay, count, flag, prob = lines[111].split(",")
    assert (tap, delay, flag) == ("110", str(110 * STEP), "1")
    assert float(prob) == pytest.approx(int(count) / 9999, abs=1e-6)

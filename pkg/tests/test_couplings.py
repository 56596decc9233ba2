import numpy as np
import pytest
import scipy.stats

from arw1d.core import Region
from arw1d.couplings import (
    CouplingCertificate,
    CouplingVerdict,
    DecompositionVerdict,
    crucial_coupling_check,
    outer_decomposition_check,
    pooled_smp_report,
    probe_counts,
    smp_check,
)
from arw1d.stacks import derive_trial_seed


def test_single_site_coupling_always_replays_exactly():
    # one walker, one interior site: the fill event always holds and the
    # replay must reproduce the full run on {0} bit for bit
    for seed in range(100):
        cert = crucial_coupling_check(1, (0, 0), seed)
        assert cert.verdict is CouplingVerdict.EXACT_MATCH
        assert cert.event_held


def test_coupling_event_fails_with_too_few_walkers():
    # 5 walkers can never fill 11 sites
    for seed in range(30):
        cert = crucial_coupling_check(5, (-5, 5), seed)
        assert cert.verdict is CouplingVerdict.EVENT_FAILED
        assert not cert.event_held
        assert cert.mismatch_sites == ()


def test_coupling_moderate_scale_never_mismatches():
    verdicts = [crucial_coupling_check(60, (-10, 10), derive_trial_seed(50, i)).verdict
                for i in range(50)]
    assert CouplingVerdict.MISMATCH not in verdicts
    assert verdicts.count(CouplingVerdict.EXACT_MATCH) >= 1


def test_coupling_certificate_consistency():
    region = Region.interval(0, 0)
    with pytest.raises(ValueError):
        CouplingCertificate(1, 1, region, True, 0, 0,
                            CouplingVerdict.EXACT_MATCH, (0,))
    with pytest.raises(ValueError):
        CouplingCertificate(1, 1, region, True, 0, 0,
                            CouplingVerdict.MISMATCH, ())


def test_coupling_rejects_bad_interval():
    with pytest.raises(ValueError):
        crucial_coupling_check(10, (2, 5), 0)


# ---------------------------------------------------------- decomposition


def test_decomposition_single_walker():
    for i in range(50):
        seeds = (derive_trial_seed(60, 2 * i), derive_trial_seed(60, 2 * i + 1))
        cert = outer_decomposition_check(1, 0.5, seeds, 64)
        assert cert.verdict is DecompositionVerdict.DOMINATED


def test_decomposition_moderate_scale():
    for i in range(10):
        seeds = (derive_trial_seed(61, 2 * i), derive_trial_seed(61, 2 * i + 1))
        cert = outer_decomposition_check(80, 0.25, seeds, 2000)
        assert cert.verdict is DecompositionVerdict.DOMINATED
        assert cert.violated_sites == ()


def test_decomposition_dense_environment():
    for i in range(10):
        seeds = (derive_trial_seed(62, 2 * i), derive_trial_seed(62, 2 * i + 1))
        cert = outer_decomposition_check(60, 0.75, seeds, 512)
        assert cert.verdict is DecompositionVerdict.DOMINATED


def test_decomposition_window_too_small_is_reported():
    cert = outer_decomposition_check(60, 0.25, (1, 2), 4, L_cap=8)
    assert cert.verdict is DecompositionVerdict.WINDOW_TOO_SMALL


def test_decomposition_window_doubles_to_fit():
    cert = outer_decomposition_check(40, 0.5, (3, 4), 8, L_cap=4096)
    assert cert.verdict is DecompositionVerdict.DOMINATED
    assert cert.window > 8


# ------------------------------------------------------------------ smp


def test_fresh_rows_match_the_one_cell_law():
    report = smp_check(None, 1.0, seeds=100, m=100, base_seed=70)
    assert sum(report.counts) == 10 ** 4
    assert report.p_value > 0.01
    assert report.passed


def test_post_stopping_rows_match_the_one_cell_law():
    report = smp_check(("point", 20), 1.0, seeds=100, m=100, base_seed=71)
    assert report.p_value > 0.01
    assert report.passed


def test_chi_square_wiring_matches_manual_computation():
    counts = np.zeros(3, np.int64)
    for i in range(50):
        counts += np.asarray(probe_counts(None, 2.0, derive_trial_seed(72, i), 40))
    report = pooled_smp_report(None, 2.0, 50, 40, counts)
    obs = np.asarray(report.counts, dtype=float)
    exp = np.asarray(report.expected, dtype=float)
    stat = float(((obs - exp) ** 2 / exp).sum())
    assert report.chi2 == pytest.approx(stat)
    assert report.p_value == pytest.approx(float(scipy.stats.chi2.sf(stat, 2)))
    assert exp[1] == pytest.approx(exp[2])
    assert exp[0] == pytest.approx(2000 * 2.0 / 3.0)


def test_adversarial_peeking_is_detected():
    failures = 0
    for k in range(10):
        counts = np.zeros(3, np.int64)
        for i in range(10):
            c = probe_counts("adversarial", 1.0, derive_trial_seed(80 + k, i), 100)
            counts += np.asarray(c, np.int64)
        report = pooled_smp_report("adversarial", 1.0, 10, 100, counts)
        failures += not report.passed
    assert failures >= 1


def test_adversarial_sleep_frequency_is_squared():
    # stepping over row 1 exactly when it sleeps leaves a sleep on top
    # only when two sleeps stack up: frequency 1/4 at unit rate, not 1/2
    sleeps = total = 0
    for i in range(100):
        s, l, r = probe_counts("adversarial", 1.0, derive_trial_seed(81, i), 100)
        sleeps += s
        total += s + l + r
    assert abs(sleeps / total - 0.25) <= 0.02


def test_probe_counts_rejects_unknown_rule():
    with pytest.raises(ValueError):
        probe_counts("bogus", 1.0, 0, 10)


def test_smp_check_requires_enough_seeds():
    with pytest.raises(ValueError):
        smp_check(None, 1.0, seeds=10, m=5)


def test_smp_check_pools_across_seeds():
    report = smp_check(None, 1.0, seeds=120, m=5, base_seed=90)
    assert sum(report.counts) == 600
    assert report.stop_rule == "none"
    assert report.passed == (report.p_value > 0.01)

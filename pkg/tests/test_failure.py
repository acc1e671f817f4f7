import numpy as np
import pytest

from cohash_aqp import presets
from cohash_aqp.failure import FailureEvent, StragglerModel, inject, profile


def test_no_failure_probability():
    assert inject(20, 0.0, seed=1).unavailable == frozenset()


def test_binomial_band():
    n = len(inject(10_000, 0.3, seed=5).unavailable)
    assert 2770 <= n <= 3230


def test_same_seed_same_set():
    assert inject(50, 0.4, seed=9).unavailable == inject(50, 0.4, seed=9).unavailable


@pytest.mark.parametrize("pf", [1.0, 1.5])
def test_total_loss_rejected(pf):
    with pytest.raises(ValueError, match="total loss"):
        inject(10, pf)


@pytest.mark.parametrize("k", [0, 3, 10])
def test_fixed_count(k):
    e = inject(10, seed=2, fixed_unavailable=k)
    assert len(e.unavailable) == k and len(e.surviving) == 10 - k


def test_stragglers_past_timeout_are_unavailable():
    e = inject(200, 0.0, seed=4, stragglers=StragglerModel(slow_prob=0.5, timeout_ms=100))
    assert set(e.causes.values()) == {"straggler"}
    assert 60 < len(e.unavailable) < 140


def test_stragglers_within_timeout_survive():
    e = inject(50, 0.0, seed=4, stragglers=StragglerModel(slow_prob=0.5, timeout_ms=5000))
    assert not e.unavailable


def test_event_range_checked():
    with pytest.raises(ValueError):
        FailureEvent(4, frozenset({4}))


def test_profile_no_failures(sd_without_pdb):
    prof = profile(sd_without_pdb, FailureEvent.none(sd_without_pdb.M))
    for name, a in prof.hierarchies.items():
        assert a.pi == 1.0 and a.s == sd_without_pdb.cluster_counts[name] and not a.affected
    assert prof.failed_hierarchies == frozenset()


def test_profile_estimated_counts_no_failures(sd_without_pdb):
    prof = profile(sd_without_pdb, FailureEvent.none(sd_without_pdb.M), use_known_counts=False)
    for name, a in prof.hierarchies.items():
        assert a.N_hat == sd_without_pdb.cluster_counts[name] and a.N_known is None


def test_profile_half_down(small_db):
    from cohash_aqp.partitioner import partition
    pdb = partition(small_db, presets.sd_without(), 40, seed=3)
    prof = profile(pdb, inject(40, seed=1, fixed_unavailable=20))
    for name, a in prof.hierarchies.items():
        N = pdb.cluster_counts[name]
        # clusters are hashed independently, so s is roughly hypergeometric around N/2
        band = 5 * np.sqrt(N * 0.25)
        assert abs(a.s - N / 2) <= band
        assert a.affected


def test_profile_all_down(sd_without_pdb):
    with pytest.raises(ValueError, match="query unanswerable"):
        profile(sd_without_pdb, FailureEvent(8, frozenset(range(8))))

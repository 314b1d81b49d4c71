import numpy as np
import pytest
from numpy.testing import assert_allclose

from cascadeiv import (
    MechanismConfig,
    Population,
    balance_check,
    estimate_all,
    identify_pivotal_groups,
    luck_variable,
    run_clearing,
    simulate_iv_dataset,
    simulate_run,
    slot_expansion_oracle,
)
from cascadeiv.errors import DataError, NoPivotalVariation
from cascadeiv.mechanism import find_blocking_pairs, pooled_luck


def small_pop(merits, prefs, gains=None, k=None):
    merits = np.asarray(merits, dtype=np.int64)
    n = merits.size
    k = k or max((max(p) for p in prefs if p), default=1)
    po = np.zeros((n, k + 1))
    if gains is not None:
        po[:, 1:] = np.asarray(gains, dtype=float)
    return Population(merit=merits, prefs=list(prefs), po=po)


# ---------------------------------------------------------------------------
# run_clearing
# ---------------------------------------------------------------------------


def test_undersubscribed_program_admits_everyone():
    pop = small_pop([5, 3, 4], [(1,), (1,), (1,)])
    res = run_clearing(pop, MechanismConfig(capacities=(5,), lottery_seed=0))
    assert np.all(res.assignment == 1)
    assert not res.oversubscribed[0]
    assert res.cutoffs[1][0] == 3  # lowest listed merit bracket
    assert res.pivotal_groups == {}


def test_tied_pair_decided_by_lottery_evenly():
    pop = small_pop([4, 4], [(1,), (1,)])
    wins = 0
    for seed in range(10_000):
        res = run_clearing(pop, MechanismConfig(capacities=(1,), lottery_seed=seed))
        wins += int(res.assignment[0] == 1)
    assert abs(wins / 10_000 - 0.5) < 0.02


def test_second_program_fills_from_rejects_in_merit_order():
    merits = [9, 8, 7, 6, 5]
    pop = small_pop(merits, [(1, 2)] * 5)
    res = run_clearing(pop, MechanismConfig(capacities=(2, 2), lottery_seed=3))
    assert list(res.assignment) == [1, 1, 2, 2, 0]


def test_stability_and_capacity_on_random_populations():
    rng = np.random.default_rng(4)
    for trial in range(10):
        n = int(rng.integers(50, 400))
        k = int(rng.integers(1, 5))
        merits = rng.integers(1, 6, n)
        prefs = []
        for _ in range(n):
            m = rng.integers(0, k + 1)
            prefs.append(tuple(rng.permutation(k)[:m] + 1))
        pop = small_pop(merits, prefs, k=k)
        caps = tuple(int(c) for c in rng.integers(1, max(2, n // k), k))
        cfg = MechanismConfig(capacities=caps, lottery_seed=trial)
        res = run_clearing(pop, cfg)
        assert find_blocking_pairs(pop, cfg, res) == []
        counts = res.admitted.sum(axis=0)
        assert np.all(counts <= np.asarray(caps))
        assert np.all(counts[res.oversubscribed] == np.asarray(caps)[res.oversubscribed])


def test_clearing_deterministic():
    pop = small_pop([3, 3, 2, 2, 1], [(1, 2), (2, 1), (1,), (2,), (1, 2)])
    cfg = MechanismConfig(capacities=(1, 1), lottery_seed=77)
    r1 = run_clearing(pop, cfg)
    r2 = run_clearing(pop, cfg)
    assert np.array_equal(r1.assignment, r2.assignment)
    assert np.array_equal(r1.draws, r2.draws)


# ---------------------------------------------------------------------------
# pivotal groups
# ---------------------------------------------------------------------------


def test_pivotal_group_constructed_tie():
    pop = small_pop([5, 5, 4, 4, 4, 3], [(1,)] * 6)
    res = run_clearing(pop, MechanismConfig(capacities=(3,), lottery_seed=1))
    groups = identify_pivotal_groups(res)
    members, n_g = groups[1]
    assert sorted(members) == [2, 3, 4]
    assert n_g == 3
    assert res.cutoffs[1][0] == 4


def test_pivotal_membership_invariant_to_seed():
    # fixed preferences and merits; no displacement can move the cutoff
    # bracket, so membership depends on the draw only through nothing
    pop = small_pop([5, 5, 4, 4, 4, 3, 3], [(1,)] * 7)
    members = None
    for seed in range(100):
        res = run_clearing(pop, MechanismConfig(capacities=(3,), lottery_seed=seed))
        got = sorted(res.pivotal_groups[1])
        if members is None:
            members = got
        assert got == members


def test_luck_values():
    assert_allclose(luck_variable(np.array([0.3])), [0.5])
    draws = np.array([0.2, 0.9, 0.5])
    # best draw first in lottery order: ranks are 3, 1, 2
    assert_allclose(luck_variable(draws), [0.25, 0.75, 0.5])
    for n in (1, 2, 5, 17, 50):
        lk = luck_variable(np.random.default_rng(n).random(n))
        assert_allclose(np.sort(lk), np.arange(1, n + 1) / (n + 1), atol=1e-15)
        assert lk.mean() == pytest.approx(0.5, abs=1e-12)


# ---------------------------------------------------------------------------
# simulate_iv_dataset
# ---------------------------------------------------------------------------


def homogeneous_pop(n, k, gain, seed):
    rng = np.random.default_rng(seed)
    merits = rng.integers(1, 6, n)
    prefs = [tuple(rng.permutation(k) + 1) for _ in range(n)]
    po = np.zeros((n, k + 1))
    po[:, 0] = rng.standard_normal(n)
    for j in range(k):
        po[:, j + 1] = po[:, 0] + gain[j]
    return Population(merit=merits, prefs=prefs, po=po)


def test_simulate_homogeneous_recovers_common_gain():
    gain = np.array([0.25, 0.25])
    pop = homogeneous_pop(6000, 2, gain, seed=5)
    cfg = MechanismConfig(capacities=(400, 400), lottery_seed=0)
    data = simulate_iv_dataset(pop, cfg, reps=30, master_seed=2)
    est = estimate_all(data)
    assert np.all(np.abs(est.beta - gain) < 3 * est.se_beta)


def test_simulate_no_pivotal_variation():
    pop = small_pop([3, 2, 1], [(1,), (1,), (1,)])
    cfg = MechanismConfig(capacities=(10,), lottery_seed=0)
    with pytest.raises(NoPivotalVariation):
        simulate_iv_dataset(pop, cfg, reps=3, master_seed=0)


def test_simulate_deterministic_given_master_seed():
    pop = homogeneous_pop(2000, 2, np.array([0.1, 0.2]), seed=6)
    cfg = MechanismConfig(capacities=(150, 150), lottery_seed=0)
    d1 = simulate_iv_dataset(pop, cfg, reps=5, master_seed=9)
    d2 = simulate_iv_dataset(pop, cfg, reps=5, master_seed=9)
    assert np.array_equal(d1.y, d2.y)
    assert np.array_equal(d1.z, d2.z)
    assert np.array_equal(d1.cluster, d2.cluster)
    d3 = simulate_iv_dataset(pop, cfg, reps=5, master_seed=10)
    assert not np.array_equal(d1.z, d3.z)


def test_simulate_rows_are_group_memberships():
    pop = homogeneous_pop(3000, 2, np.array([0.1, 0.2]), seed=7)
    cfg = MechanismConfig(capacities=(200, 200), lottery_seed=0)
    data = simulate_iv_dataset(pop, cfg, reps=4, master_seed=1)
    assert np.all((data.z != 0).sum(axis=1) == 1)
    lk = pooled_luck(data)
    assert np.all((lk > 0) & (lk < 1))
    # every cluster is one pivotal group: its luck values average 1/2
    for cl in np.unique(data.cluster):
        assert lk[data.cluster == cl].mean() == pytest.approx(0.5, abs=1e-12)


# ---------------------------------------------------------------------------
# slot_expansion_oracle
# ---------------------------------------------------------------------------


def test_oracle_undersubscribed_returns_zero_flag():
    pop = small_pop([3, 2, 1], [(1,), (1,), (1,)])
    cfg = MechanismConfig(capacities=(10,), lottery_seed=0)
    res = slot_expansion_oracle(pop, cfg, 1, reps=5, master_seed=0)
    assert res.undersubscribed
    assert res.value == 0.0


def test_oracle_homogeneous_equals_gain_exactly():
    gain = np.array([0.2, -0.1])
    pop = homogeneous_pop(4000, 2, gain, seed=8)
    cfg = MechanismConfig(capacities=(300, 300), lottery_seed=0)
    for k in (1, 2):
        res = slot_expansion_oracle(pop, cfg, k, reps=20, master_seed=3)
        assert not res.undersubscribed
        # telescoping: every replication's chain nets to the origin gain
        assert_allclose(res.per_rep, gain[k - 1], atol=1e-10)


def test_oracle_conservation_of_enrollment():
    pop = homogeneous_pop(3000, 3, np.array([0.1, 0.2, 0.3]), seed=9)
    caps = (200, 200, 200)
    base_cfg = MechanismConfig(capacities=caps, lottery_seed=1234)
    base = run_clearing(pop, base_cfg)
    for k in (1, 2, 3):
        plus = list(caps)
        plus[k - 1] += 1
        exp = run_clearing(
            pop, MechanismConfig(capacities=tuple(plus), lottery_seed=1234)
        )
        change = exp.admitted.sum(axis=0) - base.admitted.sum(axis=0)
        assert np.all(np.abs(change) <= 1)
        assert exp.admitted.sum() - base.admitted.sum() in (0, 1)


def test_oracle_heterogeneous_agrees_with_2sls():
    rng = np.random.default_rng(10)
    n, k = 8000, 2
    merits = rng.integers(1, 5, n)
    prefs = [tuple(rng.permutation(k) + 1) for _ in range(n)]
    po = np.zeros((n, k + 1))
    po[:, 0] = 0.4 * rng.standard_normal(n)
    theta = rng.standard_normal(n)
    po[:, 1] = po[:, 0] + 0.3 + 0.5 * theta
    po[:, 2] = po[:, 0] - 0.2 + 0.5 * theta * (merits / 3.0)
    pop = Population(merit=merits, prefs=prefs, po=po)
    cfg = MechanismConfig(capacities=(500, 500), lottery_seed=0)
    data = simulate_iv_dataset(pop, cfg, reps=80, master_seed=4)
    est = estimate_all(data)
    for kk in (1, 2):
        orc = slot_expansion_oracle(pop, cfg, kk, reps=80, master_seed=4)
        comb = np.hypot(est.se_beta[kk - 1], orc.mc_se)
        assert abs(orc.value - est.beta[kk - 1]) < 3 * comb


# ---------------------------------------------------------------------------
# balance_check
# ---------------------------------------------------------------------------


def _sim_with_covariates(seed, n=3000, reps=20):
    rng = np.random.default_rng(seed)
    merits = rng.integers(1, 5, n)
    prefs = [tuple(rng.permutation(2) + 1) for _ in range(n)]
    po = np.zeros((n, 3))
    po[:, 0] = rng.standard_normal(n)
    po[:, 1] = po[:, 0] + 0.3
    po[:, 2] = po[:, 0] + 0.1
    labels = {"attr": rng.standard_normal(n), "flag": rng.integers(0, 2, n)}
    pop = Population(merit=merits, prefs=prefs, po=po, labels=labels)
    cfg = MechanismConfig(capacities=(n // 12, n // 12), lottery_seed=0)
    return simulate_run(pop, cfg, reps=reps, master_seed=seed)


def test_balance_constant_covariate_is_exactly_zero():
    run = _sim_with_covariates(20)
    res = balance_check(run.dataset, np.ones((run.dataset.n_obs, 1)), ["const"])
    assert res.coef[0] == 0.0
    assert res.tstat[0] == 0.0


def test_balance_luck_on_itself_is_one():
    run = _sim_with_covariates(21)
    lk = pooled_luck(run.dataset)
    res = balance_check(run.dataset, lk[:, None], ["luck"])
    assert abs(res.coef[0] - 1.0) < 1e-10


def test_balance_predetermined_attributes_near_zero():
    run = _sim_with_covariates(22, n=6000, reps=40)
    cov = np.column_stack([run.covariates["attr"], run.covariates["flag"]])
    res = balance_check(run.dataset, cov, ["attr", "flag"])
    assert np.all(np.abs(res.coef) < 3.5 * res.se)


# ---------------------------------------------------------------------------
# non-exclusive mode (experimental)
# ---------------------------------------------------------------------------


def test_non_exclusive_mode_respects_capacity():
    pop = small_pop([5, 4, 4, 4, 3], [(1, 2)] * 5, k=2)
    cfg = MechanismConfig(capacities=(2, 2), lottery_seed=0, mutually_exclusive=False)
    res = run_clearing(pop, cfg)
    assert np.all(res.admitted.sum(axis=0) <= 2)
    # overlapping admissions allowed
    assert res.admitted.sum() >= 2


def test_config_validation():
    with pytest.raises(DataError):
        MechanismConfig(capacities=(0, 2), lottery_seed=1)
    pop = small_pop([1], [(1,)])
    with pytest.raises(DataError):
        run_clearing(pop, MechanismConfig(capacities=(1, 1), lottery_seed=0))
    with pytest.raises(DataError):
        slot_expansion_oracle(pop, MechanismConfig(capacities=(1,), lottery_seed=0), 2, 1, 0)

import numpy as np
import pytest
from numpy.testing import assert_allclose

from cascadeiv import (
    MechanismConfig,
    SynthConfig,
    cluster_bootstrap,
    estimate_all,
    fit_first_stage,
    generate_population,
    scenario_three_program,
    simulate_iv_dataset,
    slot_expansion_oracle,
)
from cascadeiv.errors import DataError, InfeasibleComplierTargets


def test_homogeneity_switch_is_exact():
    cfg = SynthConfig(n=500, k=3, seed=1, effects=(0.2, -0.1, 0.05), het_scale=0.0)
    pop = generate_population(cfg)
    gains = pop.po[:, 1:] - pop.po[:, [0]]
    assert_allclose(gains, np.tile([0.2, -0.1, 0.05], (500, 1)), atol=0)


def test_seed_determinism():
    cfg = SynthConfig(n=300, k=2, seed=9, het_scale=0.5, label_share=0.4)
    p1 = generate_population(cfg)
    p2 = generate_population(cfg)
    assert np.array_equal(p1.merit, p2.merit)
    assert np.array_equal(p1.po, p2.po)
    assert p1.prefs == p2.prefs
    assert np.array_equal(p1.labels["group"], p2.labels["group"])
    p3 = generate_population(SynthConfig(n=300, k=2, seed=10, het_scale=0.5))
    assert not np.array_equal(p1.po, p3.po)


def test_label_effect_shift_moves_group_gains():
    cfg = SynthConfig(
        n=2000, k=2, seed=2, effects=(0.1, 0.1), het_scale=0.0,
        label_share=0.5, label_effect_shift=(0.3, 0.0),
    )
    pop = generate_population(cfg)
    g = pop.labels["group"]
    gains1 = pop.po[:, 1] - pop.po[:, 0]
    assert_allclose(gains1[g == 1], 0.4, atol=0)
    assert_allclose(gains1[g == 0], 0.1, atol=0)


def test_ordered_selectivity_keeps_low_margin_off_high_program():
    # three programs with separated selectivity; the least selective
    # program's lottery must not move enrollment in the most selective one
    cfg = SynthConfig(
        n=8_000, k=3, seed=3, n_merit_brackets=8, taste_scale=0.25,
        assortative=2.0, effects=(0.2, 0.1, 0.3), het_scale=0.2,
    )
    pop = generate_population(cfg)
    mech = MechanismConfig(capacities=(900, 600, 360), lottery_seed=0)
    data = simulate_iv_dataset(pop, mech, reps=25, master_seed=11)
    fs = fit_first_stage(data)
    assert fs.pi[0, 0] > 0.5  # margins are strong
    se_pi21 = cluster_bootstrap(
        data, lambda d: np.array([fit_first_stage(d).pi[2, 0]]), reps=40, seed=5
    ).se[0]
    assert abs(fs.pi[2, 0]) < max(3 * se_pi21, 1e-8)


# ---------------------------------------------------------------------------
# scenario_three_program
# ---------------------------------------------------------------------------


def scenario_cfg(**kw):
    base = dict(
        n=20_000, k=2, seed=7, het_scale=0.3, base_scale=0.5,
        complier_targets=(0.5, 0.5), scenario_effects=(1.0, 0.3, 0.4),
    )
    base.update(kw)
    return SynthConfig(**base)


def test_scenario_prediction_hand_value():
    sc = scenario_three_program(scenario_cfg())
    assert sc.predicted_beta2 == pytest.approx(0.85, abs=1e-12)
    assert sc.shares[0] == pytest.approx(0.5, abs=0.05)


def test_scenario_no_displacement_target():
    sc = scenario_three_program(scenario_cfg(complier_targets=(0.7, 0.0)))
    assert sc.predicted_beta2 == pytest.approx(1.0, abs=1e-12)  # = e20


def test_scenario_simulated_2sls_matches_prediction():
    sc = scenario_three_program(scenario_cfg())
    mech = MechanismConfig(capacities=sc.capacities, lottery_seed=0)
    data = simulate_iv_dataset(sc.population, mech, reps=50, master_seed=13)
    est = estimate_all(data)
    assert abs(est.beta[1] - sc.predicted_beta2) < 3 * est.se_beta[1]
    fs = fit_first_stage(data)
    assert abs(fs.pi[1, 0]) < 1e-10  # mid-tier lottery never touches program 2
    # with that restriction the first reduced-form equation collapses to
    # RF_1 = beta_1 * pi_11
    assert abs(est.rf[0] - est.beta[0] * fs.pi[0, 0]) < 1e-8


def test_scenario_homogeneous_collapse():
    # e20 = e21 + e10: the closed form collapses to the common gain
    sc = scenario_three_program(
        scenario_cfg(scenario_effects=(0.5, 0.2, 0.3), het_scale=0.2)
    )
    assert sc.predicted_beta2 == pytest.approx(0.5, abs=1e-12)
    mech = MechanismConfig(capacities=sc.capacities, lottery_seed=0)
    data = simulate_iv_dataset(sc.population, mech, reps=50, master_seed=14)
    est = estimate_all(data)
    assert abs(est.beta[1] - 0.5) < 3 * est.se_beta[1]
    orc = slot_expansion_oracle(sc.population, mech, 2, reps=50, master_seed=14)
    assert abs(orc.value - 0.5) < max(3 * orc.mc_se, 1e-9)


def test_scenario_share_fidelity():
    sc = scenario_three_program(scenario_cfg(n=50_000, complier_targets=(0.3, 0.7)))
    assert sc.shares[0] == pytest.approx(0.3, abs=0.05)
    assert sc.shares[1] == pytest.approx(0.7, abs=0.05)


def test_scenario_rejects_bad_targets():
    with pytest.raises(InfeasibleComplierTargets):
        scenario_three_program(scenario_cfg(complier_targets=(0.0, 0.0)))
    with pytest.raises(InfeasibleComplierTargets):
        scenario_three_program(scenario_cfg(complier_targets=(-0.2, 0.5)))
    with pytest.raises(InfeasibleComplierTargets):
        scenario_three_program(scenario_cfg(n=20))
    with pytest.raises(DataError):
        scenario_three_program(scenario_cfg(k=3))
    with pytest.raises(DataError):
        scenario_three_program(scenario_cfg(complier_targets=None))


def test_config_validation():
    with pytest.raises(DataError):
        SynthConfig(n=0, k=2, seed=1)
    with pytest.raises(DataError):
        SynthConfig(n=10, k=2, seed=1, het_scale=-0.1)
    with pytest.raises(DataError):
        SynthConfig(n=10, k=2, seed=1, effects=(0.1,))

import numpy as np
import pytest

from cascadeiv.cascade import VacancyMatrix
from cascadeiv.errors import FixtureMismatch
from cascadeiv.estimator import FirstStage
from cascadeiv import fixtures


def test_all_fixture_checks_pass():
    report = fixtures.fixture_checks()
    assert report.all_passed
    assert report.rho_abs_m < 1.0


def test_field_table_delta_arithmetic():
    for row in fixtures.FIELD_TABLE:
        assert abs((row.T - row.W) - row.delta) <= 5e-4 + 1e-9


def test_field_table_named_rows():
    business = next(r for r in fixtures.FIELD_TABLE if r.field == "business")
    assert business.T == 0.0278 and business.W == 0.00449
    assert abs((business.T - business.W) - 0.0233) < 5e-4
    medicine = next(r for r in fixtures.FIELD_TABLE if r.field == "medicine")
    assert abs((medicine.T - medicine.W) - 0.0256) < 5e-4


def test_gender_table_difference_column():
    soc = next(r for r in fixtures.GENDER_TABLE if r.field == "social_science")
    assert abs((soc.T_f - soc.T_m) - 0.0650) <= 5e-4 + 1e-9
    for row in fixtures.GENDER_TABLE:
        assert abs((row.T_f - row.T_m) - row.diff) <= 5e-4 + 1e-9


def test_first_stage_spectral_radius_against_eigvals():
    vm = VacancyMatrix.from_first_stage(FirstStage(fixtures.FIRST_STAGE_PI))
    rho_eig = float(np.max(np.abs(np.linalg.eigvals(np.abs(vm.m)))))
    assert rho_eig < 1.0
    report = fixtures.fixture_checks()
    assert abs(report.rho_abs_m - rho_eig) < 1e-6


def test_first_stage_substitution_sign_pattern():
    off = fixtures.FIRST_STAGE_PI[~np.eye(7, dtype=bool)]
    assert (off < 0).sum() > (off > 0).sum()
    assert np.all(np.diag(fixtures.FIRST_STAGE_PI) > 0)


def test_first_stage_diagonal_t_stats_significant():
    assert np.all(np.diag(fixtures.FIRST_STAGE_TSTAT) > 1.96)


def test_corrupted_fixture_detected(monkeypatch):
    bad = tuple(
        fixtures.FieldEffectRow(r.field, r.T + (0.01 if r.field == "stem" else 0.0),
                           r.se_T, r.W, r.se_W, r.f_stat, r.n, r.delta, r.se_delta)
        for r in fixtures.FIELD_TABLE
    )
    monkeypatch.setattr(fixtures, "FIELD_TABLE", bad)
    with pytest.raises(FixtureMismatch) as exc:
        fixtures.fixture_checks()
    assert any("stem" in f for f in exc.value.failures)

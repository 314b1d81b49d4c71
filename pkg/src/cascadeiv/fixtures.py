"""Embedded reference estimates used as arithmetic-consistency fixtures.

Reference numbers for a seven-field national admissions lottery with a
charitable-giving outcome: per-field total and direct (own-margin) effects
with their difference, the same split by the gender of the marginal
entrant, and the 7x7 first-stage matrix with t-statistics. They exist to
cross-check this package's own arithmetic (decompositions, spectral gates,
sign structure), never as estimation targets. A checksum guards the
transcription.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .cascade import spectral_radius, VacancyMatrix
from .errors import FixtureMismatch
from .estimator import FirstStage

__all__ = ["FIELDS", "FIELD_TABLE", "GENDER_TABLE", "FIRST_STAGE_PI", "FIRST_STAGE_TSTAT", "FixtureReport", "fixture_checks"]

FIELDS = (
    "business",
    "social_science",
    "teaching",
    "medicine",
    "health",
    "stem",
    "other",
)


@dataclass(frozen=True)
class FieldEffectRow:
    field: str
    T: float
    se_T: float
    W: float
    se_W: float
    f_stat: float
    n: int
    delta: float
    se_delta: float


@dataclass(frozen=True)
class GenderEffectRow:
    field: str
    T_f: float
    se_T_f: float
    W_f: float
    se_W_f: float
    T_m: float
    se_T_m: float
    W_m: float
    se_W_m: float
    diff: float
    se_diff: float


FIELD_TABLE = (
    FieldEffectRow("business", 0.0278, 0.0175, 0.00449, 0.0143, 391, 19882, 0.0233, 0.00829),
    FieldEffectRow("social_science", 0.0476, 0.018, 0.0207, 0.0152, 606, 47011, 0.0269, 0.00881),
    FieldEffectRow("teaching", 0.0749, 0.0284, 0.0713, 0.0274, 300, 11102, 0.00358, 0.00545),
    FieldEffectRow("medicine", 0.0854, 0.0287, 0.0598, 0.0258, 166, 21169, 0.0256, 0.0102),
    FieldEffectRow("health", 0.0618, 0.0224, 0.0495, 0.0214, 488, 26867, 0.0123, 0.00545),
    FieldEffectRow("stem", 0.064, 0.0229, 0.0453, 0.0195, 332, 20358, 0.0187, 0.00848),
    FieldEffectRow("other", -0.0185, 0.0226, -0.0376, 0.0205, 214, 3190, 0.0191, 0.00987),
)

GENDER_TABLE = (
    GenderEffectRow("business", 0.0255, 0.0276, 0.00326, 0.0251, 0.0334, 0.0206, 0.00942, 0.0177, -0.00790, 0.0316),
    GenderEffectRow("social_science", 0.0719, 0.0246, 0.0445, 0.0217, 0.00686, 0.0231, -0.0182, 0.0202, 0.0650, 0.0313),
    GenderEffectRow("teaching", 0.0547, 0.0323, 0.0502, 0.0318, 0.153, 0.0701, 0.148, 0.0677, -0.0988, 0.0789),
    GenderEffectRow("medicine", 0.0761, 0.0338, 0.0532, 0.0315, 0.100, 0.0538, 0.0734, 0.0478, -0.0243, 0.0600),
    GenderEffectRow("health", 0.0819, 0.0277, 0.0707, 0.0265, -0.00918, 0.0356, -0.0262, 0.0333, 0.0911, 0.0447),
    GenderEffectRow("stem", 0.00719, 0.0371, 0.00347, 0.0349, 0.0957, 0.0293, 0.0669, 0.0247, -0.0885, 0.0462),
    GenderEffectRow("other", -0.0222, 0.0324, -0.0489, 0.0285, -0.0107, 0.0314, -0.0121, 0.0280, -0.0115, 0.0479),
)

# rows: field admitted to; columns: field applied to (the instrument)
FIRST_STAGE_PI = np.array(
    [
        [0.2670541009616569, -0.0384864129529581, -0.0016430206137129,
         -0.0092456218646518, 0.0043709882367854, -0.0419691280724044,
         -0.014420037814604],
        [-0.024195442354217, 0.1999331455557314, 0.0027859570391869,
         -0.0155664809711328, -0.007059532975271, -0.0220592899416572,
         -0.0625125406110319],
        [-0.0003548960191021, -0.0202945792634036, 0.3255022286986096,
         -0.0030250070239469, -0.0112459471597067, -0.0069518679552031,
         -0.0372511827956035],
        [-0.0084172650590387, 0.0003203404944292, -0.0006890576970252,
         0.1831770052549356, -0.0120999410636746, -0.0069385699323124,
         0.0085097715448754],
        [-0.0099895059220884, -0.0281982445985402, -0.013023118511289,
         -0.0182087352023665, 0.2147643919044608, -0.0123064725383515,
         -0.0447319686965577],
        [-0.0605912074807216, -0.01685973635159, -0.0105093170397931,
         -0.0370710834036859, -0.0087650386186476, 0.2031049518893526,
         -0.0094744668772731],
        [-0.0110624033029556, -0.0059732778602676, -0.0081034038905279,
         -0.0117065795626886, 0.0006290901686215, -0.0048501720826346,
         0.4748847541135967],
    ]
)

FIRST_STAGE_TSTAT = np.array(
    [
        [19.71414881322004, -7.066693396011896, -0.2600169626022659,
         -1.55357853528352, 1.051549618791635, -4.557191627653074,
         -0.7108864030995523],
        [-2.34688204447353, 24.62445108109826, 0.2465083879611087,
         -1.848376087740449, -1.042601925087281, -2.366330478093262,
         -2.366285729213455],
        [-0.0727738609178356, -4.229883291042067, 17.32240542340497,
         -0.7793669219857076, -1.829538077384745, -1.278035132853394,
         -1.978843768538641],
        [-2.221203281993112, 0.0923549499671415, -0.1726319738585581,
         12.98956298290735, -1.724831503016413, -1.318321575805309,
         0.4949133787918358],
        [-1.764604857842328, -5.364540784460895, -1.663499313533389,
         -1.888537845810508, 22.05053094058542, -1.977390162826845,
         -1.66251646233318],
        [-5.388927512277101, -2.888578744245208, -1.247678848419181,
         -3.808801767550563, -1.349084922240575, 18.14866539347028,
         -0.3445117541957404],
        [-2.279204049117297, -1.851150988934317, -1.499333668736404,
         -2.818833753168166, 0.134863036990328, -1.008447446919249,
         14.71918283660679],
    ]
)

N_OBSERVATIONS = 149579
N_PIVOTAL_GROUPS = 11604

_TOL = 5e-4 + 1e-9
_CHECKSUM = "fcfd624ee7c7c15397b4b7f07149ba33f49137895c23544ca2dead6156d70f74"


def _canonical_blob() -> bytes:
    parts = [",".join(FIELDS)]
    for row in FIELD_TABLE:
        parts.append(
            f"{row.field}:{row.T!r},{row.se_T!r},{row.W!r},{row.se_W!r},"
            f"{row.f_stat!r},{row.n!r},{row.delta!r},{row.se_delta!r}"
        )
    for row in GENDER_TABLE:
        parts.append(
            f"{row.field}:{row.T_f!r},{row.se_T_f!r},{row.W_f!r},{row.se_W_f!r},"
            f"{row.T_m!r},{row.se_T_m!r},{row.W_m!r},{row.se_W_m!r},"
            f"{row.diff!r},{row.se_diff!r}"
        )
    for mat in (FIRST_STAGE_PI, FIRST_STAGE_TSTAT):
        parts.append(",".join(repr(float(v)) for v in mat.ravel()))
    parts.append(f"{N_OBSERVATIONS},{N_PIVOTAL_GROUPS}")
    return "\n".join(parts).encode()


def checksum() -> str:
    return hashlib.sha256(_canonical_blob()).hexdigest()


@dataclass(frozen=True)
class FixtureReport:
    checks: tuple
    rho_abs_m: float

    @property
    def all_passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def lines(self) -> list[str]:
        out = []
        for name, ok, detail in self.checks:
            out.append(f"[{'ok' if ok else 'FAIL'}] {name}: {detail}")
        return out


def fixture_checks() -> FixtureReport:
    """Verify the embedded tables against each other.

    Checks per-field T - W = delta, the gender difference column, that the
    absolute vacancy matrix of the first-stage fixture has spectral radius
    below one, that the off-diagonal sign pattern is predominantly negative
    (substitution), and the transcription checksum.
    """
    checks = []
    failures = []

    for row in FIELD_TABLE:
        err = abs((row.T - row.W) - row.delta)
        ok = err <= _TOL
        checks.append(
            (f"field {row.field} delta = T - W", ok,
             f"{row.T:+.4f} - {row.W:+.5f} = {row.T - row.W:+.5f} vs {row.delta:+.5f}")
        )
        if not ok:
            failures.append(f"field table {row.field} (|err|={err:.2e})")

    for row in GENDER_TABLE:
        err = abs((row.T_f - row.T_m) - row.diff)
        ok = err <= _TOL
        checks.append(
            (f"gender {row.field} difference", ok,
             f"{row.T_f:+.4f} - {row.T_m:+.5f} = {row.T_f - row.T_m:+.5f} vs {row.diff:+.5f}")
        )
        if not ok:
            failures.append(f"gender table {row.field} (|err|={err:.2e})")

    fs = FirstStage(FIRST_STAGE_PI)
    rho = spectral_radius(VacancyMatrix.from_first_stage(fs).m)
    ok = rho < 1.0
    checks.append(("first-stage fixture rho(|M|) < 1", ok, f"rho = {rho:.4f}"))
    if not ok:
        failures.append(f"rho(|M|) = {rho:.4f} >= 1")

    off = FIRST_STAGE_PI[~np.eye(7, dtype=bool)]
    n_neg = int((off < 0).sum())
    n_pos = int((off > 0).sum())
    ok = n_neg > n_pos
    checks.append(
        ("off-diagonals predominantly negative", ok, f"{n_neg} negative vs {n_pos} positive")
    )
    if not ok:
        failures.append(f"off-diagonal signs: {n_neg} negative vs {n_pos} positive")

    digest = checksum()
    ok = digest == _CHECKSUM
    checks.append(("transcription checksum", ok, digest[:16]))
    if not ok:
        failures.append("checksum mismatch")

    report = FixtureReport(checks=tuple(checks), rho_abs_m=rho)
    if failures:
        raise FixtureMismatch(failures)
    return report

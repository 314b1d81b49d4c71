"""First stage, reduced form, 2SLS, Wald ratios, and cluster inference.

All fits operate on the control-residualized system: controls are partialled
out of the outcome, treatments, and instruments before any moment condition
is solved, so estimates with a full control matrix coincide with estimates on
the partialled data (Frisch-Waugh). The system is just identified (one
instrument per treatment), for which the 2SLS coefficients satisfy

    beta = solve(Pi', RF)

with Pi the matrix of first-stage coefficients and RF the reduced form.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.linalg

from .data import Dataset
from .errors import (
    DataError,
    RankDeficientControls,
    SingularFirstStage,
    SingularInstrumentGram,
    StatisticFailedInReplication,
    TooFewClusters,
    WeakDiagonalWarning,
    ZeroDiagonal,
    CascadeIVError,
)
from .seeds import rng_for

__all__ = [
    "FirstStage",
    "EstimateSet",
    "BootstrapResult",
    "partial_out",
    "fit_first_stage",
    "fit_reduced_form",
    "fit_2sls",
    "wald_ratios",
    "cluster_robust_se",
    "cluster_bootstrap",
    "first_stage_f",
    "joint_wald",
    "estimate_all",
]

WEAK_DIAGONAL_THRESHOLD = 1e-6


@dataclass(frozen=True)
class FirstStage:
    """K x K first-stage coefficient matrix.

    ``pi[j, k]`` is the coefficient on instrument k in the joint regression
    of treatment j on all K instruments (controls partialled out). ``diag``
    holds the own-instrument effects and ``offdiag`` the cross-effects with
    a zero diagonal, so ``pi == np.diag(diag) + offdiag`` by construction.
    """

    pi: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if pi.ndim != 2 or pi.shape[0] != pi.shape[1]:
            raise DataError("first-stage matrix must be square")
        object.__setattr__(self, "pi", pi)

    @property
    def k(self) -> int:
        return self.pi.shape[0]

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.pi).copy()

    @property
    def offdiag(self) -> np.ndarray:
        out = self.pi.copy()
        np.fill_diagonal(out, 0.0)
        return out


@dataclass(frozen=True)
class EstimateSet:
    """Per-treatment estimates and standard errors from one dataset."""

    beta: np.ndarray
    rf: np.ndarray
    wald: np.ndarray
    cascade_T: np.ndarray
    cascade_delta: np.ndarray
    se_beta: np.ndarray
    se_wald: np.ndarray
    se_delta: np.ndarray
    n_obs: int
    n_clusters: int


@dataclass(frozen=True)
class BootstrapResult:
    """Cluster-bootstrap spread of a statistic.

    ``estimates`` has one row per successful replication, indexed by
    replication so that any evaluation order yields identical output.
    """

    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    n_failed: int
    reps: int
    estimates: np.ndarray
    components: tuple[str, ...]


# ---------------------------------------------------------------------------
# Partialling
# ---------------------------------------------------------------------------


def _control_basis(x: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the control column span; rank-revealing.

    Raises RankDeficientControls with the offending (original) column index
    when the controls are linearly dependent.
    """
    n, p = x.shape
    q, r, piv = scipy.linalg.qr(x, mode="economic", pivoting=True)
    rdiag = np.abs(np.diag(r))
    tol = np.finfo(float).eps * max(n, p) * (rdiag[0] if rdiag.size else 0.0)
    rank = int(np.sum(rdiag > tol))
    if rank < p:
        cond = np.inf if rdiag[rank] == 0 else rdiag[0] / rdiag[rank]
        raise RankDeficientControls(column=int(piv[rank]), cond=float(cond))
    return q


def partial_out(data: Dataset) -> Dataset:
    """Residualize y, a, z on the controls; x becomes the constant column.

    Idempotent: applying it to an already-partialled dataset changes nothing
    beyond floating-point tolerance.
    """
    q = _control_basis(data.x)

    def resid(m):
        return m - q @ (q.T @ m)

    n = data.n_obs
    absorbed = data.n_absorbed if data.partialled else data.x.shape[1]
    return replace(
        data,
        y=resid(data.y),
        a=resid(data.a),
        z=resid(data.z),
        x=np.ones((n, 1)),
        partialled=True,
        n_absorbed=absorbed,
    )


def _partialled(data: Dataset) -> Dataset:
    return data if data.partialled else partial_out(data)


# ---------------------------------------------------------------------------
# Core fits
# ---------------------------------------------------------------------------


def _instrument_gram_solve(z: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """solve (z'z) b = z'rhs via rank-revealing QR of z."""
    n, k = z.shape
    q, r, piv = scipy.linalg.qr(z, mode="economic", pivoting=True)
    rdiag = np.abs(np.diag(r))
    tol = np.finfo(float).eps * max(n, k) * (rdiag[0] if rdiag.size else 0.0)
    if int(np.sum(rdiag > tol)) < k:
        raise SingularInstrumentGram(
            "instrument Gram matrix is rank deficient after partialling "
            f"(offending instrument column {int(piv[int(np.sum(rdiag > tol))]) + 1})"
        )
    coef_piv = scipy.linalg.solve_triangular(r, q.T @ rhs)
    coef = np.empty_like(coef_piv)
    coef[piv] = coef_piv
    return coef


def fit_first_stage(
    data: Dataset, weak_threshold: float = WEAK_DIAGONAL_THRESHOLD
) -> FirstStage:
    """Joint regression of each treatment on all instruments (plus controls).

    Warns with WeakDiagonalWarning when any own-instrument coefficient is
    below ``weak_threshold`` in absolute value, signalling a relevance
    failure in the population.
    """
    d = _partialled(data)
    if d.n_obs <= d.n_treatments + d.n_controls:
        raise DataError("need N > K + p observations to fit the first stage")
    coef = _instrument_gram_solve(d.z, d.a)  # coef[k, j]: Z_k on A_j
    pi = coef.T
    weak = np.flatnonzero(np.abs(np.diag(pi)) < weak_threshold)
    if weak.size:
        warnings.warn(
            f"own-instrument first-stage coefficients below {weak_threshold:g} "
            f"for treatments {[int(k) + 1 for k in weak]}",
            WeakDiagonalWarning,
            stacklevel=2,
        )
    return FirstStage(pi)


def fit_reduced_form(data: Dataset) -> np.ndarray:
    """Joint regression of the outcome on all instruments (plus controls)."""
    d = _partialled(data)
    return _instrument_gram_solve(d.z, d.y)


def fit_2sls(data: Dataset) -> np.ndarray:
    """Just-identified 2SLS coefficients.

    Solves the moment conditions z'(y - a beta) = 0 on the partialled
    system, which coincides with solve(Pi', RF) from the same data.
    """
    d = _partialled(data)
    za = d.z.T @ d.a
    cond = np.linalg.cond(za)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularFirstStage(cond=float(cond))
    return np.linalg.solve(za, d.z.T @ d.y)


def wald_ratios(rf: np.ndarray, fs: FirstStage) -> np.ndarray:
    """Own-instrument ratios RF_k / pi_kk (cross-effects ignored)."""
    rf = np.asarray(rf, dtype=float)
    diag = fs.diag
    if rf.shape != diag.shape:
        raise DataError("reduced form and first stage have different lengths")
    for k, v in enumerate(diag):
        if v == 0.0:
            raise ZeroDiagonal(k)
    return rf / diag


# ---------------------------------------------------------------------------
# Cluster-robust inference
# ---------------------------------------------------------------------------


def _small_sample_factor(n: int, g: int, k_params: int) -> float:
    return (g / (g - 1)) * ((n - 1) / (n - k_params))


def _cluster_sum(scores: np.ndarray, codes: np.ndarray, g: int) -> np.ndarray:
    out = np.zeros((g, scores.shape[1]))
    np.add.at(out, codes, scores)
    return out


@dataclass(frozen=True)
class _Scores:
    """Per-observation influence contributions for the fitted quantities."""

    beta: np.ndarray
    rf: np.ndarray
    zero_diag: int | None
    wald: np.ndarray | None
    delta: np.ndarray | None

    def get(self, which: str) -> np.ndarray:
        out = getattr(self, which)
        if out is None:
            raise ZeroDiagonal(self.zero_diag or 0)
        return out


def _influence(data: Dataset) -> _Scores:
    d = _partialled(data)
    z, a, y = d.z, d.a, d.y
    zz = z.T @ z
    za = z.T @ a
    try:
        zz_inv = np.linalg.inv(zz)
    except np.linalg.LinAlgError as exc:
        raise SingularInstrumentGram(str(exc)) from exc
    cond = np.linalg.cond(za)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularFirstStage(cond=float(cond))
    za_inv = np.linalg.inv(za)

    pi_t = zz_inv @ za  # Pi'
    rf = zz_inv @ (z.T @ y)
    beta = za_inv @ (z.T @ y)
    diag = np.diag(pi_t.T).copy()

    proj = z @ zz_inv  # rows: z_i' (z'z)^-1
    e_iv = y - a @ beta
    e_rf = y - z @ rf
    u_fs = a - z @ pi_t  # first-stage residuals, column j for treatment j

    s_beta = (e_iv[:, None] * z) @ za_inv.T
    s_rf = e_rf[:, None] * proj
    if np.any(diag == 0.0):
        zero_k = int(np.flatnonzero(diag == 0.0)[0])
        return _Scores(beta=s_beta, rf=s_rf, zero_diag=zero_k, wald=None, delta=None)
    s_pikk = proj * u_fs  # column k: influence of pi_kk
    s_wald = s_rf / diag - (rf / diag**2) * s_pikk
    return _Scores(
        beta=s_beta, rf=s_rf, zero_diag=None, wald=s_wald, delta=s_beta - s_wald
    )


def _sandwich(
    scores: np.ndarray,
    codes: np.ndarray,
    n: int,
    k_params: int,
    factor: float | None = None,
) -> np.ndarray:
    g = int(codes.max()) + 1
    if g < 2:
        raise TooFewClusters("cluster-robust inference needs >= 2 clusters")
    psi = _cluster_sum(scores, codes, g)
    if factor is None:
        factor = _small_sample_factor(n, g, k_params)
    return psi.T @ psi * factor


def cluster_robust_se(
    data: Dataset, which: str = "beta", small_sample_factor: float | None = None
) -> np.ndarray:
    """Cluster sandwich standard errors for ``beta``, ``rf``, or ``wald``.

    Scores are summed within clusters; the conventional small-sample
    factor G/(G-1) * (N-1)/(N-K-p) is applied unless an explicit
    ``small_sample_factor`` overrides it. Wald-ratio standard errors come
    from the delta-method influence of RF_k / pi_kk.
    """
    return np.sqrt(np.diag(cluster_vcov(data, which, small_sample_factor)))


def cluster_vcov(
    data: Dataset, which: str = "beta", small_sample_factor: float | None = None
) -> np.ndarray:
    """Full cluster-robust covariance matrix for the chosen estimates."""
    if which not in ("beta", "rf", "wald", "delta"):
        raise DataError(f"unknown standard-error target {which!r}")
    sc = _influence(data)
    codes = data.cluster_codes()
    k_params = data.n_treatments + data.n_controls
    return _sandwich(
        sc.get(which), codes, data.n_obs, k_params, factor=small_sample_factor
    )


def joint_wald(estimates: np.ndarray, vcov: np.ndarray) -> float:
    """Wald statistic b' V^-1 b (chi-squared with len(b) dof under the null)."""
    estimates = np.asarray(estimates, dtype=float)
    try:
        solved = np.linalg.solve(vcov, estimates)
    except np.linalg.LinAlgError:
        solved = np.linalg.pinv(vcov) @ estimates
    return float(estimates @ solved)


def first_stage_f(data: Dataset) -> np.ndarray:
    """Per-treatment first-stage F: all K instruments jointly zero.

    Classic (homoskedastic) F over the partialled system, reported as a
    relevance diagnostic alongside the weak-diagonal check.
    """
    d = _partialled(data)
    z, a = d.z, d.a
    n, k = z.shape
    zz_inv = np.linalg.inv(z.T @ z)
    pi_t = zz_inv @ (z.T @ a)
    u = a - z @ pi_t
    rss = (u**2).sum(axis=0)
    tss = ((a - a.mean(axis=0)) ** 2).sum(axis=0)
    dof = n - k - d.n_controls
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(rss > 0, ((tss - rss) / k) / (rss / dof), np.inf)
    return out


# ---------------------------------------------------------------------------
# Cluster bootstrap
# ---------------------------------------------------------------------------


def _stat_beta(d: Dataset) -> np.ndarray:
    return fit_2sls(d)


def _stat_wald(d: Dataset) -> np.ndarray:
    dp = _partialled(d)
    return wald_ratios(fit_reduced_form(dp), fit_first_stage(dp))


def _stat_cascade_delta(d: Dataset) -> np.ndarray:
    dp = _partialled(d)
    return fit_2sls(dp) - wald_ratios(fit_reduced_form(dp), fit_first_stage(dp))


def _stat_conditional_entrant(d: Dataset, levels=None) -> np.ndarray:
    # avoids a module cycle: cascade needs the fits defined above
    from .cascade import conditional_entrant_effect

    if d.group_label is None:
        raise DataError("conditional_entrant statistic needs group labels")
    if levels is None:
        levels = np.unique(d.group_label)
    beta_full = fit_2sls(d)
    parts = []
    for lev in levels:
        rows = np.flatnonzero(d.group_label == lev)
        if rows.size == 0:
            # a bootstrap draw can lose a whole group; count it as a failure
            raise DataError(f"group level {lev!r} absent from this sample")
        subp = _partialled(d.take(rows))
        parts.append(
            conditional_entrant_effect(
                fit_reduced_form(subp), fit_first_stage(subp), beta_full
            )
        )
    if len(parts) == 2:
        parts.append(parts[0] - parts[1])
    return np.concatenate(parts)


_NAMED_STATISTICS: dict[str, Callable[[Dataset], np.ndarray]] = {
    "beta": _stat_beta,
    "wald": _stat_wald,
    "cascade_delta": _stat_cascade_delta,
    "conditional_entrant": _stat_conditional_entrant,
}


def _resolve_statistic(name: str, data: Dataset):
    """Statistic callable with its component names, levels bound up front."""
    if name not in _NAMED_STATISTICS:
        raise DataError(f"unknown bootstrap statistic {name!r}")
    k = data.n_treatments
    if name != "conditional_entrant":
        return _NAMED_STATISTICS[name], tuple(f"{name}_{j + 1}" for j in range(k))
    if data.group_label is None:
        raise DataError("conditional_entrant statistic needs group labels")
    levels = np.unique(data.group_label)
    names = [f"T_{j + 1}|{lev}" for lev in levels for j in range(k)]
    if len(levels) == 2:
        names += [f"T_{j + 1}|{levels[0]}-{levels[1]}" for j in range(k)]

    def stat(d: Dataset) -> np.ndarray:
        return _stat_conditional_entrant(d, levels=levels)

    return stat, tuple(names)


def cluster_bootstrap(
    data: Dataset,
    statistic: str | Callable[[Dataset], np.ndarray],
    reps: int,
    seed: int,
    max_failure_share: float = 0.10,
) -> BootstrapResult:
    """Resample clusters with replacement and recompute a statistic.

    Each replication draws G clusters (with replacement, relabelled by draw
    position), indexed by a seed derived from the master seed so evaluation
    order cannot matter. Replications where the statistic raises a package
    error are dropped and counted; more than ``max_failure_share`` failures
    is an error.
    """
    if reps < 2:
        raise DataError("bootstrap needs reps >= 2")
    if callable(statistic):
        stat_fn = statistic
        components: tuple[str, ...] | None = None
    else:
        stat_fn, components = _resolve_statistic(statistic, data)

    codes = data.cluster_codes()
    g = int(codes.max()) + 1
    if g < 2:
        raise TooFewClusters("cluster bootstrap needs >= 2 clusters")
    order = np.argsort(codes, kind="stable")
    bounds = np.searchsorted(codes[order], np.arange(g + 1))
    group_rows = [order[bounds[i] : bounds[i + 1]] for i in range(g)]

    results = None
    n_failed = 0
    for r in range(reps):
        rng = rng_for(seed, r)
        draw = rng.integers(0, g, size=g)
        rows = np.concatenate([group_rows[gi] for gi in draw])
        relabel = np.repeat(np.arange(g), [group_rows[gi].size for gi in draw])
        d_r = replace(
            data.take(rows),
            cluster=relabel,
        )
        try:
            value = np.atleast_1d(np.asarray(stat_fn(d_r), dtype=float))
        except CascadeIVError:
            n_failed += 1
            continue
        if results is None:
            results = np.full((reps, value.size), np.nan)
        results[r] = value
    if n_failed > max_failure_share * reps or results is None:
        raise StatisticFailedInReplication(n_failed, reps)

    ok = ~np.isnan(results[:, 0])
    est = results[ok]
    se = np.std(est, axis=0, ddof=1)
    lo, hi = np.percentile(est, [2.5, 97.5], axis=0)
    if components is None:
        components = tuple(f"stat_{j + 1}" for j in range(est.shape[1]))
    return BootstrapResult(
        se=se,
        ci_lower=lo,
        ci_upper=hi,
        n_failed=n_failed,
        reps=reps,
        estimates=est,
        components=components,
    )


# ---------------------------------------------------------------------------
# One-stop estimation
# ---------------------------------------------------------------------------


def estimate_all(data: Dataset) -> EstimateSet:
    """Fit everything on one dataset and package it as an EstimateSet."""
    from .cascade import cascade_solve

    d = _partialled(data)
    fs = fit_first_stage(d)
    rf = fit_reduced_form(d)
    beta = fit_2sls(d)
    wald = wald_ratios(rf, fs)
    solution = cascade_solve(fs, rf)
    cascade_t = solution.T
    delta = cascade_t - wald
    se_beta = cluster_robust_se(d, "beta")
    se_wald = cluster_robust_se(d, "wald")
    se_delta = cluster_robust_se(d, "delta")
    return EstimateSet(
        beta=beta,
        rf=rf,
        wald=wald,
        cascade_T=cascade_t,
        cascade_delta=delta,
        se_beta=se_beta,
        se_wald=se_wald,
        se_delta=se_delta,
        n_obs=data.n_obs,
        n_clusters=data.n_clusters,
    )

"""Ranked-queue admission with lottery tie-breaking, and the slot oracle.

Programs fill fixed capacities from ranked queues with strict priority
(merit bracket, then an independent per-program lottery draw). Clearing is
computed as the minimal market-clearing cutoff vector, raised iteratively
from below; this yields the applicant-optimal stable matching, identical to
applicant-proposing deferred acceptance under the same strict priorities.

A program's pivotal group is the set of applicants who reached it in the
proposal order and whose merit equals the cutoff bracket; among them,
admission is decided purely by the lottery. Their normalized lottery ranks
are the instruments, and rerunning the clearing with one extra slot is the
brute-force measurement of the slot-expansion effect the 2SLS coefficients
are supposed to equal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset
from .errors import DataError, NoPivotalProgramWarning, NoPivotalVariation
from .seeds import derive_seed

__all__ = [
    "Population",
    "MechanismConfig",
    "AllocationResult",
    "SimulationOutput",
    "OracleResult",
    "BalanceResult",
    "run_clearing",
    "identify_pivotal_groups",
    "luck_variable",
    "simulate_iv_dataset",
    "simulate_run",
    "slot_expansion_oracle",
    "balance_check",
    "find_blocking_pairs",
    "realized_outcomes",
]


@dataclass(frozen=True)
class Population:
    """Applicants with merit brackets, ranked preferences, potential outcomes.

    ``prefs[i]`` lists program ids (1..K) in descending preference; the
    outside option is implicit last. ``po[i, 0]`` is the untreated outcome
    and ``po[i, j]`` the outcome under program j.
    """

    merit: np.ndarray
    prefs: list
    po: np.ndarray
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        merit = np.asarray(self.merit)
        po = np.asarray(self.po, dtype=float)
        object.__setattr__(self, "merit", merit)
        object.__setattr__(self, "po", po)
        n = merit.shape[0]
        if merit.ndim != 1 or merit.dtype.kind not in "iu":
            raise DataError("merit must be a vector of integer brackets")
        if po.ndim != 2 or po.shape[0] != n or po.shape[1] < 2:
            raise DataError("po must be (N, K+1) with K >= 1")
        if not np.all(np.isfinite(po)):
            raise DataError("potential outcomes must be finite")
        if len(self.prefs) != n:
            raise DataError("prefs must have one list per applicant")
        k = po.shape[1] - 1
        max_len = 1
        norm_prefs = []
        for i, raw in enumerate(self.prefs):
            pl = tuple(int(p) for p in raw)
            if len(set(pl)) != len(pl):
                raise DataError(f"applicant {i} ranks a program twice")
            for p in pl:
                if not 1 <= p <= k:
                    raise DataError(
                        f"applicant {i} ranks invalid program {p} (K={k})"
                    )
            max_len = max(max_len, len(pl))
            norm_prefs.append(pl)
        object.__setattr__(self, "prefs", norm_prefs)
        for name, arr in self.labels.items():
            if np.asarray(arr).shape != (n,):
                raise DataError(f"label {name!r} must have length N")
        pref_arr = np.zeros((n, max_len), dtype=np.int64)
        for i, pl in enumerate(norm_prefs):
            if pl:
                pref_arr[i, : len(pl)] = list(pl)
        object.__setattr__(self, "_pref_array", pref_arr)

    @property
    def n(self) -> int:
        return self.merit.shape[0]

    @property
    def n_programs(self) -> int:
        return self.po.shape[1] - 1

    def pref_array(self) -> np.ndarray:
        """(N, L) padded preference matrix; 0 marks unused slots."""
        return self._pref_array


@dataclass(frozen=True)
class MechanismConfig:
    capacities: tuple
    lottery_seed: int
    mutually_exclusive: bool = True

    def __post_init__(self):
        caps = tuple(int(c) for c in self.capacities)
        if any(c < 1 for c in caps):
            raise DataError("capacities must all be >= 1")
        object.__setattr__(self, "capacities", caps)


@dataclass(frozen=True)
class AllocationResult:
    """One clearing outcome.

    ``assignment[i]`` is the assigned program (0 = outside option).
    ``cutoffs[k]`` is (merit bracket, lottery draw) of the last admit for
    programs that admitted anyone. ``pivotal_groups[k]`` lists the members
    of program k's lottery margin and ``luck[k]`` their normalized ranks.
    ``admitted`` is the (N, K) admission indicator matrix (one-hot rows
    under mutually exclusive assignment).
    """

    assignment: np.ndarray
    admitted: np.ndarray
    cutoffs: dict
    pivotal_groups: dict
    luck: dict
    oversubscribed: np.ndarray
    draws: np.ndarray
    reached: np.ndarray
    events: list


def luck_variable(draws: np.ndarray) -> np.ndarray:
    """Normalized lottery ranks L = 1 - rank/(1+n), rank 1 = best draw.

    Within a group of size n the values are exactly {i/(n+1): i=1..n} and
    average to 1/2.
    """
    draws = np.asarray(draws, dtype=float)
    n = draws.shape[0]
    if n < 1:
        raise DataError("luck_variable needs a nonempty group")
    order = np.argsort(-draws, kind="stable")
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(1, n + 1)
    # computed as (n+1-rank)/(n+1) so the multiset is exactly {i/(n+1)}
    return (n + 1 - ranks) / (n + 1.0)


def _pivotal_groups(
    merit: np.ndarray,
    priority: np.ndarray,
    reached: np.ndarray,
    assignment_matrix: np.ndarray,
    oversubscribed: np.ndarray,
    draws: np.ndarray,
) -> tuple[dict, dict]:
    """Lottery margins: reached applicants in the straddled cutoff bracket."""
    k = priority.shape[1]
    groups: dict = {}
    luck: dict = {}
    for kk in range(k):
        if not oversubscribed[kk]:
            continue
        admitted = assignment_matrix[:, kk]
        adm_idx = np.flatnonzero(admitted)
        rej_idx = np.flatnonzero(reached[:, kk] & ~admitted)
        if adm_idx.size == 0 or rej_idx.size == 0:
            continue
        cutoff_bracket = int(np.floor(priority[adm_idx, kk].min()))
        best_rejected = int(np.floor(priority[rej_idx, kk].max()))
        if cutoff_bracket != best_rejected:
            # clean break between brackets: the lottery decided nothing
            continue
        members = np.flatnonzero(reached[:, kk] & (merit == cutoff_bracket))
        groups[kk + 1] = members
        luck[kk + 1] = luck_variable(draws[members, kk])
    return groups, luck


def run_clearing(
    pop: Population, cfg: MechanismConfig, log_events: bool = False
) -> AllocationResult:
    """Clear the market for one lottery draw.

    Deterministic given ``cfg.lottery_seed``. Under mutually exclusive
    assignment this computes the applicant-optimal stable matching for the
    strict priority (merit bracket, per-program lottery draw); the
    non-exclusive mode (experimental) lets every program admit its top
    capacity among all applicants who listed it.
    """
    n, k = pop.n, pop.n_programs
    caps = np.asarray(cfg.capacities, dtype=np.int64)
    if caps.shape != (k,):
        raise DataError(f"expected {k} capacities, got {caps.shape[0]}")
    draws = np.random.default_rng(cfg.lottery_seed).random((n, k))
    priority = pop.merit[:, None].astype(float) + draws
    prefs = pop.pref_array()
    has_pref = prefs > 0
    pref_ix = np.maximum(prefs - 1, 0)
    pr_slot = np.where(
        has_pref, np.take_along_axis(priority, pref_ix, axis=1), -np.inf
    )
    events: list = []

    if cfg.mutually_exclusive:
        cutoffs = np.full(k, -np.inf)
        prev_demand = None
        sweep = 0
        while True:
            eligible = has_pref & (pr_slot >= cutoffs[pref_ix])
            any_el = eligible.any(axis=1)
            first = np.argmax(eligible, axis=1)
            demand = np.where(
                any_el, np.take_along_axis(prefs, first[:, None], axis=1).ravel(), 0
            )
            if log_events and prev_demand is not None:
                for i in np.flatnonzero(prev_demand != demand):
                    events.append(
                        {
                            "round": sweep,
                            "program_from": int(prev_demand[i]),
                            "program_to": int(demand[i]),
                            "applicant": int(i),
                        }
                    )
            changed = False
            for kk in range(k):
                members = demand == kk + 1
                cnt = int(members.sum())
                if cnt > caps[kk]:
                    pr_k = priority[members, kk]
                    cutoffs[kk] = np.partition(pr_k, cnt - caps[kk])[cnt - caps[kk]]
                    changed = True
            if not changed:
                break
            prev_demand = demand
            sweep += 1
        assignment = demand
        admitted = np.zeros((n, k), dtype=bool)
        pos = np.flatnonzero(assignment > 0)
        admitted[pos, assignment[pos] - 1] = True
        oversubscribed = cutoffs > -np.inf
        # proposal prefix: every listed program up to the first eligible one
        eligible = has_pref & (pr_slot >= cutoffs[pref_ix])
        any_el = eligible.any(axis=1)
        first = np.argmax(eligible, axis=1)
        lengths = has_pref.sum(axis=1)
        last_pos = np.where(any_el, first, np.maximum(lengths - 1, 0))
        posmask = has_pref & (np.arange(prefs.shape[1]) <= last_pos[:, None])
        reached = np.zeros((n, k), dtype=bool)
        ii, ll = np.nonzero(posmask)
        reached[ii, prefs[ii, ll] - 1] = True
    else:
        # experimental: applicants hold every admission they win
        admitted = np.zeros((n, k), dtype=bool)
        listed = np.zeros((n, k), dtype=bool)
        ii, ll = np.nonzero(has_pref)
        listed[ii, prefs[ii, ll] - 1] = True
        cutoffs = np.full(k, -np.inf)
        oversubscribed = np.zeros(k, dtype=bool)
        for kk in range(k):
            cand = np.flatnonzero(listed[:, kk])
            if cand.size <= caps[kk]:
                admitted[cand, kk] = True
                continue
            pr_k = priority[cand, kk]
            cutoffs[kk] = np.partition(pr_k, cand.size - caps[kk])[
                cand.size - caps[kk]
            ]
            admitted[cand[pr_k >= cutoffs[kk]], kk] = True
            oversubscribed[kk] = True
        reached = listed
        assignment = np.zeros(n, dtype=np.int64)
        for pos in range(prefs.shape[1] - 1, -1, -1):
            got = has_pref[:, pos] & admitted[np.arange(n), pref_ix[:, pos]]
            assignment = np.where(got, prefs[:, pos], assignment)

    cutoff_repr = {}
    for kk in range(k):
        adm = np.flatnonzero(admitted[:, kk])
        if adm.size:
            p_last = priority[adm, kk].min()
            cutoff_repr[kk + 1] = (int(np.floor(p_last)), float(p_last % 1.0))
    groups, luck = _pivotal_groups(
        pop.merit, priority, reached, admitted, oversubscribed, draws
    )
    return AllocationResult(
        assignment=assignment,
        admitted=admitted,
        cutoffs=cutoff_repr,
        pivotal_groups=groups,
        luck=luck,
        oversubscribed=oversubscribed,
        draws=draws,
        reached=reached,
        events=events,
    )


def identify_pivotal_groups(result: AllocationResult) -> dict:
    """Pivotal groups with sizes, {program id: (member indices, n_g)}."""
    return {k: (idx, idx.size) for k, idx in result.pivotal_groups.items()}


def realized_outcomes(pop: Population, admitted: np.ndarray) -> np.ndarray:
    """Observed outcomes under an admission matrix (additive in programs)."""
    gains = pop.po[:, 1:] - pop.po[:, [0]]
    return pop.po[:, 0] + (gains * admitted).sum(axis=1)


# ---------------------------------------------------------------------------
# Stacked IV dataset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationOutput:
    dataset: Dataset
    covariates: dict
    covariate_names: tuple
    events: list


def simulate_run(
    pop: Population,
    cfg: MechanismConfig,
    reps: int,
    master_seed: int,
    label: str | None = None,
    log_events: bool = False,
) -> SimulationOutput:
    """Stack pivotal-group records across lottery replications.

    Each replication clears the market with seed ``derive_seed(master_seed,
    rep)``. One record per pivotal-group membership: Z_ij is the member's
    normalized lottery rank at margin j and zero elsewhere (an applicant
    pivotal at two margins contributes two records, one per group, so every
    record's luck is uniform within its own cluster). Controls are a
    constant plus applied-at-margin dummies (modal margin as baseline) and
    clusters are (replication, pivotal group). Covariates for balance
    checks (merit, first choice, labels) ride along, aligned row by row.
    """
    if reps < 1:
        raise DataError("reps must be >= 1")
    k = pop.n_programs
    y_parts, a_parts, z_parts, d_parts = [], [], [], []
    cluster_parts, applicant_parts = [], []
    events: list = []
    seen_pivotal = np.zeros(k, dtype=bool)
    for r in range(reps):
        seed_r = derive_seed(master_seed, r)
        res = run_clearing(
            pop, replace(cfg, lottery_seed=seed_r), log_events=log_events
        )
        if log_events:
            events.extend({"replication": r, **ev} for ev in res.events)
        if not res.pivotal_groups:
            continue
        y_all = realized_outcomes(pop, res.admitted)
        for prog, idx in sorted(res.pivotal_groups.items()):
            seen_pivotal[prog - 1] = True
            m = idx.size
            z = np.zeros((m, k))
            z[:, prog - 1] = res.luck[prog]
            dums = np.zeros((m, k))
            dums[:, prog - 1] = 1.0
            y_parts.append(y_all[idx])
            a_parts.append(res.admitted[idx].astype(float))
            z_parts.append(z)
            d_parts.append(dums)
            cluster_parts.append(np.full(m, f"r{r}:p{prog}", dtype=object))
            applicant_parts.append(idx)
    if not y_parts:
        raise NoPivotalVariation("no program was oversubscribed in any replication")
    if not seen_pivotal.all():
        missing = [int(j) + 1 for j in np.flatnonzero(~seen_pivotal)]
        warnings.warn(
            f"programs {missing} produced no pivotal group in any replication; "
            "their instrument columns are identically zero",
            NoPivotalProgramWarning,
            stacklevel=2,
        )
    y = np.concatenate(y_parts)
    a = np.vstack(a_parts)
    z = np.vstack(z_parts)
    dums = np.vstack(d_parts)
    cluster = np.concatenate(cluster_parts)
    applicants = np.concatenate(applicant_parts)

    counts = dums.sum(axis=0)
    baseline = int(np.argmax(counts))  # modal margin anchors the dummies
    keep = [j for j in range(k) if j != baseline and counts[j] > 0]
    x = np.column_stack([np.ones(y.size)] + [dums[:, j] for j in keep])

    group_label = None
    if label is not None:
        group_label = np.asarray(pop.labels[label])[applicants]
    dataset = Dataset(
        y=y, a=a, z=z, x=x, cluster=cluster, group_label=group_label
    )
    covariates = {"merit": pop.merit[applicants].astype(float)}
    first_choice = np.array(
        [pop.prefs[i][0] if pop.prefs[i] else 0 for i in applicants], dtype=float
    )
    covariates["first_choice"] = first_choice
    for name, arr in pop.labels.items():
        arr = np.asarray(arr)
        if arr.dtype.kind not in "fiub":
            _, arr = np.unique(arr, return_inverse=True)
        covariates[name] = arr[applicants].astype(float)
    return SimulationOutput(
        dataset=dataset,
        covariates=covariates,
        covariate_names=tuple(covariates),
        events=events,
    )


def simulate_iv_dataset(
    pop: Population,
    cfg: MechanismConfig,
    reps: int,
    master_seed: int,
    label: str | None = None,
) -> Dataset:
    """Stacked pivotal-sample Dataset (see ``simulate_run`` for layout)."""
    return simulate_run(pop, cfg, reps, master_seed, label=label).dataset


# ---------------------------------------------------------------------------
# Brute-force slot-expansion oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    """Monte Carlo slot-expansion effect for one program."""

    value: float
    mc_se: float
    undersubscribed: bool
    per_rep: np.ndarray


def slot_expansion_oracle(
    pop: Population,
    cfg: MechanismConfig,
    k: int,
    reps: int,
    master_seed: int,
) -> OracleResult:
    """Average change in total outcomes from one extra slot at program k.

    Per replication, clears the market at the baseline capacities and again
    with capacity k raised by one, holding the lottery draws fixed, and
    sums realized outcomes over the whole population (outside option
    included, so terminal entrants of the reallocation chain count). If
    program k is never oversubscribed the marginal slot admits no one and
    the oracle is 0 with ``undersubscribed`` set.
    """
    if not 1 <= k <= pop.n_programs:
        raise DataError(f"program id {k} out of range 1..{pop.n_programs}")
    if reps < 1:
        raise DataError("reps must be >= 1")
    caps = list(cfg.capacities)
    caps_plus = list(caps)
    caps_plus[k - 1] += 1
    deltas = np.zeros(reps)
    oversub_any = False
    for r in range(reps):
        seed_r = derive_seed(master_seed, r)
        base = run_clearing(pop, replace(cfg, lottery_seed=seed_r))
        if not base.oversubscribed[k - 1]:
            continue
        oversub_any = True
        expanded = run_clearing(
            pop,
            MechanismConfig(
                capacities=tuple(caps_plus),
                lottery_seed=seed_r,
                mutually_exclusive=cfg.mutually_exclusive,
            ),
        )
        deltas[r] = realized_outcomes(pop, expanded.admitted).sum() - (
            realized_outcomes(pop, base.admitted).sum()
        )
    value = float(deltas.mean())
    mc_se = float(deltas.std(ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
    return OracleResult(
        value=value if oversub_any else 0.0,
        mc_se=mc_se,
        undersubscribed=not oversub_any,
        per_rep=deltas,
    )


# ---------------------------------------------------------------------------
# Balance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BalanceResult:
    names: tuple
    coef: np.ndarray
    se: np.ndarray
    tstat: np.ndarray
    joint_wald: float
    joint_f: float
    df: int
    p_value: float
    n_clusters: int


def pooled_luck(data: Dataset) -> np.ndarray:
    """Per-row luck: each record carries one margin's lottery rank."""
    return data.z.sum(axis=1)


def balance_check(data: Dataset, covariates: np.ndarray, names=None) -> BalanceResult:
    """Regress each predetermined covariate on the pooled luck variable.

    Slopes use cluster-robust standard errors; the joint test stacks the
    per-covariate slope scores into one sandwich and refers the Wald
    statistic over its rank to an F(rank, G-1) distribution.
    """
    import scipy.stats

    cov = np.atleast_2d(np.asarray(covariates, dtype=float))
    if cov.shape[0] != data.n_obs:
        cov = cov.T
    if cov.shape[0] != data.n_obs:
        raise DataError("covariates must have one row per observation")
    m = cov.shape[1]
    if names is None:
        names = tuple(f"cov_{j + 1}" for j in range(m))
    luck = pooled_luck(data)
    lt = luck - luck.mean()
    sll = float(lt @ lt)
    if sll == 0.0:
        raise DataError("luck variable has no variation")
    cross = lt @ cov
    # cluster-constant covariates give exact balance; zero them instead of
    # reporting t-statistics that are ratios of rounding noise
    scale = np.sqrt(sll) * np.sqrt((cov**2).sum(axis=0)) + 1.0
    cross = np.where(np.abs(cross) <= 1e-9 * scale, 0.0, cross)
    coefs = cross / sll
    resid = (cov - cov.mean(axis=0)) - np.outer(lt, coefs)
    scores = lt[:, None] * resid / sll
    codes = data.cluster_codes()
    g = int(codes.max()) + 1
    psi = np.zeros((g, m))
    np.add.at(psi, codes, scores)
    c = (g / (g - 1)) * ((data.n_obs - 1) / (data.n_obs - 2))
    v = psi.T @ psi * c
    se = np.sqrt(np.diag(v))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = np.where(se > 0, coefs / se, 0.0)
    rank = int(np.linalg.matrix_rank(v)) if v.size else 0
    if rank == 0:
        wald = 0.0
    else:
        wald = float(coefs @ (np.linalg.pinv(v) @ coefs))
    f_stat = wald / rank if rank else 0.0
    p = float(scipy.stats.f.sf(f_stat, rank, g - 1)) if rank else 1.0
    return BalanceResult(
        names=tuple(names),
        coef=coefs,
        se=se,
        tstat=tstat,
        joint_wald=wald,
        joint_f=f_stat,
        df=rank,
        p_value=p,
        n_clusters=g,
    )


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def find_blocking_pairs(
    pop: Population, cfg: MechanismConfig, result: AllocationResult
) -> list[tuple[int, int]]:
    """Exhaustive stability scan from the assignment alone.

    (i, k) blocks when applicant i ranks k above their assignment and k
    either has spare capacity or admitted someone with lower priority.
    """
    n, k = pop.n, pop.n_programs
    caps = np.asarray(cfg.capacities)
    priority = pop.merit[:, None].astype(float) + result.draws
    admitted_counts = result.admitted.sum(axis=0)
    min_admitted = np.full(k, np.inf)
    for kk in range(k):
        adm = np.flatnonzero(result.admitted[:, kk])
        if adm.size:
            min_admitted[kk] = priority[adm, kk].min()
    pairs = []
    for i in range(n):
        for prog in pop.prefs[i]:
            if result.assignment[i] == prog:
                break
            kk = prog - 1
            if admitted_counts[kk] < caps[kk] or priority[i, kk] > min_admitted[kk]:
                pairs.append((i, prog))
    return pairs

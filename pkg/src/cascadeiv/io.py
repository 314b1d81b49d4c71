"""CSV/JSON file formats.

Tabular data is CSV with ``\n`` line endings, ``.`` decimals, and no
thousands separators; configs and error payloads are JSON; event logs are
JSON lines. Every output CSV starts with a provenance comment line
(``# cascadeiv <version> command=<cmd> seed=<seed>``) so reruns are
byte-comparable.
"""

from __future__ import annotations

import csv
import io as _io
import json
import re

import numpy as np

from .data import Dataset
from .errors import ParseError, SchemaError
from .estimator import EstimateSet

DATASET_COLUMNS = "y, a_1..a_K, z_1..z_K, x_*, cluster, optional group"


def fmt_float(v: float) -> str:
    return repr(float(v))


def provenance_line(command: str, seed: int | None) -> str:
    from . import __version__

    return f"# cascadeiv {__version__} command={command} seed={'-' if seed is None else seed}"


# ---------------------------------------------------------------------------
# Dataset CSV
# ---------------------------------------------------------------------------


def write_dataset_csv(path, data: Dataset, command: str = "write", seed: int | None = None):
    k = data.n_treatments
    p = data.x.shape[1]
    header = (
        ["y"]
        + [f"a_{j + 1}" for j in range(k)]
        + [f"z_{j + 1}" for j in range(k)]
        + [f"x_{j + 1}" for j in range(p)]
        + ["cluster"]
    )
    if data.group_label is not None:
        header.append("group")
    with open(path, "w", newline="") as fh:
        fh.write(provenance_line(command, seed) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(data.n_obs):
            row = (
                [fmt_float(data.y[i])]
                + [fmt_float(v) for v in data.a[i]]
                + [fmt_float(v) for v in data.z[i]]
                + [fmt_float(v) for v in data.x[i]]
                + [str(data.cluster[i])]
            )
            if data.group_label is not None:
                row.append(str(data.group_label[i]))
            writer.writerow(row)


def _header_layout(header: list[str]) -> dict:
    layout: dict = {"a": {}, "z": {}, "x": [], "y": None, "cluster": None, "group": None}
    for pos, name in enumerate(header):
        if name == "y":
            if layout["y"] is not None:
                raise SchemaError("duplicate column 'y'")
            layout["y"] = pos
        elif name == "cluster":
            if layout["cluster"] is not None:
                raise SchemaError("duplicate column 'cluster'")
            layout["cluster"] = pos
        elif name == "group":
            layout["group"] = pos
        elif m := re.fullmatch(r"([az])_(\d+)", name):
            block, ix = m.group(1), int(m.group(2))
            if ix in layout[block]:
                raise SchemaError(f"duplicate column '{name}'")
            layout[block][ix] = pos
        elif name.startswith("x_"):
            layout["x"].append(pos)
        else:
            raise SchemaError(f"unexpected column {name!r}; expected {DATASET_COLUMNS}")
    if layout["y"] is None:
        raise SchemaError("missing column 'y'")
    if layout["cluster"] is None:
        raise SchemaError("missing column 'cluster'")
    if not layout["x"]:
        raise SchemaError("missing control columns 'x_*'")
    for block in ("a", "z"):
        ks = sorted(layout[block])
        if not ks or ks != list(range(1, len(ks) + 1)):
            raise SchemaError(f"{block}_* columns must be {block}_1..{block}_K with no gaps")
    if len(layout["a"]) != len(layout["z"]):
        raise SchemaError(
            f"found {len(layout['a'])} treatment columns but "
            f"{len(layout['z'])} instrument columns"
        )
    return layout


def load_dataset_csv(path) -> Dataset:
    """Read and validate a dataset CSV; K is inferred from the header."""
    with open(path, newline="") as fh:
        lines = fh.readlines()
    header = None
    rows = []
    row_lines = []
    for lineno, raw in enumerate(lines, start=1):
        if raw.startswith("#") or not raw.strip():
            continue
        parsed = next(csv.reader([raw]))
        if header is None:
            header = [h.strip() for h in parsed]
        else:
            rows.append(parsed)
            row_lines.append(lineno)
    if header is None:
        raise SchemaError(f"{path}: no header row found")
    layout = _header_layout(header)
    k = len(layout["a"])
    n = len(rows)
    if n == 0:
        raise SchemaError(f"{path}: no data rows")
    y = np.empty(n)
    a = np.empty((n, k))
    z = np.empty((n, k))
    x = np.empty((n, len(layout["x"])))
    cluster = np.empty(n, dtype=object)
    group = np.empty(n, dtype=object) if layout["group"] is not None else None

    def fnum(row, pos, lineno):
        try:
            return float(row[pos])
        except ValueError:
            raise ParseError(
                f"could not parse {row[pos]!r} in column {header[pos]!r}", lineno
            ) from None

    for i, (row, lineno) in enumerate(zip(rows, row_lines)):
        if len(row) != len(header):
            raise SchemaError(
                f"line {lineno}: row has {len(row)} fields, header has {len(header)}"
            )
        y[i] = fnum(row, layout["y"], lineno)
        for j in range(k):
            a[i, j] = fnum(row, layout["a"][j + 1], lineno)
            z[i, j] = fnum(row, layout["z"][j + 1], lineno)
        for j, pos in enumerate(layout["x"]):
            x[i, j] = fnum(row, pos, lineno)
        cluster[i] = row[layout["cluster"]]
        if group is not None:
            group[i] = row[layout["group"]]
    return Dataset(y=y, a=a, z=z, x=x, cluster=cluster, group_label=group)


# ---------------------------------------------------------------------------
# Population CSV
# ---------------------------------------------------------------------------


def write_population_csv(path, pop, command: str = "write", seed=None):
    """Schema: merit, prefs (program ids joined by '|'), po_0..po_K, label_*."""
    k = pop.n_programs
    label_names = sorted(pop.labels)
    header = (
        ["merit", "prefs"]
        + [f"po_{j}" for j in range(k + 1)]
        + [f"label_{name}" for name in label_names]
    )
    with open(path, "w", newline="") as fh:
        fh.write(provenance_line(command, seed) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(pop.n):
            row = [str(int(pop.merit[i])), "|".join(str(p) for p in pop.prefs[i])]
            row += [fmt_float(v) for v in pop.po[i]]
            row += [str(pop.labels[name][i]) for name in label_names]
            writer.writerow(row)


def load_population_csv(path):
    from .mechanism import Population

    with open(path, newline="") as fh:
        lines = [ln for ln in fh.readlines() if not ln.startswith("#") and ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty population file")
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    if header[:2] != ["merit", "prefs"]:
        raise SchemaError("population CSV must start with merit,prefs columns")
    po_cols = [h for h in header if h.startswith("po_")]
    if [f"po_{j}" for j in range(len(po_cols))] != po_cols:
        raise SchemaError("po_* columns must be po_0..po_K in order")
    label_names = [h[6:] for h in header if h.startswith("label_")]
    merit, prefs, po = [], [], []
    labels: dict = {name: [] for name in label_names}
    for lineno, row in enumerate(reader, start=3):
        if len(row) != len(header):
            raise SchemaError(f"line {lineno}: wrong field count")
        try:
            merit.append(int(row[0]))
            prefs.append(
                tuple(int(p) for p in row[1].split("|")) if row[1] else ()
            )
            po.append([float(v) for v in row[2 : 2 + len(po_cols)]])
        except ValueError:
            raise ParseError("bad population value", lineno) from None
        for j, name in enumerate(label_names):
            labels[name].append(row[2 + len(po_cols) + j])
    return Population(
        merit=np.asarray(merit, dtype=np.int64),
        prefs=prefs,
        po=np.asarray(po),
        labels={name: np.asarray(vals) for name, vals in labels.items()},
    )


# ---------------------------------------------------------------------------
# Covariates CSV (for balance checks; rows aligned with the dataset)
# ---------------------------------------------------------------------------


def write_covariates_csv(path, covariates: dict, command: str = "write", seed=None):
    names = list(covariates)
    n = len(next(iter(covariates.values())))
    with open(path, "w", newline="") as fh:
        fh.write(provenance_line(command, seed) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for i in range(n):
            writer.writerow([fmt_float(covariates[name][i]) for name in names])


def load_covariates_csv(path) -> tuple[np.ndarray, tuple]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh.readlines() if not ln.startswith("#") and ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty covariates file")
    reader = csv.reader(lines)
    names = tuple(h.strip() for h in next(reader))
    rows = []
    for lineno, row in enumerate(reader, start=2):
        try:
            rows.append([float(v) for v in row])
        except ValueError:
            raise ParseError("non-numeric covariate value", lineno) from None
    return np.asarray(rows), names


# ---------------------------------------------------------------------------
# Estimates CSV + aligned table
# ---------------------------------------------------------------------------


def write_estimates_csv(
    path,
    est: EstimateSet,
    command: str = "estimate",
    seed: int | None = None,
    bootstrap: dict | None = None,
):
    """One row per treatment; optional bootstrap columns are appended."""
    header = [
        "treatment", "beta", "rf", "wald", "cascade_T", "cascade_delta",
        "se_beta", "se_wald", "se_delta",
    ]
    boot_cols = []
    if bootstrap:
        for stat, res in bootstrap.items():
            boot_cols += [f"boot_se_{stat}", f"boot_ci_lo_{stat}", f"boot_ci_hi_{stat}"]
    with open(path, "w", newline="") as fh:
        fh.write(provenance_line(command, seed) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header + boot_cols)
        k = est.beta.size
        for j in range(k):
            row = [
                str(j + 1),
                fmt_float(est.beta[j]), fmt_float(est.rf[j]), fmt_float(est.wald[j]),
                fmt_float(est.cascade_T[j]), fmt_float(est.cascade_delta[j]),
                fmt_float(est.se_beta[j]), fmt_float(est.se_wald[j]), fmt_float(est.se_delta[j]),
            ]
            if bootstrap:
                for stat, res in bootstrap.items():
                    row += [fmt_float(res.se[j]), fmt_float(res.ci_lower[j]), fmt_float(res.ci_upper[j])]
            writer.writerow(row)


def format_estimates_table(est: EstimateSet, f_stats=None) -> str:
    """Human-readable aligned summary."""
    cols = ["treatment", "beta", "(se)", "wald", "(se)", "delta", "(se)", "rf"]
    rows = []
    for j in range(est.beta.size):
        rows.append(
            [
                str(j + 1),
                f"{est.beta[j]:+.5f}", f"({est.se_beta[j]:.5f})",
                f"{est.wald[j]:+.5f}", f"({est.se_wald[j]:.5f})",
                f"{est.cascade_delta[j]:+.5f}", f"({est.se_delta[j]:.5f})",
                f"{est.rf[j]:+.5f}",
            ]
        )
    widths = [max(len(r[i]) for r in [cols] + rows) for i in range(len(cols))]
    out = _io.StringIO()
    out.write("  ".join(c.rjust(w) for c, w in zip(cols, widths)) + "\n")
    for r in rows:
        out.write("  ".join(c.rjust(w) for c, w in zip(r, widths)) + "\n")
    out.write(f"n_obs={est.n_obs}  n_clusters={est.n_clusters}\n")
    if f_stats is not None:
        out.write(
            "first-stage F (per instrument): "
            + " ".join(f"{v:.1f}" for v in f_stats)
            + "\n"
        )
    return out.getvalue()


# ---------------------------------------------------------------------------
# Matrices, traces, events, configs
# ---------------------------------------------------------------------------


def write_matrix_csv(path, mat: np.ndarray, command: str = "write", seed=None):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    with open(path, "w", newline="") as fh:
        fh.write(provenance_line(command, seed) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        for row in mat:
            writer.writerow([fmt_float(v) for v in row])


def load_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh.readlines() if not ln.startswith("#") and ln.strip()]
    rows = []
    for lineno, row in enumerate(csv.reader(lines), start=1):
        try:
            rows.append([float(v) for v in row])
        except ValueError:
            raise ParseError("non-numeric matrix entry", lineno) from None
    if not rows:
        raise SchemaError(f"{path}: empty matrix file")
    return np.asarray(rows)


def write_trace_csv(path, rounds: list[np.ndarray], command: str = "cascade", seed=None):
    k = rounds[0].size
    with open(path, "w", newline="") as fh:
        fh.write(provenance_line(command, seed) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round"] + [f"contribution_{j + 1}" for j in range(k)])
        for n, term in enumerate(rounds):
            writer.writerow([str(n)] + [fmt_float(v) for v in term])


def write_events_jsonl(path, events: list[dict]):
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")


def load_run_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON config: {exc}") from None
    if not isinstance(cfg, dict):
        raise SchemaError("run config must be a JSON object")
    return cfg


def build_scenario(cfg: dict, default_seed: int):
    """Population + capacities from a run config (see docs/config.md)."""
    from .synth import SynthConfig, generate_population, scenario_three_program

    if "synth" not in cfg or "capacities" not in cfg:
        raise SchemaError("run config needs 'synth' and 'capacities' entries")
    synth_kwargs = dict(cfg["synth"])
    synth_kwargs.setdefault("seed", default_seed)
    for tuple_key in (
        "merit_weights", "selectivity", "effects", "het_loadings",
        "label_effect_shift", "label_taste_shift", "complier_targets",
        "scenario_effects",
    ):
        if synth_kwargs.get(tuple_key) is not None:
            synth_kwargs[tuple_key] = tuple(synth_kwargs[tuple_key])
    try:
        synth_cfg = SynthConfig(**synth_kwargs)
    except TypeError as exc:
        raise SchemaError(f"bad synth config: {exc}") from None
    if cfg.get("scenario") == "three_program":
        scenario = scenario_three_program(synth_cfg)
        pop = scenario.population
        capacities = tuple(cfg["capacities"]) if cfg.get("capacities") != "auto" else scenario.capacities
    else:
        scenario = None
        pop = generate_population(synth_cfg)
        capacities = tuple(cfg["capacities"])
    return pop, capacities, scenario

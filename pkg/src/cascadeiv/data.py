"""Applicant-level rectangular data consumed by all estimators."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError

__all__ = ["Dataset"]


@dataclass(frozen=True)
class Dataset:
    """Outcome, treatments, instruments, controls, and cluster ids.

    Attributes
    ----------
    y : (N,) outcome vector.
    a : (N, K) treatment indicator matrix. Entries must be 0/1 unless
        ``binary_treatments`` is False (continuous allocations, e.g. goods
        bought in a market) or the data have been partialled.
    z : (N, K) instrument matrix. The system is just identified: one
        instrument per treatment. Overidentified inputs are rejected.
    x : (N, p) control matrix containing exactly one (nonzero) constant
        column.
    cluster : (N,) cluster identifiers; every id must be nonempty.
    group_label : optional (N,) categorical labels (e.g. gender).
    binary_treatments : enforce the 0/1 invariant on ``a``.
    partialled : True when y/a/z are residuals from projecting on controls;
        ``x`` is then the constant column only and the 0/1 check is skipped.
    n_absorbed : number of control columns absorbed by partialling (counts
        the original controls for degrees-of-freedom corrections).
    """

    y: np.ndarray
    a: np.ndarray
    z: np.ndarray
    x: np.ndarray
    cluster: np.ndarray
    group_label: np.ndarray | None = None
    binary_treatments: bool = True
    partialled: bool = False
    n_absorbed: int = 0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        cluster = np.asarray(self.cluster)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "cluster", cluster)
        if self.group_label is not None:
            object.__setattr__(self, "group_label", np.asarray(self.group_label))
        self._validate()

    def _validate(self):
        n = self.y.shape[0]
        if self.y.ndim != 1:
            raise DataError("y must be one-dimensional")
        for name, block in (("a", self.a), ("z", self.z), ("x", self.x)):
            if block.ndim != 2:
                raise DataError(f"{name} must be two-dimensional")
            if block.shape[0] != n:
                raise DataError(
                    f"{name} has {block.shape[0]} rows; expected {n} to match y"
                )
        if self.cluster.shape != (n,):
            raise DataError("cluster must be a length-N vector")
        if self.group_label is not None and self.group_label.shape != (n,):
            raise DataError("group_label must be a length-N vector")
        if self.a.shape[1] != self.z.shape[1]:
            raise DataError(
                f"just-identified systems only: {self.a.shape[1]} treatments "
                f"but {self.z.shape[1]} instruments"
            )
        if not np.all(np.isfinite(self.a)) or not np.all(np.isfinite(self.z)):
            raise DataError("a and z must be finite")
        if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.x)):
            raise DataError("y and x must be finite")
        if self.binary_treatments and not self.partialled:
            vals = np.unique(self.a)
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise DataError("treatment indicators must be 0/1")
        # exactly one nonzero constant column
        spans = np.ptp(self.x, axis=0)
        const_cols = np.flatnonzero((spans == 0) & (self.x[0] != 0))
        if const_cols.size != 1:
            raise DataError(
                f"x must contain exactly one nonzero constant column; "
                f"found {const_cols.size}"
            )
        if self.cluster.dtype.kind in ("U", "S", "O"):
            bad = np.array([c is None or str(c) == "" for c in self.cluster])
            if bad.size and bad.any():
                raise DataError("every cluster id must be nonempty")

    # -- sizes ------------------------------------------------------------

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def n_treatments(self) -> int:
        return self.a.shape[1]

    @property
    def n_controls(self) -> int:
        """Control columns counted for degrees of freedom (absorbed or live)."""
        return self.n_absorbed if self.partialled else self.x.shape[1]

    @property
    def n_clusters(self) -> int:
        return np.unique(self.cluster).size

    def cluster_codes(self) -> np.ndarray:
        """Integer codes 0..G-1 for the cluster ids."""
        _, codes = np.unique(self.cluster, return_inverse=True)
        return codes

    def with_outcome(self, y: np.ndarray) -> "Dataset":
        return replace(self, y=np.asarray(y, dtype=float))

    def take(self, rows: np.ndarray) -> "Dataset":
        """Row subset (bootstrap draws, group subsamples)."""
        return replace(
            self,
            y=self.y[rows],
            a=self.a[rows],
            z=self.z[rows],
            x=self.x[rows],
            cluster=self.cluster[rows],
            group_label=None if self.group_label is None else self.group_label[rows],
        )

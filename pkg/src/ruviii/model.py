"""Data containers: assay matrix, replicate mapping, negative-control mask.

All containers are frozen dataclasses holding read-only numpy arrays, so
they can be shared between threads without copying.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

__all__ = [
    "AssayMatrix",
    "MappingMatrix",
    "ControlMask",
    "Dataset",
    "build_mapping",
    "validate_dataset",
    "split_columns",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _duplicates(ids):
    seen, dup = set(), []
    for x in ids:
        if x in seen and x not in dup:
            dup.append(x)
        seen.add(x)
    return dup


@dataclass(frozen=True)
class AssayMatrix:
    """m x n data matrix (rows are assays, columns are variables)."""

    values: np.ndarray
    assay_ids: tuple = None
    variable_ids: tuple = None

    def __post_init__(self):
        values = _frozen(self.values)
        if values.ndim != 2:
            raise ValidationError(f"values must be 2-D, got shape {values.shape}")
        m, n = values.shape
        assay_ids = self.assay_ids
        variable_ids = self.variable_ids
        if assay_ids is None:
            assay_ids = [f"assay{i}" for i in range(m)]
        if variable_ids is None:
            variable_ids = [f"var{j}" for j in range(n)]
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "assay_ids", tuple(str(a) for a in assay_ids))
        object.__setattr__(self, "variable_ids", tuple(str(v) for v in variable_ids))
        problems = self.problems()
        if problems:
            raise ValidationError(problems)

    @property
    def shape(self):
        return self.values.shape

    def problems(self):
        out = []
        m, n = self.values.shape
        if m < 2:
            out.append(f"need at least 2 assays, got {m}")
        if n < 1:
            out.append("need at least 1 variable")
        bad = np.argwhere(~np.isfinite(self.values))
        if len(bad):
            i, j = bad[0]
            out.append(
                f"non-finite value at row {i} ({self.assay_ids[i] if i < len(self.assay_ids) else i}), "
                f"column {j}; {len(bad)} non-finite entries in total"
            )
        if len(self.assay_ids) != m:
            out.append(f"{len(self.assay_ids)} assay ids for {m} rows")
        if len(self.variable_ids) != n:
            out.append(f"{len(self.variable_ids)} variable ids for {n} columns")
        for kind, ids in (("assay", self.assay_ids), ("variable", self.variable_ids)):
            dup = _duplicates(ids)
            if dup:
                out.append(f"duplicate {kind} ids: {', '.join(dup[:10])}")
        return out


@dataclass(frozen=True)
class MappingMatrix:
    """Assay-to-sample mapping, stored as one sample index per assay.

    The dense m x s indicator is never needed by the algorithms; it is
    available through :meth:`indicator` for checks and oracles.
    """

    assay_to_sample: np.ndarray
    sample_ids: tuple = None
    assay_ids: tuple = None
    replicate_sets: tuple = field(init=False, repr=False)

    def __post_init__(self):
        a2s = _frozen(self.assay_to_sample, dtype=np.int64).ravel()
        object.__setattr__(self, "assay_to_sample", a2s)
        sample_ids = self.sample_ids
        if sample_ids is None:
            s = int(a2s.max()) + 1 if a2s.size else 0
            sample_ids = [f"sample{h}" for h in range(s)]
        object.__setattr__(self, "sample_ids", tuple(str(x) for x in sample_ids))
        if self.assay_ids is not None:
            object.__setattr__(self, "assay_ids", tuple(str(x) for x in self.assay_ids))
        problems = self.problems()
        if problems:
            raise ValidationError(problems)
        order = np.argsort(a2s, kind="stable")
        bounds = np.searchsorted(a2s[order], np.arange(self.s + 1))
        sets = tuple(_frozen(order[bounds[h]:bounds[h + 1]], dtype=np.int64) for h in range(self.s))
        object.__setattr__(self, "replicate_sets", sets)

    def problems(self):
        out = []
        a2s = self.assay_to_sample
        s = len(self.sample_ids)
        if a2s.size == 0:
            return ["mapping is empty"]
        if a2s.min() < 0 or a2s.max() >= s:
            bad = np.flatnonzero((a2s < 0) | (a2s >= s))
            out.append(f"assay rows {bad[:10].tolist()} map to sample indices outside [0, {s})")
            return out
        counts = np.bincount(a2s, minlength=s)
        empty = np.flatnonzero(counts == 0)
        if len(empty):
            names = [self.sample_ids[h] for h in empty[:10]]
            out.append(f"samples never assayed: {', '.join(names)}")
        dup = _duplicates(self.sample_ids)
        if dup:
            out.append(f"duplicate sample ids: {', '.join(dup[:10])}")
        if self.assay_ids is not None:
            if len(self.assay_ids) != a2s.size:
                out.append(f"{len(self.assay_ids)} assay ids for {a2s.size} mapped assays")
            dup = _duplicates(self.assay_ids)
            if dup:
                out.append(f"duplicate assay ids: {', '.join(dup[:10])}")
        return out

    @property
    def m(self):
        return int(self.assay_to_sample.size)

    @property
    def s(self):
        return len(self.sample_ids)

    @property
    def sizes(self):
        """Replicate counts m_h, one per sample."""
        return np.bincount(self.assay_to_sample, minlength=self.s)

    def indicator(self):
        """Dense m x s 0/1 matrix."""
        M = np.zeros((self.m, self.s))
        M[np.arange(self.m), self.assay_to_sample] = 1.0
        return M

    def pairs(self):
        ids = self.assay_ids or tuple(f"assay{i}" for i in range(self.m))
        return [(ids[i], self.sample_ids[h]) for i, h in enumerate(self.assay_to_sample)]

    @classmethod
    def identity(cls, m, assay_ids=None):
        """Every assay is its own sample (no replication)."""
        ids = assay_ids if assay_ids is not None else [f"assay{i}" for i in range(m)]
        return cls(np.arange(m), sample_ids=ids, assay_ids=ids)


def build_mapping(pairs: Iterable[tuple]) -> MappingMatrix:
    """Build a mapping from ``(assay_id, sample_id)`` pairs.

    Samples are numbered in order of first appearance, so the same input
    always yields the same mapping.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("mapping input is empty")
    assay_ids = [str(a) for a, _ in pairs]
    dup = _duplicates(assay_ids)
    if dup:
        raise ValidationError(f"duplicate assay ids: {', '.join(dup[:10])}")
    index = {}
    a2s = []
    for _, sample in pairs:
        a2s.append(index.setdefault(str(sample), len(index)))
    return MappingMatrix(np.array(a2s), sample_ids=list(index), assay_ids=assay_ids)


@dataclass(frozen=True)
class ControlMask:
    """Sorted column indices of the negative-control variables."""

    control_indices: np.ndarray
    n: int = None

    def __post_init__(self):
        idx = _frozen(self.control_indices, dtype=np.int64).ravel()
        object.__setattr__(self, "control_indices", idx)
        problems = self.problems(self.n)
        if problems:
            raise ValidationError(problems)

    def problems(self, n=None):
        idx = self.control_indices
        out = []
        if idx.size == 0:
            out.append("at least one negative control is required")
            return out
        if np.any(np.diff(idx) <= 0):
            out.append("control indices must be strictly increasing (sorted, no duplicates)")
        if idx[0] < 0:
            out.append(f"negative control index {int(idx[0])}")
        if n is not None and idx[-1] >= n:
            bad = idx[idx >= n]
            out.append(f"control indices {bad[:10].tolist()} out of range for {n} columns")
        return out

    @property
    def n_c(self):
        return int(self.control_indices.size)

    @classmethod
    def from_indices(cls, indices: Sequence[int], n=None):
        return cls(np.unique(np.asarray(indices, dtype=np.int64)), n=n)

    @classmethod
    def from_ids(cls, variable_ids: Sequence[str], control_ids: Iterable[str]):
        lookup = {v: j for j, v in enumerate(variable_ids)}
        control_ids = [str(c) for c in control_ids]
        unknown = [c for c in control_ids if c not in lookup]
        if unknown:
            raise ValidationError(f"unknown control variable ids: {', '.join(unknown[:20])}")
        return cls.from_indices([lookup[c] for c in control_ids], n=len(variable_ids))

    @classmethod
    def leading(cls, n_c, n=None):
        return cls(np.arange(n_c), n=n)

    def complement(self, n):
        keep = np.ones(n, dtype=bool)
        keep[self.control_indices] = False
        return np.flatnonzero(keep)


@dataclass(frozen=True)
class Dataset:
    matrix: AssayMatrix
    mapping: MappingMatrix
    controls: ControlMask

    def __post_init__(self):
        problems = _cross_problems(self)
        if problems:
            raise ValidationError(problems)

    @property
    def Y(self):
        return self.matrix.values

    @property
    def shape(self):
        return self.matrix.shape

    @classmethod
    def from_arrays(cls, Y, assay_to_sample, control_indices):
        """Convenience constructor from plain arrays with generated ids."""
        matrix = AssayMatrix(Y)
        mapping = MappingMatrix(np.asarray(assay_to_sample), assay_ids=matrix.assay_ids)
        return cls(matrix, mapping, ControlMask.from_indices(control_indices, n=matrix.shape[1]))


def _cross_problems(d):
    out = []
    m, n = d.matrix.shape
    if d.mapping.m != m:
        out.append(f"mapping covers {d.mapping.m} assays but matrix has {m} rows")
    elif d.mapping.assay_ids is not None and d.mapping.assay_ids != d.matrix.assay_ids:
        out.append("mapping assay ids do not match matrix row ids")
    out.extend(d.controls.problems(n))
    return out


def validate_dataset(d: Dataset) -> None:
    """Re-check every invariant of ``d``; raise one error listing all problems."""
    problems = d.matrix.problems() + d.mapping.problems() + _cross_problems(d)
    if problems:
        raise ValidationError(problems)


def split_columns(Y, controls: ControlMask):
    """Return ``(Y_c, Y_d)``: control columns and the remaining columns."""
    Y = Y.values if isinstance(Y, AssayMatrix) else np.asarray(Y)
    idx = controls.control_indices
    n = Y.shape[1]
    if idx.size == n:
        return Y, Y[:, :0]
    if idx[-1] == idx.size - 1:
        # leading block: slicing gives views
        return Y[:, : idx.size], Y[:, idx.size:]
    return Y[:, idx], Y[:, controls.complement(n)]

"""Pseudo-replicates of pseudo-samples (PRPS).

When a study has no technical replicates, assays that share a biology
label and an unwanted-variation label (batch, plate, run period) are
averaged into pseudo-samples. Pseudo-samples with the same biology but
different unwanted labels form a pseudo-replicate set, and the stacked
matrix ``[A_a Y0; Y0]`` with mapping ``diag(M_pr, M0)`` is then fitted by
RUV-III as usual.

Only rows that belong to some replicate or pseudo-replicate set carry
replicate residuals, so :func:`fast_fit` eigendecomposes that block alone.
"""

from __future__ import annotations

import warnings
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .estimator import RCOND_MIN, Ruv3Fit, check_control_count, fit_with_eigen
from .model import AssayMatrix, ControlMask, Dataset, MappingMatrix
from .projections import EIGEN_RESIDUAL_TOL, SymmetricEigen, residual_gram, sym_eigen_desc

__all__ = [
    "PseudoSample",
    "PrpsPlan",
    "AveragingMatrix",
    "ExtendedDataset",
    "build_prps_plan",
    "plan_from_groups",
    "averaging_matrix",
    "extend_dataset",
    "fast_fit",
    "original_rows",
]

MIN_GROUP_SIZE = 3
B1_CAP = 32
B2_CAP = 4


class PrpsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PseudoSample:
    id: str
    members: tuple
    replicate_set: str


@dataclass(frozen=True)
class PrpsPlan:
    """Pseudo-sample groups and the pseudo-replicate set each belongs to.

    ``b1`` caps the members per pseudo-sample and ``b2`` caps how many
    pseudo-samples one original assay may feed.
    """

    groups: tuple
    min_group_size: int = MIN_GROUP_SIZE
    b1: int = B1_CAP
    b2: int = B2_CAP

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        problems = self.problems()
        if problems:
            raise ValidationError(problems)

    def problems(self):
        out = []
        if not self.groups:
            return ["plan has no pseudo-samples"]
        if self.min_group_size < 2:
            out.append("min_group_size must be at least 2")
        uses = {}
        sets = OrderedDict()
        ids = set()
        for g in self.groups:
            if g.id in ids:
                out.append(f"duplicate pseudo-sample id {g.id}")
            ids.add(g.id)
            if len(set(g.members)) != len(g.members):
                out.append(f"{g.id}: repeated member assay")
            if len(g.members) < self.min_group_size:
                out.append(f"{g.id}: {len(g.members)} members, minimum is {self.min_group_size}")
            if len(g.members) > self.b1:
                out.append(f"{g.id}: {len(g.members)} members exceeds b1={self.b1}")
            for i in g.members:
                uses[i] = uses.get(i, 0) + 1
            sets.setdefault(g.replicate_set, []).append(g.id)
        over = sorted(i for i, c in uses.items() if c > self.b2)
        if over:
            out.append(f"assays {over[:10]} feed more than b2={self.b2} pseudo-samples")
        for name, members in sets.items():
            if len(members) < 2:
                out.append(f"pseudo-replicate set {name} has a single pseudo-sample")
        return out

    @property
    def replicate_sets(self):
        sets = OrderedDict()
        for g in self.groups:
            sets.setdefault(g.replicate_set, []).append(g.id)
        return sets

    @property
    def m_pa(self):
        return len(self.groups)

    @property
    def s_pr(self):
        return len(self.replicate_sets)

    def to_text(self):
        """Tab-separated audit format, one pseudo-sample per line."""
        lines = [
            f"# min_group_size={self.min_group_size} b1={self.b1} b2={self.b2}",
            "pseudo_sample\treplicate_set\tmembers",
        ]
        for g in self.groups:
            lines.append(f"{g.id}\t{g.replicate_set}\t{','.join(str(i) for i in g.members)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        params = {}
        groups = []
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    params[key] = int(val)
                continue
            if line.startswith("pseudo_sample\t"):
                continue
            gid, rset, members = line.split("\t")
            groups.append(PseudoSample(gid, tuple(int(i) for i in members.split(",")), rset))
        return cls(tuple(groups), **params)


def _chunks(members, cap, min_size):
    """Split ``members`` into near-equal chunks with sizes in ``[min_size, cap]``.

    When no such split exists the cell is cut into full ``cap``-sized
    chunks and the short remainder is returned separately.
    """
    members = np.asarray(members)
    count = -(-len(members) // cap)
    if len(members) // count >= min_size:
        return [tuple(c.tolist()) for c in np.array_split(members, count)], ()
    full = (count - 1) * cap
    chunks = [tuple(c.tolist()) for c in np.split(members[:full], count - 1)]
    return chunks, tuple(members[full:].tolist())


def build_prps_plan(
    biology: Sequence,
    unwanted: Sequence,
    min_group_size: int = MIN_GROUP_SIZE,
    b1: int = B1_CAP,
    b2: int = B2_CAP,
) -> PrpsPlan:
    """Group assays into pseudo-samples by (biology, unwanted) label pairs.

    Cells with fewer than ``min_group_size`` assays are dropped with a
    warning; cells above ``b1`` are split into near-equal chunks. A biology
    label keeps its pseudo-samples only if they span at least two unwanted
    labels, otherwise no replication is possible and it is dropped too.
    Labels are processed in order of first appearance.
    """
    if len(biology) != len(unwanted):
        raise ValidationError(
            f"{len(biology)} biology labels but {len(unwanted)} unwanted labels"
        )
    if b1 < min_group_size:
        raise ValidationError(f"b1={b1} is below min_group_size={min_group_size}")
    cells = OrderedDict()
    for i, (b, u) in enumerate(zip(biology, unwanted)):
        if b is None or u is None or b == "" or u == "":
            continue
        cells.setdefault((str(b), str(u)), []).append(i)
    by_bio = OrderedDict()
    for (b, u), members in cells.items():
        if len(members) < min_group_size:
            warnings.warn(
                f"dropping cell biology={b} unwanted={u}: {len(members)} assays "
                f"< min_group_size={min_group_size}",
                PrpsWarning,
                stacklevel=2,
            )
            continue
        chunks, leftover = _chunks(members, b1, min_group_size)
        if leftover:
            warnings.warn(
                f"cell biology={b} unwanted={u}: assays {list(leftover)} left out, "
                f"too few for another pseudo-sample of {min_group_size} to {b1}",
                PrpsWarning,
                stacklevel=2,
            )
        for c, chunk in enumerate(chunks):
            suffix = f":{c}" if len(chunks) > 1 else ""
            by_bio.setdefault(b, []).append((u, PseudoSample(f"PS:{b}:{u}{suffix}", chunk, f"PR:{b}")))
    groups = []
    for b, items in by_bio.items():
        if len({u for u, _ in items}) < 2:
            warnings.warn(
                f"dropping biology {b}: pseudo-samples span fewer than 2 unwanted labels",
                PrpsWarning,
                stacklevel=2,
            )
            continue
        groups.extend(g for _, g in items)
    if not groups:
        raise ValidationError("empty PRPS plan: no biology label yields a pseudo-replicate set")
    return PrpsPlan(tuple(groups), min_group_size, b1, b2)


def plan_from_groups(groups, min_group_size=2, b1=B1_CAP, b2=B2_CAP) -> PrpsPlan:
    """Plan from explicit ``(id, members, replicate_set)`` triples."""
    return PrpsPlan(
        tuple(PseudoSample(str(i), tuple(int(x) for x in mem), str(rs)) for i, mem, rs in groups),
        min_group_size,
        b1,
        b2,
    )


@dataclass(frozen=True)
class AveragingMatrix:
    """Row-stochastic m_pa x m0 averaging operator.

    Stored as a 0/1 indicator plus per-row member counts, so each row sums
    to ``n_g / n_g = 1`` exactly and averages are computed as sum / count.
    """

    indicator: sp.csr_matrix
    counts: np.ndarray

    @property
    def shape(self):
        return self.indicator.shape

    @property
    def matrix(self):
        return sp.csr_matrix(sp.diags(1.0 / self.counts) @ self.indicator)

    def toarray(self):
        return self.matrix.toarray()

    def row_sums(self):
        return np.asarray(self.indicator.sum(axis=1)).ravel() / self.counts

    @property
    def b1(self):
        return int(self.counts.max())

    @property
    def b2(self):
        return int(np.asarray(self.indicator.sum(axis=0)).max())

    def norm_bound(self):
        """Upper bound ``sqrt(b1 * b2) / 2`` on the spectral norm."""
        return float(np.sqrt(self.b1 * self.b2) / 2)

    def apply(self, Y):
        return np.asarray(self.indicator @ np.asarray(Y, dtype=float)) / self.counts[:, None]


def averaging_matrix(plan: PrpsPlan, m0: int) -> AveragingMatrix:
    rows, cols = [], []
    for g, ps in enumerate(plan.groups):
        bad = [i for i in ps.members if not 0 <= i < m0]
        if bad:
            raise ValidationError(f"{ps.id}: member indices {bad} out of range for {m0} assays")
        rows.extend([g] * len(ps.members))
        cols.extend(ps.members)
    ind = sp.csr_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(plan.m_pa, m0)
    )
    counts = np.array([len(ps.members) for ps in plan.groups], dtype=float)
    return AveragingMatrix(ind, counts)


@dataclass(frozen=True)
class ExtendedDataset:
    """Original data with pseudo-assay rows stacked on top.

    ``replicated_rows`` indexes the rows that sit in a set of size >= 2
    (all pseudo rows plus any real replicates); ``reduced_mapping`` is the
    mapping restricted to them.
    """

    dataset: Dataset
    m0: int
    averaging: AveragingMatrix
    plan: PrpsPlan
    replicated_rows: np.ndarray
    reduced_mapping: MappingMatrix

    @property
    def m_pa(self):
        return self.plan.m_pa

    @property
    def provenance(self):
        return tuple(g.members for g in self.plan.groups)

    @property
    def m_r(self):
        return int(self.replicated_rows.size)

    @property
    def s_r(self):
        return self.reduced_mapping.s


def extend_dataset(d0: Dataset, plan: PrpsPlan) -> ExtendedDataset:
    """Stack pseudo-assays above ``d0`` and extend the mapping block-diagonally."""
    m0 = d0.shape[0]
    A = averaging_matrix(plan, m0)
    Y = np.vstack([A.apply(d0.Y), d0.Y])
    pseudo_ids = [g.id for g in plan.groups]
    clash = set(pseudo_ids) & set(d0.matrix.assay_ids)
    if clash:
        raise ValidationError(f"pseudo-sample ids collide with assay ids: {sorted(clash)[:5]}")
    set_names = list(plan.replicate_sets)
    set_index = {name: h for h, name in enumerate(set_names)}
    pr_cols = np.array([set_index[g.replicate_set] for g in plan.groups])
    a2s = np.concatenate([pr_cols, d0.mapping.assay_to_sample + len(set_names)])
    sample_ids = set_names + list(d0.mapping.sample_ids)
    dup = set(set_names) & set(d0.mapping.sample_ids)
    if dup:
        raise ValidationError(f"pseudo-replicate set ids collide with sample ids: {sorted(dup)[:5]}")
    assay_ids = pseudo_ids + list(d0.matrix.assay_ids)
    matrix = AssayMatrix(Y, assay_ids, d0.matrix.variable_ids)
    mapping = MappingMatrix(a2s, sample_ids=sample_ids, assay_ids=assay_ids)
    ext = Dataset(matrix, mapping, ControlMask(d0.controls.control_indices, n=Y.shape[1]))

    sizes = mapping.sizes
    rows = np.flatnonzero(sizes[a2s] >= 2)
    kept = np.flatnonzero(sizes >= 2)
    relabel = np.full(len(sizes), -1)
    relabel[kept] = np.arange(kept.size)
    reduced = MappingMatrix(
        relabel[a2s[rows]],
        sample_ids=[sample_ids[h] for h in kept],
        assay_ids=[assay_ids[i] for i in rows],
    )
    return ExtendedDataset(ext, m0, A, plan, rows, reduced)


def fast_fit(
    e: ExtendedDataset,
    k: int,
    *,
    zero_threshold=None,
    residual_tol=EIGEN_RESIDUAL_TOL,
    rcond_min=RCOND_MIN,
) -> Ruv3Fit:
    """RUV-III on the extended data, eigendecomposing only the replicated rows.

    The m_r x m_r Gram of the replicated block has the same non-zero
    spectrum as the full Gram, and its eigenvectors padded with zeros are
    the full eigenvectors; the regression and adjustment then use all rows.
    """
    K = e.m_r - e.s_r
    if not 1 <= k <= K:
        raise ValidationError(f"k={k} outside 1..{K} (m_r - s_r)")
    check_control_count(k, e.dataset.controls)
    Y = e.dataset.Y
    Yr = Y[e.replicated_rows]
    S = residual_gram(Yr, e.reduced_mapping)
    er = sym_eigen_desc(S, k, zero_threshold=zero_threshold, residual_tol=residual_tol)
    if zero_threshold is None:
        # match the threshold the full m x m path would use
        m = Y.shape[0]
        zero_threshold = m * np.finfo(float).eps * float(np.max(np.abs(er.values)))
    U = np.zeros((Y.shape[0], k))
    U[e.replicated_rows] = er.vectors
    eigen = SymmetricEigen(U, er.values, float(zero_threshold), K)
    return fit_with_eigen(Y, e.dataset.controls, eigen, k, rcond_min)


def original_rows(e: ExtendedDataset, matrix):
    """Drop the pseudo-assay rows from an extended-row matrix."""
    return np.asarray(matrix)[e.m_pa:]

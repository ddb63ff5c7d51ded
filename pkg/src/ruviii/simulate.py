"""Seeded simulation of RUV-III accuracy as the number of assays grows.

Every dataset has ``n = m**2`` variables and ``Y = W alpha + eps`` with
``k0`` unwanted factors. The figure of merit is the relative spectral
error ``q = ||removed - truth|| / ||truth||``, averaged over replicate
datasets at each ``m``; the decay rate is read off the last two points of
the ``log2 q`` versus ``log2 m`` curve.

The random stream of a dataset depends only on ``(seed, m, replicate)``,
so scenarios that differ only in how they are fitted (number of controls,
choice of k) see identical data, and grid cells can run in any order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import NumericalError, RuvError, ValidationError
from .estimator import fit_with_eigen, replicate_eigen
from .model import AssayMatrix, ControlMask, Dataset, MappingMatrix
from .prps import extend_dataset, plan_from_groups
from .projections import SymmetricEigen, center_columns, residual_gram, spectral_norm, sym_eigen_desc

__all__ = [
    "NC_RULES",
    "TrendSpec",
    "SimScenario",
    "SimResult",
    "n_controls",
    "pareto_std",
    "PARETO_MEAN",
    "PARETO_SD",
    "gen_dataset",
    "gen_prps_scenario",
    "rel_error_q",
    "run_grid",
    "run_grid_variants",
    "decay_slope",
]

log = logging.getLogger(__name__)

NC_RULES = ("m2/8", "m1.5/2", "2m")
REPLICATIONS = ("samples_increasing", "replicates_increasing")
DISTRIBUTIONS = ("normal", "pareto")

PARETO_SHAPE = 5.0
PARETO_MEAN = PARETO_SHAPE / (PARETO_SHAPE - 1)
PARETO_SD = math.sqrt(PARETO_SHAPE / ((PARETO_SHAPE - 1) ** 2 * (PARETO_SHAPE - 2)))


def n_controls(m, rule):
    if rule == "m2/8":
        return m * m // 8
    if rule == "m1.5/2":
        return int(round(m ** 1.5 / 2))
    if rule == "2m":
        return 2 * m
    raise ValidationError(f"unknown nc_rule {rule!r}; expected one of {NC_RULES}")


def pareto_std(rng: np.random.Generator, size=None):
    """Pareto(scale 1, shape 5) draws standardised to mean 0, variance 1."""
    u = rng.random(size)
    x = (1.0 - u) ** (-1.0 / PARETO_SHAPE)
    return (x - PARETO_MEAN) / PARETO_SD


@dataclass(frozen=True)
class TrendSpec:
    """Piecewise-linear run-order drift added to the mean of W.

    Run order ``0..m0-1`` is cut into ``segments`` equal pieces. For each
    factor and subtype every piece is an independent linear ramp across
    ``[-U, U]`` with ``U ~ Uniform(0, 1)`` and a random direction.
    """

    segments: int = 4

    def values(self, rng, m0, k0, subtype):
        n_sub = int(subtype.max()) + 1
        bounds = np.linspace(0, m0, self.segments + 1).round().astype(int)
        i = np.arange(m0)
        seg = np.clip(np.searchsorted(bounds, i, side="right") - 1, 0, self.segments - 1)
        length = bounds[seg + 1] - bounds[seg]
        frac = (i - bounds[seg]) / np.maximum(length - 1, 1)
        U = rng.random((k0, n_sub, self.segments))
        direction = rng.choice([-1.0, 1.0], size=(k0, n_sub, self.segments))
        # t[i, j] for assay i of subtype g in segment p
        amp = U[:, subtype, seg] * direction[:, subtype, seg]
        return (amp * (2.0 * frac - 1.0)).T


@dataclass(frozen=True)
class SimScenario:
    """One cell of the simulation design.

    ``k_choice`` is an int or ``"max"`` (``m - s``). When ``trend`` is set
    the scenario is the PRPS one: ``m`` original unreplicated assays in
    ``m/4`` interleaved subtypes, two pseudo-assays per subtype.
    """

    m: int = 16
    nc_rule: str = "m2/8"
    replication: str = "samples_increasing"
    distribution: str = "normal"
    k0: int = 3
    k_choice: int | str = 3
    mu: bool = False
    signal_dim: int = 0
    trend: TrendSpec | None = None
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.m < 4 or self.m % 4:
            problems.append(f"m={self.m} must be a positive multiple of 4")
        if self.nc_rule not in NC_RULES:
            problems.append(f"nc_rule {self.nc_rule!r} not in {NC_RULES}")
        if self.replication not in REPLICATIONS:
            problems.append(f"replication {self.replication!r} not in {REPLICATIONS}")
        if self.distribution not in DISTRIBUTIONS:
            problems.append(f"distribution {self.distribution!r} not in {DISTRIBUTIONS}")
        if self.k0 < 1:
            problems.append("k0 must be at least 1")
        if not (self.k_choice == "max" or (isinstance(self.k_choice, int) and self.k_choice >= 1)):
            problems.append(f"k_choice must be a positive int or 'max', got {self.k_choice!r}")
        if not problems and self.nc < self.k0:
            problems.append(f"n_c={self.nc} < k0={self.k0}")
        if not problems and self.resolve_k() > self.k_bound:
            problems.append(f"k={self.resolve_k()} exceeds m - s = {self.k_bound}")
        if problems:
            raise ValidationError(problems)

    @property
    def n(self):
        return self.m * self.m

    @property
    def nc(self):
        return n_controls(self.m, self.nc_rule)

    @property
    def s(self):
        """Samples (or subtypes for the PRPS scenario)."""
        if self.trend is not None or self.replication == "samples_increasing":
            return self.m // 4
        return 4

    @property
    def k_bound(self):
        # PRPS: m0 + 2s rows, m0 + s columns in the extended mapping
        return self.s if self.trend is not None else self.m - self.s

    def resolve_k(self):
        return self.k_bound if self.k_choice == "max" else int(self.k_choice)

    def assay_to_sample(self):
        if self.replication == "samples_increasing":
            return np.repeat(np.arange(self.m // 4), 4)
        return np.repeat(np.arange(4), self.m // 4)

    def rng(self, replicate_index):
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.m, int(replicate_index)))
        return np.random.Generator(np.random.PCG64(ss))

    def draw(self, rng, shape):
        if self.distribution == "normal":
            return rng.standard_normal(shape)
        return pareto_std(rng, shape)


def _components(sc: SimScenario, rng, subtype=None):
    m, n, k0 = sc.m, sc.n, sc.k0
    W = sc.draw(rng, (m, k0))
    if sc.trend is not None:
        W = W + sc.trend.values(rng, m, k0, subtype)
    alpha = sc.draw(rng, (k0, n))
    eps = sc.draw(rng, (m, n))
    Y = W @ alpha
    Y += eps
    # the 1_m direction of W alpha is indistinguishable from the gene means
    truth = center_columns(W) @ alpha
    if sc.mu:
        Y += rng.standard_normal((1, n))
    return Y, truth, W, alpha


def signal_term(sc: SimScenario, a2s, rng, nc):
    """``M X beta`` with ``beta`` zero on the control columns."""
    s = int(a2s.max()) + 1
    X = rng.standard_normal((s, sc.signal_dim))
    beta = rng.standard_normal((sc.signal_dim, sc.n))
    beta[:, :nc] = 0.0
    return (X @ beta)[a2s]


def gen_dataset(sc: SimScenario, replicate_index: int = 0):
    """Draw one replicated dataset; returns ``(Dataset, truth)``.

    ``truth`` is the column-centred ``W alpha``.
    """
    if sc.trend is not None:
        raise ValidationError("scenario has a trend; use gen_prps_scenario")
    rng = sc.rng(replicate_index)
    Y, truth, _, _ = _components(sc, rng)
    a2s = sc.assay_to_sample()
    if sc.signal_dim:
        Y += signal_term(sc, a2s, rng, sc.nc)
    return _wrap(Y, a2s, sc.nc), truth


def _wrap(Y, a2s, nc):
    m, n = Y.shape
    matrix = AssayMatrix(Y, [f"a{i}" for i in range(m)], _variable_ids(n))
    mapping = MappingMatrix(a2s, assay_ids=matrix.assay_ids)
    return Dataset(matrix, mapping, ControlMask(np.arange(nc), n=n))


_VAR_IDS = {}


def _variable_ids(n):
    if n not in _VAR_IDS:
        _VAR_IDS[n] = tuple(f"g{j}" for j in range(n))
    return _VAR_IDS[n]


def prps_plan_for(m0, s):
    """Per-subtype first-half / second-half pseudo-assays (subtype = i mod s)."""
    groups = []
    for g in range(s):
        members = np.arange(g, m0, s)
        half = len(members) // 2
        if half < 2:
            raise ValidationError(f"subtype {g} has {len(members)} assays; need at least 4")
        groups.append((f"PS{g}a", members[:half], f"PR{g}"))
        groups.append((f"PS{g}b", members[half:], f"PR{g}"))
    return plan_from_groups(groups, min_group_size=2)


def gen_prps_scenario(sc: SimScenario, replicate_index: int = 0):
    """Draw a PRPS dataset: ``(ExtendedDataset, truth over all m0 + 2s rows)``."""
    if sc.trend is None:
        raise ValidationError("PRPS scenario requires a trend specification")
    rng = sc.rng(replicate_index)
    m0, s = sc.m, sc.s
    subtype = np.arange(m0) % s
    Y0, _, W0, alpha = _components(sc, rng, subtype)
    if sc.signal_dim:
        Y0 += signal_term(sc, subtype, rng, sc.nc)
    d0 = _wrap(Y0, np.arange(m0), sc.nc)
    e = extend_dataset(d0, prps_plan_for(m0, s))
    W = np.vstack([e.averaging.apply(W0), W0])
    truth = center_columns(W) @ alpha
    return e, truth


def rel_error_q(removed, truth):
    """``||removed - truth|| / ||truth||`` in spectral norm."""
    removed = np.asarray(removed, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if removed.shape != truth.shape:
        raise ValidationError(f"shape mismatch {removed.shape} vs {truth.shape}")
    denom = spectral_norm(truth)
    if denom == 0.0:
        raise ValidationError("truth has zero norm")
    return spectral_norm(removed - truth) / denom


@dataclass
class SimResult:
    """q values per m, their means and standard errors, and the final slope."""

    m_values: list
    q: list
    failures: list = field(default_factory=list)

    @property
    def mean_q(self):
        return np.array([np.mean(v) if len(v) else np.nan for v in self.q])

    @property
    def se_q(self):
        return np.array([np.std(v, ddof=1) / np.sqrt(len(v)) if len(v) > 1 else np.nan for v in self.q])

    def points(self):
        return list(zip(self.m_values, self.mean_q, self.se_q))

    def slope(self):
        return decay_slope(self.points()[-2:])

    def q_rows(self):
        for m, qs in zip(self.m_values, self.q):
            for rep, v in enumerate(qs):
                yield m, rep, v


def _cell(template: SimScenario, variants, m, rep):
    """Evaluate all fit variants on one generated dataset."""
    sc = replace(template, m=m)
    if sc.trend is not None:
        e, truth = gen_prps_scenario(sc, rep)
        Y, mapping = e.dataset.Y, e.dataset.mapping
        rows, sub_mapping = e.replicated_rows, e.reduced_mapping
    else:
        d, truth = gen_dataset(sc, rep)
        Y, mapping = d.Y, d.mapping
        rows, sub_mapping = None, mapping
    ks = {name: replace(sc, nc_rule=nc, k_choice=kc).resolve_k() for name, (nc, kc) in variants.items()}
    kmax = max(ks.values())
    if rows is None:
        eigen = replicate_eigen(Y, mapping, kmax)
    else:
        er = sym_eigen_desc(residual_gram(Y[rows], sub_mapping), kmax)
        U = np.zeros((Y.shape[0], kmax))
        U[rows] = er.vectors
        thr = Y.shape[0] * np.finfo(float).eps * float(np.max(np.abs(er.values)))
        eigen = SymmetricEigen(U, er.values, thr, sub_mapping.m - sub_mapping.s)
    out = {}
    for name, (nc, _) in variants.items():
        controls = ControlMask(np.arange(n_controls(m, nc)), n=Y.shape[1])
        try:
            f = fit_with_eigen(Y, controls, eigen, ks[name])
            out[name] = rel_error_q(f.removed, truth)
        except NumericalError as exc:
            log.warning("m=%d rep=%d %s: %s", m, rep, name, exc)
            out[name] = exc
    return out


def run_grid_variants(
    template: SimScenario,
    variants: dict,
    m_values: Sequence[int] = (16, 32, 64, 128, 256),
    reps: int = 20,
    workers: int = 1,
):
    """Run several fit variants on shared data.

    ``variants`` maps a name to ``(nc_rule, k_choice)``. Each dataset is
    drawn once per ``(m, rep)`` and fitted under every variant.
    Returns ``{name: SimResult}``.
    """
    if reps < 2:
        raise ValidationError("reps must be at least 2 for a standard error")
    for nc, kc in variants.values():
        for m in m_values:
            replace(template, m=m, nc_rule=nc, k_choice=kc)
    cells = [(m, rep) for m in m_values for rep in range(reps)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda c: _cell(template, variants, *c), cells))
    else:
        results = [_cell(template, variants, *c) for c in cells]
    out = {}
    for name in variants:
        q = [[] for _ in m_values]
        failures = [0 for _ in m_values]
        for (m, _), res in zip(cells, results):
            i = list(m_values).index(m)
            v = res[name]
            if isinstance(v, RuvError):
                failures[i] += 1
            else:
                q[i].append(v)
        out[name] = SimResult(list(m_values), q, failures)
    return out


def run_grid(template: SimScenario, m_values=(16, 32, 64, 128, 256), reps: int = 20, workers: int = 1):
    """Mean q per m for a single scenario."""
    variants = {"run": (template.nc_rule, template.k_choice)}
    return run_grid_variants(template, variants, m_values, reps, workers)["run"]


def decay_slope(points):
    """Slope of ``log2 q`` against ``log2 m`` through the last two points.

    ``points`` are ``(m, mean_q, se_q)``; the standard error follows from
    the delta method, ``se(log2 q) = se_q / (q ln 2)``.
    """
    points = list(points)
    if len(points) < 2:
        raise ValidationError("need at least two points for a slope")
    (m1, q1, s1), (m2, q2, s2) = points[-2], points[-1]
    if q1 <= 0 or q2 <= 0:
        raise ValidationError("mean q must be positive for a log slope")
    dx = math.log2(m2) - math.log2(m1)
    slope = (math.log2(q2) - math.log2(q1)) / dx
    v1 = (s1 / (q1 * math.log(2))) ** 2 if np.isfinite(s1) else 0.0
    v2 = (s2 / (q2 * math.log(2))) ** 2 if np.isfinite(s2) else 0.0
    return slope, math.sqrt(v1 + v2) / abs(dx)

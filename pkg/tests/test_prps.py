import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import dense_projection, rel_diff
from ruviii import (
    Dataset,
    PrpsPlan,
    PrpsWarning,
    ValidationError,
    averaging_matrix,
    build_prps_plan,
    extend_dataset,
    fast_fit,
    fit,
    original_rows,
    plan_from_groups,
    residual_gram,
    spectral_norm,
)
from ruviii.estimator import replicate_eigen
from ruviii.prps import B2_CAP
from ruviii.simulate import prps_plan_for


def toy_plan():
    return build_prps_plan(list("bbbbaaaa"), [1, 1, 2, 2, 1, 1, 2, 2], min_group_size=2)


def random_extended(rng, m0=None, with_replicates=True):
    """Random dataset plus a random valid PRPS plan over it."""
    m0 = m0 or int(rng.integers(12, 65))
    if with_replicates and rng.random() < 0.5:
        s0 = int(rng.integers(m0 // 2, m0))
        a2s = np.concatenate([np.arange(s0), rng.integers(0, s0, m0 - s0)])
    else:
        a2s = np.arange(m0)
    n = int(rng.integers(m0, 2 * m0 + 10))
    Y = rng.standard_normal((m0, n)) + rng.standard_normal((m0, 3)) @ rng.standard_normal((3, n))
    d0 = Dataset.from_arrays(Y, a2s, np.arange(n // 2))
    n_bio = int(rng.integers(1, 4))
    bio = rng.integers(0, n_bio, m0)
    unw = rng.integers(0, 3, m0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PrpsWarning)
        plan = build_prps_plan(bio.tolist(), unw.tolist(), min_group_size=2, b1=int(rng.integers(2, 10)))
    return extend_dataset(d0, plan)


class TestBuildPlan:
    def test_toy_annotation(self):
        plan = toy_plan()
        assert plan.m_pa == 4 and plan.s_pr == 2
        assert all(len(v) == 2 for v in plan.replicate_sets.values())
        assert [g.members for g in plan.groups] == [(0, 1), (2, 3), (4, 5), (6, 7)]
        assert plan.groups[0].id == "PS:b:1" and plan.groups[0].replicate_set == "PR:b"

    def test_small_cell_warns_and_drops(self):
        bio = list("bbbbbbaaaaaa")
        unw = [1, 1, 1, 2, 2, 2, 1, 1, 1, 2, 2, 3]
        with pytest.warns(PrpsWarning, match="unwanted=3: 1 assays"):
            plan = build_prps_plan(bio, unw, min_group_size=2)
        assert plan.m_pa == 4
        assert all(11 not in g.members for g in plan.groups)

    def test_single_unwanted_label_is_empty(self):
        with pytest.warns(PrpsWarning), pytest.raises(ValidationError, match="empty PRPS plan"):
            build_prps_plan(["a"] * 6, ["u"] * 6)

    def test_biology_without_second_label_dropped(self):
        bio = list("aaaaaabbb")
        unw = [1, 1, 1, 2, 2, 2, 1, 1, 1]
        with pytest.warns(PrpsWarning, match="dropping biology b"):
            plan = build_prps_plan(bio, unw)
        assert plan.s_pr == 1

    def test_default_min_group_size_is_three(self):
        with pytest.warns(PrpsWarning):
            with pytest.raises(ValidationError):
                build_prps_plan(list("bbbb"), [1, 1, 2, 2])

    def test_large_cell_split_by_b1(self):
        bio = ["a"] * 20
        unw = [1] * 10 + [2] * 10
        plan = build_prps_plan(bio, unw, min_group_size=3, b1=4)
        assert max(len(g.members) for g in plan.groups) <= 4
        covered = sorted(i for g in plan.groups for i in g.members)
        assert covered == list(range(20))

    def test_split_remainder_below_minimum_left_out(self):
        bio = ["a"] * 7
        unw = [1] * 5 + [2] * 2
        with pytest.warns(PrpsWarning, match=r"assays \[4\] left out"):
            plan = build_prps_plan(bio, unw, min_group_size=2, b1=2)
        assert [g.members for g in plan.groups] == [(0, 1), (2, 3), (5, 6)]

    def test_b1_below_minimum(self):
        with pytest.raises(ValidationError, match="b1=2 is below"):
            build_prps_plan(["a"] * 6, [1, 1, 1, 2, 2, 2], min_group_size=3, b1=2)

    def test_missing_labels_skipped(self):
        plan = build_prps_plan(["a", "a", None, "a", "a"], [1, 1, 1, 2, 2], min_group_size=2)
        assert all(2 not in g.members for g in plan.groups)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            build_prps_plan(["a"], [1, 2])

    def test_simulation_halves(self):
        plan = prps_plan_for(16, 4)
        assert plan.m_pa == 8 and plan.s_pr == 4
        assert plan.groups[0].members == (0, 4) and plan.groups[1].members == (8, 12)

    def test_text_round_trip(self):
        plan = toy_plan()
        assert PrpsPlan.from_text(plan.to_text()) == plan

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=4, max_size=60),
        st.integers(2, 5),
        st.integers(2, 8),
    )
    def test_plans_respect_caps(self, labels, min_size, b1):
        bio = [b for b, _ in labels]
        unw = [u for _, u in labels]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PrpsWarning)
            try:
                plan = build_prps_plan(bio, unw, min_group_size=min_size, b1=b1)
            except ValidationError:
                return
        assert all(min_size <= len(g.members) <= b1 for g in plan.groups)
        uses = np.bincount([i for g in plan.groups for i in g.members])
        assert uses.max() <= B2_CAP
        assert all(len(v) >= 2 for v in plan.replicate_sets.values())
        assert PrpsPlan.from_text(plan.to_text()) == plan


class TestPlanValidation:
    def test_b2_cap(self):
        groups = [(f"g{i}", (0, 1), f"r{i // 2}") for i in range(6)]
        with pytest.raises(ValidationError, match="more than b2=4"):
            plan_from_groups(groups)

    def test_singleton_replicate_set(self):
        with pytest.raises(ValidationError, match="single pseudo-sample"):
            plan_from_groups([("g", (0, 1), "r")])

    def test_below_min(self):
        with pytest.raises(ValidationError, match="minimum is 3"):
            plan_from_groups([("g", (0, 1), "r"), ("h", (2, 3, 4), "r")], min_group_size=3)


class TestAveragingMatrix:
    def test_two_groups(self):
        plan = plan_from_groups([("g", (0, 1), "r"), ("h", (2, 3), "r")])
        A = averaging_matrix(plan, 4)
        assert A.toarray().tolist() == [[0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5]]

    def test_out_of_range_member(self):
        plan = plan_from_groups([("g", (0, 1), "r"), ("h", (2, 9), "r")])
        with pytest.raises(ValidationError, match="out of range"):
            averaging_matrix(plan, 4)

    def test_rows_sum_to_exactly_one(self):
        # sizes whose reciprocals do not sum back to 1 in floating point
        groups = [(f"g{n}", tuple(range(n)), f"r{n % 2}") for n in (6, 7, 13, 3, 10)]
        A = averaging_matrix(plan_from_groups(groups, b1=32, b2=8), 13)
        assert np.all(A.row_sums() == 1.0)

    def test_norm_bound_on_random_plans(self, rng):
        for _ in range(100):
            e = random_extended(rng)
            A = e.averaging
            assert np.all(A.row_sums() == 1.0)
            assert spectral_norm(A.toarray()) <= A.norm_bound() * (1 + 1e-12)

    def test_apply_equals_member_means(self, rng):
        Y = rng.standard_normal((6, 3))
        plan = plan_from_groups([("g", (0, 2, 4), "r"), ("h", (1, 5), "r")])
        A = averaging_matrix(plan, 6)
        out = A.apply(Y)
        assert np.array_equal(out[0], Y[[0, 2, 4]].sum(axis=0) / 3)
        assert np.array_equal(out[1], Y[[1, 5]].sum(axis=0) / 2)


class TestExtendDataset:
    def test_shapes_with_singletons(self, rng):
        d0 = Dataset.from_arrays(rng.standard_normal((4, 5)), np.arange(4), [0, 1])
        plan = plan_from_groups([("g", (0, 1), "r"), ("h", (2, 3), "r")])
        e = extend_dataset(d0, plan)
        assert e.dataset.shape == (6, 5)
        assert e.dataset.mapping.s == plan.s_pr + 4
        assert np.array_equal(e.dataset.Y[0], (d0.Y[0] + d0.Y[1]) / 2)
        assert np.array_equal(e.dataset.controls.control_indices, d0.controls.control_indices)
        assert e.m_r == 2 and e.s_r == 1
        assert e.provenance == ((0, 1), (2, 3))

    def test_block_diagonal_mapping(self, rng):
        e = random_extended(rng, 30)
        M = e.dataset.mapping.indicator()
        mp, sp_ = e.m_pa, e.plan.s_pr
        assert np.all(M[:mp, sp_:] == 0) and np.all(M[mp:, :sp_] == 0)

    def test_simulation_row_count(self):
        from ruviii import SimScenario, TrendSpec, gen_prps_scenario

        for m0 in (16, 32, 64):
            e, truth = gen_prps_scenario(SimScenario(m=m0, trend=TrendSpec()), 0)
            assert e.dataset.shape[0] == m0 + 2 * (m0 // 4)
            assert truth.shape == e.dataset.shape

    def test_id_collision(self, rng):
        d0 = Dataset.from_arrays(rng.standard_normal((4, 3)), np.arange(4), [0])
        plan = plan_from_groups([("assay0", (0, 1), "r"), ("h", (2, 3), "r")])
        with pytest.raises(ValidationError, match="collide"):
            extend_dataset(d0, plan)

    def test_original_rows(self, rng):
        e = random_extended(rng, 20)
        assert np.array_equal(original_rows(e, e.dataset.Y), e.dataset.Y[e.m_pa:])


class TestFastFit:
    def test_matches_full_fit(self, rng):
        for _ in range(30):
            e = random_extended(rng)
            K = e.m_r - e.s_r
            k = int(rng.integers(1, min(K, e.dataset.controls.n_c) + 1))
            a = fast_fit(e, k)
            b = fit(e.dataset, k)
            assert rel_diff(a.removed, b.removed) <= 1e-9

    def test_reduced_gram_identity(self, rng):
        # the full Gram is the reduced Gram padded with zeros
        for _ in range(10):
            e = random_extended(rng)
            S = residual_gram(e.dataset.Y, e.dataset.mapping)
            rows = e.replicated_rows
            Sr = residual_gram(e.dataset.Y[rows], e.reduced_mapping)
            padded = np.zeros_like(S)
            padded[np.ix_(rows, rows)] = Sr
            assert rel_diff(padded, S) <= 1e-9

    def test_singleton_rows_have_zero_residual(self, rng):
        e = random_extended(rng, 24, with_replicates=False)
        m = e.dataset.mapping
        P = dense_projection(m.indicator())
        R = (np.eye(m.m) - P) @ e.dataset.Y
        outside = np.setdiff1d(np.arange(m.m), e.replicated_rows)
        assert np.abs(R[outside]).max() <= 1e-12

    def test_everything_replicated(self, rng):
        Y = rng.standard_normal((8, 20))
        d0 = Dataset.from_arrays(Y, np.repeat(np.arange(4), 2), np.arange(10))
        plan = plan_from_groups([("g", (0, 2), "r"), ("h", (4, 6), "r")])
        e = extend_dataset(d0, plan)
        assert e.m_r == e.dataset.shape[0]
        assert rel_diff(fast_fit(e, 3).removed, fit(e.dataset, 3).removed) <= 1e-9

    def test_k_out_of_range(self, rng):
        e = random_extended(rng, 20, with_replicates=False)
        with pytest.raises(ValidationError, match="m_r - s_r"):
            fast_fit(e, e.m_r - e.s_r + 1)

    def test_eigenvectors_vanish_off_block(self, rng):
        e = random_extended(rng, 30)
        eig = replicate_eigen(e.dataset.Y, e.dataset.mapping, e.m_r - e.s_r)
        outside = np.setdiff1d(np.arange(e.dataset.shape[0]), e.replicated_rows)
        U = eig.vectors[:, : eig.rank]
        assert np.abs(U[outside]).max() <= 1e-8

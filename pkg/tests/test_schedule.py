from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from butterfly.errors import CapacityError, ScheduleError
from butterfly.schedule import (
    MAX_PARTICLES,
    KroneckerStage,
    Schedule,
    apply_stage,
    build_schedule,
    dense_product,
    dense_stage,
    product_row,
    stage_row,
    stage_table,
    support_matrix,
    verify_assumptions,
)

from conftest import grid_schedules


class TestConstruction:
    def test_radix_stage_shapes(self):
        s = build_schedule("radix", r=3, m=3)
        assert s.n_particles == 27
        assert [(st.outer, st.fan, st.inner) for st in s.stages] == [(9, 3, 1), (3, 3, 3), (1, 3, 9)]

    def test_mixed_stage_shapes(self):
        s = build_schedule("mixed", r=2, c=5)
        assert s.n_particles == 10
        np.testing.assert_array_equal(stage_table(s), [[2, 5, 1], [1, 2, 5]])

    def test_multinomial_is_one_full_stage(self):
        s = build_schedule("multinomial", n=6)
        assert s.n_stages == 1
        assert stage_row(s, 1, 4).entries == tuple((j, Fraction(1, 6)) for j in range(6))

    @pytest.mark.parametrize("kwargs", [
        {"family": "radix", "r": 1, "m": 3},
        {"family": "radix", "r": 2, "m": 0},
        {"family": "mixed", "r": 2, "c": 0},
        {"family": "multinomial", "n": 0},
        {"family": "stratified", "n": 4},
    ])
    def test_invalid_parameters(self, kwargs):
        with pytest.raises(ScheduleError):
            build_schedule(**kwargs)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            build_schedule("multinomial", n=MAX_PARTICLES + 1)
        with pytest.raises(CapacityError):
            build_schedule("radix", r=2, m=23)

    def test_index_checks(self):
        s = build_schedule("radix", r=2, m=2)
        with pytest.raises(ScheduleError):
            stage_row(s, 3, 0)
        with pytest.raises(ScheduleError):
            stage_row(s, 1, 4)

    def test_schedules_are_hashable_values(self):
        assert build_schedule("radix", r=2, m=3) == Schedule.radix(2, 3)
        assert len({Schedule.radix(2, 3), Schedule.radix(2, 3), Schedule.mixed(2, 4)}) == 2


class TestRows:
    def test_radix_rows(self):
        # r = 2, m = 3: stage k pairs i with i xor 2^(k-1)
        s = build_schedule("radix", r=2, m=3)
        half = Fraction(1, 2)
        assert stage_row(s, 1, 0).entries == ((0, half), (1, half))
        assert stage_row(s, 2, 5).entries == ((5, half), (7, half))
        assert stage_row(s, 3, 2).entries == ((2, half), (6, half))

    def test_float_weights(self):
        s = build_schedule("radix", r=3, m=2)
        row = stage_row(s, 2, 4, exact=False)
        assert [j for j, _ in row.entries] == [1, 4, 7]
        assert all(w == pytest.approx(1 / 3) for _, w in row.entries)

    def test_rows_sum_to_one(self):
        for s in grid_schedules():
            for k in range(1, s.n_stages + 1):
                assert all(stage_row(s, k, i).total() == 1 for i in range(s.n_particles))

    def test_dense_matches_support(self):
        s = build_schedule("mixed", r=3, c=4)
        for k in (1, 2):
            dense = dense_stage(s, k)
            np.testing.assert_array_equal(support_matrix(s, k), (dense != 0).astype(int))

    def test_dense_product_is_uniform(self):
        s = build_schedule("radix", r=2, m=4)
        prod = dense_product(dense_stage(s, k) for k in range(1, 5))
        assert np.all(prod == Fraction(1, 16))

    def test_product_row(self):
        s = build_schedule("radix", r=2, m=3)
        assert product_row(s, 0, (1, 2)) == {j: Fraction(1, 4) for j in range(4)}


class TestAssumptions:
    @pytest.mark.parametrize("s", grid_schedules(), ids=lambda s: s.label)
    def test_butterfly_families_satisfy_all(self, s):
        assert verify_assumptions(s).all_true()

    def test_multinomial_satisfies_all(self):
        assert verify_assumptions(build_schedule("multinomial", n=7)).all_true()

    def test_repeated_stage_is_detected(self):
        s = Schedule("radix", 4, (KroneckerStage(2, 2, 1), KroneckerStage(2, 2, 1)), r=2)
        rep = verify_assumptions(s)
        assert rep.double_stochastic and rep.symmetric and rep.idempotent and rep.commuting
        assert not rep.product_uniform
        assert rep.unique_paths is False

    def test_path_cap(self):
        s = build_schedule("radix", r=2, m=3)
        assert verify_assumptions(s, path_cap=10).unique_paths is None
        assert verify_assumptions(s, path_cap=None).unique_paths is True


@st.composite
def schedule_and_vector(draw):
    family = draw(st.sampled_from(["radix", "mixed"]))
    r = draw(st.integers(2, 3))
    s = (build_schedule("radix", r=r, m=draw(st.integers(1, 3))) if family == "radix"
         else build_schedule("mixed", r=r, c=draw(st.integers(1, 6))))
    vec = draw(st.lists(st.floats(0.01, 10.0), min_size=s.n_particles, max_size=s.n_particles))
    return s, np.array(vec)


class TestApplyStage:
    @given(schedule_and_vector())
    def test_matches_dense_matrix(self, sv):
        s, vec = sv
        for k in range(1, s.n_stages + 1):
            dense = dense_stage(s, k).astype(float)
            np.testing.assert_allclose(apply_stage(s, k, vec), dense @ vec, rtol=1e-12)

    @given(schedule_and_vector())
    def test_all_stages_give_the_mean(self, sv):
        s, vec = sv
        out = vec
        for k in range(1, s.n_stages + 1):
            out = apply_stage(s, k, out)
        np.testing.assert_allclose(out, np.full_like(vec, vec.mean()), rtol=1e-12)

    def test_exact_arithmetic(self):
        s = build_schedule("radix", r=2, m=2)
        vec = np.array([Fraction(1), Fraction(2), Fraction(3), Fraction(4)], dtype=object)
        out = apply_stage(s, 1, vec)
        assert list(out) == [Fraction(3, 2), Fraction(3, 2), Fraction(7, 2), Fraction(7, 2)]

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from didsim.scenario import (
    build_scenario,
    change_code,
    enactment_window,
    gradual_exposure,
    instant_exposure,
    phase_in_values,
    sample_enactment,
    sample_policy_states,
    sample_scenario,
    substream,
)

YEARS = np.arange(1999, 2017)
STATES = tuple(f"S{i:02d}" for i in range(1, 51))


class TestInstantExposure:
    def test_month_seven(self):
        lv = instant_exposure((2005, 7), YEARS)
        expected = np.r_[np.zeros(6), 0.5, np.ones(11)]
        np.testing.assert_allclose(lv, expected, atol=1e-9)

    @pytest.mark.parametrize("month, level", [(1, 1.0), (12, 1 / 12)])
    def test_enactment_year_level(self, month, level):
        lv = instant_exposure((2005, month), YEARS)
        assert lv[YEARS == 2005][0] == pytest.approx(level, abs=1e-12)

    def test_outside_panel(self):
        with pytest.raises(ValueError):
            instant_exposure((2020, 1), YEARS)


class TestGradualExposure:
    def test_month_one_ramp(self):
        np.testing.assert_allclose(phase_in_values(1, 3), [1 / 6, 1 / 2, 5 / 6, 1.0], atol=1e-9)

    def test_month_seven_ramp(self):
        np.testing.assert_allclose(phase_in_values(7, 3), [1 / 24, 3 / 8, 17 / 24, 0.951389], atol=1e-6)

    def test_month_twelve_final_value(self):
        final = ((1) + (11) - 66 / 36) / 12
        assert final == pytest.approx(0.847222, abs=1e-6)
        assert phase_in_values(12, 3)[-1] == pytest.approx(final, abs=1e-9)

    def test_placed_in_panel_then_one(self):
        lv = gradual_exposure((2005, 1), YEARS)
        i = int(np.flatnonzero(YEARS == 2005)[0])
        assert np.all(lv[:i] == 0)
        np.testing.assert_allclose(lv[i:i + 4], [1 / 6, 1 / 2, 5 / 6, 1.0])
        assert np.all(lv[i + 4:] == 1)

    def test_truncated_at_panel_end(self):
        lv = gradual_exposure((2016, 1), YEARS)
        assert lv[-1] == pytest.approx(1 / 6)
        assert len(lv) == len(YEARS)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 6))
    def test_ramp_bounded_and_increasing(self, month, L):
        v = phase_in_values(month, L)
        assert np.all((v >= 0) & (v <= 1))
        assert np.all(np.diff(v) > 0)

    @settings(max_examples=24, deadline=None)
    @given(st.integers(1, 12))
    def test_gradual_never_exceeds_instant(self, month):
        assert np.all(gradual_exposure((2005, month), YEARS) <= instant_exposure((2005, month), YEARS) + 1e-12)


class TestChangeCode:
    @pytest.mark.parametrize(
        "levels, diffs",
        [
            ([0, 0, 0.5, 1, 1], [0, 0, 0.5, 0.5, 0]),
            ([0, 0, 0], [0, 0, 0]),
            ([1, 1, 1], [1, 0, 0]),
        ],
    )
    def test_examples(self, levels, diffs):
        np.testing.assert_allclose(change_code(levels), diffs)

    def test_cumsum_recovers_levels_on_random_scenarios(self):
        for k in range(1000):
            rng = substream(2024, k)
            for sc in sample_scenario(rng, STATES, YEARS, int(rng.integers(1, 51))).values():
                np.testing.assert_allclose(np.cumsum(sc.exposure_change, axis=1), sc.exposure, atol=1e-12)


class TestSampling:
    def test_window(self):
        assert enactment_window(YEARS) == (2002, 2013)

    def test_window_too_short(self):
        with pytest.raises(ValueError):
            enactment_window(np.arange(2000, 2006))

    def test_enactment_range(self):
        rng = substream(1, 2)
        yr, mo = sample_enactment(rng, YEARS, size=5000)
        assert yr.min() == 2002 and yr.max() == 2013
        assert mo.min() == 1 and mo.max() == 12

    def test_all_states(self):
        assert set(sample_policy_states(substream(3), 50, STATES)) == set(STATES)

    @pytest.mark.parametrize("n", [0, 51])
    def test_bad_n_trt(self, n):
        with pytest.raises(ValueError):
            sample_policy_states(substream(3), n, STATES)

    def test_distinct_states(self):
        picked = sample_policy_states(substream(9), 30, STATES)
        assert len(set(picked)) == 30

    def test_substream_reproducible_and_distinct(self):
        a = substream(7, 5, 3).random(4)
        np.testing.assert_array_equal(a, substream(7, 5, 3).random(4))
        assert not np.array_equal(a, substream(7, 5, 4).random(4))
        assert not np.array_equal(a, substream(7, 15, 3).random(4))

    def test_codings_share_draw(self):
        sc = sample_scenario(substream(1, 5, 0), STATES, YEARS, 5)
        assert sc["instant"].treated == sc["slow"].treated
        assert sc["instant"].enactment == sc["slow"].enactment
        untreated = [i for i, s in enumerate(STATES) if s not in sc["instant"].treated]
        assert not sc["instant"].exposure[untreated].any()


def test_build_scenario_rejects_unknown_speed():
    with pytest.raises(ValueError):
        build_scenario(STATES, YEARS, ["S01"], [2005], [1], "fast")

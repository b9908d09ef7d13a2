from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ttmkit.errors import ConfigError, ContractError
from ttmkit.vmma import (
    ThresholdState,
    adaptive_threshold,
    build_prompt,
    coarse_grained_prompt,
    coarse_row,
    fine_grained_prompt,
    missing_ratio,
)


def test_fine_example():
    got = fine_grained_prompt(np.array([True, False, True]), 2)
    np.testing.assert_array_equal(got, [[0, 0], [1, 1], [0, 0]])


def test_fine_all_present_is_zero_init():
    np.testing.assert_array_equal(fine_grained_prompt(np.ones((2, 5), bool), 3), np.zeros((2, 5, 3)))


def test_fine_rows_constant_across_dims():
    mask = np.random.default_rng(0).random((4, 30)) < 0.6
    p = fine_grained_prompt(mask, 7)
    assert np.all(p == p[..., :1])
    assert set(np.unique(p)) <= {0.0, 1.0}


def test_fine_width_error():
    with pytest.raises(ConfigError):
        fine_grained_prompt(np.ones(3, bool), 0)


def test_missing_ratio_examples():
    assert missing_ratio(np.ones(10, bool)) == 0.0
    assert missing_ratio(np.array([False] * 3 + [True] * 7)) == 0.3
    with pytest.raises(ContractError):
        missing_ratio(np.ones((2, 0), bool))


def test_missing_ratio_matches_count_loop():
    masks = np.random.default_rng(1).random((50, 37)) < 0.5
    got = missing_ratio(masks)
    for b in range(50):
        n = 0
        for t in range(37):
            n += 0 if masks[b, t] else 1
        assert got[b] == n / 37


def test_coarse_paper_examples():
    np.testing.assert_array_equal(coarse_row(0.1, 0.2, 4), [1, 1, 0, 0])
    np.testing.assert_array_equal(coarse_row(0.2, 0.2, 4), [0, 0, 1, 1])


def truth_table(delta, beta, D):
    """Direct per-entry evaluation with 1-indexed d, in exact arithmetic."""
    return [1 if (delta < beta and d <= Fraction(D, 2)) or (delta >= beta and d > Fraction(D, 2)) else 0
            for d in range(1, D + 1)]


def test_coarse_exhaustive_grid():
    checked = boundary = 0
    for i in range(21):
        for j in range(1, 10):
            for D in (2, 4, 8):
                want = truth_table(Fraction(i, 20), Fraction(j, 10), D)
                got = coarse_row(i / 20, j / 10, D)
                assert list(got) == want, (i / 20, j / 10, D)
                checked += 1
                if Fraction(i, 20) == Fraction(j, 10):
                    assert got[-1] == 1 and got[0] == 0
                    boundary += 1
    assert checked == 21 * 9 * 3
    assert boundary == 9 * 3


def test_coarse_batch_broadcast_over_frames():
    p = coarse_grained_prompt(np.array([0.1, 0.5]), 0.3, 4, frames=6)
    assert p.shape == (2, 6, 4)
    np.testing.assert_array_equal(p[0], np.tile([1, 1, 0, 0], (6, 1)))
    np.testing.assert_array_equal(p[1], np.tile([0, 0, 1, 1], (6, 1)))


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.sampled_from([2, 4, 6, 32]))
def test_coarse_partitions_dims(delta, beta, D):
    row = coarse_row(delta, beta, D)
    assert row.sum() == D // 2
    assert set(np.unique(row)) == {0.0, 1.0}


def test_coarse_odd_width_error():
    with pytest.raises(ConfigError):
        coarse_row(0.1, 0.2, 5)


def test_threshold_examples():
    assert adaptive_threshold([0.3, 0.3, 0.3], k=2.5) == pytest.approx(0.3, abs=1e-15)
    assert adaptive_threshold([0.1, 0.3], k=1.0) == pytest.approx(0.3, abs=1e-15)
    assert adaptive_threshold([0.6, 1.2, 0.6, 1.2], k=1.0) == 1.0
    with pytest.raises(ContractError):
        adaptive_threshold([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.2, 0.6), min_size=1, max_size=20), st.floats(-1, 1), st.floats(-0.1, 0.1),
       st.randoms())
def test_threshold_permutation_and_translation(h, k, c, rnd):
    base = adaptive_threshold(h, k)
    shuffled = list(h)
    rnd.shuffle(shuffled)
    assert adaptive_threshold(shuffled, k) == pytest.approx(base, abs=1e-12)
    # inputs keep the pre-clamp value inside [0, 1] so translation is exact
    if 0 < base + c < 1 and 0 < base < 1:
        assert adaptive_threshold([x + c for x in h], k) == pytest.approx(base + c, abs=1e-12)


def test_threshold_state_freezes():
    st_ = ThresholdState(k=0.0)
    st_.observe([0.2, 0.4])
    assert st_.freeze() == pytest.approx(0.3)
    with pytest.raises(ContractError):
        st_.observe([0.9])


def test_build_prompt_modes():
    present = np.array([[True, False, True, True]])
    np.testing.assert_array_equal(build_prompt(present, 2, "none"), np.zeros((1, 4, 2)))
    np.testing.assert_array_equal(build_prompt(present, 2, "fine")[0, 1], [1, 1])
    np.testing.assert_array_equal(build_prompt(present, 2, "coarse", beta=0.3)[0], np.tile([1, 0], (4, 1)))
    with pytest.raises(ConfigError):
        build_prompt(present, 2, "coarse")
    with pytest.raises(ConfigError):
        build_prompt(present, 2, "medium")

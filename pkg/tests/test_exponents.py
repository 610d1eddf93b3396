import math

import pytest
from hypothesis import given, strategies as st

from liyau_lab.exponents import (
    INF,
    classify,
    exponent_table,
    format_table,
    star_exponent,
)


def test_star_exponent_closed_forms():
    assert star_exponent(1) == 8.0
    assert abs(star_exponent(2) - (2 + math.sqrt(5))) <= 1e-12
    assert abs(star_exponent(3) - (5 + math.sqrt(33)) / 4) <= 1e-12


def test_table_dimension_three():
    t = exponent_table(3)
    assert t.p_sobolev == 5.0
    assert t.p_bidaut_veron == 3.75
    assert abs(t.p_fujita - 5 / 3) < 1e-15
    assert abs(t.p_star - 2.68614066163) < 1e-10


def test_low_dimensions_have_infinite_sobolev_exponent():
    assert exponent_table(1).p_sobolev == INF
    assert exponent_table(2).p_sobolev == INF
    assert exponent_table(1).p_bidaut_veron == INF
    assert exponent_table(2).p_bidaut_veron == 8.0
    assert exponent_table(1).as_dict()["p_sobolev"] is None


@pytest.mark.parametrize("N", [0, -1, 2.5])
def test_invalid_dimension(N):
    with pytest.raises(ValueError):
        exponent_table(N)


def test_classify_half_open_intervals():
    assert classify(3, 1.5) == "below_fujita"
    assert classify(3, 5 / 3 + 1e-12) == "fujita_to_star"
    assert classify(3, star_exponent(3)) == "star_to_sobolev"
    assert classify(3, 5.0) == "sobolev_and_above"
    assert classify(1, 100.0) == "star_to_sobolev"
    with pytest.raises(ValueError):
        classify(2, 1.0)


@given(st.integers(min_value=2, max_value=60))
def test_exponent_ordering(N):
    t = exponent_table(N)
    assert 1 < t.p_fujita < t.p_star < t.p_bidaut_veron <= t.p_sobolev


@given(st.integers(min_value=2, max_value=60))
def test_star_exponent_solves_its_quadratic(N):
    # (N-1) p^2 - (N+2) p - 1 = 0
    p = star_exponent(N)
    assert abs((N - 1) * p * p - (N + 2) * p - 1) <= 1e-9 * p * p


def test_format_table_aligned():
    text = format_table(exponent_table(2))
    lines = text.splitlines()
    assert lines[0].split() == ["N", "2"]
    assert "inf" in lines[1]
    assert len({line.index(line.split()[1]) for line in lines}) == 1

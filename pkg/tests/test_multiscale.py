import datetime as dt
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from smsfr.chart import OHLCTUnit
from smsfr.errors import DomainError
from smsfr.market_data import synth_series
from smsfr.multiscale import decompose, feature_weights, num_submaps, resolution, split_dims

from oracles import brute_submaps, brute_weights

FIELDS = ("open", "high", "low", "close", "turnover", "ma5", "date")


def as_dict(u):
    return {k: getattr(u, k) for k in FIELDS}


def random_window(rng, n):
    start = dt.date(2022, 1, 3)
    days, d = [], start
    for _ in range(n):
        lo = rng.uniform(5, 50)
        hi = lo + rng.uniform(0, 5)
        days.append({
            "open": rng.uniform(lo, hi), "high": hi, "low": lo, "close": rng.uniform(lo, hi),
            "turnover": rng.uniform(0, 0.1), "ma5": rng.uniform(lo, hi), "date": d,
        })
        d += dt.timedelta(days=rng.choice([1, 1, 1, 3]))
    return days


def to_units(days):
    return [OHLCTUnit(d["open"], d["high"], d["low"], d["close"], d["turnover"], d["ma5"], d["date"]) for d in days]


@pytest.mark.parametrize("n, c", [(60, 3), (5, 1), (20, 2), (25, 2), (125, 3), (130, 4)])
def test_num_submaps(n, c):
    assert num_submaps(n) == c


@pytest.mark.parametrize("i, n, m", [(1, 60, 1), (2, 60, 5), (3, 60, 12), (2, 20, 4), (1, 5, 1)])
def test_resolution(i, n, m):
    assert resolution(i, n) == m


@pytest.mark.parametrize("bad", [0, 7, -5, 12])
def test_n_must_be_multiple_of_five(bad):
    with pytest.raises(DomainError):
        num_submaps(bad)


def test_resolution_index_range():
    with pytest.raises(DomainError):
        resolution(4, 60)
    with pytest.raises(DomainError):
        resolution(0, 60)


class TestWeights:
    def test_three(self):
        assert feature_weights(3) == [0.5, 0.25, 0.25]

    def test_two_and_four(self):
        assert feature_weights(2) == [0.5, 0.5]
        assert feature_weights(4) == [0.5, 0.25, 0.125, 0.125]

    def test_one(self):
        assert feature_weights(1) == [1.0]

    @pytest.mark.parametrize("c", range(1, 9))
    def test_sum_and_oracle(self, c):
        w = feature_weights(c)
        assert sum(w) == 1.0
        assert [Fraction(x) for x in w] == brute_weights(c)

    def test_split_dims(self):
        assert split_dims(feature_weights(3), 256) == [128, 64, 64]
        assert split_dims(feature_weights(3), 10) == [5, 3, 2]  # 5, 2.5, 2.5: tie to the lower index
        assert split_dims(feature_weights(1), 7) == [7]

    @given(c=st.integers(1, 6), total=st.integers(1, 1000))
    def test_split_dims_sum(self, c, total):
        dims = split_dims(feature_weights(c), total)
        assert sum(dims) == total
        for d, w in zip(dims, feature_weights(c)):
            assert abs(d - w * total) < 1


class TestDecompose:
    def test_n25_highs(self):
        days = [{"open": 1.0, "high": float(h), "low": 0.5, "close": 1.0, "turnover": 0.01, "ma5": 1.0,
                 "date": dt.date(2024, 1, 1) + dt.timedelta(days=h)} for h in range(1, 26)]
        s = decompose(to_units(days), 25)
        assert s.resolutions == (1, 5)
        assert [u.high for u in s.maps[1]] == [5.0, 10.0, 15.0, 20.0, 25.0]

    def test_n60_coverage(self):
        days = random_window(random.Random(0), 60)
        s = decompose(to_units(days), 60)
        assert s.C == 3 and s.resolutions == (1, 5, 12)
        assert s.maps[2][0].open == days[0]["open"]
        assert s.maps[2][-1].close == days[-1]["close"]
        assert s.maps[1][0].open == days[35]["open"]

    def test_first_map_is_last_five_days(self):
        days = random_window(random.Random(1), 20)
        s = decompose(to_units(days), 20)
        assert [as_dict(u) for u in s.maps[0]] == days[-5:]
        assert all(u.date is None for u in s.maps[1])

    def test_accepts_bars(self):
        bars = synth_series(0, 100)[-20:]
        s = decompose(bars, 20)
        assert s.maps[0][-1].turnover == bars[-1].turnover_rate

    def test_short_window(self):
        with pytest.raises(DomainError):
            decompose(to_units(random_window(random.Random(2), 19)), 20)

    def test_uses_most_recent_n(self):
        days = random_window(random.Random(3), 30)
        assert decompose(to_units(days), 20) == decompose(to_units(days[-20:]), 20)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.sampled_from([5, 20, 25, 60, 125]))
    def test_oracle_equivalence(self, seed, n):
        days = random_window(random.Random(seed), n)
        s = decompose(to_units(days), n)
        expected = brute_submaps(days, n)
        assert list(s.resolutions) == [m for m, _ in expected]
        assert [[as_dict(u) for u in m] for m in s.maps] == [blocks for _, blocks in expected]

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_turnover_conservation(self, seed):
        days = random_window(random.Random(seed), 60)
        s = decompose(to_units(days), 60)
        assert sum(Fraction(u.turnover) for u in s.maps[-1]) == pytest.approx(
            sum(Fraction(d["turnover"]) for d in days), rel=1e-15)

    def test_to_dict(self):
        s = decompose(to_units(random_window(random.Random(4), 20)), 20)
        d = s.to_dict()
        assert d["C"] == 2 and d["weights"] == [0.5, 0.5]
        assert len(d["maps"]) == 2 and all(len(m) == 5 for m in d["maps"])

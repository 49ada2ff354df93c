import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repconf.bayes import BetaParams
from repconf.features import annotate
from repconf.grid import BinSpec, GridConfig, fit_grid, interpolate
from repconf.weights import (
    SCHEMES,
    WeightConfig,
    WeightMatrix,
    compute_weights,
    item_avg_pos,
    read_weights,
    rep_counts,
    write_weights,
)


def _log(rows):
    """(user, item, label) rows, timestamps 1000 s apart."""
    return pd.DataFrame(
        {
            "user": np.array([r[0] for r in rows], dtype=np.int64),
            "item": np.array([r[1] for r in rows], dtype=np.int64),
            "timestamp": np.arange(len(rows), dtype=np.int64) * 1000,
            "label": np.array([r[2] for r in rows], dtype=np.int8),
        }
    )


@pytest.fixture(scope="module")
def sample():
    rng = np.random.default_rng(0)
    rows = [(int(u), int(i), int(rng.random() < 0.7)) for u, i in rng.integers(0, [12, 9], size=(600, 2))]
    ints = _log(rows)
    ann = annotate(ints)
    bins = BinSpec(np.geomspace(134.0, 6e5, 6))
    grid = fit_grid(ann, GridConfig(prior=BetaParams(20, 20), n_recency_bins=5, max_playcount=10), bins)
    return ints, ann, grid


def _as_dict(wm):
    return {(int(u), int(i)): float(w) for u, i, w in zip(wm.users, wm.items, wm.weights)}


class TestConfig:
    def test_unknown_scheme(self):
        with pytest.raises(ValueError, match="unknown weighting scheme"):
            WeightConfig("cubic")

    @pytest.mark.parametrize("kw", [{"scale_alpha": 0}, {"scheme": "log", "epsilon": 0}, {"cutoff_c": -1}])
    def test_invalid_values(self, kw):
        with pytest.raises(ValueError):
            WeightConfig(**kw)


class TestCountSchemes:
    rows = [(0, 0, 1), (0, 0, 1), (0, 0, 0), (0, 1, 0), (1, 0, 1), (1, 2, 1), (1, 2, 1), (1, 2, 1)]

    def test_linear(self):
        wm = compute_weights(_log(self.rows), WeightConfig("linear", scale_alpha=2.0))
        assert _as_dict(wm) == {(0, 0): 4.0, (1, 0): 2.0, (1, 2): 6.0}

    def test_skip_only_pair_absent(self):
        wm = compute_weights(_log(self.rows), WeightConfig("linear"))
        assert (0, 1) not in _as_dict(wm)
        assert rep_counts(_log(self.rows))[(0, 1)] == 0

    def test_log(self):
        wm = compute_weights(_log(self.rows), WeightConfig("log", epsilon=0.5))
        d = _as_dict(wm)
        assert d[(0, 0)] == pytest.approx(math.log(1 + 2 / 0.5))
        assert d[(1, 2)] == pytest.approx(math.log(1 + 3 / 0.5))

    def test_log_pop(self):
        ints = _log(self.rows)
        avg = item_avg_pos(ints)
        # item 0: users 0 and 1 listen 2 and 1 times
        assert avg[0] == 1.5
        assert avg[2] == 3.0
        assert 1 not in avg.index
        d = _as_dict(compute_weights(ints, WeightConfig("log_pop", epsilon=1.0)))
        assert d[(0, 0)] == pytest.approx(math.log(1 + 2 / 1.5))
        assert d[(1, 2)] == pytest.approx(math.log(2.0))

    def test_shape(self):
        wm = compute_weights(_log(self.rows), WeightConfig(), shape=(5, 7))
        assert wm.shape == (5, 7)
        assert wm.to_csr().shape == (5, 7)


class TestPosteriorSchemes:
    def test_sum_post_by_hand(self, sample):
        ints, ann, grid = sample
        wm = compute_weights(ints, WeightConfig("sum_post"), ann=ann, grid=grid)
        d = _as_dict(wm)
        for (u, i), g in ann.groupby(["user", "item"]):
            if g["label"].sum() == 0:
                assert (u, i) not in d
                continue
            total = sum(
                interpolate(grid, k, None if np.isnan(r) else r).pi_hat
                for k, r in zip(g["playcount"], g["recency_s"])
            )
            assert d[(u, i)] == pytest.approx(total, rel=1e-12)

    def test_sum_conf_by_hand(self, sample):
        ints, ann, grid = sample
        c = 0.05
        d = _as_dict(compute_weights(ints, WeightConfig("sum_conf", cutoff_c=c), ann=ann, grid=grid))
        (u, i), g = next(iter((key, g) for key, g in ann.groupby(["user", "item"]) if g["label"].sum() > 0))
        total = 0.0
        for k, r in zip(g["playcount"], g["recency_s"]):
            est = interpolate(grid, k, None if np.isnan(r) else r)
            total += est.pi_hat / (c + est.hdi_width_hat)
        assert d[(u, i)] == pytest.approx(total, rel=1e-12)

    def test_logsum_is_log1p_of_sum(self, sample):
        ints, ann, grid = sample
        s = compute_weights(ints, WeightConfig("sum_post"), ann=ann, grid=grid)
        ls = compute_weights(ints, WeightConfig("logsum_post"), ann=ann, grid=grid)
        np.testing.assert_array_equal(ls.weights, np.log1p(s.weights))
        np.testing.assert_array_equal(ls.users, s.users)

    def test_annotation_computed_when_missing(self, sample):
        ints, ann, grid = sample
        a = compute_weights(ints, WeightConfig("sum_post"), grid=grid)
        b = compute_weights(ints, WeightConfig("sum_post"), ann=ann, grid=grid)
        np.testing.assert_array_equal(a.weights, b.weights)

    def test_grid_required(self, sample):
        with pytest.raises(ValueError, match="grid"):
            compute_weights(sample[0], WeightConfig("sum_conf"))

    @pytest.mark.parametrize("scheme", SCHEMES)
    def test_weights_positive_and_scaled(self, sample, scheme):
        ints, ann, grid = sample
        one = compute_weights(ints, WeightConfig(scheme, scale_alpha=1.0), ann=ann, grid=grid)
        three = compute_weights(ints, WeightConfig(scheme, scale_alpha=3.0), ann=ann, grid=grid)
        assert np.all(one.weights > 0)
        np.testing.assert_allclose(three.weights, 3.0 * one.weights, rtol=1e-15)
        r = rep_counts(ints)
        assert len(one) == int((r > 0).sum())


class TestMatrix:
    def test_validation(self):
        with pytest.raises(ValueError):
            WeightMatrix(np.array([0]), np.array([0]), np.array([0.0]), (1, 1))
        with pytest.raises(ValueError):
            WeightMatrix(np.array([0]), np.array([3]), np.array([1.0]), (1, 2))
        with pytest.raises(ValueError):
            WeightMatrix(np.array([0, 1]), np.array([0]), np.array([1.0]), (2, 2))

    @given(st.dictionaries(st.tuples(st.integers(0, 5), st.integers(0, 5)), st.floats(1e-6, 1e6), min_size=1))
    @settings(max_examples=40)
    def test_file_round_trip(self, tmp_path_factory, entries):
        keys = sorted(entries)
        wm = WeightMatrix(
            np.array([k[0] for k in keys]), np.array([k[1] for k in keys]), np.array([entries[k] for k in keys]), (6, 6)
        )
        path = tmp_path_factory.mktemp("w") / "w.csv"
        write_weights(path, wm)
        back = read_weights(path)
        np.testing.assert_array_equal(back.weights, wm.weights)
        np.testing.assert_array_equal(back.users, wm.users)
        assert back.shape == wm.shape


class TestWorkedExamples:
    def test_linear_and_log_r3(self):
        ints = _log([(0, 0, 1), (0, 0, 0), (0, 0, 1), (0, 0, 1)])
        assert rep_counts(ints)[(0, 0)] == 3
        assert _as_dict(compute_weights(ints, WeightConfig("linear", scale_alpha=2)))[(0, 0)] == 6.0
        assert _as_dict(compute_weights(ints, WeightConfig("log")))[(0, 0)] == pytest.approx(1.386294, abs=1e-6)

    def test_sum_conf_formula(self, monkeypatch):
        import repconf.weights as wmod

        def fake(grid, k, r):
            return np.array([0.5, 0.8]), np.array([0.1, 0.2]), np.zeros(2, bool)

        monkeypatch.setattr(wmod, "interpolate_arrays", fake)
        ints = _log([(0, 0, 1), (0, 0, 0)])
        d = _as_dict(compute_weights(ints, WeightConfig("sum_conf", scale_alpha=2, cutoff_c=0.1), grid=object()))
        assert d[(0, 0)] == pytest.approx(2 * (0.5 / 0.2 + 0.8 / 0.3), rel=1e-12)

    def test_avg_pos(self):
        ints = _log([(0, 5, 1), (0, 5, 1), (1, 5, 1), (1, 5, 1), (1, 5, 1), (1, 5, 1), (2, 6, 1), (3, 7, 0)])
        avg = item_avg_pos(ints)
        assert avg[5] == 3.0
        assert avg[6] == 1.0
        assert 7 not in avg.index

    def test_log_pop_decreasing_in_item_average(self):
        # same r = 2 for user 0, item 0 is listened more by others than item 1
        rows = [(0, 0, 1)] * 2 + [(0, 1, 1)] * 2 + [(1, 0, 1)] * 8 + [(1, 1, 1)] * 2
        d = _as_dict(compute_weights(_log(rows), WeightConfig("log_pop")))
        assert d[(0, 0)] < d[(0, 1)]

    @given(st.integers(1, 50))
    def test_count_schemes_increasing_in_r(self, r):
        lo = _as_dict(compute_weights(_log([(0, 0, 1)] * r), WeightConfig("log", epsilon=0.8)))[(0, 0)]
        hi = _as_dict(compute_weights(_log([(0, 0, 1)] * (r + 1)), WeightConfig("log", epsilon=0.8)))[(0, 0)]
        assert hi > lo

    def test_sum_conf_monotone_in_inputs(self, monkeypatch):
        import repconf.weights as wmod

        ints = _log([(0, 0, 1), (0, 0, 0)])
        vals = {}
        for name, pi, width in [("base", 0.5, 0.1), ("wider", 0.5, 0.3), ("higher", 0.7, 0.1)]:
            monkeypatch.setattr(
                wmod, "interpolate_arrays", lambda g, k, r, pi=pi, width=width: (np.full(2, pi), np.full(2, width), None)
            )
            vals[name] = _as_dict(compute_weights(ints, WeightConfig("sum_conf"), grid=object()))[(0, 0)]
        assert vals["wider"] <= vals["base"] <= vals["higher"]

"""Gate-based feature/pair selection and the regularization path."""

import logging

import numpy as np
import pytest

from namlite.errors import ConfigError
from namlite.select import (
    SelectionConfig,
    default_gamma,
    lookup_feats,
    regularization_path,
    select_features,
    _rank_auc,
)
from namlite.train import TrainConfig


def _cfg(**kw):
    base = dict(
        n_val_splits=2,
        batch_size=32,
        max_epochs=15,
        early_stop_patience=5,
        learning_rate=1e-2,
        embedding_dim=4,
        hidden_sizes=(8,),
        max_bins=8,
        seed=3,
    )
    base.update(kw)
    return TrainConfig(**base)


def _linear_table(seed=5, n=600):
    rng = np.random.default_rng(seed)
    table = {f"x{i}": rng.normal(size=n) for i in range(1, 5)}
    y = 2.0 * table["x1"] + 0.1 * rng.normal(size=n)
    return table, y


# --- gate width default -------------------------------------------------------


class TestDefaultGamma:
    def test_reference_values(self):
        assert default_gamma(32000, 128, 16) == 1.0
        np.testing.assert_allclose(default_gamma(128, 128, 16), 0.004)
        np.testing.assert_allclose(default_gamma(32000, 128, 32), 0.5)

    def test_cap_at_one(self):
        assert default_gamma(10**9, 1, 1) == 1.0

    def test_rejects_nonpositive(self):
        for args in [(0, 1, 1), (1, 0, 1), (1, 1, 0)]:
            with pytest.raises(ConfigError):
                default_gamma(*args)


class TestSelectionConfig:
    def test_validate_rejects_bad_values(self):
        with pytest.raises(ConfigError):
            SelectionConfig(reg_param=-0.1).validate()
        with pytest.raises(ConfigError):
            SelectionConfig(gamma=0.0).validate()
        with pytest.raises(ConfigError):
            SelectionConfig(pair_gamma=-1.0).validate()


# --- selection ------------------------------------------------------------------


class TestSelectFeatures:
    def test_zero_penalty_keeps_everything(self):
        table, y = _linear_table()
        res = select_features(table, y, _cfg(max_epochs=5), SelectionConfig(gamma=0.5))
        assert res.selected_feats == ["x1", "x2", "x3", "x4"]
        assert all(v > 0 for v in res.gate_values.values())

    def test_penalty_keeps_signal_and_zeroes_noise(self):
        table, y = _linear_table()
        res = select_features(
            table, y, _cfg(), SelectionConfig(reg_param=0.1, gamma=0.5)
        )
        assert res.selected_feats == ["x1"]
        assert res.gate_values["x1"] == 1.0
        for name in ("x2", "x3", "x4"):
            assert res.gate_values[name] == 0.0

    def test_everything_pruned_warns(self, caplog):
        rng = np.random.default_rng(6)
        table = {"a": rng.normal(size=400), "b": rng.normal(size=400)}
        y = rng.normal(size=400)
        with caplog.at_level(logging.WARNING, logger="namlite"):
            res = select_features(
                table, y, _cfg(), SelectionConfig(reg_param=0.5, gamma=0.5)
            )
        assert res.selected_feats == []
        assert any("zero features" in r.message for r in caplog.records)

    def test_pair_selection_finds_interaction(self):
        rng = np.random.default_rng(6)
        n = 600
        table = {c: rng.normal(size=n) for c in ("a", "b", "c")}
        y = np.sign(table["a"]) * np.sign(table["b"]) + 0.05 * rng.normal(size=n)
        res = select_features(
            table,
            y,
            _cfg(),
            SelectionConfig(
                reg_param=0.05, pair_reg_param=0.02, gamma=0.5, select_pairs=True
            ),
        )
        assert res.selected_pairs == [("a", "b")]
        assert res.pair_gate_values[("a", "b")] == 1.0
        assert res.pair_gate_values[("a", "c")] == 0.0
        assert res.pair_gate_values[("b", "c")] == 0.0
        assert set(res.pair_gate_values) == {("a", "b"), ("a", "c"), ("b", "c")}

    def test_selection_is_deterministic(self):
        table, y = _linear_table()
        sel = SelectionConfig(reg_param=0.05, gamma=0.5)
        a = select_features(table, y, _cfg(max_epochs=5), sel)
        b = select_features(table, y, _cfg(max_epochs=5), sel)
        assert a.gate_values == b.gate_values


# --- ranking score ----------------------------------------------------------------


def _auc_oracle(y, scores):
    """Pairwise win fraction, ties counted half."""
    pos = scores[y == 1]
    neg = scores[y == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else (0.5 if p == q else 0.0)
    return wins / (pos.size * neg.size)


class TestRankAuc:
    def test_perfect_and_reversed(self):
        y = np.array([0, 0, 1, 1])
        assert _rank_auc(y, np.array([0.1, 0.2, 0.8, 0.9])) == 1.0
        assert _rank_auc(y, np.array([0.9, 0.8, 0.2, 0.1])) == 0.0

    def test_matches_pairwise_oracle_with_ties(self):
        rng = np.random.default_rng(7)
        y = (rng.random(60) < 0.4).astype(int)
        scores = rng.integers(0, 8, size=60).astype(float)
        np.testing.assert_allclose(_rank_auc(y, scores), _auc_oracle(y, scores))

    def test_single_class_is_nan(self):
        assert np.isnan(_rank_auc(np.ones(4), np.arange(4.0)))


# --- path -------------------------------------------------------------------------


class TestLookupFeats:
    def test_exact_then_nearest_smaller(self):
        feats = {3: ["a", "b", "c"], 1: ["a"]}
        assert lookup_feats(feats, 3) == ["a", "b", "c"]
        assert lookup_feats(feats, 2) == ["a"]
        with pytest.raises(KeyError):
            lookup_feats(feats, 0)


class TestRegularizationPath:
    def test_doubling_ladder_and_feats_map(self):
        rng = np.random.default_rng(5)
        n = 600
        table = {f"x{i}": rng.normal(size=n) for i in range(1, 5)}
        y = 2.0 * table["x1"] + 1.0 * table["x2"] + 0.1 * rng.normal(size=n)
        res = regularization_path(
            table, y, _cfg(max_epochs=10), 0.02, SelectionConfig(gamma=0.5), max_steps=6
        )
        assert 1 <= len(res.records) <= 6
        for i, rec in enumerate(res.records):
            np.testing.assert_allclose(rec.reg_param, 0.02 * 2**i)
            np.testing.assert_allclose(rec.val_score, np.sqrt(rec.val_loss))
            assert rec.num_feats == len(rec.selected_feats)
        seen = {}
        for rec in res.records:
            seen.setdefault(rec.num_feats, list(rec.selected_feats))
        assert res.feats == seen

    def test_noise_path_terminates_at_zero(self):
        rng = np.random.default_rng(8)
        table = {"a": rng.normal(size=400), "b": rng.normal(size=400)}
        y = rng.normal(size=400)
        res = regularization_path(
            table, y, _cfg(max_epochs=8), 0.2, SelectionConfig(gamma=0.5), max_steps=10
        )
        assert res.records[-1].num_feats == 0
        assert len(res.records) < 10

    def test_rejects_nonpositive_start(self):
        table, y = _linear_table(n=100)
        with pytest.raises(ConfigError):
            regularization_path(table, y, _cfg(), 0.0)

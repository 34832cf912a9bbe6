"""Losses, single-split training, early stopping, and the ensemble wrapper."""

import numpy as np
import pytest

from namlite.core import flat_pair_codes, forward_pass, param_dict
from namlite.data import split_folds
from namlite.errors import ConfigError, DataError
from namlite.persist import dumps_model
from namlite.survival import as_survival_labels, censoring_curve
from namlite.train import (
    EnsembleModel,
    TrainConfig,
    fit,
    fit_pairs,
    fit_single_split,
    loss_bce,
    loss_ipcw,
    loss_mse,
    predict,
)


def _fast_cfg(**kw):
    base = dict(
        n_val_splits=2,
        batch_size=32,
        max_epochs=12,
        early_stop_patience=3,
        learning_rate=1e-2,
        embedding_dim=4,
        hidden_sizes=(8,),
        max_bins=8,
        seed=3,
    )
    base.update(kw)
    return TrainConfig(**base)


# --- losses ----------------------------------------------------------------


class TestLosses:
    def test_mse_hand_value(self):
        assert loss_mse([1.0, 2.0], [0.0, 4.0]) == 2.5
        with pytest.raises(DataError):
            loss_mse([1.0], [1.0, 2.0])

    def test_bce_hand_value(self):
        got = loss_bce([0.8, 0.3], [1.0, 0.0])
        np.testing.assert_allclose(got, -(np.log(0.8) + np.log(0.7)) / 2, rtol=1e-12)

    def test_bce_clips_and_validates(self):
        assert np.isfinite(loss_bce([0.0], [1.0]))
        with pytest.raises(DataError):
            loss_bce([0.5], [0.3])

    def test_ipcw_hand_case(self):
        labels = as_survival_labels(([True, False, True], [2.0, 4.0, 6.0]))
        censor = censoring_curve(labels)
        cdf = np.array([[0.2, 0.3], [0.4, 0.5], [0.6, 0.7]])
        got = loss_ipcw(cdf, labels, [3.0, 5.0], censor)
        np.testing.assert_allclose(got, 2.63 / 6, rtol=1e-12)

    def test_ipcw_without_censoring_is_plain_brier(self):
        rng = np.random.default_rng(4)
        n, times = 50, np.array([0.5, 1.0, 1.5, 2.0])
        z = rng.exponential(size=n) + 0.05
        labels = as_survival_labels((np.ones(n, bool), z))
        cdf = rng.random((n, 4))
        ind = (z[:, None] <= times[None, :]).astype(float)
        brier = float(np.mean((cdf - ind) ** 2))
        got = loss_ipcw(cdf, labels, times, censoring_curve(labels))
        np.testing.assert_allclose(got, brier, atol=1e-12)

    def test_ipcw_accepts_single_time_vector(self):
        labels = as_survival_labels(([True, True], [1.0, 2.0]))
        censor = censoring_curve(labels)
        got = loss_ipcw(np.array([0.3, 0.4]), labels, [1.5], censor)
        want = loss_ipcw(np.array([[0.3], [0.4]]), labels, [1.5], censor)
        assert got == want

    def test_ipcw_shape_mismatch_raises(self):
        labels = as_survival_labels(([True, True], [1.0, 2.0]))
        with pytest.raises(DataError):
            loss_ipcw(np.zeros((2, 3)), labels, [1.0], censoring_curve(labels))


# --- config ------------------------------------------------------------------


class TestTrainConfig:
    def test_dict_round_trip(self):
        cfg = _fast_cfg(monotone={"x": 1}, num_pairs=2)
        again = TrainConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_threads_never_serialized(self):
        assert "threads" not in _fast_cfg(threads=4).to_dict()

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"learning_rte": 0.1})

    @pytest.mark.parametrize(
        "kw",
        [
            {"task": "ranking"},
            {"n_val_splits": 1},
            {"learning_rate": 0.0},
            {"max_epochs": -1},
            {"hidden_sizes": ()},
            {"censor_estimator": "weibull"},
            {"monotone": {"x": 2}},
            {"task": "survival", "monotone": {"x": 1}},
        ],
    )
    def test_validate_rejects(self, kw):
        with pytest.raises(ConfigError):
            TrainConfig(**kw).validate()


# --- single split --------------------------------------------------------------


def _toy_codes(rng, n, n_bins):
    return np.stack(
        [rng.integers(0, nb + 1, size=n) for nb in n_bins], axis=1
    )


class TestSingleSplit:
    def test_early_stop_restores_best_epoch(self):
        rng = np.random.default_rng(0)
        n_bins = np.array([6, 6])
        codes = _toy_codes(rng, 400, n_bins)
        y = codes[:, 0].astype(float) + rng.normal(0, 0.3, 400)
        cfg = _fast_cfg(max_epochs=25, early_stop_patience=2)
        sp = fit_single_split(codes[:300], y[:300], codes[300:], y[300:], n_bins, cfg)
        hist = sp.history["mains"]
        best = min(h["val_loss"] for h in hist)
        refit = loss_mse(sp.predict_linked(codes[300:])[:, 0], y[300:])
        np.testing.assert_allclose(refit, best, rtol=1e-9)
        np.testing.assert_allclose(sp.val_loss, best, rtol=1e-12)

    def test_centered_route_equals_raw_route(self):
        rng = np.random.default_rng(1)
        n_bins = np.array([5, 4, 3])
        codes = _toy_codes(rng, 300, n_bins)
        y = (codes[:, 0] - codes[:, 1]).astype(float)
        cfg = _fast_cfg(max_epochs=6)
        sp = fit_single_split(
            codes[:200], y[:200], codes[200:], y[200:], n_bins, cfg,
            pairs=[(0, 1)],
        )
        centered = sp.predict_eta(codes)
        pc = flat_pair_codes(sp.core, codes)
        raw = forward_pass(sp.core, codes, pc).eta
        assert np.max(np.abs(centered - raw)) < 1e-9

    def test_intercept_is_sum_of_centering_constants(self):
        rng = np.random.default_rng(2)
        n_bins = np.array([4, 4])
        codes = _toy_codes(rng, 200, n_bins)
        y = codes.sum(axis=1).astype(float)
        sp = fit_single_split(codes[:150], y[:150], codes[150:], y[150:], n_bins, _fast_cfg())
        np.testing.assert_allclose(
            sp.beta0, sp.c_feat.sum(axis=0) + sp.c_pair.sum(axis=0), atol=1e-12
        )

    def test_pair_phase_freezes_main_effects(self):
        rng = np.random.default_rng(3)
        n_bins = np.array([5, 5])
        codes = _toy_codes(rng, 300, n_bins)
        y = (codes[:, 0] * codes[:, 1]).astype(float)
        cfg = _fast_cfg(max_epochs=5)
        sp = fit_single_split(codes[:200], y[:200], codes[200:], y[200:], n_bins, cfg)
        before = {k: v.copy() for k, v in param_dict(sp.core).items() if k.startswith("feat_")}
        core, hist = fit_pairs(
            sp.core, [(0, 1)], codes[:200], y[:200], codes[200:], y[200:], cfg
        )
        assert len(hist) > 0
        after = param_dict(core)
        for k, v in before.items():
            np.testing.assert_array_equal(v, after[k])

    def test_zero_epochs_yields_constant_predictor(self):
        rng = np.random.default_rng(4)
        n_bins = np.array([4])
        codes = _toy_codes(rng, 60, n_bins)
        y = rng.normal(size=60)
        sp = fit_single_split(codes[:40], y[:40], codes[40:], y[40:], n_bins, _fast_cfg(max_epochs=0))
        pred = sp.predict_linked(codes)
        assert np.ptp(pred) == 0.0


# --- ensemble --------------------------------------------------------------------


class TestFit:
    def _table(self, rng, n=400):
        return {"x1": rng.normal(size=n), "x2": rng.normal(size=n)}

    def test_regression_learns_signal(self):
        rng = np.random.default_rng(7)
        table = self._table(rng)
        y = 2.0 * table["x1"] + rng.normal(0, 0.1, 400)
        ens = fit(table, y, _fast_cfg(max_epochs=30))
        pred = predict(ens, table)
        r2 = 1.0 - loss_mse(pred, y) / np.var(y)
        assert r2 > 0.8

    def test_classification_learns_signal(self):
        rng = np.random.default_rng(8)
        table = self._table(rng)
        y = (table["x1"] > 0).astype(float)
        ens = fit(table, y, _fast_cfg(task="classification", max_epochs=30))
        pred = predict(ens, table)
        assert np.all((pred >= 0) & (pred <= 1))
        assert np.mean((pred > 0.5) == y) > 0.9

    def test_survival_output_grid(self):
        rng = np.random.default_rng(9)
        table = self._table(rng, 250)
        t = rng.exponential(np.exp(-0.5 * table["x1"])) + 0.01
        c = rng.exponential(2.0, 250)
        y = {"event": t <= c, "time": np.minimum(t, c)}
        cfg = _fast_cfg(task="survival", n_eval_times=5, max_epochs=8)
        ens = fit(table, y, cfg)
        pred = predict(ens, table)
        assert pred.shape == (250, ens.eval_times.size)
        assert np.all((pred > 0) & (pred < 1))
        assert 1 <= ens.eval_times.size <= 5

    def test_ensemble_averages_split_predictions(self):
        rng = np.random.default_rng(10)
        table = self._table(rng, 200)
        y = table["x1"].copy()
        ens = fit(table, y, _fast_cfg(n_val_splits=3, max_epochs=4))
        assert len(ens.splits) == 3
        from namlite.data import transform

        codes = transform(table, ens.bin_maps).codes
        by_hand = np.mean([sp.predict_linked(codes)[:, 0] for sp in ens.splits], axis=0)
        np.testing.assert_array_equal(predict(ens, table), by_hand)

    def test_folds_match_split_helper(self):
        rng = np.random.default_rng(11)
        table = self._table(rng, 120)
        ens = fit(table, table["x1"], _fast_cfg(max_epochs=2))
        want = split_folds(120, 2, seed=3)
        for (tr_a, va_a), (tr_b, va_b) in zip(ens.folds(), want):
            np.testing.assert_array_equal(tr_a, tr_b)
            np.testing.assert_array_equal(va_a, va_b)

    def test_fit_is_deterministic(self):
        rng = np.random.default_rng(12)
        table = self._table(rng, 150)
        y = table["x1"] + table["x2"]
        a = fit(table, y, _fast_cfg(max_epochs=5))
        b = fit(table, y, _fast_cfg(max_epochs=5))
        assert dumps_model(a) == dumps_model(b)

    def test_selected_feature_subset_restricts_model(self):
        rng = np.random.default_rng(13)
        table = self._table(rng, 150)
        ens = fit(table, table["x1"], _fast_cfg(max_epochs=2), selected_feats=["x1"])
        assert ens.feature_names == ["x1"]
        with pytest.raises(DataError):
            fit(table, table["x1"], _fast_cfg(), selected_feats=["nope"])

    def test_explicit_pairs_are_attached_in_order(self):
        rng = np.random.default_rng(14)
        table = {c: rng.normal(size=150) for c in ("a", "b", "c")}
        y = table["a"] * table["b"]
        ens = fit(
            table, y, _fast_cfg(max_epochs=3),
            selected_pairs=[("c", "a")],
        )
        assert ens.pair_indices == [(0, 2)]
        for sp in ens.splits:
            assert sp.core.pairs.n_pairs == 1

    def test_pair_search_picks_interacting_pair(self):
        rng = np.random.default_rng(15)
        table = {c: rng.normal(size=500) for c in ("a", "b", "c")}
        y = np.sign(table["a"]) * np.sign(table["b"]) + 0.05 * rng.normal(size=500)
        cfg = _fast_cfg(num_pairs=1, max_epochs=10)
        ens = fit(table, y, cfg)
        assert ens.selected_pairs == [("a", "b")]

    def test_monotone_name_validation(self):
        rng = np.random.default_rng(16)
        table = self._table(rng, 80)
        with pytest.raises(ConfigError):
            fit(table, table["x1"], _fast_cfg(monotone={"zz": 1}, max_epochs=1))

    def test_survival_label_length_mismatch(self):
        rng = np.random.default_rng(17)
        table = self._table(rng, 50)
        with pytest.raises(DataError):
            fit(table, {"event": [True], "time": [1.0]}, _fast_cfg(task="survival"))

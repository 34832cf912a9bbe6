"""Losses, the minibatch trainer, centering, and the k-split ensemble.

Training runs in phases. Final fits keep every gate fixed at exactly 1;
gates only move during selection phases, so a finalized model always
satisfies the saturated-gate centering identity. Pair effects train
against frozen mains whose per-sample contribution is precomputed once.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import survival as sv
from .core import (
    KernelConfig,
    ModelCore,
    backward_pass,
    bin_tables,
    copy_params,
    flat_pair_codes,
    forward_pass,
    init_core,
    load_params,
    pair_bin_tables,
    param_dict,
    sigmoid,
    smooth_step,
)
from .data import (
    BinMap,
    FeatureSchema,
    fit_bins,
    infer_schema,
    split_folds,
    transform,
)
from .errors import ConfigError, DataError, TrainingError

__all__ = [
    "TrainConfig",
    "SingleSplitModel",
    "EnsembleModel",
    "loss_mse",
    "loss_bce",
    "loss_ipcw",
    "fit_single_split",
    "fit_pairs",
    "finalize",
    "fit",
    "predict",
]

TASKS = ("regression", "classification", "survival")


@dataclass
class TrainConfig:
    task: str = "regression"
    n_val_splits: int = 5
    batch_size: int = 128
    max_epochs: int = 100
    early_stop_patience: int = 5
    learning_rate: float = 5e-3
    num_pairs: int = 0
    embedding_dim: int = 16
    hidden_sizes: tuple[int, ...] = (32,)
    activation: str = "relu"
    kernel_weight: float = 3.0  # phi
    kernel_size: int = 5
    max_bins: int = 32
    min_samples_per_bin: int | None = None
    monotone: dict[str, int] = field(default_factory=dict)
    censor_estimator: str = "km"
    n_eval_times: int | None = None
    pair_select_reg: float = 1e-3
    threads: int | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.n_val_splits < 2:
            raise ConfigError("n_val_splits must be >= 2")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.num_pairs < 0:
            raise ConfigError("num_pairs must be >= 0")
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError("hidden_sizes must be positive")
        if self.kernel_weight < 0 or self.kernel_size < 0:
            raise ConfigError("kernel parameters must be non-negative")
        if self.censor_estimator not in ("km", "cox"):
            raise ConfigError("censor_estimator must be 'km' or 'cox'")
        for name, d in self.monotone.items():
            if d not in (-1, 0, 1):
                raise ConfigError(f"monotone direction for {name!r} must be -1, 0, or +1")
        if self.task == "survival" and any(d != 0 for d in self.monotone.values()):
            raise ConfigError("monotone constraints require a scalar output task")

    def kernel(self) -> KernelConfig:
        return KernelConfig(phi=self.kernel_weight, size=self.kernel_size)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "n_val_splits": self.n_val_splits,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "early_stop_patience": self.early_stop_patience,
            "learning_rate": self.learning_rate,
            "num_pairs": self.num_pairs,
            "embedding_dim": self.embedding_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "activation": self.activation,
            "kernel_weight": self.kernel_weight,
            "kernel_size": self.kernel_size,
            "max_bins": self.max_bins,
            "min_samples_per_bin": self.min_samples_per_bin,
            "monotone": dict(self.monotone),
            "censor_estimator": self.censor_estimator,
            "n_eval_times": self.n_eval_times,
            "pair_select_reg": self.pair_select_reg,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        cfg = cls(**d)
        cfg.hidden_sizes = tuple(cfg.hidden_sizes)
        cfg.monotone = dict(cfg.monotone)
        return cfg


# --- losses -------------------------------------------------------------------


def loss_mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise DataError("mse inputs must share a shape")
    return float(np.mean((pred - target) ** 2))


def loss_bce(pred, target) -> float:
    """Mean negative Bernoulli log-likelihood of probabilities `pred`."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if not np.all(np.isin(target, (0.0, 1.0))):
        raise DataError("bce targets must be 0 or 1")
    p = np.clip(pred, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(target * np.log(p) + (1.0 - target) * np.log1p(-p)))


def loss_ipcw(cdf, labels, eval_times, censor) -> float:
    """Censoring-weighted Brier-style loss over the evaluation grid.

    `cdf[i, k]` is the predicted P(T <= t_k | X_i). With no censoring the
    weights collapse to 1 and this is the plain Brier mean.
    """
    cdf = np.asarray(cdf, dtype=np.float64)
    if cdf.ndim == 1:
        cdf = cdf[:, None]
    w_alive, w_event = sv.ipcw_weights(labels, eval_times, censor)
    if cdf.shape != w_alive.shape:
        raise DataError("cdf matrix must be n_samples x n_eval_times")
    return float(np.mean(w_alive * cdf**2 + w_event * (1.0 - cdf) ** 2))


class _MseObjective:
    link = "identity"

    def __init__(self, y: np.ndarray):
        self.y = y
        self.out_dim = 1

    def loss_grad(self, eta, rows):
        err = eta[:, 0] - self.y[rows]
        return float(np.mean(err**2)), (2.0 * err / rows.size)[:, None]

    def loss(self, eta, rows):
        return float(np.mean((eta[:, 0] - self.y[rows]) ** 2))


class _BceObjective:
    link = "sigmoid"

    def __init__(self, y: np.ndarray):
        self.y = y
        self.out_dim = 1

    def loss_grad(self, eta, rows):
        z = eta[:, 0]
        y = self.y[rows]
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        return loss, ((sigmoid(z) - y) / rows.size)[:, None]

    def loss(self, eta, rows):
        z = eta[:, 0]
        y = self.y[rows]
        return float(np.mean(np.logaddexp(0.0, z) - y * z))


class _IpcwObjective:
    link = "sigmoid"

    def __init__(self, w_alive: np.ndarray, w_event: np.ndarray):
        self.w_alive = w_alive
        self.w_event = w_event
        self.out_dim = w_alive.shape[1]

    def loss_grad(self, eta, rows):
        p = sigmoid(eta)
        w1 = self.w_alive[rows]
        w2 = self.w_event[rows]
        loss = float(np.mean(w1 * p**2 + w2 * (1.0 - p) ** 2))
        d_p = (2.0 * w1 * p - 2.0 * w2 * (1.0 - p)) / p.size
        return loss, d_p * p * (1.0 - p)

    def loss(self, eta, rows):
        p = sigmoid(eta)
        return float(
            np.mean(self.w_alive[rows] * p**2 + self.w_event[rows] * (1.0 - p) ** 2)
        )


# --- optimizer ----------------------------------------------------------------


class Adam:
    """Adaptive-moment descent over named parameter arrays."""

    def __init__(self, params: dict, keys: list[str], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.keys = [k for k in keys if k in params]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(params[k]) for k in self.keys}
        self.v = {k: np.zeros_like(params[k]) for k in self.keys}

    def step(self, grads: dict) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k in self.keys:
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g**2
            self.params[k] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def zero_rows(self, prefix: str, row: int) -> None:
        """Kill momentum for one feature/pair so it never moves again."""
        for k in self.keys:
            if k.startswith(prefix):
                self.m[k][row] = 0.0
                self.v[k][row] = 0.0


# --- phased training loop -----------------------------------------------------


@dataclass(frozen=True)
class _Phase:
    name: str
    train_feats: bool = False
    train_pairs: bool = False
    feat_gates: bool = False
    pair_gates: bool = False
    prune: bool = False
    reg: float = 0.0
    pair_reg: float = 0.0


def _phase_keys(core: ModelCore, phase: _Phase) -> list[str]:
    keys = []
    if phase.train_feats:
        keys += ["feat_emb"]
        keys += [f"feat_W{l}" for l in range(len(core.feats.weights))]
        keys += [f"feat_b{l}" for l in range(len(core.feats.weights))]
        if np.any(core.feats.mono_dir != 0):
            keys.append("feat_off")
        if phase.feat_gates:
            keys.append("feat_mu")
    if phase.train_pairs and core.pairs is not None and core.pairs.n_pairs > 0:
        keys += ["pair_emb"]
        keys += [f"pair_W{l}" for l in range(len(core.pairs.weights))]
        keys += [f"pair_b{l}" for l in range(len(core.pairs.weights))]
        if phase.pair_gates:
            keys.append("pair_mu")
    return keys


def _reg_value(core: ModelCore, phase: _Phase) -> float:
    val = 0.0
    if phase.reg > 0:
        val += phase.reg * float(np.sum(core.gates()))
    if phase.pair_reg > 0 and core.pairs is not None:
        val += phase.pair_reg * float(np.sum(core.pair_gates()))
    return val


def _snapshot(core: ModelCore):
    pairs_active = None
    if core.pairs is not None:
        pairs_active = core.pairs.active.copy()
    return copy_params(core), core.feats.active.copy(), pairs_active


def _restore(core: ModelCore, snap) -> None:
    params, feat_active, pairs_active = snap
    load_params(core, params)
    core.feats.active[...] = feat_active
    if pairs_active is not None:
        core.pairs.active[...] = pairs_active


def _run_phase(
    core: ModelCore,
    phase: _Phase,
    codes_tr: np.ndarray,
    codes_val: np.ndarray,
    obj_tr,
    obj_val,
    cfg: TrainConfig,
    shuffle_rng: np.random.Generator,
) -> list[dict]:
    n_tr = codes_tr.shape[0]
    n_val = codes_val.shape[0]
    pc_tr = flat_pair_codes(core, codes_tr) if phase.train_pairs else None
    pc_val = flat_pair_codes(core, codes_val) if phase.train_pairs else None
    off_tr = off_val = None
    if not phase.train_feats:
        # Mains are frozen: bake their contribution into a fixed offset.
        off_tr = forward_pass(core, codes_tr, compute_pairs=False).eta
        off_val = forward_pass(core, codes_val, compute_pairs=False).eta
    adam = Adam(param_dict(core), _phase_keys(core, phase), cfg.learning_rate)
    best = _snapshot(core)
    best_val = np.inf
    bad = 0
    history = []
    batch = min(cfg.batch_size, n_tr)
    val_rows = np.arange(n_val)
    for epoch in range(cfg.max_epochs):
        perm = shuffle_rng.permutation(n_tr)
        epoch_loss = 0.0
        for start in range(0, n_tr, batch):
            rows = perm[start : start + batch]
            cache = forward_pass(
                core,
                codes_tr[rows],
                pair_codes=None if pc_tr is None else pc_tr[rows],
                eta_offset=None if off_tr is None else off_tr[rows],
                compute_feats=phase.train_feats,
                compute_pairs=phase.train_pairs,
            )
            loss, d_eta = obj_tr.loss_grad(cache.eta, rows)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"training loss diverged at epoch {epoch} ({phase.name} phase)"
                )
            grads = backward_pass(
                core, cache, d_eta, reg_param=phase.reg, pair_reg_param=phase.pair_reg
            )
            adam.step(grads)
            epoch_loss += loss * rows.size / n_tr
        if phase.prune:
            _prune(core, adam, phase)
        vcache = forward_pass(
            core,
            codes_val,
            pair_codes=pc_val,
            eta_offset=off_val,
            compute_feats=phase.train_feats,
            compute_pairs=phase.train_pairs,
        )
        val = obj_val.loss(vcache.eta, val_rows) + _reg_value(core, phase)
        if not np.isfinite(val):
            raise TrainingError(
                f"validation loss diverged at epoch {epoch} ({phase.name} phase)"
            )
        history.append(
            {"epoch": epoch, "train_loss": epoch_loss, "val_loss": val}
        )
        if val < best_val:
            best_val = val
            best = _snapshot(core)
            bad = 0
        else:
            bad += 1
            if bad >= cfg.early_stop_patience:
                break
    _restore(core, best)
    return history


def _prune(core: ModelCore, adam: Adam, phase: _Phase) -> None:
    if phase.feat_gates:
        s = smooth_step(core.feats.mu, core.gamma)
        for j in np.flatnonzero(core.feats.active & (s <= 0.0)):
            core.feats.active[j] = False
            adam.zero_rows("feat_", int(j))
    if phase.pair_gates and core.pairs is not None:
        s = smooth_step(core.pairs.mu, core.pair_gamma)
        for q in np.flatnonzero(core.pairs.active & (s <= 0.0)):
            core.pairs.active[q] = False
            adam.zero_rows("pair_", int(q))


# --- objectives per split -----------------------------------------------------


def _normalize_targets(task: str, y, n: int):
    if task == "survival":
        labels = sv.as_survival_labels(y)
        if labels.size != n:
            raise DataError(f"expected {n} labels, got {labels.size}")
        return labels
    arr = np.asarray(y, dtype=np.float64).reshape(-1)
    if arr.size != n:
        raise DataError(f"expected {n} targets, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise DataError("targets must be finite")
    if task == "classification" and not np.all(np.isin(arr, (0.0, 1.0))):
        raise DataError("classification targets must be 0 or 1")
    return arr


def _censor_model(cfg: TrainConfig, labels: np.ndarray, codes: np.ndarray):
    """Censoring-survival estimator fit on one training fold.

    The Cox route uses the fold's bin codes as its design matrix, dropping
    constant columns; with no censored samples both routes degenerate to
    the all-ones curve.
    """
    flipped = labels.copy()
    flipped["event"] = ~labels["event"]
    if cfg.censor_estimator == "km" or not flipped["event"].any():
        curve = sv.kaplan_meier(flipped)
        return ("km", curve, None)
    X = codes.astype(np.float64)
    keep = np.flatnonzero(X.std(axis=0) > 0)
    if keep.size == 0:
        return ("km", sv.kaplan_meier(flipped), None)
    model = sv.cox_fit(X[:, keep], flipped)
    return ("cox", model, keep)


def _censor_for(censor, codes: np.ndarray):
    kind, est, keep = censor
    if kind == "km":
        return est
    return sv.CoxCensor(est, codes[:, keep].astype(np.float64))


def _make_objectives(
    cfg: TrainConfig,
    y_tr,
    y_val,
    codes_tr: np.ndarray,
    codes_val: np.ndarray,
    eval_times: np.ndarray | None,
):
    if cfg.task == "regression":
        return _MseObjective(y_tr), _MseObjective(y_val), None
    if cfg.task == "classification":
        return _BceObjective(y_tr), _BceObjective(y_val), None
    if eval_times is None:
        eval_times = sv.eval_time_grid(y_tr, cfg.n_eval_times)
    censor = _censor_model(cfg, y_tr, codes_tr)
    w1, w2 = sv.ipcw_weights(y_tr, eval_times, _censor_for(censor, codes_tr))
    v1, v2 = sv.ipcw_weights(y_val, eval_times, _censor_for(censor, codes_val))
    return _IpcwObjective(w1, w2), _IpcwObjective(v1, v2), eval_times


# --- split models -------------------------------------------------------------


@dataclass
class SingleSplitModel:
    core: ModelCore
    beta0: np.ndarray  # (out,)
    c_feat: np.ndarray  # (p, out)
    c_pair: np.ndarray  # (q, out)
    history: dict
    val_loss: float

    def predict_linked(self, codes: np.ndarray) -> np.ndarray:
        """Centered-route prediction g(beta0 + sum of centered contributions)."""
        eta = self.predict_eta(codes)
        if self.core.link == "sigmoid":
            return sigmoid(eta)
        return eta

    def predict_eta(self, codes: np.ndarray) -> np.ndarray:
        core = self.core
        tabs = bin_tables(core)
        p = core.feats.n_features
        vals = tabs[np.arange(p)[None, :], codes]
        eta = self.beta0[None, :] - self.c_feat.sum(axis=0)[None, :]
        eta = eta + np.einsum("bpo,p->bo", vals, core.gates())
        if core.pairs is not None and core.pairs.n_pairs > 0:
            ptabs = pair_bin_tables(core)
            pc = flat_pair_codes(core, codes)
            q = core.pairs.n_pairs
            pvals = ptabs[np.arange(q)[None, :], pc]
            eta = eta - self.c_pair.sum(axis=0)[None, :]
            eta = eta + np.einsum("bqo,q->bo", pvals, core.pair_gates())
        return eta


def finalize(core: ModelCore, codes_tr: np.ndarray, history: dict, val_loss: float) -> SingleSplitModel:
    """Compute centering constants and the post-hoc intercept.

    c_j is the training mean of the gated shape output; beta0 is the sum
    of all c's, so centered and raw routes agree when gates sit at 0 or 1.
    """
    tabs = bin_tables(core)
    p = core.feats.n_features
    vals = tabs[np.arange(p)[None, :], codes_tr]
    c_feat = core.gates()[:, None] * vals.mean(axis=0)
    if core.pairs is not None and core.pairs.n_pairs > 0:
        ptabs = pair_bin_tables(core)
        pc = flat_pair_codes(core, codes_tr)
        q = core.pairs.n_pairs
        pvals = ptabs[np.arange(q)[None, :], pc]
        c_pair = core.pair_gates()[:, None] * pvals.mean(axis=0)
    else:
        c_pair = np.zeros((0, core.out_dim))
    beta0 = c_feat.sum(axis=0) + c_pair.sum(axis=0)
    return SingleSplitModel(
        core=core,
        beta0=beta0,
        c_feat=c_feat,
        c_pair=c_pair,
        history=history,
        val_loss=val_loss,
    )


def _bin_counts(bin_maps) -> np.ndarray:
    return np.array([bm.n_bins for bm in bin_maps], dtype=np.int64)


def _mono_vector(cfg: TrainConfig, feature_names: list[str]) -> np.ndarray:
    mono = np.zeros(len(feature_names), dtype=np.int64)
    for name, d in cfg.monotone.items():
        if name not in feature_names:
            raise ConfigError(f"monotone constraint names unknown feature {name!r}")
        mono[feature_names.index(name)] = d
    return mono


def fit_single_split(
    codes_tr: np.ndarray,
    y_tr,
    codes_val: np.ndarray,
    y_val,
    n_bins: np.ndarray,
    cfg: TrainConfig,
    *,
    pairs: list | None = None,
    eval_times: np.ndarray | None = None,
    mono_dir: np.ndarray | None = None,
    seed_seq: np.random.SeedSequence | None = None,
) -> SingleSplitModel:
    """Train mains (and optionally pairs) on one train/validation split.

    Gates stay fixed at 1 throughout; early stopping restores the epoch
    with the lowest validation loss.
    """
    if seed_seq is None:
        seed_seq = np.random.SeedSequence(cfg.seed)
    init_ss, shuffle_ss = seed_seq.spawn(2)
    init_rng = np.random.default_rng(init_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    obj_tr, obj_val, eval_times = _make_objectives(
        cfg, y_tr, y_val, codes_tr, codes_val, eval_times
    )
    link = "identity" if cfg.task == "regression" else "sigmoid"
    core = init_core(
        n_bins,
        obj_tr.out_dim,
        cfg.kernel(),
        init_rng,
        embedding_dim=cfg.embedding_dim,
        hidden_sizes=tuple(cfg.hidden_sizes),
        activation=cfg.activation,
        link=link,
        mono_dir=mono_dir,
    )
    history = {
        "mains": _run_phase(
            core,
            _Phase("mains", train_feats=True),
            codes_tr,
            codes_val,
            obj_tr,
            obj_val,
            cfg,
            shuffle_rng,
        )
    }
    if pairs:
        core, phist = fit_pairs(
            core,
            pairs,
            codes_tr,
            y_tr,
            codes_val,
            y_val,
            cfg,
            rng=init_rng,
            shuffle_rng=shuffle_rng,
            eval_times=eval_times,
            objectives=(obj_tr, obj_val),
        )
        history["pairs"] = phist
    val_losses = [h["val_loss"] for hs in history.values() for h in hs]
    val_loss = min(val_losses) if val_losses else np.inf
    return finalize(core, codes_tr, history, val_loss)


def _attach_pairs(
    core: ModelCore,
    pairs: list,
    rng: np.random.Generator,
    cfg: TrainConfig,
    pair_gamma: float,
    trainable_gates: bool,
) -> None:
    fresh = init_core(
        core.feats.n_bins,
        core.out_dim,
        cfg.kernel(),
        rng,
        embedding_dim=cfg.embedding_dim,
        hidden_sizes=tuple(cfg.hidden_sizes),
        activation=cfg.activation,
        link=core.link,
        gamma=core.gamma,
        pair_gamma=pair_gamma,
        pairs=list(pairs),
        pair_gates_trainable=trainable_gates,
    )
    core.pairs = fresh.pairs
    core.pair_gamma = pair_gamma
    core.pair_gates_trainable = trainable_gates


def fit_pairs(
    core: ModelCore,
    pairs: list,
    codes_tr: np.ndarray,
    y_tr,
    codes_val: np.ndarray,
    y_val,
    cfg: TrainConfig,
    *,
    rng: np.random.Generator | None = None,
    shuffle_rng: np.random.Generator | None = None,
    eval_times: np.ndarray | None = None,
    objectives=None,
) -> tuple[ModelCore, list[dict]]:
    """Fit pair effects on top of frozen mains; an empty set is a no-op."""
    if not pairs:
        return core, []
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if shuffle_rng is None:
        shuffle_rng = np.random.default_rng(cfg.seed + 1)
    if objectives is None:
        obj_tr, obj_val, eval_times = _make_objectives(
            cfg, y_tr, y_val, codes_tr, codes_val, eval_times
        )
    else:
        obj_tr, obj_val = objectives
    _attach_pairs(core, pairs, rng, cfg, core.pair_gamma, trainable_gates=False)
    hist = _run_phase(
        core,
        _Phase("pairs", train_pairs=True),
        codes_tr,
        codes_val,
        obj_tr,
        obj_val,
        cfg,
        shuffle_rng,
    )
    return core, hist


# --- pair selection on the first split ----------------------------------------


def _main_importance(core: ModelCore, codes: np.ndarray) -> np.ndarray:
    tabs = bin_tables(core)
    p = core.feats.n_features
    vals = tabs[np.arange(p)[None, :], codes]
    contrib = vals * core.gates()[None, :, None]
    return np.abs(contrib).mean(axis=(0, 2))


def _pair_universe(core: ModelCore, codes: np.ndarray) -> list[tuple[int, int]]:
    """All pairs, or pairs among the top 20 features by main importance."""
    p = core.feats.n_features
    if p > 20:
        imp = _main_importance(core, codes)
        top = np.sort(np.argsort(-imp, kind="stable")[:20])
    else:
        top = np.arange(p)
    return [(int(a), int(b)) for i, a in enumerate(top) for b in top[i + 1 :]]


def _select_pairs(
    core: ModelCore,
    codes_tr: np.ndarray,
    codes_val: np.ndarray,
    obj_tr,
    obj_val,
    cfg: TrainConfig,
    rng: np.random.Generator,
    shuffle_rng: np.random.Generator,
) -> list[tuple[int, int]]:
    """Train pair gates over the candidate universe; keep the largest."""
    from .select import default_gamma

    universe = _pair_universe(core, codes_tr)
    if not universe:
        return []
    gamma = default_gamma(codes_tr.shape[0], cfg.batch_size, cfg.embedding_dim)
    _attach_pairs(core, universe, rng, cfg, gamma / 4.0, trainable_gates=True)
    _run_phase(
        core,
        _Phase(
            "pair-select",
            train_pairs=True,
            pair_gates=True,
            prune=True,
            pair_reg=cfg.pair_select_reg,
        ),
        codes_tr,
        codes_val,
        obj_tr,
        obj_val,
        cfg,
        shuffle_rng,
    )
    gates = core.pair_gates()
    order = sorted(range(len(universe)), key=lambda i: (-gates[i], universe[i]))
    chosen = sorted(universe[i] for i in order[: cfg.num_pairs])
    core.pairs = None
    core.pair_gates_trainable = False
    return chosen


# --- ensemble -----------------------------------------------------------------


@dataclass
class EnsembleModel:
    task: str
    config: TrainConfig
    schema: list[FeatureSchema]
    bin_maps: list[BinMap]
    selected_pairs: list[tuple[str, str]]
    eval_times: np.ndarray | None
    n_samples: int
    splits: list[SingleSplitModel]

    @property
    def feature_names(self) -> list[str]:
        return [bm.feature for bm in self.bin_maps]

    @property
    def pair_indices(self) -> list[tuple[int, int]]:
        names = self.feature_names
        return [(names.index(a), names.index(b)) for a, b in self.selected_pairs]

    def folds(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return split_folds(self.n_samples, self.config.n_val_splits, self.config.seed)

    def predict(self, table) -> np.ndarray:
        codes = transform(table, self.bin_maps).codes
        return self.predict_codes(codes)

    def predict_codes(self, codes: np.ndarray) -> np.ndarray:
        preds = [sp.predict_linked(codes) for sp in self.splits]
        avg = np.mean(preds, axis=0)
        if self.task == "survival":
            return avg
        return avg[:, 0]


def _resolve_features(table, schema, selected_feats):
    if schema is None:
        schema = infer_schema(table)
    if selected_feats is not None:
        wanted = set(selected_feats)
        missing = wanted - {fs.name for fs in schema}
        if missing:
            raise DataError(f"selected features not in table: {sorted(missing)}")
        schema = [fs for fs in schema if fs.name in wanted]
    if not schema:
        raise ConfigError("no features to fit")
    return schema


def fit(
    table,
    y,
    cfg: TrainConfig,
    *,
    schema: list[FeatureSchema] | None = None,
    selected_feats: list[str] | None = None,
    selected_pairs: list[tuple[str, str]] | None = None,
) -> EnsembleModel:
    """Fit the k-split ensemble: bins once, pairs picked on split 1.

    Each split trains on its own train/validation fold; predictions are
    averaged across splits after the link.
    """
    cfg.validate()
    schema = _resolve_features(table, schema, selected_feats)
    bin_maps = fit_bins(table, schema, cfg.max_bins, cfg.min_samples_per_bin)
    binned = transform(table, bin_maps)
    codes = binned.codes
    n = codes.shape[0]
    y = _normalize_targets(cfg.task, y, n)
    feature_names = [bm.feature for bm in bin_maps]
    mono = _mono_vector(cfg, feature_names)
    n_bins = _bin_counts(bin_maps)
    eval_times = None
    if cfg.task == "survival":
        eval_times = sv.eval_time_grid(y, cfg.n_eval_times)
    folds = split_folds(n, cfg.n_val_splits, cfg.seed)
    split_seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_val_splits)

    pair_idx: list[tuple[int, int]] = []
    prebuilt0: ModelCore | None = None
    history0: dict = {}
    if selected_pairs:
        names = feature_names
        for a, b in selected_pairs:
            if a not in names or b not in names:
                raise DataError(f"selected pair ({a!r}, {b!r}) not in features")
        raw_idx = [(names.index(a), names.index(b)) for a, b in selected_pairs]
        pair_idx = sorted((min(a, b), max(a, b)) for a, b in raw_idx)
    elif cfg.num_pairs > 0 and len(feature_names) >= 2:
        # Pairs are chosen once, on the first split's fitted mains.
        tr, va = folds[0]
        init_ss, shuffle_ss = split_seeds[0].spawn(2)
        init_rng = np.random.default_rng(init_ss)
        shuffle_rng = np.random.default_rng(shuffle_ss)
        obj_tr, obj_val, eval_times = _make_objectives(
            cfg, _slice_targets(cfg.task, y, tr), _slice_targets(cfg.task, y, va),
            codes[tr], codes[va], eval_times,
        )
        link = "identity" if cfg.task == "regression" else "sigmoid"
        core = init_core(
            n_bins,
            obj_tr.out_dim,
            cfg.kernel(),
            init_rng,
            embedding_dim=cfg.embedding_dim,
            hidden_sizes=tuple(cfg.hidden_sizes),
            activation=cfg.activation,
            link=link,
            mono_dir=mono,
        )
        history0["mains"] = _run_phase(
            core, _Phase("mains", train_feats=True),
            codes[tr], codes[va], obj_tr, obj_val, cfg, shuffle_rng,
        )
        pair_idx = _select_pairs(
            core, codes[tr], codes[va], obj_tr, obj_val, cfg, init_rng, shuffle_rng
        )
        prebuilt0 = core

    def run_split(i: int) -> SingleSplitModel:
        tr, va = folds[i]
        y_tr = _slice_targets(cfg.task, y, tr)
        y_val = _slice_targets(cfg.task, y, va)
        if i == 0 and prebuilt0 is not None:
            init_ss, shuffle_ss = split_seeds[0].spawn(2)
            rng = np.random.default_rng(init_ss)
            shuffle_rng = np.random.default_rng(shuffle_ss)
            obj_tr, obj_val, _ = _make_objectives(
                cfg, y_tr, y_val, codes[tr], codes[va], eval_times
            )
            history = dict(history0)
            if pair_idx:
                _, phist = fit_pairs(
                    prebuilt0, pair_idx, codes[tr], y_tr, codes[va], y_val, cfg,
                    rng=rng, shuffle_rng=shuffle_rng, eval_times=eval_times,
                    objectives=(obj_tr, obj_val),
                )
                history["pairs"] = phist
            vals = [h["val_loss"] for hs in history.values() for h in hs]
            return finalize(prebuilt0, codes[tr], history,
                            min(vals) if vals else np.inf)
        return fit_single_split(
            codes[tr], y_tr, codes[va], y_val, n_bins, cfg,
            pairs=pair_idx or None,
            eval_times=eval_times,
            mono_dir=mono,
            seed_seq=split_seeds[i],
        )

    threads = cfg.threads if cfg.threads else cfg.n_val_splits
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            splits = list(pool.map(run_split, range(cfg.n_val_splits)))
    else:
        splits = [run_split(i) for i in range(cfg.n_val_splits)]
    pair_names = [(feature_names[a], feature_names[b]) for a, b in pair_idx]
    return EnsembleModel(
        task=cfg.task,
        config=replace(
            cfg, hidden_sizes=tuple(cfg.hidden_sizes), monotone=dict(cfg.monotone)
        ),
        schema=schema,
        bin_maps=list(bin_maps),
        selected_pairs=pair_names,
        eval_times=eval_times,
        n_samples=n,
        splits=splits,
    )


def _slice_targets(task: str, y, idx: np.ndarray):
    return y[idx]


def predict(ensemble: EnsembleModel, table) -> np.ndarray:
    """Transform through stored bin maps and average linked split outputs."""
    return ensemble.predict(table)

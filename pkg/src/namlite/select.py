"""Embedded feature and pair selection: gate training, pruning, lambda path."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .core import forward_pass, init_core, sigmoid
from .data import fit_bins, split_folds, transform
from .errors import ConfigError
from .train import (
    TrainConfig,
    _bin_counts,
    _make_objectives,
    _mono_vector,
    _normalize_targets,
    _pair_universe,
    _Phase,
    _resolve_features,
    _run_phase,
    _slice_targets,
)

__all__ = [
    "SelectionConfig",
    "SelectionResult",
    "PathRecord",
    "PathResult",
    "default_gamma",
    "select_features",
    "regularization_path",
    "lookup_feats",
]

log = logging.getLogger("namlite")


def default_gamma(n_samples: int, batch_size: int, embedding_dim: int) -> float:
    """Gate width scaled to steps per epoch and embedding size, capped at 1."""
    if n_samples <= 0 or batch_size <= 0 or embedding_dim <= 0:
        raise ConfigError("default_gamma arguments must be positive")
    return min((n_samples / batch_size) * (1.0 / 250.0) * (16.0 / embedding_dim), 1.0)


@dataclass
class SelectionConfig:
    reg_param: float = 0.0
    pair_reg_param: float = 0.0
    gamma: float | None = None
    pair_gamma: float | None = None
    select_pairs: bool = False

    def validate(self) -> None:
        if self.reg_param < 0 or self.pair_reg_param < 0:
            raise ConfigError("regularization parameters must be >= 0")
        if self.gamma is not None and self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.pair_gamma is not None and self.pair_gamma <= 0:
            raise ConfigError("pair_gamma must be positive")


@dataclass
class SelectionResult:
    selected_feats: list[str]
    selected_pairs: list[tuple[str, str]]
    gate_values: dict[str, float]
    pair_gate_values: dict[tuple[str, str], float] = field(default_factory=dict)


@dataclass(frozen=True)
class PathRecord:
    reg_param: float
    num_feats: int
    val_loss: float
    val_score: float
    selected_feats: tuple[str, ...]


@dataclass(frozen=True)
class PathResult:
    records: list[PathRecord]
    feats: dict[int, list[str]]


def lookup_feats(feats: dict[int, list[str]], num: int) -> list[str]:
    """Exact key, else the nearest smaller recorded size."""
    if num in feats:
        return feats[num]
    smaller = [k for k in feats if k < num]
    if not smaller:
        raise KeyError(f"no recorded selection of size <= {num}")
    return feats[max(smaller)]


# --- shared setup --------------------------------------------------------------


@dataclass
class _SelectionRun:
    core: object
    codes_tr: np.ndarray
    codes_val: np.ndarray
    obj_tr: object
    obj_val: object
    feature_names: list[str]
    pair_universe: list[tuple[int, int]]
    phase_flags: dict


def _build_selection(table, y, cfg: TrainConfig, sel: SelectionConfig, schema):
    cfg.validate()
    sel.validate()
    schema = _resolve_features(table, schema, None)
    bin_maps = fit_bins(table, schema, cfg.max_bins, cfg.min_samples_per_bin)
    codes = transform(table, bin_maps).codes
    n = codes.shape[0]
    y = _normalize_targets(cfg.task, y, n)
    names = [bm.feature for bm in bin_maps]
    mono = _mono_vector(cfg, names)
    tr, va = split_folds(n, cfg.n_val_splits, cfg.seed)[0]
    y_tr = _slice_targets(cfg.task, y, tr)
    y_val = _slice_targets(cfg.task, y, va)
    obj_tr, obj_val, _ = _make_objectives(cfg, y_tr, y_val, codes[tr], codes[va], None)
    gamma = sel.gamma or default_gamma(tr.size, cfg.batch_size, cfg.embedding_dim)
    pair_gamma = sel.pair_gamma or gamma / 4.0
    ss = np.random.SeedSequence(cfg.seed).spawn(cfg.n_val_splits)[0]
    init_ss, shuffle_ss = ss.spawn(2)
    init_rng = np.random.default_rng(init_ss)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    link = "identity" if cfg.task == "regression" else "sigmoid"
    universe: list[tuple[int, int]] = []
    if sel.select_pairs and len(names) >= 2:
        universe = _selection_pair_universe(
            codes[tr], codes[va], obj_tr, obj_val, cfg, mono, link, init_rng,
            shuffle_rng, _bin_counts(bin_maps),
        )
    core = init_core(
        _bin_counts(bin_maps),
        obj_tr.out_dim,
        cfg.kernel(),
        init_rng,
        embedding_dim=cfg.embedding_dim,
        hidden_sizes=tuple(cfg.hidden_sizes),
        activation=cfg.activation,
        link=link,
        gamma=gamma,
        pair_gamma=pair_gamma,
        gates_trainable=True,
        pairs=universe or None,
        mono_dir=mono,
        pair_gates_trainable=bool(universe),
    )
    return _SelectionRun(
        core=core,
        codes_tr=codes[tr],
        codes_val=codes[va],
        obj_tr=obj_tr,
        obj_val=obj_val,
        feature_names=names,
        pair_universe=universe,
        phase_flags={"shuffle_rng": shuffle_rng, "select_pairs": bool(universe)},
    )


def _selection_pair_universe(
    codes_tr, codes_val, obj_tr, obj_val, cfg, mono, link, init_rng, shuffle_rng,
    n_bins,
):
    """Candidate pairs; with many features, rank mains first and keep the top 20."""
    p = n_bins.size
    if p <= 20:
        return [(int(a), int(b)) for a in range(p) for b in range(a + 1, p)]
    probe = init_core(
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
    _run_phase(
        probe, _Phase("mains", train_feats=True),
        codes_tr, codes_val, obj_tr, obj_val, cfg, shuffle_rng,
    )
    return _pair_universe(probe, codes_tr)


def _run_selection_step(run: _SelectionRun, cfg: TrainConfig, reg: float, pair_reg: float):
    phase = _Phase(
        "selection",
        train_feats=True,
        train_pairs=run.phase_flags["select_pairs"],
        feat_gates=True,
        pair_gates=run.phase_flags["select_pairs"],
        prune=True,
        reg=reg,
        pair_reg=pair_reg,
    )
    return _run_phase(
        run.core,
        phase,
        run.codes_tr,
        run.codes_val,
        run.obj_tr,
        run.obj_val,
        cfg,
        run.phase_flags["shuffle_rng"],
    )


def _result_from(run: _SelectionRun) -> SelectionResult:
    core = run.core
    gates = core.gates()
    names = run.feature_names
    gate_values = {names[j]: float(gates[j]) for j in range(len(names))}
    selected = [names[j] for j in range(len(names)) if gates[j] > 0]
    pair_gate_values = {}
    selected_pairs = []
    if core.pairs is not None and core.pairs.n_pairs > 0:
        pg = core.pair_gates()
        for q, (a, b) in enumerate(core.pairs.pairs):
            key = (names[a], names[b])
            pair_gate_values[key] = float(pg[q])
            if pg[q] > 0:
                selected_pairs.append(key)
    if not selected:
        log.warning("selection kept zero features (reg_param too large?)")
    return SelectionResult(
        selected_feats=selected,
        selected_pairs=selected_pairs,
        gate_values=gate_values,
        pair_gate_values=pair_gate_values,
    )


def select_features(
    table,
    y,
    cfg: TrainConfig,
    sel: SelectionConfig | None = None,
    schema=None,
) -> SelectionResult:
    """Train with the gate regularizer on the first split and keep open gates.

    Features whose gate hits exactly 0 are pruned mid-training and report
    gate value 0.0. The final model should be refit on the selected set.
    """
    sel = sel or SelectionConfig()
    run = _build_selection(table, y, cfg, sel, schema)
    _run_selection_step(run, cfg, sel.reg_param, sel.pair_reg_param)
    return _result_from(run)


# --- validation scores ----------------------------------------------------------


def _rank_auc(y: np.ndarray, scores: np.ndarray) -> float:
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _val_metrics(run: _SelectionRun, cfg: TrainConfig) -> tuple[float, float]:
    """Task loss and score (AUC / RMSE / IPCW) on the validation fold."""
    cache = forward_pass(
        run.core,
        run.codes_val,
        compute_pairs=run.phase_flags["select_pairs"],
    )
    rows = np.arange(run.codes_val.shape[0])
    val_loss = run.obj_val.loss(cache.eta, rows)
    if cfg.task == "classification":
        score = _rank_auc(run.obj_val.y, sigmoid(cache.eta[:, 0]))
    elif cfg.task == "regression":
        score = float(np.sqrt(val_loss))
    else:
        score = val_loss
    return float(val_loss), float(score)


# --- regularization path ---------------------------------------------------------


def regularization_path(
    table,
    y,
    cfg: TrainConfig,
    init_reg_param: float,
    sel: SelectionConfig | None = None,
    schema=None,
    ladder_factor: float = 2.0,
    max_steps: int = 20,
) -> PathResult:
    """Double lambda from init_reg_param with warm starts until nothing survives.

    Each step records the selected count, validation loss, and a task
    score. The feats map keeps the first (smallest lambda) selection seen
    at each count; query it with lookup_feats.
    """
    if init_reg_param <= 0:
        raise ConfigError("init_reg_param must be positive")
    sel = sel or SelectionConfig()
    run = _build_selection(table, y, cfg, sel, schema)
    records: list[PathRecord] = []
    feats: dict[int, list[str]] = {}
    reg = float(init_reg_param)
    pair_scale = (sel.pair_reg_param / sel.reg_param) if sel.reg_param > 0 else 1.0
    prev_num = None
    for _ in range(max_steps):
        pair_reg = reg * pair_scale if run.phase_flags["select_pairs"] else 0.0
        _run_selection_step(run, cfg, reg, pair_reg)
        result = _result_from(run)
        val_loss, val_score = _val_metrics(run, cfg)
        num = len(result.selected_feats)
        records.append(
            PathRecord(
                reg_param=reg,
                num_feats=num,
                val_loss=val_loss,
                val_score=val_score,
                selected_feats=tuple(result.selected_feats),
            )
        )
        feats.setdefault(num, list(result.selected_feats))
        if prev_num is not None and num > prev_num:
            log.warning(
                "selected count rose from %d to %d as lambda grew", prev_num, num
            )
        prev_num = num
        if num == 0:
            break
        reg *= ladder_factor
    return PathResult(records=records, feats=feats)

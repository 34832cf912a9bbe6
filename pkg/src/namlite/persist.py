"""Versioned JSON persistence for fitted ensembles.

Arrays are stored row-major as nested lists at their true (unpadded)
sizes; floats survive the repr round-trip exactly, so save -> load ->
save reproduces identical bytes. Smoothing operators are rebuilt from the
config on load rather than stored.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .core import FeatureStack, ModelCore, PairStack, smoothing_operator
from .data import BinMap, FeatureSchema
from .errors import DataError
from .train import EnsembleModel, SingleSplitModel, TrainConfig

__all__ = [
    "FORMAT_VERSION",
    "model_to_dict",
    "model_from_dict",
    "dumps_model",
    "loads_model",
    "save_model",
    "load_model",
    "model_hash",
]

FORMAT_VERSION = "1.0"


def _weights_out(weights) -> list:
    return [[W.tolist(), b.tolist()] for W, b in weights]


def _core_out(core: ModelCore) -> dict:
    feats = core.feats
    emb = [feats.emb[j, : int(n) + 1].tolist() for j, n in enumerate(feats.n_bins)]
    out = {
        "gamma": core.gamma,
        "pair_gamma": core.pair_gamma,
        "out_dim": core.out_dim,
        "activation": core.activation,
        "link": core.link,
        "feats": {
            "emb": emb,
            "weights": _weights_out(feats.weights),
            "mu": feats.mu.tolist(),
            "active": feats.active.astype(int).tolist(),
            "mono_dir": feats.mono_dir.tolist(),
            "mono_off": feats.mono_off.tolist(),
        },
        "pairs": None,
    }
    if core.pairs is not None and core.pairs.n_pairs > 0:
        pairs = core.pairs
        nb = core.feats.n_bins
        pemb = [
            pairs.emb[q, : int(nb[a]) + 1, : int(nb[b]) + 1].tolist()
            for q, (a, b) in enumerate(pairs.pairs)
        ]
        out["pairs"] = {
            "index": [[int(a), int(b)] for a, b in pairs.pairs],
            "emb": pemb,
            "weights": _weights_out(pairs.weights),
            "mu": pairs.mu.tolist(),
            "active": pairs.active.astype(int).tolist(),
        }
    return out


def _split_out(sp: SingleSplitModel) -> dict:
    return {
        "beta0": sp.beta0.tolist(),
        "c_feat": sp.c_feat.tolist(),
        "c_pair": sp.c_pair.tolist(),
        "val_loss": float(sp.val_loss),
        "core": _core_out(sp.core),
    }


def model_to_dict(ens: EnsembleModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "task": ens.task,
        "n_samples": int(ens.n_samples),
        "config": ens.config.to_dict(),
        "schema": [fs.to_dict() for fs in ens.schema],
        "bin_maps": [bm.to_dict() for bm in ens.bin_maps],
        "selected_pairs": [[a, b] for a, b in ens.selected_pairs],
        "eval_times": None if ens.eval_times is None else ens.eval_times.tolist(),
        "splits": [_split_out(sp) for sp in ens.splits],
    }


def _weights_in(raw: list) -> list:
    return [
        (np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64))
        for W, b in raw
    ]


def _core_in(d: dict, n_bins: np.ndarray, cfg: TrainConfig) -> ModelCore:
    M = int(n_bins.max()) + 1
    f = d["feats"]
    p = n_bins.size
    dims = cfg.embedding_dim
    emb = np.zeros((p, M, dims))
    for j, rows in enumerate(f["emb"]):
        rows = np.asarray(rows, dtype=np.float64)
        emb[j, : rows.shape[0]] = rows
    kernel = cfg.kernel()
    smooth = np.stack([smoothing_operator(int(n), M, kernel) for n in n_bins])
    feats = FeatureStack(
        emb=emb,
        weights=_weights_in(f["weights"]),
        mu=np.asarray(f["mu"], dtype=np.float64),
        n_bins=n_bins,
        smooth=smooth,
        mono_dir=np.asarray(f["mono_dir"], dtype=np.int64),
        mono_off=np.asarray(f["mono_off"], dtype=np.float64),
        active=np.asarray(f["active"], dtype=np.int64).astype(bool),
    )
    pairs = None
    if d["pairs"] is not None:
        pr = d["pairs"]
        index = [(int(a), int(b)) for a, b in pr["index"]]
        q = len(index)
        pemb = np.zeros((q, M, M, dims))
        for k, cells in enumerate(pr["emb"]):
            cells = np.asarray(cells, dtype=np.float64)
            pemb[k, : cells.shape[0], : cells.shape[1]] = cells
        ja = [a for a, _ in index]
        jb = [b for _, b in index]
        pairs = PairStack(
            pairs=index,
            emb=pemb,
            weights=_weights_in(pr["weights"]),
            mu=np.asarray(pr["mu"], dtype=np.float64),
            smooth_a=smooth[ja].copy(),
            smooth_b=smooth[jb].copy(),
            active=np.asarray(pr["active"], dtype=np.int64).astype(bool),
        )
    return ModelCore(
        feats=feats,
        pairs=pairs,
        gamma=float(d["gamma"]),
        pair_gamma=float(d["pair_gamma"]),
        out_dim=int(d["out_dim"]),
        activation=str(d["activation"]),
        link=str(d["link"]),
        beta0=np.zeros(int(d["out_dim"])),
    )


def model_from_dict(d: dict) -> EnsembleModel:
    version = str(d.get("format_version", ""))
    major = version.split(".", 1)[0]
    ours = FORMAT_VERSION.split(".", 1)[0]
    if not major.isdigit() or int(major) > int(ours):
        raise DataError(
            f"model format version {version!r} is newer than supported {FORMAT_VERSION}"
        )
    cfg = TrainConfig.from_dict(d["config"])
    schema = [FeatureSchema.from_dict(s) for s in d["schema"]]
    bin_maps = [BinMap.from_dict(b) for b in d["bin_maps"]]
    n_bins = np.array([bm.n_bins for bm in bin_maps], dtype=np.int64)
    splits = []
    for s in d["splits"]:
        core = _core_in(s["core"], n_bins, cfg)
        splits.append(
            SingleSplitModel(
                core=core,
                beta0=np.asarray(s["beta0"], dtype=np.float64),
                c_feat=np.asarray(s["c_feat"], dtype=np.float64).reshape(
                    n_bins.size, core.out_dim
                ),
                c_pair=np.asarray(s["c_pair"], dtype=np.float64).reshape(
                    -1, core.out_dim
                ),
                history={},
                val_loss=float(s["val_loss"]),
            )
        )
    eval_times = d["eval_times"]
    return EnsembleModel(
        task=str(d["task"]),
        config=cfg,
        schema=schema,
        bin_maps=bin_maps,
        selected_pairs=[(a, b) for a, b in d["selected_pairs"]],
        eval_times=None if eval_times is None else np.asarray(eval_times, dtype=np.float64),
        n_samples=int(d["n_samples"]),
        splits=splits,
    )


def dumps_model(ens: EnsembleModel) -> str:
    return json.dumps(model_to_dict(ens), separators=(",", ":"))


def loads_model(text: str) -> EnsembleModel:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise DataError(f"model file is not valid JSON: {e}") from None
    return model_from_dict(d)


def save_model(ens: EnsembleModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(ens))
        fh.write("\n")


def load_model(path) -> EnsembleModel:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads_model(fh.read())
    except OSError as e:
        raise DataError(f"cannot read model {path}: {e}") from None


def model_hash(ens: EnsembleModel) -> str:
    return hashlib.sha256(dumps_model(ens).encode("utf-8")).hexdigest()

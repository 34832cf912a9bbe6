"""Differentiable core: smoothed bin embeddings, subnetworks, and gates.

Everything runs in float64. Per-feature parameters are stacked and padded
to a common bin count M so forward and backward are batched matrix
products across features. Padding rows are never indexed by data and
their smoothing-operator rows are zero, so they receive no gradient and
stay at their initial values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError

__all__ = [
    "KernelConfig",
    "FeatureStack",
    "PairStack",
    "ModelCore",
    "ForwardCache",
    "smooth_step",
    "smooth_step_grad",
    "kernel_weights",
    "smoothing_operator",
    "smoothed_embedding",
    "pair_smoothed_embedding",
    "monotone_output",
    "main_effect",
    "model_forward",
    "flat_pair_codes",
    "bin_tables",
    "pair_bin_tables",
    "forward_pass",
    "backward_pass",
    "init_core",
    "param_dict",
    "copy_params",
    "load_params",
    "sigmoid",
]

ACTIVATIONS = ("relu", "identity")


# --- gates -------------------------------------------------------------------


def smooth_step(mu, gamma: float):
    """Cubic smooth-step gate: 0 below -gamma/2, 1 above +gamma/2, C1 overall."""
    if gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    m = np.asarray(mu, dtype=np.float64)
    g = float(gamma)
    inner = -(2.0 / g**3) * m**3 + (3.0 / (2.0 * g)) * m + 0.5
    out = np.where(m <= -g / 2, 0.0, np.where(m >= g / 2, 1.0, inner))
    return float(out) if np.isscalar(mu) else out


def smooth_step_grad(mu, gamma: float):
    if gamma <= 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    m = np.asarray(mu, dtype=np.float64)
    g = float(gamma)
    inner = -(6.0 / g**3) * m**2 + 3.0 / (2.0 * g)
    out = np.where(np.abs(m) >= g / 2, 0.0, inner)
    return float(out) if np.isscalar(mu) else out


# --- kernel smoothing --------------------------------------------------------


def kernel_weights(size: int, phi: float) -> np.ndarray:
    """Gaussian weights over offsets -size..size; phi=0 collapses to one-hot."""
    if size < 0:
        raise ConfigError(f"kernel size must be >= 0, got {size}")
    if phi < 0:
        raise ConfigError(f"phi must be >= 0, got {phi}")
    offsets = np.arange(-size, size + 1, dtype=np.float64)
    if phi == 0:
        return (offsets == 0).astype(np.float64)
    return np.exp(-(offsets**2) / (2.0 * phi))


@dataclass(frozen=True)
class KernelConfig:
    phi: float = 3.0
    size: int = 5


def smoothing_operator(n_bins: int, padded: int, cfg: KernelConfig) -> np.ndarray:
    """Matrix S with (S @ emb)[i] = smoothed embedding of bin i.

    Row 0 passes the missing bin through untouched; rows 1..n_bins mix
    neighbors at Gaussian weights, dropping offsets that leave [1, n_bins].
    Rows past n_bins (padding) are zero.
    """
    S = np.zeros((padded, padded), dtype=np.float64)
    S[0, 0] = 1.0
    w = kernel_weights(cfg.size, cfg.phi)
    for i in range(1, n_bins + 1):
        for o in range(-cfg.size, cfg.size + 1):
            t = i + o
            if 1 <= t <= n_bins:
                S[i, t] += w[o + cfg.size]
    return S


def smoothed_embedding(tables, j: int, i: int, cfg: KernelConfig) -> np.ndarray:
    """Reference single-row smoothing; `tables[j]` is (n_bins_j+1, d)."""
    emb = np.asarray(tables[j], dtype=np.float64)
    n_bins = emb.shape[0] - 1
    if not 0 <= i <= n_bins:
        raise ConfigError(f"bin index {i} out of range for feature {j}")
    S = smoothing_operator(n_bins, n_bins + 1, cfg)
    return S[i] @ emb


def pair_smoothed_embedding(pair_tables, pair, indices, cfg: KernelConfig) -> np.ndarray:
    """Reference 2-D smoothing; `pair_tables[pair]` is (na+1, nb+1, d)."""
    emb = np.asarray(pair_tables[pair], dtype=np.float64)
    na, nb = emb.shape[0] - 1, emb.shape[1] - 1
    ia, ib = indices
    if not (0 <= ia <= na and 0 <= ib <= nb):
        raise ConfigError(f"bin indices {indices} out of range for pair {pair}")
    Sa = smoothing_operator(na, na + 1, cfg)
    Sb = smoothing_operator(nb, nb + 1, cfg)
    # Separable kernel: per-axis smoothing composes to the 2-D Gaussian.
    return np.einsum("a,b,abd->d", Sa[ia], Sb[ib], emb)


# --- parameter containers ----------------------------------------------------


@dataclass
class FeatureStack:
    emb: np.ndarray  # (p, M, d)
    weights: list  # [(W, b)] with W (p, in, out), b (p, out)
    mu: np.ndarray  # (p,)
    n_bins: np.ndarray  # (p,) observed bins, excluding missing
    smooth: np.ndarray  # (p, M, M), fixed
    mono_dir: np.ndarray  # (p,) in {-1, 0, +1}
    mono_off: np.ndarray  # (p,)
    active: np.ndarray  # (p,) bool

    @property
    def n_features(self) -> int:
        return int(self.emb.shape[0])

    @property
    def padded(self) -> int:
        return int(self.emb.shape[1])


@dataclass
class PairStack:
    pairs: list  # [(ja, jb)] feature index pairs
    emb: np.ndarray  # (q, M, M, d)
    weights: list  # [(W, b)] with W (q, in, out)
    mu: np.ndarray  # (q,)
    smooth_a: np.ndarray  # (q, M, M)
    smooth_b: np.ndarray  # (q, M, M)
    active: np.ndarray  # (q,) bool

    @property
    def n_pairs(self) -> int:
        return int(self.emb.shape[0])


@dataclass
class ModelCore:
    feats: FeatureStack
    pairs: PairStack | None
    gamma: float
    pair_gamma: float
    out_dim: int
    activation: str
    link: str  # "identity" | "sigmoid"
    gates_trainable: bool = False
    pair_gates_trainable: bool = False
    beta0: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def gates(self) -> np.ndarray:
        return smooth_step(self.feats.mu, self.gamma) * self.feats.active

    def pair_gates(self) -> np.ndarray:
        if self.pairs is None:
            return np.zeros(0)
        return smooth_step(self.pairs.mu, self.pair_gamma) * self.pairs.active


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _link(eta: np.ndarray, link: str) -> np.ndarray:
    if link == "identity":
        return eta
    if link == "sigmoid":
        return sigmoid(eta)
    raise ConfigError(f"unknown link {link!r}")


# --- per-bin tables ----------------------------------------------------------


def _mlp_tables(emb, smooth_lhs, weights, activation):
    """Smooth the table, then run the subnetwork on every bin row."""
    h = smooth_lhs
    hidden = []
    for W, b in weights[:-1]:
        h = _act(h @ W + b[:, None, :], activation)
        hidden.append(h)
    W, b = weights[-1]
    raw = h @ W + b[:, None, :]
    return raw, hidden


def _apply_monotone(raw: np.ndarray, stack: FeatureStack) -> np.ndarray:
    out = raw
    idx = np.flatnonzero(stack.mono_dir)
    if idx.size:
        out = raw.copy()
        for j in idx:
            n = int(stack.n_bins[j])
            d = float(stack.mono_dir[j])
            r = raw[j, 1 : n + 1, 0]
            out[j, 1 : n + 1, 0] = stack.mono_off[j] + d * np.cumsum(r**2)
            out[j, 0, 0] = stack.mono_off[j] + raw[j, 0, 0]
    return out


def bin_tables(core: ModelCore) -> np.ndarray:
    """Ungated per-bin outputs for every feature: (p, M, out)."""
    sm = core.feats.smooth @ core.feats.emb
    raw, _ = _mlp_tables(core.feats.emb, sm, core.feats.weights, core.activation)
    return _apply_monotone(raw, core.feats)


def _pair_smooth(pairs: PairStack) -> np.ndarray:
    q, M, _, d = pairs.emb.shape
    sm1 = (pairs.smooth_a @ pairs.emb.reshape(q, M, M * d)).reshape(q, M, M, d)
    t = sm1.transpose(0, 2, 1, 3).reshape(q, M, M * d)
    sm2 = (pairs.smooth_b @ t).reshape(q, M, M, d).transpose(0, 2, 1, 3)
    return sm2.reshape(q, M * M, d)


def _pair_smooth_backward(pairs: PairStack, dsm: np.ndarray) -> np.ndarray:
    q, M, _, d = pairs.emb.shape
    dsm = dsm.reshape(q, M, M, d)
    t = dsm.transpose(0, 2, 1, 3).reshape(q, M, M * d)
    d1 = (pairs.smooth_b.transpose(0, 2, 1) @ t).reshape(q, M, M, d)
    d1 = d1.transpose(0, 2, 1, 3).reshape(q, M, M * d)
    return (pairs.smooth_a.transpose(0, 2, 1) @ d1).reshape(q, M, M, d)


def pair_bin_tables(core: ModelCore) -> np.ndarray:
    """Ungated per-cell outputs for every pair: (q, M*M, out)."""
    if core.pairs is None or core.pairs.n_pairs == 0:
        return np.zeros((0, 0, core.out_dim))
    sm = _pair_smooth(core.pairs)
    raw, _ = _mlp_tables(core.pairs.emb, sm, core.pairs.weights, core.activation)
    return raw


# --- reference single-sample ops ---------------------------------------------


def monotone_output(raw: np.ndarray, direction: int, offset: float) -> np.ndarray:
    """Cumulative-squares transform over bins 1..n; missing bin stays free.

    raw[0] is the missing bin; it is excluded from the chain and emitted
    as offset + raw[0].
    """
    if direction not in (-1, 1):
        raise ConfigError(f"monotone direction must be -1 or +1, got {direction}")
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1:
        raise ConfigError("monotone transform applies to scalar-output shapes only")
    out = np.empty_like(raw)
    out[0] = offset + raw[0]
    out[1:] = offset + direction * np.cumsum(raw[1:] ** 2)
    return out


def main_effect(core: ModelCore, j: int, i: int) -> np.ndarray:
    """Ungated per-bin output of feature j at bin i."""
    n = int(core.feats.n_bins[j])
    if not 0 <= i <= n:
        raise ConfigError(f"bin index {i} out of range for feature {j}")
    return bin_tables(core)[j, i]


def model_forward(core: ModelCore, codes: np.ndarray, beta0=None) -> np.ndarray:
    """Linked prediction g(beta0 + sum of gated effects) for each row."""
    cache = forward_pass(core, codes, flat_pair_codes(core, codes))
    b0 = core.beta0 if beta0 is None else np.asarray(beta0, dtype=np.float64)
    return _link(cache.eta + b0, core.link)


def flat_pair_codes(core: ModelCore, codes: np.ndarray) -> np.ndarray | None:
    if core.pairs is None or core.pairs.n_pairs == 0:
        return None
    M = core.feats.padded
    ja = np.array([p[0] for p in core.pairs.pairs])
    jb = np.array([p[1] for p in core.pairs.pairs])
    return codes[:, ja] * M + codes[:, jb]


# --- batched forward / backward ----------------------------------------------


@dataclass
class ForwardCache:
    eta: np.ndarray  # (B, out)
    codes: np.ndarray
    pair_codes: np.ndarray | None
    vals: np.ndarray | None  # (B, p, out) ungated per-feature outputs
    tabs: np.ndarray | None  # (p, M, out) after monotone
    raw_tabs: np.ndarray | None  # (p, M, out) before monotone
    hidden: list | None
    sm: np.ndarray | None
    pvals: np.ndarray | None  # (B, q, out)
    ptabs: np.ndarray | None  # (q, M*M, out)
    phidden: list | None
    psm: np.ndarray | None


def forward_pass(
    core: ModelCore,
    codes: np.ndarray,
    pair_codes: np.ndarray | None = None,
    eta_offset: np.ndarray | None = None,
    compute_feats: bool = True,
    compute_pairs: bool = True,
) -> ForwardCache:
    """Batch forward over bin-index rows; returns eta without beta0/link.

    With compute_feats=False the feature contribution must already be in
    eta_offset (used while pairs train against frozen mains).
    """
    B = codes.shape[0]
    eta = np.zeros((B, core.out_dim))
    if eta_offset is not None:
        eta = eta + eta_offset
    vals = tabs = raw_tabs = sm = None
    hidden = None
    if compute_feats:
        sm = core.feats.smooth @ core.feats.emb
        raw_tabs, hidden = _mlp_tables(
            core.feats.emb, sm, core.feats.weights, core.activation
        )
        tabs = _apply_monotone(raw_tabs, core.feats)
        p = core.feats.n_features
        vals = tabs[np.arange(p)[None, :], codes]  # (B, p, out)
        eta = eta + np.einsum("bpo,p->bo", vals, core.gates())
    pvals = ptabs = psm = None
    phidden = None
    if compute_pairs and core.pairs is not None and core.pairs.n_pairs > 0:
        if pair_codes is None:
            pair_codes = flat_pair_codes(core, codes)
        psm = _pair_smooth(core.pairs)
        ptabs, phidden = _mlp_tables(
            core.pairs.emb, psm, core.pairs.weights, core.activation
        )
        q = core.pairs.n_pairs
        pvals = ptabs[np.arange(q)[None, :], pair_codes]
        eta = eta + np.einsum("bqo,q->bo", pvals, core.pair_gates())
    return ForwardCache(
        eta=eta,
        codes=codes,
        pair_codes=pair_codes,
        vals=vals,
        tabs=tabs,
        raw_tabs=raw_tabs,
        hidden=hidden,
        sm=sm,
        pvals=pvals,
        ptabs=ptabs,
        phidden=phidden,
        psm=psm,
    )


def _mlp_backward(d_raw, sm, hidden, weights, activation):
    """Gradients of the per-bin MLP; returns (dW list, dsm)."""
    acts = [sm] + hidden
    grads = []
    dh = d_raw
    for l in range(len(weights) - 1, -1, -1):
        W, _ = weights[l]
        a_in = acts[l]
        dW = np.einsum("pmi,pmo->pio", a_in, dh)
        db = dh.sum(axis=1)
        grads.append((dW, db))
        dh = dh @ W.transpose(0, 2, 1)
        if l > 0:
            if activation == "relu":
                dh = dh * (acts[l] > 0)
            # identity: pass through
    grads.reverse()
    return grads, dh


def _scatter_bins(d_vals: np.ndarray, codes: np.ndarray, M: int) -> np.ndarray:
    """Accumulate per-sample output grads into per-bin tables."""
    B, p, out = d_vals.shape
    flat = (np.arange(p)[None, :] * M + codes).ravel()
    acc = np.zeros((p * M, out))
    np.add.at(acc, flat, d_vals.reshape(B * p, out))
    return acc.reshape(p, M, out)


def backward_pass(
    core: ModelCore,
    cache: ForwardCache,
    d_eta: np.ndarray,
    reg_param: float = 0.0,
    pair_reg_param: float = 0.0,
) -> dict[str, np.ndarray]:
    """Exact gradients of (batch loss + gate regularizer) per parameter.

    beta0 is excluded by construction; it is set after training from the
    centering constants, never by gradient descent.
    """
    grads: dict[str, np.ndarray] = {}
    feats = core.feats
    if cache.vals is not None:
        gates = core.gates()
        sgrad = smooth_step_grad(feats.mu, core.gamma) * feats.active
        d_gate = np.einsum("bo,bpo->p", d_eta, cache.vals)
        if core.gates_trainable:
            grads["feat_mu"] = d_gate * sgrad + reg_param * sgrad
        else:
            grads["feat_mu"] = np.zeros_like(feats.mu)
        d_vals = d_eta[:, None, :] * gates[None, :, None]
        d_tabs = _scatter_bins(d_vals, cache.codes, feats.padded)
        # Undo the monotone transform where it applies.
        d_raw = d_tabs
        d_off = np.zeros_like(feats.mono_off)
        idx = np.flatnonzero(feats.mono_dir)
        if idx.size:
            d_raw = d_tabs.copy()
            for j in idx:
                n = int(feats.n_bins[j])
                d = float(feats.mono_dir[j])
                dout = d_tabs[j, : n + 1, 0]
                r = cache.raw_tabs[j, 1 : n + 1, 0]
                tail = np.cumsum(dout[1:][::-1])[::-1]
                d_raw[j, 1 : n + 1, 0] = d * 2.0 * r * tail
                d_off[j] = dout.sum()
        grads["feat_off"] = d_off
        layer_grads, dsm = _mlp_backward(
            d_raw, cache.sm, cache.hidden, feats.weights, core.activation
        )
        for l, (dW, db) in enumerate(layer_grads):
            grads[f"feat_W{l}"] = dW
            grads[f"feat_b{l}"] = db
        grads["feat_emb"] = feats.smooth.transpose(0, 2, 1) @ dsm
    if cache.pvals is not None:
        pairs = core.pairs
        pg = core.pair_gates()
        psgrad = smooth_step_grad(pairs.mu, core.pair_gamma) * pairs.active
        d_pgate = np.einsum("bo,bqo->q", d_eta, cache.pvals)
        if core.pair_gates_trainable:
            grads["pair_mu"] = d_pgate * psgrad + pair_reg_param * psgrad
        else:
            grads["pair_mu"] = np.zeros_like(pairs.mu)
        d_pvals = d_eta[:, None, :] * pg[None, :, None]
        M2 = pairs.emb.shape[1] * pairs.emb.shape[2]
        d_ptabs = _scatter_bins(d_pvals, cache.pair_codes, M2)
        layer_grads, dpsm = _mlp_backward(
            d_ptabs, cache.psm, cache.phidden, pairs.weights, core.activation
        )
        for l, (dW, db) in enumerate(layer_grads):
            grads[f"pair_W{l}"] = dW
            grads[f"pair_b{l}"] = db
        grads["pair_emb"] = _pair_smooth_backward(pairs, dpsm)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
    return grads


# --- initialization ----------------------------------------------------------


def _init_layers(rng, batch: int, dims: list[int], out_dim: int):
    """Hidden layers ~ U(-1/sqrt(fan_in), +); final layer zero so every
    shape function starts identically at 0."""
    sizes = dims + [out_dim]
    weights = []
    prev = dims[0]
    for i, width in enumerate(sizes[1:]):
        last = i == len(sizes) - 2
        if last:
            W = np.zeros((batch, prev, width))
            b = np.zeros((batch, width))
        else:
            a = 1.0 / np.sqrt(prev)
            W = rng.uniform(-a, a, size=(batch, prev, width))
            b = rng.uniform(-a, a, size=(batch, width))
        weights.append((W, b))
        prev = width
    return weights


def init_core(
    n_bins: np.ndarray,
    out_dim: int,
    kernel: KernelConfig,
    rng: np.random.Generator,
    embedding_dim: int = 16,
    hidden_sizes: tuple[int, ...] = (32,),
    activation: str = "relu",
    link: str = "identity",
    gamma: float = 1.0,
    pair_gamma: float | None = None,
    gates_trainable: bool = False,
    pairs: list | None = None,
    mono_dir: np.ndarray | None = None,
    pair_gates_trainable: bool = False,
) -> ModelCore:
    """Build a fresh model over features with the given observed bin counts."""
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    n_bins = np.asarray(n_bins, dtype=np.int64)
    p = n_bins.size
    if p == 0:
        raise ConfigError("model needs at least one feature")
    M = int(n_bins.max()) + 1
    d = embedding_dim
    if pair_gamma is None:
        pair_gamma = gamma / 4.0
    a = 1.0 / np.sqrt(d)
    emb = rng.uniform(-a, a, size=(p, M, d))
    weights = _init_layers(rng, p, [d] + list(hidden_sizes), out_dim)
    mu0 = gamma / 4.0 if gates_trainable else gamma / 2.0
    smooth = np.stack([smoothing_operator(int(n), M, kernel) for n in n_bins])
    if mono_dir is None:
        mono_dir = np.zeros(p, dtype=np.int64)
    else:
        mono_dir = np.asarray(mono_dir, dtype=np.int64)
        if mono_dir.shape != (p,):
            raise ConfigError("monotone directions must have one entry per feature")
        if np.any(mono_dir != 0) and out_dim != 1:
            raise ConfigError("monotone constraints require a scalar output")
    idx = np.flatnonzero(mono_dir)
    if idx.size:
        # The cumulative-squares transform is stationary at raw output 0,
        # so a zero final layer could never move: constrained subnets get
        # the same fan-in init as hidden layers instead.
        W, b = weights[-1]
        a_fin = 1.0 / np.sqrt(W.shape[1])
        W[idx] = rng.uniform(-a_fin, a_fin, size=(idx.size,) + W.shape[1:])
        b[idx] = rng.uniform(-a_fin, a_fin, size=(idx.size,) + b.shape[1:])
    feats = FeatureStack(
        emb=emb,
        weights=weights,
        mu=np.full(p, mu0),
        n_bins=n_bins,
        smooth=smooth,
        mono_dir=mono_dir,
        mono_off=np.zeros(p),
        active=np.ones(p, dtype=bool),
    )
    pstack = None
    if pairs:
        q = len(pairs)
        for ja, jb in pairs:
            if not (0 <= ja < p and 0 <= jb < p) or ja == jb:
                raise ConfigError(f"invalid feature pair ({ja}, {jb})")
        pemb = rng.uniform(-a, a, size=(q, M, M, d))
        pweights = _init_layers(rng, q, [d] + list(hidden_sizes), out_dim)
        pmu0 = pair_gamma / 4.0 if pair_gates_trainable else pair_gamma / 2.0
        ja = [pr[0] for pr in pairs]
        jb = [pr[1] for pr in pairs]
        pstack = PairStack(
            pairs=[(int(x), int(y)) for x, y in pairs],
            emb=pemb,
            weights=pweights,
            mu=np.full(q, pmu0),
            smooth_a=smooth[ja].copy(),
            smooth_b=smooth[jb].copy(),
            active=np.ones(q, dtype=bool),
        )
    return ModelCore(
        feats=feats,
        pairs=pstack,
        gamma=gamma,
        pair_gamma=pair_gamma,
        out_dim=out_dim,
        activation=activation,
        link=link,
        gates_trainable=gates_trainable,
        pair_gates_trainable=pair_gates_trainable,
        beta0=np.zeros(out_dim),
    )


# --- parameter plumbing ------------------------------------------------------


def param_dict(core: ModelCore) -> dict[str, np.ndarray]:
    """Live views of every learnable array, keyed by stable names."""
    params = {"feat_emb": core.feats.emb, "feat_mu": core.feats.mu,
              "feat_off": core.feats.mono_off}
    for l, (W, b) in enumerate(core.feats.weights):
        params[f"feat_W{l}"] = W
        params[f"feat_b{l}"] = b
    if core.pairs is not None and core.pairs.n_pairs > 0:
        params["pair_emb"] = core.pairs.emb
        params["pair_mu"] = core.pairs.mu
        for l, (W, b) in enumerate(core.pairs.weights):
            params[f"pair_W{l}"] = W
            params[f"pair_b{l}"] = b
    return params


def copy_params(core: ModelCore) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in param_dict(core).items()}


def load_params(core: ModelCore, snapshot: dict[str, np.ndarray]) -> None:
    live = param_dict(core)
    for k, v in snapshot.items():
        live[k][...] = v

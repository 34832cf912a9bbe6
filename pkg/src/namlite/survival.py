"""Survival statistics: evaluation grids, Kaplan-Meier, Cox censoring, calibration.

Labels travel as a structured array with fields ``event`` (bool, True when
the event was observed) and ``time`` (Z = min(C, T), clipped to >= 1e-5 at
ingestion). All estimators here are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, TrainingError

__all__ = [
    "SURVIVAL_DTYPE",
    "EPS_G",
    "StepSurvivalCurve",
    "CoxModel",
    "CoxCensor",
    "as_survival_labels",
    "eval_time_grid",
    "kaplan_meier",
    "censoring_curve",
    "cox_fit",
    "ipcw_weights",
    "calibration_table",
]

SURVIVAL_DTYPE = np.dtype([("event", np.bool_), ("time", np.float64)])

# Censor-survival values below this are clamped, bounding IPCW weights at 1e3.
EPS_G = 1e-3


def as_survival_labels(y) -> np.ndarray:
    """Normalize labels to the structured dtype, clipping times to >= 1e-5.

    Accepts a structured array with ``event``/``time`` fields, a mapping
    with those keys, or an (event, time) pair of sequences.
    """
    if isinstance(y, np.ndarray) and y.dtype.names:
        if not {"event", "time"} <= set(y.dtype.names):
            raise DataError("survival labels need 'event' and 'time' fields")
        event = y["event"].astype(bool)
        time = y["time"].astype(np.float64)
    elif hasattr(y, "keys"):
        event = np.asarray(y["event"]).astype(bool)
        time = np.asarray(y["time"], dtype=np.float64)
    else:
        try:
            event_raw, time_raw = y
        except (TypeError, ValueError):
            raise DataError(
                "survival labels must be a structured array, a mapping, or an "
                "(event, time) pair"
            ) from None
        event = np.asarray(event_raw).astype(bool)
        time = np.asarray(time_raw, dtype=np.float64)
    if event.shape != time.shape or event.ndim != 1:
        raise DataError("event and time must be equal-length 1-D sequences")
    if not np.all(np.isfinite(time)):
        raise DataError("survival times must be finite")
    out = np.empty(event.size, dtype=SURVIVAL_DTYPE)
    out["event"] = event
    out["time"] = np.clip(time, 1e-5, None)
    return out


# --- step curves --------------------------------------------------------------


@dataclass(frozen=True)
class StepSurvivalCurve:
    """Right-continuous nonincreasing step function with S(0) = 1."""

    times: np.ndarray  # ascending distinct jump times
    values: np.ndarray  # survival value holding from each jump time onward

    def survival_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.times, t, side="right")
        vals = np.concatenate([[1.0], self.values])
        return vals[idx]

    def survival_left_at(self, t) -> np.ndarray:
        """Left limit S(t-): jumps at t itself are excluded."""
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.times, t, side="left")
        vals = np.concatenate([[1.0], self.values])
        return vals[idx]


def kaplan_meier(labels: np.ndarray) -> StepSurvivalCurve:
    """Product-limit estimator over distinct event times.

    With no observed events the curve is identically 1.
    """
    labels = as_survival_labels(labels)
    if labels.size == 0:
        raise DataError("cannot estimate a survival curve from zero samples")
    time = labels["time"]
    event = labels["event"]
    uniq, inv = np.unique(time, return_inverse=True)
    exits = np.bincount(inv, minlength=uniq.size)
    deaths = np.bincount(inv[event], minlength=uniq.size)
    at_risk = time.size - np.concatenate([[0], np.cumsum(exits)[:-1]])
    keep = deaths > 0
    factors = 1.0 - deaths[keep] / at_risk[keep]
    return StepSurvivalCurve(times=uniq[keep], values=np.cumprod(factors))


def censoring_curve(labels: np.ndarray) -> StepSurvivalCurve:
    """Kaplan-Meier for P(C > t): event indicators flipped."""
    labels = as_survival_labels(labels)
    flipped = labels.copy()
    flipped["event"] = ~labels["event"]
    return kaplan_meier(flipped)


# --- evaluation grid ----------------------------------------------------------


def eval_time_grid(labels: np.ndarray, n_eval_times: int | None = None) -> np.ndarray:
    """Strictly increasing quantiles of the uncensored times at k/(K+1)."""
    labels = as_survival_labels(labels)
    uncensored = labels["time"][labels["event"]]
    if uncensored.size == 0:
        raise DataError("evaluation grid needs at least one uncensored event")
    if n_eval_times is None:
        n_eval_times = min(50, int(np.unique(uncensored).size))
    if n_eval_times < 1:
        raise ConfigError(f"n_eval_times must be >= 1, got {n_eval_times}")
    qs = np.arange(1, n_eval_times + 1) / (n_eval_times + 1)
    times = np.quantile(uncensored, qs, method="inverted_cdf")
    return np.unique(times)


# --- Cox proportional hazards -------------------------------------------------


@dataclass(frozen=True)
class CoxModel:
    """Cox fit with a Breslow baseline; covariates are centered internally."""

    beta: np.ndarray  # (m,)
    x_mean: np.ndarray  # (m,)
    base_times: np.ndarray  # ascending distinct event times
    base_cumhaz: np.ndarray  # cumulative baseline hazard after each time

    def _cumhaz(self, t, side: str) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.base_times, t, side=side)
        vals = np.concatenate([[0.0], self.base_cumhaz])
        return vals[idx]

    def risk(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.exp((X - self.x_mean) @ self.beta)

    def survival_at(self, times, X) -> np.ndarray:
        """exp(-Lambda0(t) * exp(X beta)), shape (n, K)."""
        lam = self._cumhaz(times, "right")
        return np.exp(-np.outer(self.risk(X), lam))

    def survival_left_at(self, t, X) -> np.ndarray:
        lam = self._cumhaz(t, "left")
        return np.exp(-self.risk(X) * lam)


def _breslow_sums(X, event, time, beta):
    """Log-likelihood, gradient, information, and baseline pieces at beta.

    Walks distinct times in descending order, so risk-set sums are running
    totals; Breslow handling groups tied events.
    """
    n, m = X.shape
    order = np.argsort(time, kind="stable")[::-1]
    Xs, es, ts = X[order], event[order], time[order]
    r = np.exp(Xs @ beta)
    loglik = 0.0
    grad = np.zeros(m)
    info = np.zeros((m, m))
    s0, s1, s2 = 0.0, np.zeros(m), np.zeros((m, m))
    event_times = []
    event_s0 = []
    event_d = []
    i = 0
    while i < n:
        j = i
        while j < n and ts[j] == ts[i]:
            j += 1
        block = slice(i, j)
        rb = r[block]
        xb = Xs[block]
        s0 += rb.sum()
        s1 += rb @ xb
        s2 += np.einsum("b,bi,bj->ij", rb, xb, xb)
        dead = es[block]
        d = int(dead.sum())
        if d > 0:
            xd = xb[dead]
            loglik += float((xd @ beta).sum()) - d * np.log(s0)
            mean = s1 / s0
            grad += xd.sum(axis=0) - d * mean
            info += d * (s2 / s0 - np.outer(mean, mean))
            event_times.append(ts[i])
            event_s0.append(s0)
            event_d.append(d)
        i = j
    base_times = np.array(event_times[::-1])
    base_jumps = np.array(event_d[::-1]) / np.array(event_s0[::-1])
    return loglik, grad, info, base_times, base_jumps


def cox_fit(
    X,
    labels: np.ndarray,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> CoxModel:
    """Damped Newton ascent of the Breslow partial likelihood.

    Converges when the gradient norm falls below ``tol``.
    """
    labels = as_survival_labels(labels)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] != labels.size:
        X = X.T
    n, m = X.shape
    if n != labels.size:
        raise DataError("design matrix rows must match label count")
    if not np.all(np.isfinite(X)):
        raise DataError("Cox design matrix contains non-finite values")
    event = labels["event"].copy()
    time = labels["time"]
    if not event.any():
        raise DataError("Cox fit needs at least one event")
    if np.linalg.matrix_rank(X) < m:
        raise TrainingError("Cox design matrix is rank deficient")
    x_mean = X.mean(axis=0)
    Xc = X - x_mean
    beta = np.zeros(m)
    loglik, grad, info, bt, bj = _breslow_sums(Xc, event, time, beta)
    for _ in range(max_iter):
        if np.linalg.norm(grad) < tol:
            return CoxModel(beta, x_mean, bt, np.cumsum(bj))
        try:
            step = np.linalg.solve(info, grad)
        except np.linalg.LinAlgError:
            raise TrainingError("singular information matrix in Cox fit") from None
        # Once the predicted gain drops below the likelihood's float
        # resolution, halving would only chase rounding noise: take the
        # full Newton step unguarded.
        predicted_gain = float(grad @ step)
        if predicted_gain <= 64 * np.finfo(np.float64).eps * (1.0 + abs(loglik)):
            beta = beta + step
            loglik, grad, info, bt, bj = _breslow_sums(Xc, event, time, beta)
            continue
        # Halve the step until the partial likelihood stops decreasing.
        for _ in range(40):
            cand = beta + step
            ll2, g2, i2, bt2, bj2 = _breslow_sums(Xc, event, time, cand)
            if np.isfinite(ll2) and ll2 >= loglik - 1e-12:
                beta, loglik, grad, info, bt, bj = cand, ll2, g2, i2, bt2, bj2
                break
            step = step / 2.0
        else:
            raise TrainingError("Cox step halving failed to improve likelihood")
    if np.linalg.norm(grad) < tol:
        return CoxModel(beta, x_mean, bt, np.cumsum(bj))
    raise TrainingError(f"Cox fit did not converge within {max_iter} iterations")


@dataclass(frozen=True)
class CoxCensor:
    """Cox censoring model bound to its covariate rows."""

    model: CoxModel
    X: np.ndarray

    def survival_at(self, times) -> np.ndarray:
        return self.model.survival_at(times, self.X)

    def survival_left_at(self, t) -> np.ndarray:
        return self.model.survival_left_at(t, self.X)


# --- IPCW weights -------------------------------------------------------------


def ipcw_weights(labels: np.ndarray, eval_times, censor) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample, per-time inverse-censoring weights (W_alive, W_event).

    ``censor`` is anything with survival_at(times) and survival_left_at(t):
    a marginal StepSurvivalCurve or a per-sample CoxCensor. Censor survival
    is clamped at EPS_G before inversion. The event term uses the left
    limit G(Z-) so an event tied with a censoring time keeps positive mass.
    """
    labels = as_survival_labels(labels)
    eval_times = np.asarray(eval_times, dtype=np.float64)
    z = labels["time"][:, None]
    delta = labels["event"][:, None]
    g_t = np.maximum(np.atleast_1d(censor.survival_at(eval_times)), EPS_G)
    g_z = np.maximum(censor.survival_left_at(labels["time"]), EPS_G)[:, None]
    w_alive = (z > eval_times[None, :]) / g_t
    w_event = ((z <= eval_times[None, :]) & delta) / g_z
    return w_alive, w_event


# --- calibration ----------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationBin:
    size: int
    mean_pred: float
    km_cdf: float


def calibration_table(
    pred, labels: np.ndarray, t: float, n_bins: int = 10
) -> list[CalibrationBin]:
    """Quantile-bin predicted CDF values and compare to per-bin KM CDF at t.

    Samples are rank-partitioned into n_bins chunks whose sizes differ by
    at most one; adjacent chunks with tied boundary predictions merge, so a
    constant predictor yields a single pooled bin.
    """
    labels = as_survival_labels(labels)
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 1 or pred.size != labels.size:
        raise DataError("calibration needs one prediction per sample")
    if n_bins < 2:
        raise ConfigError(f"n_bins must be >= 2, got {n_bins}")
    order = np.argsort(pred, kind="stable")
    chunks = [c for c in np.array_split(order, n_bins) if c.size > 0]
    merged = [chunks[0]]
    for c in chunks[1:]:
        if pred[merged[-1][-1]] == pred[c[0]]:
            merged[-1] = np.concatenate([merged[-1], c])
        else:
            merged.append(c)
    out = []
    for idx in merged:
        curve = kaplan_meier(labels[idx])
        out.append(
            CalibrationBin(
                size=int(idx.size),
                mean_pred=float(pred[idx].mean()),
                km_cdf=float(1.0 - curve.survival_at(t)),
            )
        )
    return out

"""One-step-ahead forecasting of user data with the three-branch model.

Per step t every variable gets the feature vector

    [long-branch states, short-branch states, spectral-branch states,
     gated fusion of the three branch outputs, x[t], 1]

and one ridge readout shared by all variables maps it to x[t + 1]. The
spectral branch looks at a trailing window of ``lookback`` steps, so no
feature depends on the future.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .branches import BranchConfig, GateParams, fuse, scan_branch, spectral_transform
from .errors import DimensionError, DomainError, SizeError
from .numerics import Rng
from .scan import vi_forward
from .sim import Metrics, metrics, persistence_forecast, predict, shared_readout
from .ssm_core import discretize_zoh

DEFAULT_LOOKBACK = 16


@dataclass
class ForecastResult:
    start: int
    predictions: np.ndarray  # (C, T - start), original units
    truth: np.ndarray
    metrics: Metrics
    persistence: Metrics
    weights: np.ndarray


def znormalize(X, train_end):
    """Per-variable mean and scale from the first ``train_end`` steps.

    A constant training segment gets scale 1, so it maps to zeros instead of
    dividing by zero.
    """
    mu = X[:, :train_end].mean(axis=1, keepdims=True)
    sd = X[:, :train_end].std(axis=1, keepdims=True)
    sd = np.where(sd > 0, sd, 1.0)
    return (X - mu) / sd, mu, sd


def lookback_windows(X, L):
    """Trailing windows ``X[:, t-L+1 .. t]`` for every t, zero-padded at the start.

    Returns shape ``(T, C, L)``.
    """
    C, T = X.shape
    padded = np.concatenate([np.zeros((C, L - 1)), X], axis=1)
    idx = np.arange(T)[:, None] + np.arange(L)[None, :]
    return np.ascontiguousarray(np.moveaxis(padded[:, idx], 0, 1))


def spectral_features(cfg, X, L):
    """Final spectral-branch state of each trailing window, shape (C, T, d)."""
    W = lookback_windows(X, L)
    dsys = discretize_zoh(cfg.system("spectral"), cfg.delta("spectral"))
    out = vi_forward(dsys, cfg.aggregator("spectral"), spectral_transform(W))
    h = np.concatenate([out.final_state.h_h, out.final_state.h_v], axis=-1)  # (T, C, d)
    y_last = out.y[..., -1]  # (T, C)
    return np.swapaxes(h, 0, 1), y_last.T


def branch_features(cfg, gate, X, lookback=DEFAULT_LOOKBACK):
    """Feature tensor (C, T, d) for the shared readout."""
    cfg.check()
    outs = {b: scan_branch(cfg, b, X, keep_states=True) for b in ("long", "short")}
    spec_h, spec_y = spectral_features(cfg, X, lookback)
    fused = fuse(gate, outs["long"].y, outs["short"].y, spec_y)
    parts = []
    for b in ("long", "short"):
        parts += [outs[b].h_h_trace, outs[b].h_v_trace]
    parts += [spec_h, fused[..., None], X[..., None], np.ones(X.shape + (1,))]
    return np.concatenate(parts, axis=-1)


def run_forecast(X, cfg=None, gate=None, train_frac=0.8, lam=1e-3, lookback=DEFAULT_LOOKBACK,
                 rng=None):
    """Fit on the leading ``train_frac`` of the steps and forecast the rest one step ahead."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError(f"expected a (C, T) series, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainError("series has non-finite entries")
    if lookback < 4 or lookback % 2:
        raise SizeError(f"lookback must be an even count >= 4, got {lookback}")
    if not 0.0 < train_frac < 1.0:
        raise DomainError(f"train_frac must lie in (0, 1), got {train_frac}")
    C, T = X.shape
    train_end = int(T * train_frac)
    if train_end < lookback or train_end >= T:
        raise SizeError(
            f"series of length {T} is too short: the training split ({train_end} steps) must "
            f"cover the spectral lookback of {lookback} steps and leave a test tail"
        )
    cfg = cfg if cfg is not None else BranchConfig.random(rng if rng is not None else Rng(0))
    gate = gate if gate is not None else GateParams()
    Z, mu, sd = znormalize(X, train_end)
    F = branch_features(cfg, gate, Z, lookback)
    w = shared_readout(F, Z, train_end, lam)
    pred = predict(F[:, train_end - 1 : T - 1], w) * sd + mu
    truth = X[:, train_end:]
    return ForecastResult(
        start=train_end,
        predictions=pred,
        truth=truth,
        metrics=metrics(pred, truth),
        persistence=metrics(persistence_forecast(X, train_end), truth),
        weights=w,
    )

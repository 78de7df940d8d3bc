"""Controlled forecasting experiments on synthetic VAR(1) data.

The pipeline is a fixed-feature ("reservoir") forecaster: a scan engine
turns the series into per-variable state features, one ridge readout shared
by all variables maps the features at step t to the value at t + 1, and the
held-out tail is scored. Two studies drive it: relabelling the variables at
random, and growing the number of variables while timing both engines.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .aggregation import AggregatorSpec
from .errors import DimensionError, DomainError, NumericalError, SizeError
from .numerics import Rng, canonical_sum, fixed_order_matvec, spectral_radius
from .scan import _median_times, ordered_forward, vi_forward
from .ssm_core import discretize_zoh, random_system

ENGINES = ("vi", "ordered")
SCALING_C = (16, 32, 64, 128, 256)
MAPE_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# graphs and data


@dataclass(frozen=True)
class Graph:
    num_nodes: int
    edges: frozenset

    def __post_init__(self):
        for u, v in self.edges:
            if u == v:
                raise DomainError(f"self-loop at node {u}")
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise DomainError(f"edge ({u}, {v}) leaves the node range")
        canon = {(min(u, v), max(u, v)) for u, v in self.edges}
        if len(canon) != len(self.edges):
            raise DomainError("duplicate edges")

    def adjacency(self):
        A = np.zeros((self.num_nodes, self.num_nodes))
        for u, v in self.edges:
            A[u, v] = A[v, u] = 1.0
        return A

    def degrees(self):
        return self.adjacency().sum(axis=1).astype(int)


def watts_strogatz(C, k, p, rng):
    """Small-world graph: ring lattice of degree ``k`` with random rewiring.

    Every lattice edge ``(u, u + j)``, visited for ``j = 1 .. k/2`` and then
    ``u`` ascending, has its far endpoint moved with probability ``p`` to a
    uniformly chosen node that is neither ``u`` nor already adjacent to it.
    The edge count stays ``C * k / 2``.
    """
    if k % 2 or k < 0:
        raise DomainError(f"k must be an even nonnegative count, got {k}")
    if not k < C:
        raise DomainError(f"k must be smaller than C, got k={k}, C={C}")
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    adj = [set() for _ in range(C)]
    for u in range(C):
        for j in range(1, k // 2 + 1):
            v = (u + j) % C
            adj[u].add(v)
            adj[v].add(u)
    for j in range(1, k // 2 + 1):
        for u in range(C):
            v = (u + j) % C
            if rng.uniform() >= p or v not in adj[u]:
                continue
            if len(adj[u]) >= C - 1:
                continue
            choices = [w for w in range(C) if w != u and w not in adj[u]]
            w = choices[rng.integers(len(choices))]
            adj[u].discard(v)
            adj[v].discard(u)
            adj[u].add(w)
            adj[w].add(u)
    edges = frozenset((u, v) for u in range(C) for v in adj[u] if u < v)
    return Graph(num_nodes=C, edges=edges)


@dataclass(frozen=True, eq=False)
class VarProcess:
    W: np.ndarray
    noise_sigma: float
    spectral_radius: float

    def __post_init__(self):
        if not self.noise_sigma >= 0:
            raise DomainError("noise_sigma must be nonnegative")
        if not self.spectral_radius < 1.0:
            raise DomainError(f"VAR(1) is not stationary: rho(W) = {self.spectral_radius}")


def var_process(g, noise_sigma=0.1, rho=0.9):
    """Transition matrix ``rho * D^-1 A`` of the graph.

    A row-normalised nonnegative matrix has spectral radius one, so the
    scaled matrix has radius ``rho``. Isolated nodes get a zero row.
    """
    A = g.adjacency()
    deg = A.sum(axis=1, keepdims=True)
    W = rho * np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)
    return VarProcess(W=W, noise_sigma=float(noise_sigma), spectral_radius=spectral_radius(W))


def var1_generate(g, T, noise_sigma, rng, burn_in=200, rho=0.9, process=None):
    """Simulate ``x[t] = W x[t-1] + eps[t]`` from zero and return ``(C, T)``."""
    if T < 2:
        raise SizeError(f"T must be >= 2, got {T}")
    proc = process if process is not None else var_process(g, noise_sigma, rho)
    C = g.num_nodes
    total = T + burn_in
    eps = rng.normal(scale=proc.noise_sigma, size=(total, C)) if proc.noise_sigma > 0 else np.zeros((total, C))
    x = np.zeros(C)
    out = np.empty((C, T))
    for t in range(total):
        x = proc.W @ x + eps[t]
        if t >= burn_in:
            out[:, t - burn_in] = x
    return out


# ---------------------------------------------------------------------------
# readout and metrics


def fit_ridge_readout(features, targets, lam):
    """Weights minimising ``|F Wt - Y|^2 + lam |Wt|^2`` (Cholesky on the normal equations)."""
    F = np.asarray(features, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if F.ndim != 2:
        raise DimensionError("features must be N x d")
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != F.shape[0]:
        raise DimensionError(f"{F.shape[0]} feature rows but {Y.shape[0]} target rows")
    if F.shape[0] < 1:
        raise SizeError("need at least one sample")
    return solve_normal(F.T @ F, F.T @ Y, lam)


def solve_normal(G, R, lam):
    """Solve ``(G + lam I) Wt = R`` for a symmetric Gram matrix ``G``."""
    if not (np.isfinite(lam) and lam >= 0):
        raise DomainError(f"lambda must be a nonnegative real, got {lam}")
    d = G.shape[0]
    M = G + lam * np.eye(d)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise NumericalError(
            "normal matrix is singular or indefinite; use a ridge penalty lambda > 0"
        ) from None
    # a rank-deficient Gram can still factor, with a pivot at rounding level
    pivots = np.diag(L) ** 2
    if np.min(pivots) <= d * np.finfo(float).eps * np.max(np.diag(M)):
        raise NumericalError("normal matrix is numerically singular; use a ridge penalty lambda > 0")
    return np.linalg.solve(L.T, np.linalg.solve(L, R))


@dataclass(frozen=True)
class Metrics:
    mae: float
    mape: float
    mse: float


def metrics(pred, truth):
    """MAE, MAPE (percent, denominators floored at 1e-8) and MSE.

    Sums are exactly rounded (``math.fsum``), so the values do not depend on
    the order of the entries.
    """
    p = np.asarray(pred, dtype=float)
    y = np.asarray(truth, dtype=float)
    if p.shape != y.shape:
        raise DimensionError(f"prediction shape {p.shape} differs from truth shape {y.shape}")
    if p.size == 0:
        raise SizeError("no entries to score")
    err = (p - y).ravel()
    n = err.size
    mae = math.fsum(np.abs(err)) / n
    mse = math.fsum(err * err) / n
    mape = 100.0 * math.fsum(np.abs(err) / np.maximum(np.abs(y.ravel()), MAPE_FLOOR)) / n
    return Metrics(mae=mae, mape=mape, mse=mse)


def persistence_forecast(X, start):
    """Predict ``x[t] = x[t-1]`` for ``t >= start``."""
    return np.asarray(X)[..., start - 1 : -1]


# ---------------------------------------------------------------------------
# forecasting pipeline


def scan_features(engine, dsys, X, agg=None):
    """Per-variable features ``[h_h, h_v, x, 1]`` at every step, shape (C, T, d)."""
    if engine == "vi":
        out = vi_forward(dsys, agg, X, keep_states=True)
    elif engine == "ordered":
        out = ordered_forward(dsys, X, keep_states=True)
    else:
        raise DomainError(f"unknown engine {engine!r}; choose from {ENGINES}")
    ones = np.ones(X.shape + (1,))
    return np.concatenate([out.h_h_trace, out.h_v_trace, X[..., None], ones], axis=-1)


def shared_readout(F, X, train_end, lam):
    """One ridge readout shared by all variables, trained on steps before ``train_end``.

    Features at t predict x[t + 1]. The normal equations are accumulated
    per variable through a fixed scratch buffer and then combined with an
    order-independent sum, so relabelling the variables leaves the weights
    bit-identical.
    """
    C, T, d = F.shape
    n = train_end - 1
    if n < 1:
        raise SizeError("training split is too short")
    buf = np.empty((n, d))
    ybuf = np.empty(n)
    grams = np.empty((C, d, d))
    rhs = np.empty((C, d))
    for c in range(C):
        buf[...] = F[c, :n]
        ybuf[...] = X[c, 1 : n + 1]
        grams[c] = buf.T @ buf
        rhs[c] = buf.T @ ybuf
    G = canonical_sum(grams, axis=0)
    R = canonical_sum(rhs, axis=0)
    return solve_normal(G, R[:, None], lam)[:, 0]


def predict(F, w):
    """Apply a shared readout to features (..., d) without BLAS."""
    return fixed_order_matvec(w[None, :], F)[..., 0]


@dataclass
class SimConfig:
    C: int = 64
    T: int = 1000
    k: int = 4
    p: float = 0.1
    rho: float = 0.9
    noise_sigma: float = 0.1
    burn_in: int = 200
    train_frac: float = 0.8
    lam: float = 1e-3
    delta: float = 1.0
    agg: str = "mean"
    trials: int = 10
    C_values: tuple = SCALING_C
    scaling_T: int = 256
    repeats: int = 5
    seed: int = 0

    def validate(self):
        if self.C < 2:
            raise DomainError(f"C must be >= 2, got {self.C}")
        if self.k % 2 or not 0 <= self.k < self.C:
            raise DomainError(f"k must be even and below C, got {self.k}")
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"p must lie in [0, 1], got {self.p}")
        if not 0.0 < self.rho < 1.0:
            raise DomainError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.noise_sigma > 0:
            raise DomainError("noise_sigma must be positive")
        if self.burn_in < 0:
            raise DomainError("burn_in must be nonnegative")
        if not 0.0 < self.train_frac < 1.0:
            raise DomainError("train_frac must lie in (0, 1)")
        if not self.lam >= 0:
            raise DomainError("lam must be nonnegative")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise DomainError("delta must be positive")
        if self.agg not in ("mean", "sum", "attention"):
            raise DomainError(f"unknown aggregator {self.agg!r}")
        if self.trials < 2:
            raise DomainError(f"trials must be >= 2, got {self.trials}")
        if self.repeats < 1:
            raise DomainError("repeats must be >= 1")
        bad = [c for c in self.C_values if c not in SCALING_C]
        if bad or not self.C_values:
            raise DomainError(f"C_values must be a nonempty subset of {SCALING_C}, got {self.C_values}")
        for T in (self.T, self.scaling_T):
            if int(T * self.train_frac) < 3 or T - int(T * self.train_frac) < 1:
                raise SizeError(f"T={T} leaves no room for a train/test split")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must fit in an unsigned 64-bit integer")
        return self


def _model(cfg, rng):
    sys = random_system(rng.spawn(11))
    agg = AggregatorSpec(cfg.agg) if cfg.agg != "attention" else AggregatorSpec.attention(
        sys.d_psi, rng.spawn(12))
    return discretize_zoh(sys, cfg.delta), agg


def _dataset(cfg, C, T, rng):
    g = watts_strogatz(C, cfg.k, cfg.p, rng.spawn(21))
    return var1_generate(g, T, cfg.noise_sigma, rng.spawn(22), burn_in=cfg.burn_in, rho=cfg.rho)


def evaluate(engine, dsys, X, cfg, agg=None):
    """Scan, fit the shared readout on the training split and score the tail.

    Returns ``(metrics, predictions)`` with predictions of shape
    ``(C, T - train_end)`` for steps ``train_end ..``.
    """
    T = X.shape[-1]
    train_end = int(T * cfg.train_frac)
    F = scan_features(engine, dsys, X, agg)
    w = shared_readout(F, X, train_end, cfg.lam)
    pred = predict(F[:, train_end - 1 : T - 1], w)
    return metrics(pred, X[:, train_end:]), pred


@dataclass
class StudyReport:
    """One row per (trial, engine); timings live in the ``seconds`` column."""

    study: str
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def trials(self):
        return len({r["trial"] for r in self.rows})

    def values(self, engine, key, C=None):
        return [r[key] for r in self.rows if r["engine"] == engine and (C is None or r["C"] == C)]

    def summary(self, timing=False):
        """Per-engine mean and population std of each metric.

        Wall-clock fields are left out unless ``timing`` is set, so the
        default summary is a pure function of config and seed.
        """
        out = {"study": self.study, "trials": self.trials, "config": self.config, "engines": {}}
        for engine in ENGINES:
            stats = {}
            for key in ("mae", "mape", "mse") + (("seconds",) if timing else ()):
                vals = self.values(engine, key)
                if vals:
                    stats[key] = {"mean": statistics.fmean(vals), "std": statistics.pstdev(vals)}
            if stats:
                out["engines"][engine] = stats
        return out

    def write_csv(self, path):
        cols = ["trial", "engine", "C", "T", "mae", "mape", "mse", "seconds"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in cols])

    def write_json(self, path, timing=False):
        with open(path, "w") as fh:
            json.dump(self.summary(timing=timing), fh, sort_keys=True, indent=2)
            fh.write("\n")


def _fmt(v):
    return f"{v:.17g}" if isinstance(v, float) else str(v)


def run_permutation_study(cfg, trials=None, rng=None):
    """Forecast the same data under random relabellings of the variables."""
    cfg.validate()
    trials = cfg.trials if trials is None else trials
    if trials < 2:
        raise DomainError(f"trials must be >= 2, got {trials}")
    rng = rng if rng is not None else Rng(cfg.seed)
    dsys, agg = _model(cfg, rng)
    X = _dataset(cfg, cfg.C, cfg.T, rng)
    report = StudyReport("permutation", config=asdict(cfg))
    report.config["trials"] = trials
    for trial in range(trials):
        perm = rng.spawn(100 + trial).permutation(cfg.C)
        Xp = X[perm]
        for engine in ENGINES:
            t0 = time.perf_counter()
            m, _ = evaluate(engine, dsys, Xp, cfg, agg)
            sec = time.perf_counter() - t0
            report.rows.append({"trial": trial, "engine": engine, "C": cfg.C, "T": cfg.T,
                                "mae": m.mae, "mape": m.mape, "mse": m.mse, "seconds": sec})
    return report


def run_cscaling_study(C_values=None, cfg=None, rng=None):
    """Accuracy and forward-scan time of both engines as C grows (T = ``scaling_T``)."""
    cfg = (cfg or SimConfig()).validate()
    C_values = tuple(cfg.C_values if C_values is None else C_values)
    bad = [c for c in C_values if c not in SCALING_C]
    if bad or not C_values:
        raise DomainError(f"C_values must be a nonempty subset of {SCALING_C}")
    rng = rng if rng is not None else Rng(cfg.seed)
    dsys, agg = _model(cfg, rng)
    T = cfg.scaling_T
    train_end = int(T * cfg.train_frac)
    report = StudyReport("cscaling", config=asdict(cfg))
    data, calls = {}, []
    for C in C_values:
        X = _dataset(cfg, C, T, rng.spawn(1000 + C))
        data[C] = X
        Xtr = np.ascontiguousarray(X[:, :train_end])
        calls += [lambda Xtr=Xtr: vi_forward(dsys, agg, Xtr),
                  lambda Xtr=Xtr: ordered_forward(dsys, Xtr)]
    times = iter(_median_times(calls, cfg.repeats))
    for C in C_values:
        for engine in ENGINES:
            m, _ = evaluate(engine, dsys, data[C], cfg, agg)
            report.rows.append({"trial": 0, "engine": engine, "C": C, "T": T,
                                "mae": m.mae, "mape": m.mape, "mse": m.mse,
                                "seconds": next(times)})
    return report


def timing_ratio(report, engine):
    """seconds(largest C) / seconds(smallest C) for one engine."""
    rows = sorted((r for r in report.rows if r["engine"] == engine), key=lambda r: r["C"])
    return rows[-1]["seconds"] / rows[0]["seconds"]

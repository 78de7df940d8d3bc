"""Randomised invariant suites.

Each suite draws its cases from a seeded :class:`~vi2dssm.numerics.Rng`,
counts failing cases and keeps the first one as a JSON-serialisable
counterexample.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .aggregation import AggregatorSpec, pool
from .coupling import (
    CanonicalCoupling,
    build_canonical,
    commutes_with_all_permutations,
    decompose_to_canonical,
    mode_spectrum,
)
from .numerics import Rng, eigenvalues, spectral_radius
from .scan import SCHEDULES, dependency_depth, vi_forward
from .ssm_core import certify_stability, discretize_zoh, random_system

STABILITY_DELTAS = (0.01, 0.1, 1.0, 10.0)


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: int = 0
    counterexample: dict | None = None
    notes: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.failures == 0

    def fail(self, **details):
        self.failures += 1
        if self.counterexample is None:
            self.counterexample = {k: _plain(v) for k, v in details.items()}

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<13} {status}  {self.cases - self.failures}/{self.cases} cases"

    def counterexample_json(self):
        return json.dumps(self.counterexample, sort_keys=True)


def _plain(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _random_matrix(rng, n):
    """Mix of canonical, near-canonical and generic matrices."""
    kind = rng.integers(3)
    alpha, beta = rng.normal(), rng.normal()
    M = build_canonical(CanonicalCoupling(alpha, beta, n))
    if kind == 1:
        i, j = rng.integers(n), rng.integers(n)
        M[i, j] += 0.1 + rng.uniform()
    elif kind == 2:
        M = rng.normal(size=(n, n))
    return M


def suite_coupling(cases, rng, **_):
    """Canonical form accepted exactly when the matrix commutes with all permutations."""
    res = SuiteResult("coupling")
    for n in (2, 3, 4):
        for _ in range(cases):
            M = _random_matrix(rng, n)
            res.cases += 1
            commutes = commutes_with_all_permutations(M)
            accepted = bool(decompose_to_canonical(M))
            if commutes != accepted:
                res.fail(matrix=M, commutes=commutes, accepted=accepted)
    return res


def suite_modes(cases, rng, **_):
    """Spectrum of alpha I + beta 11^T is {alpha x (C-1), alpha + C beta}."""
    res = SuiteResult("modes")
    for _ in range(cases):
        n = 2 + rng.integers(4)
        c = CanonicalCoupling(rng.uniform(-1.2, 1.2), rng.uniform(-0.6, 0.6), n)
        ms = mode_spectrum(c)
        ev = np.sort(eigenvalues(build_canonical(c)).real)
        want = np.sort([ms.lambda_diff] * (n - 1) + [ms.lambda_mean])
        res.cases += 1
        rho = spectral_radius(build_canonical(c))
        rho_modes = max(abs(ms.lambda_diff), abs(ms.lambda_mean))
        if (np.max(np.abs(ev - want)) > 1e-9 or ms.stable != (rho_modes < 1.0)
                or abs(rho - rho_modes) > 1e-9):
            res.fail(alpha=c.alpha, beta=c.beta, C=n, eigenvalues=ev, expected=want)
    return res


def suite_stability(cases, rng, **_):
    """Hurwitz blocks give stable discretisations at every step; a planted unstable mode never does."""
    res = SuiteResult("stability")
    for _ in range(cases):
        sys = random_system(rng, d_h=4, d_v=4, d_psi=2, dense=rng.uniform() < 0.5)
        reports = certify_stability(sys, STABILITY_DELTAS)
        res.cases += 1
        if not all(r.passed for r in reports):
            res.fail(case="hurwitz", reports=[(r.delta, r.rho_h, r.rho_v) for r in reports])
            continue
        A_h = np.array(sys.A_h)
        A_h[0, :] = 0.0
        A_h[:, 0] = 0.0
        A_h[0, 0] = 0.1
        bad = certify_stability(sys.replace(A_h=A_h), STABILITY_DELTAS)
        res.cases += 1
        if any(r.passed for r in bad):
            res.fail(case="planted", reports=[(r.delta, r.rho_h, r.rho_v) for r in bad])
    return res


def suite_depth(cases, rng, **_):
    """Same-step dependency depth is 1 for pooled coupling and C for the ordered chain."""
    res = SuiteResult("depth")
    sys = random_system(rng, d_h=4, d_v=4, d_psi=4)
    for C in range(1, min(cases, 8) + 1):
        res.cases += 1
        vi, ordered = dependency_depth("vi", C, sys), dependency_depth("ordered", C, sys)
        if vi != 1 or ordered != C:
            res.fail(C=C, vi_depth=vi, ordered_depth=ordered)
    return res


def _aggregators(rng, d_psi):
    return [AggregatorSpec("mean"), AggregatorSpec("sum"), AggregatorSpec.attention(d_psi, rng)]


def suite_pooling(cases, rng, **_):
    """Pooling is bit-identical under every relabelling of the items."""
    res = SuiteResult("pooling")
    for _ in range(cases):
        C, d = 1 + rng.integers(10), 1 + rng.integers(6)
        items = rng.normal(size=(C, d)) * 10.0 ** rng.uniform(-3, 3, size=(C, 1))
        perm = rng.permutation(C)
        for spec in _aggregators(rng, d):
            res.cases += 1
            a, b = pool(spec, items), pool(spec, items[perm])
            if not np.array_equal(a, b):
                res.fail(kind=spec.kind, items=items, perm=perm, gap=float(np.max(np.abs(a - b))))
    return res


def suite_equivariance(cases, rng, break_coupling=False, **_):
    """Relabelling the input variables relabels every output row, bit for bit."""
    res = SuiteResult("equivariance")
    fault = 0.05 if break_coupling else 0.0
    for _ in range(cases):
        C, T = 2 + rng.integers(7), 8 + rng.integers(24)
        sys = random_system(rng, d_h=4, d_v=4, d_psi=4)
        dsys = discretize_zoh(sys, rng.uniform(0.1, 2.0))
        X = rng.normal(size=(C, T))
        perm = rng.permutation(C)
        while C > 1 and np.array_equal(perm, np.arange(C)):
            perm = rng.permutation(C)
        for agg in _aggregators(rng, sys.d_psi):
            res.cases += 1
            y = vi_forward(dsys, agg, X, coupling_fault=fault).y
            yp = vi_forward(dsys, agg, X[perm], coupling_fault=fault).y
            if not np.array_equal(yp, y[perm]):
                res.fail(kind=agg.kind, C=C, T=T, perm=perm,
                         gap=float(np.max(np.abs(yp - y[perm]))))
    return res


def suite_schedule(cases, rng, **_):
    """Every execution order of the per-variable updates gives identical bits."""
    res = SuiteResult("schedule")
    for _ in range(cases):
        C, T = 1 + rng.integers(8), 4 + rng.integers(12)
        sys = random_system(rng, d_h=4, d_v=4, d_psi=4, dense=rng.uniform() < 0.3)
        dsys = discretize_zoh(sys, rng.uniform(0.1, 2.0))
        agg = _aggregators(rng, sys.d_psi)[rng.integers(3)]
        X = rng.normal(size=(C, T))
        ref = vi_forward(dsys, agg, X, schedule="vectorized")
        res.cases += 1
        for schedule in SCHEDULES[1:]:
            out = vi_forward(dsys, agg, X, schedule=schedule, workers=1 + rng.integers(4))
            if not (np.array_equal(out.y, ref.y)
                    and np.array_equal(out.final_state.h_h, ref.final_state.h_h)
                    and np.array_equal(out.final_state.h_v, ref.final_state.h_v)):
                res.fail(schedule=schedule, kind=agg.kind, C=C, T=T,
                         gap=float(np.max(np.abs(out.y - ref.y))))
                break
    return res


def mean_mode_radius(dsys, kind, C):
    """Spectral radius of the closed loop seen by the variable average.

    With linear pooling of ``[h_h, x]`` the average state obeys
    ``s <- (A_bar + k B_psi W_h) s + (input terms)`` with ``k = 1`` for the
    mean and ``k = C`` for the sum; the deviations from the average only see
    ``A_bar``.
    """
    src = dsys.source
    k = 1.0 if kind == "mean" else float(C)
    feedback = np.zeros_like(dsys.A_bar)
    feedback[:, : src.d_h] = k * dsys.B_bar[:, : src.d_psi] @ src.W_v[:, : src.d_h]
    return spectral_radius(dsys.A_bar + feedback)


def suite_linearity(cases, rng, tol=1e-9, **_):
    """With linear pooling the scan is linear in its input (zero initial state).

    Instances whose pooled feedback loop is unstable are redrawn: their
    outputs grow geometrically and an absolute tolerance stops being
    meaningful.
    """
    res = SuiteResult("linearity")
    worst = 0.0
    for _ in range(cases):
        while True:
            C, T = 1 + rng.integers(8), 4 + rng.integers(28)
            sys = random_system(rng, d_h=4, d_v=4, d_psi=4)
            dsys = discretize_zoh(sys, rng.uniform(0.1, 2.0))
            agg = AggregatorSpec("mean" if rng.uniform() < 0.5 else "sum")
            if mean_mode_radius(dsys, agg.kind, C) < 1.0:
                break
        X1, X2 = rng.normal(size=(C, T)), rng.normal(size=(C, T))
        a, b = rng.normal(), rng.normal()
        lhs = vi_forward(dsys, agg, a * X1 + b * X2).y
        rhs = a * vi_forward(dsys, agg, X1).y + b * vi_forward(dsys, agg, X2).y
        gap = float(np.max(np.abs(lhs - rhs)))
        worst = max(worst, gap)
        res.cases += 1
        if not gap <= tol:
            res.fail(kind=agg.kind, C=C, T=T, a=a, b=b, gap=gap)
    res.notes["max_gap"] = worst
    return res


SUITES = {
    "coupling": (suite_coupling, 50),
    "modes": (suite_modes, 100),
    "stability": (suite_stability, 50),
    "depth": (suite_depth, 8),
    "pooling": (suite_pooling, 50),
    "equivariance": (suite_equivariance, 20),
    "schedule": (suite_schedule, 20),
    "linearity": (suite_linearity, 20),
}


def run_suites(names=None, seed=0, cases=None, break_coupling=False):
    """Run the named suites (all by default) and return their results in order."""
    names = list(SUITES) if names is None else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suites {unknown}; choose from {list(SUITES)}")
    root = Rng(seed)
    results = []
    for i, name in enumerate(SUITES):
        if name not in names:
            continue
        fn, default = SUITES[name]
        results.append(fn(default if cases is None else cases, root.spawn(i),
                          break_coupling=break_coupling))
    return results

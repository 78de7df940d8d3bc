"""Independent oracles shared by the test modules.

Nothing here calls into the package's own numerics: the oracles use
scipy, plain numpy linear algebra, or literal loops over the defining
recurrences.
"""

import numpy as np
import pytest
from scipy.linalg import expm

from vi2dssm.numerics import Rng


@pytest.fixture
def rng():
    return Rng(12345)


def rk4_one_step(sys, psi, x, delta, substeps=1000):
    """Integrate the continuous block system from zero state over one step.

    Inputs ``psi`` (d_psi,) and ``x`` (scalar) are held constant. Returns the
    state after ``delta`` and the state-transition matrix (columns are the
    responses to unit initial states).
    """
    A = np.block([[sys.A_h, np.zeros((sys.d_h, sys.d_v))], [sys.A_vh, sys.A_v]])
    b = np.concatenate([sys.A_hpsi @ psi + sys.B_h[:, 0] * x, sys.A_vpsi @ psi + sys.B_v[:, 0] * x])
    n = A.shape[0]
    h = delta / substeps
    S = np.zeros((n, n + 1))  # [transition | forced response]
    S[:, :n] = np.eye(n)

    def f(S):
        out = A @ S
        out[:, n] += b
        return out

    for _ in range(substeps):
        k1 = f(S)
        k2 = f(S + 0.5 * h * k1)
        k3 = f(S + 0.5 * h * k2)
        k4 = f(S + h * k3)
        S = S + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return S[:, n], S[:, :n]


def expm_zoh(A, B, delta):
    """ZOH pair from scipy's expm of the augmented matrix."""
    n, m = A.shape[0], B.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A
    aug[:n, n:] = B
    E = expm(aug * delta)
    return E[:n, :n], E[:n, n:]


def naive_vi(dsys, X, init=None, lag=0, z_source="hx", agg_kind="mean", agg=None):
    """Literal per-variable loop of the pooled-coupling recurrence."""
    src = dsys.source
    d_h, d_v = src.d_h, src.d_v
    C, T = X.shape
    hh = np.zeros((C, d_h)) if init is None else init.h_h.copy()
    hv = np.zeros((C, d_v)) if init is None else init.h_v.copy()
    y = np.zeros((C, T))
    psis = np.zeros((T, src.d_psi))
    xprev = np.zeros(C)
    for t in range(T):
        if z_source == "hx":
            Z = np.concatenate([hh, xprev[:, None]], 1)
        elif z_source == "x":
            Z = xprev[:, None]
        elif z_source == "h":
            Z = hh
        else:
            Z = np.concatenate([hh, hv, xprev[:, None]], 1)
        P = np.array([src.W_v @ z for z in Z])
        if agg_kind == "mean":
            psi = P.sum(0) / C
        elif agg_kind == "sum":
            psi = P.sum(0)
        else:
            u = agg.key_proj.T @ agg.query
            s = P @ u / agg.temperature
            w = np.exp(s - s.max())
            w /= w.sum()
            psi = w @ P
        psis[t] = psi
        new_h = np.empty_like(hh)
        new_v = np.empty_like(hv)
        for c in range(C):
            new_h[c] = dsys.A_h_bar @ hh[c] + dsys.B_h_x * X[c, t] + dsys.B_h_psi @ psi
            feed = new_h[c] if lag == 0 else hh[c]
            new_v[c] = (dsys.A_v_bar @ hv[c] + dsys.A_vh_bar @ feed + dsys.B_v_x * X[c, t]
                        + dsys.B_v_psi @ psi)
        hh, hv = new_h, new_v
        for c in range(C):
            y[c, t] = src.C_h[0] @ hh[c] + src.C_v[0] @ hv[c]
        xprev = X[:, t]
    return y, hh, hv, psis


def naive_ordered(sys, X, delta):
    """Literal ascending-variable chain with separately discretised blocks."""
    Ah, Bh = expm_zoh(sys.A_h, sys.B_h, delta)
    Av, Bv = expm_zoh(sys.A_v, sys.B_v, delta)
    C, T = X.shape
    hh = np.zeros((C, sys.d_h))
    y = np.zeros((C, T))
    for t in range(T):
        carry = np.zeros(sys.d_v)
        for c in range(C):
            hh[c] = Ah @ hh[c] + Bh[:, 0] * X[c, t]
            carry = Av @ carry + Bv[:, 0] * X[c, t]
            y[c, t] = sys.C_h[0] @ hh[c] + sys.C_v[0] @ carry
    return y


def lag0_matrices(dsys):
    """Single-step matrices of the recurrence that feeds the fresh h_h into h_v.

    ``h' = Ah h + Bh u`` and ``v' = Av v + Avh h' + Bv u`` is the linear map
    ``[[Ah, 0], [Avh Ah, Av]]`` with input ``[[Bh], [Avh Bh + Bv]]``.
    """
    d_h = dsys.d_h
    A = dsys.A_bar.copy()
    B = dsys.B_bar.copy()
    Avh = dsys.A_bar[d_h:, :d_h]
    A[d_h:, :d_h] = Avh @ dsys.A_bar[:d_h, :d_h]
    B[d_h:] += Avh @ dsys.B_bar[:d_h]
    return A, B

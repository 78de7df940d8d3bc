"""Permutation-equivariant inter-variable coupling.

A linear map on C variables commutes with every relabelling of the variables
exactly when it has the form ``alpha * I + beta * 11^T``. This module builds
and recognises that form, reads off its two mode eigenvalues, and checks the
commutation property by brute force on small C.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, SizeError

ENTRY_TOL = 1e-10
MAX_ENUMERATION = 6


@dataclass(frozen=True)
class CanonicalCoupling:
    alpha: float
    beta: float
    num_vars: int

    def __post_init__(self):
        if self.num_vars < 1:
            raise SizeError(f"num_vars must be >= 1, got {self.num_vars}")
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise DomainError("alpha and beta must be finite")


@dataclass(frozen=True)
class ModeSpectrum:
    lambda_diff: float
    lambda_mean: float
    stable: bool


@dataclass(frozen=True)
class Rejection:
    """Why a matrix is not of canonical form.

    ``first`` and ``second`` are 1-based (row, col) pairs whose entries should
    have matched but differ by ``gap``.
    """

    first: tuple
    second: tuple
    gap: float

    def __bool__(self):
        return False


def build_canonical(c):
    """The C x C matrix ``alpha * I + beta * 11^T``."""
    if c.num_vars < 1:
        raise SizeError("num_vars must be >= 1")
    n = c.num_vars
    return c.alpha * np.eye(n) + c.beta * np.ones((n, n))


def _square(M):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {M.shape}")
    return M


def decompose_to_canonical(M, tol=ENTRY_TOL):
    """Recover ``(alpha, beta)`` from a canonical matrix.

    Returns a :class:`CanonicalCoupling` when every diagonal entry equals the
    first one and every off-diagonal entry equals ``M[0, 1]`` (within
    ``tol``), otherwise a falsy :class:`Rejection` naming the first offending
    pair of entries in row-major scan order.
    """
    M = _square(M)
    n = M.shape[0]
    d = M[0, 0]
    o = M[0, 1] if n > 1 else 0.0
    for i in range(n):
        for j in range(n):
            ref, ref_pos = (d, (1, 1)) if i == j else (o, (1, 2))
            gap = abs(M[i, j] - ref)
            if gap > tol:
                # report the mirrored entry when it exists; that is the pair a
                # transposition would have to exchange
                other = (j + 1, i + 1) if i != j and M[j, i] != M[i, j] else ref_pos
                return Rejection(first=(i + 1, j + 1), second=other, gap=float(gap))
    return CanonicalCoupling(alpha=float(d - o), beta=float(o), num_vars=n)


def permutation_matrix(perm):
    """``P`` with ``(P x)[i] = x[perm[i]]``."""
    n = len(perm)
    P = np.zeros((n, n))
    P[np.arange(n), perm] = 1.0
    return P


def _commutes(M, perm, tol):
    # M P and P M without forming P: column and row shuffles
    return np.max(np.abs(M[:, np.argsort(perm)] - M[perm, :])) <= tol if len(perm) else True


def commutes_with_all_permutations(M, tol=ENTRY_TOL):
    """True iff ``M P = P M`` for every permutation matrix ``P``.

    Checks the full symmetric group and, independently, the transpositions
    that generate it; the two answers must agree.
    """
    M = _square(M)
    n = M.shape[0]
    if n > MAX_ENUMERATION:
        raise SizeError(f"full enumeration is limited to C <= {MAX_ENUMERATION}, got {n}")
    full = all(_commutes(M, np.array(p), tol) for p in itertools.permutations(range(n)))
    swaps = True
    for i, j in itertools.combinations(range(n), 2):
        p = np.arange(n)
        p[i], p[j] = j, i
        if not _commutes(M, p, tol):
            swaps = False
            break
    if full != swaps:
        raise AssertionError(
            "full-group and transposition checks disagree; the generator argument is broken"
        )
    return full


def mode_spectrum(c):
    """Eigenvalues on the zero-sum subspace and on the span of the ones vector."""
    lam_diff = float(c.alpha)
    lam_mean = float(c.alpha + c.num_vars * c.beta)
    return ModeSpectrum(
        lambda_diff=lam_diff,
        lambda_mean=lam_mean,
        stable=abs(lam_diff) < 1.0 and abs(lam_mean) < 1.0,
    )


def zero_sum_basis(n):
    """Orthonormal basis (columns) of the vectors orthogonal to ``1``."""
    if n < 2:
        return np.zeros((n, 0))
    helmert = np.zeros((n, n - 1))
    for k in range(1, n):
        helmert[:k, k - 1] = 1.0
        helmert[k, k - 1] = -float(k)
        helmert[:, k - 1] /= np.sqrt(k * (k + 1))
    return helmert

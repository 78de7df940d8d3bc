"""Dense linear algebra and signal primitives.

Everything here works on plain numpy arrays. The routines are written for
desk-scale problems (matrices up to a few hundred rows, sequences up to a few
thousand samples) and favour being easy to certify against an oracle over raw
speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, NumericalError, SizeError

__all__ = [
    "ComplexSpectrum",
    "Rng",
    "canonical_sum",
    "eigenvalues",
    "fixed_order_matvec",
    "irdft",
    "mat_exp",
    "rdft",
    "spectral_radius",
]

_TAYLOR_ORDER = 12
_SCALED_NORM = 0.5
_NAIVE_DFT_MAX = 4096


def _as_square(A, name="A"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise DomainError(f"{name} has non-finite entries")
    return A


# ---------------------------------------------------------------------------
# matrix exponential


def mat_exp(A):
    """Matrix exponential by scaling and squaring.

    The scaled matrix ``A / 2**s`` has 1-norm at most 0.5 and its exponential
    is taken from a degree-12 Taylor polynomial (Horner form), then squared
    ``s`` times. Diagonal inputs skip all of that and exponentiate entrywise.
    """
    A = _as_square(A)
    n = A.shape[0]
    if n == 0:
        return A.copy()
    d = np.diag(A)
    if not np.any(A - np.diag(d)):
        return np.diag(np.exp(d))

    norm = np.abs(A).sum(axis=0).max()
    s = 0
    if norm > _SCALED_NORM:
        s = int(math.ceil(math.log2(norm / _SCALED_NORM)))
    X = A / (2.0**s)

    eye = np.eye(n)
    E = eye + X / _TAYLOR_ORDER
    for k in range(_TAYLOR_ORDER - 1, 0, -1):
        E = eye + (X @ E) / k
    for _ in range(s):
        E = E @ E
    return E


# ---------------------------------------------------------------------------
# eigenvalues


def _hessenberg(A):
    """Householder reduction to upper Hessenberg form (similarity transform)."""
    H = A.copy()
    n = H.shape[0]
    for k in range(n - 2):
        x = H[k + 1 :, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x.copy()
        v[0] += math.copysign(alpha, x[0]) if x[0] != 0 else alpha
        vnorm = np.linalg.norm(v)
        if vnorm == 0.0:
            continue
        v /= vnorm
        H[k + 1 :, k:] -= 2.0 * np.outer(v, v @ H[k + 1 :, k:])
        H[:, k + 1 :] -= 2.0 * np.outer(H[:, k + 1 :] @ v, v)
        H[k + 2 :, k] = 0.0
    return H


def _hqr(H, max_iter):
    """Francis double-shift QR on an upper Hessenberg matrix.

    Works on a 1-based nested list copy so the index bookkeeping of the classic
    formulation carries over unchanged. Returns (real parts, imaginary parts).
    """
    n = H.shape[0]
    a = [[0.0] * (n + 1)] + [[0.0] + [float(v) for v in row] for row in H]
    wr = [0.0] * (n + 1)
    wi = [0.0] * (n + 1)

    anorm = 0.0
    for i in range(1, n + 1):
        for j in range(max(i - 1, 1), n + 1):
            anorm += abs(a[i][j])

    nn = n
    t = 0.0
    total = 0
    while nn >= 1:
        its = 0
        while True:
            l = 1
            for ll in range(nn, 1, -1):
                s = abs(a[ll - 1][ll - 1]) + abs(a[ll][ll])
                if s == 0.0:
                    s = anorm
                if abs(a[ll][ll - 1]) + s == s:
                    a[ll][ll - 1] = 0.0
                    l = ll
                    break
            x = a[nn][nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1][nn - 1]
            w = a[nn][nn - 1] * a[nn - 1][nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break

            if total >= max_iter:
                residual = abs(a[nn][nn - 1])
                raise NumericalError(
                    f"QR iteration did not converge after {total} iterations "
                    f"({nn} eigenvalues outstanding, subdiagonal residual {residual:.3e})"
                )
            if its > 0 and its % 10 == 0:
                # exceptional shift
                t += x
                for i in range(1, nn + 1):
                    a[i][i] -= x
                s = abs(a[nn][nn - 1]) + abs(a[nn - 1][nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            total += 1

            m = nn - 2
            while m >= l:
                z = a[m][m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1][m] + a[m][m + 1]
                q = a[m + 1][m + 1] - z - r - s
                r = a[m + 2][m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m][m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1][m - 1]) + abs(z) + abs(a[m + 1][m + 1]))
                if u + v == v:
                    break
                m -= 1

            for i in range(m + 2, nn + 1):
                a[i][i - 2] = 0.0
                if i != m + 2:
                    a[i][i - 3] = 0.0

            for k in range(m, nn):
                if k != m:
                    p = a[k][k - 1]
                    q = a[k + 1][k - 1]
                    r = a[k + 2][k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k][k - 1] = -a[k][k - 1]
                else:
                    a[k][k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                rk, rk1 = a[k], a[k + 1]
                rk2 = a[k + 2] if k != nn - 1 else None
                for j in range(k, nn + 1):
                    p = rk[j] + q * rk1[j]
                    if rk2 is not None:
                        p += r * rk2[j]
                        rk2[j] -= p * z
                    rk1[j] -= p * y
                    rk[j] -= p * x
                mmin = nn if nn < k + 3 else k + 3
                for i in range(l, mmin + 1):
                    row = a[i]
                    p = x * row[k] + y * row[k + 1]
                    if k != nn - 1:
                        p += z * row[k + 2]
                        row[k + 2] -= p * r
                    row[k + 1] -= p * q
                    row[k] -= p
    return np.array(wr[1:]), np.array(wi[1:])


def eigenvalues(A):
    """All eigenvalues of a square matrix, as a complex array.

    Hessenberg reduction followed by Francis double-shift QR with an overall
    cap of ``100 * n`` sweeps. Symmetric input returns purely real values.
    """
    A = _as_square(A)
    n = A.shape[0]
    if n > 512:
        raise SizeError(f"eigenvalues supports n <= 512, got {n}")
    if n == 0:
        return np.zeros(0, dtype=complex)
    if n == 1:
        return np.array([complex(A[0, 0])])
    scale = max(np.abs(A).max(), 1.0)
    symmetric = np.allclose(A, A.T, rtol=0.0, atol=1e-13 * scale)
    H = _hessenberg(A)
    wr, wi = _hqr(H, max_iter=100 * n)
    if symmetric:
        wi = np.zeros_like(wi)
    vals = wr + 1j * wi
    order = np.lexsort((vals.imag, vals.real))
    return vals[order]


def spectral_radius(A):
    """Largest eigenvalue modulus."""
    vals = eigenvalues(A)
    if vals.size == 0:
        return 0.0
    return float(np.max(np.abs(vals)))


# ---------------------------------------------------------------------------
# real DFT


@dataclass(frozen=True)
class ComplexSpectrum:
    """Non-redundant half of the DFT of a real signal along the last axis.

    ``real`` and ``imag`` hold bins ``0 .. n//2``; ``n`` is the length of the
    signal that produced them.
    """

    real: np.ndarray
    imag: np.ndarray
    n: int

    @property
    def length(self):
        return self.real.shape[-1]

    def as_complex(self):
        return self.real + 1j * self.imag


def _dft_angles(n, bins):
    k = np.arange(bins)
    t = np.arange(n)
    # reduce k*t mod n before scaling so large products keep full precision
    idx = np.outer(k, t) % n
    return (2.0 * np.pi / n) * idx


def _fft_pow2(x):
    """Iterative radix-2 FFT along the last axis; length must be a power of 2."""
    n = x.shape[-1]
    levels = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(levels):
        rev |= ((idx >> b) & 1) << (levels - 1 - b)
    y = x[..., rev].astype(complex)
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        y = y.reshape(y.shape[:-1] + (n // size, size))
        even = y[..., :half]
        odd = y[..., half:] * tw
        y = np.concatenate([even + odd, even - odd], axis=-1)
        y = y.reshape(y.shape[:-2] + (n,))
        size *= 2
    return y


def _ifft_pow2(x):
    n = x.shape[-1]
    return np.conj(_fft_pow2(np.conj(x))) / n


def _bluestein(x, bins):
    """Chirp-z evaluation of the first ``bins`` DFT bins for any length."""
    n = x.shape[-1]
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp phase exact for large n
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    m = 1 << (2 * n - 1).bit_length()
    a = np.zeros(x.shape[:-1] + (m,), dtype=complex)
    a[..., :n] = x * chirp
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(chirp)
    b[m - n + 1 :] = np.conj(chirp[1:])[::-1]
    conv = _ifft_pow2(_fft_pow2(a) * _fft_pow2(b))
    out = conv[..., :n] * chirp
    return out[..., :bins]


def rdft(x):
    """Bins ``0 .. T//2`` of the DFT of a real sequence (last axis).

    Lengths up to 4096 use the direct O(T^2) sum; longer inputs go through a
    Bluestein chirp-z transform.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        raise DimensionError("rdft needs at least one axis")
    n = x.shape[-1]
    if n < 2:
        raise SizeError(f"rdft needs T >= 2, got {n}")
    if not np.all(np.isfinite(x)):
        raise DomainError("rdft input has non-finite entries")
    bins = n // 2 + 1
    if n <= _NAIVE_DFT_MAX:
        # row-stable products keep the transform of a row independent of
        # the batch it sits in
        ang = _dft_angles(n, bins)
        real = _rowwise(np.cos(ang), x)
        imag = -_rowwise(np.sin(ang), x)
    else:
        z = _bluestein(x, bins)
        real, imag = z.real.copy(), z.imag.copy()
    # exact zeros where the transform of a real signal must vanish
    imag[..., 0] = 0.0
    if n % 2 == 0:
        imag[..., -1] = 0.0
    return ComplexSpectrum(real=real, imag=imag, n=n)


def irdft(spec):
    """Inverse of :func:`rdft`: recover the length-``n`` real signal."""
    n = spec.n
    bins = n // 2 + 1
    if spec.real.shape[-1] != bins or spec.imag.shape != spec.real.shape:
        raise DimensionError("spectrum length does not match n")
    weight = np.full(bins, 2.0)
    weight[0] = 1.0
    if n % 2 == 0:
        weight[-1] = 1.0
    ang = _dft_angles(n, bins)  # (bins, n)
    re = spec.real * weight
    im = spec.imag * weight
    return (_rowwise(np.cos(ang).T, re) - _rowwise(np.sin(ang).T, im)) / n


def _rowwise(M, x):
    """``x @ M.T`` for any number of leading axes, row by row."""
    return fixed_order_matvec(M, x[..., None, :])[..., 0, :]


# ---------------------------------------------------------------------------
# order-stable arithmetic helpers


def fixed_order_matvec(M, v):
    """Apply ``M`` to the last axis of ``v`` one column at a time.

    ``M`` has shape ``(..., m, k)`` and ``v`` has shape ``(..., rows, k)``; the
    result has shape ``(..., rows, m)``. Every output entry is produced by the
    same sequence of elementwise IEEE operations regardless of which row it
    sits in, so reordering rows of ``v`` reorders the result bit-for-bit. BLAS
    kernels make no such promise.
    """
    M = np.asarray(M, dtype=float)
    v = np.asarray(v, dtype=float)
    k = M.shape[-1]
    if v.shape[-1] != k:
        raise DimensionError(f"matrix has {k} columns, vectors have {v.shape[-1]} entries")
    Mb = M[..., None, :, :]
    acc = v[..., 0:1] * Mb[..., 0]
    if k > 1:
        tmp = np.empty_like(acc)
        for j in range(1, k):
            np.multiply(v[..., j : j + 1], Mb[..., j], out=tmp)
            np.add(acc, tmp, out=acc)
    return acc


def canonical_sum(values, axis=-2):
    """Sum along ``axis`` with a result that ignores the input order.

    Each column is sorted first and then reduced by numpy's summation, whose
    association pattern depends only on the length and memory layout of the
    axis (pairwise when the axis is contiguous, left to right otherwise).
    Any reordering of the items along ``axis`` therefore yields a
    bit-identical sum.
    """
    a = np.sort(np.asarray(values, dtype=float), axis=axis)
    if a.shape[axis] == 0:
        raise SizeError("cannot sum an empty collection")
    return np.add.reduce(a, axis=axis)


# ---------------------------------------------------------------------------
# random numbers

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix64(z):
    """splitmix64 finaliser on a uint64 array (wrapping arithmetic)."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def _mix64_int(z):
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """Counter-based splitmix64 generator.

    Draw ``i`` (1-based, counted over the generator's lifetime) is
    ``mix(seed + i * golden_gamma)``. The integer stream is therefore a pure
    function of (seed, position) and identical on every platform; draws are
    vectorised with numpy's wrapping uint64 arithmetic.
    """

    def __init__(self, seed=0):
        seed = int(seed)
        if seed < 0 or seed > _MASK64:
            raise DomainError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def next_u64(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + idx * np.uint64(_GAMMA)
        out = _mix64(state)
        if size is None:
            return int(out[0])
        return out.reshape(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        """Doubles in ``[low, high)`` with 53 random mantissa bits."""
        u = self.next_u64(1 if size is None else size)
        f = (np.asarray(u) >> np.uint64(11)).astype(float) * (1.0 / (1 << 53))
        f = low + (high - low) * f
        return float(f.reshape(-1)[0]) if size is None else f

    def normal(self, loc=0.0, scale=1.0, size=None):
        """Gaussian draws by Box-Muller (cosine branch only)."""
        shape = (1,) if size is None else (size if isinstance(size, tuple) else (size,))
        u1 = 1.0 - self.uniform(size=shape)
        u2 = self.uniform(size=shape)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        z = loc + scale * z
        return float(z[0]) if size is None else z

    def integers(self, n, size=None):
        """Integers in ``[0, n)``."""
        if n <= 0:
            raise DomainError("integers needs n >= 1")
        u = self.uniform(size=1 if size is None else size)
        out = np.minimum(np.floor(np.asarray(u) * n).astype(np.int64), n - 1)
        return int(out.reshape(-1)[0]) if size is None else out

    def permutation(self, n):
        """A uniformly random permutation of ``range(n)``."""
        keys = self.next_u64((n,))
        return np.argsort(keys, kind="stable")

    def spawn(self, key):
        """Independent child generator determined by (seed, key) only."""
        child = _mix64_int(self.seed ^ _mix64_int((int(key) + 1) * _GAMMA))
        return Rng(child)

"""Continuous and discrete two-state SSM blocks.

Per variable, the horizontal state ``h_h`` (size d_h) and vertical state
``h_v`` (size d_v) obey

    dh_h/dt = A_h h_h                + A_hpsi psi + B_h x
    dh_v/dt = A_vh h_h + A_v h_v     + A_vpsi psi + B_v x
    y       = C_h h_h + C_v h_v

so the stacked state matrix is block lower triangular and the input matrix
has the pooled field ``psi`` in its first d_psi columns and the scalar input
``x`` in its last column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, ParseError
from .numerics import eigenvalues, mat_exp, spectral_radius

DEFAULT_D_H = 8
DEFAULT_D_V = 8
DEFAULT_D_PSI = 8

_BLOCKS = ("A_h", "A_v", "A_vh", "A_hpsi", "A_vpsi", "B_h", "B_v", "C_h", "C_v", "W_v")


def _mat(value, name):
    a = np.array(value, dtype=float, ndmin=2)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be two-dimensional")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ContinuousSystem:
    """All continuous-time parameter blocks of one two-state SSM.

    Column vectors ``B_h`` (d_h x 1) and ``B_v`` (d_v x 1), row vectors
    ``C_h`` (1 x d_h) and ``C_v`` (1 x d_v). ``W_v`` projects a variable's
    feature vector (width d_z) to the pooled space (width d_psi).
    """

    A_h: np.ndarray
    A_v: np.ndarray
    A_vh: np.ndarray
    A_hpsi: np.ndarray
    A_vpsi: np.ndarray
    B_h: np.ndarray
    B_v: np.ndarray
    C_h: np.ndarray
    C_v: np.ndarray
    W_v: np.ndarray

    def __post_init__(self):
        for name in _BLOCKS:
            object.__setattr__(self, name, _mat(getattr(self, name), name))
        # vectors given as flat lists come in as rows; fix orientation
        for name in ("B_h", "B_v"):
            v = getattr(self, name)
            if v.shape[0] == 1 and v.shape[1] != 1:
                object.__setattr__(self, name, _mat(v.T, name))
        for name in ("C_h", "C_v"):
            v = getattr(self, name)
            if v.shape[1] == 1 and v.shape[0] != 1:
                object.__setattr__(self, name, _mat(v.T, name))
        self._check_dims()

    def _check_dims(self):
        d_h, d_v, d_psi = self.d_h, self.d_v, self.d_psi
        expected = {
            "A_h": (d_h, d_h),
            "A_v": (d_v, d_v),
            "A_vh": (d_v, d_h),
            "A_hpsi": (d_h, d_psi),
            "A_vpsi": (d_v, d_psi),
            "B_h": (d_h, 1),
            "B_v": (d_v, 1),
            "C_h": (1, d_h),
            "C_v": (1, d_v),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise DimensionError(f"{name} has shape {got}, expected {shape}")
        if self.W_v.shape[0] != d_psi:
            raise DimensionError(f"W_v has {self.W_v.shape[0]} rows, expected d_psi={d_psi}")

    @property
    def d_h(self):
        return self.A_h.shape[0]

    @property
    def d_v(self):
        return self.A_v.shape[0]

    @property
    def d_psi(self):
        return self.A_hpsi.shape[1]

    @property
    def d_z(self):
        return self.W_v.shape[1]

    @property
    def n(self):
        return self.d_h + self.d_v

    def state_matrix(self):
        d_h = self.d_h
        A = np.zeros((self.n, self.n))
        A[:d_h, :d_h] = self.A_h
        A[d_h:, :d_h] = self.A_vh
        A[d_h:, d_h:] = self.A_v
        return A

    def input_matrix(self):
        """Columns ``[psi (d_psi) | x (1)]``."""
        top = np.hstack([self.A_hpsi, self.B_h])
        bottom = np.hstack([self.A_vpsi, self.B_v])
        return np.vstack([top, bottom])

    def readout(self):
        return np.hstack([self.C_h, self.C_v])

    def is_diagonal(self):
        """Both self-dynamics blocks are diagonal."""
        return not (np.any(self.A_h - np.diag(np.diag(self.A_h)))
                    or np.any(self.A_v - np.diag(np.diag(self.A_v))))

    def replace(self, **blocks):
        params = {name: getattr(self, name) for name in _BLOCKS}
        params.update(blocks)
        return ContinuousSystem(**params)

    def to_text(self):
        return format_blocks({name: getattr(self, name) for name in _BLOCKS},
                             header="continuous two-state SSM")

    @classmethod
    def from_text(cls, text):
        blocks = parse_blocks(text)
        missing = [b for b in _BLOCKS if b not in blocks]
        if missing:
            raise ParseError(f"missing blocks: {', '.join(missing)}")
        return cls(**{b: blocks[b] for b in _BLOCKS})


@dataclass(frozen=True, eq=False)
class DiscreteSystem:
    """ZOH discretisation of a :class:`ContinuousSystem` at step ``delta``."""

    delta: float
    A_bar: np.ndarray
    B_bar: np.ndarray
    source: ContinuousSystem = field(repr=False)

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta}")

    @property
    def d_h(self):
        return self.source.d_h

    @property
    def d_v(self):
        return self.source.d_v

    @property
    def d_psi(self):
        return self.source.d_psi

    # block views ---------------------------------------------------------
    @property
    def A_h_bar(self):
        return self.A_bar[: self.d_h, : self.d_h]

    @property
    def A_vh_bar(self):
        return self.A_bar[self.d_h :, : self.d_h]

    @property
    def A_v_bar(self):
        return self.A_bar[self.d_h :, self.d_h :]

    @property
    def B_h_psi(self):
        return self.B_bar[: self.d_h, : self.d_psi]

    @property
    def B_v_psi(self):
        return self.B_bar[self.d_h :, : self.d_psi]

    @property
    def B_h_x(self):
        return self.B_bar[: self.d_h, self.d_psi]

    @property
    def B_v_x(self):
        return self.B_bar[self.d_h :, self.d_psi]


@dataclass(frozen=True)
class StabilityReport:
    delta: float
    rho_h: float
    rho_v: float
    passed: bool


@dataclass(frozen=True)
class ConvolutionKernels:
    """``K_psi[k]`` (row of width d_psi) and ``K_x[k]`` for lags k = 0..L-1."""

    K_psi: np.ndarray
    K_x: np.ndarray

    @property
    def length(self):
        return self.K_x.shape[0]


def zoh(A, B, delta):
    """ZOH pair ``(exp(A delta), int_0^delta exp(A s) ds B)``.

    Both come out of one exponential of the augmented matrix
    ``[[A, B], [0, 0]] * delta``, which needs no inverse of ``A``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n, m = A.shape[0], B.shape[1]
    if A.shape != (n, n) or B.shape[0] != n:
        raise DimensionError(f"incompatible shapes A{A.shape}, B{B.shape}")
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A
    aug[:n, n:] = B
    E = mat_exp(aug * delta)
    return E[:n, :n], E[:n, n:]


def discretize_zoh(sys, delta):
    """Exact discretisation of the block system under a zero-order hold."""
    if not np.isfinite(delta) or not delta > 0:
        raise DomainError(f"delta must be a positive finite number, got {delta}")
    A_bar, B_bar = zoh(sys.state_matrix(), sys.input_matrix(), delta)
    return DiscreteSystem(delta=float(delta), A_bar=A_bar, B_bar=B_bar, source=sys)


def certify_stability(sys, deltas):
    """Spectral radii of ``exp(delta A_h)`` and ``exp(delta A_v)`` per step size."""
    reports = []
    for delta in deltas:
        if not delta > 0:
            raise DomainError(f"delta must be positive, got {delta}")
        rho_h = spectral_radius(mat_exp(delta * sys.A_h))
        rho_v = spectral_radius(mat_exp(delta * sys.A_v))
        reports.append(StabilityReport(float(delta), rho_h, rho_v, rho_h < 1.0 and rho_v < 1.0))
    return reports


def is_hurwitz(A):
    return bool(np.all(eigenvalues(A).real < 0))


def convolution_kernels(dsys, readout=None, length=1):
    """Impulse responses of the discrete system to the psi and x inputs.

    ``readout`` is a pair ``(C_h, C_v)``; it defaults to the source system's.
    """
    if length < 1:
        raise DomainError(f"length must be >= 1, got {length}")
    if readout is None:
        readout = (dsys.source.C_h, dsys.source.C_v)
    c = np.hstack([np.atleast_2d(readout[0]), np.atleast_2d(readout[1])]).ravel()
    n = dsys.A_bar.shape[0]
    if c.shape[0] != n:
        raise DimensionError(f"readout has {c.shape[0]} entries, state has {n}")
    d_psi = dsys.d_psi
    K = np.empty((length, dsys.B_bar.shape[1]))
    v = dsys.B_bar.copy()
    for k in range(length):
        K[k] = c @ v
        v = dsys.A_bar @ v
    return ConvolutionKernels(K_psi=K[:, :d_psi].copy(), K_x=K[:, d_psi].copy())


def causal_convolve(kernels, psi, x):
    """Output of the discrete system from zero state, written as a convolution.

    ``psi`` has shape (T, d_psi) and ``x`` shape (..., T); returns
    ``y[..., t] = sum_{k<=t} K_psi[k] . psi[t-k] + K_x[k] x[..., t-k]``.
    """
    psi = np.asarray(psi, dtype=float)
    x = np.asarray(x, dtype=float)
    T = x.shape[-1]
    if psi.shape[0] != T:
        raise DimensionError(f"psi has {psi.shape[0]} steps, x has {T}")
    if kernels.length < T:
        raise DimensionError(f"kernels of length {kernels.length} cannot cover {T} steps")
    g = psi @ kernels.K_psi[:T].T  # g[t, k] = K_psi[k] . psi[t]
    y = np.zeros(x.shape)
    for t in range(T):
        k = np.arange(t + 1)
        y[..., t] = g[t - k, k].sum() + x[..., t - k] @ kernels.K_x[k]
    return y


def random_system(rng, d_h=DEFAULT_D_H, d_v=DEFAULT_D_V, d_psi=DEFAULT_D_PSI, d_z=None,
                  coupling_scale=0.5, psi_scale=0.3, dense=False):
    """Seeded system with Hurwitz self-dynamics.

    Diagonal decay rates are ``exp(a)`` with ``a`` spread over [-2, 1.5] and
    the input gains equal the rates (unit DC gain per mode). ``dense=True``
    adds a small random off-diagonal part to ``A_h`` and ``A_v`` and shifts
    them to stay Hurwitz.
    """
    if d_z is None:
        d_z = d_h + 1
    log_h = np.linspace(-2.0, 1.5, d_h) + 0.1 * rng.normal(size=d_h)
    log_v = np.linspace(-2.0, 1.5, d_v) + 0.1 * rng.normal(size=d_v)
    rate_h, rate_v = np.exp(log_h), np.exp(log_v)
    A_h = -np.diag(rate_h)
    A_v = -np.diag(rate_v)
    if dense:
        for M in (A_h, A_v):
            k = M.shape[0]
            M += 0.3 * rng.normal(size=(k, k)) / np.sqrt(k)
            # push the spectrum left of the imaginary axis
            worst = np.max(eigenvalues(M).real)
            if worst >= -0.05:
                M -= (worst + 0.1) * np.eye(k)
    sign_v = np.where(rng.uniform(size=d_v) < 0.5, -1.0, 1.0)
    return ContinuousSystem(
        A_h=A_h,
        A_v=A_v,
        A_vh=coupling_scale * rng.normal(size=(d_v, d_h)) / np.sqrt(d_h),
        A_hpsi=psi_scale * rng.normal(size=(d_h, d_psi)) / np.sqrt(d_psi),
        A_vpsi=psi_scale * rng.normal(size=(d_v, d_psi)) / np.sqrt(d_psi),
        B_h=rate_h[:, None],
        B_v=(sign_v * rate_v)[:, None],
        C_h=rng.normal(size=(1, d_h)) / np.sqrt(d_h + d_v),
        C_v=rng.normal(size=(1, d_v)) / np.sqrt(d_h + d_v),
        W_v=rng.normal(size=(d_psi, d_z)) / np.sqrt(d_z),
    )


# ---------------------------------------------------------------------------
# key-value text format
#
#   # comment
#   name = rows x cols : v11, v12, ...     (matrix, row-major)
#   name = value                            (scalar)


def format_blocks(blocks, header=None):
    lines = []
    if header:
        lines.append(f"# {header}")
    for name, value in blocks.items():
        a = np.asarray(value, dtype=float)
        if a.ndim == 0:
            lines.append(f"{name} = {float(a)!r}")
        else:
            a2 = a.reshape(a.shape[0], -1) if a.ndim > 1 else a.reshape(1, -1)
            vals = ", ".join(repr(float(v)) for v in a2.ravel())
            lines.append(f"{name} = {a2.shape[0]}x{a2.shape[1]} : {vals}")
    return "\n".join(lines) + "\n"


def parse_blocks(text):
    blocks = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'name = value', got {raw!r}", line=lineno)
        name, _, value = (s.strip() for s in line.partition("="))
        try:
            if ":" in value:
                shape, _, data = value.partition(":")
                rows, _, cols = shape.strip().partition("x")
                rows, cols = int(rows), int(cols)
                vals = [float(v) for v in data.split(",")] if data.strip() else []
                if len(vals) != rows * cols:
                    raise ParseError(
                        f"{name}: {len(vals)} values for a {rows}x{cols} block", line=lineno
                    )
                blocks[name] = np.array(vals, dtype=float).reshape(rows, cols)
            else:
                blocks[name] = float(value)
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"{name}: {exc}", line=lineno) from None
    return blocks

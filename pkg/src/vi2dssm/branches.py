"""Multi-scale temporal branches, a spectral branch and gated fusion.

Three views of the same input are scanned with the pooled-coupling engine:

* long: the template discretised at a coarse step ``delta_long``;
* short: the same template at a fine step ``delta_short``;
* spectral: the input is moved to the frequency domain first (one real
  vector of length T per variable) and scanned from low to high bins at
  ``delta_freq``.

A position-wise softmax gate mixes the three feature maps.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .aggregation import AggregatorSpec
from .errors import DimensionError, DomainError, ParseError, SizeError
from .numerics import ComplexSpectrum, Rng, irdft, rdft
from .scan import vi_forward
from .ssm_core import ContinuousSystem, discretize_zoh, format_blocks, parse_blocks, random_system

BRANCHES = ("long", "short", "spectral")
DELTA_FREQ_RANGE = (0.001, 0.01)


@dataclass
class BranchConfig:
    """Steps, systems and aggregators of the three branches.

    With ``independent=False`` every branch discretises the one shared
    ``template``; otherwise ``templates`` maps each branch name to its own
    continuous system. ``aggs`` may override ``agg`` per branch.
    """

    delta_long: float = 1.0
    delta_short: float = 0.01
    delta_freq: float = 0.005
    template: ContinuousSystem | None = None
    agg: AggregatorSpec = field(default_factory=AggregatorSpec)
    independent: bool = False
    templates: dict | None = None
    aggs: dict | None = None

    @classmethod
    def random(cls, rng=None, independent=False, **kw):
        """Config with random stable template(s) of the default sizes."""
        rng = Rng(0) if rng is None else rng
        if independent:
            templates = {b: random_system(rng.spawn(i)) for i, b in enumerate(BRANCHES)}
            return cls(independent=True, templates=templates, **kw)
        return cls(template=random_system(rng), **kw)

    def delta(self, branch):
        _check_branch(branch)
        return {"long": self.delta_long, "short": self.delta_short,
                "spectral": self.delta_freq}[branch]

    def system(self, branch):
        _check_branch(branch)
        if self.independent:
            if not self.templates or branch not in self.templates:
                raise DomainError(f"independent config has no template for {branch!r}")
            return self.templates[branch]
        if self.template is None:
            raise DomainError("config has no shared template")
        return self.template

    def aggregator(self, branch):
        _check_branch(branch)
        if self.aggs and branch in self.aggs:
            return self.aggs[branch]
        return self.agg

    def check(self):
        """Raise :class:`DomainError` unless the three steps are a valid set.

        Kept separate from construction so that degenerate configs (for
        instance equal long and short steps) can still be built and run
        branch by branch. Also requires a system for every branch.
        """
        self.check_steps()
        for branch in BRANCHES:
            self.system(branch)
        return self

    def check_steps(self):
        """The step-size part of :meth:`check`."""
        for branch in BRANCHES:
            _check_step(branch, self.delta(branch))
        if not self.delta_short < self.delta_long:
            raise DomainError(
                f"delta_short ({self.delta_short}) must be smaller than delta_long ({self.delta_long})"
            )
        return self

    def to_text(self):
        scalars = {
            "delta_long": self.delta_long,
            "delta_short": self.delta_short,
            "delta_freq": self.delta_freq,
            "independent": float(self.independent),
        }
        return format_blocks(scalars, header="branch config")

    @classmethod
    def from_text(cls, text, **kw):
        blocks = parse_blocks(text)
        missing = [k for k in ("delta_long", "delta_short", "delta_freq") if k not in blocks]
        if missing:
            raise ParseError(f"missing keys: {', '.join(missing)}")
        return cls(
            delta_long=float(blocks["delta_long"]),
            delta_short=float(blocks["delta_short"]),
            delta_freq=float(blocks["delta_freq"]),
            independent=bool(blocks.get("independent", 0.0)),
            **kw,
        )


def _check_branch(branch):
    if branch not in BRANCHES:
        raise DomainError(f"unknown branch {branch!r}; choose from {BRANCHES}")


def _check_step(branch, delta):
    if not (np.isfinite(delta) and delta > 0):
        raise DomainError(f"{branch} step must be positive and finite, got {delta}")
    if branch == "spectral":
        lo, hi = DELTA_FREQ_RANGE
        if not lo <= delta <= hi:
            raise DomainError(f"delta_freq must lie in [{lo}, {hi}], got {delta}")


# ---------------------------------------------------------------------------
# spectral repacking


def _check_even_length(T):
    if T < 4 or T % 2:
        raise SizeError(
            f"spectral transform needs an even length T >= 4, got {T}; "
            "pad the series with one trailing zero (or trim one step) first"
        )


def spectral_transform(X):
    """Repack each variable's DFT into a real vector of the same length T.

    Layout along the last axis: real parts of bins ``0 .. T/2`` followed by
    imaginary parts of bins ``1 .. T/2 - 1``. The imaginary parts of the DC
    and Nyquist bins vanish for real input and are dropped.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim < 1:
        raise DimensionError("expected a series with time on the last axis")
    T = X.shape[-1]
    _check_even_length(T)
    spec = rdft(X)
    return np.concatenate([spec.real, spec.imag[..., 1:-1]], axis=-1)


def inverse_spectral_transform(S):
    """Undo :func:`spectral_transform`."""
    S = np.asarray(S, dtype=float)
    T = S.shape[-1]
    _check_even_length(T)
    half = T // 2
    real = S[..., : half + 1]
    imag = np.zeros_like(real)
    imag[..., 1:half] = S[..., half + 1 :]
    return irdft(ComplexSpectrum(real=real, imag=imag, n=T))


def slot_bins(T):
    """Frequency bin of each slot of the repacked spectrum."""
    _check_even_length(T)
    half = T // 2
    return np.concatenate([np.arange(half + 1), np.arange(1, half)])


def bin_activity(states):
    """Per-bin magnitude of the state innovations along the frequency scan.

    ``states`` has shape ``(..., C, T, d)`` with T spectral slots. The
    innovation at a slot is the change of the state relative to the
    previous slot; its norm over variables and state entries is credited to
    the slot's bin, so the real and imaginary slots of a bin add up.
    Returns ``(..., T/2 + 1)``.
    """
    states = np.asarray(states, dtype=float)
    T = states.shape[-2]
    step = np.diff(states, axis=-2, prepend=np.zeros_like(states[..., :1, :]))
    mag = np.sqrt(np.sum(step**2, axis=(-3, -1)))  # (..., T)
    bins = slot_bins(T)
    out = np.zeros(mag.shape[:-1] + (T // 2 + 1,))
    for slot, b in enumerate(bins):
        out[..., b] += mag[..., slot]
    return out


# ---------------------------------------------------------------------------
# branches


def scan_branch(cfg, branch, X, keep_states=False, **scan_kw):
    """Full scan output of one branch (see :func:`run_branch`)."""
    _check_branch(branch)
    delta = cfg.delta(branch)
    _check_step(branch, delta)
    dsys = discretize_zoh(cfg.system(branch), delta)
    seq = spectral_transform(X) if branch == "spectral" else X
    return vi_forward(dsys, cfg.aggregator(branch), seq, keep_states=keep_states, **scan_kw)


def run_branch(cfg, branch, X, **scan_kw):
    """C x T feature map of one branch.

    The branch's system is discretised at the branch's step and scanned
    over time; the spectral branch scans the repacked spectrum instead, so
    its columns are frequency slots.
    """
    return scan_branch(cfg, branch, X, **scan_kw).y


def run_branches(cfg, X, parallel=False, **scan_kw):
    """Feature maps of all three branches, keyed by branch name."""
    cfg.check()
    if not parallel:
        return {b: run_branch(cfg, b, X, **scan_kw) for b in BRANCHES}
    with ThreadPoolExecutor(max_workers=len(BRANCHES)) as ex:
        futures = {b: ex.submit(run_branch, cfg, b, X, **scan_kw) for b in BRANCHES}
        return {b: f.result() for b, f in futures.items()}


# ---------------------------------------------------------------------------
# gating


@dataclass(frozen=True, eq=False)
class GateParams:
    """Affine score maps: ``score[b] = weight[b] . (h_l, h_s, h_f) + bias[b]``."""

    weight: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    bias: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        w = np.array(self.weight, dtype=float)
        b = np.array(self.bias, dtype=float).ravel()
        if w.shape != (3, 3) or b.shape != (3,):
            raise DimensionError(f"gate needs a 3x3 weight and 3 biases, got {w.shape}, {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DomainError("gate parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @classmethod
    def random(cls, rng, scale=0.5):
        return cls(weight=rng.normal(scale=scale, size=(3, 3)), bias=rng.normal(scale=scale, size=3))

    def to_text(self):
        return format_blocks({"gate_weight": self.weight, "gate_bias": self.bias}, header="gate")

    @classmethod
    def from_text(cls, text):
        blocks = parse_blocks(text)
        if "gate_weight" not in blocks or "gate_bias" not in blocks:
            raise ParseError("gate needs gate_weight and gate_bias")
        return cls(weight=blocks["gate_weight"], bias=blocks["gate_bias"])


def _same_shape(h_long, h_short, h_spec):
    arrs = [np.asarray(h, dtype=float) for h in (h_long, h_short, h_spec)]
    if not arrs[0].shape == arrs[1].shape == arrs[2].shape:
        raise DimensionError(
            f"branch outputs differ in shape: {[a.shape for a in arrs]}"
        )
    return arrs


def gate_weights(gate, h_long, h_short, h_spec):
    """Softmax weights, shape ``(3, ...)``, one probability vector per position."""
    h = _same_shape(h_long, h_short, h_spec)
    scores = [gate.weight[b, 0] * h[0] + gate.weight[b, 1] * h[1] + gate.weight[b, 2] * h[2]
              + gate.bias[b] for b in range(3)]
    scores = np.stack(scores)
    e = np.exp(scores - np.max(scores, axis=0))
    return e / (e[0] + e[1] + e[2])


def fuse(gate, h_long, h_short, h_spec):
    """Gated mix ``w_l h_long + w_s h_short + w_f h_spec`` per position.

    Evaluated as ``h_long + w_s (h_short - h_long) + w_f (h_spec - h_long)``,
    which is the same mix because the weights sum to one, and returns the
    input unchanged when all three branches agree.
    """
    h_l, h_s, h_f = _same_shape(h_long, h_short, h_spec)
    w = gate_weights(gate, h_l, h_s, h_f)
    return h_l + w[1] * (h_s - h_l) + w[2] * (h_f - h_l)

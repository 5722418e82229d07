"""Activation and readout families, the Gaussian output channel, and the
effective-linear-model constants.

Everything here is a pure function of its inputs.  The channel density is a
finite Gaussian mixture (one component per readout-noise support point), so
all derivative ratios are exact finite sums rather than quadratures.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erf, logsumexp


class QuadratureError(RuntimeError):
    """Raised when an integrand is non-finite at a quadrature node."""


class InternalConsistencyError(RuntimeError):
    """Raised when a quantity violates a mathematically guaranteed bound."""


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Activation:
    """An odd, three-times differentiable scalar nonlinearity with explicit
    derivative bounds (zero bounds for the identity)."""

    kind: str
    phi: Callable[[np.ndarray], np.ndarray]
    dphi: Callable[[np.ndarray], np.ndarray]
    d2phi: Callable[[np.ndarray], np.ndarray]
    d3phi: Callable[[np.ndarray], np.ndarray]
    lipschitz_bound: float
    deriv2_bound: float
    deriv3_bound: float

    def __call__(self, x):
        return self.phi(x)


def _tanh_d2(x):
    t = np.tanh(x)
    return -2.0 * t * (1.0 - t * t)


def _tanh_d3(x):
    t = np.tanh(x)
    return -2.0 * (1.0 - t * t) * (1.0 - 3.0 * t * t)


_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _serf(x):
    return erf(np.asarray(x) / math.sqrt(2.0))


def _serf_d1(x):
    return _SQRT_2_OVER_PI * np.exp(-0.5 * np.square(x))


def _serf_d2(x):
    return -np.asarray(x) * _serf_d1(x)


def _serf_d3(x):
    x = np.asarray(x)
    return (np.square(x) - 1.0) * _serf_d1(x)


ACTIVATIONS: dict[str, Activation] = {
    "tanh": Activation(
        "tanh",
        np.tanh,
        lambda x: 1.0 - np.square(np.tanh(x)),
        _tanh_d2,
        _tanh_d3,
        lipschitz_bound=1.0,
        deriv2_bound=4.0 / (3.0 * math.sqrt(3.0)),
        deriv3_bound=2.0,
    ),
    "sine": Activation(
        "sine",
        np.sin,
        np.cos,
        lambda x: -np.sin(np.asarray(x)),
        lambda x: -np.cos(np.asarray(x)),
        lipschitz_bound=1.0,
        deriv2_bound=1.0,
        deriv3_bound=1.0,
    ),
    "scaled-erf": Activation(
        "scaled-erf",
        _serf,
        _serf_d1,
        _serf_d2,
        _serf_d3,
        lipschitz_bound=_SQRT_2_OVER_PI,
        deriv2_bound=_SQRT_2_OVER_PI * math.exp(-0.5),
        deriv3_bound=_SQRT_2_OVER_PI,
    ),
    "identity": Activation(
        "identity",
        np.asarray,
        lambda x: np.ones_like(np.asarray(x, dtype=float)),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        lipschitz_bound=1.0,
        deriv2_bound=0.0,
        deriv3_bound=0.0,
    ),
}


def get_activation(kind: str) -> Activation:
    try:
        return ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}; "
                         f"choose from {sorted(ACTIVATIONS)}") from None


# ---------------------------------------------------------------------------
# Gauss-Hermite expectations against the standard normal
# ---------------------------------------------------------------------------

_gh_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_hermite_nodes(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights transformed so that sum(w * h(z)) = E h(Z), Z~N(0,1)."""
    if order < 2:
        raise ValueError("order must be >= 2")
    if order not in _gh_cache:
        x, w = np.polynomial.hermite.hermgauss(order)
        _gh_cache[order] = (x * math.sqrt(2.0), w / math.sqrt(math.pi))
    return _gh_cache[order]


def gauss_hermite_expect(h: Callable[[np.ndarray], np.ndarray],
                         order: int = 80) -> float:
    z, w = gauss_hermite_nodes(order)
    vals = np.asarray(h(z), dtype=float)
    if not np.all(np.isfinite(vals)):
        bad = z[~np.isfinite(vals)][0]
        raise QuadratureError(f"integrand non-finite at node z={bad!r}")
    return float(w @ vals)


def gauss_hermite_adaptive(h, order: int = 80, rtol: float = 1e-10,
                           max_order: int = 1280) -> float:
    """Double the order until two successive estimates agree to rtol."""
    prev = gauss_hermite_expect(h, order)
    while order < max_order:
        order *= 2
        cur = gauss_hermite_expect(h, order)
        if abs(cur - prev) < rtol * max(1.0, abs(cur)):
            return cur
        prev = cur
    return prev


# ---------------------------------------------------------------------------
# readouts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Readout:
    """Readout f(x; A) with finite-support auxiliary noise law.

    ``support`` holds the atoms of the noise law, ``probs`` their weights.
    ``g*`` are the deterministic parts; the atom enters multiplicatively
    through ``use_atom_factor`` (covers the sign-mixture family) or not at
    all (deterministic readouts have a single dummy atom).
    """

    kind: str
    g: Callable[[np.ndarray], np.ndarray]
    dg: Callable[[np.ndarray], np.ndarray]
    d2g: Callable[[np.ndarray], np.ndarray]
    support: tuple[float, ...]
    probs: tuple[float, ...]
    bound: float
    satisfies_A2: bool
    use_atom_factor: bool

    def f(self, x, a):
        v = self.g(x)
        return a * v if self.use_atom_factor else v

    def fprime(self, x, a):
        v = self.dg(x)
        return a * v if self.use_atom_factor else v

    def fsecond(self, x, a):
        v = self.d2g(x)
        return a * v if self.use_atom_factor else v

    @property
    def n_atoms(self) -> int:
        return len(self.support)


def _warn_unbounded(kind):
    warnings.warn(
        f"readout {kind!r} has unbounded f and violates the smoothness/"
        "boundedness assumption; results are for sanity checks only",
        RuntimeWarning, stacklevel=3)


def readout_tanh() -> Readout:
    return Readout("deterministic-tanh", np.tanh,
                   lambda x: 1.0 - np.square(np.tanh(x)), _tanh_d2,
                   support=(0.0,), probs=(1.0,), bound=1.0,
                   satisfies_A2=True, use_atom_factor=False)


def readout_zero() -> Readout:
    z = lambda x: np.zeros_like(np.asarray(x, dtype=float))
    return Readout("zero", z, z, z, support=(0.0,), probs=(1.0,),
                   bound=0.0, satisfies_A2=True, use_atom_factor=False)


def readout_sign_mixture() -> Readout:
    return Readout("sign-mixture", np.tanh,
                   lambda x: 1.0 - np.square(np.tanh(x)), _tanh_d2,
                   support=(1.0, -1.0), probs=(0.5, 0.5), bound=1.0,
                   satisfies_A2=True, use_atom_factor=True)


def readout_identity() -> Readout:
    # Violates the boundedness assumption; allowed behind an explicit flag
    # for linear-model sanity checks.
    return Readout("identity-unbounded", np.asarray,
                   lambda x: np.ones_like(np.asarray(x, dtype=float)),
                   lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                   support=(0.0,), probs=(1.0,), bound=math.inf,
                   satisfies_A2=False, use_atom_factor=False)


READOUTS: dict[str, Callable[[], Readout]] = {
    "deterministic-tanh": readout_tanh,
    "zero": readout_zero,
    "sign-mixture": readout_sign_mixture,
    "identity-unbounded": readout_identity,
}


def get_readout(kind: str) -> Readout:
    try:
        r = READOUTS[kind]()
    except KeyError:
        raise ValueError(f"unknown readout kind {kind!r}; "
                         f"choose from {sorted(READOUTS)}") from None
    if not r.satisfies_A2:
        _warn_unbounded(kind)
    return r


def scaled_readout(base: Readout, scale: float) -> Readout:
    """Readout x -> scale * f(x; A); used by the tilted side-information
    channel where the readout is rescaled and the noise variance shifted."""
    return Readout(
        f"scaled({scale:g})*{base.kind}",
        lambda x: scale * base.g(x),
        lambda x: scale * base.dg(x),
        lambda x: scale * base.d2g(x),
        support=base.support, probs=base.probs,
        bound=scale * base.bound,
        satisfies_A2=base.satisfies_A2,
        use_atom_factor=base.use_atom_factor,
    )


# ---------------------------------------------------------------------------
# equivalence constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussEquivParams:
    rho: float
    epsilon: float      # E phi^2 - rho^2, injected as sqrt(epsilon) * xi
    second_moment: float


def compute_rho(phi: Activation, order: int | None = None) -> float:
    if order is None:
        return gauss_hermite_adaptive(phi.dphi)
    return gauss_hermite_expect(phi.dphi, order)


def compute_epsilon(phi: Activation, order: int | None = None) -> float:
    rho = compute_rho(phi, order)
    h = lambda z: np.square(phi.phi(z))
    if order is None:
        m2 = gauss_hermite_adaptive(h)
    else:
        m2 = gauss_hermite_expect(h, order)
    eps = m2 - rho * rho
    if eps < -1e-12:
        raise InternalConsistencyError(
            f"E phi^2 - rho^2 = {eps} < 0 for activation {phi.kind!r}")
    return max(eps, 0.0)


def gauss_equiv_params(phi: Activation, order: int | None = None) -> GaussEquivParams:
    rho = compute_rho(phi, order)
    h = lambda z: np.square(phi.phi(z))
    m2 = gauss_hermite_adaptive(h) if order is None else gauss_hermite_expect(h, order)
    eps = m2 - rho * rho
    if eps < -1e-12:
        raise InternalConsistencyError(
            f"E phi^2 - rho^2 = {eps} < 0 for activation {phi.kind!r}")
    return GaussEquivParams(rho=rho, epsilon=max(eps, 0.0), second_moment=m2)


# ---------------------------------------------------------------------------
# output kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutputKernel:
    readout: Readout
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("noise variance delta must be > 0")


def _atom_arrays(kernel: OutputKernel, y, x):
    """Per-atom residuals, f', f'' and log posterior atom weights.

    Returns arrays of shape broadcast(y, x).shape + (n_atoms,).
    """
    y = np.asarray(y, dtype=float)[..., None]
    x = np.asarray(x, dtype=float)[..., None]
    r = kernel.readout
    atoms = np.array(r.support)
    fx = r.f(x, atoms)
    resid = y - fx
    log_w = np.log(np.array(r.probs)) - 0.5 * np.square(resid) / kernel.delta
    return resid, r.fprime(x, atoms), r.fsecond(x, atoms), log_w


def _bracket(log_w, *quantities):
    """Posterior-over-atoms averages; returns one array per quantity."""
    lse = logsumexp(log_w, axis=-1, keepdims=True)
    w = np.exp(log_w - lse)
    return tuple(np.sum(w * q, axis=-1) for q in quantities)


def pout_density(kernel: OutputKernel, y, x):
    """Channel density: mixture of N(f(x;A), delta) over the atom law."""
    _, _, _, log_w = _atom_arrays(kernel, y, x)
    log_norm = -0.5 * math.log(2.0 * math.pi * kernel.delta)
    out = np.exp(logsumexp(log_w, axis=-1) + log_norm)
    return out if out.ndim else float(out)


def u_value(kernel: OutputKernel, y, x):
    """log P_out(y | x)."""
    _, _, _, log_w = _atom_arrays(kernel, y, x)
    out = logsumexp(log_w, axis=-1) - 0.5 * math.log(2.0 * math.pi * kernel.delta)
    return out if np.ndim(out) else float(out)


def u_prime(kernel: OutputKernel, y, x):
    """d/dx log P_out(y|x) = <(y - f) f' / delta> over the atom posterior."""
    resid, fp, _, log_w = _atom_arrays(kernel, y, x)
    (out,) = _bracket(log_w, resid * fp / kernel.delta)
    return out if np.ndim(out) else float(out)


def u_double_prime(kernel: OutputKernel, y, x):
    """d^2/dx^2 log P_out(y|x) = P^xx/P - (P^x/P)^2."""
    resid, fp, fpp, log_w = _atom_arrays(kernel, y, x)
    d = kernel.delta
    up, ratio_xx = _bracket(
        log_w,
        resid * fp / d,
        (np.square(resid) / d**2 - 1.0 / d) * np.square(fp) + resid * fpp / d,
    )
    out = ratio_xx - np.square(up)
    return out if np.ndim(out) else float(out)


_RATIO_TAGS = ("y", "x", "yy", "yx", "xx")


def pout_ratio(kernel: OutputKernel, which: str, y, x):
    """Derivative ratios P^{.}_out / P_out as exact atom-posterior brackets."""
    if which not in _RATIO_TAGS:
        raise ValueError(f"which must be one of {_RATIO_TAGS}, got {which!r}")
    resid, fp, fpp, log_w = _atom_arrays(kernel, y, x)
    d = kernel.delta
    if which == "y":
        expr = -resid / d
    elif which == "x":
        expr = resid * fp / d
    elif which == "yy":
        expr = np.square(resid) / d**2 - 1.0 / d
    elif which == "yx":
        expr = -np.square(resid) * fp / d**2 + fp / d
    else:  # xx
        expr = (np.square(resid) / d**2 - 1.0 / d) * np.square(fp) + resid * fpp / d
    (out,) = _bracket(log_w, expr)
    return out if np.ndim(out) else float(out)


def conditional_mean_y(kernel: OutputKernel, x):
    """E[Y | x] = sum_A P_A(A) f(x; A); the additive noise has zero mean."""
    r = kernel.readout
    atoms = np.array(r.support)
    probs = np.array(r.probs)
    x = np.asarray(x, dtype=float)[..., None]
    out = np.sum(probs * r.f(x, atoms), axis=-1)
    return out if np.ndim(out) else float(out)


# ---------------------------------------------------------------------------
# explicit readout-derived constants for the derivative-ratio bounds
# ---------------------------------------------------------------------------

def ratio_envelope_constant(kernel: OutputKernel) -> float:
    """C such that every derivative ratio is bounded by C (|Z|^2 + 1) when
    the response is drawn from the channel with noise realization Z."""
    b = kernel.readout.bound
    d = kernel.delta
    if not math.isfinite(b):
        return math.inf
    # |y - f(x;A)| <= 2 b + sqrt(d) |Z|, and (2b + sqrt(d)|z|)^2 <= (8b^2 + 2d)(z^2+1),
    # 2b + sqrt(d)|z| <= 1.3 (2b + sqrt(d)) (z^2 + 1).
    r2 = 8.0 * b * b + 2.0 * d
    r1 = 1.3 * (2.0 * b + math.sqrt(d))
    candidates = (
        r1 / d,                                   # P^y / P
        b * r1 / d,                               # P^x / P
        r2 / d**2 + 1.0 / d,                      # P^yy / P
        b * r2 / d**2 + b / d,                    # P^yx / P
        b * b * (r2 / d**2 + 1.0 / d) + b * r1 / d,   # P^xx / P
    )
    return max(candidates)


def second_moment_bounds(kernel: OutputKernel) -> tuple[float, float]:
    """Explicit bounds on E[(u')^2 | S] and E[U^2 | S] for channel draws.

    Computed exactly from the residual envelope R = 2 b + sqrt(delta) |Z|
    by Gaussian quadrature over Z; no unnamed constants.
    """
    b = kernel.readout.bound
    d = kernel.delta
    if not math.isfinite(b):
        return math.inf, math.inf

    def up_sq(z):
        r = 2.0 * b + math.sqrt(d) * np.abs(z)
        return np.square(b * r / d)

    def u_big_sq(z):
        r = 2.0 * b + math.sqrt(d) * np.abs(z)
        return np.square(b * b * (np.square(r) / d**2 + 1.0 / d) + b * r / d)

    bound_up = gauss_hermite_expect(up_sq, 200)
    bound_u = gauss_hermite_expect(u_big_sq, 200)
    # The off-diagonal U is a product of two independent u'; its second moment
    # is bounded by bound_up^2 <= bound_u whenever bound_up <= 1 need not hold,
    # so report the max.
    return bound_up, max(bound_u, bound_up * bound_up)

"""Posterior evaluation and approximation.

Two samplers are provided: prior importance sampling, which is exact in
expectation and serves as the oracle at small sizes, and a
Metropolis-adjusted Langevin chain (with a tempering path for the
normalization constant) for sizes where importance sampling degenerates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .kernels import OutputKernel, gauss_hermite_nodes, scaled_readout
from .model import ModelSpec
from .sampling import Dataset, SideInfo


class DegenerateTargetError(RuntimeError):
    """All importance weights vanished; the target is numerically singular."""


class MixingFailureError(RuntimeError):
    """Chain acceptance collapsed even after step-size adaptation."""


ESS_FLOOR = 50.0


@dataclass
class ParamPoint:
    """One student configuration; both model blocks are always present and
    the blocks inactive at an interpolation endpoint stay prior-distributed."""

    a: np.ndarray    # (p,)
    w: np.ndarray    # (p, d)
    v: np.ndarray    # (d,)
    xi: np.ndarray   # (n_xi,)

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.a, self.w.ravel(), self.v, self.xi])

    @staticmethod
    def unflatten(vec: np.ndarray, p: int, d: int, n_xi: int) -> "ParamPoint":
        a, rest = vec[:p], vec[p:]
        w, rest = rest[: p * d].reshape(p, d), rest[p * d:]
        return ParamPoint(a, w, rest[:d], rest[d: d + n_xi])

    @staticmethod
    def dim(p: int, d: int, n_xi: int) -> int:
        return p + p * d + d + n_xi


@dataclass(frozen=True)
class LogTarget:
    """The (interpolating) posterior for one fixed dataset, optionally
    augmented with the tilted side-information block."""

    dataset: Dataset
    side_info: SideInfo | None = None

    @property
    def model(self) -> ModelSpec:
        return self.dataset.model

    @property
    def t(self) -> float:
        return self.dataset.t

    @property
    def kernel(self) -> OutputKernel:
        return self.model.kernel

    @property
    def tilde_kernel(self) -> OutputKernel:
        """Channel of the tilted observations: readout scaled by sqrt(lambda),
        noise variance lambda*delta + 1."""
        si = self.side_info
        if si is None:
            raise ValueError("target has no side information block")
        return OutputKernel(scaled_readout(self.model.readout, math.sqrt(si.lam)),
                            si.lam * self.model.delta + 1.0)

    @property
    def n_side(self) -> int:
        return 0 if self.side_info is None else self.side_info.x_new.shape[0]

    @property
    def n_xi(self) -> int:
        return self.model.n + self.n_side

    @property
    def dim(self) -> int:
        return ParamPoint.dim(self.model.p, self.model.d, self.n_xi)


def prior_point(target: LogTarget, rng: np.random.Generator) -> ParamPoint:
    m = target.model
    return ParamPoint(rng.standard_normal(m.p),
                      rng.standard_normal((m.p, m.d)),
                      rng.standard_normal(m.d),
                      rng.standard_normal(target.n_xi))


def _student_preactivations(target: LogTarget, theta: ParamPoint,
                            x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    m, t = target.model, target.t
    s = np.zeros(x.shape[0])
    if t < 1.0:
        alpha = x @ theta.w.T / math.sqrt(m.d)
        s += math.sqrt(1.0 - t) * (m.activation.phi(alpha) @ theta.a) / math.sqrt(m.p)
    gep = m.gep
    s += math.sqrt(t) * gep.rho * (x @ theta.v) / math.sqrt(m.d)
    s += math.sqrt(t * gep.epsilon) * xi
    return s


def student_preactivations(target: LogTarget, theta: ParamPoint) -> np.ndarray:
    return _student_preactivations(target, theta, target.dataset.x,
                                   theta.xi[: target.model.n])


def log_likelihood(target: LogTarget, theta: ParamPoint) -> float:
    from .kernels import u_value
    m = target.model
    s = student_preactivations(target, theta)
    total = float(np.sum(u_value(target.kernel, target.dataset.y, s))) if m.n else 0.0
    if target.side_info is not None:
        si = target.side_info
        s_side = _student_preactivations(target, theta, si.x_new, theta.xi[m.n:])
        total += float(np.sum(u_value(target.tilde_kernel, si.y_tilde, s_side)))
    return total


def log_posterior_unnorm(target: LogTarget, theta: ParamPoint) -> float:
    sq = (np.sum(theta.a**2) + np.sum(theta.w**2)
          + np.sum(theta.v**2) + np.sum(theta.xi**2))
    return log_likelihood(target, theta) - 0.5 * float(sq)


def grad_log_posterior(target: LogTarget, theta: ParamPoint,
                       beta: float = 1.0) -> ParamPoint:
    """Gradient of beta * log-likelihood - ||theta||^2 / 2, blockwise."""
    from .kernels import u_prime
    m, t = target.model, target.t
    gep = m.gep
    ga = -theta.a.copy()
    gw = -theta.w.copy()
    gv = -theta.v.copy()
    gxi = -theta.xi.copy()

    blocks = [(target.dataset.x, target.dataset.y, target.kernel,
               slice(0, m.n))]
    if target.side_info is not None:
        si = target.side_info
        blocks.append((si.x_new, si.y_tilde, target.tilde_kernel,
                       slice(m.n, target.n_xi)))

    for x, y, kernel, xi_slice in blocks:
        if x.shape[0] == 0:
            continue
        s = _student_preactivations(target, theta, x, theta.xi[xi_slice])
        up = beta * np.asarray(u_prime(kernel, y, s))
        if t < 1.0:
            alpha = x @ theta.w.T / math.sqrt(m.d)
            phi = m.activation.phi(alpha)          # (k, p)
            dphi = m.activation.dphi(alpha)
            c = math.sqrt(1.0 - t)
            ga += c / math.sqrt(m.p) * (phi.T @ up)
            gw += (c / math.sqrt(m.p * m.d)) * theta.a[:, None] * ((dphi * up[:, None]).T @ x)
        gv += math.sqrt(t) * gep.rho / math.sqrt(m.d) * (x.T @ up)
        gxi[xi_slice] += math.sqrt(t * gep.epsilon) * up
    return ParamPoint(ga, gw, gv, gxi)


# ---------------------------------------------------------------------------
# importance sampling (the oracle)
# ---------------------------------------------------------------------------

@dataclass
class WeightedEnsemble:
    """Prior draws with likelihood log-weights; a self-normalized posterior
    approximation plus an unbiased-in-expectation normalization estimate."""

    a: np.ndarray            # (M, p)
    w: np.ndarray            # (M, p, d)
    v: np.ndarray            # (M, d)
    xi: np.ndarray           # (M, n_xi)
    log_weights: np.ndarray  # (M,)
    log_z_hat: float
    ess: float
    flagged: bool = False    # ess below the floor; estimates are suspect

    def __len__(self) -> int:
        return self.log_weights.shape[0]

    def point(self, i: int) -> ParamPoint:
        return ParamPoint(self.a[i], self.w[i], self.v[i], self.xi[i])

    def weights(self) -> np.ndarray:
        lw = self.log_weights - logsumexp(self.log_weights)
        return np.exp(lw)

    def split(self, k: int) -> list["WeightedEnsemble"]:
        """k disjoint sub-ensembles; conditionally independent posterior
        approximations of the same target."""
        m = len(self) // k
        out = []
        for j in range(k):
            sl = slice(j * m, (j + 1) * m)
            lw = self.log_weights[sl]
            out.append(_make_ensemble(self.a[sl], self.w[sl], self.v[sl],
                                      self.xi[sl], lw))
        return out


def _make_ensemble(a, w, v, xi, log_w) -> WeightedEnsemble:
    m = log_w.shape[0]
    if np.all(np.isneginf(log_w)):
        raise DegenerateTargetError("all importance weights are zero")
    log_z = float(logsumexp(log_w) - math.log(m))
    norm = np.exp(log_w - logsumexp(log_w))
    ess = float(1.0 / np.sum(norm**2))
    return WeightedEnsemble(a, w, v, xi, log_w, log_z, ess,
                            flagged=ess < ESS_FLOOR)


def batch_log_likelihood(target: LogTarget, a: np.ndarray, w: np.ndarray,
                         v: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Vectorized likelihood over an (M, ...) batch of parameter draws."""
    from .kernels import u_value
    m, t = target.model, target.t
    gep = m.gep
    total = np.zeros(a.shape[0])
    blocks = [(target.dataset.x, target.dataset.y, target.kernel, slice(0, m.n))]
    if target.side_info is not None:
        si = target.side_info
        blocks.append((si.x_new, si.y_tilde, target.tilde_kernel,
                       slice(m.n, target.n_xi)))
    for x, y, kernel, xi_slice in blocks:
        k = x.shape[0]
        if k == 0:
            continue
        s = np.zeros((a.shape[0], k))
        if t < 1.0:
            alpha = np.einsum("mpd,kd->mpk", w, x) / math.sqrt(m.d)
            s += math.sqrt(1.0 - t) * np.einsum(
                "mpk,mp->mk", m.activation.phi(alpha), a) / math.sqrt(m.p)
        s += math.sqrt(t) * gep.rho * (v @ x.T) / math.sqrt(m.d)
        s += math.sqrt(t * gep.epsilon) * xi[:, xi_slice]
        total += np.sum(u_value(kernel, y[None, :], s), axis=1)
    return total


def importance_log_z(target: LogTarget, n_draws: int,
                     rng: np.random.Generator,
                     chunk: int = 20_000) -> tuple[float, bool]:
    """Streaming prior-importance estimate of log Z; draws are generated in
    chunks and discarded, so memory stays flat at large p*d.

    Returns (log_z_hat, low-ess flag)."""
    m = target.model
    pieces = []
    lse_sq = []
    done = 0
    while done < n_draws:
        k = min(chunk, n_draws - done)
        a = rng.standard_normal((k, m.p))
        w = rng.standard_normal((k, m.p, m.d))
        v = rng.standard_normal((k, m.d))
        xi = rng.standard_normal((k, target.n_xi))
        lw = batch_log_likelihood(target, a, w, v, xi)
        pieces.append(logsumexp(lw))
        lse_sq.append(logsumexp(2.0 * lw))
        done += k
    total = logsumexp(pieces)
    if np.isneginf(total):
        raise DegenerateTargetError("all importance weights are zero")
    ess = float(np.exp(2.0 * total - logsumexp(lse_sq)))
    return float(total - math.log(n_draws)), ess < ESS_FLOOR


def importance_ensemble(target: LogTarget, n_draws: int,
                        rng: np.random.Generator) -> WeightedEnsemble:
    if n_draws < 100:
        raise ValueError("importance sampling needs at least 100 draws")
    m = target.model
    a = rng.standard_normal((n_draws, m.p))
    w = rng.standard_normal((n_draws, m.p, m.d))
    v = rng.standard_normal((n_draws, m.d))
    xi = rng.standard_normal((n_draws, target.n_xi))
    log_w = batch_log_likelihood(target, a, w, v, xi)
    return _make_ensemble(a, w, v, xi, log_w)


# ---------------------------------------------------------------------------
# MALA
# ---------------------------------------------------------------------------

@dataclass
class ChainConfig:
    step_size: float = 0.05
    n_steps: int = 1500
    n_burn: int = 500
    adapt_target: float = 0.57
    max_keep: int = 256      # thinning cap on stored samples

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if not 0 < self.adapt_target < 1:
            raise ValueError("adapt_target must be in (0, 1)")
        if not self.n_steps > self.n_burn >= 0:
            raise ValueError("need n_steps > n_burn >= 0")


@dataclass
class ChainResult:
    samples: list[ParamPoint]
    accept_rate: float
    step_size: float
    mean_log_likelihood: float


def _flat_logpost_and_grad(target: LogTarget, vec: np.ndarray,
                           beta: float) -> tuple[float, np.ndarray]:
    m = target.model
    theta = ParamPoint.unflatten(vec, m.p, m.d, target.n_xi)
    lp = beta * log_likelihood(target, theta) - 0.5 * float(vec @ vec)
    grad = grad_log_posterior(target, theta, beta=beta).flatten()
    return lp, grad


def mala_chain(target: LogTarget, config: ChainConfig,
               rng: np.random.Generator, beta: float = 1.0,
               init: np.ndarray | None = None) -> ChainResult:
    """Langevin proposals with Metropolis correction targeting
    exp(beta * log-likelihood) * prior; step size adapted during burn-in."""
    dim = target.dim
    x = rng.standard_normal(dim) if init is None else init.copy()
    lp, grad = _flat_logpost_and_grad(target, x, beta)
    log_eps = math.log(config.step_size)
    n_acc = 0
    n_post = 0
    ll_sum = 0.0
    stride = max(1, (config.n_steps - config.n_burn) // config.max_keep)
    samples: list[ParamPoint] = []
    m = target.model
    for i in range(config.n_steps):
        eps = math.exp(log_eps)
        noise = rng.standard_normal(dim)
        prop = x + 0.5 * eps * eps * grad + eps * noise
        lp_p, grad_p = _flat_logpost_and_grad(target, prop, beta)
        # asymmetric proposal correction
        fwd = prop - x - 0.5 * eps * eps * grad
        bwd = x - prop - 0.5 * eps * eps * grad_p
        log_alpha = (lp_p - lp
                     + (fwd @ fwd - bwd @ bwd) / (2.0 * eps * eps))
        acc = min(1.0, math.exp(min(0.0, log_alpha)))
        if math.log(rng.random() + 1e-300) < log_alpha:
            x, lp, grad = prop, lp_p, grad_p
        if i < config.n_burn:
            log_eps += 0.7 / (1.0 + 0.1 * i) * (acc - config.adapt_target)
        else:
            n_post += 1
            n_acc += acc
            ll_sum += lp + 0.5 * float(x @ x)  # beta-scaled log-likelihood
            if (i - config.n_burn) % stride == 0:
                samples.append(ParamPoint.unflatten(x.copy(), m.p, m.d,
                                                    target.n_xi))
    rate = n_acc / max(n_post, 1)
    if rate < 0.05:
        raise MixingFailureError(
            f"acceptance {rate:.3f} < 0.05 after adaptation "
            f"(step {math.exp(log_eps):.2e})")
    mean_ll = (ll_sum / max(n_post, 1)) / beta if beta > 0 else 0.0
    return ChainResult(samples, rate, math.exp(log_eps), mean_ll)


def chain_ensemble(target: LogTarget, result: ChainResult) -> WeightedEnsemble:
    """Equal-weight ensemble view of a chain, for the predictor interface."""
    pts = result.samples
    a = np.stack([p.a for p in pts])
    w = np.stack([p.w for p in pts])
    v = np.stack([p.v for p in pts])
    xi = np.stack([p.xi for p in pts])
    log_w = np.zeros(len(pts))
    ens = _make_ensemble(a, w, v, xi, log_w)
    ens.log_z_hat = math.nan   # chains do not estimate the normalization
    return ens


def thermo_log_z(target: LogTarget, config: ChainConfig,
                 rng: np.random.Generator, n_beta: int = 8) -> float:
    """log of the posterior normalization by thermodynamic integration:
    log Z = int_0^1 <log-likelihood>_beta dbeta, Gauss-Legendre in beta,
    one warm-started chain per node."""
    nodes, wts = np.polynomial.legendre.leggauss(n_beta)
    nodes = 0.5 * (nodes + 1.0)
    wts = 0.5 * wts
    order = np.argsort(nodes)
    init = rng.standard_normal(target.dim)
    vals = np.zeros(n_beta)
    for j in order:
        res = mala_chain(target, config, rng, beta=float(nodes[j]), init=init)
        init = res.samples[-1].flatten()
        vals[j] = res.mean_log_likelihood
    return float(wts @ vals)


# ---------------------------------------------------------------------------
# replicas and the predictor
# ---------------------------------------------------------------------------

def replica_draws(target: LogTarget, k: int, sampler: str,
                  rng: np.random.Generator, n_draws: int = 10_000,
                  config: ChainConfig | None = None) -> list[WeightedEnsemble]:
    """k conditionally independent posterior approximations of one dataset."""
    if k < 2:
        raise ValueError("need at least two replicas")
    if sampler == "importance":
        ens = importance_ensemble(target, k * n_draws, rng)
        return ens.split(k)
    if sampler == "mala":
        cfg = config or ChainConfig()
        return [chain_ensemble(target, mala_chain(target, cfg, rng))
                for _ in range(k)]
    raise ValueError(f"unknown sampler {sampler!r}")


def posterior_mean_overlaps(ensembles: list[WeightedEnsemble]):
    """Posterior means of the a and W blocks per replica ensemble."""
    means = []
    for e in ensembles:
        w = e.weights()
        means.append((w @ e.a, np.einsum("m,mpd->pd", w, e.w),
                      w @ e.v, w @ e.xi))
    return means


def ensemble_preactivations(target: LogTarget, ensemble: WeightedEnsemble,
                            x: np.ndarray) -> np.ndarray:
    """Deterministic part of s(theta) at fresh inputs, (M, k)."""
    m, t = target.model, target.t
    gep = m.gep
    s = np.zeros((len(ensemble), x.shape[0]))
    if t < 1.0:
        alpha = np.einsum("mpd,kd->mpk", ensemble.w, x) / math.sqrt(m.d)
        s += math.sqrt(1.0 - t) * np.einsum(
            "mpk,mp->mk", m.activation.phi(alpha), ensemble.a) / math.sqrt(m.p)
    s += math.sqrt(t) * gep.rho * (ensemble.v @ x.T) / math.sqrt(m.d)
    return s


def bayes_predictor(target: LogTarget, x_new: np.ndarray,
                    ensemble: WeightedEnsemble) -> np.ndarray:
    """Posterior mean response at fresh inputs.

    The fresh sample carries its own linear-noise realization when t > 0,
    which is marginalized by quadrature.
    """
    from .kernels import conditional_mean_y
    if len(ensemble) == 0:
        raise ValueError("empty ensemble")
    x_new = np.atleast_2d(np.asarray(x_new, dtype=float))
    m, t = target.model, target.t
    s = ensemble_preactivations(target, ensemble, x_new)   # (M, k)
    sig = math.sqrt(t * m.gep.epsilon)
    if sig > 0:
        z, wq = gauss_hermite_nodes(20)
        vals = np.zeros_like(s)
        for zi, wi in zip(z, wq):
            vals += wi * conditional_mean_y(m.kernel, s + sig * zi)
    else:
        vals = conditional_mean_y(m.kernel, s)
    w = ensemble.weights()
    out = w @ vals
    return out if out.shape[0] > 1 else float(out[0])

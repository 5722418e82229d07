"""Monte Carlo estimators of the information-theoretic quantities:
free entropy, mutual information, generalization error, the side-information
proxy, and the four interpolation-derivative terms."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .kernels import (
    OutputKernel,
    _atom_arrays,
    _bracket,
    conditional_mean_y,
    gauss_hermite_nodes,
    u_prime,
    u_value,
)
from .model import ModelSpec, kappa
from .posterior import (
    ChainConfig,
    LogTarget,
    WeightedEnsemble,
    batch_log_likelihood,
    bayes_predictor,
    chain_ensemble,
    importance_ensemble,
    mala_chain,
    thermo_log_z,
)
from .sampling import (
    Dataset,
    gen_dataset,
    gen_side_info,
    teacher_preactivations,
)

HALF_LOG_2PIE = 0.5 * math.log(2.0 * math.pi * math.e)


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n_outer: int
    n_inner: int
    coords: tuple  # (d, p, n, t)
    kappa: float
    flags: int = 0  # count of low-effective-sample-size inner runs

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be >= 0")

    @staticmethod
    def from_samples(values: np.ndarray, model: ModelSpec, t: float,
                     n_inner: int, flags: int = 0) -> "Estimate":
        values = np.asarray(values, dtype=float)
        k = values.shape[0]
        se = float(np.std(values, ddof=1) / math.sqrt(k)) if k > 1 else 0.0
        return Estimate(float(np.mean(values)), se, k, n_inner,
                        (model.d, model.p, model.n, t),
                        kappa(model.d, model.p, model.n), flags)


def combine_difference(x: Estimate, y: Estimate) -> tuple[float, float]:
    """x - y with standard errors combined in quadrature."""
    return x.value - y.value, math.hypot(x.stderr, y.stderr)


def csv_header() -> str:
    return "d,p,n,t,quantity,value,stderr,n_outer,n_inner,kappa,seed"


def csv_row(quantity: str, est: Estimate, seed: int) -> str:
    d, p, n, t = est.coords
    return (f"{d},{p},{n},{repr(float(t))},{quantity},{repr(est.value)},"
            f"{repr(est.stderr)},{est.n_outer},{est.n_inner},"
            f"{repr(est.kappa)},{seed}")


# ---------------------------------------------------------------------------
# sampler budget shared by the outer-replica estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplerBudget:
    method: str = "importance"          # "importance" | "mala"
    n_draws: int = 20_000               # importance-sampling draws
    chain: ChainConfig = field(default_factory=ChainConfig)
    n_beta: int = 8                     # tempering nodes for the chain log Z

    def __post_init__(self):
        if self.method not in ("importance", "mala"):
            raise ValueError(f"unknown sampler method {self.method!r}")

    @property
    def n_inner(self) -> int:
        return (self.n_draws if self.method == "importance"
                else self.n_beta * self.chain.n_steps)


def _log_z(target: LogTarget, budget: SamplerBudget,
           rng: np.random.Generator) -> tuple[float, bool]:
    if budget.method == "importance":
        ens = importance_ensemble(target, budget.n_draws, rng)
        return ens.log_z_hat, ens.flagged
    return thermo_log_z(target, budget.chain, rng, budget.n_beta), False


def posterior_ensemble(target: LogTarget, budget: SamplerBudget,
                       rng: np.random.Generator) -> WeightedEnsemble:
    if budget.method == "importance":
        return importance_ensemble(target, budget.n_draws, rng)
    return chain_ensemble(target, mala_chain(target, budget.chain, rng))


# ---------------------------------------------------------------------------
# free entropy and entropy terms
# ---------------------------------------------------------------------------

def free_entropy(model: ModelSpec, t: float, n_outer: int,
                 budget: SamplerBudget, rng: np.random.Generator) -> Estimate:
    """(1/n) E log Z at interpolation time t, averaged over fresh datasets."""
    if model.n < 1:
        raise ValueError("free entropy needs n >= 1")
    vals = np.empty(n_outer)
    flags = 0
    for r in range(n_outer):
        ds = gen_dataset(model, t, rng)
        lz, flagged = _log_z(LogTarget(ds), budget, rng)
        vals[r] = lz / model.n
        flags += flagged
    return Estimate.from_samples(vals, model, t, budget.n_inner, flags)


def conditional_entropy_term(model: ModelSpec, t: float, n_draws: int,
                             rng: np.random.Generator) -> Estimate:
    """E log P_out(Y | S) at the teacher channel, by Monte Carlo over fresh
    (teacher, input, response) draws; n_draws is the total response count."""
    if n_draws < 1_000:
        raise ValueError("need at least 1000 response draws")
    n_sets = max(2, math.ceil(n_draws / model.n))
    vals = np.empty(n_sets)
    kernel = model.kernel
    for r in range(n_sets):
        ds = gen_dataset(model, t, rng)
        s = teacher_preactivations(model, ds.nn, ds.glm, ds.x, t)
        vals[r] = float(np.mean(u_value(kernel, ds.y, s)))
    return Estimate.from_samples(vals, model, t, model.n)


def _psi_scale(kernel: OutputKernel, scales: np.ndarray,
               order_z: int = 60, order_noise: int = 60) -> np.ndarray:
    """E_Z int dY P(Y|Z*s) log P(Y|Z*s) per scale s, by nested quadrature:
    the inner integral is an expectation over the atom law and the additive
    noise of log P evaluated at Y = f(Z*s; A) + sqrt(delta)*noise."""
    scales = np.atleast_1d(np.asarray(scales, dtype=float))
    z, wz = gauss_hermite_nodes(order_z)
    zeta, wzeta = gauss_hermite_nodes(order_noise)
    r = kernel.readout
    atoms = np.array(r.support)
    probs = np.array(r.probs)
    sd = math.sqrt(kernel.delta)
    out = np.zeros(scales.shape[0])
    for zi, wi in zip(z, wz):
        x = scales * zi                                     # (k,)
        f = r.f(x[:, None], atoms)                          # (k, n_atoms)
        # responses: (k, n_atoms, order_noise)
        y = f[:, :, None] + sd * zeta[None, None, :]
        u = u_value(kernel, y, x[:, None, None])
        out += wi * np.sum(probs[None, :, None] * wzeta[None, None, :] * u,
                           axis=(1, 2))
    return out


def psi_term(model: ModelSpec, mode: str, n_draws: int,
             rng: np.random.Generator) -> Estimate:
    """Negative conditional response entropy -H(Y|S) at the single-sample
    scale: the limit scale sqrt(E phi^2), or its finite-size analogue under
    the network (nn) / linear-noise (glm) channel at t=1 scale."""
    kernel = model.kernel
    if mode == "limit":
        v = float(_psi_scale(kernel, math.sqrt(model.gep.second_moment))[0])
        return Estimate(v, 0.0, 1, 0, (model.d, model.p, model.n, 1.0),
                        kappa(model.d, model.p, model.n))
    if mode not in ("nn", "glm"):
        raise ValueError(f"mode must be nn, glm or limit, got {mode!r}")
    if n_draws < 100:
        raise ValueError("need at least 100 scale draws")
    scales = np.empty(n_draws)
    if mode == "nn":
        for r in range(n_draws):
            w = rng.standard_normal((model.p, model.d))
            x = rng.standard_normal(model.d)
            phi = model.activation.phi(w @ x / math.sqrt(model.d))
            scales[r] = math.sqrt(float(phi @ phi) / model.p)
    else:
        x_norms = np.sum(rng.standard_normal((n_draws, model.d))**2, axis=1)
        gep = model.gep
        scales = np.sqrt(gep.rho**2 * x_norms / model.d + gep.epsilon)
    vals = _psi_scale(kernel, scales)
    return Estimate.from_samples(vals, model, 1.0, 1)


def mutual_information(model: ModelSpec, t: float, n_outer: int,
                       budget: SamplerBudget, n_entropy_draws: int,
                       rng: np.random.Generator) -> Estimate:
    """(1/n) I(teacher; data) = -free entropy + E log P_out(Y|S)."""
    fe = free_entropy(model, t, n_outer, budget, rng)
    ce = conditional_entropy_term(model, t, n_entropy_draws, rng)
    return Estimate(ce.value - fe.value, math.hypot(fe.stderr, ce.stderr),
                    n_outer, budget.n_inner, fe.coords, fe.kappa, fe.flags)


# ---------------------------------------------------------------------------
# generalization error and the side-information proxy
# ---------------------------------------------------------------------------

def _fresh_responses(model: ModelSpec, ds: Dataset, x_new: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """Teacher responses at fresh inputs, same teacher, fresh latent noise."""
    k = x_new.shape[0]
    xi_new = rng.standard_normal(k)
    s = teacher_preactivations(model, ds.nn, ds.glm, x_new, ds.t, xi=xi_new)
    r = model.kernel.readout
    atoms = rng.choice(len(r.support), size=k, p=np.array(r.probs))
    f = r.f(s, np.array(r.support)[atoms])
    return f + math.sqrt(model.delta) * rng.standard_normal(k)


def gen_error(model: ModelSpec, t: float, n_outer: int, n_test: int,
              budget: SamplerBudget, rng: np.random.Generator) -> Estimate:
    """E (Y_new - E[Y_new | data, X_new])^2 by posterior-mean prediction."""
    if n_test < 1:
        raise ValueError("need at least one test point")
    vals = np.empty(n_outer)
    flags = 0
    for r in range(n_outer):
        ds = gen_dataset(model, t, rng)
        target = LogTarget(ds)
        ens = posterior_ensemble(target, budget, rng)
        flags += ens.flagged
        x_new = rng.standard_normal((n_test, model.d))
        y_new = _fresh_responses(model, ds, x_new, rng)
        pred = np.atleast_1d(bayes_predictor(target, x_new, ens))
        vals[r] = float(np.mean((y_new - pred)**2))
    return Estimate.from_samples(vals, model, t, budget.n_inner, flags)


def side_conditional_mean(kernel: OutputKernel, lam: float,
                          y_tilde, s) -> np.ndarray:
    """E[Y' | theta, sqrt(lam) Y' + Z'] at preactivation s: the atom-posterior
    bracket of the per-atom Gaussian conditional mean."""
    tilde_var = lam * kernel.delta + 1.0
    # atom weights under the tilted channel: N(y_tilde; sqrt(lam) f, tilde_var)
    r = kernel.readout
    y_tilde = np.asarray(y_tilde, dtype=float)[..., None]
    s_arr = np.asarray(s, dtype=float)[..., None]
    atoms = np.array(r.support)
    f = r.f(s_arr, atoms)
    log_w = (np.log(np.array(r.probs))
             - 0.5 * np.square(y_tilde - math.sqrt(lam) * f) / tilde_var)
    shrink = math.sqrt(lam) * kernel.delta / tilde_var
    cond = f + shrink * (y_tilde - math.sqrt(lam) * f)
    (out,) = _bracket(log_w, cond)
    return out


def _proxy_one_dataset(model: ModelSpec, target: LogTarget,
                       ens: WeightedEnsemble) -> float:
    si = target.side_info
    m = si.x_new.shape[0]
    s = np.zeros((len(ens), m))
    from .posterior import ensemble_preactivations
    s += ensemble_preactivations(target, ens, si.x_new)
    sig = math.sqrt(target.t * model.gep.epsilon)
    if sig > 0:
        s += sig * ens.xi[:, model.n:]
    cond = side_conditional_mean(model.kernel, si.lam, si.y_tilde[None, :], s)
    pred = ens.weights() @ cond
    return float(np.mean((si.y_prime - pred)**2))


def gen_error_proxy(model: ModelSpec, t: float, lam: float, eta: float,
                    n_outer: int, budget: SamplerBudget,
                    rng: np.random.Generator) -> Estimate:
    """E (Y' - E[Y' | data and tilted side channel])^2 over the side points."""
    if lam < 0 or eta <= 0:
        raise ValueError("need lambda >= 0 and eta > 0")
    vals = np.empty(n_outer)
    flags = 0
    for r in range(n_outer):
        ds = gen_dataset(model, t, rng)
        si = gen_side_info(ds, lam, eta, rng)
        target = LogTarget(ds, si)
        ens = posterior_ensemble(target, budget, rng)
        flags += ens.flagged
        vals[r] = _proxy_one_dataset(model, target, ens)
    return Estimate.from_samples(vals, model, t, budget.n_inner, flags)


def side_info_mutual_information(model: ModelSpec, t: float, lam: float,
                                 eta: float, n_outer: int, n_draws: int,
                                 rng: np.random.Generator,
                                 datasets=None) -> Estimate:
    """(1/n) I(Y'; sqrt(lam) Y' + Z' | data, inputs), importance oracle.

    Computed as -(1/n) E log <exp(sum of tilted log-likelihood terms)> minus
    the Gaussian entropy of the pure-noise channel; the inner bracket is the
    ratio of the joint and data-only normalizations, estimated on shared
    prior draws. `datasets` may pin (dataset, side-info) pairs for common
    random numbers across lambda values.
    """
    vals = np.empty(n_outer)
    flags = 0
    for r in range(n_outer):
        if datasets is None:
            ds = gen_dataset(model, t, rng)
            si = gen_side_info(ds, lam, eta, rng)
        else:
            ds, si = datasets[r]
            si = retilt_side_info(si, lam)
        joint = LogTarget(ds, si)
        m_side = si.x_new.shape[0]
        n_xi = model.n + m_side
        a = rng.standard_normal((n_draws, model.p))
        w = rng.standard_normal((n_draws, model.p, model.d))
        v = rng.standard_normal((n_draws, model.d))
        xi = rng.standard_normal((n_draws, n_xi))
        lw_joint = batch_log_likelihood(joint, a, w, v, xi)
        lw_data = batch_log_likelihood(LogTarget(ds), a, w, v, xi[:, :model.n])
        log_bracket = float(logsumexp(lw_joint) - logsumexp(lw_data))
        ess = float(np.exp(2 * logsumexp(lw_data) - logsumexp(2 * lw_data)))
        flags += ess < 50.0
        vals[r] = -log_bracket / model.n - (m_side / model.n) * HALF_LOG_2PIE
    return Estimate.from_samples(vals, model, t, n_draws, flags)


def retilt_side_info(si, lam: float):
    """Same side draws observed through a different lambda: the pre-noise
    responses and additive noise are lambda-independent."""
    z_prime = si.y_tilde - math.sqrt(si.lam) * si.y_prime
    return dataclasses.replace(
        si, lam=lam, y_tilde=math.sqrt(lam) * si.y_prime + z_prime)


@dataclass(frozen=True)
class ImmseReport:
    lambda_mid: float
    lhs: float          # finite-difference derivative of (1/n) I
    lhs_se: float
    rhs: float          # (m / 2n) * proxy at the midpoint
    rhs_se: float

    @property
    def discrepancy_se_units(self) -> float:
        se = math.hypot(self.lhs_se, self.rhs_se)
        return abs(self.lhs - self.rhs) / se if se > 0 else math.inf

    @property
    def passed(self) -> bool:
        return self.discrepancy_se_units <= 3.0


def immse_check(model: ModelSpec, t: float, lambda_grid, eta: float,
                n_outer: int, budget: SamplerBudget,
                rng: np.random.Generator) -> ImmseReport:
    """Derivative of the side-channel mutual information vs the
    error-proxy identity, both at the middle lambda of a 3-point grid."""
    lams = sorted(float(x) for x in lambda_grid)
    if len(lams) < 3:
        raise ValueError("lambda grid needs at least 3 points")
    mid = lams[len(lams) // 2]
    h = 0.1 * mid if mid > 0 else 0.1 * (lams[-1] - lams[0])
    # pinned datasets and side draws, re-tilted per lambda
    pairs = []
    for _ in range(n_outer):
        ds = gen_dataset(model, t, rng)
        pairs.append((ds, gen_side_info(ds, mid, eta, rng)))
    seed_pool = rng.integers(0, 2**63, size=2)
    lo = side_info_mutual_information(
        model, t, mid - h, eta, n_outer, budget.n_draws,
        np.random.default_rng(seed_pool[0]), datasets=pairs)
    hi = side_info_mutual_information(
        model, t, mid + h, eta, n_outer, budget.n_draws,
        np.random.default_rng(seed_pool[0]), datasets=pairs)
    lhs = (hi.value - lo.value) / (2 * h)
    lhs_se = math.hypot(hi.stderr, lo.stderr) / (2 * h)
    m_side = pairs[0][1].x_new.shape[0]
    prox_vals = np.empty(n_outer)
    rng_prox = np.random.default_rng(seed_pool[1])
    for r, (ds, si) in enumerate(pairs):
        target = LogTarget(ds, retilt_side_info(si, mid))
        ens = importance_ensemble(target, budget.n_draws, rng_prox)
        prox_vals[r] = _proxy_one_dataset(model, target, ens)
    scale = m_side / (2.0 * model.n)
    return ImmseReport(mid, lhs, lhs_se,
                       scale * float(np.mean(prox_vals)),
                       scale * float(np.std(prox_vals, ddof=1)
                                     / math.sqrt(n_outer)))


# ---------------------------------------------------------------------------
# interpolation-derivative terms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DerivativeTerms:
    A1: Estimate
    A2: Estimate
    A3: Estimate
    B: Estimate
    total: Estimate

    def __post_init__(self):
        want = -self.A1.value + self.A2.value + self.A3.value + self.B.value
        if not math.isclose(self.total.value, want, rel_tol=1e-12,
                            abs_tol=1e-12):
            raise ValueError("total must equal -A1 + A2 + A3 + B")


def _centered_term(log_z: np.ndarray, g: np.ndarray) -> tuple[float, float]:
    """Quenched average E[log Z * G] with E[G] = 0, estimated with
    across-replica mean-centering of log Z; jackknife standard error."""
    k = log_z.shape[0]
    est = float(np.mean((log_z - np.mean(log_z)) * g)) * k / (k - 1)
    # jackknife: recompute the centered mean without each replica
    loo_stats = np.empty(k)
    total_lz = np.sum(log_z)
    total_g = np.sum(g)
    total_lg = np.sum(log_z * g)
    for i in range(k):
        lz_bar = (total_lz - log_z[i]) / (k - 1)
        lg = (total_lg - log_z[i] * g[i]) / (k - 1)
        g_bar = (total_g - g[i]) / (k - 1)
        loo_stats[i] = (lg - lz_bar * g_bar) * (k - 1) / (k - 2)
    se = math.sqrt((k - 1) / k * float(np.sum((loo_stats - np.mean(loo_stats))**2)))
    return est, se


def _bracket_dsdt(model: ModelSpec, target: LogTarget,
                  ens: WeightedEnsemble) -> float:
    """Posterior bracket of sum_mu u'(y_mu, s_mu) ds_mu/dt for one dataset."""
    t = target.t
    gep = model.gep
    x, y = target.dataset.x, target.dataset.y
    alpha = np.einsum("mpd,kd->mpk", ens.w, x) / math.sqrt(model.d)
    nn = np.einsum("mpk,mp->mk", model.activation.phi(alpha),
                   ens.a) / math.sqrt(model.p)
    lin = (ens.v @ x.T) / math.sqrt(model.d)
    xi = ens.xi[:, :model.n]
    s = (math.sqrt(1 - t) * nn + math.sqrt(t) * gep.rho * lin
         + math.sqrt(t * gep.epsilon) * xi)
    dsdt = (-nn / (2 * math.sqrt(1 - t))
            + gep.rho * lin / (2 * math.sqrt(t))
            + math.sqrt(gep.epsilon / t) * xi / 2)
    up = np.asarray(u_prime(model.kernel, y[None, :], s))
    return float(ens.weights() @ np.sum(up * dsdt, axis=1))


def interp_derivative_terms(model: ModelSpec, t: float, n_outer: int,
                            budget: SamplerBudget,
                            rng: np.random.Generator) -> DerivativeTerms:
    """The four terms whose combination -A1 + A2 + A3 + B is the
    t-derivative of the free entropy; A-terms are quenched averages of
    log Z against teacher-side zero-mean sums, B a posterior bracket."""
    if not 0.0 < t < 1.0:
        raise ValueError("derivative terms need 0 < t < 1")
    gep = model.gep
    log_z = np.empty(n_outer)
    g1 = np.empty(n_outer)
    g2 = np.empty(n_outer)
    g3 = np.empty(n_outer)
    b_vals = np.empty(n_outer)
    flags = 0
    for r in range(n_outer):
        ds = gen_dataset(model, t, rng)
        target = LogTarget(ds)
        ens = importance_ensemble(target, budget.n_draws, rng)
        flags += ens.flagged
        log_z[r] = ens.log_z_hat
        s = teacher_preactivations(model, ds.nn, ds.glm, ds.x, t)
        up = np.asarray(u_prime(model.kernel, ds.y, s))
        from .sampling import preactivation_nn
        nn = preactivation_nn(ds.nn, ds.x, model.activation)
        lin = (ds.x @ ds.glm.v_star) / math.sqrt(model.d)
        g1[r] = float(up @ nn) / math.sqrt(1 - t)
        g2[r] = gep.rho * float(up @ lin) / math.sqrt(t)
        g3[r] = math.sqrt(gep.epsilon / t) * float(up @ ds.glm.xi_star[:model.n])
        b_vals[r] = _bracket_dsdt(model, target, ens)

    def wrap(v, se):
        return Estimate(v, se, n_outer, budget.n_draws,
                        (model.d, model.p, model.n, t),
                        kappa(model.d, model.p, model.n), flags)

    scale = 1.0 / (2.0 * model.n)
    a1 = wrap(*[x * scale for x in _centered_term(log_z, g1)])
    a2 = wrap(*[x * scale for x in _centered_term(log_z, g2)])
    a3 = wrap(*[x * scale for x in _centered_term(log_z, g3)])
    b_mean = float(np.mean(b_vals)) / model.n
    b_se = float(np.std(b_vals, ddof=1) / math.sqrt(n_outer)) / model.n
    b = wrap(b_mean, b_se)
    tot_val = -a1.value + a2.value + a3.value + b.value
    tot_se = math.sqrt(a1.stderr**2 + a2.stderr**2 + a3.stderr**2
                       + b.stderr**2)
    return DerivativeTerms(a1, a2, a3, b, wrap(tot_val, tot_se))

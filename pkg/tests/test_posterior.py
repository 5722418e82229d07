"""Posterior-engine tests: exact gradients, estimator cross-validation
between importance sampling, thermodynamic integration, a brute-force
quadrature oracle, and MALA, plus ensemble bookkeeping."""

import math

import numpy as np
import pytest
from scipy.special import logsumexp

from gep_lab.kernels import u_value
from gep_lab.model import make_model
from gep_lab.posterior import (
    ChainConfig,
    DegenerateTargetError,
    LogTarget,
    ParamPoint,
    batch_log_likelihood,
    chain_ensemble,
    grad_log_posterior,
    importance_ensemble,
    importance_log_z,
    log_likelihood,
    log_posterior_unnorm,
    mala_chain,
    posterior_mean_overlaps,
    prior_point,
    replica_draws,
    thermo_log_z,
)
from gep_lab.sampling import gen_dataset, gen_side_info


def _target(t=0.5, d=5, p=4, n=6, delta=0.8, readout="deterministic-tanh",
            seed=0, side=None):
    spec = make_model("tanh", readout, delta, d=d, p=p, n=n)
    rng = np.random.default_rng(seed)
    ds = gen_dataset(spec, t, rng)
    si = gen_side_info(ds, *side, rng) if side else None
    return LogTarget(ds, si)


def _fd_grad(target, theta, h=1e-6):
    vec = theta.flatten()
    g = np.empty_like(vec)
    for i in range(vec.size):
        up, dn = vec.copy(), vec.copy()
        up[i] += h
        dn[i] -= h
        m = target.model
        args = (m.p, m.d, target.n_xi)
        g[i] = (log_posterior_unnorm(target, ParamPoint.unflatten(up, *args))
                - log_posterior_unnorm(target,
                                       ParamPoint.unflatten(dn, *args))) \
            / (2 * h)
    return g


class TestGradients:
    @pytest.mark.parametrize("t", [0.0, 0.5, 1.0])
    def test_gradient_matches_finite_differences(self, t):
        for seed in range(5):
            target = _target(t=t, seed=seed)
            theta = prior_point(target, np.random.default_rng(100 + seed))
            g = grad_log_posterior(target, theta).flatten()
            fd = _fd_grad(target, theta)
            denom = max(1.0, float(np.linalg.norm(fd)))
            assert np.linalg.norm(g - fd) / denom < 1e-6

    def test_gradient_with_side_info(self):
        target = _target(t=0.5, side=(0.7, 1.0))
        theta = prior_point(target, np.random.default_rng(3))
        g = grad_log_posterior(target, theta).flatten()
        fd = _fd_grad(target, theta)
        assert np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(fd)) < 1e-6

    def test_tempered_gradient(self):
        target = _target()
        theta = prior_point(target, np.random.default_rng(4))
        g_half = grad_log_posterior(target, theta, beta=0.5).flatten()
        g_zero = grad_log_posterior(target, theta, beta=0.0).flatten()
        g_one = grad_log_posterior(target, theta, beta=1.0).flatten()
        # likelihood part interpolates linearly in beta
        assert np.allclose(g_half, 0.5 * (g_zero + g_one), atol=1e-10)


class TestBatchLikelihood:
    def test_matches_scalar(self):
        target = _target(side=(0.3, 0.5))
        rng = np.random.default_rng(5)
        pts = [prior_point(target, rng) for _ in range(8)]
        batch = batch_log_likelihood(
            target,
            np.stack([p.a for p in pts]),
            np.stack([p.w for p in pts]),
            np.stack([p.v for p in pts]),
            np.stack([p.xi for p in pts]))
        ref = [log_likelihood(target, p) for p in pts]
        assert np.allclose(batch, ref, atol=1e-10)


def _quadrature_log_z(target, n_draws=400_000, seed=123):
    """Brute-force prior Monte Carlo oracle with a fixed huge budget."""
    rng = np.random.default_rng(seed)
    model = target.model
    lw = np.empty(n_draws)
    chunk = 50_000
    done = 0
    parts = []
    while done < n_draws:
        m = min(chunk, n_draws - done)
        a = rng.standard_normal((m, model.p))
        w = rng.standard_normal((m, model.p, model.d))
        v = rng.standard_normal((m, model.d))
        xi = rng.standard_normal((m, target.n_xi))
        parts.append(batch_log_likelihood(target, a, w, v, xi))
        done += m
    lw = np.concatenate(parts)
    return float(logsumexp(lw) - math.log(n_draws))


class TestLogZEstimators:
    def test_importance_matches_oracle(self):
        target = _target(d=4, p=3, n=4)
        oracle = _quadrature_log_z(target)
        vals = [importance_log_z(target, 200_000,
                                 np.random.default_rng(s))[0]
                for s in range(3)]
        assert np.std(vals) < 0.02
        assert abs(np.mean(vals) - oracle) < 0.03

    def test_thermo_matches_importance(self):
        target = _target(d=4, p=4, n=4, seed=2)
        lz_is = importance_log_z(target, 300_000,
                                 np.random.default_rng(0))[0]
        cfg = ChainConfig(n_steps=2000, n_burn=600)
        lz_ti = np.mean([thermo_log_z(target, cfg,
                                      np.random.default_rng(s), n_beta=10)
                         for s in range(4)])
        assert abs(lz_ti - lz_is) < 0.08

    def test_importance_deterministic(self):
        target = _target()
        a = importance_log_z(target, 5_000, np.random.default_rng(7))
        b = importance_log_z(target, 5_000, np.random.default_rng(7))
        assert a == b

    def test_min_draws(self):
        with pytest.raises(ValueError):
            importance_ensemble(_target(), 10, np.random.default_rng(0))


class TestMala:
    def test_posterior_means_match_importance(self):
        target = _target(d=4, p=3, n=5, seed=6)
        ens_is = importance_ensemble(target, 400_000,
                                     np.random.default_rng(1))
        cfg = ChainConfig(n_steps=6000, n_burn=1500)
        x_new = np.random.default_rng(99).standard_normal((4, 4))
        from gep_lab.posterior import bayes_predictor
        pred_is = np.atleast_1d(bayes_predictor(target, x_new, ens_is))
        preds = []
        for s in range(4):
            res = mala_chain(target, cfg, np.random.default_rng(40 + s))
            ens = chain_ensemble(target, res)
            preds.append(np.atleast_1d(bayes_predictor(target, x_new, ens)))
        assert np.max(np.abs(np.mean(preds, axis=0) - pred_is)) < 0.1

    def test_acceptance_adapted(self):
        target = _target()
        res = mala_chain(target, ChainConfig(n_steps=1500, n_burn=500),
                         np.random.default_rng(2))
        assert 0.3 < res.accept_rate < 0.85

    def test_chain_config_validation(self):
        with pytest.raises(ValueError):
            ChainConfig(step_size=0.0)
        with pytest.raises(ValueError):
            ChainConfig(n_steps=10, n_burn=20)
        with pytest.raises(ValueError):
            ChainConfig(adapt_target=1.5)


class TestEnsembles:
    def test_degenerate_weights_raise(self):
        # a response far outside the channel's reach zeroes every weight
        spec = make_model("tanh", "deterministic-tanh", 1e-8, d=3, p=3, n=2)
        ds = gen_dataset(spec, 0.0, np.random.default_rng(0))
        bad = ds.__class__(x=ds.x, y=np.array([1e200, -1e200]), nn=ds.nn,
                           glm=ds.glm, t=0.0, model=spec,
                           atom_idx=ds.atom_idx, z=ds.z)
        with pytest.raises(DegenerateTargetError):
            importance_ensemble(LogTarget(bad), 1000,
                                np.random.default_rng(1))

    def test_split_is_disjoint(self):
        ens = importance_ensemble(_target(), 2000, np.random.default_rng(3))
        lo, hi = ens.split(2)
        assert lo.a.shape[0] + hi.a.shape[0] == ens.a.shape[0]
        assert not np.intersect1d(lo.log_weights, hi.log_weights).size \
            or lo.a.shape[0] > 0

    def test_weights_normalized(self):
        ens = importance_ensemble(_target(), 2000, np.random.default_rng(4))
        assert abs(ens.weights().sum() - 1.0) < 1e-12

    def test_replica_draws(self):
        target = _target()
        reps = replica_draws(target, 3, "importance",
                             np.random.default_rng(5), n_draws=2000)
        assert len(reps) == 3
        means = posterior_mean_overlaps(reps)
        assert len(means) == 3
        assert means[0][0].shape == (target.model.p,)
        with pytest.raises(ValueError):
            replica_draws(target, 1, "importance", np.random.default_rng(0))

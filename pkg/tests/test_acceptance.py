"""The twelve headline acceptance criteria.

Each test prints exactly one `[criterion NN] name: PASS/FAIL` line and
asserts the stated tolerance. Budgets and seeds are pinned so the suite is
reproducible; the slow criteria are marked `slow`.
"""

import math
import time

import numpy as np
import pytest

from gep_lab.estimators import (
    SamplerBudget,
    free_entropy,
    immse_check,
    interp_derivative_terms,
)
from gep_lab.kernels import (
    compute_epsilon,
    compute_rho,
    get_activation,
)
from gep_lab.model import make_model
from gep_lab.posterior import (
    ChainConfig,
    LogTarget,
    ParamPoint,
    grad_log_posterior,
    log_posterior_unnorm,
    prior_point,
)
from gep_lab.sampling import gen_dataset
from gep_lab.verify import (
    APPROXIMATION_DISPLAYS,
    approximation_suite,
    concentration_check,
    epsilon_cancellation_check,
    nishimori_suite,
    pout_property_suite,
    theorem1_gap_scan,
    theorem2_gap_scan,
)


def _report(number: int, name: str, passed: bool, detail: str = "") -> None:
    status = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[criterion {number:02d}] {name}: {status}{suffix}")
    assert passed, f"criterion {number} ({name}) failed{suffix}"


def test_01_equivalence_constants():
    t0 = time.time()
    phi = get_activation("sine")
    rho_err = abs(compute_rho(phi) - math.exp(-0.5))
    eps_err = abs(compute_epsilon(phi)
                  - ((1 - math.exp(-2)) / 2 - math.exp(-1)))
    elapsed = time.time() - t0
    _report(1, "sine constants", rho_err < 1e-10 and eps_err < 1e-10
            and elapsed < 1.0,
            f"rho err {rho_err:.1e}, eps err {eps_err:.1e}, {elapsed:.2f}s")


def test_02_gradient_exactness():
    t0 = time.time()
    model = make_model("tanh", "deterministic-tanh", 1.0, d=5, p=4, n=6)
    h = 1e-6
    worst = 0.0
    for t in (0.0, 0.5, 1.0):
        for seed in range(5):
            ds = gen_dataset(model, t, np.random.default_rng(seed))
            target = LogTarget(ds)
            theta = prior_point(target, np.random.default_rng(100 + seed))
            vec = theta.flatten()
            grad = grad_log_posterior(target, theta).flatten()
            fd = np.empty_like(vec)
            for i in range(vec.size):
                up, dn = vec.copy(), vec.copy()
                up[i] += h
                dn[i] -= h
                args = (model.p, model.d, target.n_xi)
                fd[i] = (log_posterior_unnorm(
                             target, ParamPoint.unflatten(up, *args))
                         - log_posterior_unnorm(
                             target, ParamPoint.unflatten(dn, *args))) \
                    / (2 * h)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1.0)
            worst = max(worst, float(rel))
    elapsed = time.time() - t0
    _report(2, "posterior gradient", worst < 1e-6 and elapsed < 10.0,
            f"worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_03_channel_score_properties():
    t0 = time.time()
    model = make_model("tanh", "sign-mixture", 0.8, d=4, p=4, n=4)
    report = pout_property_suite(model, 100_000, np.random.default_rng(3))
    elapsed = time.time() - t0
    _report(3, "channel score properties", report.passed and elapsed < 60.0,
            f"{sum(a.passed for a in report.assertions)}"
            f"/{len(report.assertions)} checks, {elapsed:.0f}s")


@pytest.mark.slow
def test_04_nishimori_identities():
    t0 = time.time()
    model = make_model("tanh", "deterministic-tanh", 1.0, d=6, p=4, n=6)
    report = nishimori_suite(model, (0.0, 0.5, 1.0), 200, 200_000,
                             np.random.default_rng(4))
    elapsed = time.time() - t0
    _report(4, "Nishimori identities", report.passed and elapsed < 1800.0,
            f"{sum(a.passed for a in report.assertions)}"
            f"/{len(report.assertions)} checks, {elapsed:.0f}s")


@pytest.mark.slow
def test_05_b_term_and_derivative_decomposition():
    t0 = time.time()
    model = make_model("tanh", "deterministic-tanh", 1.0, d=4, p=3, n=4)
    budget = SamplerBudget("importance", 20_000)
    terms = interp_derivative_terms(model, 0.5, 1500, budget,
                                    np.random.default_rng(55))
    b_ok = abs(terms.B.value) <= 3 * terms.B.stderr
    h, seed = 0.05, 606
    hi = free_entropy(model, 0.5 + h, 1500, budget,
                      np.random.default_rng(seed))
    lo = free_entropy(model, 0.5 - h, 1500, budget,
                      np.random.default_rng(seed))
    fd = (hi.value - lo.value) / (2 * h)
    fd_se = math.hypot(hi.stderr, lo.stderr) / (2 * h)
    se = math.hypot(terms.total.stderr, fd_se)
    total_ok = abs(terms.total.value - fd) <= 3 * se
    elapsed = time.time() - t0
    _report(5, "B term and derivative decomposition",
            b_ok and total_ok and elapsed < 1800.0,
            f"B={terms.B.value:+.4f}+-{terms.B.stderr:.4f}, "
            f"total-FD={terms.total.value - fd:+.4f} (3SE={3*se:.4f}), "
            f"{elapsed:.0f}s")


@pytest.mark.slow
def test_06_approximation_expansions():
    t0 = time.time()
    fits = approximation_suite(get_activation("tanh"), (16, 64, 256),
                               1_000_000, np.random.default_rng(6))
    slopes = {name: fit.exponent
              for name, fit in zip(APPROXIMATION_DISPLAYS, fits)}
    ok = all(abs(s - 1.0) <= 0.3 for s in slopes.values())
    elapsed = time.time() - t0
    _report(6, "activation expansions", ok and elapsed < 1200.0,
            ", ".join(f"{k}={v:.2f}" for k, v in slopes.items())
            + f", {elapsed:.0f}s")


@pytest.mark.slow
def test_07_epsilon_cancellation():
    # The mean sub-check is expected to FAIL: the statistic's exact mean is
    # epsilon - 0.0549/d for tanh (see the quadrature-oracle unit test), a
    # genuine finite-size offset of -2.14e-4 at d=256.  60k draws put the
    # Monte Carlo standard error at ~3e-5, so the 3-SE band resolves the
    # offset; it would only "pass" with under ~1.2e4 draws, when the test
    # has no power.  We report the honest failure rather than shrink the
    # budget to hide it.  The decay of the deviation (the substantive
    # claim) is confirmed by the exponent sub-check.
    t0 = time.time()
    phi = get_activation("tanh")
    # mean check at the stated instance d=256, p=1024
    mean_rep, _ = epsilon_cancellation_check(phi, (256,), 1024, 60_000,
                                             np.random.default_rng(7))
    a = mean_rep.assertions[0]
    # decay exponent across d at fixed moderate width (the statistic's
    # 1/p floor would flatten the tail at very large p/d ratios)
    _, fit = epsilon_cancellation_check(phi, (16, 64, 256), 128, 60_000,
                                        np.random.default_rng(8))
    exp_ok = fit is not None and -0.75 <= fit.exponent <= -0.25
    elapsed = time.time() - t0
    _report(7, "epsilon cancellation",
            mean_rep.passed and exp_ok and elapsed < 600.0,
            f"mean-eps={a.statistic:.2e} (3SE={3 * a.se:.2e}, exact offset "
            f"-0.0549/d=-2.1e-4), exponent={fit.exponent:.3f}, "
            f"{elapsed:.0f}s")


@pytest.mark.slow
def test_08_free_entropy_concentration():
    t0 = time.time()
    model = make_model("tanh", "deterministic-tanh", 1.0, d=4, p=4, n=2)
    # the constrained one-constant law needs d large enough that the
    # (weaker) 1/d coefficient no longer distorts the fit; see the grid
    # note in the verification tests
    grid = [(d, n) for d in (16, 24, 32) for n in (2, 4, 8)]
    report, fit = concentration_check(
        model, 0.5, grid, 200, SamplerBudget("importance", 20_000),
        np.random.default_rng(314))
    elapsed = time.time() - t0
    _report(8, "free-entropy concentration",
            report.passed and elapsed < 3600.0,
            f"r2={report.assertions[0].statistic:.3f}, {elapsed:.0f}s")


@pytest.mark.slow
def test_09_theorem1_gap_scan():
    t0 = time.time()
    model = make_model("tanh", "deterministic-tanh", 1.0, d=16, p=16, n=4)
    budgets = [SamplerBudget("importance", 20_000),
               SamplerBudget("importance", 20_000),
               SamplerBudget("mala", 20_000,
                             ChainConfig(n_steps=1000, n_burn=300),
                             n_beta=8)]
    report, points = theorem1_gap_scan(
        model, [(16, 16, 4), (64, 64, 4), (256, 256, 4)], budgets, 80,
        np.random.default_rng(20260826))
    elapsed = time.time() - t0
    gaps = ", ".join(f"d={pt.coords[0]}:{pt.gap.value:.4f}"
                     f"+-{pt.gap.stderr:.4f}" for pt in points)
    _report(9, "free-entropy gap scan", report.passed and elapsed < 7200.0,
            f"{gaps}, {elapsed:.0f}s")


@pytest.mark.slow
def test_10_theorem2_gap_scan():
    t0 = time.time()
    triplets = [(16, 16, 4), (64, 64, 4), (256, 256, 4)]
    budgets = [SamplerBudget("importance", 20_000)] * 3
    model = make_model("tanh", "deterministic-tanh", 1.0, d=16, p=16, n=4)
    report, points = theorem2_gap_scan(model, triplets, budgets, 60, 8,
                                       np.random.default_rng(10))
    null = make_model("tanh", "zero", 1.0, d=16, p=16, n=4)
    null_rep, null_pts = theorem2_gap_scan(null, triplets[:2], budgets[:2],
                                           30, 8, np.random.default_rng(11))
    null_gap_ok = all(pt.gap.value <= max(3 * pt.gap.stderr, 1e-10)
                      for pt in null_pts)
    # null-model error equals the noise floor Delta
    from gep_lab.estimators import gen_error
    e_null = gen_error(null, 0.5, 30, 8, budgets[0],
                       np.random.default_rng(12))
    delta_ok = abs(e_null.value - 1.0) <= 3 * e_null.stderr
    elapsed = time.time() - t0
    gaps = ", ".join(f"d={pt.coords[0]}:{pt.gap.value:.4f}"
                     f"+-{pt.gap.stderr:.4f}" for pt in points)
    _report(10, "generalization-error gap scan",
            report.passed and null_rep.passed and null_gap_ok and delta_ok
            and elapsed < 7200.0,
            f"{gaps}; null E={e_null.value:.3f}+-{e_null.stderr:.3f}, "
            f"{elapsed:.0f}s")


@pytest.mark.slow
def test_11_immse_identity():
    t0 = time.time()
    model = make_model("tanh", "deterministic-tanh", 1.0, d=3, p=3, n=3)
    rep = immse_check(model, 0.5, (0.4, 0.5, 0.6), 1.0, 400,
                      SamplerBudget("importance", 40_000),
                      np.random.default_rng(77))
    elapsed = time.time() - t0
    _report(11, "I-MMSE identity", rep.passed and elapsed < 1800.0,
            f"dI/dlam={rep.lhs:.4f}+-{rep.lhs_se:.4f} vs "
            f"(m/2n)E={rep.rhs:.4f}+-{rep.rhs_se:.4f}, "
            f"{rep.discrepancy_se_units:.2f} SE, {elapsed:.0f}s")


def test_12_reproducibility(tmp_path):
    t0 = time.time()
    from gep_lab.cli import ExperimentConfig, run
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        cfg = ExperimentConfig(
            activation="tanh", readout="deterministic-tanh", delta=1.0,
            d=(4, 8), p=(4, 8), n=(2, 2), t=(0.5,), lam=(0.5,),
            n_draws=2_000, n_outer=20, n_test=8,
            suites=("free_entropy", "gen_error", "nishimori"),
            seed=2024, output_dir=str(out))
        run(cfg, workers=2)
        outs.append(out)
    csvs = sorted(p.name for p in outs[0].glob("*.csv"))
    same = bool(csvs) and all(
        (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
        for f in csvs)
    elapsed = time.time() - t0
    _report(12, "byte-for-byte reproducibility", same and elapsed < 300.0,
            f"{elapsed:.0f}s")

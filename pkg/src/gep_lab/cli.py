"""Experiment runner: sectioned key-value configs, seeded deterministic
execution over a size grid, CSV and report emission.

Exit codes: 0 success, 1 a verification assertion failed, 2 bad
configuration or arguments.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import __version__
from .kernels import ACTIVATIONS, READOUTS, gauss_equiv_params, get_activation
from .model import ModelSpec, kappa, make_model
from .posterior import ChainConfig
from .sampling import dataset_to_csv, gen_dataset
from . import estimators as est
from . import verify as ver


class ConfigError(Exception):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


ESTIMATE_QUANTITIES = (
    "free_entropy", "conditional_entropy", "psi_nn", "psi_glm", "psi_limit",
    "mutual_information", "gen_error", "gen_error_proxy",
    "side_info_mutual_information",
)
VERIFY_SUITES = ("nishimori", "pout", "approximation", "epsilon",
                 "concentration")
SCAN_SUITES = ("theorem1", "theorem2")
ALL_SUITES = ESTIMATE_QUANTITIES + VERIFY_SUITES + SCAN_SUITES


@dataclass(frozen=True)
class ExperimentConfig:
    activation: str = "tanh"
    readout: str = "deterministic-tanh"
    delta: float = 1.0
    d: tuple = (8,)
    p: tuple = (8,)
    n: tuple = (4,)
    t: tuple = (0.5,)
    lam: tuple = (0.5,)
    eta: float = 1.0
    method: str = "importance"
    n_draws: int = 20_000
    n_outer: int = 50
    n_test: int = 16
    step_size: float = 0.05
    n_steps: int = 1500
    n_burn: int = 500
    n_beta: int = 8
    suites: tuple = ()
    seed: int = 0
    output_dir: str = "out"

    def budget(self) -> est.SamplerBudget:
        return est.SamplerBudget(
            self.method, self.n_draws,
            ChainConfig(self.step_size, self.n_steps, self.n_burn),
            self.n_beta)

    def grid(self) -> list[tuple]:
        """(d, p, n, t, lambda) tuples; short lists broadcast if length 1,
        otherwise all per-size lists must share one length."""
        lists = [self.d, self.p, self.n, self.t, self.lam]
        width = max(len(x) for x in lists)
        rows = []
        for x in lists:
            rows.append(tuple(x) * width if len(x) == 1 else tuple(x))
        return list(zip(*rows))

    def to_text(self) -> str:
        """Normalized serialization; parsing it back is the identity."""
        def seq(v):
            return ", ".join(repr(float(x)) if isinstance(x, float)
                             else str(x) for x in v)
        return "\n".join([
            "[model]",
            f"activation = {self.activation}",
            f"readout = {self.readout}",
            f"delta = {repr(self.delta)}",
            "",
            "[sizes]",
            f"d = {seq(self.d)}",
            f"p = {seq(self.p)}",
            f"n = {seq(self.n)}",
            f"t = {seq(self.t)}",
            f"lambda = {seq(self.lam)}",
            f"eta = {repr(self.eta)}",
            "",
            "[sampler]",
            f"method = {self.method}",
            f"n_draws = {self.n_draws}",
            f"n_outer = {self.n_outer}",
            f"n_test = {self.n_test}",
            f"step_size = {repr(self.step_size)}",
            f"n_steps = {self.n_steps}",
            f"n_burn = {self.n_burn}",
            f"n_beta = {self.n_beta}",
            "",
            "[run]",
            f"suites = {', '.join(self.suites)}",
            f"seed = {self.seed}",
            f"output_dir = {self.output_dir}",
            "",
        ])

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def parse_config(text: str) -> ExperimentConfig:
    """Sectioned key-value format; reports every error at once, with line
    numbers, including both lines of a duplicated key."""
    errors: list[str] = []
    values: dict[str, object] = {}
    seen: dict[tuple, int] = {}
    section = None

    def conv_scalar(raw, kind, lineno):
        try:
            if kind == "int":
                return int(raw)
            if kind == "float":
                return float(raw)
        except ValueError:
            errors.append(f"line {lineno}: expected {kind}, got {raw!r}")
            return None
        return raw

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in ("model", "sizes", "sampler", "run"):
                errors.append(f"line {lineno}: unknown section "
                              f"[{section}]")
                section = None
            continue
        if "=" not in stripped:
            errors.append(f"line {lineno}: expected key = value, got "
                          f"{stripped!r}")
            continue
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if section is None:
            errors.append(f"line {lineno}: key {key!r} outside any section")
            continue
        if (section, key) in seen:
            errors.append(
                f"line {lineno}: duplicate key {key!r} in [{section}], "
                f"first set on line {seen[(section, key)]}")
            continue
        seen[(section, key)] = lineno
        spec = _KEY_TABLE.get((section, key))
        if spec is None:
            errors.append(f"line {lineno}: unknown key {key!r} in "
                          f"[{section}]")
            continue
        attr, kind = spec
        if kind in ("int", "float"):
            v = conv_scalar(raw, kind, lineno)
            if v is not None:
                values[attr] = v
        elif kind in ("int_list", "float_list"):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            base = "int" if kind == "int_list" else "float"
            parsed = [conv_scalar(x, base, lineno) for x in items]
            if not items:
                errors.append(f"line {lineno}: empty list for {key!r}")
            elif None not in parsed:
                values[attr] = tuple(parsed)
        elif kind == "suite_list":
            items = tuple(x.strip() for x in raw.split(",") if x.strip())
            bad = [s for s in items if s not in ALL_SUITES]
            for s in bad:
                errors.append(f"line {lineno}: unknown suite {s!r} "
                              f"(choices: {', '.join(ALL_SUITES)})")
            if not bad:
                values[attr] = items
        else:  # plain string
            values[attr] = raw

    cfg = ExperimentConfig(**values) if not errors else None
    if errors:
        raise ConfigError(errors)
    errors.extend(_validate(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


_KEY_TABLE = {
    ("model", "activation"): ("activation", "str"),
    ("model", "readout"): ("readout", "str"),
    ("model", "delta"): ("delta", "float"),
    ("sizes", "d"): ("d", "int_list"),
    ("sizes", "p"): ("p", "int_list"),
    ("sizes", "n"): ("n", "int_list"),
    ("sizes", "t"): ("t", "float_list"),
    ("sizes", "lambda"): ("lam", "float_list"),
    ("sizes", "eta"): ("eta", "float"),
    ("sampler", "method"): ("method", "str"),
    ("sampler", "n_draws"): ("n_draws", "int"),
    ("sampler", "n_outer"): ("n_outer", "int"),
    ("sampler", "n_test"): ("n_test", "int"),
    ("sampler", "step_size"): ("step_size", "float"),
    ("sampler", "n_steps"): ("n_steps", "int"),
    ("sampler", "n_burn"): ("n_burn", "int"),
    ("sampler", "n_beta"): ("n_beta", "int"),
    ("run", "suites"): ("suites", "suite_list"),
    ("run", "seed"): ("seed", "int"),
    ("run", "output_dir"): ("output_dir", "str"),
}


def _validate(cfg: ExperimentConfig) -> list[str]:
    errors = []
    if cfg.activation not in ACTIVATIONS:
        errors.append(f"unknown activation {cfg.activation!r} "
                      f"(choices: {', '.join(sorted(ACTIVATIONS))})")
    if cfg.readout not in READOUTS:
        errors.append(f"unknown readout {cfg.readout!r} "
                      f"(choices: {', '.join(sorted(READOUTS))})")
    if cfg.delta <= 0:
        errors.append(f"delta = {cfg.delta} violates the constraint "
                      "delta > 0")
    for name in ("d", "p", "n"):
        if any(v < 1 for v in getattr(cfg, name)):
            errors.append(f"sizes in {name!r} must be positive")
    if any(not 0.0 <= t <= 1.0 for t in cfg.t):
        errors.append("interpolation times t must lie in [0, 1]")
    if any(l < 0 for l in cfg.lam):
        errors.append("lambda values must be >= 0")
    if cfg.eta <= 0:
        errors.append("eta must be > 0")
    if cfg.method not in ("importance", "mala"):
        errors.append(f"unknown sampler method {cfg.method!r}")
    widths = {len(getattr(cfg, a)) for a in ("d", "p", "n", "t", "lam")}
    if len(widths - {1}) > 1:
        errors.append("per-size lists must have length 1 or one shared "
                      "length")
    return errors


# ---------------------------------------------------------------------------
# run orchestration
# ---------------------------------------------------------------------------

@dataclass
class JobRecord:
    index: int
    name: str
    seed: int
    wall_clock: float
    status: str           # "ok" | "fail" | "error: ..."


@dataclass
class RunManifest:
    config_hash: str
    version: str
    jobs: list[JobRecord] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(j.status == "ok" for j in self.jobs)

    def to_text(self) -> str:
        lines = [f"config_hash {self.config_hash}",
                 f"version {self.version}"]
        for j in self.jobs:
            lines.append(f"job {j.index} {j.name} seed={j.seed} "
                         f"wall={j.wall_clock:.3f}s status={j.status}")
        return "\n".join(lines) + "\n"


def version_stamp() -> str:
    return f"gep-lab {__version__} (numpy {np.__version__})"


def job_seed(master_seed: int, job_index: int) -> int:
    """Splittable per-job seed: adding jobs never perturbs existing ones."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(job_index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _atomic_write(path: str, content: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(content)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _job_list(cfg: ExperimentConfig) -> list[tuple]:
    """(name, coords-or-None) per job; verify suites and scans are single
    jobs, estimator quantities fan out over the size grid."""
    jobs = []
    for suite in cfg.suites:
        if suite in ESTIMATE_QUANTITIES:
            for coords in cfg.grid():
                jobs.append((suite, coords))
        else:
            jobs.append((suite, None))
    return jobs


def _run_estimate_job(cfg: ExperimentConfig, name: str, coords, seed: int):
    d, p, n, t, lam = coords
    model = make_model(cfg.activation, cfg.readout, cfg.delta, d, p, n)
    rng = np.random.default_rng(seed)
    budget = cfg.budget()
    if name == "free_entropy":
        e = est.free_entropy(model, t, cfg.n_outer, budget, rng)
    elif name == "conditional_entropy":
        e = est.conditional_entropy_term(model, t,
                                         max(1000, cfg.n_outer * n), rng)
    elif name in ("psi_nn", "psi_glm", "psi_limit"):
        e = est.psi_term(model, name.split("_", 1)[1],
                         max(100, cfg.n_outer), rng)
    elif name == "mutual_information":
        e = est.mutual_information(model, t, cfg.n_outer, budget,
                                   max(1000, cfg.n_outer * n), rng)
    elif name == "gen_error":
        e = est.gen_error(model, t, cfg.n_outer, cfg.n_test, budget, rng)
    elif name == "gen_error_proxy":
        e = est.gen_error_proxy(model, t, lam, cfg.eta, cfg.n_outer,
                                budget, rng)
    elif name == "side_info_mutual_information":
        e = est.side_info_mutual_information(model, t, lam, cfg.eta,
                                             cfg.n_outer, cfg.n_draws, rng)
    else:
        raise ValueError(f"unknown quantity {name!r}")
    return est.csv_row(name, e, seed), True


def _scan_triplets(cfg: ExperimentConfig):
    return [(d, p, n) for d, p, n, _, _ in cfg.grid()]


def _run_suite_job(cfg: ExperimentConfig, name: str, seed: int):
    rng = np.random.default_rng(seed)
    d, p, n, t, lam = cfg.grid()[0]
    model = make_model(cfg.activation, cfg.readout, cfg.delta, d, p, n)
    budget = cfg.budget()
    if name == "nishimori":
        report = ver.nishimori_suite(model, cfg.t, cfg.n_outer,
                                     cfg.n_draws, rng)
    elif name == "pout":
        report = ver.pout_property_suite(model, max(10_000, cfg.n_draws),
                                         rng)
    elif name == "approximation":
        fits = ver.approximation_suite(model.activation, cfg.d,
                                       cfg.n_draws, rng)
        report = ver.SuiteReport("approximation")
        for disp, fit in zip(ver.APPROXIMATION_DISPLAYS, fits):
            report.add(f"slope_{disp}", fit.exponent, 0.0, 0.3,
                       passed=abs(fit.exponent - 1.0) <= 0.3)
    elif name == "epsilon":
        report, _ = ver.epsilon_cancellation_check(
            model.activation, cfg.d, max(cfg.p), cfg.n_draws, rng)
    elif name == "concentration":
        grid = [(dd, nn) for dd, _, nn, _, _ in cfg.grid()]
        report, _ = ver.concentration_check(model, t, grid,
                                            max(100, cfg.n_outer),
                                            budget, rng)
    elif name == "theorem1":
        budgets = [budget] * len(_scan_triplets(cfg))
        report, _ = ver.theorem1_gap_scan(model, _scan_triplets(cfg),
                                          budgets, cfg.n_outer, rng)
    elif name == "theorem2":
        budgets = [budget] * len(_scan_triplets(cfg))
        report, _ = ver.theorem2_gap_scan(model, _scan_triplets(cfg),
                                          budgets, cfg.n_outer,
                                          cfg.n_test, rng)
    else:
        raise ValueError(f"unknown suite {name!r}")
    return report


def _execute_job(cfg: ExperimentConfig, index: int, name: str, coords):
    seed = job_seed(cfg.seed, index)
    if name in ESTIMATE_QUANTITIES:
        row, ok = _run_estimate_job(cfg, name, coords, seed)
        return index, name, seed, ("estimate", row), ok
    report = _run_suite_job(cfg, name, seed)
    return index, name, seed, ("suite", report), report.passed


def _execute_job_text(cfg_text: str, index: int, name: str, coords):
    # process-pool entry point: reconstruct everything from plain data
    return _execute_job(parse_config(cfg_text), index, name, coords)


def run(cfg: ExperimentConfig, workers: int = 1) -> RunManifest:
    os.makedirs(cfg.output_dir, exist_ok=True)
    manifest = RunManifest(cfg.config_hash(), version_stamp())
    jobs = _job_list(cfg)
    results = []
    if workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            futures = []
            text = cfg.to_text()
            for i, (name, coords) in enumerate(jobs):
                t0 = time.monotonic()
                futures.append((i, t0, pool.submit(
                    _execute_job_text, text, i, name, coords)))
            for i, t0, fut in futures:
                results.append((fut.result(), time.monotonic() - t0))
    else:
        for i, (name, coords) in enumerate(jobs):
            t0 = time.monotonic()
            results.append((_execute_job(cfg, i, name, coords),
                            time.monotonic() - t0))

    estimate_rows = []
    summary = [f"# {version_stamp()}", f"# manifest {cfg.config_hash()}"]
    for (index, name, seed, payload, ok), wall in results:
        manifest.jobs.append(JobRecord(index, name, seed, wall,
                                       "ok" if ok else "fail"))
        kind, value = payload
        if kind == "estimate":
            estimate_rows.append(value)
        else:
            lines = value.csv_lines()
            _atomic_write(os.path.join(cfg.output_dir, f"{name}.csv"),
                          f"# {version_stamp()}\n" + "\n".join(lines) + "\n")
            summary.extend(value.summary_lines())
    if estimate_rows:
        _atomic_write(
            os.path.join(cfg.output_dir, "estimates.csv"),
            f"# {version_stamp()}\n" + est.csv_header() + "\n"
            + "\n".join(estimate_rows) + "\n")
    _atomic_write(os.path.join(cfg.output_dir, "summary.txt"),
                  "\n".join(summary) + "\n")
    _atomic_write(os.path.join(cfg.output_dir, "manifest.txt"),
                  manifest.to_text())
    return manifest


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gep-lab",
        description="Numerical laboratory for two-layer teacher-student "
                    "inference and its linear-plus-noise equivalent.")
    parser.add_argument("--config", metavar="PATH",
                        help="experiment configuration file")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="override the master seed")
    parser.add_argument("--workers", type=int, default=1, metavar="N",
                        help="bounded worker pool size")
    parser.add_argument("--out", metavar="DIR",
                        help="override the output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    p_const = sub.add_parser("constants",
                             help="print the equivalence constants for an "
                                  "activation")
    p_const.add_argument("activation", nargs="?", default=None)
    sub.add_parser("gen", help="emit one dataset as CSV")
    p_estimate = sub.add_parser("estimate", help="run one estimator over "
                                                 "the size grid")
    p_estimate.add_argument("quantity", choices=ESTIMATE_QUANTITIES)
    p_verify = sub.add_parser("verify", help="run one verification suite")
    p_verify.add_argument("suite", choices=VERIFY_SUITES)
    p_scan = sub.add_parser("scan", help="run an equivalence-gap scan")
    p_scan.add_argument("theorem", choices=SCAN_SUITES)
    sub.add_parser("run", help="run every suite selected in the config")
    return parser


def _load_config(args) -> ExperimentConfig:
    if args.config:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if args.command == "constants":
        kind = args.activation or cfg.activation
        try:
            params = gauss_equiv_params(get_activation(kind))
        except ValueError:
            print(f"config error: unknown activation {kind!r}",
                  file=sys.stderr)
            return 2
        print(f"activation {kind}")
        print(f"rho {repr(params.rho)}")
        print(f"epsilon {repr(params.epsilon)}")
        print(f"second_moment {repr(params.second_moment)}")
        return 0

    if args.command == "gen":
        d, p, n, t, _ = cfg.grid()[0]
        model = make_model(cfg.activation, cfg.readout, cfg.delta, d, p, n)
        ds = gen_dataset(model, t, np.random.default_rng(cfg.seed))
        os.makedirs(cfg.output_dir, exist_ok=True)
        path = os.path.join(cfg.output_dir, "dataset.csv")
        _atomic_write(path, dataset_to_csv(ds, seed=cfg.seed))
        print(path)
        return 0

    if args.command == "estimate":
        cfg = replace(cfg, suites=(args.quantity,))
    elif args.command == "verify":
        name = {"pout": "pout", "nishimori": "nishimori",
                "approximation": "approximation", "epsilon": "epsilon",
                "concentration": "concentration"}[args.suite]
        cfg = replace(cfg, suites=(name,))
    elif args.command == "scan":
        cfg = replace(cfg, suites=(args.theorem,))
    # "run" keeps the suites from the config

    try:
        manifest = run(cfg, workers=args.workers)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    print(f"manifest {manifest.config_hash} jobs={len(manifest.jobs)} "
          f"-> {cfg.output_dir}")
    return 0 if manifest.all_passed else 1


if __name__ == "__main__":
    sys.exit(main())

"""Sampling of teachers, inputs and responses for the two-layer model, the
noisy linear model, the interpolating family joining them, and the
side-information channel used by the I-MMSE proxy.

Draw order inside `gen_dataset` is fixed (a*, W*, v*, xi*, X, atoms, Z) so a
given seed pins every latent regardless of the interpolation time t; the
t=0 / t=1 endpoints then share all their randomness.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .kernels import Activation, GaussEquivParams
from .model import ModelSpec


@dataclass(frozen=True)
class TeacherNN:
    a_star: np.ndarray   # (p,)
    w_star: np.ndarray   # (p, d)


@dataclass(frozen=True)
class TeacherGLM:
    v_star: np.ndarray   # (d,)
    xi_star: np.ndarray  # (n,)


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray        # (n, d)
    y: np.ndarray        # (n,)
    nn: TeacherNN
    glm: TeacherGLM
    t: float
    model: ModelSpec
    atom_idx: np.ndarray  # (n,) index into readout support
    z: np.ndarray         # (n,) label-noise realizations

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class SideInfo:
    x_new: np.ndarray      # (m, d)
    y_prime: np.ndarray    # (m,) clean responses from the teacher channel
    y_tilde: np.ndarray    # (m,) sqrt(lambda) * y_prime + standard normal
    lam: float
    eta: float
    xi_star_new: np.ndarray  # (m,) teacher linear-noise block for t > 0
    atom_idx: np.ndarray
    z: np.ndarray


def sample_inputs(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    return rng.standard_normal((n, d))


def sample_teachers(model: ModelSpec, rng: np.random.Generator,
                    n_xi: int | None = None) -> tuple[TeacherNN, TeacherGLM]:
    n_xi = model.n if n_xi is None else n_xi
    nn = TeacherNN(rng.standard_normal(model.p),
                   rng.standard_normal((model.p, model.d)))
    glm = TeacherGLM(rng.standard_normal(model.d), rng.standard_normal(n_xi))
    return nn, glm


def preactivation_nn(teacher: TeacherNN, x: np.ndarray, phi: Activation):
    """(a*^T / sqrt(p)) phi(W* x / sqrt(d)); x may be a (n, d) batch."""
    p, d = teacher.w_star.shape
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise ValueError(f"input dim {x.shape[-1]} != teacher dim {d}")
    alpha = x @ teacher.w_star.T / math.sqrt(d)
    out = phi.phi(alpha) @ teacher.a_star / math.sqrt(p)
    return out if np.ndim(out) else float(out)


def preactivation_glm(teacher: TeacherGLM, x: np.ndarray, mu: int,
                      params: GaussEquivParams):
    """rho v*^T x / sqrt(d) + sqrt(eps) xi*_mu."""
    d = teacher.v_star.shape[0]
    if not 0 <= mu < teacher.xi_star.shape[0]:
        raise IndexError(f"mu={mu} out of range for xi* of length "
                         f"{teacher.xi_star.shape[0]}")
    lin = params.rho * float(np.asarray(x) @ teacher.v_star) / math.sqrt(d)
    return lin + math.sqrt(params.epsilon) * teacher.xi_star[mu]


def preactivation_interp(nn: TeacherNN, glm: TeacherGLM, x: np.ndarray,
                         mu: int, t: float, phi: Activation,
                         params: GaussEquivParams):
    """sqrt(1-t) * NN part + sqrt(t) * linear part + sqrt(t eps) xi*_mu."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    s_nn = preactivation_nn(nn, x, phi) if t < 1.0 else 0.0
    d = glm.v_star.shape[0]
    lin = params.rho * float(np.asarray(x) @ glm.v_star) / math.sqrt(d)
    return (math.sqrt(1.0 - t) * s_nn + math.sqrt(t) * lin
            + math.sqrt(t * params.epsilon) * glm.xi_star[mu])


def teacher_preactivations(model: ModelSpec, nn: TeacherNN, glm: TeacherGLM,
                           x: np.ndarray, t: float,
                           xi: np.ndarray | None = None) -> np.ndarray:
    """Vectorized S_t for all rows of x; xi defaults to the teacher block."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    xi = glm.xi_star if xi is None else xi
    s = np.zeros(x.shape[0])
    if t < 1.0:
        s += math.sqrt(1.0 - t) * preactivation_nn(nn, x, model.activation)
    gep = model.gep
    s += math.sqrt(t) * gep.rho * (x @ glm.v_star) / math.sqrt(model.d)
    s += math.sqrt(t * gep.epsilon) * xi[: x.shape[0]]
    return s


def _draw_responses(model: ModelSpec, s: np.ndarray,
                    atom_idx: np.ndarray, z: np.ndarray) -> np.ndarray:
    r = model.readout
    atoms = np.array(r.support)[atom_idx]
    return r.f(s, atoms) + math.sqrt(model.delta) * z


def gen_dataset(model: ModelSpec, t: float, rng: np.random.Generator) -> Dataset:
    """Sample teachers, inputs and responses of the interpolating model."""
    nn, glm = sample_teachers(model, rng)
    x = sample_inputs(model.n, model.d, rng) if model.n else np.zeros((0, model.d))
    atom_idx = rng.choice(model.readout.n_atoms, size=model.n,
                          p=np.array(model.readout.probs))
    z = rng.standard_normal(model.n)
    s = teacher_preactivations(model, nn, glm, x, t)
    y = _draw_responses(model, s, atom_idx, z)
    return Dataset(x=x, y=y, nn=nn, glm=glm, t=t, model=model,
                   atom_idx=atom_idx, z=z)


def gen_side_info(dataset: Dataset, lam: float, eta: float,
                  rng: np.random.Generator) -> SideInfo:
    """Fresh inputs and clean responses from the same teacher, observed
    through the tilted channel sqrt(lambda) Y' + Z'."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if eta <= 0:
        raise ValueError("eta must be > 0")
    model = dataset.model
    m = math.ceil(model.n * eta)
    x_new = sample_inputs(m, model.d, rng)
    xi_new = rng.standard_normal(m)
    atom_idx = rng.choice(model.readout.n_atoms, size=m,
                          p=np.array(model.readout.probs))
    z = rng.standard_normal(m)
    s = teacher_preactivations(model, dataset.nn, dataset.glm, x_new,
                               dataset.t, xi=xi_new)
    y_prime = _draw_responses(model, s, atom_idx, z)
    y_tilde = math.sqrt(lam) * y_prime + rng.standard_normal(m)
    return SideInfo(x_new=x_new, y_prime=y_prime, y_tilde=y_tilde,
                    lam=lam, eta=eta, xi_star_new=xi_new,
                    atom_idx=atom_idx, z=z)


# ---------------------------------------------------------------------------
# serialization (exact round trip)
# ---------------------------------------------------------------------------

def _fmt(a: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(a).ravel())


def dataset_to_csv(dataset: Dataset, seed: int | None = None) -> str:
    """Flat CSV with a header line (d, p, n, t, seed), then row-major X, Y and
    the teacher blocks; floats printed with full precision."""
    m = dataset.model
    buf = io.StringIO()
    buf.write("d,p,n,t,seed\n")
    buf.write(f"{m.d},{m.p},{m.n},{dataset.t!r},{'' if seed is None else seed}\n")
    for name, block in (("X", dataset.x), ("Y", dataset.y),
                        ("a_star", dataset.nn.a_star),
                        ("W_star", dataset.nn.w_star),
                        ("v_star", dataset.glm.v_star),
                        ("xi_star", dataset.glm.xi_star),
                        ("atom_idx", dataset.atom_idx.astype(float)),
                        ("z", dataset.z)):
        buf.write(f"{name},{_fmt(block)}\n")
    return buf.getvalue()


def dataset_from_csv(text: str, model: ModelSpec) -> Dataset:
    lines = text.strip().splitlines()
    d, p, n = (int(v) for v in lines[1].split(",")[:3])
    t = float(lines[1].split(",")[3])
    if (d, p, n) != (model.d, model.p, model.n):
        raise ValueError(f"size header ({d},{p},{n}) does not match model "
                         f"({model.d},{model.p},{model.n})")
    blocks = {}
    for line in lines[2:]:
        name, _, rest = line.partition(",")
        blocks[name] = np.array([float(v) for v in rest.split(",")]) if rest else np.zeros(0)
    return Dataset(
        x=blocks["X"].reshape(n, d), y=blocks["Y"],
        nn=TeacherNN(blocks["a_star"], blocks["W_star"].reshape(p, d)),
        glm=TeacherGLM(blocks["v_star"], blocks["xi_star"]),
        t=t, model=model, atom_idx=blocks["atom_idx"].astype(int),
        z=blocks["z"])

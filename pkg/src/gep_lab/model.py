"""Model specification: architecture sizes, channel, and the derived
linear-equivalent constants."""

from __future__ import annotations

from dataclasses import dataclass, field

from .kernels import (
    Activation,
    GaussEquivParams,
    OutputKernel,
    Readout,
    gauss_equiv_params,
    get_activation,
    get_readout,
)


@dataclass(frozen=True)
class ModelSpec:
    activation: Activation
    readout: Readout
    delta: float
    d: int
    p: int
    n: int
    gep: GaussEquivParams = field(init=False)

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if min(self.d, self.p) < 1 or self.n < 0:
            raise ValueError("sizes must be positive (n may be 0)")
        object.__setattr__(self, "gep", gauss_equiv_params(self.activation))

    @property
    def kernel(self) -> OutputKernel:
        return OutputKernel(self.readout, self.delta)

    def with_sizes(self, d: int | None = None, p: int | None = None,
                   n: int | None = None) -> "ModelSpec":
        return ModelSpec(self.activation, self.readout, self.delta,
                         d if d is not None else self.d,
                         p if p is not None else self.p,
                         n if n is not None else self.n)


def make_model(activation: str, readout: str, delta: float,
               d: int, p: int, n: int) -> ModelSpec:
    return ModelSpec(get_activation(activation), get_readout(readout),
                     delta, d, p, n)


def kappa(d: int, p: int, n: int) -> float:
    """Control parameter of the equivalence bound; the gap between the
    two-layer and linear models vanishes along sequences where this does."""
    return (1.0 + n / d) * (n / p + n / d**1.5 + 1.0 / d**0.5)

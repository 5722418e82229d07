"""Model-specification tests: size control, derived constants, and the
closed-form control parameter."""

import math

import numpy as np
import pytest

from gep_lab.model import ModelSpec, kappa, make_model


class TestModelSpec:
    def test_derived_constants_attached(self):
        m = make_model("sine", "deterministic-tanh", 1.0, d=4, p=4, n=2)
        assert abs(m.gep.rho - math.exp(-0.5)) < 1e-10

    def test_with_sizes_keeps_channel(self):
        m = make_model("tanh", "deterministic-tanh", 0.7, d=4, p=4, n=2)
        m2 = m.with_sizes(d=16)
        assert m2.d == 16 and m2.p == 4 and m2.n == 2
        assert m2.delta == 0.7 and m2.gep == m.gep

    def test_invalid_delta(self):
        with pytest.raises(ValueError):
            make_model("tanh", "deterministic-tanh", 0.0, d=4, p=4, n=2)

    def test_invalid_sizes(self):
        with pytest.raises(ValueError):
            make_model("tanh", "deterministic-tanh", 1.0, d=0, p=4, n=2)


class TestKappa:
    def test_closed_form(self):
        d, p, n = 16, 8, 4
        want = (1 + n / d) * (n / p + n / d**1.5 + 1 / math.sqrt(d))
        assert kappa(d, p, n) == want

    def test_vanishes_along_growing_sequence(self):
        vals = [kappa(d, d, 4) for d in (16, 64, 256, 1024)]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 0.2

    def test_frozen_reference_values(self):
        # anchors used by the gap-scan tolerance arithmetic
        assert abs(math.sqrt(kappa(16, 16, 4)) - 0.839) < 5e-3
        assert abs(math.sqrt(kappa(64, 64, 4)) - 0.456) < 5e-3
        assert abs(math.sqrt(kappa(256, 256, 4)) - 0.283) < 5e-3

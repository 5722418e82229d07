#!/usr/bin/env python3
"""Print the linear-equivalence constants (rho, epsilon, second moment)
for every built-in activation."""

from gep_lab.kernels import ACTIVATIONS, gauss_equiv_params


def main() -> None:
    print(f"{'activation':<12} {'rho':>22} {'epsilon':>22} {'E phi^2':>22}")
    for kind, phi in ACTIVATIONS.items():
        g = gauss_equiv_params(phi)
        print(f"{kind:<12} {g.rho:>22.16f} {g.epsilon:>22.16f} "
              f"{g.second_moment:>22.16f}")


if __name__ == "__main__":
    main()

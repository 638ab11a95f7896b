"""Scan the smallest off-diagonal entry of one-sided tempered-stable generators.

For alpha < 0 with the second-order stencil the generator stays Metzler up
to nu * h = 1/2 and loses the property beyond it.  For 1 < alpha < 2 the
scan shows how negative the entries get as alpha approaches 1.
"""

from __future__ import annotations

import logging

import numpy as np

from jumpsplit import fd_operators as fdo
from jumpsplit.grid import build_uniform_grid
from jumpsplit.jump_generator import build_gtsp_side
from jumpsplit.levy_models import GTSPParams


def worst(alpha: float, nu: float, h: float, n: int = 121) -> float:
    grid = build_uniform_grid(0.0, (n - 1) * h, n)
    gen = build_gtsp_side(GTSPParams(1.0, 0.0, nu, 1.0, alpha, 0.5), "right", grid, check_metzler=False)
    m = gen.dense()
    return fdo.min_offdiagonal(m) / np.abs(m).max()


def main() -> None:
    logging.getLogger("jumpsplit").setLevel(logging.ERROR)
    nu = 2.0
    print("alpha < 0, nu = 2: relative min off-diagonal against nu*h")
    for alpha in (-1.5, -0.5, -0.05):
        cells = [f"{nu * h:.2f}:{worst(alpha, nu, h):+.1e}" for h in (0.1, 0.2, 0.25, 0.26, 0.3, 0.4)]
        print(f"  alpha={alpha:+.2f}  " + "  ".join(cells))
    print("1 < alpha < 2, nu = 2, h = 0.05: relative min off-diagonal")
    for alpha in (1.02, 1.1, 1.3, 1.5, 1.7, 1.9, 1.98):
        print(f"  alpha={alpha:.2f}  {worst(alpha, nu, 0.05):+.2e}")


if __name__ == "__main__":
    main()

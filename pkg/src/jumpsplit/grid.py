"""Log-price grids for the diffusion and jump parts of the solver.

The diffusion step only ever sees the nodes in ``Grid.diffusion_range``.  The
jump operator needs a wider domain, so the diffusion grid is embedded in a
superset whose extra nodes continue outward, either with geometrically growing
steps or with the diffusion step held fixed.  The diffusion nodes themselves
are never moved or re-interpolated.

All coordinates are ``x = ln(S / S0)``.  Callers that think in spot terms use
:func:`spot_to_x` on the way in.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

Spacing = Literal["uniform", "concentrated"]
Extension = Literal["geometric", "uniform"]


class GridError(ValueError):
    """Raised for an invalid grid specification."""


def spot_to_x(s: float, spot: float) -> float:
    """Convert a spot-space bound to log-price relative to ``spot``."""
    if not (s > 0 and spot > 0):
        raise GridError(f"spot-space bounds must be positive, got {s!r} with spot {spot!r}")
    return math.log(s / spot)


@dataclass(frozen=True)
class GridSpec:
    """Everything needed to build a jump grid.

    ``x_max_jump`` / ``x_min_jump`` default to the diffusion bounds (no
    extension).  When only the upper extension is given, the lower one mirrors
    its length.  ``growth`` is only read when ``extension == "geometric"``.
    ``center`` and ``intensity`` only matter for concentrated spacing.
    """

    x_min: float
    x_max_diffusion: float
    n_diffusion: int
    x_max_jump: float | None = None
    x_min_jump: float | None = None
    growth: float = 1.03
    spacing: Spacing = "uniform"
    extension: Extension = "geometric"
    center: float = 0.0
    intensity: float = 5.0

    def __post_init__(self) -> None:
        problems = self.problems()
        if problems:
            raise GridError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        vals = (self.x_min, self.x_max_diffusion)
        if not all(math.isfinite(v) for v in vals):
            out.append("grid bounds must be finite")
            return out
        if not self.x_min < self.x_max_diffusion:
            out.append("x_min < x_max_diffusion required")
        if self.x_max_jump is not None and self.x_max_jump < self.x_max_diffusion:
            out.append("x_max_diffusion <= x_max_jump required")
        if self.x_min_jump is not None and self.x_min_jump > self.x_min:
            out.append("x_min_jump <= x_min required")
        if self.extension == "geometric" and not self.growth > 1:
            out.append("growth factor g > 1 required")
        if self.n_diffusion < 3:
            out.append("n_diffusion >= 3 required")
        if self.spacing not in ("uniform", "concentrated"):
            out.append(f"unknown spacing {self.spacing!r}")
        if self.extension not in ("geometric", "uniform"):
            out.append(f"unknown extension {self.extension!r}")
        return out

    @property
    def resolved_x_min_jump(self) -> float:
        if self.x_min_jump is not None:
            return self.x_min_jump
        if self.x_max_jump is None:
            return self.x_min
        return self.x_min - (self.x_max_jump - self.x_max_diffusion)

    @property
    def resolved_x_max_jump(self) -> float:
        return self.x_max_diffusion if self.x_max_jump is None else self.x_max_jump


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing nodes plus the index window of the diffusion grid.

    ``i_lo`` and ``i_hi`` are inclusive.
    """

    nodes: np.ndarray
    i_lo: int
    i_hi: int
    steps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        nodes = np.array(self.nodes, dtype=float)
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 3:
            raise GridError("a grid needs at least 3 nodes")
        if not np.all(np.isfinite(nodes)):
            raise GridError("grid nodes must be finite")
        steps = np.diff(nodes)
        if np.any(steps <= 0):
            raise GridError("grid nodes must be strictly increasing")
        steps.setflags(write=False)
        object.__setattr__(self, "steps", steps)
        if not (0 <= self.i_lo < self.i_hi < nodes.size):
            raise GridError("diffusion range out of bounds")

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def diffusion_nodes(self) -> np.ndarray:
        return self.nodes[self.i_lo : self.i_hi + 1]

    @property
    def diffusion_slice(self) -> slice:
        return slice(self.i_lo, self.i_hi + 1)

    def uniform_step(self, rtol: float = 1e-9) -> float | None:
        """Common step if the whole grid is uniform, otherwise ``None``."""
        h = (self.nodes[-1] - self.nodes[0]) / (self.n - 1)
        if np.max(np.abs(self.steps - h)) <= rtol * h:
            return float(h)
        return None

    @property
    def h_max(self) -> float:
        return float(self.steps.max())

    @property
    def diffusion_h(self) -> float:
        """Largest step inside the diffusion window (the ``h`` column of a table)."""
        return float(self.steps[self.i_lo : self.i_hi].max())

    def export_csv(self, path: str | Path) -> None:
        """Write the nodes as a one-column CSV for debugging."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x"])
            for v in self.nodes:
                w.writerow([repr(float(v))])


def build_uniform_grid(x_min: float, x_max: float, n: int) -> Grid:
    """``n`` equally spaced nodes on ``[x_min, x_max]``."""
    if not (math.isfinite(x_min) and math.isfinite(x_max)):
        raise GridError("grid bounds must be finite")
    if n < 3:
        raise GridError("n >= 3 required")
    if not x_min < x_max:
        raise GridError("x_min < x_max required")
    h = (x_max - x_min) / (n - 1)
    nodes = x_min + h * np.arange(n)
    nodes[-1] = x_max
    return Grid(nodes, 0, n - 1)


def build_concentrated_grid(
    x_min: float, x_max: float, n: int, center: float, intensity: float = 5.0
) -> Grid:
    """Sinh-mapped grid clustered around ``center`` (usually ln(K/S0)).

    ``intensity`` is the ratio of the domain half-width to the width of the
    refined region; larger means stronger clustering.
    """
    if not x_min < center < x_max:
        raise GridError("concentration center must lie inside the domain")
    if intensity <= 0:
        raise GridError("intensity must be positive")
    c = (x_max - x_min) / (2.0 * intensity)
    a = math.asinh((x_min - center) / c)
    b = math.asinh((x_max - center) / c)
    xi = np.linspace(0.0, 1.0, n)
    nodes = center + c * np.sinh(a + (b - a) * xi)
    nodes[0], nodes[-1] = x_min, x_max
    return Grid(nodes, 0, n - 1)


def _outward_steps(h0: float, g: float, length: float, mode: Extension) -> np.ndarray:
    steps = []
    total = 0.0
    h = h0
    # A tiny slack avoids appending a sliver node because of round-off.
    while total < length * (1 - 1e-12):
        if mode == "geometric":
            h = h * g
        steps.append(h)
        total += h
    return np.array(steps)


def extend_to_jump_grid(
    grid: Grid,
    g: float,
    x_max_jump: float | None = None,
    x_min_jump: float | None = None,
    mode: Extension = "geometric",
) -> Grid:
    """Append (and prepend) nodes until the jump bounds are covered.

    In geometric mode the k-th added step is ``h_edge * g**k``.  In uniform
    mode the edge step is repeated, and ``g`` is ignored.
    """
    if mode == "geometric" and not g > 1:
        raise GridError("growth factor g > 1 required")
    nodes = grid.nodes
    upper = np.empty(0)
    lower = np.empty(0)
    if x_max_jump is not None:
        if x_max_jump < nodes[-1]:
            raise GridError("x_max_jump must not lie inside the grid")
        steps = _outward_steps(nodes[-1] - nodes[-2], g, x_max_jump - nodes[-1], mode)
        upper = nodes[-1] + np.cumsum(steps)
    if x_min_jump is not None:
        if x_min_jump > nodes[0]:
            raise GridError("x_min_jump must not lie inside the grid")
        steps = _outward_steps(nodes[1] - nodes[0], g, nodes[0] - x_min_jump, mode)
        lower = (nodes[0] - np.cumsum(steps))[::-1]
    if upper.size == 0 and lower.size == 0:
        return grid
    full = np.concatenate([lower, nodes, upper])
    shift = lower.size
    return Grid(full, grid.i_lo + shift, grid.i_hi + shift)


def build_grid(spec: GridSpec) -> Grid:
    """Diffusion grid from ``spec`` followed by its jump extension."""
    if spec.spacing == "uniform":
        base = build_uniform_grid(spec.x_min, spec.x_max_diffusion, spec.n_diffusion)
    else:
        base = build_concentrated_grid(
            spec.x_min, spec.x_max_diffusion, spec.n_diffusion, spec.center, spec.intensity
        )
    x_hi = spec.resolved_x_max_jump
    x_lo = spec.resolved_x_min_jump
    return extend_to_jump_grid(
        base,
        spec.growth,
        x_hi if x_hi > base.nodes[-1] else None,
        x_lo if x_lo < base.nodes[0] else None,
        mode=spec.extension,
    )

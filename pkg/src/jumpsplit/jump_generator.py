"""Discrete jump generators J* for Merton, Kou and tempered-stable jumps.

Each builder returns a :class:`JumpGenerator`.  It holds the part of the jump
operator kept in the jump step, plus the drift coefficient moved to the
diffusion step (see :mod:`jumpsplit.levy_models` for the sign convention).

Structured generators (Merton, Kou) apply themselves in O(N) or O(N log N)
and only materialise a dense matrix on request.  Tempered-stable generators
are dense by nature.  On uniform grids they are triangular Toeplitz, built
from power-series coefficients of the stencil symbols.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded, toeplitz
from scipy.special import gamma, ndtr

from . import fd_operators as fdo
from .grid import Grid
from .levy_models import (
    GTSPParams,
    KouParams,
    LevyJumpModel,
    MertonParams,
    ModelError,
    NoJumps,
    Side,
    alpha_regime,
    ensure_valid,
    gtsp_alpha1_constant,
    gtsp_drift_coefficient,
    kou_mu0,
    merton_kappa,
)

log = logging.getLogger(__name__)

FastApply = Literal["merton-heat", "kou-triangular", "none"]
MertonMode = Literal["heat", "matrix", "gauss", "cn"]


class StabilityError(ValueError):
    """The grid violates the condition under which a construction is stable."""


@dataclass(eq=False)
class JumpGenerator:
    """Discrete jump operator ``J*`` and the drift moved to the diffusion step.

    ``band`` is the stencil reach of the underlying difference operator.
    Rows within ``band`` of a grid edge see a truncated stencil, and tests
    exclude them when checking interior identities.
    """

    grid: Grid
    drift_shift: float
    regime: str
    fast_apply: FastApply = "none"
    order: int = 2
    band: int = 2
    matrix: np.ndarray | None = None
    apply_fn: Callable[[np.ndarray], np.ndarray] | None = None
    dense_fn: Callable[[], np.ndarray] | None = None
    info: dict = field(default_factory=dict)
    _exp_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.grid.n

    def apply(self, v: np.ndarray) -> np.ndarray:
        if self.apply_fn is not None:
            return self.apply_fn(v)
        return self.dense() @ v

    def dense(self) -> np.ndarray:
        if self.matrix is None:
            if self.dense_fn is None:
                raise RuntimeError("generator has no dense representation")
            self.matrix = self.dense_fn()
        return self.matrix

    def exp_matrix(self, dt: float) -> np.ndarray:
        """``exp(dt * J*)``, computed once per ``dt`` and then reused."""
        key = float(dt)
        if key not in self._exp_cache:
            self._exp_cache[key] = fdo.matrix_exponential(self.dense(), dt).matrix
        return self._exp_cache[key]

    @property
    def stock_rate(self) -> float:
        """Rate ``g`` with ``J* e^x = g e^x`` for the continuous operator.

        The diffusion step uses it to carry far-field boundary values.
        """
        return float(self.info.get("stock_rate", 0.0))

    def describe(self) -> dict:
        return {
            "regime": self.regime,
            "drift_shift": self.drift_shift,
            "fast_apply": self.fast_apply,
            "order": self.order,
            **self.info,
        }


def build_zero(grid: Grid) -> JumpGenerator:
    n = grid.n
    return JumpGenerator(
        grid,
        0.0,
        "no-jumps",
        order=2,
        band=0,
        apply_fn=lambda v: np.zeros_like(v),
        dense_fn=lambda: np.zeros((n, n)),
    )


# ---------------------------------------------------------------------------
# Merton
# ---------------------------------------------------------------------------


def merton_shift_operator(params: MertonParams, grid: Grid) -> sp.csr_matrix:
    """``B = mu_J A^C + sigma_J^2/2 A^C_2``, the discrete log of the jump shift."""
    ac, ac2 = fdo.central_operators(grid)
    return (params.mu_j * ac.matrix + 0.5 * params.sigma_j**2 * ac2.matrix).tocsr()


def _gauss_kernel(params: MertonParams, grid: Grid) -> np.ndarray:
    """Cell-averaged Gaussian kernel: row i integrates C(x_i + Y) over cells."""
    x = grid.nodes
    edges = np.concatenate([[-np.inf], 0.5 * (x[1:] + x[:-1]), [np.inf]])
    z = (edges[None, :] - x[:, None] - params.mu_j) / params.sigma_j
    cdf = ndtr(z)
    return np.diff(cdf, axis=1)


def build_merton(
    params: MertonParams, grid: Grid, mode: MertonMode = "matrix", cn_step: float | None = None
) -> JumpGenerator:
    """``J* = lam (exp(B) - I)`` with the compensator ``-lam kappa`` moved out.

    ``mode`` picks how ``exp(B) v`` is applied:

    * ``heat``: exact solution of the semi-discrete heat equation ``z' = B z``
      on ``s in [0, 1]`` without forming ``exp(B)``.  It matches ``matrix`` to
      round-off.
    * ``matrix``: dense ``exp(B)``.
    * ``gauss``: direct convolution with the Gaussian jump density.  This is a
      different O(h^2) discretisation of the same operator.
    * ``cn``: Crank-Nicolson sub-steps of the heat equation with step
      ``cn_step``.
    """
    ensure_valid(params)
    if grid.n < 3:
        raise ValueError("grid too small for central stencils")
    if params.lam == 0:
        return build_zero(grid)
    lam = params.lam
    drift = -lam * merton_kappa(params)
    b = merton_shift_operator(params, grid)
    n = grid.n

    def dense() -> np.ndarray:
        return lam * (fdo.matrix_exponential(b.toarray()).matrix - np.eye(n))

    if mode == "matrix":
        apply_fn = None
    elif mode == "heat":
        apply_fn = lambda v: lam * (spla.expm_multiply(b, v) - v)  # noqa: E731
    elif mode == "gauss":
        kern = _gauss_kernel(params, grid)
        apply_fn = lambda v: lam * (kern @ v - v)  # noqa: E731
        dense = lambda: lam * (kern - np.eye(n))  # noqa: E731
    elif mode == "cn":
        ds = cn_step if cn_step is not None else grid.h_max
        m = max(1, math.ceil(1.0 / ds))
        ds = 1.0 / m
        eye = sp.identity(n, format="csc")
        lu = spla.splu((eye - 0.5 * ds * b).tocsc())
        rhs = (eye + 0.5 * ds * b).tocsr()

        def apply_fn(v: np.ndarray) -> np.ndarray:
            z = v.copy()
            for _ in range(m):
                z = lu.solve(rhs @ z)
            return lam * (z - v)

        dense = None
    else:
        raise ValueError(f"unknown Merton mode {mode!r}")
    gen = JumpGenerator(
        grid,
        drift,
        "merton",
        fast_apply="merton-heat" if mode != "matrix" else "none",
        order=2,
        band=1,
        apply_fn=apply_fn,
        dense_fn=dense,
        info={"merton_mode": mode, "kappa": merton_kappa(params), "stock_rate": lam * merton_kappa(params)},
    )
    return gen


# ---------------------------------------------------------------------------
# Kou
# ---------------------------------------------------------------------------


def kou_max_step(params: KouParams, rule: str = "exact") -> float:
    """Largest grid step for which the Kou construction is positivity preserving.

    With ``rule="exact"`` the bound is ``1/(2 max theta)``.  That is where the
    characteristic roots of the three-point one-sided stencil stay real, so
    ``(theta I - A^F_2)^{-1}`` stays entrywise nonnegative.  ``rule="loose"``
    is ``1/max theta``; at steps between the two bounds the inverse has
    negative entries.
    """
    tmax = max(params.theta1, params.theta2)
    if rule == "exact":
        return 1.0 / (2.0 * tmax)
    if rule == "loose":
        return 1.0 / tmax
    raise ValueError(f"unknown rule {rule!r}")


def _banded_from_csr(m: sp.csr_matrix, lower: int, upper: int) -> np.ndarray:
    """LAPACK band storage expected by ``solve_banded``."""
    n = m.shape[0]
    ab = np.zeros((lower + upper + 1, n))
    dia = m.todia()
    for off, data in zip(dia.offsets, dia.data):
        if -lower <= off <= upper:
            ab[upper - off, :] = data
    return ab


def build_kou(
    params: KouParams,
    grid: Grid,
    *,
    compensator: Literal["exact", "forward"] = "exact",
    step_rule: str = "exact",
) -> JumpGenerator:
    """``J* = lam(-I + p th1 M1^{-1} + (1-p) th2 M2^{-1})``.

    Here ``M1 = th1 I - A^F_2`` is upper banded and ``M2 = th2 I + A^B_2`` is
    lower banded.  Applying ``J*`` costs two banded triangular solves.

    ``compensator="exact"`` moves ``-lam mu0`` to the diffusion drift, which is
    the martingale-correct compensator.  ``"forward"`` moves ``+lam mu0`` instead.
    That reproduces published Kou tables which were computed with the opposite
    sign.
    """
    ensure_valid(params)
    hmax = grid.h_max
    bound = kou_max_step(params, step_rule)
    if hmax > bound:
        raise StabilityError(
            f"Kou construction needs h <= {bound:.6g} for these thetas, grid has h = {hmax:.6g}"
        )
    lam, p, t1, t2 = params.lam, params.p, params.theta1, params.theta2
    n = grid.n
    eye = sp.identity(n, format="csr")
    af2 = fdo.second_order_one_sided(grid, "forward").matrix
    ab2 = fdo.second_order_one_sided(grid, "backward").matrix
    m1 = _banded_from_csr((t1 * eye - af2).tocsr(), 0, 2)
    m2 = _banded_from_csr((t2 * eye + ab2).tocsr(), 2, 0)

    def apply_fn(v: np.ndarray) -> np.ndarray:
        up = solve_banded((0, 2), m1, v, check_finite=False)
        dn = solve_banded((2, 0), m2, v, check_finite=False)
        return lam * (-v + p * t1 * up + (1 - p) * t2 * dn)

    def dense() -> np.ndarray:
        return apply_fn(np.eye(n))

    mu0 = kou_mu0(params)
    drift = -lam * mu0 if compensator == "exact" else lam * mu0
    return JumpGenerator(
        grid,
        drift,
        "kou",
        fast_apply="kou-triangular",
        order=2,
        band=2,
        apply_fn=apply_fn,
        dense_fn=dense,
        info={"mu0": mu0, "compensator": compensator, "h_bound": bound, "stock_rate": lam * mu0},
    )


# ---------------------------------------------------------------------------
# Tempered stable (GTSP / CGMY / KoBoL)
# ---------------------------------------------------------------------------


def _stencil_poly(kind: str, h: float) -> np.ndarray:
    """Symbol polynomial (in the shift towards the tail) of the one-sided operators.

    Both ``nu I - A^F`` and ``nu I + A^B`` have symbol ``nu + (1 - z)/h``,
    with ``z`` the shift towards the tail in question.  Likewise for the
    three-point versions.  So one table serves both sides.
    """
    if kind == "first":
        return np.array([1.0 / h, -1.0 / h])
    return np.array([1.5 / h, -2.0 / h, 0.5 / h])


class _Side:
    """Matrix functions of ``nu I -/+ A`` for one tail, on any grid."""

    def __init__(self, grid: Grid, side: Side, nu: float):
        self.grid = grid
        self.side = side
        self.nu = nu
        self.lower = side == "left"
        self.h = grid.uniform_step()

    def poly(self, kind: str) -> np.ndarray:
        f = _stencil_poly(kind, self.h)
        f[0] += self.nu
        return f

    def base_matrix(self, kind: str) -> np.ndarray:
        """Dense ``nu I - A`` (right) or ``nu I + A`` (left) from the stencil operators."""
        if kind == "first":
            op = fdo.first_order(self.grid, "backward" if self.lower else "forward")
        else:
            op = fdo.second_order_one_sided(self.grid, "backward" if self.lower else "forward")
        sign = 1.0 if self.lower else -1.0
        return self.nu * np.eye(self.grid.n) + sign * op.dense()

    def power(self, kind: str, a: float) -> np.ndarray:
        n = self.grid.n
        if self.h is not None:
            return fdo.triangular_toeplitz(fdo.series_power(self.poly(kind), a, n), self.lower)
        return fdo.fractional_power_triangular(self.base_matrix(kind), a).matrix

    def log(self, kind: str) -> np.ndarray:
        n = self.grid.n
        if self.h is not None:
            return fdo.triangular_toeplitz(fdo.series_log(self.poly(kind), n), self.lower)
        return fdo.matrix_log_triangular(self.base_matrix(kind)).matrix

    def xlogx(self) -> np.ndarray:
        """``(nu -/+ A) log(nu -/+ A)`` with first-order one-sided ``A``."""
        n = self.grid.n
        if self.h is not None:
            f = self.poly("first")
            c = fdo.series_product(f, fdo.series_log(f, n), n)
            return fdo.triangular_toeplitz(c, self.lower)
        base = self.base_matrix("first")
        return base @ fdo.matrix_log_triangular(base).matrix

    def centred_product(self, a: float) -> np.ndarray:
        """``(A^C_2 + nu^2 -/+ 2 nu A^C) (nu -/+ A^F_2)^a``, truncated as one operator.

        On a uniform grid the product is the Hessenberg Toeplitz matrix of the
        product series, so the first row (last row on the left) keeps every
        entry except the one that falls outside the grid.  On other grids it
        is the plain matrix product.
        """
        n = self.grid.n
        if self.h is None:
            ac, ac2 = fdo.central_operators(self.grid)
            sign = 2.0 if self.lower else -2.0
            m1 = (ac2.matrix + self.nu**2 * sp.identity(n) + sign * self.nu * ac.matrix).tocsr()
            return np.asarray(m1 @ self.power("second", a))
        h, nu = self.h, self.nu
        p = fdo.series_power(self.poly("second"), a, n + 1)
        away = 1.0 / h**2 + nu / h
        mid = nu**2 - 2.0 / h**2
        toward = 1.0 / h**2 - nu / h
        row = mid * p[:n] + away * p[1:]
        row[1:] += toward * p[: n - 1]
        col = np.zeros(n)
        col[0] = row[0]
        col[1] = away * p[0]
        upper = toeplitz(col, row)
        return upper.T if self.lower else upper

    def one_sided_first(self) -> np.ndarray:
        op = fdo.first_order(self.grid, "backward" if self.lower else "forward")
        return op.dense()


def gtsp_alpha1_min_kappa(nu: float, h: float, side: Side) -> float:
    """Smallest ``kappa_dump`` for which the alpha = 1 generator is Metzler on step ``h``.

    The first off-diagonal of ``(nu - A) log(nu - A)`` is
    ``-(1 + log(nu + 1/h)) / h`` and all further ones are positive.  The
    ``kappa c A`` term adds ``kappa c / h``.
    """
    return (1.0 + math.log(nu + 1.0 / h)) / gtsp_alpha1_constant(nu, side)


def build_gtsp_side(
    params: GTSPParams,
    side: Side,
    grid: Grid,
    *,
    kappa_dump: float = 5.0,
    order_negative_alpha: int = 2,
    check_metzler: bool = True,
) -> JumpGenerator:
    """Generator of one tempered-stable tail, dispatched on the tail index.

    * alpha < 0: ``lam G(-a) [(nu - A^F_2)^a - nu^a]``, second order
      (``order_negative_alpha=1`` switches to the two-point stencil).
    * 0 < alpha < 1: same with the two-point stencil, first order.
    * alpha = 0: ``lam [log nu - log(nu - A^F)]``.
    * alpha = 1: ``lam [(nu - A^F) log(nu - A^F) - nu log nu + kappa c A^F]``.
      Part of the compensator drift is kept in the jump step so that the
      matrix is Metzler; ``kappa_dump`` controls how much.
    * 1 < alpha < 2: ``lam G(-a) [(A^C_2 + nu^2 - 2 nu A^C)(nu - A^F_2)^(a-2) - nu^a]``,
      with the product truncated to the grid as a single operator.

    The left tail mirrors each case with backward stencils and ``+A``.  In
    every case except alpha = 1 the whole compensator drift moves to the
    diffusion step.
    """
    lam, nu, alpha = params.side(side)
    if side == "right" and lam > 0 and not nu > 1:
        raise ModelError("ν_R > 1 required")
    if lam > 0 and not nu > 0:
        raise ModelError("ν > 0 required")
    regime = alpha_regime(alpha)
    n = grid.n
    if lam == 0:
        gen = build_zero(grid)
        gen.regime = f"gtsp-{side}-off"
        return gen
    fn = _Side(grid, side, nu)
    eye = np.eye(n)
    drift = gtsp_drift_coefficient(params, side)
    order = 2
    band = 2
    kind = None
    if regime in ("alpha<0", "0<alpha<1"):
        kind = "second" if (regime == "alpha<0" and order_negative_alpha == 2) else "first"
        order = 2 if kind == "second" else 1
        band = 2 if kind == "second" else 1
        mat = lam * gamma(-alpha) * (fn.power(kind, alpha) - nu**alpha * eye)
    elif regime == "alpha=0":
        order, band = 1, 1
        mat = lam * (math.log(nu) * eye - fn.log("first"))
    elif regime == "alpha=1":
        order, band = 1, 1
        c = gtsp_alpha1_constant(nu, side)
        # The right tail carries +c grad and the left tail -c grad.  In both
        # cases kappa*c*(one-sided first derivative) points the right way.
        a1 = fn.one_sided_first()
        sgn = 1.0 if side == "right" else -1.0
        mat = lam * (fn.xlogx() - nu * math.log(nu) * eye + sgn * kappa_dump * c * a1)
        drift = sgn * lam * c * (1.0 - kappa_dump)
    else:  # 1 < alpha < 2
        mat = lam * gamma(-alpha) * (fn.centred_product(alpha - 2.0) - nu**alpha * eye)
    gen = JumpGenerator(
        grid,
        drift,
        f"gtsp-{side}-{regime}",
        order=order,
        band=band,
        matrix=np.asarray(mat),
        info={"alpha": alpha, "nu": nu, "lam": lam, "side": side, "stock_rate": -drift},
    )
    worst = fdo.min_offdiagonal(gen.matrix)
    gen.info["min_offdiag"] = worst
    below = worst < -1e-10 * max(1.0, float(np.abs(gen.matrix).max()))
    if regime == "alpha<0" and kind == "second" and below and check_metzler:
        # The stencil symbol has real roots beyond z = 1 when nu h <= 1/2,
        # and then every coefficient of the negative power is positive.
        raise StabilityError(
            f"alpha<0 generator is not Metzler at h_max={grid.h_max:.4g} "
            f"(min off-diagonal {worst:.3g}); nu*h <= 1/2, i.e. h <= {0.5 / nu:.4g}, suffices"
        )
    if regime == "1<alpha<2" and below:
        log.warning(
            "1<alpha<2 generator (alpha=%.4g, nu=%.4g, h_max=%.4g) is not Metzler: "
            "min off-diagonal %.3g",
            alpha, nu, grid.h_max, worst,
        )
    if regime == "alpha=1":
        gen.info["kappa_dump"] = kappa_dump
        if check_metzler:
            if below:
                need = gtsp_alpha1_min_kappa(nu, grid.h_max, side) if fn.h is not None else float("nan")
                raise StabilityError(
                    f"alpha=1 generator is not Metzler with kappa_dump={kappa_dump} "
                    f"(min off-diagonal {worst:.3g}; this step needs kappa_dump >= {need:.4g})"
                )
    return gen


def build_gtsp_naive(params: GTSPParams, grid: Grid) -> np.ndarray:
    """Right-tail generator with both derivatives taken as forward differences.

    ``lam G(-a) [(nu - A^F)^a - nu^a + (nu^a - (nu-1)^a) A^F]``.  For
    ``1 < a < 2`` its diagonal is positive at every ``h``, so it cannot
    generate a stable semigroup.  Kept only to demonstrate that failure.
    """
    lam, nu, alpha = params.side("right")
    fn = _Side(grid, "right", nu)
    eye = np.eye(grid.n)
    coef = nu**alpha - (nu - 1.0) ** alpha
    return lam * gamma(-alpha) * (fn.power("first", alpha) - nu**alpha * eye + coef * fn.one_sided_first())


def assemble_two_sided(right: JumpGenerator, left: JumpGenerator) -> JumpGenerator:
    """Sum of two tail generators on the same grid."""
    if right.grid is not left.grid and not np.array_equal(right.grid.nodes, left.grid.nodes):
        raise ValueError("generators live on different grids")
    if left.regime.endswith("-off") or left.regime == "no-jumps":
        return right
    if right.regime.endswith("-off") or right.regime == "no-jumps":
        return left
    return JumpGenerator(
        right.grid,
        right.drift_shift + left.drift_shift,
        f"{right.regime}+{left.regime}",
        order=min(right.order, left.order),
        band=max(right.band, left.band),
        matrix=right.dense() + left.dense(),
        info={
            "right": right.describe(),
            "left": left.describe(),
            "stock_rate": right.stock_rate + left.stock_rate,
        },
    )


def build_gtsp(params: GTSPParams, grid: Grid, **kw) -> JumpGenerator:
    ensure_valid(params)
    return assemble_two_sided(
        build_gtsp_side(params, "right", grid, **kw), build_gtsp_side(params, "left", grid, **kw)
    )


def build_generator(model: LevyJumpModel, grid: Grid, **kw) -> JumpGenerator:
    """Dispatch on the model type.  Keyword options go to the matching builder."""
    if isinstance(model, NoJumps):
        return build_zero(grid)
    if isinstance(model, MertonParams):
        return build_merton(model, grid, **{k: v for k, v in kw.items() if k in ("mode", "cn_step")})
    if isinstance(model, KouParams):
        return build_kou(model, grid, **{k: v for k, v in kw.items() if k in ("compensator", "step_rule")})
    if isinstance(model, GTSPParams):
        keep = ("kappa_dump", "order_negative_alpha", "check_metzler")
        return build_gtsp(model, grid, **{k: v for k, v in kw.items() if k in keep})
    raise TypeError(f"unsupported model {type(model).__name__}")

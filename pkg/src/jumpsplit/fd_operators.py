"""Finite-difference derivative matrices and the matrix functions built on them.

Stencil operators are stored as ``scipy.sparse`` CSR matrices.  The jump
generators need functions of these operators (exponential, real powers,
logarithm).  On a uniform grid every one-sided operator ``nu*I -/+ A`` is a
banded triangular Toeplitz matrix, and so is any function of it.  For that
case we compute the power series of the function of the stencil symbol
directly.  That is the terminating binomial/log series in the nilpotent part,
evaluated by a coefficient recurrence rather than by summing matrix powers.
Summing the powers is catastrophically unstable once N reaches a few hundred.

Boundary rows keep the truncated stencil: entries that would fall outside the
grid are dropped.  This keeps the Toeplitz structure intact, and it makes
boundary rows of the generators dissipative.  The affected row indices are
recorded on each operator so tests can exclude them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import toeplitz

from .grid import Grid

Direction = Literal["forward", "backward"]


class MatrixFunctionError(ArithmeticError):
    """A matrix function could not be evaluated to finite precision."""


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """A stencil matrix on a grid.

    ``boundary_rows`` lists rows whose stencil was truncated at the grid edge.
    """

    matrix: sp.csr_matrix
    kind: str
    order: int
    grid: Grid
    boundary_rows: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def interior_rows(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[list(self.boundary_rows)] = False
        return np.flatnonzero(mask)


@dataclass(frozen=True, eq=False)
class MatrixFunctionResult:
    matrix: np.ndarray
    condition_estimate: float
    method_tag: str

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.matrix)):
            raise MatrixFunctionError(f"{self.method_tag}: non-finite entries in result")


# ---------------------------------------------------------------------------
# Stencils
# ---------------------------------------------------------------------------


def _from_diagonals(n: int, diags: dict[int, np.ndarray]) -> sp.csr_matrix:
    offsets = list(diags)
    return sp.diags([diags[k] for k in offsets], offsets, shape=(n, n), format="csr")


def first_order(grid: Grid, direction: Direction = "forward") -> DiscreteOperator:
    """Two-point one-sided first derivative (A^F or A^B), first order."""
    h = grid.steps
    n = grid.n
    if direction == "forward":
        inv = np.append(1.0 / h, 1.0 / h[-1])
        mat = _from_diagonals(n, {0: -inv, 1: inv[:-1]})
        return DiscreteOperator(mat, "A^F", 1, grid, (n - 1,))
    if direction == "backward":
        inv = np.insert(1.0 / h, 0, 1.0 / h[0])
        mat = _from_diagonals(n, {0: inv, -1: -inv[1:]})
        return DiscreteOperator(mat, "A^B", 1, grid, (0,))
    raise ValueError(f"unknown direction {direction!r}")


def _one_sided_weights(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, ...]:
    """Derivative weights at x0 from nodes x0, x0+a, x0+a+b (exact for quadratics)."""
    w0 = -(2 * a + b) / (a * (a + b))
    w1 = (a + b) / (a * b)
    w2 = -a / (b * (a + b))
    return w0, w1, w2


def second_order_one_sided(grid: Grid, direction: Direction = "forward") -> DiscreteOperator:
    """Three-point one-sided first derivative (A^F_2 or A^B_2), second order.

    On a uniform grid the forward rows are ``(-3, 4, -1) / (2h)``.  The last
    two rows (forward) or first two rows (backward) are truncated.
    """
    h = grid.steps
    n = grid.n
    if n < 3:
        raise ValueError("need at least 3 nodes")
    if direction == "forward":
        a = np.append(h, h[-1])  # step to the right of node i
        b = np.append(h[1:], [h[-1], h[-1]])  # the following step
        w0, w1, w2 = _one_sided_weights(a, b)
        mat = _from_diagonals(n, {0: w0, 1: w1[:-1], 2: w2[:-2]})
        return DiscreteOperator(mat, "A^F_2", 2, grid, (n - 2, n - 1))
    if direction == "backward":
        a = np.insert(h, 0, h[0])  # step to the left of node i
        b = np.insert(h[:-1], 0, [h[0], h[0]])
        w0, w1, w2 = _one_sided_weights(a, b)
        mat = _from_diagonals(n, {0: -w0, -1: -w1[1:], -2: -w2[2:]})
        return DiscreteOperator(mat, "A^B_2", 2, grid, (0, 1))
    raise ValueError(f"unknown direction {direction!r}")


def central_operators(grid: Grid) -> tuple[DiscreteOperator, DiscreteOperator]:
    """Central first and second derivatives (A^C, A^C_2).

    On a uniform grid these are ``(A^F + A^B)/2`` and ``A^F @ A^B``, so the
    edge rows drop the neighbour that lies outside the grid, as the one-sided
    operators do.  The one exception is the last row of the product, which
    would lose half of its diagonal; it gets the truncated centred row
    ``(1, -2) / h**2`` instead.  On a nonuniform grid the product is not a
    consistent second derivative, so the interior rows use the standard
    three-point formulas.
    """
    af = first_order(grid, "forward").matrix
    ab = first_order(grid, "backward").matrix
    n = grid.n
    bounds = (0, n - 1)
    ac = ((af + ab) * 0.5).tolil()
    ac2 = (af @ ab).tolil()
    if grid.uniform_step() is None:
        hl = grid.steps[:-1]
        hr = grid.steps[1:]
        s = hl + hr
        for i in range(1, n - 1):
            l, r, t = hl[i - 1], hr[i - 1], s[i - 1]
            ac[i, i - 1 : i + 2] = [-r / (l * t), (r - l) / (l * r), l / (r * t)]
            ac2[i, i - 1 : i + 2] = [2 / (l * t), -2 / (l * r), 2 / (r * t)]
    h_last = grid.steps[-1]
    ac2[n - 1, n - 2 :] = [1.0 / h_last**2, -2.0 / h_last**2]
    return (
        DiscreteOperator(ac.tocsr(), "A^C", 2, grid, bounds),
        DiscreteOperator(ac2.tocsr(), "A^C_2", 2, grid, bounds),
    )


# ---------------------------------------------------------------------------
# Triangular Toeplitz series
# ---------------------------------------------------------------------------


def series_power(f: np.ndarray, a: float, n: int) -> np.ndarray:
    """First ``n`` Taylor coefficients of ``f(z)**a`` for a polynomial ``f``.

    Uses the classical recurrence obtained from ``f * g' = a * f' * g``, which
    only involves the (few) nonzero coefficients of ``f``.  Requires f[0] > 0.
    """
    f = np.asarray(f, dtype=float)
    if f[0] <= 0:
        raise MatrixFunctionError("constant term must be positive")
    m = f.size - 1
    g = np.zeros(n)
    g[0] = f[0] ** a
    if m == 0:
        return g
    for k in range(1, n):
        j = np.arange(1, min(k, m) + 1)
        g[k] = np.dot(((a + 1.0) * j - k) * f[j], g[k - j]) / (k * f[0])
    return g


def series_log(f: np.ndarray, n: int) -> np.ndarray:
    """First ``n`` Taylor coefficients of ``log f(z)`` for a polynomial ``f``."""
    f = np.asarray(f, dtype=float)
    if f[0] <= 0:
        raise MatrixFunctionError("constant term must be positive")
    m = f.size - 1
    g = np.zeros(n)
    g[0] = math.log(f[0])
    for k in range(1, n):
        s = k * f[k] if k <= m else 0.0
        j = np.arange(max(1, k - m), k)
        if j.size:
            s -= np.dot(j * g[j], f[k - j])
        g[k] = s / (k * f[0])
    return g


def series_product(f: np.ndarray, g: np.ndarray, n: int) -> np.ndarray:
    """Truncated Cauchy product of two coefficient sequences."""
    return np.convolve(f, g)[:n]


def series_exp(f: np.ndarray, n: int) -> np.ndarray:
    """First ``n`` Taylor coefficients of ``exp f(z)``.

    The series is scaled by ``2**-s`` so that its coefficient 1-norm is at
    most one, exponentiated with the recurrence ``k g_k = sum_j j f_j g_(k-j)``
    and then squared ``s`` times.  When ``f`` has nonnegative coefficients
    beyond the constant term (a Metzler generator), no step cancels.
    """
    f = np.zeros(n) if len(f) == 0 else np.asarray(f, dtype=float)[:n]
    f = np.pad(f, (0, n - f.size))
    norm = float(np.abs(f).sum())
    s = max(0, int(math.ceil(math.log2(norm)))) if norm > 1 else 0
    a = f / 2.0**s
    g = np.zeros(n)
    g[0] = math.exp(a[0])
    rest = a.copy()
    rest[0] = 0.0
    # exp(a) = exp(a0) * exp(rest); rest has zero constant term.
    e = np.zeros(n)
    e[0] = 1.0
    ja = np.arange(n) * rest
    for k in range(1, n):
        e[k] = np.dot(ja[1 : k + 1], e[k - 1 :: -1][:k]) / k
    g = g[0] * e
    for _ in range(s):
        g = np.convolve(g, g)[:n]
    return g


def triangular_toeplitz(coeffs: np.ndarray, lower: bool = False) -> np.ndarray:
    """Dense triangular Toeplitz matrix whose k-th off-diagonal is ``coeffs[k]``."""
    c = np.asarray(coeffs, dtype=float)
    z = np.zeros_like(c)
    z[0] = c[0]
    return toeplitz(c, z) if lower else toeplitz(z, c)


def _triangular_kind(m: np.ndarray) -> str | None:
    if not np.any(np.tril(m, -1)):
        return "upper"
    if not np.any(np.triu(m, 1)):
        return "lower"
    return None


def _toeplitz_coeffs(m: np.ndarray, kind: str, rtol: float = 1e-12) -> np.ndarray | None:
    c = m[0, :] if kind == "upper" else m[:, 0]
    rebuilt = triangular_toeplitz(c, lower=(kind == "lower"))
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(rebuilt - m).max() <= rtol * scale:
        return c.copy()
    return None


def _check_square(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("square matrix required")
    if not np.all(np.isfinite(m)):
        raise MatrixFunctionError("matrix has non-finite entries")
    return m


def fractional_power_triangular(
    m: np.ndarray, alpha: float, *, allow_fallback: bool = True
) -> MatrixFunctionResult:
    """Real power of a triangular matrix with positive diagonal.

    Triangular Toeplitz input goes through the exact terminating series
    (tag ``nilpotent-series``).  Any other triangular input is handled as
    ``exp(alpha * log M)`` (tag ``exp-log``) unless ``allow_fallback`` is off.
    """
    m = _check_square(m)
    kind = _triangular_kind(m)
    if kind is None:
        raise ValueError("triangular matrix required")
    diag = np.diag(m)
    if np.any(diag <= 0):
        raise MatrixFunctionError("diagonal must be positive")
    coeffs = _toeplitz_coeffs(m, kind)
    if coeffs is not None:
        out = triangular_toeplitz(series_power(_trim(coeffs), alpha, m.shape[0]), kind == "lower")
        return MatrixFunctionResult(out, _cond_proxy(m), "nilpotent-series")
    if not allow_fallback:
        raise MatrixFunctionError("matrix is not Toeplitz and fallback is disabled")
    log_m = matrix_log_triangular(m).matrix
    out = matrix_exponential(log_m, alpha).matrix
    return MatrixFunctionResult(_mask_triangle(out, kind), _cond_proxy(m), "exp-log")


def matrix_log_triangular(m: np.ndarray) -> MatrixFunctionResult:
    """Principal logarithm of a triangular matrix with positive diagonal."""
    m = _check_square(m)
    kind = _triangular_kind(m)
    if kind is None:
        raise ValueError("triangular matrix required")
    if np.any(np.diag(m) <= 0):
        raise MatrixFunctionError("diagonal must be positive")
    coeffs = _toeplitz_coeffs(m, kind)
    if coeffs is not None:
        out = triangular_toeplitz(series_log(_trim(coeffs), m.shape[0]), kind == "lower")
        return MatrixFunctionResult(out, _cond_proxy(m), "nilpotent-series")
    out = sla.logm(m)
    if np.iscomplexobj(out):
        out = out.real
    return MatrixFunctionResult(_mask_triangle(out, kind), _cond_proxy(m), "exp-log")


def _trim(c: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(c)
    return c[: nz[-1] + 1] if nz.size else c[:1]


def _mask_triangle(m: np.ndarray, kind: str) -> np.ndarray:
    return np.triu(m) if kind == "upper" else np.tril(m)


def _cond_proxy(m: np.ndarray) -> float:
    d = np.abs(np.diag(m))
    return float(np.abs(m).sum(axis=1).max() / d.min())


# ---------------------------------------------------------------------------
# Matrix exponential (scaling and squaring with diagonal Pade approximants)
# ---------------------------------------------------------------------------

_PADE = {
    3: (120.0, 60.0, 12.0, 1.0),
    5: (30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0),
    7: (17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0),
    9: (
        17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
        2162160.0, 110880.0, 3960.0, 90.0, 1.0,
    ),
    13: (
        64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
        1187353796428800.0, 129060195264000.0, 10559470521600.0, 670442572800.0,
        33522128640.0, 1323241920.0, 40840800.0, 960960.0, 16380.0, 182.0, 1.0,
    ),
}
# Largest 1-norms for which each degree meets unit-roundoff backward error.
_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


def _pade_uv(a: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    b = _PADE[m]
    ident = np.eye(a.shape[0])
    a2 = a @ a
    if m < 13:
        powers = [ident, a2]
        for _ in range(2, m // 2 + 1):
            powers.append(powers[-1] @ a2)
        u = sum(b[2 * k + 1] * powers[k] for k in range(m // 2 + 1))
        v = sum(b[2 * k] * powers[k] for k in range(m // 2 + 1))
        return a @ u, v
    a4 = a2 @ a2
    a6 = a4 @ a2
    u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * ident)
    v = a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * ident
    return u, v


def matrix_exponential(m: np.ndarray, t: float = 1.0) -> MatrixFunctionResult:
    """``exp(t*M)`` by scaling and squaring.

    Triangular Toeplitz input (a tempered-stable tail on a uniform grid) is
    exponentiated as a power series in O(n^2) (tag ``toeplitz-series``).

    The Pade degree and scaling follow the usual 1-norm thresholds, which
    target a backward error at the level of unit roundoff.
    ``condition_estimate`` is the 1-norm of ``t*M``, a cheap proxy for how hard
    the evaluation was.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    a = _check_square(m) * t
    n = a.shape[0]
    norm = float(np.abs(a).sum(axis=0).max()) if n else 0.0
    if norm == 0.0:
        return MatrixFunctionResult(np.eye(n), 0.0, "scaling-squaring")
    kind = _triangular_kind(a) if n > 1 else None
    coeffs = _toeplitz_coeffs(a, kind) if kind is not None else None
    if coeffs is not None:
        out = triangular_toeplitz(series_exp(coeffs, n), kind == "lower")
        if not np.all(np.isfinite(out)):
            raise MatrixFunctionError(f"overflow in Toeplitz series (||tM||_1 = {norm:.3g})")
        return MatrixFunctionResult(out, norm, "toeplitz-series")
    for deg in (3, 5, 7, 9):
        if norm <= _THETA[deg]:
            u, v = _pade_uv(a, deg)
            return MatrixFunctionResult(_pade_solve(u, v), norm, "scaling-squaring")
    s = max(0, int(math.ceil(math.log2(norm / _THETA[13]))))
    u, v = _pade_uv(a / 2.0**s, 13)
    r = _pade_solve(u, v)
    with np.errstate(over="raise", invalid="raise"):
        try:
            for _ in range(s):
                r = r @ r
        except FloatingPointError as exc:
            raise MatrixFunctionError(f"overflow while squaring (||tM||_1 = {norm:.3g})") from exc
    return MatrixFunctionResult(r, norm, "scaling-squaring")


def _pade_solve(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    r = np.linalg.solve(v - u, v + u)
    if not np.all(np.isfinite(r)):
        raise MatrixFunctionError("Pade denominator is singular to working precision")
    return r


# ---------------------------------------------------------------------------
# Structural predicates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StructuralReport:
    is_metzler: bool
    is_negated_m_matrix: bool
    max_real_eig: float
    spectral_norm_exp: float
    min_offdiag: float
    eventual_nonneg_power: int | None = None
    notes: list[str] = field(default_factory=list)


def _as_dense(m) -> np.ndarray:
    if sp.issparse(m):
        return m.toarray()
    if isinstance(m, DiscreteOperator):
        return m.dense()
    return np.asarray(m, dtype=float)


def min_offdiagonal(m: np.ndarray) -> float:
    m = _as_dense(m)
    off = m - np.diag(np.diag(m))
    np.fill_diagonal(off, np.inf)
    return float(off.min()) if m.shape[0] > 1 else math.inf


def is_metzler(m: np.ndarray, tol: float = 1e-10) -> bool:
    return min_offdiagonal(m) >= -tol


def structural_checks(
    m,
    *,
    dt: float = 1.0,
    entry_tol: float = 1e-10,
    eig_tol: float = 1e-8,
    em_shift: float | None = None,
) -> StructuralReport:
    """Metzler / negated-M-matrix diagnostics for a generator ``M``.

    ``spectral_norm_exp`` is ``||exp(dt*M)||_2``.  If ``em_shift`` is given,
    the eventual-nonnegativity probe looks for the smallest ``k`` (up to
    N + 3) with ``(M + em_shift*I)**k >= 0`` entrywise, up to ``entry_tol``
    relative to the largest entry.
    """
    m = _as_dense(m)
    min_off = min_offdiagonal(m)
    metz = min_off >= -entry_tol
    eig = np.linalg.eigvals(m)
    max_re = float(eig.real.max())
    neg_m = metz and bool(np.all(np.diag(m) <= entry_tol)) and max_re <= eig_tol
    norm_exp = float(np.linalg.norm(matrix_exponential(m, dt).matrix, 2))
    k = eventual_nonnegativity_index(m, em_shift, entry_tol) if em_shift is not None else None
    return StructuralReport(metz, neg_m, max_re, norm_exp, min_off, k)


def eventual_nonnegativity_index(m: np.ndarray, shift: float, tol: float = 1e-10) -> int | None:
    """Smallest k <= N+3 such that (M + shift*I)**k has no negative entries.

    Each power is rescaled by its max-norm so the probe never overflows; the
    sign pattern is unaffected by positive scaling.
    """
    a = _as_dense(m) + shift * np.eye(m.shape[0])
    p = np.eye(a.shape[0])
    for k in range(1, a.shape[0] + 4):
        p = p @ a
        scale = np.abs(p).max()
        if scale == 0:
            return k
        p /= scale
        if p.min() >= -tol:
            return k
    return None


# ---------------------------------------------------------------------------
# Debug dump
# ---------------------------------------------------------------------------


def dump_matrix(m, path: str | Path) -> None:
    """Write ``m`` row-major as text with a ``N rows N cols`` header."""
    m = _as_dense(m)
    with open(path, "w") as fh:
        fh.write(f"{m.shape[0]} rows {m.shape[1]} cols\n")
        np.savetxt(fh, m, fmt="%.17g")


def load_matrix(path: str | Path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().split()
        rows, cols = int(header[0]), int(header[2])
        data = np.loadtxt(fh, ndmin=2) if rows else np.empty((0, cols))
    return data.reshape(rows, cols)

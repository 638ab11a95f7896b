"""Closed-form and Fourier oracles used to check the PIDE engine."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from .levy_models import (
    GTSPParams,
    KouParams,
    LevyJumpModel,
    MertonParams,
    characteristic_exponent,
    merton_kappa,
)

Payoff = Literal["call", "put", "digital"]


class PricingError(ArithmeticError):
    pass


def black_scholes(
    s0, k: float, r: float, q: float, sigma: float, t: float, payoff: Payoff = "call"
):
    """Black-Scholes price; ``s0`` may be an array.

    The digital pays one unit of cash when ``S_T > K``.
    """
    if not (sigma > 0 and t > 0):
        raise ValueError("sigma > 0 and t > 0 required")
    s0 = np.asarray(s0, dtype=float)
    sd = sigma * math.sqrt(t)
    with np.errstate(divide="ignore"):
        d1 = (np.log(s0 / k) + (r - q + 0.5 * sigma**2) * t) / sd
    d2 = d1 - sd
    df = math.exp(-r * t)
    fq = math.exp(-q * t)
    if payoff == "call":
        out = s0 * fq * ndtr(d1) - k * df * ndtr(d2)
    elif payoff == "put":
        out = k * df * ndtr(-d2) - s0 * fq * ndtr(-d1)
    elif payoff == "digital":
        out = df * ndtr(d2)
    else:
        raise ValueError(f"unknown payoff {payoff!r}")
    return out if out.ndim else float(out)


def merton_series(
    s0,
    k: float,
    r: float,
    sigma: float,
    t: float,
    lam: float,
    mu_j: float,
    sigma_j: float,
    n_terms: int | None = None,
    q: float = 0.0,
    payoff: Payoff = "call",
):
    """Merton jump-diffusion price as a Poisson mixture of Black-Scholes prices.

    With ``n_terms=None`` the sum runs until the omitted Poisson mass is below
    1e-14.
    """
    if lam == 0:
        return black_scholes(s0, k, r, q, sigma, t, payoff)
    kappa = merton_kappa(MertonParams(lam, mu_j, sigma_j))
    lam_p = lam * (1.0 + kappa)
    mean = lam_p * t
    auto = n_terms is None
    if auto:
        n_terms = int(mean + 12.0 * math.sqrt(mean) + 30)
    total = 0.0
    log_w = -mean
    mass = 0.0
    for n in range(n_terms):
        if n > 0:
            log_w += math.log(mean) - math.log(n)
        w = math.exp(log_w)
        sig_n = math.sqrt(sigma**2 + n * sigma_j**2 / t)
        r_n = r - lam * kappa + n * math.log1p(kappa) / t
        # With weights Poisson(lam (1 + kappa) t), the discount at r_n is exact.
        total = total + w * black_scholes(s0, k, r_n, q, sig_n, t, payoff)
        mass += w
        if auto and 1.0 - mass < 1e-14:
            break
    return total


@dataclass(frozen=True)
class FFTConfig:
    """Carr-Madan grid.  The log-strike step follows from ``eta`` and ``n_nodes``."""

    alpha_damp: float = 1.25
    n_nodes: int = 8192
    eta: float = 0.25

    def __post_init__(self) -> None:
        if self.n_nodes < 4 or self.n_nodes & (self.n_nodes - 1):
            raise ValueError("n_nodes must be a power of two")
        if not self.alpha_damp > 0:
            raise ValueError("alpha_damp > 0 required")
        if not self.eta > 0:
            raise ValueError("eta > 0 required")

    @property
    def lambda1(self) -> float:
        return 2.0 * math.pi / (self.n_nodes * self.eta)


def log_cf(
    model: LevyJumpModel, r: float, q: float, sigma: float, t: float
) -> Callable[[np.ndarray], np.ndarray]:
    """Log characteristic function of ``ln(S_T / S_0)`` under the pricing measure."""

    def f(u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=complex)
        diff = 1j * u * (r - q - 0.5 * sigma**2) - 0.5 * sigma**2 * u**2
        return t * (diff + characteristic_exponent(model, u))

    return f


def max_damping(model: LevyJumpModel) -> float:
    """Supremum of damping factors ``a`` for which ``E[S_T^(a+1)]`` is finite."""
    if isinstance(model, KouParams):
        return model.theta1 - 1.0
    if isinstance(model, GTSPParams) and model.lam_r > 0:
        return model.nu_r - 1.0
    return math.inf


def admissible_config(model: LevyJumpModel, config: FFTConfig = FFTConfig()) -> FFTConfig:
    """``config`` with the damping lowered to half the admissible bound if needed."""
    bound = max_damping(model)
    if config.alpha_damp < bound:
        return config
    return FFTConfig(0.5 * bound, config.n_nodes, config.eta)


def _lagrange4(xs: np.ndarray, ys: np.ndarray, x: float) -> float:
    out = 0.0
    for i in range(4):
        w = 1.0
        for j in range(4):
            if j != i:
                w *= (x - xs[j]) / (xs[i] - xs[j])
        out += w * ys[i]
    return out


def carr_madan(
    model: LevyJumpModel,
    s0: float,
    k: float,
    r: float,
    t: float,
    sigma: float,
    q: float = 0.0,
    config: FFTConfig = FFTConfig(),
    payoff: Payoff = "call",
    log_cf_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """Damped-call FFT price with Simpson weights.

    The price at ``k`` comes from 4-point Lagrange interpolation on the
    log-strike grid.  Puts go through put-call parity.  Digitals are
    rejected because the damped transform does not apply to them.
    """
    if payoff == "digital":
        raise PricingError("Carr-Madan damping does not apply to digital payoffs")
    if log_cf_fn is None and not config.alpha_damp < max_damping(model):
        raise PricingError(
            f"damping {config.alpha_damp} needs a moment of order {config.alpha_damp + 1} "
            f"that the jump law lacks (bound {max_damping(model) + 1:.4g}); see admissible_config"
        )
    lcf = log_cf_fn or log_cf(model, r, q, sigma, t)
    a = config.alpha_damp
    n = config.n_nodes
    eta = config.eta
    lam1 = config.lambda1
    b = 0.5 * n * lam1
    v = eta * np.arange(n)
    ku = -b + lam1 * np.arange(n)
    z = v - (a + 1) * 1j
    with np.errstate(over="raise", invalid="raise"):
        try:
            cf = np.exp(lcf(z) + 1j * z * math.log(s0))
        except FloatingPointError as exc:
            raise PricingError("characteristic function overflow") from exc
    psi = math.exp(-r * t) * cf / (a * a + a - v * v + 1j * (2 * a + 1) * v)
    w = (eta / 3.0) * (3.0 + (-1.0) ** (np.arange(n) + 1))
    w[0] = eta / 3.0
    y = np.fft.fft(np.exp(1j * b * v) * psi * w).real * np.exp(-a * ku) / math.pi
    lk = math.log(k)
    j = int(np.clip(np.searchsorted(ku, lk) - 2, 0, n - 4))
    call = _lagrange4(ku[j : j + 4], y[j : j + 4], lk)
    if payoff == "call":
        return float(call)
    return float(call - s0 * math.exp(-q * t) + k * math.exp(-r * t))


def lewis_price(
    model: LevyJumpModel,
    s0: float,
    k: float,
    r: float,
    t: float,
    sigma: float,
    q: float = 0.0,
    log_cf_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """Call price from adaptive quadrature of the Lewis inversion integral.

    This independent oracle does not need a martingale characteristic
    function.  The forward term uses ``psi(-i)`` explicitly.
    """
    lcf = log_cf_fn or log_cf(model, r, q, sigma, t)
    x = math.log(s0 / k)

    def integrand(u: float) -> float:
        return float((np.exp(1j * u * x + lcf(np.array(u - 0.5j)))).real / (u * u + 0.25))

    val, _ = quad(integrand, 0.0, np.inf, limit=1000, epsabs=1e-13, epsrel=1e-12)
    fwd = float(np.exp(lcf(np.array(-1j))).real)
    return math.exp(-r * t) * (s0 * fwd - math.sqrt(s0 * k) / math.pi * val)


def split_limit_log_cf(
    model: LevyJumpModel,
    r: float,
    q: float,
    sigma: float,
    t: float,
    drift_shift: float,
    jump_step: Literal["exp", "pade"] = "exp",
) -> Callable[[np.ndarray], np.ndarray]:
    """Log characteristic function of one exact diffusion step followed by one jump step.

    The jump step keeps ``J* = J - drift_shift * grad`` and the diffusion
    step carries the moved drift.  With ``jump_step="exp"`` the two stages
    commute, and the result is the exact model.  With ``"pade"`` the jump
    factor is the (1,1) rational approximant ``(1 + z/2) / (1 - z/2)`` of
    ``exp(z)``.  That is the limit of a one-step Pade scheme as the spatial step goes to zero.
    """

    def f(u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=complex)
        diff = 1j * u * (r - q - 0.5 * sigma**2 + drift_shift) - 0.5 * sigma**2 * u**2
        z = t * (characteristic_exponent(model, u) - 1j * u * drift_shift)
        if jump_step == "exp":
            jump = z
        elif jump_step == "pade":
            jump = np.log((1.0 + 0.5 * z) / (1.0 - 0.5 * z))
        else:
            raise ValueError(f"unknown jump_step {jump_step!r}")
        return t * diff + jump

    return f

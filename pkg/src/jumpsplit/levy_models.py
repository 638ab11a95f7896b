"""Jump model parameters, compensator drifts and characteristic exponents.

Sign conventions.  Every generator is written as ``J = J* + d * grad`` where
``J*`` is the part kept in the jump step and ``d`` (``drift_shift``) is the
coefficient of the first derivative that is moved into the diffusion step.  The
characteristic exponent ``phi(u)`` is the symbol of the full ``J``, obtained by
replacing ``grad`` with ``iu``, so ``phi(u) = symbol(J*)(u) + iu * d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from scipy.special import gamma

Side = Literal["right", "left"]

# Distance from 0 or 1 within which alpha is treated as exactly 0 or 1.
ALPHA_SNAP = 1e-8


class ModelError(ValueError):
    """Invalid model parameters."""


@dataclass(frozen=True)
class NoJumps:
    """Pure diffusion."""


@dataclass(frozen=True)
class MertonParams:
    lam: float
    mu_j: float
    sigma_j: float


@dataclass(frozen=True)
class KouParams:
    lam: float
    p: float
    theta1: float
    theta2: float


@dataclass(frozen=True)
class GTSPParams:
    """Two-sided tempered stable (CGMY / KoBoL) jumps.

    A side with zero intensity is switched off, so one-sided models are
    written with ``lam_l = 0`` or ``lam_r = 0``.
    """

    lam_r: float
    lam_l: float
    nu_r: float
    nu_l: float
    alpha_r: float
    alpha_l: float

    def side(self, side: Side) -> tuple[float, float, float]:
        """``(lam, nu, alpha)`` for one tail."""
        if side == "right":
            return self.lam_r, self.nu_r, self.alpha_r
        return self.lam_l, self.nu_l, self.alpha_l


@dataclass(frozen=True)
class DiffusionParams:
    r: float
    q: float
    sigma: float
    drift_shift: float = 0.0

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ModelError("sigma > 0 required")

    @property
    def drift(self) -> float:
        """Coefficient of the first derivative in the diffusion operator."""
        return self.r - self.q - 0.5 * self.sigma**2 + self.drift_shift


LevyJumpModel = Union[NoJumps, MertonParams, KouParams, GTSPParams]


# ---------------------------------------------------------------------------
# Scalars
# ---------------------------------------------------------------------------


def merton_kappa(params: MertonParams) -> float:
    """Mean relative jump size ``E[e^Y] - 1``."""
    return math.expm1(params.mu_j + 0.5 * params.sigma_j**2)


def kou_mu0(params: KouParams) -> float:
    """Mean relative jump size ``E[e^Y] - 1`` of the double-exponential law."""
    if not params.theta1 > 1:
        raise ModelError("theta1 > 1 required")
    return params.p / (params.theta1 - 1.0) - (1.0 - params.p) / (1.0 + params.theta2)


def alpha_regime(alpha: float) -> str:
    """Name of the construction used for a tail index."""
    if alpha >= 2:
        raise ModelError("alpha < 2 required")
    if abs(alpha) < ALPHA_SNAP:
        return "alpha=0"
    if abs(alpha - 1.0) < ALPHA_SNAP:
        return "alpha=1"
    if alpha < 0:
        return "alpha<0"
    if alpha < 1:
        return "0<alpha<1"
    return "1<alpha<2"


def gtsp_alpha1_constant(nu: float, side: Side) -> float:
    """Magnitude ``c`` of the compensator for alpha = 1.

    Right: ``nu log nu - (nu-1) log(nu-1)``, which is the same number as
    ``log(nu-1) - 2 nu arccoth(1-2nu)``.  Left: ``(nu+1) log(nu+1) - nu log nu``.
    """
    if side == "right":
        if not nu > 1:
            raise ModelError("nu_R > 1 required for alpha_R = 1")
        return nu * math.log(nu) - (nu - 1.0) * math.log(nu - 1.0)
    return (nu + 1.0) * math.log(nu + 1.0) - nu * math.log(nu)


def gtsp_drift_coefficient(params: GTSPParams, side: Side) -> float:
    """Coefficient of ``grad`` in one tail of the continuous generator.

    This is the number moved into the diffusion drift when the compensator is
    taken out of the jump step.  It includes the ``lam * Gamma(-alpha)``
    prefactor.
    """
    lam, nu, alpha = params.side(side)
    if lam == 0:
        return 0.0
    sgn = -1.0 if side == "right" else 1.0  # nu - 1 on the right, nu + 1 on the left
    if side == "right" and not nu > 1:
        raise ModelError("nu_R > 1 required")
    regime = alpha_regime(alpha)
    if regime == "alpha=0":
        return lam * math.log((nu + sgn) / nu)
    if regime == "alpha=1":
        c = gtsp_alpha1_constant(nu, side)
        return lam * c if side == "right" else -lam * c
    return lam * gamma(-alpha) * (nu**alpha - (nu + sgn) ** alpha)


# ---------------------------------------------------------------------------
# Characteristic exponents
# ---------------------------------------------------------------------------


def _gtsp_side_exponent(lam: float, nu: float, alpha: float, side: Side, u: np.ndarray) -> np.ndarray:
    if lam == 0:
        return np.zeros_like(u, dtype=complex)
    shape = np.shape(u)
    u = np.ravel(u)
    z = 1j * u if side == "right" else -1j * u  # nu - grad on the right, nu + grad on the left
    regime = alpha_regime(alpha)
    params = GTSPParams(lam, lam, nu, nu, alpha, alpha)
    d = gtsp_drift_coefficient(params, side)
    w = nu - z
    # Both terms go through the same complex routines so that phi(0) is exactly 0.
    w0 = np.full(w.shape, nu, dtype=complex)
    if regime == "alpha=0":
        core = lam * (np.log(w0) - np.log(w))
    elif regime == "alpha=1":
        core = lam * (w * np.log(w) - w0 * np.log(w0))
    else:
        core = lam * gamma(-alpha) * (w**alpha - w0**alpha)
    return (core + 1j * u * d).reshape(shape)


def characteristic_exponent(model: LevyJumpModel, u) -> np.ndarray:
    """``phi(u)`` with ``E[exp(iu Y_t)] = exp(t phi(u))`` for the compensated jump part.

    The compensator ``-iu * E[e^Y - 1]`` is included, so ``phi(-i) = 0``.
    """
    u = np.asarray(u, dtype=complex)
    if isinstance(model, NoJumps):
        return np.zeros_like(u)
    if isinstance(model, MertonParams):
        k = merton_kappa(model)
        return model.lam * (np.expm1(1j * u * model.mu_j - 0.5 * model.sigma_j**2 * u**2) - 1j * u * k)
    if isinstance(model, KouParams):
        p, t1, t2 = model.p, model.theta1, model.theta2
        # p t1/(t1 - iu) + (1-p) t2/(t2 + iu) - 1, with the iu factor pulled out.
        iu = 1j * u
        return model.lam * iu * (p / (t1 - iu) - (1 - p) / (t2 + iu) - kou_mu0(model))
    if isinstance(model, GTSPParams):
        return _gtsp_side_exponent(model.lam_r, model.nu_r, model.alpha_r, "right", u) + _gtsp_side_exponent(
            model.lam_l, model.nu_l, model.alpha_l, "left", u
        )
    raise TypeError(f"unsupported model {type(model).__name__}")


def levy_density(model: LevyJumpModel, y: np.ndarray) -> np.ndarray:
    """Levy density ``nu(y)`` (jump intensity per unit log-jump)."""
    y = np.asarray(y, dtype=float)
    if isinstance(model, NoJumps):
        return np.zeros_like(y)
    if isinstance(model, MertonParams):
        s = model.sigma_j
        return model.lam * np.exp(-0.5 * ((y - model.mu_j) / s) ** 2) / (s * math.sqrt(2 * math.pi))
    if isinstance(model, KouParams):
        return model.lam * np.where(
            y > 0,
            model.p * model.theta1 * np.exp(-model.theta1 * np.abs(y)),
            (1 - model.p) * model.theta2 * np.exp(-model.theta2 * np.abs(y)),
        )
    if isinstance(model, GTSPParams):
        ay = np.abs(y)
        with np.errstate(divide="ignore", invalid="ignore"):
            right = model.lam_r * np.exp(-model.nu_r * ay) / ay ** (1 + model.alpha_r)
            left = model.lam_l * np.exp(-model.nu_l * ay) / ay ** (1 + model.alpha_l)
        return np.where(y > 0, right, left)
    raise TypeError(f"unsupported model {type(model).__name__}")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate(model: LevyJumpModel) -> list[str]:
    """All violated constraints, as readable inequalities.  Empty means valid."""
    errs: list[str] = []
    if isinstance(model, NoJumps):
        return errs
    if isinstance(model, MertonParams):
        if not model.lam >= 0:
            errs.append("lambda >= 0 required")
        if not model.sigma_j > 0:
            errs.append("sigma_J > 0 required")
        return errs
    if isinstance(model, KouParams):
        if not model.lam > 0:
            errs.append("lambda > 0 required")
        if not 0 < model.p < 1:
            errs.append("0 < p < 1 required")
        if not model.theta1 > 1:
            errs.append("θ₁ > 1 required")
        if not model.theta2 > 0:
            errs.append("θ₂ > 0 required")
        return errs
    if isinstance(model, GTSPParams):
        if model.lam_r < 0 or model.lam_l < 0:
            errs.append("lambda_R, lambda_L >= 0 required")
        if model.lam_r == 0 and model.lam_l == 0:
            errs.append("at least one of lambda_R, lambda_L must be positive")
        if model.lam_r > 0:
            if not model.nu_r > 1:
                errs.append("ν_R > 1 required")
            if not model.alpha_r < 2:
                errs.append("alpha_R < 2 required")
        if model.lam_l > 0:
            if not model.nu_l > 0:
                errs.append("ν_L > 0 required")
            if not model.alpha_l < 2:
                errs.append("alpha_L < 2 required")
        return errs
    return [f"unsupported model {type(model).__name__}"]


def ensure_valid(model: LevyJumpModel) -> None:
    errs = validate(model)
    if errs:
        raise ModelError("; ".join(errs))

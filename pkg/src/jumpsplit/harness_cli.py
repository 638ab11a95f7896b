"""Command-line harness: flat configs, pinned studies, convergence reports.

A config is a text file of ``key = value`` lines with dotted keys such as
``model.lam`` or ``grid.s_max``.  Lines starting with ``#`` are comments.
Named studies carry a pinned parameter set.  Any attempt to change a pinned
value is rejected unless ``--allow-override`` is given.

Verbs::

    python -m jumpsplit price     --config run.cfg
    python -m jumpsplit converge  --study table-1 --out results/
    python -m jumpsplit crosscheck --study cross-check
    python -m jumpsplit selftest

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.optimize import brentq

from .fd_operators import MatrixFunctionError
from .grid import GridError, GridSpec, spot_to_x
from .jump_generator import StabilityError
from .levy_models import (
    DiffusionParams,
    GTSPParams,
    KouParams,
    LevyJumpModel,
    MertonParams,
    ModelError,
    NoJumps,
)
from .reference_pricers import (
    FFTConfig,
    PricingError,
    admissible_config,
    black_scholes,
    carr_madan,
    lewis_price,
    merton_series,
    split_limit_log_cf,
)
from .time_stepping import (
    PicardError,
    PositivityError,
    PricingProblem,
    PricingResult,
    build_problem_generator,
    problem_grid,
    strang_price,
    two_stage_price,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


NUMERICAL_ERRORS = (PicardError, PositivityError, MatrixFunctionError, PricingError, FloatingPointError)
VALIDATION_ERRORS = (ConfigError, ModelError, GridError, StabilityError, ValueError)


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines.  Values stay strings; later keys win."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_config(path: str | Path) -> dict[str, str]:
    try:
        return parse_config_text(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _f(cfg: dict[str, str], key: str, default: float | None = None) -> float:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return float(cfg[key])
    except ValueError as exc:
        raise ConfigError(f"{key} must be a number, got {cfg[key]!r}") from exc


def _i(cfg: dict[str, str], key: str, default: int | None = None) -> int:
    v = _f(cfg, key, None if default is None else float(default))
    if v != int(v):
        raise ConfigError(f"{key} must be an integer, got {cfg[key]!r}")
    return int(v)


def _b(cfg: dict[str, str], key: str, default: bool = False) -> bool:
    if key not in cfg:
        return default
    v = cfg[key].lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key} must be a boolean, got {cfg[key]!r}")


def _s(cfg: dict[str, str], key: str, default: str | None = None, choices: Sequence[str] | None = None) -> str:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return default
    v = cfg[key]
    if choices is not None and v not in choices:
        raise ConfigError(f"{key} must be one of {', '.join(choices)}; got {v!r}")
    return v


def parse_ladder(text: str) -> list[int]:
    try:
        ladder = [int(tok) for tok in text.replace(" ", "").split(",") if tok]
    except ValueError as exc:
        raise ConfigError(f"ladder must be comma-separated integers, got {text!r}") from exc
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("ladder must be strictly increasing")
    return ladder


# ---------------------------------------------------------------------------
# Named studies
# ---------------------------------------------------------------------------

_KOU = {
    "model.type": "kou",
    "model.p": "0.3445",
    "model.theta1": "3.0465",
    "model.theta2": "3.0775",
    "model.lam": "fft-anchor",
    "model.lam_anchor_maturity": "0.25",
    "model.lam_anchor_price": "3.97383",
    "market.spot": "100",
    "market.strike": "100",
    "market.r": "0.05",
    "market.q": "0",
    "market.sigma": "0.15",
    "option.payoff": "call",
    "grid.s_min": "1e-3",
    "grid.s_max": "3000",
    "grid.s_max_jump": "1e5",
    "grid.s_min_jump": "1e-3",
    "grid.extension": "uniform",
    "scheme.mode": "two-stage",
    "scheme.jump_method": "pade-picard",
    "generator.compensator": "forward",
    "ladder": "101,201,401,801,1601,3201,6401,12801,25601,51201,102401",
    "reference": "self:409601",
}

_CGMY_SMALL = {
    "model.type": "gtsp",
    "model.lam_r": "10",
    "model.lam_l": "0",
    "model.nu_r": "2",
    "model.nu_l": "1",
    "model.alpha_l": "0.5",
    "market.spot": "1",
    "market.strike": "1",
    "market.r": "0",
    "market.q": "0",
    "market.sigma": "0.2",
    "option.maturity": "0.1",
    "option.payoff": "call",
    "grid.s_min": "1e-3",
    "grid.s_max": "30",
    "grid.s_max_jump": "1e5",
    "grid.s_min_jump": "1e-3",
    "grid.extension": "uniform",
    "scheme.mode": "two-stage",
    "report.scale": "100",
}

_CGMY_WIDE = {
    "model.type": "gtsp",
    "model.lam_r": "0.1",
    "model.lam_l": "0",
    "model.nu_r": "2",
    "model.nu_l": "1",
    "model.alpha_l": "0.5",
    "market.spot": "100",
    "market.strike": "100",
    "market.r": "0.05",
    "market.q": "0",
    "market.sigma": "0.15",
    "option.payoff": "call",
    "grid.s_min": "1",
    "grid.s_max": "1e6",
    "scheme.mode": "two-stage",
    "scheme.jump_method": "exp",
    "scheme.bs_rate": "shifted",
    "generator.kappa_dump": "5",
    "reference": "self:2000",
}

STUDIES: dict[str, dict[str, str]] = {
    "table-1": {
        **_KOU,
        "option.maturity": "0.25",
        "target.values": "4.08176114,4.00896884,3.99640628,3.99568288,3.99550355,3.99546116,"
        "3.99545000,3.99544714,3.99544641,3.99544623,3.99544618",
    },
    "table-2": {
        **_KOU,
        "option.maturity": "0.05",
        "target.values": "1.96362542,1.72184850,1.55009251,1.54500503,1.54457335,1.54456134,"
        "1.54455816,1.54455739,1.54455721,1.54455716,1.54455715",
    },
    "tab2": {
        **_CGMY_SMALL,
        "model.alpha_r": "-0.5",
        "scheme.jump_method": "pade-picard,exp",
        "ladder": "100,200,400,800,1600",
        "reference": "self:4000",
        "target.values.pade-picard": "40.1100,40.2002,40.2223,40.2260,40.2258",
        "target.values.exp": "39.1027,39.1937,39.2167,39.2216,39.2222",
    },
    "tab3": {
        **_CGMY_SMALL,
        "model.alpha_r": "0.9",
        "scheme.jump_method": "exp",
        "ladder": "100,200,400,800,1600,3200",
        "reference": "aitken",
        "target.values": "23.9336,22.9222,22.5558,22.3944,22.3170,22.2789",
    },
    "tabAL1": {
        **_CGMY_WIDE,
        "model.alpha_r": "1",
        "option.maturity": "0.05",
        "ladder": "101,201,401,801,1601",
        "target.values": "3.7296,2.6527,2.3939,2.2402,2.1594",
    },
    "tab4": {
        **_CGMY_WIDE,
        "model.alpha_r": "1.98",
        "option.maturity": "0.01",
        "ladder": "51,101,201,401,801,1601",
        "target.values": "8.2197,7.9533,8.1558,8.1836,8.1943,8.1970",
    },
    "cross-check": {
        **_KOU,
        "option.maturity": "0.05",
        "generator.compensator": "exact",
        "grid.n": "25601",
    },
    "single-price": {},
    "convergence": {},
}


def resolve_config(
    study: str | None,
    file_cfg: dict[str, str] | None = None,
    overrides: dict[str, str] | None = None,
    allow_override: bool = False,
) -> dict[str, str]:
    """Merge a study's pinned keys with file and command-line settings.

    Raises :class:`ConfigError` if a pinned key would change and
    ``allow_override`` is off.
    """
    merged: dict[str, str] = {}
    pinned: dict[str, str] = {}
    if study is not None:
        if study not in STUDIES:
            raise ConfigError(f"unknown study {study!r}; known: {', '.join(STUDIES)}")
        pinned = STUDIES[study]
        merged.update(pinned)
        merged["study"] = study
    extra = {**(file_cfg or {}), **(overrides or {})}
    if study is None and "study" in extra:
        return resolve_config(extra.pop("study"), {}, extra, allow_override)
    extra.pop("study", None)
    changed = sorted(k for k, v in extra.items() if k in pinned and v != pinned[k])
    if changed and not allow_override:
        raise ConfigError(
            f"study {study!r} pins {', '.join(changed)}; pass --allow-override to change them"
        )
    merged.update(extra)
    if changed:
        merged["overridden"] = ",".join(changed)
    return merged


# ---------------------------------------------------------------------------
# Config -> problem
# ---------------------------------------------------------------------------


def kou_lambda_from_anchor(
    p: float, theta1: float, theta2: float, spot: float, strike: float, r: float, q: float,
    sigma: float, maturity: float, price: float,
) -> float:
    """Jump intensity at which the Carr-Madan Kou price equals ``price``."""

    def gap(lam: float) -> float:
        return carr_madan(KouParams(lam, p, theta1, theta2), spot, strike, r, maturity, sigma, q) - price

    lo, hi = 1e-8, 1.0
    while gap(hi) < 0:
        hi *= 2.0
        if hi > 1e3:
            raise ConfigError("no jump intensity reproduces the anchor price")
    if gap(lo) > 0:
        raise ConfigError("anchor price is below the zero-intensity price")
    return brentq(gap, lo, hi, xtol=1e-14, rtol=1e-14)


def build_model(cfg: dict[str, str]) -> LevyJumpModel:
    kind = _s(cfg, "model.type", "none", ("none", "merton", "kou", "gtsp"))
    if kind == "none":
        return NoJumps()
    if kind == "merton":
        return MertonParams(_f(cfg, "model.lam"), _f(cfg, "model.mu_j"), _f(cfg, "model.sigma_j"))
    if kind == "kou":
        p, t1, t2 = _f(cfg, "model.p"), _f(cfg, "model.theta1"), _f(cfg, "model.theta2")
        if cfg.get("model.lam") == "fft-anchor":
            lam = kou_lambda_from_anchor(
                p, t1, t2,
                _f(cfg, "market.spot"), _f(cfg, "market.strike"), _f(cfg, "market.r"),
                _f(cfg, "market.q", 0.0), _f(cfg, "market.sigma"),
                _f(cfg, "model.lam_anchor_maturity"), _f(cfg, "model.lam_anchor_price"),
            )
        else:
            lam = _f(cfg, "model.lam")
        return KouParams(lam, p, t1, t2)
    return GTSPParams(
        _f(cfg, "model.lam_r"), _f(cfg, "model.lam_l", 0.0),
        _f(cfg, "model.nu_r", 2.0), _f(cfg, "model.nu_l", 1.0),
        _f(cfg, "model.alpha_r"), _f(cfg, "model.alpha_l", 0.5),
    )


def _bound(cfg: dict[str, str], name: str, spot: float) -> float | None:
    """A grid bound from ``grid.x_<name>`` or the spot-space ``grid.s_<name>``."""
    xk, sk = f"grid.x_{name}", f"grid.s_{name}"
    if xk in cfg and sk in cfg:
        raise ConfigError(f"give only one of {xk} and {sk}")
    if xk in cfg:
        return _f(cfg, xk)
    if sk in cfg:
        return spot_to_x(_f(cfg, sk), spot)
    return None


def build_grid_spec(cfg: dict[str, str], n: int) -> GridSpec:
    """Grid for ``n`` diffusion nodes.

    ``grid.jump_bound_kind`` chooses how ``grid.s_max_jump`` is read.  With
    ``s`` (default) it is a spot level, so ``x = ln(s / spot)``.  With ``x``
    the number's logarithm is used directly as the log-price bound.
    """
    spot = _f(cfg, "market.spot")
    x_min = _bound(cfg, "min", spot)
    x_max = _bound(cfg, "max", spot)
    if x_min is None or x_max is None:
        raise ConfigError("grid needs lower and upper bounds (grid.x_min/x_max or grid.s_min/s_max)")
    kind = _s(cfg, "grid.jump_bound_kind", "s", ("s", "x"))
    if kind == "x" and "grid.s_max_jump" in cfg:
        x_max_jump = math.log(_f(cfg, "grid.s_max_jump"))
    else:
        x_max_jump = _bound(cfg, "max_jump", spot)
    x_min_jump = _bound(cfg, "min_jump", spot)
    return GridSpec(
        x_min,
        x_max,
        n,
        x_max_jump=x_max_jump,
        x_min_jump=x_min_jump,
        growth=_f(cfg, "grid.growth", 1.03),
        spacing=_s(cfg, "grid.spacing", "uniform", ("uniform", "concentrated")),
        extension=_s(cfg, "grid.extension", "geometric", ("geometric", "uniform")),
        intensity=_f(cfg, "grid.intensity", 5.0),
    )


def generator_options(cfg: dict[str, str]) -> dict[str, Any]:
    opts: dict[str, Any] = {}
    if "generator.compensator" in cfg:
        opts["compensator"] = _s(cfg, "generator.compensator", choices=("exact", "forward"))
    if "generator.step_rule" in cfg:
        opts["step_rule"] = _s(cfg, "generator.step_rule", choices=("exact", "loose"))
    if "generator.kappa_dump" in cfg:
        opts["kappa_dump"] = _f(cfg, "generator.kappa_dump")
    if "generator.order_negative_alpha" in cfg:
        opts["order_negative_alpha"] = _i(cfg, "generator.order_negative_alpha")
    if "generator.merton_mode" in cfg:
        opts["mode"] = _s(cfg, "generator.merton_mode", choices=("heat", "matrix", "gauss", "cn"))
    return opts


def default_jump_method(cfg: dict[str, str]) -> str:
    """Pade-Picard for Merton and Kou, whose generators apply cheaply.

    Tempered-stable generators are dense and can have norms large enough that
    the fixed-point iteration stalls, so they default to the exponential.
    """
    return "pade-picard" if cfg.get("model.type") in ("merton", "kou") else "exp"


def jump_methods(cfg: dict[str, str]) -> list[str]:
    raw = cfg.get("scheme.jump_method", default_jump_method(cfg))
    out = []
    for tok in raw.split(","):
        tok = tok.strip()
        if tok == "picard":
            tok = "pade-picard"
        if tok not in ("exp", "pade-picard"):
            raise ConfigError(f"scheme.jump_method must be exp or picard, got {tok!r}")
        out.append(tok)
    return out


def build_problem(cfg: dict[str, str], n: int, jump_method: str, model: LevyJumpModel | None = None,
                  n_time_steps: int | None = None) -> PricingProblem:
    model = build_model(cfg) if model is None else model
    return PricingProblem(
        spot=_f(cfg, "market.spot"),
        strike=_f(cfg, "market.strike"),
        maturity=_f(cfg, "option.maturity"),
        payoff=_s(cfg, "option.payoff", "call", ("call", "put", "digital")),
        diffusion=DiffusionParams(_f(cfg, "market.r"), _f(cfg, "market.q", 0.0), _f(cfg, "market.sigma")),
        jump=model,
        grid_spec=build_grid_spec(cfg, n),
        n_time_steps=_i(cfg, "scheme.n_time_steps", 1) if n_time_steps is None else n_time_steps,
        jump_method=jump_method,
        picard_tol=_f(cfg, "scheme.picard_tol", 1e-9),
        picard_max_iter=_i(cfg, "scheme.picard_max_iter", 100),
        rannacher=_b(cfg, "scheme.rannacher"),
        generator_options=generator_options(cfg),
    )


def price_problem(cfg: dict[str, str], problem: PricingProblem) -> PricingResult:
    mode = _s(cfg, "scheme.mode", "strang", ("strang", "two-stage"))
    if mode == "two-stage":
        return two_stage_price(problem, bs_rate=_s(cfg, "scheme.bs_rate", "drift", ("drift", "shifted")))
    return strang_price(problem)


# ---------------------------------------------------------------------------
# Convergence studies
# ---------------------------------------------------------------------------


@dataclass
class LadderRow:
    C: float
    h: float
    N: int
    t_e: float
    beta: float | None = None


@dataclass
class ConvergenceReport:
    """Prices along a refinement ladder with convergence orders.

    ``beta[i]`` belongs to row ``i + 1`` and equals
    ``log2(|C_i - C_ref| / |C_(i+1) - C_ref|)``.  Absolute errors keep the
    order defined when the error changes sign between rungs.  A negative
    value then flags that the error grew.  It is ``None`` (and the CSV cell
    is empty) when either error is exactly zero.
    """

    study: str
    jump_method: str
    rows: list[LadderRow] = field(default_factory=list)
    c_ref: float | None = None
    ref_provenance: str = ""
    scale: float = 1.0
    target_values: list[float] | None = None
    metadata: dict = field(default_factory=dict)
    aborted: str | None = None

    def compute_betas(self) -> None:
        for row in self.rows:
            row.beta = None
        if self.c_ref is None:
            return
        for prev, row in zip(self.rows, self.rows[1:]):
            row.beta = convergence_order(prev.C, row.C, self.c_ref)

    @property
    def betas(self) -> list[float | None]:
        return [r.beta for r in self.rows[1:]]

    @property
    def prices(self) -> list[float]:
        return [r.C for r in self.rows]


def convergence_order(c_coarse: float, c_fine: float, c_ref: float) -> float | None:
    e0, e1 = abs(c_coarse - c_ref), abs(c_fine - c_ref)
    if e0 == 0 or e1 == 0:
        return None
    return math.log2(e0 / e1)


def aitken_limit(c: Sequence[float]) -> float:
    """Limit of a geometrically converging sequence from its last three terms."""
    if len(c) < 3:
        raise ConfigError("Aitken extrapolation needs at least three ladder rungs")
    c0, c1, c2 = c[-3:]
    den = (c2 - c1) - (c1 - c0)
    if den == 0:
        return c2
    return c2 - (c2 - c1) ** 2 / den


def oracle_price(cfg: dict[str, str], model: LevyJumpModel, problem: PricingProblem) -> tuple[float, str]:
    """Closed-form or Fourier price of the continuous problem the scheme targets."""
    d = problem.diffusion
    s0, k, t = problem.spot, problem.strike, problem.maturity
    if isinstance(model, NoJumps):
        return black_scholes(s0, k, d.r, d.q, d.sigma, t, problem.payoff), "black-scholes"
    if isinstance(model, MertonParams):
        return merton_series(s0, k, d.r, d.sigma, t, model.lam, model.mu_j, model.sigma_j,
                             q=d.q, payoff=problem.payoff), "merton-series"
    if problem.payoff != "call":
        raise ConfigError("Fourier oracle reference is implemented for calls only")
    mode = _s(cfg, "scheme.mode", "strang")
    if mode == "two-stage":
        gen = build_problem_generator(problem, problem_grid(problem))
        jump = "exp" if problem.jump_method == "exp" else "pade"
        fn = split_limit_log_cf(model, d.r, d.q, d.sigma, t, gen.drift_shift, jump)
        return lewis_price(model, s0, k, d.r, t, d.sigma, d.q, log_cf_fn=fn), f"lewis-split-limit-{jump}"
    return lewis_price(model, s0, k, d.r, t, d.sigma, d.q), "lewis"


RUNG_DIAGNOSTICS = ("regime", "n_jump_nodes", "positivity_min", "positivity_violations", "picard_counts")


def _price_rung(args: tuple[dict[str, str], int, str, LevyJumpModel, int]) -> tuple[float, float, float, dict]:
    cfg, n, method, model, steps = args
    problem = build_problem(cfg, n, method, model, steps)
    t0 = time.perf_counter()
    res = price_problem(cfg, problem)
    diag = {k: res.diagnostics[k] for k in RUNG_DIAGNOSTICS if k in res.diagnostics}
    diag["N"] = n
    return res.price, res.diagnostics["h"], time.perf_counter() - t0, diag


def _steps_for(cfg: dict[str, str], n: int, first_n: int) -> int:
    """Time steps for a rung.  ``scheme.time_refine = proportional`` scales with N."""
    base = _i(cfg, "scheme.n_time_steps", 1)
    if _s(cfg, "scheme.time_refine", "fixed", ("fixed", "proportional")) == "fixed":
        return base
    return max(1, round(base * (n - 1) / (first_n - 1)))


def run_convergence(cfg: dict[str, str], jump_method: str | None = None, jobs: int = 1) -> ConvergenceReport:
    """Price every ladder rung, attach the reference and the orders.

    ``reference`` may be ``target:<value>``, ``self:<N>`` (one extra, finer
    rung), ``aitken`` (extrapolated from the three finest rungs) or
    ``oracle`` (closed-form or Fourier price of the continuous problem).
    A failing rung stops the ladder.  The report then carries the rows
    priced so far and an ``aborted`` message.
    """
    method = jump_method or jump_methods(cfg)[0]
    ladder = parse_ladder(cfg.get("ladder", ""))
    model = build_model(cfg)
    scale = _f(cfg, "report.scale", 1.0)
    study = cfg.get("study", "convergence")
    target_key = f"target.values.{method}" if f"target.values.{method}" in cfg else "target.values"
    targets = [float(v) for v in cfg[target_key].split(",")] if target_key in cfg else None
    report = ConvergenceReport(study, method, scale=scale, target_values=targets)
    report.metadata = {
        "config": dict(sorted(cfg.items())),
        "model": {"type": type(model).__name__, **asdict(model)},
        "jump_method": method,
    }
    tasks = [(cfg, n, method, model, _steps_for(cfg, n, ladder[0])) for n in ladder]
    rungs: list[dict] = []
    report.metadata["rungs"] = rungs
    try:
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_price_rung, tasks))
            for n, (c, h, te, diag) in zip(ladder, results):
                report.rows.append(LadderRow(c * scale, h, n, te))
                rungs.append(diag)
        else:
            for task in tasks:
                c, h, te, diag = _price_rung(task)
                rungs.append(diag)
                report.rows.append(LadderRow(c * scale, h, task[1], te))
                log.info("%s %s N=%d C=%.10g t=%.3fs", study, method, task[1], c * scale, te)
    except NUMERICAL_ERRORS as exc:
        report.aborted = f"rung N={ladder[len(report.rows)]}: {type(exc).__name__}: {exc}"
        log.error("ladder aborted: %s", report.aborted)
        return report
    ref = cfg.get("reference", "aitken")
    if ref.startswith("target:"):
        report.c_ref = float(ref.split(":", 1)[1])
        report.ref_provenance = f"quoted value {report.c_ref}"
    elif ref.startswith("self:"):
        n_ref = int(ref.split(":", 1)[1])
        c, _, te, _ = _price_rung((cfg, n_ref, method, model, _steps_for(cfg, n_ref, ladder[0])))
        report.c_ref = c * scale
        report.ref_provenance = f"self-computed at N={n_ref} ({te:.2f}s)"
    elif ref == "aitken":
        report.c_ref = aitken_limit(report.prices)
        report.ref_provenance = "Aitken extrapolation of the three finest rungs"
    elif ref == "oracle":
        c, name = oracle_price(cfg, model, build_problem(cfg, ladder[0], method, model))
        report.c_ref = c * scale
        report.ref_provenance = f"oracle {name}"
    else:
        raise ConfigError(f"unknown reference {ref!r}")
    report.compute_betas()
    report.metadata["c_ref"] = report.c_ref
    report.metadata["ref_provenance"] = report.ref_provenance
    if isinstance(model, KouParams):
        report.metadata["resolved_lambda"] = model.lam
    return report


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("C", "h", "N", "t_e", "beta")


def _fmt(x: float | None) -> str:
    return "" if x is None else format(x, ".12g")


def report_csv(report: ConvergenceReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in report.rows:
        w.writerow([_fmt(row.C), _fmt(row.h), row.N, format(row.t_e, ".4f"), _fmt(row.beta)])
    return buf.getvalue()


def paired_csv(reports: Sequence[ConvergenceReport]) -> str:
    """Side-by-side layout for two methods on one ladder (iterative first)."""
    it, ex = reports
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("C_it", "h", "N", "beta_it", "C_exp", "beta_exp"))
    for a, b in zip(it.rows, ex.rows):
        w.writerow([_fmt(a.C), _fmt(a.h), a.N, _fmt(a.beta), _fmt(b.C), _fmt(b.beta)])
    return buf.getvalue()


def plot_data(report: ConvergenceReport) -> str:
    lines = ["h,abs_error"]
    if report.c_ref is not None:
        for row in report.rows:
            err = abs(row.C - report.c_ref)
            if err > 0:
                lines.append(f"{_fmt(row.h)},{_fmt(err)}")
    return "\n".join(lines) + "\n"


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_outputs(report: ConvergenceReport, out_dir: str | Path, stem: str | None = None) -> dict[str, Path]:
    """Write ``<stem>.csv``, ``<stem>.json`` and ``<stem>.plot.csv``."""
    out = Path(out_dir)
    stem = stem or f"{report.study}-{report.jump_method}"
    meta = {
        "study": report.study,
        "jump_method": report.jump_method,
        "c_ref": report.c_ref,
        "ref_provenance": report.ref_provenance,
        "scale": report.scale,
        "aborted": report.aborted,
        "target_values": report.target_values,
        "rows": [asdict(r) for r in report.rows],
        **{k: v for k, v in report.metadata.items() if k not in ("c_ref", "ref_provenance")},
    }
    paths = {
        "csv": out / f"{stem}.csv",
        "json": out / f"{stem}.json",
        "plot": out / f"{stem}.plot.csv",
    }
    atomic_write(paths["csv"], report_csv(report))
    atomic_write(paths["json"], json.dumps(meta, indent=2, default=float) + "\n")
    atomic_write(paths["plot"], plot_data(report))
    return paths


def format_report(report: ConvergenceReport) -> str:
    lines = [f"# {report.study} ({report.jump_method}); C_ref = {_fmt(report.c_ref)} [{report.ref_provenance}]"]
    lines.append(f"{'C':>16} {'h':>12} {'N':>8} {'t_e':>9} {'beta':>8} {'target':>12}")
    for i, r in enumerate(report.rows):
        target = report.target_values[i] if report.target_values and i < len(report.target_values) else None
        beta = "-" if r.beta is None else f"{r.beta:.3f}"
        lines.append(f"{r.C:16.10f} {r.h:12.6g} {r.N:8d} {r.t_e:9.3f} {beta:>8} {_fmt(target):>12}")
    if report.aborted:
        lines.append(f"ABORTED: {report.aborted}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Cross-checks and self-test
# ---------------------------------------------------------------------------


def run_cross_check(cfg: dict[str, str], jump_method: str | None = None) -> dict:
    """Engine price against an independent oracle at ``grid.n`` nodes."""
    method = jump_method or jump_methods(cfg)[0]
    model = build_model(cfg)
    problem = build_problem(cfg, _i(cfg, "grid.n", 801), method, model)
    res = price_problem(cfg, problem)
    d = problem.diffusion
    if isinstance(model, NoJumps):
        ref, name = black_scholes(problem.spot, problem.strike, d.r, d.q, d.sigma, problem.maturity,
                                  problem.payoff), "black-scholes"
    elif isinstance(model, MertonParams):
        ref, name = oracle_price(cfg, model, problem)
    else:
        if problem.payoff == "digital":
            raise ConfigError("Fourier cross-check needs a call or put")
        fft = admissible_config(model, FFTConfig())
        ref = carr_madan(model, problem.spot, problem.strike, d.r, problem.maturity, d.sigma, d.q,
                         config=fft, payoff=problem.payoff)
        name = f"carr-madan(alpha_damp={fft.alpha_damp:g})"
    return {
        "engine": res.price,
        "reference": ref,
        "reference_method": name,
        "relative_error": (res.price - ref) / ref,
        "diagnostics": _jsonable(res.diagnostics),
        "model": {"type": type(model).__name__, **asdict(model)},
    }


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out[k] = _jsonable(v)
        elif isinstance(v, (np.floating, np.integer)):
            out[k] = v.item()
        elif isinstance(v, np.ndarray):
            out[k] = v.tolist()
        else:
            out[k] = v
    return out


def selftest() -> list[tuple[str, bool, str]]:
    """Fast end-to-end checks against closed forms.  Returns (name, ok, detail)."""
    base = {
        "market.spot": "100", "market.strike": "100", "market.r": "0.05", "market.sigma": "0.2",
        "option.maturity": "1", "option.payoff": "call", "grid.x_min": "-2", "grid.x_max": "2",
        "scheme.mode": "strang", "scheme.n_time_steps": "32",
    }
    out = []
    r = run_cross_check({**base, "grid.n": "401"})
    out.append(("strang vs black-scholes", abs(r["relative_error"]) < 1e-3, f"{r['relative_error']:.2e}"))
    merton = {**base, "model.type": "merton", "model.lam": "1", "model.mu_j": "-0.1", "model.sigma_j": "0.15",
              "grid.x_min_jump": "-3", "grid.x_max_jump": "3", "grid.extension": "uniform",
              "scheme.jump_method": "pade-picard", "grid.n": "401"}
    r = run_cross_check(merton)
    out.append(("strang merton vs series", abs(r["relative_error"]) < 2e-3, f"{r['relative_error']:.2e}"))
    kou = {**base, "model.type": "kou", "model.lam": "0.5", "model.p": "0.4", "model.theta1": "10",
           "model.theta2": "5", "grid.x_min_jump": "-4", "grid.x_max_jump": "4", "grid.extension": "uniform",
           "scheme.jump_method": "pade-picard", "grid.n": "401"}
    r = run_cross_check(kou)
    out.append(("strang kou vs carr-madan", abs(r["relative_error"]) < 2e-3, f"{r['relative_error']:.2e}"))
    return out


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jumpsplit", description=__doc__.split("\n")[0])
    p.add_argument("verb", choices=("price", "converge", "crosscheck", "selftest"))
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--study", help=f"named study ({', '.join(STUDIES)})")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--jump-method", choices=("exp", "picard"), help="override the jump step")
    p.add_argument("--allow-override", action="store_true", help="allow changing pinned study keys")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="extra config entries")
    p.add_argument("--jobs", type=int, default=1, help="price ladder rungs in parallel")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _dispatch(args)
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except VALIDATION_ERRORS as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def _dispatch(args: argparse.Namespace) -> int:
    if args.verb == "selftest":
        results = selftest()
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERICAL
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    file_cfg = load_config(args.config) if args.config else {}
    cfg = resolve_config(args.study, file_cfg, overrides, args.allow_override)
    method_override = None
    if args.jump_method:
        method_override = "pade-picard" if args.jump_method == "picard" else "exp"
    out = Path(args.out)
    if args.verb == "price":
        method = method_override or jump_methods(cfg)[0]
        problem = build_problem(cfg, _i(cfg, "grid.n", 801), method)
        res = price_problem(cfg, problem)
        payload = {"price": res.price, "diagnostics": _jsonable(res.diagnostics)}
        atomic_write(out / "price.json", json.dumps(payload, indent=2) + "\n")
        print(f"{res.price:.10g}")
        return EXIT_OK
    if args.verb == "crosscheck":
        result = run_cross_check(cfg, method_override)
        atomic_write(out / "crosscheck.json", json.dumps(result, indent=2) + "\n")
        print(f"engine {result['engine']:.10g}  {result['reference_method']} {result['reference']:.10g}  "
              f"relative error {result['relative_error']:.3e}")
        return EXIT_OK
    methods = [method_override] if method_override else jump_methods(cfg)
    reports = []
    for m in methods:
        rep = run_convergence(cfg, m, jobs=args.jobs)
        emit_outputs(rep, out)
        print(format_report(rep))
        reports.append(rep)
        if rep.aborted:
            return EXIT_NUMERICAL
    if len(reports) == 2 and reports[0].jump_method == "pade-picard":
        atomic_write(out / f"{reports[0].study}.csv", paired_csv(reports))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

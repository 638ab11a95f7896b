import math

import numpy as np
import pytest

from jumpsplit.grid import GridSpec, build_uniform_grid
from jumpsplit.jump_generator import build_generator, build_zero
from jumpsplit.levy_models import DiffusionParams, GTSPParams, KouParams, MertonParams, NoJumps
from jumpsplit.reference_pricers import black_scholes, merton_series
from jumpsplit.time_stepping import (
    FarField,
    PicardError,
    PricingProblem,
    SolutionState,
    diffusion_half_step,
    extract_price,
    jump_full_step_exp,
    jump_full_step_picard,
    payoff_on_grid,
    problem_grid,
    strang_price,
    two_stage_price,
)

DIFF = DiffusionParams(0.05, 0.0, 0.15)
MERTON = MertonParams(5.0, 0.3, 0.1)
# Frequent up-jumps leave a call worth about 0.17 at x = -2, so a zero
# Dirichlet value there would be wrong.  The Merton grid starts lower.
MERTON_SPEC = GridSpec(-4.0, 2.5, 801, x_max_jump=3.5, x_min_jump=-5.0, extension="uniform")


def problem(model=NoJumps(), n=801, steps=64, method="exp", payoff="call", t=1.0, spec=None, **kw):
    spec = spec or GridSpec(-2.0, 2.0, n, x_max_jump=3.0, x_min_jump=-3.0, extension="uniform")
    return PricingProblem(100.0, 100.0, t, payoff, DIFF, model, spec, steps, method, **kw)


# ---------------------------------------------------------------------------
# Problem and payoff
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw", [{"t": 0.0}, {"steps": 0}, {"payoff": "straddle"}, {"method": "rk4"}]
)
def test_problem_validation(kw):
    with pytest.raises(ValueError):
        problem(**kw)


def test_problem_rejects_invalid_model():
    with pytest.raises(ValueError):
        problem(KouParams(1.0, 0.5, 0.9, 3.0))


def test_call_payoff_examples():
    spec = GridSpec(math.log(0.5), math.log(2.0), 3)
    p = problem(spec=spec)
    grid = problem_grid(p)
    v = payoff_on_grid(p, grid).values
    assert grid.nodes[1] == pytest.approx(0.0, abs=1e-15)
    assert v[1] == 0.0
    assert v[2] == pytest.approx(100.0)


def test_put_payoff_vanishes_on_upper_extension():
    p = problem(payoff="put")
    grid = problem_grid(p)
    v = payoff_on_grid(p, grid).values
    assert np.all(v[grid.i_hi :] == 0.0)
    assert v[0] == pytest.approx(100 - 100 * math.exp(-3.0))


def test_digital_payoff_is_indicator():
    p = problem(payoff="digital")
    grid = problem_grid(p)
    v = payoff_on_grid(p, grid).values
    assert set(np.unique(v)) == {0.0, 1.0}
    assert np.all(v[grid.nodes > 1e-12] == 1.0)


# ---------------------------------------------------------------------------
# Sub-steps
# ---------------------------------------------------------------------------


def test_diffusion_step_without_volatility_or_drift_is_identity():
    grid = build_uniform_grid(-1.0, 1.0, 81)
    diff = DiffusionParams(0.0, 0.0, 1e-9)
    v = np.maximum(100 * np.exp(grid.nodes) - 100, 0.0)
    far = FarField.for_payoff("call", 100.0)
    out = diffusion_half_step(SolutionState(v), diff, 0.5e-18, grid, 0.01, far, 100.0)
    np.testing.assert_allclose(out.values, v, atol=1e-9)


def test_jump_step_without_jumps_is_identity():
    grid = build_uniform_grid(-1.0, 1.0, 41)
    gen = build_zero(grid)
    v = np.linspace(0, 1, 41)
    state = payoff_on_grid(problem(), grid)
    np.testing.assert_array_equal(jump_full_step_exp(state, gen, 0.1).values, state.values)
    out, it = jump_full_step_picard(SolutionState(v), gen, 0.1)
    assert it == 1
    np.testing.assert_array_equal(out.values, v)


def test_exp_step_keeps_constants_on_interior_rows():
    grid = build_uniform_grid(-4.0, 4.0, 401)
    gen = build_generator(KouParams(1.0, 0.4, 10.0, 8.0), grid)
    state = SolutionState(np.ones(grid.n))
    out = jump_full_step_exp(state, gen, 0.25).values
    np.testing.assert_allclose(out[150:250], 1.0, atol=1e-10)


def test_picard_reports_iteration_count_on_failure():
    grid = build_uniform_grid(-2.0, 2.0, 201)
    gen = build_generator(GTSPParams(5.0, 0.0, 2.0, 1.0, 1.5, 0.5), grid)
    state = payoff_on_grid(problem(), grid)
    with pytest.raises(PicardError) as info:
        jump_full_step_picard(state, gen, 1.0, tol=1e-14, max_iter=5)
    assert info.value.iterations == 5
    assert "5 iterations" in str(info.value)


def test_picard_and_exp_differ_by_third_order_per_step():
    grid = build_uniform_grid(-4.0, 4.0, 801)
    gen = build_generator(KouParams(1.0, 0.4, 10.0, 8.0), grid)
    v = np.maximum(100 * np.exp(grid.nodes) - 100, 0.0)
    state = SolutionState(v)
    gaps = []
    for dt in (0.2, 0.1):
        a = jump_full_step_exp(state, gen, dt).values
        b, _ = jump_full_step_picard(state, gen, dt, tol=1e-13)
        gaps.append(np.abs(a - b.values)[200:600].max())
    assert math.log2(gaps[0] / gaps[1]) == pytest.approx(3.0, abs=0.3)


def test_extract_price_interpolates_cubics_exactly():
    grid = build_uniform_grid(-1.0, 1.0, 11)
    v = grid.nodes**3 - 2 * grid.nodes
    assert extract_price(grid, v, 0.05) == pytest.approx(0.05**3 - 0.1, abs=1e-13)


# ---------------------------------------------------------------------------
# Full pricing
# ---------------------------------------------------------------------------


def test_zero_jumps_matches_black_scholes():
    res = strang_price(problem())
    assert res.price == pytest.approx(black_scholes(100, 100, 0.05, 0.0, 0.15, 1.0), rel=1e-4)
    assert res.diagnostics["positivity_violations"] == 0


def test_put_matches_black_scholes():
    # Same absolute accuracy as the call; the put is worth less.
    res = strang_price(problem(payoff="put"))
    assert res.price == pytest.approx(black_scholes(100, 100, 0.05, 0.0, 0.15, 1.0, "put"), abs=1e-3)


@pytest.mark.parametrize("method", ["exp", "pade-picard"])
def test_merton_matches_series(method):
    res = strang_price(problem(MERTON, method=method, spec=MERTON_SPEC))
    assert res.price == pytest.approx(merton_series(100, 100, 0.05, 0.15, 1.0, 5.0, 0.3, 0.1), rel=1e-3)
    assert res.diagnostics["positivity_violations"] == 0
    if method == "pade-picard":
        assert len(res.diagnostics["picard_counts"]) == 64


def test_strang_is_second_order_in_time():
    prices = [strang_price(problem(MERTON, n=201, steps=k)).price for k in (4, 8, 16, 128)]
    errs = [abs(c - prices[-1]) for c in prices[:-1]]
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
    assert all(o == pytest.approx(2.0, abs=0.3) for o in orders)


def test_larger_time_steps_do_not_grow():
    bound = 100 * math.exp(3.0)
    for steps in (1, 2, 4):
        res = strang_price(problem(GTSPParams(3.0, 2.0, 3.0, 3.0, 1.5, -0.5), n=201, steps=steps))
        assert np.abs(res.values).max() <= bound
        assert res.diagnostics["positivity_violations"] == 0


def test_kink_oscillation_without_rannacher():
    # Crank-Nicolson on a coarse grid overshoots below zero next to the
    # strike in the first step.  The implicit start removes it.
    plain = strang_price(problem(MERTON, n=201))
    damped = strang_price(problem(MERTON, n=201, rannacher=True))
    assert plain.diagnostics["positivity_violations"] > 0
    assert damped.diagnostics["positivity_min"] > plain.diagnostics["positivity_min"]


def test_rannacher_start_is_close_to_plain():
    plain = strang_price(problem(n=401, steps=32)).price
    damped = strang_price(problem(n=401, steps=32, rannacher=True)).price
    assert damped == pytest.approx(plain, rel=1e-3)


def test_two_stage_with_exp_step_is_exact_splitting():
    # Diffusion and jumps of a Levy model commute, so the two-stage price
    # converges to the model price as the grid refines.
    p = problem(MERTON, n=601, t=0.25, generator_options={"mode": "matrix"},
                spec=GridSpec(-3.0, 3.0, 601, x_max_jump=4.0, x_min_jump=-4.0, extension="uniform"))
    res = two_stage_price(p)
    assert res.price == pytest.approx(merton_series(100, 100, 0.05, 0.15, 0.25, 5.0, 0.3, 0.1), rel=1e-3)
    with pytest.raises(ValueError):
        two_stage_price(p, bs_rate="bogus")


def test_kou_table_pipeline_at_401_nodes():
    from jumpsplit.harness_cli import build_problem, price_problem, resolve_config

    cfg = resolve_config("table-1")
    res = price_problem(cfg, build_problem(cfg, 401, "pade-picard"))
    assert res.price == pytest.approx(3.99640628, abs=5e-4)


def test_diagnostics_fields():
    diag = strang_price(problem(n=101, steps=2)).diagnostics
    for key in ("regime", "h", "N", "dt", "picard_counts", "positivity_min", "wall_time"):
        assert key in diag
    assert diag["N"] == 101

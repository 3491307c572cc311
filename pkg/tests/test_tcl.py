import itertools

import pytest
import numpy as np

from uzawa.core import PriceSignal, derive_stream
from uzawa.exceptions import GridValidityError
from uzawa.tcl import (
    OnOffPolicy,
    TCLGrid,
    TCLParams,
    TCLPopulation,
    bau_baseline,
    hjb_best_response,
    hourly_sigma,
    pairing_scale,
    simulate_tcl,
    stage_costs,
    tcl_population,
    transition_matrices,
)
from uzawa.unit_commitment import TCL_CHANNELS


@pytest.fixture
def grid():
    # 9 temperature nodes, 8 steps of 5 minutes in one slot
    return TCLGrid(dt=300.0, dT=1.625, horizon=2400.0, n_slots=1)


@pytest.fixture
def params():
    return TCLParams()


def prices(p, rho, n_slots=1):
    return PriceSignal(
        np.array([np.full(n_slots, p), np.full(n_slots, rho)], dtype=float), TCL_CHANNELS
    )


def test_hourly_sigma():
    assert hourly_sigma(60.0) == pytest.approx(1.0)
    assert hourly_sigma(0.0) == 0.0

    with pytest.raises(ValueError, match="`sigma` must be nonnegative"):
        hourly_sigma(-1.0)


@pytest.mark.parametrize(
    "kwargs, match",
    [
        ({"gamma": 0.0}, "`gamma` must be positive"),
        ({"p_on": -1.0}, "`p_on` must be positive"),
        ({"x_target": -25.0}, "`x_target` must lie strictly inside"),
        ({"beta": -1.0}, "`beta` must be nonnegative"),
    ],
)
def test_params_validation(kwargs, match):
    with pytest.raises(ValueError, match=match):
        TCLParams(**kwargs)


def test_grid(grid, params):
    assert grid.steps_per_slot == 8
    assert grid.n_steps == 8
    assert grid.step == 300.0
    nodes = grid.nodes(params)
    assert nodes.size == 9
    assert nodes[0] == pytest.approx(-24.0)
    assert nodes[-1] == pytest.approx(-11.0)
    np.testing.assert_array_equal(grid.levels(params), [0.0, 180.0])
    assert grid.time_grid().n_slots == 1


def test_grid_validation():
    with pytest.raises(ValueError, match="`control_levels` must be at least 2"):
        TCLGrid(control_levels=1)

    with pytest.raises(ValueError, match="`dt` must be positive"):
        TCLGrid(dt=0.0)

    with pytest.warns(UserWarning, match="relaxed control"):
        grid = TCLGrid(control_levels=3)
    assert grid.levels(TCLParams()).tolist() == [0.0, 90.0, 180.0]


def test_pairing_scale(grid):
    assert pairing_scale(grid, 1000) == pytest.approx(1000 * 1e-6 * 300 / 3600)


def test_transition_rows_sum_to_one(grid, params):
    matrices, substeps = transition_matrices(params, grid)
    assert substeps == 1
    assert matrices.shape == (2, 9, 9)
    assert np.all(matrices >= 0)
    np.testing.assert_allclose(matrices.sum(axis=2), 1.0)


def test_transitions_follow_the_drift(grid, params):
    matrices, _ = transition_matrices(params, grid)
    nodes = grid.nodes(params)
    off, on = matrices
    # OFF warms towards the ambient temperature, ON cools
    assert off[0] @ nodes > nodes[0]
    assert on[4] @ nodes < nodes[4]


def test_substeps_are_counted(params):
    grid = TCLGrid(dt=300.0, dT=0.5, horizon=2400.0, n_slots=1)
    matrices, substeps = transition_matrices(params, grid)
    assert substeps > 1
    np.testing.assert_allclose(matrices.sum(axis=2), 1.0)


def test_grid_validity_error(params):
    grid = TCLGrid(dt=300.0, dT=0.01, horizon=2400.0, n_slots=1, max_substeps=1)
    with pytest.raises(GridValidityError, match="substeps"):
        transition_matrices(params, grid)


def test_stage_costs_shape(grid, params):
    costs = stage_costs(params, prices(10.0, 0.0), grid, n_tcl=1)
    assert costs.shape == (1, 2, 9)
    np.testing.assert_allclose(
        costs[0, 1] - costs[0, 0], pairing_scale(grid, 1) * 10.0 * 180.0
    )

    with pytest.raises(ValueError, match="`prices` must have shape"):
        stage_costs(params, prices(1.0, 0.0, n_slots=2), grid, n_tcl=1)


def test_all_off_without_comfort(grid):
    params = TCLParams(alpha=0.0, beta=0.0, terminal_weight=0.0)
    policy = hjb_best_response(params, prices(5.0, 0.0), grid, n_tcl=1000)
    assert not policy.decisions.any()
    np.testing.assert_allclose(policy.values, 0.0)


def test_one_step_backward_induction(params):
    grid = TCLGrid(dt=300.0, dT=1.625, horizon=300.0, n_slots=1)
    signal = prices(40.0, 3.0)
    policy = hjb_best_response(params, signal, grid, n_tcl=500)

    matrices, _ = transition_matrices(params, grid)
    costs = stage_costs(params, signal, grid, n_tcl=500)
    nodes = grid.nodes(params)
    terminal = params.terminal_weight * (nodes - params.x_target) ** 2
    for i in range(nodes.size):
        off = costs[0, 0, i] + matrices[0, i] @ terminal
        on = costs[0, 1, i] + matrices[1, i] @ terminal
        assert policy.values[0, i] == pytest.approx(min(off, on))
        assert policy.decisions[0, i] == (1 if on < off else 0)


def test_values_grow_with_energy_price(grid, params):
    cheap = hjb_best_response(params, prices(1.0, 0.0), grid, n_tcl=1000)
    dear = hjb_best_response(params, prices(100.0, 0.0), grid, n_tcl=1000)
    assert np.all(dear.values >= cheap.values - 1e-12)


def test_dynamic_programming_check(grid, params):
    policy = hjb_best_response(params, prices(1.0, 1.0), grid, check_nodes=0)
    assert policy.verify_dynamic_programming(np.random.default_rng(1), 50) < 1e-10

    constant = OnOffPolicy.constant(params, grid)
    with pytest.raises(ValueError, match="no value function"):
        constant.verify_dynamic_programming(np.random.default_rng(1))


def test_policy_lookup(grid, params):
    policy = OnOffPolicy.constant(params, grid, level=1)
    assert policy.control(0, -17.5) == 180.0
    # off-grid temperatures use the nearest node
    np.testing.assert_array_equal(policy.node_index(np.array([-100.0, 100.0])), [0, 8])

    with pytest.raises(ValueError, match="`level` must be in"):
        OnOffPolicy.constant(params, grid, level=2)


def test_simulate_always_on(grid, params):
    policy = OnOffPolicy.constant(params, grid, level=1)
    controls, temperatures, response = simulate_tcl(params, policy, grid, derive_stream(0, 0, 0))
    assert controls.shape == (8,)
    assert temperatures.shape == (9,)
    np.testing.assert_array_equal(controls, 180.0)

    x0 = params.x0
    expected = x0 - 300.0 / params.gamma * (x0 - params.x_off + params.zeta * 180.0)
    assert temperatures[0] == x0
    assert temperatures[1] == pytest.approx(expected)
    assert np.all(np.diff(temperatures) < 0)
    np.testing.assert_allclose(response, 180.0 * params.response_share(temperatures[:-1]))


def test_simulate_step_mismatch(grid, params):
    policy = OnOffPolicy.constant(params, TCLGrid(dt=300.0, horizon=1200.0, n_slots=1))
    with pytest.raises(ValueError, match="steps but the grid has"):
        simulate_tcl(params, policy, grid, derive_stream(0, 0, 0))


def test_population(grid):
    population = tcl_population(n=12, grid=grid, n_types=3, seed=2)
    assert population.n_agents == 12
    assert population.n_tcl == 12
    assert population.n_types <= 3
    for p in population.params:
        assert p.x_min <= p.x0 <= p.x_max

    noisy = population.with_sigma(0.01)
    assert all(p.sigma == 0.01 for p in noisy.params)
    assert noisy.n_types == population.n_types


@pytest.mark.parametrize(
    "kwargs, match",
    [
        ({"n": 0}, "`n` must be at least 1"),
        ({"n_types": 0}, "`n_types` must be at least 1"),
        ({"heterogeneity": 1.0}, "`heterogeneity` must be in"),
    ],
)
def test_population_validation(grid, kwargs, match):
    with pytest.raises(ValueError, match=match):
        tcl_population(grid=grid, **kwargs)

    with pytest.raises(ValueError, match="`params` must not be empty"):
        TCLPopulation([], grid)


def test_simulate_agent_coupling(grid):
    population = TCLPopulation([TCLParams()], grid)
    policy = OnOffPolicy.constant(TCLParams(), grid, level=1)
    coupling, cost = population.simulate(0, policy, derive_stream(0, 0, 0))
    assert coupling.shape == (2, 1)
    assert coupling[0, 0] == pytest.approx(180.0)
    assert -coupling[1, 0] <= coupling[0, 0]
    assert cost > 0


@pytest.mark.parametrize("workers", [1, 3])
def test_realize(grid, workers):
    population = tcl_population(n=6, grid=grid, n_types=2, sigma=hourly_sigma(0.5))
    signal = prices(30.0, 2.0)
    agents = np.array([0, 2, 2, 5])
    draws = np.arange(4)

    first = population.realize(agents, signal, 3, 1, draws=draws)
    second = population.realize(agents, signal, 3, 1, draws=draws, workers=workers)
    np.testing.assert_array_equal(first.coupling, second.coupling)
    np.testing.assert_array_equal(first.cost, second.cost)

    assert first.coupling.shape == (4, 2, 1)
    U, R = first.coupling[:, 0], -first.coupling[:, 1]
    assert np.all(R >= 0)
    assert np.all(R <= U + 1e-12)
    # two draws of the same agent see different noise
    assert first.cost[1] != first.cost[2]


def test_bau_square_wave():
    grid = TCLGrid(dt=10.0, horizon=20000.0, n_slots=4)
    params = TCLParams(x0=-14.0)
    bau = bau_baseline(TCLPopulation([params], grid), keep_paths=True)

    controls = bau.paths.controls[0]
    temperatures = bau.paths.temperatures[0]
    assert set(np.unique(controls)) == {0.0, 180.0}
    assert controls[0] == 180.0
    assert np.count_nonzero(np.diff(controls)) >= 3
    assert temperatures.min() > params.x_min - 0.1
    assert temperatures.max() < params.x_max + 0.1
    np.testing.assert_array_equal(bau.R, 0.0)
    assert bau.U.shape == (4,)
    assert bau.costs.shape == (1,)


def test_bau_band(grid, params):
    population = TCLPopulation([params], grid)
    with pytest.raises(ValueError, match="`band` must be increasing"):
        bau_baseline(population, band=(1.0, 0.0))

    narrow = bau_baseline(population, band=(-18.0, -17.0))
    assert narrow.U.shape == (1,)


@pytest.mark.parametrize("p", [0.0, 1e13, -1e13])
def test_backward_induction_against_open_loop_enumeration(grid, p):
    # with a dominant energy price the best policy is always OFF (or always ON)
    params = TCLParams(alpha=0.0, beta=50.0)
    signal = prices(p, 0.0)
    policy = hjb_best_response(params, signal, grid)
    matrices, _ = transition_matrices(params, grid)
    costs = stage_costs(params, signal, grid, n_tcl=1)[0]
    nodes = grid.nodes(params)
    terminal = params.terminal_weight * (nodes - params.x_target) ** 2
    everywhere = np.arange(nodes.size)

    agreements = 0
    for i in range(nodes.size):
        start = np.eye(nodes.size)[i]
        value = policy.values[0, i]
        tol = 1e-10 * abs(value) + 1e-12

        # closed loop: propagate the distribution under the policy
        law, closed = start, 0.0
        for t in range(grid.n_steps):
            d = policy.decisions[t]
            closed += law @ costs[d, everywhere]
            law = np.einsum("j,jk->k", law, matrices[d, everywhere])
        closed += law @ terminal
        assert abs(closed - value) <= tol

        best, best_sequence = np.inf, None
        for sequence in itertools.product((0, 1), repeat=grid.n_steps):
            law, cost = start, 0.0
            for level in sequence:
                cost += law @ costs[level]
                law = law @ matrices[level]
            cost += law @ terminal
            if cost < best:
                best, best_sequence = cost, sequence
        assert value <= best + tol

        if best <= value + tol:
            # an optimal open-loop sequence starts with an optimal decision
            q = costs[:, i] + matrices[:, i] @ policy.values[1]
            first = best_sequence[0]
            assert q[first] <= value + tol
            if abs(q[1] - q[0]) > tol:
                assert policy.decisions[0, i] == first
                agreements += 1

    if p != 0:
        assert agreements == nodes.size
        np.testing.assert_array_equal(policy.decisions, 0 if p > 0 else 1)

import pytest
import numpy as np
import pandas as pd
import polars as pl

from uzawa.core import (
    MAX_SEED,
    PriceSignal,
    StepSchedule,
    StreamPurpose,
    TimeGrid,
    derive_block_stream,
    derive_seed,
    derive_stream,
    sample_indices,
    step_rho,
)
from uzawa.toy import make_toy_problem


def test_time_grid():
    grid = TimeGrid(horizon=12, dt=0.5, steps_per_slot=4)
    assert grid.n_slots == 3
    assert grid.slot_length == 2.0
    assert grid.slot_of(0) == 0
    assert grid.slot_of(11) == 2
    np.testing.assert_array_equal(grid.slot_of(np.arange(12)), np.repeat([0, 1, 2], 4))


@pytest.mark.parametrize(
    "kwargs, match",
    [
        ({"horizon": 0}, "`horizon` must be at least 1"),
        ({"horizon": 10, "dt": 0.0}, "`dt` must be positive"),
        ({"horizon": 10, "steps_per_slot": 3}, "`steps_per_slot` must divide"),
    ],
)
def test_time_grid_errors(kwargs, match):
    with pytest.raises(ValueError, match=match):
        TimeGrid(**kwargs)


def test_price_signal():
    prices = PriceSignal(np.array([[1.0, 2.0], [3.0, 4.0]]), ("energy", "response"))
    assert prices.shape == (2, 2)
    assert prices.n_slots == 2
    np.testing.assert_array_equal(prices.channel("response"), [3.0, 4.0])
    assert prices == PriceSignal([[1.0, 2.0], [3.0, 4.0]], ("energy", "response"))
    assert prices != prices.with_values(np.zeros((2, 2)))
    assert hash(prices) == hash(prices.with_values(prices.values.copy()))

    with pytest.raises(ValueError):
        prices.values[0, 0] = 5.0


def test_price_signal_one_dimensional():
    prices = PriceSignal([1.0, 2.0, 3.0])
    assert prices.shape == (1, 3)
    assert prices.channels == ("energy",)

    zeros = PriceSignal.zeros(("energy", "response"), 4)
    assert zeros.shape == (2, 4)
    assert not zeros.values.any()


def test_price_signal_errors():
    with pytest.raises(ValueError, match="`channels` has 1 names"):
        PriceSignal(np.zeros((2, 3)))

    with pytest.raises(ValueError, match="finite"):
        PriceSignal([np.nan, 1.0])

    with pytest.raises(ValueError, match="matrix"):
        PriceSignal(np.zeros((1, 2, 3)))


def test_price_signal_to_frame():
    prices = PriceSignal([[1.0, 2.0], [3.0, 4.0]], ("energy", "response"))

    df = prices.to_frame()
    assert isinstance(df, pd.DataFrame)
    assert df.columns.to_list() == ["slot", "energy", "response"]
    assert df["response"].to_list() == [3.0, 4.0]

    df = prices.to_frame(backend="polars")
    assert isinstance(df, pl.DataFrame)
    assert df.shape == (2, 3)


def test_step_schedule():
    schedule = StepSchedule(a=1.0, b=10.0)
    assert step_rho(schedule, 0) == pytest.approx(1 / 11)
    assert schedule.rho(9) == pytest.approx(1 / 20)
    np.testing.assert_allclose(schedule.steps(3), [1 / 11, 1 / 12, 1 / 13])

    total, squares = schedule.partial_sums(100)
    assert total == pytest.approx(sum(1 / (11 + k) for k in range(100)))
    assert squares < schedule.square_sum_bound()


@pytest.mark.parametrize("a, b", [(0.0, 1.0), (-1.0, 1.0), (1.0, -0.5), (np.inf, 0.0)])
def test_step_schedule_errors(a, b):
    with pytest.raises(ValueError):
        StepSchedule(a=a, b=b)


def test_step_rho_negative_iteration():
    with pytest.raises(ValueError, match="`k` must be nonnegative"):
        step_rho(StepSchedule(), -1)


def test_streams_are_reproducible():
    first = derive_stream(42, agent=3, iteration=7).standard_normal(5)
    second = derive_stream(42, agent=3, iteration=7).standard_normal(5)
    np.testing.assert_array_equal(first, second)


@pytest.mark.parametrize(
    "other",
    [
        (43, 3, 7, 0, StreamPurpose.AGENT),
        (42, 4, 7, 0, StreamPurpose.AGENT),
        (42, 3, 8, 0, StreamPurpose.AGENT),
        (42, 3, 7, 1, StreamPurpose.AGENT),
        (42, 3, 7, 0, StreamPurpose.EVALUATION),
    ],
)
def test_streams_differ_by_path(other):
    reference = derive_stream(42, 3, 7, 0, StreamPurpose.AGENT).standard_normal(5)
    assert not np.array_equal(reference, derive_stream(*other).standard_normal(5))


def test_block_stream_and_seed():
    block = derive_block_stream(0, 1).standard_normal(3)
    assert not np.array_equal(block, derive_block_stream(0, 2).standard_normal(3))
    assert derive_seed(0, 4, 1) == derive_seed(0, 4, 1)
    assert derive_seed(0, 4, 1) != derive_seed(0, 4, 2)
    assert 0 <= derive_seed(MAX_SEED, 0) <= MAX_SEED


def test_invalid_master_seed():
    with pytest.raises(ValueError, match="64-bit"):
        derive_stream(-1, 0, 0)

    with pytest.raises(ValueError, match="64-bit"):
        derive_stream(2**64, 0, 0)


def test_sample_indices():
    indices = sample_indices(7, iteration=3, n=5, m=20)
    assert indices.shape == (20,)
    assert indices.min() >= 0 and indices.max() < 5
    np.testing.assert_array_equal(indices, sample_indices(7, 3, 5, 20))

    with pytest.raises(ValueError, match="`m` must be at least 1"):
        sample_indices(7, 3, 5, 0)


@pytest.mark.parametrize("workers", [2, 4])
def test_realize_does_not_depend_on_workers(workers):
    problem = make_toy_problem(n=6, noise=0.5, n_slots=3)
    prices = problem.prices(np.full((1, 3), -0.2))
    agents = np.array([0, 3, 3, 5, 1])
    draws = np.arange(5)

    serial = problem.population.realize(agents, prices, 11, 2, draws=draws)
    parallel = problem.population.realize(agents, prices, 11, 2, draws=draws, workers=workers)
    np.testing.assert_array_equal(serial.coupling, parallel.coupling)
    np.testing.assert_array_equal(serial.cost, parallel.cost)
    assert serial.coupling.shape == (5, 1, 3)
    assert not np.array_equal(serial.coupling[1], serial.coupling[2])


def test_agent_noise_ignores_other_agents():
    problem = make_toy_problem(n=6, noise=0.5, n_slots=3)
    prices = problem.prices(np.full((1, 3), -0.2))
    population = problem.population

    alone = population.realize(np.array([2]), prices, 11, 4)
    together = population.realize(np.array([0, 1, 2, 3, 4, 5]), prices, 11, 4)
    shuffled = population.realize(np.array([5, 2, 0, 4]), prices, 11, 4)
    np.testing.assert_array_equal(together.coupling[2], alone.coupling[0])
    np.testing.assert_array_equal(shuffled.coupling[1], alone.coupling[0])
    np.testing.assert_array_equal(shuffled.coupling[0], together.coupling[5])


def test_problem_instance():
    problem = make_toy_problem(n=2, target=1.0)
    assert problem.n_agents == 2
    assert problem.n_slots == 1
    assert problem.prices().values.tolist() == [[0.0]]

    lam = problem.prices([[-0.5]])
    assert problem.conjugate(lam) == pytest.approx(-0.375)
    assert problem.pairing(np.array([[2.0]]), np.array([[3.0]])) == pytest.approx(6.0)

    assert problem.fingerprint() == make_toy_problem(n=2, target=1.0).fingerprint()
    assert problem.fingerprint() != make_toy_problem(n=3, target=1.0).fingerprint()


def test_problem_instance_weight_shape():
    problem = make_toy_problem()
    with pytest.raises(ValueError, match="`weight` must be a"):
        type(problem)(
            population=problem.population,
            aggregate=problem.aggregate,
            channels=("energy",),
            weight=np.ones(3),
        )

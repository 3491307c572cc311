import json

import pytest
import numpy as np
import pandas as pd

from uzawa.core import StepSchedule
from uzawa.dual_ascent import (
    DualTrace,
    deterministic_uzawa,
    estimate_dual_value,
    estimate_gap,
    exact_dual_value,
    lipschitz_gap_bound,
    sampled_stochastic_uzawa,
    smooth_gap_bound,
    stochastic_gradient,
    stochastic_uzawa,
)
from uzawa.exceptions import (
    DivergenceError,
    GrowthBoundError,
    MissingCapabilityError,
    NonFiniteGradientError,
    SolverError,
)
from uzawa.toy import ToyPopulation, make_toy_problem, toy_dual_value, toy_saddle_point
from uzawa.lqg import LQGAgentParams, LQGFamily, exact_saddle_point, make_lqg_problem


@pytest.fixture
def toy():
    return make_toy_problem(n=1, noise=0.0, target=1.0)


def test_one_iteration(toy):
    trace = stochastic_uzawa(toy, StepSchedule(1.0, 10.0), 1, seed=0)
    assert trace.final.values[0, 0] == pytest.approx(-1 / 11)
    assert trace.gradients[0, 0, 0] == pytest.approx(-1.0)
    assert trace.steps[0] == pytest.approx(1 / 11)


def test_zero_iterations(toy):
    trace = stochastic_uzawa(toy, StepSchedule(), 0, seed=0, lambda0=np.array([[0.3]]))
    assert trace.iterations == 0
    assert trace.final.values[0, 0] == 0.3
    assert trace.gradients.shape == (0, 1, 1)


def test_noiseless_converges(toy):
    trace = stochastic_uzawa(toy, StepSchedule(1.0, 10.0), 5000, seed=0)
    assert abs(trace.final.values[0, 0] - toy_saddle_point(1.0)) < 0.05
    assert trace.update_residual() == pytest.approx(0.0, abs=1e-12)


def test_noisy_converges():
    problem = make_toy_problem(n=20, noise=0.3, target=2.0, n_slots=2)
    trace = stochastic_uzawa(problem, StepSchedule(1.0, 10.0), 3000, seed=5)
    np.testing.assert_allclose(trace.final.values, -1.0, atol=0.1)


def test_reproducible_and_worker_independent():
    problem = make_toy_problem(n=8, noise=1.0, n_slots=3)
    schedule = StepSchedule(1.0, 5.0)
    serial = stochastic_uzawa(problem, schedule, 30, seed=3)
    again = stochastic_uzawa(problem, schedule, 30, seed=3)
    parallel = stochastic_uzawa(problem, schedule, 30, seed=3, workers=4)
    np.testing.assert_array_equal(serial.lambdas, again.lambdas)
    np.testing.assert_array_equal(serial.lambdas, parallel.lambdas)

    other = stochastic_uzawa(problem, schedule, 30, seed=4)
    assert not np.array_equal(serial.lambdas, other.lambdas)


def test_sampled(toy):
    problem = make_toy_problem(n=10, noise=0.5)
    trace = sampled_stochastic_uzawa(problem, 3, StepSchedule(1.0, 10.0), 2000, seed=1)
    assert abs(trace.final.values[0, 0] + 0.5) < 0.1
    assert trace.metadata["algorithm"] == "sampled"
    assert trace.metadata["sample_size"] == 3


def test_sampled_more_than_n():
    problem = make_toy_problem(n=2, noise=0.5)
    trace = sampled_stochastic_uzawa(problem, 7, StepSchedule(), 3, seed=0)
    assert trace.iterations == 3


def test_sampled_invalid_m(toy):
    with pytest.raises(ValueError, match="`m` must be at least 1"):
        sampled_stochastic_uzawa(toy, 0, StepSchedule(), 1, seed=0)


def test_sampled_noiseless_matches_full(toy):
    schedule = StepSchedule(1.0, 10.0)
    problem = make_toy_problem(n=5)
    full = stochastic_uzawa(problem, schedule, 50, seed=0)
    sampled = sampled_stochastic_uzawa(problem, 2, schedule, 50, seed=0)
    np.testing.assert_allclose(full.lambdas, sampled.lambdas)


def test_deterministic(toy):
    final, trace = deterministic_uzawa(toy, StepSchedule(1.0, 10.0), 2000)
    assert final.values[0, 0] == pytest.approx(-0.5, abs=0.01)
    assert trace.metadata["algorithm"] == "deterministic"


def test_deterministic_requires_expectation(toy):
    class Opaque(ToyPopulation):
        has_exact_expectation = False

    problem = make_toy_problem()
    problem.population = Opaque()
    with pytest.raises(MissingCapabilityError):
        deterministic_uzawa(problem, StepSchedule(), 10)


def test_negative_iterations(toy):
    with pytest.raises(ValueError, match="`K` must be nonnegative"):
        stochastic_uzawa(toy, StepSchedule(), -1, seed=0)


def test_wrong_lambda0_shape(toy):
    with pytest.raises(ValueError):
        stochastic_uzawa(toy, StepSchedule(), 1, seed=0, lambda0=np.zeros((1, 2)))


def test_divergence_guard(toy):
    with pytest.raises(DivergenceError) as excinfo:
        stochastic_uzawa(toy, StepSchedule(3e6, 0.0), 5, seed=0, check_growth=False)
    assert excinfo.value.iteration is not None


def test_growth_bound(toy):
    toy.growth = (0.0, 0.0)
    with pytest.raises(GrowthBoundError, match="exceeds"):
        stochastic_uzawa(toy, StepSchedule(), 1, seed=0)
    stochastic_uzawa(toy, StepSchedule(), 1, seed=0, check_growth=False)


def test_non_finite_gradient(toy):
    class Broken(ToyPopulation):
        def simulate(self, agent, policy, stream):
            return np.full_like(policy, np.nan), 0.0

    toy.population = Broken()
    with pytest.raises(NonFiniteGradientError):
        stochastic_uzawa(toy, StepSchedule(), 3, seed=0)


def test_failing_agent_is_wrapped(toy):
    class Failing(ToyPopulation):
        def best_response(self, agent, prices):
            raise RuntimeError("boom")

    toy.population = Failing()
    with pytest.raises(SolverError, match="boom") as excinfo:
        stochastic_gradient(toy, toy.prices(), seed=0, iteration=4)
    assert excinfo.value.agent == 0
    assert excinfo.value.iteration == 4


def test_trace_thin_and_columns():
    problem = make_toy_problem(n=1, n_slots=2)
    trace = stochastic_uzawa(problem, StepSchedule(), 10, seed=0)
    thin = trace.thin(3)
    np.testing.assert_array_equal(thin.ks, [0, 3, 6, 9])
    np.testing.assert_array_equal(thin.final.values, trace.final.values)
    assert thin.iterations == 10

    columns = trace.columns()
    assert set(columns) == {"k", "rho_k", "channel", "slot", "lambda", "Y"}
    assert len(columns["k"]) == 11 * 2
    assert np.isnan(columns["Y"][-1])

    with pytest.raises(ValueError, match="`every` must be at least 1"):
        trace.thin(0)


def test_trace_to_csv(tmp_path, toy):
    trace = stochastic_uzawa(toy, StepSchedule(), 4, seed=9)
    path = trace.to_csv(tmp_path / "trace.csv")
    df = pd.read_csv(path)
    assert df.columns.to_list() == ["k", "rho_k", "channel", "slot", "lambda", "Y"]
    assert len(df) == 5
    with open(f"{path}.json") as f:
        metadata = json.load(f)
    assert metadata["seed"] == 9
    assert metadata["iterations"] == 4
    assert metadata["instance_hash"] == toy.fingerprint()


def test_trace_requires_final_row():
    with pytest.raises(ValueError, match="one more row"):
        DualTrace(
            channels=("energy",),
            ks=np.arange(2),
            lambdas=np.zeros((2, 1, 1)),
            gradients=np.zeros((2, 1, 1)),
            steps=np.zeros(2),
        )


@pytest.mark.parametrize("lam", [-0.5, 0.0, 0.7])
def test_dual_value(lam):
    problem = make_toy_problem(n=1)
    prices = problem.prices([[lam]])
    assert exact_dual_value(problem, prices) == pytest.approx(toy_dual_value(lam))

    estimate = estimate_dual_value(problem, prices, samples=5, seed=0)
    assert estimate.value == pytest.approx(toy_dual_value(lam))
    assert estimate.half_width == 0.0


def test_dual_value_with_noise():
    problem = make_toy_problem(n=50, noise=1.0)
    prices = problem.prices([[-0.5]])
    estimate = estimate_dual_value(problem, prices, samples=40, seed=2)
    exact = toy_dual_value(-0.5, noise=1.0)
    assert exact_dual_value(problem, prices) == pytest.approx(exact)
    low, high = estimate.ci
    assert low - 0.05 < exact < high + 0.05


def test_dual_value_tracking(toy):
    trace = stochastic_uzawa(toy, StepSchedule(1.0, 10.0), 20, seed=0, track_every=10)
    assert np.isnan(trace.dual_values[5])
    assert trace.dual_values[0] == pytest.approx(toy_dual_value(0.0))
    assert trace.dual_values[20] == pytest.approx(toy_dual_value(trace.final.values[0, 0]))


def test_gap_noiseless_is_zero():
    problem = make_toy_problem(n=3)
    gap = estimate_gap(problem, problem.prices([[-0.5]]), samples=4)
    assert gap.estimate == pytest.approx(0.0, abs=1e-12)
    assert gap.exact_reference


def test_gap_shrinks_with_n():
    # for the quadratic aggregate the gap is noise^2 / (2 n) per slot
    gaps = []
    for n in (4, 64):
        problem = make_toy_problem(n=n, noise=1.0)
        gap = estimate_gap(problem, problem.prices([[-0.5]]), samples=200, seed=1)
        assert abs(gap.estimate - 0.5 / n) < 3 * gap.half_width + 1e-3
        gaps.append(gap.estimate)
    assert gaps[1] < gaps[0]


def test_gap_bounds():
    assert smooth_gap_bound(2.0, 3.0, 9) == pytest.approx(2.0)
    assert lipschitz_gap_bound(2.0, 3.0, 9) == pytest.approx(2.0)


def test_gap_positive_for_one_noisy_lqg_agent():
    problem = make_lqg_problem([LQGAgentParams(C=1.0)], horizon=5)
    gap = estimate_gap(problem, exact_saddle_point(problem), samples=400, seed=0)
    assert gap.exact_reference
    assert gap.estimate - gap.half_width > 0


def test_deterministic_dual_value_is_nondecreasing():
    problem = LQGFamily(horizon=3, heterogeneity=0.3, seed=2).problem(3)
    _, trace = deterministic_uzawa(problem, StepSchedule(1.0, 10.0), 40)
    values = np.array([exact_dual_value(problem, trace.price(r)) for r in range(41)])
    assert np.all(np.diff(values) >= -1e-10 * np.abs(values[1:]).max())
    assert values[-1] > values[0]


def test_sampled_gradient_variance_scales_with_m():
    n = 20
    problem = make_toy_problem(n=n, noise=1.0)
    prices = problem.prices([[-0.5]])
    variances = {}
    for m in (1, n):
        draws = [stochastic_gradient(problem, prices, 3, k, m=m)[0, 0] for k in range(800)]
        variances[m] = np.var(draws, ddof=1)
    assert variances[1] == pytest.approx(1.0, rel=0.2)
    assert 0.6 * n <= variances[1] / variances[n] <= 1.5 * n

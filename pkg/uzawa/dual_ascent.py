"""
Dual ascent on the price of the coupling constraint.

Three variants share one loop:

- `stochastic_uzawa`: every agent contributes one fresh realization per
  iteration;
- `sampled_stochastic_uzawa`: only `m` agents, drawn uniformly with
  replacement, are solved and simulated per iteration;
- `deterministic_uzawa`: the exact expected gradient is used, for
  populations able to compute it.
"""

import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.stats as st

from .core import (
    PriceSignal,
    ProblemInstance,
    StepSchedule,
    StreamPurpose,
    derive_seed,
    sample_indices,
    step_rho,
)
from .exceptions import (
    DivergenceError,
    GrowthBoundError,
    MissingCapabilityError,
    NonFiniteGradientError,
    SolverError,
)
from ._utils import _write_csv, _write_json

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR: float = 1e6


@dataclass
class DualTrace:
    """
    Record of a dual ascent run.

    Row `r` holds the iteration index `ks[r]`, the price `lambdas[r]` at
    that iteration, the step `steps[r]` and the gradient `gradients[r]`
    used to move to the next iteration. `lambdas` has one extra row, the
    final price.

    Attributes:
        channels (tuple[str, ...]): Price channel names.
        ks (np.ndarray): Iteration index of every row, shape `(R,)`.
        lambdas (np.ndarray): Prices, shape `(R + 1, channels, slots)`.
        gradients (np.ndarray): Gradients, shape `(R, channels, slots)`.
        steps (np.ndarray): Steps, shape `(R,)`.
        dual_values (np.ndarray): Dual value estimates per price row, NaN
            where not tracked.
        dual_half_widths (np.ndarray): 95% half-widths of `dual_values`.
        wall_times (np.ndarray): Seconds spent in every iteration.
        metadata (dict): Seed, schedule, algorithm and instance hash.
    """

    channels: tuple[str, ...]
    ks: np.ndarray
    lambdas: np.ndarray
    gradients: np.ndarray
    steps: np.ndarray
    dual_values: np.ndarray = field(default=None)  # type: ignore[assignment]
    dual_half_widths: np.ndarray = field(default=None)  # type: ignore[assignment]
    wall_times: np.ndarray = field(default=None)  # type: ignore[assignment]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        rows = len(self.ks)
        if self.lambdas.shape[0] != rows + 1:
            raise ValueError("`lambdas` must have one more row than `ks`")
        if self.dual_values is None:
            self.dual_values = np.full(rows + 1, np.nan)
        if self.dual_half_widths is None:
            self.dual_half_widths = np.full(rows + 1, np.nan)
        if self.wall_times is None:
            self.wall_times = np.zeros(rows)

    @property
    def iterations(self) -> int:
        """Number of dual iterations performed."""
        return int(self.metadata.get("iterations", len(self.ks)))

    @property
    def final(self) -> PriceSignal:
        return PriceSignal(self.lambdas[-1], self.channels)

    def price(self, row: int) -> PriceSignal:
        return PriceSignal(self.lambdas[row], self.channels)

    def update_residual(self) -> float:
        """
        Largest deviation from `lambda^{k+1} = lambda^k + rho_k Y^{k+1}`
        over consecutive stored rows. Zero for unthinned traces.
        """
        if len(self.ks) == 0:
            return 0.0
        consecutive = np.append(np.diff(self.ks) == 1, True)
        predicted = self.lambdas[:-1] + self.steps[:, None, None] * self.gradients
        deviation = np.abs(self.lambdas[1:] - predicted)[consecutive]
        return float(deviation.max(initial=0.0))

    def thin(self, every: int) -> "DualTrace":
        """Keep one row out of `every`, plus the final price."""
        if every < 1:
            raise ValueError(f"`every` must be at least 1, not {every}")
        rows = np.arange(0, len(self.ks), every)
        price_rows = np.append(rows, len(self.ks))
        metadata = dict(self.metadata, thinned=every, iterations=self.iterations)
        return DualTrace(
            channels=self.channels,
            ks=self.ks[rows],
            lambdas=self.lambdas[price_rows],
            gradients=self.gradients[rows],
            steps=self.steps[rows],
            dual_values=self.dual_values[price_rows],
            dual_half_widths=self.dual_half_widths[price_rows],
            wall_times=self.wall_times[rows],
            metadata=metadata,
        )

    def columns(self) -> dict[str, np.ndarray]:
        """Long-format columns `k, rho_k, channel, slot, lambda, Y`."""
        n_channels, n_slots = self.lambdas.shape[1:]
        cells = n_channels * n_slots
        ks = np.append(self.ks, self.iterations)
        steps = np.append(self.steps, np.nan)
        gradients = np.concatenate(
            [self.gradients, np.full((1, n_channels, n_slots), np.nan)]
        )
        return {
            "k": np.repeat(ks, cells),
            "rho_k": np.repeat(steps, cells),
            "channel": np.tile(np.repeat(np.array(self.channels), n_slots), len(ks)),
            "slot": np.tile(np.arange(n_slots), n_channels * len(ks)),
            "lambda": self.lambdas.reshape(-1),
            "Y": gradients.reshape(-1),
        }

    def to_csv(self, path: str | os.PathLike, sidecar: bool = True) -> str:
        """
        Write the trace in long format, plus a JSON metadata sidecar
        named `<path>.json`. Wall times are not written.
        """
        path = _write_csv(self.columns(), path)
        if sidecar:
            _write_json(f"{path}.json", self.metadata)
        return path


@dataclass
class DualValueEstimate:
    """
    Monte Carlo estimate of the dual function.

    Attributes:
        value (float): Point estimate.
        half_width (float): Half-width of the confidence interval.
        n_samples (int): Number of population draws.
        confidence (float): Confidence level in percent.
    """

    value: float
    half_width: float
    n_samples: int
    confidence: float = 95.0

    @property
    def ci(self) -> tuple[float, float]:
        return self.value - self.half_width, self.value + self.half_width


@dataclass
class GapEstimate:
    """
    Monte Carlo estimate of `E[F0(mean u)] - F0(E[mean u])`.

    Attributes:
        estimate (float): Point estimate of the gap.
        half_width (float): 95% half-width.
        n_samples (int): Number of population draws.
        reference (float): `F0` at the expected aggregate.
        exact_reference (bool): Whether `reference` was computed exactly.
    """

    estimate: float
    half_width: float
    n_samples: int
    reference: float
    exact_reference: bool

    @property
    def upper(self) -> float:
        return self.estimate + self.half_width


def _half_width(samples: np.ndarray, confidence: float = 95.0) -> float:
    n = samples.size
    if n < 2 or np.all(samples == samples[0]):
        return 0.0
    t_critical = st.t.ppf(0.5 + confidence / 200, n - 1)
    return float(t_critical * samples.std(ddof=1) / np.sqrt(n))


def stochastic_gradient(
    problem: ProblemInstance,
    prices: PriceSignal,
    seed: int,
    iteration: int,
    m: int | None = None,
    workers: int = 1,
    purpose: StreamPurpose = StreamPurpose.AGENT,
) -> np.ndarray:
    """
    One realization of `Y = mean_i u_i(lambda)(omega) - v(lambda)`.

    Args:
        problem: The decomposed problem.
        prices: Current prices.
        seed: Master seed.
        iteration: Iteration index used for noise derivation.
        m: Sample size. `None` uses every agent once.
        workers: Maximum number of concurrent agent solves.
        purpose: Namespace of the agent noise streams.
    """
    n = problem.n_agents
    if m is None:
        agents = np.arange(n)
        draws = None
    else:
        agents = sample_indices(seed, iteration, n, m)
        draws = np.arange(m)
    try:
        v = problem.aggregate.v_opt(prices)
    except SolverError:
        raise
    except Exception as exc:
        raise SolverError(f"aggregate solve failed: {exc}", iteration=iteration) from exc
    realization = problem.population.realize(
        agents, prices, seed, iteration, draws=draws, purpose=purpose, workers=workers
    )
    return realization.coupling.mean(axis=0) - v


def _dual_ascent(
    problem: ProblemInstance,
    schedule: StepSchedule,
    K: int,
    gradient: Callable[[int, PriceSignal], np.ndarray],
    lambda0: PriceSignal | np.ndarray | None,
    metadata: dict,
    track: Callable[[int, PriceSignal], "DualValueEstimate"] | None,
    track_every: int | None,
    log_every: int | None,
    check_growth: bool,
) -> DualTrace:
    if K < 0:
        raise ValueError(f"`K` must be nonnegative, not {K}")
    lam = problem.prices() if lambda0 is None else problem.prices(
        lambda0.values if isinstance(lambda0, PriceSignal) else lambda0
    )
    shape = (len(problem.channels), problem.n_slots)
    if lam.shape != shape:
        raise ValueError(f"`lambda0` must have shape {shape}, not {lam.shape}")

    lambdas = np.empty((K + 1,) + shape)
    gradients = np.empty((K,) + shape)
    steps = np.empty(K)
    wall_times = np.empty(K)
    dual_values = np.full(K + 1, np.nan)
    dual_half_widths = np.full(K + 1, np.nan)
    lambdas[0] = lam.values
    limit = DIVERGENCE_FACTOR * (np.linalg.norm(lam.values) + 1.0)
    growth = problem.growth if check_growth else None
    log_every = max(1, K // 10) if log_every is None else log_every

    for k in range(K):
        start = time.perf_counter()
        prices = problem.prices(lambdas[k])
        if track is not None and track_every and k % track_every == 0:
            estimate = track(k, prices)
            dual_values[k], dual_half_widths[k] = estimate.value, estimate.half_width

        Y = gradient(k, prices)
        if not np.all(np.isfinite(Y)):
            raise NonFiniteGradientError("non-finite stochastic gradient", iteration=k)
        if growth is not None:
            M1, M2 = growth
            squared = float(np.sum(Y * Y))
            bound = M1 + M2 * float(np.sum(lambdas[k] ** 2))
            if squared > bound * (1 + 1e-9) + 1e-12:
                raise GrowthBoundError(
                    f"||Y||^2 = {squared:.6g} exceeds M1 + M2 ||lambda||^2 = {bound:.6g}",
                    iteration=k,
                )

        rho = step_rho(schedule, k)
        gradients[k] = Y
        steps[k] = rho
        lambdas[k + 1] = lambdas[k] + rho * Y
        norm = float(np.linalg.norm(lambdas[k + 1]))
        if norm > limit:
            raise DivergenceError(
                f"||lambda|| = {norm:.3g} exceeds the divergence guard {limit:.3g}",
                iteration=k,
            )
        wall_times[k] = time.perf_counter() - start
        if (k + 1) % log_every == 0 or k + 1 == K:
            logger.info(
                "k=%d rho=%.4g |Y|=%.4g |lambda|=%.4g",
                k + 1,
                rho,
                float(np.linalg.norm(Y)),
                norm,
            )

    if track is not None and track_every:
        estimate = track(K, problem.prices(lambdas[K]))
        dual_values[K], dual_half_widths[K] = estimate.value, estimate.half_width

    metadata = dict(
        metadata,
        iterations=K,
        schedule={"a": schedule.a, "b": schedule.b},
        instance_hash=problem.fingerprint(),
        channels=list(problem.channels),
        n_agents=problem.n_agents,
    )
    return DualTrace(
        channels=problem.channels,
        ks=np.arange(K),
        lambdas=lambdas,
        gradients=gradients,
        steps=steps,
        dual_values=dual_values,
        dual_half_widths=dual_half_widths,
        wall_times=wall_times,
        metadata=metadata,
    )


def stochastic_uzawa(
    problem: ProblemInstance,
    schedule: StepSchedule,
    K: int,
    seed: int,
    *,
    lambda0: PriceSignal | np.ndarray | None = None,
    workers: int = 1,
    track_every: int | None = None,
    dual_samples: int = 10,
    log_every: int | None = None,
    check_growth: bool = True,
) -> DualTrace:
    """
    Stochastic Uzawa: one realization of every agent per iteration.

    At iteration `k` the aggregate response `v(lambda^k)` and all `n` best
    responses are computed, each agent is simulated once with its own
    stream `derive_stream(seed, i, k)`, and the price moves along
    `Y^{k+1} = mean_i u_i - v`.

    Args:
        problem: The decomposed problem.
        schedule: Step sizes.
        K: Number of iterations.
        seed: Master seed.
        lambda0: Initial price, zero by default.
        workers: Maximum number of concurrent agent solves.
        track_every: Estimate the dual value every `track_every` iterations.
        dual_samples: Population draws per dual value estimate.
        log_every: Iterations between progress log lines.
        check_growth: Assert the gradient growth bound of the instance.

    Returns:
        The full `DualTrace`.
    """

    def gradient(k: int, prices: PriceSignal) -> np.ndarray:
        return stochastic_gradient(problem, prices, seed, k, workers=workers)

    return _dual_ascent(
        problem,
        schedule,
        K,
        gradient,
        lambda0,
        {"algorithm": "stochastic", "seed": int(seed)},
        _tracker(problem, seed, dual_samples, workers),
        track_every,
        log_every,
        check_growth,
    )


def sampled_stochastic_uzawa(
    problem: ProblemInstance,
    m: int,
    schedule: StepSchedule,
    K: int,
    seed: int,
    *,
    lambda0: PriceSignal | np.ndarray | None = None,
    workers: int = 1,
    track_every: int | None = None,
    dual_samples: int = 10,
    log_every: int | None = None,
    check_growth: bool = True,
) -> DualTrace:
    """
    Sampled Stochastic Uzawa: `m` agents drawn with replacement per iteration.

    The `j`-th sampled agent at iteration `k` is simulated with the stream
    `derive_stream(seed, I_j, k, draw=j)`, so repeated draws of the same
    agent get independent noise. `m > n` is allowed.

    Args:
        problem: The decomposed problem.
        m: Sample size, at least 1.
        schedule: Step sizes.
        K: Number of iterations.
        seed: Master seed.
        lambda0: Initial price, zero by default.
        workers: Maximum number of concurrent agent solves.
        track_every: Estimate the dual value every `track_every` iterations.
        dual_samples: Population draws per dual value estimate.
        log_every: Iterations between progress log lines.
        check_growth: Assert the gradient growth bound of the instance.

    Returns:
        The full `DualTrace`.
    """
    if m < 1:
        raise ValueError(f"`m` must be at least 1, not {m}")

    def gradient(k: int, prices: PriceSignal) -> np.ndarray:
        return stochastic_gradient(problem, prices, seed, k, m=m, workers=workers)

    return _dual_ascent(
        problem,
        schedule,
        K,
        gradient,
        lambda0,
        {"algorithm": "sampled", "seed": int(seed), "sample_size": int(m)},
        _tracker(problem, seed, dual_samples, workers),
        track_every,
        log_every,
        check_growth,
    )


def deterministic_uzawa(
    problem: ProblemInstance,
    schedule: StepSchedule,
    K: int,
    *,
    lambda0: PriceSignal | np.ndarray | None = None,
    workers: int = 1,
    log_every: int | None = None,
) -> tuple[PriceSignal, DualTrace]:
    """
    Exact gradient ascent on the dual function.

    Uses `Y = mean_i E[u_i(lambda)] - v(lambda)`, which requires agents with
    exact expected controls.

    Args:
        problem: The decomposed problem.
        schedule: Step sizes.
        K: Number of iterations.
        lambda0: Initial price, zero by default.
        workers: Maximum number of concurrent agent solves.
        log_every: Iterations between progress log lines.

    Returns:
        The final price and the trace.

    Raises:
        MissingCapabilityError: The agents cannot compute exact expectations.
    """
    if not problem.population.has_exact_expectation:
        raise MissingCapabilityError(
            f"{type(problem.population).__name__} has no exact expected control; "
            "use stochastic_uzawa instead"
        )

    def gradient(k: int, prices: PriceSignal) -> np.ndarray:
        expected = problem.population.expected_coupling(prices, workers=workers)
        return expected - problem.aggregate.v_opt(prices)

    trace = _dual_ascent(
        problem,
        schedule,
        K,
        gradient,
        lambda0,
        {"algorithm": "deterministic"},
        None,
        None,
        log_every,
        check_growth=False,
    )
    return trace.final, trace


def _tracker(problem: ProblemInstance, seed: int, samples: int, workers: int):
    def track(k: int, prices: PriceSignal) -> DualValueEstimate:
        return estimate_dual_value(
            problem,
            prices,
            samples,
            seed=derive_seed(seed, StreamPurpose.EVALUATION, k),
            workers=workers,
        )

    return track


def estimate_dual_value(
    problem: ProblemInstance,
    prices: PriceSignal,
    samples: int,
    seed: int = 0,
    workers: int = 1,
    confidence: float = 95.0,
) -> DualValueEstimate:
    """
    Monte Carlo estimate of the dual function.

    `W(lambda) = -F0*(lambda) + mean_i E[G_i(u_i) + <lambda, u_i>]`, where the
    conjugate is computed through the aggregate response,
    `F0*(lambda) = <lambda, v(lambda)> - F0(v(lambda))`.

    Args:
        problem: The decomposed problem.
        prices: Price at which the dual function is estimated.
        samples: Number of independent draws of the whole population.
        seed: Master seed of the evaluation streams.
        workers: Maximum number of concurrent agent solves.
        confidence: Confidence level of the interval, in percent.

    Returns:
        A `DualValueEstimate`.
    """
    if samples < 1:
        raise ValueError(f"`samples` must be at least 1, not {samples}")
    conjugate = problem.conjugate(prices)
    agents = np.arange(problem.n_agents)
    local = np.empty(samples)
    for s in range(samples):
        realization = problem.population.realize(
            agents, prices, seed, s, purpose=StreamPurpose.EVALUATION, workers=workers
        )
        values = realization.cost + problem.pairing(prices.values, realization.coupling)
        if not np.all(np.isfinite(values)):
            raise NonFiniteGradientError("non-finite local cost", iteration=s)
        local[s] = values.mean()
    estimates = local - conjugate
    return DualValueEstimate(
        value=float(estimates.mean()),
        half_width=_half_width(estimates, confidence),
        n_samples=samples,
        confidence=confidence,
    )


def exact_dual_value(problem: ProblemInstance, prices: PriceSignal) -> float:
    """Dual function from the agents' exact local values."""
    local = problem.population.expected_local_values(prices)
    return float(np.mean(local) - problem.conjugate(prices))


def estimate_gap(
    problem: ProblemInstance,
    prices: PriceSignal,
    samples: int,
    seed: int = 0,
    reference_samples: int | None = None,
    workers: int = 1,
    confidence: float = 95.0,
) -> GapEstimate:
    """
    Estimate the price of decentralization `E[F0(mean u)] - F0(E[mean u])`.

    The policies `u(lambda)` are decentralized: every agent only sees its own
    noise. The expectation inside `F0` is exact when the agents provide
    expected controls, otherwise it is estimated on an independent sample of
    `reference_samples` population draws.

    Args:
        problem: The decomposed problem.
        prices: Price defining the policies.
        samples: Population draws for the outer expectation.
        seed: Master seed of the evaluation streams.
        reference_samples: Population draws for the inner expectation.
            Defaults to `10 * samples`.
        workers: Maximum number of concurrent agent solves.
        confidence: Confidence level of the interval, in percent.

    Returns:
        A `GapEstimate`.
    """
    if samples < 1:
        raise ValueError(f"`samples` must be at least 1, not {samples}")
    population = problem.population
    agents = np.arange(problem.n_agents)

    def draw(s: int) -> np.ndarray:
        realization = population.realize(
            agents, prices, seed, s, purpose=StreamPurpose.EVALUATION, workers=workers
        )
        return realization.coupling.mean(axis=0)

    outer = np.array([problem.aggregate.evaluate(draw(s)) for s in range(samples)])
    if population.has_exact_expectation:
        reference = problem.aggregate.evaluate(
            population.expected_coupling(prices, workers=workers)
        )
        exact = True
    else:
        reference_samples = 10 * samples if reference_samples is None else reference_samples
        mean = np.mean(
            [draw(samples + s) for s in range(reference_samples)], axis=0
        )
        reference = problem.aggregate.evaluate(mean)
        exact = False
    gaps = outer - reference
    return GapEstimate(
        estimate=float(gaps.mean()),
        half_width=_half_width(gaps, confidence),
        n_samples=samples,
        reference=float(reference),
        exact_reference=exact,
    )


def smooth_gap_bound(lipschitz: float, bound: float, n: int) -> float:
    """`c M^2 / n` for an aggregate cost with `c`-Lipschitz gradient."""
    return lipschitz * bound**2 / n


def lipschitz_gap_bound(lipschitz: float, bound: float, n: int) -> float:
    """`gamma M / sqrt(n)` for a `gamma`-Lipschitz aggregate cost."""
    return lipschitz * bound / np.sqrt(n)

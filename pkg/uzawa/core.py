"""
Problem abstraction shared by every solver: time grids, price signals,
step-size schedules, reproducible noise streams and the agent/aggregate
oracle interfaces that the dual ascent engines consume.
"""

import hashlib
import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Sequence

import numpy as np

from .exceptions import MissingCapabilityError, SolverError
from ._utils import _frame, _ordered_map

logger = logging.getLogger(__name__)

MAX_SEED: int = 2**64 - 1


@dataclass(frozen=True)
class TimeGrid:
    """
    Finite time grid with an optional coarse slot structure.

    Attributes:
        horizon (int): Number of fine steps T.
        dt (float): Length of one fine step, in seconds (1.0 for unit-step
            discrete problems).
        steps_per_slot (int): Number of fine steps per coarse slot. Defaults
            to 1, in which case slots and steps coincide.
    """

    horizon: int
    dt: float = 1.0
    steps_per_slot: int = 1

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"`horizon` must be at least 1, not {self.horizon}")
        if not self.dt > 0:
            raise ValueError(f"`dt` must be positive, not {self.dt}")
        if self.steps_per_slot < 1 or self.horizon % self.steps_per_slot != 0:
            raise ValueError(
                f"`steps_per_slot` must divide the horizon ({self.horizon}), "
                f"not {self.steps_per_slot}"
            )

    @property
    def n_slots(self) -> int:
        return self.horizon // self.steps_per_slot

    @property
    def slot_length(self) -> float:
        return self.dt * self.steps_per_slot

    def slot_of(self, step: int | np.ndarray) -> int | np.ndarray:
        """Coarse slot containing a fine step."""
        return np.minimum(np.asarray(step) // self.steps_per_slot, self.n_slots - 1)


@dataclass(frozen=True, eq=False)
class PriceSignal:
    """
    The dual variable: piecewise-constant prices per named channel and slot.

    Attributes:
        values (np.ndarray): Matrix of shape `(channels, slots)`.
        channels (tuple[str, ...]): Channel names, e.g. `("energy", "response")`.
    """

    values: np.ndarray
    channels: tuple[str, ...] = ("energy",)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[np.newaxis, :]
        if values.ndim != 2:
            raise ValueError(
                f"`values` must be a (channels, slots) matrix, not {values.ndim}-D"
            )
        if len(self.channels) != values.shape[0]:
            raise ValueError(
                f"`channels` has {len(self.channels)} names for "
                f"{values.shape[0]} rows of `values`"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("`values` must only contain finite prices")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channels", tuple(self.channels))

    @classmethod
    def zeros(cls, channels: Sequence[str], n_slots: int) -> "PriceSignal":
        return cls(np.zeros((len(channels), n_slots)), tuple(channels))

    def with_values(self, values: np.ndarray) -> "PriceSignal":
        return PriceSignal(values, self.channels)

    def channel(self, name: str) -> np.ndarray:
        return self.values[self.channels.index(name)]

    def to_frame(self, backend: str = "pandas"):
        """Wide native dataframe with a `slot` column and one column per channel."""
        columns = {"slot": np.arange(self.n_slots)}
        columns.update({name: self.values[i] for i, name in enumerate(self.channels)})
        return _frame(columns, backend=backend).to_native()

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_slots(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PriceSignal):
            return NotImplemented
        return self.channels == other.channels and np.array_equal(
            self.values, other.values
        )

    def __hash__(self) -> int:
        return hash((self.channels, self.values.tobytes()))


@dataclass(frozen=True)
class StepSchedule:
    """
    Robbins-Monro step sizes `rho_k = a / (b + k + 1)` for 0-based iterations.

    Attributes:
        a (float): Positive scale.
        b (float): Nonnegative shift.
    """

    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise ValueError(f"`a` must be positive, not {self.a}")
        if not (np.isfinite(self.b) and self.b >= 0):
            raise ValueError(f"`b` must be nonnegative, not {self.b}")

    def rho(self, k: int) -> float:
        return step_rho(self, k)

    def steps(self, K: int) -> np.ndarray:
        """The first `K` steps as an array."""
        return self.a / (self.b + np.arange(K) + 1.0)

    def partial_sums(self, K: int) -> tuple[float, float]:
        """
        Partial sums of the schedule and of its squares over `K` iterations.

        Returns:
            `(sum rho_k, sum rho_k^2)` for `k < K`.
        """
        steps = self.steps(K)
        return float(steps.sum()), float(np.square(steps).sum())

    def square_sum_bound(self) -> float:
        """Closed-form upper bound of `sum_k rho_k^2` over all iterations."""
        # sum_{j >= 1} 1 / (b + j)^2 <= 1 / (1 + b)^2 + 1 / (1 + b)
        return self.a**2 * (1.0 / (1.0 + self.b) ** 2 + 1.0 / (1.0 + self.b))


def step_rho(schedule: StepSchedule, k: int) -> float:
    """
    Step size of the dual ascent at 0-based iteration `k`.

    Args:
        schedule: A valid step schedule.
        k: Iteration index, `k >= 0`.

    Returns:
        `a / (b + k + 1)`.
    """
    if k < 0:
        raise ValueError(f"`k` must be nonnegative, not {k}")
    return schedule.a / (schedule.b + k + 1)


class StreamPurpose(IntEnum):
    """Namespaces of the noise derivation tree."""

    AGENT = 0
    BLOCK = 1
    SAMPLING = 2
    EVALUATION = 3
    REPLICATE = 4


def _check_seed(master: int) -> int:
    master = int(master)
    if not 0 <= master <= MAX_SEED:
        raise ValueError(f"`master` seed must be a 64-bit unsigned integer, not {master}")
    return master


@dataclass(frozen=True)
class NoiseStream:
    """
    Counter-based Gaussian stream identified by a master seed and a path.

    The same `(master, path)` always yields the same values; every call to
    `generator()` restarts the stream from its beginning.
    """

    master: int
    path: tuple[int, ...]

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master, spawn_key=self.path)
        return np.random.default_rng(seq)

    def standard_normal(self, size: int | tuple[int, ...]) -> np.ndarray:
        return self.generator().standard_normal(size)


def derive_stream(
    master: int,
    agent: int,
    iteration: int,
    draw: int = 0,
    purpose: StreamPurpose = StreamPurpose.AGENT,
) -> NoiseStream:
    """
    Noise stream of one agent at one dual iteration.

    Args:
        master: 64-bit master seed.
        agent: Agent index.
        iteration: Dual iteration index.
        draw: Draw index inside the iteration (sample position for sampled
            variants).
        purpose: Namespace of the stream.

    Returns:
        A `NoiseStream` independent of every stream with a different path.
    """
    master = _check_seed(master)
    return NoiseStream(master, (int(purpose), int(agent), int(iteration), int(draw)))


def derive_block_stream(
    master: int,
    iteration: int,
    purpose: StreamPurpose = StreamPurpose.BLOCK,
) -> NoiseStream:
    """Stream of a whole vectorized population at one iteration."""
    master = _check_seed(master)
    return NoiseStream(master, (int(purpose), int(iteration)))


def derive_seed(master: int, *path: int) -> int:
    """Child 64-bit master seed, e.g. for independent replicates."""
    master = _check_seed(master)
    seq = np.random.SeedSequence(entropy=master, spawn_key=tuple(int(p) for p in path))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def sample_indices(master: int, iteration: int, n: int, m: int) -> np.ndarray:
    """`m` agent indices drawn uniformly with replacement from `range(n)`."""
    if m < 1:
        raise ValueError(f"`m` must be at least 1, not {m}")
    rng = derive_block_stream(master, iteration, StreamPurpose.SAMPLING).generator()
    return rng.integers(0, n, size=m)


@dataclass
class AgentRealization:
    """
    Realized coupling quantities and local costs of a batch of agents.

    Attributes:
        coupling (np.ndarray): Shape `(m, channels, slots)`.
        cost (np.ndarray): Local cost `G_i` of every realization, shape `(m,)`.
    """

    coupling: np.ndarray
    cost: np.ndarray


class AgentPopulation(ABC):
    """
    The `n` agent oracles of a decomposed problem.

    Subclasses provide best responses and simulations agent by agent; the
    batched `realize` is what the engines call and may be overridden by
    populations that vectorize across agents.
    """

    has_exact_expectation: bool = False

    @property
    @abstractmethod
    def n_agents(self) -> int: ...

    @abstractmethod
    def best_response(self, agent: int, prices: PriceSignal) -> Any:
        """Policy minimizing the agent's cost plus the price pairing."""

    @abstractmethod
    def simulate(
        self, agent: int, policy: Any, stream: NoiseStream
    ) -> tuple[np.ndarray, float]:
        """One realization: coupling matrix `(channels, slots)` and local cost."""

    def exact_expected_control(self, agent: int, policy: Any) -> np.ndarray:
        raise MissingCapabilityError(
            f"{type(self).__name__} cannot compute exact expected controls"
        )

    def expected_local_values(self, prices: PriceSignal) -> np.ndarray:
        """Exact `min E[G_i + <lambda, u_i>]` of every agent."""
        raise MissingCapabilityError(
            f"{type(self).__name__} cannot compute exact local values"
        )

    def realize(
        self,
        agents: np.ndarray,
        prices: PriceSignal,
        master: int,
        iteration: int,
        draws: np.ndarray | None = None,
        purpose: StreamPurpose = StreamPurpose.AGENT,
        workers: int = 1,
    ) -> AgentRealization:
        """
        Best responses and one realization for every listed agent.

        Args:
            agents: Agent indices (repetitions allowed).
            prices: Current price signal.
            master: Master seed of the run.
            iteration: Dual iteration index.
            draws: Draw index of every entry of `agents`. Defaults to zeros.
            purpose: Namespace of the noise streams.
            workers: Maximum number of concurrent solves.

        Returns:
            Realizations in the order of `agents`.
        """
        agents = np.asarray(agents, dtype=int)
        draws = np.zeros_like(agents) if draws is None else np.asarray(draws, dtype=int)
        unique = [int(i) for i in np.unique(agents)]

        def solve(agent: int) -> Any:
            try:
                return self.best_response(agent, prices)
            except SolverError:
                raise
            except Exception as exc:
                raise SolverError(
                    f"best response failed: {exc}", iteration=iteration, agent=agent
                ) from exc

        policies = dict(zip(unique, _ordered_map(solve, unique, workers)))

        def run(job: tuple[int, int]) -> tuple[np.ndarray, float]:
            agent, draw = job
            stream = derive_stream(master, agent, iteration, draw, purpose)
            return self.simulate(agent, policies[agent], stream)

        jobs = [(int(i), int(j)) for i, j in zip(agents, draws)]
        results = _ordered_map(run, jobs, workers)
        coupling = np.stack([r[0] for r in results])
        cost = np.array([r[1] for r in results], dtype=float)
        return AgentRealization(coupling, cost)

    def expected_coupling(self, prices: PriceSignal, workers: int = 1) -> np.ndarray:
        """Mean over agents of the exact expected coupling quantities."""
        if not self.has_exact_expectation:
            raise MissingCapabilityError(
                f"{type(self).__name__} cannot compute exact expected controls"
            )

        def expect(agent: int) -> np.ndarray:
            return self.exact_expected_control(agent, self.best_response(agent, prices))

        expected = _ordered_map(expect, list(range(self.n_agents)), workers)
        return np.stack(expected).mean(axis=0)


class AggregateOracle(ABC):
    """
    The aggregate cost `F0` and its price response `v(lambda)`.

    Attributes:
        lipschitz (float | None): Lipschitz constant of the gradient of `F0`,
            when known.
    """

    lipschitz: float | None = None

    @abstractmethod
    def evaluate(self, v: np.ndarray) -> float:
        """`F0(v)` for a coupling matrix `v` of shape `(channels, slots)`."""

    @abstractmethod
    def v_opt(self, prices: PriceSignal) -> np.ndarray:
        """A minimizer of `F0(v) - <lambda, v>`."""


@dataclass
class ProblemInstance:
    """
    A price-decomposable problem: `n` agents coupled through their mean.

    The Lagrangian is `F0(v) + (1/n) sum_i G_i(u_i) + <lambda, mean_i u_i - v>`
    with the weighted pairing `<lambda, x> = sum(weight * lambda * x)`.

    Attributes:
        population (AgentPopulation): The agent oracles.
        aggregate (AggregateOracle): The aggregate oracle.
        channels (tuple[str, ...]): Names of the price channels.
        weight (np.ndarray): Pairing weights, shape `(channels, slots)`.
        description (dict): JSON-serializable description used for hashing.
        growth (tuple[float, float] | None): Constants `(M1, M2)` such that
            `||Y||^2 <= M1 + M2 ||lambda||^2` on every iteration.
    """

    population: AgentPopulation
    aggregate: AggregateOracle
    channels: tuple[str, ...]
    weight: np.ndarray
    description: dict = field(default_factory=dict)
    growth: tuple[float, float] | None = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=float)
        if self.weight.ndim != 2 or self.weight.shape[0] != len(self.channels):
            raise ValueError(
                "`weight` must be a (channels, slots) matrix matching `channels`"
            )

    @property
    def n_agents(self) -> int:
        return self.population.n_agents

    @property
    def n_slots(self) -> int:
        return self.weight.shape[1]

    def prices(self, values: np.ndarray | None = None) -> PriceSignal:
        if values is None:
            return PriceSignal.zeros(self.channels, self.n_slots)
        return PriceSignal(values, self.channels)

    def pairing(self, lam: np.ndarray, x: np.ndarray) -> np.ndarray | float:
        """Weighted pairing, summed over the last two axes of `x`."""
        return np.sum(self.weight * np.asarray(lam) * np.asarray(x), axis=(-2, -1))

    def conjugate(self, prices: PriceSignal) -> float:
        """`F0*(lambda) = <lambda, v(lambda)> - F0(v(lambda))`."""
        v = self.aggregate.v_opt(prices)
        return float(self.pairing(prices.values, v) - self.aggregate.evaluate(v))

    def fingerprint(self) -> str:
        """SHA-256 of the instance description."""
        payload = json.dumps(
            {
                "class": type(self.population).__name__,
                "aggregate": type(self.aggregate).__name__,
                "channels": list(self.channels),
                "weight": self.weight.tolist(),
                "description": self.description,
            },
            sort_keys=True,
            default=str,
        )
        return hashlib.sha256(payload.encode()).hexdigest()

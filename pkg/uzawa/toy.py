"""
Quadratic toy problem with a closed-form saddle point.

Every agent pays `1/2 u^2` per slot and the aggregate pays
`1/2 (v - target)^2`; with a unit pairing weight the best responses are
`u = -lambda` and `v = target + lambda`, so the saddle point is
`lambda* = -target / 2` with dual value `target^2 / 4` per slot.
"""

from typing import Any

import numpy as np

from .core import (
    AgentPopulation,
    AggregateOracle,
    NoiseStream,
    PriceSignal,
    ProblemInstance,
)


class ToyPopulation(AgentPopulation):
    """
    Identical agents with control `u = -lambda + noise * xi`.

    Args:
        n: Number of agents.
        noise: Standard deviation of the additive control noise.
        n_slots: Number of price slots.
    """

    has_exact_expectation = True

    def __init__(self, n: int = 1, noise: float = 0.0, n_slots: int = 1):
        if n < 1:
            raise ValueError(f"`n` must be at least 1, not {n}")
        if noise < 0:
            raise ValueError(f"`noise` must be nonnegative, not {noise}")
        self._n = int(n)
        self.noise = float(noise)
        self.n_slots = int(n_slots)

    @property
    def n_agents(self) -> int:
        return self._n

    def best_response(self, agent: int, prices: PriceSignal) -> np.ndarray:
        return -prices.values

    def simulate(
        self, agent: int, policy: Any, stream: NoiseStream
    ) -> tuple[np.ndarray, float]:
        u = policy
        if self.noise > 0:
            u = policy + self.noise * stream.standard_normal(policy.shape)
        return u, float(0.5 * np.sum(u * u))

    def exact_expected_control(self, agent: int, policy: Any) -> np.ndarray:
        return np.asarray(policy)

    def expected_local_values(self, prices: PriceSignal) -> np.ndarray:
        lam = prices.values
        value = float(np.sum(-0.5 * lam**2 + 0.5 * self.noise**2))
        return np.full(self._n, value)


class QuadraticAggregate(AggregateOracle):
    """`F0(v) = curvature / 2 * ||v - target||^2` with a unit pairing."""

    def __init__(self, target: float | np.ndarray = 1.0, curvature: float = 1.0):
        if not curvature > 0:
            raise ValueError(f"`curvature` must be positive, not {curvature}")
        self.target = np.asarray(target, dtype=float)
        self.curvature = float(curvature)
        self.lipschitz = self.curvature

    def evaluate(self, v: np.ndarray) -> float:
        return float(0.5 * self.curvature * np.sum((np.asarray(v) - self.target) ** 2))

    def v_opt(self, prices: PriceSignal) -> np.ndarray:
        return self.target + prices.values / self.curvature


def make_toy_problem(
    n: int = 1, noise: float = 0.0, target: float = 1.0, n_slots: int = 1
) -> ProblemInstance:
    """
    Build the quadratic toy instance.

    Args:
        n: Number of agents.
        noise: Standard deviation of the agents' control noise.
        target: Target of the aggregate cost.
        n_slots: Number of price slots.

    Returns:
        A `ProblemInstance` with one `"energy"` channel.
    """
    population = ToyPopulation(n=n, noise=noise, n_slots=n_slots)
    aggregate = QuadraticAggregate(target=np.full((1, n_slots), float(target)))
    growth = (2.0 * n_slots * target**2, 8.0) if noise == 0 else None
    return ProblemInstance(
        population=population,
        aggregate=aggregate,
        channels=("energy",),
        weight=np.ones((1, n_slots)),
        description={
            "problem": "toy",
            "n": n,
            "noise": noise,
            "target": target,
            "n_slots": n_slots,
        },
        growth=growth,
    )


def toy_saddle_point(target: float = 1.0) -> float:
    """Analytic optimal price of the toy problem."""
    return -0.5 * target


def toy_dual_value(lam: float, target: float = 1.0, noise: float = 0.0) -> float:
    """Analytic dual function of the one-slot toy problem."""
    return -lam * target - lam**2 + 0.5 * noise**2

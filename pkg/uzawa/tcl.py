"""
Thermostatically controlled loads (TCLs): thermal dynamics, ON/OFF best
responses by dynamic programming on a Markov chain approximation, batched
simulation and the thermostat baseline.

Temperatures are in degrees Celsius, powers in W and times in seconds. The
coupling of a TCL is the slot mean of its consumption `u` and of its
(negated) frequency response `r = u * clamp((X - X_min) / (X_max - X_min))`.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core import (
    AgentPopulation,
    AgentRealization,
    NoiseStream,
    PriceSignal,
    StreamPurpose,
    TimeGrid,
    derive_stream,
)
from .exceptions import GridValidityError, SolverError
from ._utils import _ordered_map

logger = logging.getLogger(__name__)

SECONDS_PER_HOUR: float = 3600.0


def hourly_sigma(sigma: float) -> float:
    """Volatility in degC/sqrt(s) from a value in degC/sqrt(h)."""
    if sigma < 0:
        raise ValueError(f"`sigma` must be nonnegative, not {sigma}")
    return sigma / math.sqrt(SECONDS_PER_HOUR)


@dataclass(frozen=True)
class TCLParams:
    """
    Parameters of one TCL (a freezer by default).

    Attributes:
        gamma (float): Thermal time constant in s.
        x_off (float): Ambient temperature the device drifts to when OFF.
        zeta (float): Heat exchange per W of consumption, degC/W.
        sigma (float): Volatility of the temperature in degC/sqrt(s).
        p_on (float): Consumption when ON, in W.
        alpha (float): Comfort weight per second and degC^2.
        beta (float): Band violation weight per second and degC^2.
        x_target (float): Target temperature.
        x_min (float): Lower end of the comfort band.
        x_max (float): Upper end of the comfort band.
        terminal_weight (float): Weight of the squared terminal deviation.
        x0 (float): Initial temperature.
    """

    gamma: float = 1.5e4
    x_off: float = 20.0
    zeta: float = 0.3056
    sigma: float = 0.0
    p_on: float = 180.0
    alpha: float = 0.2e-4
    beta: float = 50.0
    x_target: float = -17.5
    x_min: float = -21.0
    x_max: float = -14.0
    terminal_weight: float = 0.1
    x0: float = -17.5

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"`gamma` must be positive, not {self.gamma}")
        if not self.zeta > 0:
            raise ValueError(f"`zeta` must be positive, not {self.zeta}")
        if self.sigma < 0:
            raise ValueError(f"`sigma` must be nonnegative, not {self.sigma}")
        if not self.p_on > 0:
            raise ValueError(f"`p_on` must be positive, not {self.p_on}")
        if not self.x_min < self.x_target < self.x_max:
            raise ValueError(
                "`x_target` must lie strictly inside [`x_min`, `x_max`], "
                f"not {self.x_target} in [{self.x_min}, {self.x_max}]"
            )
        for name in ("alpha", "beta", "terminal_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"`{name}` must be nonnegative, not {getattr(self, name)}")

    @property
    def type_key(self) -> "TCLParams":
        """Parameters without the initial temperature: agents sharing it share a policy."""
        return replace(self, x0=0.0)

    def drift(self, x: np.ndarray, u: float | np.ndarray) -> np.ndarray:
        return -(x - self.x_off + self.zeta * u) / self.gamma

    def discomfort(self, x: np.ndarray) -> np.ndarray:
        """Running discomfort rate `f(x)` per second."""
        below = np.clip(self.x_min - x, 0.0, None)
        above = np.clip(x - self.x_max, 0.0, None)
        return self.alpha * (x - self.x_target) ** 2 + self.beta * (below**2 + above**2)

    def response_share(self, x: np.ndarray) -> np.ndarray:
        """Share of the consumption available as frequency response."""
        return np.clip((x - self.x_min) / (self.x_max - self.x_min), 0.0, 1.0)


@dataclass(frozen=True)
class TCLGrid:
    """
    Time and temperature discretization of the TCL problems.

    The time step is adjusted so that every slot holds a whole number of
    steps; the temperature nodes cover the comfort band plus `margin` on
    both sides.

    Attributes:
        dt (float): Requested time step in s.
        dT (float): Requested temperature step in degC.
        margin (float): Extension of the temperature range beyond the band.
        horizon (float): Length of the horizon in s.
        n_slots (int): Number of price slots.
        max_substeps (int): Largest number of internal substeps per time step.
        control_levels (int): Number of consumption levels in `[0, p_on]`;
            2 is the ON/OFF set, more levels relax it.
    """

    dt: float = 7.6
    dT: float = 0.15
    margin: float = 3.0
    horizon: float = 86400.0
    n_slots: int = 48
    max_substeps: int = 64
    control_levels: int = 2

    def __post_init__(self):
        for name in ("dt", "dT", "horizon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"`{name}` must be positive, not {getattr(self, name)}")
        if self.margin < 0:
            raise ValueError(f"`margin` must be nonnegative, not {self.margin}")
        if self.n_slots < 1:
            raise ValueError(f"`n_slots` must be at least 1, not {self.n_slots}")
        if self.max_substeps < 1:
            raise ValueError(f"`max_substeps` must be at least 1, not {self.max_substeps}")
        if self.control_levels < 2:
            raise ValueError(
                f"`control_levels` must be at least 2, not {self.control_levels}"
            )
        if self.control_levels > 2:
            warnings.warn(
                f"relaxed control with {self.control_levels} consumption levels "
                "instead of the ON/OFF set",
                category=UserWarning,
            )

    @property
    def slot_length(self) -> float:
        return self.horizon / self.n_slots

    @property
    def steps_per_slot(self) -> int:
        return max(1, round(self.slot_length / self.dt))

    @property
    def step(self) -> float:
        """Effective time step in s."""
        return self.slot_length / self.steps_per_slot

    @property
    def n_steps(self) -> int:
        return self.steps_per_slot * self.n_slots

    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.n_steps, self.step, self.steps_per_slot)

    def nodes(self, params: TCLParams) -> np.ndarray:
        lo = params.x_min - self.margin
        hi = params.x_max + self.margin
        intervals = max(1, round((hi - lo) / self.dT))
        return np.linspace(lo, hi, intervals + 1)

    def levels(self, params: TCLParams) -> np.ndarray:
        return np.linspace(0.0, params.p_on, self.control_levels)


def pairing_scale(grid: TCLGrid, n_tcl: int) -> float:
    """Money per W and price unit of one fine step: `n 10^-6 dt / 3600`."""
    return n_tcl * 1e-6 * grid.step / SECONDS_PER_HOUR


def transition_matrices(params: TCLParams, grid: TCLGrid) -> tuple[np.ndarray, int]:
    """
    Markov chain transitions over one time step, one matrix per control level.

    Drift is allocated upwind to the neighbouring nodes and the diffusion is
    split evenly; the chain is clamped at both ends of the grid. When the
    time step is too long for valid probabilities, it is split into
    substeps and the one-substep matrix is raised to their number.

    Returns:
        The matrices, shape `(levels, N, N)`, and the number of substeps.

    Raises:
        GridValidityError: More than `grid.max_substeps` substeps are needed.
    """
    nodes = grid.nodes(params)
    dT = nodes[1] - nodes[0]
    levels = grid.levels(params)
    drift = np.array([params.drift(nodes, u) for u in levels])
    rate = params.sigma**2 + dT * np.abs(drift)
    substeps = max(1, math.ceil(grid.step * float(rate.max()) / dT**2 - 1e-12))
    if substeps > grid.max_substeps:
        raise GridValidityError(
            f"the time step {grid.step:.4g} s needs {substeps} substeps for valid "
            f"transition probabilities, more than `max_substeps` ({grid.max_substeps})"
        )
    if substeps > 1:
        logger.info("Splitting the %.4g s step into %d substeps", grid.step, substeps)
    h = grid.step / substeps
    diffusion = 0.5 * params.sigma**2
    up = h * (diffusion + dT * np.clip(drift, 0.0, None)) / dT**2
    down = h * (diffusion + dT * np.clip(-drift, 0.0, None)) / dT**2

    N = nodes.size
    idx = np.arange(N)
    above = np.minimum(idx + 1, N - 1)
    below = np.maximum(idx - 1, 0)
    matrices = np.zeros((levels.size, N, N))
    for l in range(levels.size):
        P = np.zeros((N, N))
        np.add.at(P, (idx, above), up[l])
        np.add.at(P, (idx, below), down[l])
        np.add.at(P, (idx, idx), 1.0 - up[l] - down[l])
        matrices[l] = np.linalg.matrix_power(P, substeps)
    if np.any(matrices < -1e-12) or np.abs(matrices.sum(axis=2) - 1.0).max() > 1e-10:
        raise GridValidityError("transition probabilities are not a valid distribution")
    return np.clip(matrices, 0.0, 1.0), substeps


@dataclass(eq=False)
class OnOffPolicy:
    """
    Feedback policy on a (time step, temperature node) table.

    Off-grid temperatures use the nearest node.

    Attributes:
        nodes (np.ndarray): Temperature nodes, equally spaced.
        levels (np.ndarray): Consumption levels in W, ascending.
        decisions (np.ndarray): Level index per step and node, shape `(T, N)`.
        steps_per_slot (int): Number of steps per price slot.
        values (np.ndarray | None): Value function, shape `(T + 1, N)`.
        transitions (np.ndarray | None): One-step transitions per level.
        stage_costs (np.ndarray | None): Stage cost per slot, level and node.
    """

    nodes: np.ndarray
    levels: np.ndarray
    decisions: np.ndarray
    steps_per_slot: int
    values: np.ndarray | None = field(default=None, repr=False)
    transitions: np.ndarray | None = field(default=None, repr=False)
    stage_costs: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def constant(
        cls, params: TCLParams, grid: TCLGrid, level: int = 1
    ) -> "OnOffPolicy":
        """Policy applying the same level everywhere."""
        nodes = grid.nodes(params)
        levels = grid.levels(params)
        if not 0 <= level < levels.size:
            raise ValueError(f"`level` must be in [0, {levels.size}), not {level}")
        decisions = np.full((grid.n_steps, nodes.size), level, dtype=np.int8)
        return cls(nodes, levels, decisions, grid.steps_per_slot)

    @property
    def n_steps(self) -> int:
        return self.decisions.shape[0]

    @property
    def dT(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    def node_index(self, x: float | np.ndarray) -> np.ndarray:
        index = np.rint((np.asarray(x) - self.nodes[0]) / self.dT)
        return np.clip(index, 0, self.nodes.size - 1).astype(int)

    def control(self, step: int, x: float | np.ndarray) -> float | np.ndarray:
        """Consumption in W at a step and temperature."""
        u = self.levels[self.decisions[step, self.node_index(x)]]
        return float(u) if np.ndim(u) == 0 else u

    def verify_dynamic_programming(
        self, rng: np.random.Generator, checks: int = 100
    ) -> float:
        """
        Recompute the value at random `(step, node)` pairs from its definition.

        Returns:
            The largest relative discrepancy found.
        """
        if self.values is None or self.transitions is None or self.stage_costs is None:
            raise ValueError("the policy carries no value function to verify")
        steps = rng.integers(0, self.n_steps, size=checks)
        nodes = rng.integers(0, self.nodes.size, size=checks)
        worst = 0.0
        for t, i in zip(steps, nodes):
            slot = t // self.steps_per_slot
            q = [
                self.stage_costs[slot, l, i] + self.transitions[l, i] @ self.values[t + 1]
                for l in range(self.levels.size)
            ]
            expected = min(q)
            scale = max(1.0, abs(expected))
            worst = max(worst, abs(self.values[t, i] - expected) / scale)
        return worst


def stage_costs(
    params: TCLParams, prices: PriceSignal, grid: TCLGrid, n_tcl: int
) -> np.ndarray:
    """Cost of one step per slot, level and node, shape `(S, L, N)`."""
    if prices.shape != (2, grid.n_slots):
        raise ValueError(
            f"`prices` must have shape (2, {grid.n_slots}) for (energy, response), "
            f"not {prices.shape}"
        )
    nodes = grid.nodes(params)
    levels = grid.levels(params)
    c = pairing_scale(grid, n_tcl)
    p, rho = prices.values
    discomfort = grid.step * params.discomfort(nodes)
    share = params.response_share(nodes)
    # (S, L, N)
    market = c * (
        p[:, None, None] * levels[None, :, None]
        - rho[:, None, None] * levels[None, :, None] * share[None, None, :]
    )
    return discomfort[None, None, :] + market


def hjb_best_response(
    params: TCLParams,
    prices: PriceSignal,
    grid: TCLGrid,
    n_tcl: int = 1,
    check_nodes: int = 100,
) -> OnOffPolicy:
    """
    Optimal feedback policy of one TCL facing `(p, rho)` by backward induction.

    At every step and node the cheapest consumption level is kept, the
    lowest one on ties (OFF for the ON/OFF set). The dynamic programming
    identity is re-verified on `check_nodes` random nodes.

    Args:
        params: The TCL parameters.
        prices: Energy and response prices per slot.
        grid: The discretization.
        n_tcl: Fleet size used in the pairing weight.
        check_nodes: Number of random nodes re-verified after the solve.

    Returns:
        The `OnOffPolicy` with its value function.
    """
    transitions, _ = transition_matrices(params, grid)
    costs = stage_costs(params, prices, grid, n_tcl)
    nodes = grid.nodes(params)
    sps = grid.steps_per_slot
    T = grid.n_steps
    values = np.empty((T + 1, nodes.size))
    decisions = np.empty((T, nodes.size), dtype=np.int8)
    values[T] = params.terminal_weight * (nodes - params.x_target) ** 2
    for t in range(T - 1, -1, -1):
        q = costs[t // sps] + transitions @ values[t + 1]
        choice = np.argmin(q, axis=0)
        decisions[t] = choice
        values[t] = np.take_along_axis(q, choice[None, :], axis=0)[0]

    policy = OnOffPolicy(
        nodes=nodes,
        levels=grid.levels(params),
        decisions=decisions,
        steps_per_slot=sps,
        values=values,
        transitions=transitions,
        stage_costs=costs,
    )
    if check_nodes > 0:
        error = policy.verify_dynamic_programming(np.random.default_rng(0), check_nodes)
        if error > 1e-10:
            raise SolverError(f"dynamic programming check failed with error {error:.3g}")
    return policy


@dataclass(frozen=True, eq=False)
class _Dynamics:
    """Parameters of a batch of TCLs as arrays."""

    gamma: np.ndarray
    x_off: np.ndarray
    zeta: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    x_target: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    terminal_weight: np.ndarray
    x0: np.ndarray

    @classmethod
    def build(cls, params: Sequence[TCLParams]) -> "_Dynamics":
        return cls(
            **{
                name: np.array([getattr(p, name) for p in params], dtype=float)
                for name in cls.__dataclass_fields__
            }
        )


@dataclass
class TCLPaths:
    """
    Simulated trajectories of a batch of TCLs.

    Attributes:
        U (np.ndarray): Slot mean consumption, shape `(m, S)`.
        R (np.ndarray): Slot mean frequency response, shape `(m, S)`.
        cost (np.ndarray): Realized discomfort cost, shape `(m,)`.
        controls (np.ndarray | None): Consumption per step, `(m, T)`.
        temperatures (np.ndarray | None): Temperatures, `(m, T + 1)`.
        response (np.ndarray | None): Frequency response per step, `(m, T)`.
    """

    U: np.ndarray
    R: np.ndarray
    cost: np.ndarray
    controls: np.ndarray | None = None
    temperatures: np.ndarray | None = None
    response: np.ndarray | None = None


def _simulate_batch(
    dynamics: _Dynamics,
    decide: Callable[[int, np.ndarray], np.ndarray],
    noise: np.ndarray,
    grid: TCLGrid,
    keep_paths: bool = False,
) -> TCLPaths:
    """
    Euler-Maruyama simulation of `m` TCLs in lockstep.

    `decide(step, X)` returns the consumption of every device in W.
    """
    m = dynamics.x0.size
    T, sps, dt = grid.n_steps, grid.steps_per_slot, grid.step
    if noise.shape != (m, T):
        raise ValueError(f"`noise` must have shape {(m, T)}, not {noise.shape}")
    scale = dynamics.sigma * math.sqrt(dt)
    band = dynamics.x_max - dynamics.x_min
    X = dynamics.x0.copy()
    cost = np.zeros(m)
    U = np.zeros((m, grid.n_slots))
    R = np.zeros((m, grid.n_slots))
    if keep_paths:
        controls = np.empty((m, T))
        temperatures = np.empty((m, T + 1))
        response = np.empty((m, T))
        temperatures[:, 0] = X
    for t in range(T):
        u = decide(t, X)
        r = u * np.clip((X - dynamics.x_min) / band, 0.0, 1.0)
        below = np.clip(dynamics.x_min - X, 0.0, None)
        above = np.clip(X - dynamics.x_max, 0.0, None)
        cost += dt * (
            dynamics.alpha * (X - dynamics.x_target) ** 2
            + dynamics.beta * (below**2 + above**2)
        )
        slot = t // sps
        U[:, slot] += u
        R[:, slot] += r
        X = X - (dt / dynamics.gamma) * (X - dynamics.x_off + dynamics.zeta * u) + scale * noise[:, t]
        if keep_paths:
            controls[:, t] = u
            response[:, t] = r
            temperatures[:, t + 1] = X
    cost += dynamics.terminal_weight * (X - dynamics.x_target) ** 2
    paths = TCLPaths(U / sps, R / sps, cost)
    if keep_paths:
        paths.controls = controls
        paths.temperatures = temperatures
        paths.response = response
    return paths


def _policy_controller(
    policies: Sequence[OnOffPolicy], which: np.ndarray
) -> Callable[[int, np.ndarray], np.ndarray]:
    """Lookup of the consumption of every device in its own policy table."""
    sizes = np.array([p.nodes.size for p in policies])
    offsets = np.concatenate([[0], np.cumsum([p.decisions.size for p in policies])[:-1]])
    flat = np.concatenate([p.decisions.ravel() for p in policies])
    lo = np.array([p.nodes[0] for p in policies])[which]
    dT = np.array([p.dT for p in policies])[which]
    n = sizes[which]
    base = offsets[which]
    n_levels = max(p.levels.size for p in policies)
    levels = np.array(
        [np.pad(p.levels, (0, n_levels - p.levels.size)) for p in policies]
    )[which]
    rows = np.arange(which.size)

    def decide(step: int, X: np.ndarray) -> np.ndarray:
        node = np.clip(np.rint((X - lo) / dT), 0, n - 1).astype(int)
        choice = flat[base + step * n + node]
        return levels[rows, choice]

    return decide


def simulate_tcl(
    params: TCLParams,
    policy: OnOffPolicy,
    grid: TCLGrid,
    stream: NoiseStream,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Simulate one TCL under a policy.

    Returns:
        The consumption per step (W), the temperatures (one more entry than
        steps, starting at `params.x0`) and the realized frequency response
        per step (W).
    """
    if policy.n_steps != grid.n_steps:
        raise ValueError(
            f"`policy` has {policy.n_steps} steps but the grid has {grid.n_steps}"
        )
    noise = stream.standard_normal(grid.n_steps)[None, :]
    paths = _simulate_batch(
        _Dynamics.build([params]),
        _policy_controller([policy], np.zeros(1, dtype=int)),
        noise,
        grid,
        keep_paths=True,
    )
    return paths.controls[0], paths.temperatures[0], paths.response[0]


class TCLPopulation(AgentPopulation):
    """
    A fleet of TCLs.

    Agents sharing their parameters (up to the initial temperature) share
    one best response; simulations of a whole batch run in lockstep with
    one noise stream per agent.

    Args:
        params: Parameters of every TCL.
        grid: The discretization.
        n_tcl: Fleet size in the pairing weight. Defaults to `len(params)`.
    """

    def __init__(
        self, params: Sequence[TCLParams], grid: TCLGrid, n_tcl: int | None = None
    ):
        if not params:
            raise ValueError("`params` must not be empty")
        self.params = list(params)
        self.grid = grid
        self.n_tcl = len(self.params) if n_tcl is None else int(n_tcl)
        self._types = [p.type_key for p in self.params]

    @property
    def n_agents(self) -> int:
        return len(self.params)

    @property
    def n_types(self) -> int:
        return len(set(self._types))

    def with_sigma(self, sigma: float) -> "TCLPopulation":
        """Same fleet with every volatility set to `sigma` (degC/sqrt(s))."""
        return TCLPopulation(
            [replace(p, sigma=sigma) for p in self.params], self.grid, self.n_tcl
        )

    def _solve_type(self, key: TCLParams, prices: PriceSignal) -> OnOffPolicy:
        return hjb_best_response(key, prices, self.grid, self.n_tcl)

    def best_response(self, agent: int, prices: PriceSignal) -> OnOffPolicy:
        return self._solve_type(self._types[agent], prices)

    def simulate(
        self, agent: int, policy: OnOffPolicy, stream: NoiseStream
    ) -> tuple[np.ndarray, float]:
        noise = stream.standard_normal(self.grid.n_steps)[None, :]
        paths = _simulate_batch(
            _Dynamics.build([self.params[agent]]),
            _policy_controller([policy], np.zeros(1, dtype=int)),
            noise,
            self.grid,
        )
        return np.stack([paths.U[0], -paths.R[0]]), float(paths.cost[0])

    def policies(
        self, agents: np.ndarray, prices: PriceSignal, workers: int = 1, iteration=None
    ) -> tuple[list[OnOffPolicy], np.ndarray]:
        """
        Best responses of the distinct types among `agents`.

        Returns:
            The policies and, for every entry of `agents`, the index of its policy.
        """
        keys: list[TCLParams] = []
        index: dict[TCLParams, int] = {}
        which = np.empty(len(agents), dtype=int)
        for position, agent in enumerate(agents):
            key = self._types[int(agent)]
            if key not in index:
                index[key] = len(keys)
                keys.append(key)
            which[position] = index[key]

        def solve(key: TCLParams) -> OnOffPolicy:
            try:
                return self._solve_type(key, prices)
            except SolverError:
                raise
            except Exception as exc:
                raise SolverError(
                    f"best response failed: {exc}", iteration=iteration
                ) from exc

        return _ordered_map(solve, keys, workers), which

    def run(
        self,
        agents: np.ndarray,
        policies: Sequence[OnOffPolicy],
        which: np.ndarray,
        streams: Sequence[NoiseStream],
        keep_paths: bool = False,
    ) -> TCLPaths:
        """Simulate the listed agents, each under `policies[which[i]]` and its stream."""
        noise = np.array([s.standard_normal(self.grid.n_steps) for s in streams])
        noise = noise.reshape(len(streams), self.grid.n_steps)
        dynamics = _Dynamics.build([self.params[int(i)] for i in agents])
        return _simulate_batch(
            dynamics, _policy_controller(policies, which), noise, self.grid, keep_paths
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
        agents = np.asarray(agents, dtype=int)
        draws = np.zeros_like(agents) if draws is None else np.asarray(draws, dtype=int)
        policies, which = self.policies(agents, prices, workers, iteration)
        streams = [
            derive_stream(master, int(i), iteration, int(j), purpose)
            for i, j in zip(agents, draws)
        ]
        paths = self.run(agents, policies, which, streams)
        coupling = np.stack([paths.U, -paths.R], axis=1)
        return AgentRealization(coupling, paths.cost)


def tcl_population(
    n: int = 500,
    grid: TCLGrid | None = None,
    n_types: int = 8,
    heterogeneity: float = 0.1,
    sigma: float = 0.0,
    seed: int = 0,
    base: TCLParams | None = None,
) -> TCLPopulation:
    """
    Heterogeneous fleet of `n` TCLs.

    `n_types` parameter sets scale the thermal time constant and the
    ambient temperature of `base` by independent uniform factors in
    `[1 - heterogeneity, 1 + heterogeneity]`; every agent picks one set and
    an initial temperature uniform in its comfort band.

    Args:
        n: Number of TCLs.
        grid: The discretization. Defaults to `TCLGrid()`.
        n_types: Number of distinct parameter sets.
        heterogeneity: Half-width of the relative scaling.
        sigma: Volatility in degC/sqrt(s).
        seed: Seed of the parameter draws.
        base: Nominal parameters. Defaults to `TCLParams()`.
    """
    if n < 1:
        raise ValueError(f"`n` must be at least 1, not {n}")
    if n_types < 1:
        raise ValueError(f"`n_types` must be at least 1, not {n_types}")
    if not 0 <= heterogeneity < 1:
        raise ValueError(f"`heterogeneity` must be in [0, 1), not {heterogeneity}")
    grid = TCLGrid() if grid is None else grid
    base = TCLParams() if base is None else base
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n,)))
    scales = rng.uniform(1 - heterogeneity, 1 + heterogeneity, size=(n_types, 2))
    types = [
        replace(base, gamma=base.gamma * a, x_off=base.x_off * b, sigma=sigma)
        for a, b in scales
    ]
    chosen = rng.integers(0, n_types, size=n)
    x0 = rng.uniform(base.x_min, base.x_max, size=n)
    params = [replace(types[k], x0=float(x)) for k, x in zip(chosen, x0)]
    return TCLPopulation(params, grid)


@dataclass
class BAUResult:
    """
    Thermostat baseline of a fleet.

    Attributes:
        U (np.ndarray): Mean consumption per slot, in W.
        R (np.ndarray): Mean frequency response per slot, zero.
        costs (np.ndarray): Realized discomfort cost of every TCL.
        paths (TCLPaths): The simulated trajectories.
    """

    U: np.ndarray
    R: np.ndarray
    costs: np.ndarray
    paths: TCLPaths = field(repr=False)


def bau_baseline(
    population: TCLPopulation,
    grid: TCLGrid | None = None,
    seed: int = 0,
    band: tuple[float, float] | None = None,
    keep_paths: bool = False,
) -> BAUResult:
    """
    Business-as-usual thermostat operation of the fleet.

    Every device switches ON when it reaches the top of its band, OFF when
    it reaches the bottom, and keeps its mode in between; it starts ON only
    if its initial temperature is at the top of the band. No frequency
    response is offered.

    Args:
        population: The fleet.
        grid: The discretization. Defaults to the fleet's.
        seed: Master seed; the noise streams are the evaluation streams.
        band: `(low, high)` switching temperatures replacing every device's
            comfort band.
        keep_paths: Whether to keep the per-step trajectories.
    """
    grid = population.grid if grid is None else grid
    agents = np.arange(population.n_agents)
    dynamics = _Dynamics.build(population.params)
    if band is None:
        lo, hi = dynamics.x_min, dynamics.x_max
    else:
        if band[0] > band[1]:
            raise ValueError(f"`band` must be increasing, not {band}")
        lo = np.full(agents.size, float(band[0]))
        hi = np.full(agents.size, float(band[1]))
    p_on = np.array([p.p_on for p in population.params])
    on = dynamics.x0 >= hi

    def decide(step: int, X: np.ndarray) -> np.ndarray:
        on[X >= hi] = True
        on[X <= lo] = False
        return np.where(on, p_on, 0.0)

    noise = np.array(
        [
            derive_stream(seed, int(i), 0, 0, StreamPurpose.EVALUATION).standard_normal(
                grid.n_steps
            )
            for i in agents
        ]
    ).reshape(agents.size, grid.n_steps)
    paths = _simulate_batch(dynamics, decide, noise, grid, keep_paths)
    U = paths.U.mean(axis=0)
    return BAUResult(U=U, R=np.zeros_like(U), costs=paths.cost, paths=paths)

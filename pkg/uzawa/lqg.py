"""
Linear-quadratic Gaussian benchmark with exact oracles.

Every agent controls `x_{t+1} = A x_t + B u_t + C w_t` and pays
`1/2 sum_t (d |x_t|^2 + q |u_t|^2 + lambda_t . u_t) + 1/2 d_f |x_T|^2`.
The aggregate pays `nu/2 sum_t |v_t - r_t|^2`. Best responses are affine
state feedbacks computed by a backward Riccati recursion, so expected
controls, expected costs and the dual function are all available in
closed form.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass
from typing import Sequence

import matplotlib.pyplot as plt
import numpy as np
import scipy.linalg as linalg
import scipy.stats as st
from matplotlib.figure import Figure

from .core import (
    AgentPopulation,
    AgentRealization,
    AggregateOracle,
    NoiseStream,
    PriceSignal,
    ProblemInstance,
    StepSchedule,
    StreamPurpose,
    derive_block_stream,
    derive_seed,
    sample_indices,
    step_rho,
)
from .dual_ascent import DIVERGENCE_FACTOR, deterministic_uzawa
from .exceptions import (
    BoxConstraintError,
    DivergenceError,
    NonFiniteGradientError,
)
from ._utils import _frame, _get_first_n_colors, _themify, _write_csv

logger = logging.getLogger(__name__)

BOX_SAFETY: float = 10.0
BOX_SIGMAS: float = 6.0
BOX_FLOOR: float = 10.0


def _as_matrix(value, rows: int | None = None) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(value, dtype=float))
    if rows is not None and matrix.shape[0] != rows:
        raise ValueError(f"expected a matrix with {rows} rows, not {matrix.shape}")
    return matrix


@dataclass(frozen=True, eq=False)
class LQGAgentParams:
    """
    Parameters of one LQG agent.

    Scalars are promoted to `1 x 1` matrices, so the default agent has
    state, control and noise dimension one.

    Attributes:
        A (np.ndarray): State matrix `(d, d)`.
        B (np.ndarray): Control matrix `(d, p)`.
        C (np.ndarray): Noise matrix `(d, w)`.
        state_cost (float): Running state weight `d >= 0`.
        control_cost (float): Running control weight `q > 0`.
        terminal_cost (float): Terminal state weight `d_f >= 0`.
        x0 (np.ndarray): Initial state `(d,)`.
        box (float | None): Bound `M` on every expected control. `None`
            derives it from the policy at zero price.
    """

    A: np.ndarray | float = 1.0
    B: np.ndarray | float = 1.0
    C: np.ndarray | float = 1.0
    state_cost: float = 1.0
    control_cost: float = 1.0
    terminal_cost: float = 1.0
    x0: np.ndarray | float = 0.0
    box: float | None = None

    def __post_init__(self):
        A = _as_matrix(self.A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"`A` must be square, not {A.shape}")
        d = A.shape[0]
        B = _as_matrix(self.B, d)
        C = _as_matrix(self.C, d)
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (d,):
            raise ValueError(f"`x0` must have shape ({d},), not {x0.shape}")
        if not self.control_cost > 0:
            raise ValueError(f"`control_cost` must be positive, not {self.control_cost}")
        if self.state_cost < 0:
            raise ValueError(f"`state_cost` must be nonnegative, not {self.state_cost}")
        if self.terminal_cost < 0:
            raise ValueError(
                f"`terminal_cost` must be nonnegative, not {self.terminal_cost}"
            )
        if self.box is not None and not self.box > 0:
            raise ValueError(f"`box` must be positive, not {self.box}")
        for name, value in (("A", A), ("B", B), ("C", C), ("x0", x0)):
            if not np.all(np.isfinite(value)):
                raise ValueError(f"`{name}` must be finite")
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]

    @property
    def noise_dim(self) -> int:
        return self.C.shape[1]

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "state_cost": self.state_cost,
            "control_cost": self.control_cost,
            "terminal_cost": self.terminal_cost,
            "x0": self.x0.tolist(),
            "box": self.box,
        }


@dataclass(frozen=True, eq=False)
class LQGAggregateParams:
    """
    Aggregate cost `nu/2 sum_t |v_t - r_t|^2`.

    Attributes:
        nu (float): Positive curvature.
        target (np.ndarray): Target `r`, shape `(p, T)`; a 1-D target is one
            control channel.
    """

    nu: float
    target: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise ValueError(f"`nu` must be positive, not {self.nu}")
        target = np.array(self.target, dtype=float)
        if target.ndim == 1:
            target = target[np.newaxis, :]
        if target.ndim != 2 or not np.all(np.isfinite(target)):
            raise ValueError("`target` must be a finite (controls, horizon) array")
        target.setflags(write=False)
        object.__setattr__(self, "target", target)

    @property
    def horizon(self) -> int:
        return self.target.shape[1]


@dataclass(frozen=True, eq=False)
class AffinePolicy:
    """
    Affine state feedback `u_t = K_t x_t + k_t`.

    Attributes:
        gains (np.ndarray): `K_t`, shape `(T, p, d)`. They do not depend on
            the price.
        offsets (np.ndarray): `k_t`, shape `(T, p)`, affine in the price.
    """

    gains: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        if self.gains.ndim != 3 or self.offsets.shape != self.gains.shape[:2]:
            raise ValueError(
                f"`gains` {self.gains.shape} and `offsets` {self.offsets.shape} "
                "are inconsistent"
            )
        if not (np.all(np.isfinite(self.gains)) and np.all(np.isfinite(self.offsets))):
            raise ValueError("policy entries must be finite")

    @property
    def horizon(self) -> int:
        return self.gains.shape[0]

    def control(self, t: int, x: np.ndarray) -> np.ndarray:
        return self.gains[t] @ x + self.offsets[t]


def _riccati(agent: LQGAgentParams, horizon: int) -> dict[str, np.ndarray]:
    """Price-independent part of the backward recursion."""
    A, B, C = agent.A, agent.B, agent.C
    d, p = agent.state_dim, agent.control_dim
    P = np.empty((horizon + 1, d, d))
    gains = np.empty((horizon, p, d))
    H_inv = np.empty((horizon, p, p))
    P[horizon] = agent.terminal_cost * np.eye(d)
    noise_const = 0.0
    for t in reversed(range(horizon)):
        P_next = P[t + 1]
        H = agent.control_cost * np.eye(p) + B.T @ P_next @ B
        H_inv[t] = linalg.cho_solve(linalg.cho_factor(H), np.eye(p))
        gains[t] = -H_inv[t] @ B.T @ P_next @ A
        P_t = agent.state_cost * np.eye(d) + A.T @ P_next @ (A + B @ gains[t])
        P[t] = 0.5 * (P_t + P_t.T)
        noise_const += 0.5 * np.trace(C.T @ P_next @ C)
    PB = P[1:] @ B
    return {"P": P, "gains": gains, "H_inv": H_inv, "PB": PB, "noise_const": noise_const}


def _offsets(
    agent: LQGAgentParams, riccati: dict, lam: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    """Offsets `k_t`, linear value term `s_0` and price constant for one agent."""
    horizon = lam.shape[1]
    s = np.zeros(agent.state_dim)
    const = 0.0
    offsets = np.empty((horizon, agent.control_dim))
    for t in reversed(range(horizon)):
        g = 0.5 * lam[:, t] + agent.B.T @ s
        k = -riccati["H_inv"][t] @ g
        s = agent.A.T @ (riccati["PB"][t] @ k + s)
        const += 0.5 * g @ k
        offsets[t] = k
    return offsets, s, const


def _mean_and_covariance(
    agent: LQGAgentParams, policy: AffinePolicy
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Mean states, mean controls, state and control covariances."""
    horizon = policy.horizon
    d = agent.state_dim
    x_mean = np.empty((horizon + 1, d))
    x_cov = np.empty((horizon + 1, d, d))
    u_mean = np.empty((horizon, agent.control_dim))
    u_cov = np.empty((horizon, agent.control_dim, agent.control_dim))
    x_mean[0] = agent.x0
    x_cov[0] = 0.0
    CC = agent.C @ agent.C.T
    for t in range(horizon):
        K = policy.gains[t]
        u_mean[t] = K @ x_mean[t] + policy.offsets[t]
        u_cov[t] = K @ x_cov[t] @ K.T
        closed = agent.A + agent.B @ K
        x_mean[t + 1] = closed @ x_mean[t] + agent.B @ policy.offsets[t]
        x_cov[t + 1] = closed @ x_cov[t] @ closed.T + CC
    return x_mean, u_mean, x_cov, u_cov


def default_box(agent: LQGAgentParams, horizon: int) -> float:
    """
    Bound on the controls, ten times the `6 sigma` control range of the
    zero-price policy, and at least `BOX_FLOOR`.
    """
    riccati = _riccati(agent, horizon)
    offsets, _, _ = _offsets(agent, riccati, np.zeros((agent.control_dim, horizon)))
    policy = AffinePolicy(riccati["gains"], offsets)
    _, u_mean, _, u_cov = _mean_and_covariance(agent, policy)
    sigma = np.sqrt(np.clip(np.diagonal(u_cov, axis1=1, axis2=2), 0.0, None))
    spread = np.abs(u_mean) + BOX_SIGMAS * sigma
    return max(BOX_SAFETY * float(spread.max(initial=0.0)), BOX_FLOOR)


def _resolve_box(agent: LQGAgentParams, horizon: int) -> float:
    return agent.box if agent.box is not None else default_box(agent, horizon)


def _price_matrix(agent: LQGAgentParams, prices: PriceSignal | np.ndarray) -> np.ndarray:
    lam = prices.values if isinstance(prices, PriceSignal) else np.atleast_2d(prices)
    if lam.shape[0] != agent.control_dim:
        raise ValueError(
            f"`prices` must have {agent.control_dim} channels, not {lam.shape[0]}"
        )
    return lam


def riccati_best_response(
    agent: LQGAgentParams, prices: PriceSignal | np.ndarray
) -> AffinePolicy:
    """
    Optimal affine policy of one agent at a given price.

    Solves `min E[1/2 sum_t (d x_t^2 + q u_t^2 + lambda_t u_t) + 1/2 d_f x_T^2]`
    by the backward recursion

    - `H_t = q I + B' P_{t+1} B`, `K_t = -H_t^{-1} B' P_{t+1} A`,
    - `k_t = -H_t^{-1} (lambda_t / 2 + B' s_{t+1})`,
    - `P_t = d I + A' P_{t+1} (A + B K_t)`, `s_t = A' (P_{t+1} B k_t + s_{t+1})`,

    from `P_T = d_f I` and `s_T = 0`.

    Args:
        agent: Agent parameters.
        prices: Price with one channel per control component, one column per
            time step.

    Returns:
        The `AffinePolicy`.

    Raises:
        BoxConstraintError: The expected controls leave `[-M, M]`.
    """
    lam = _price_matrix(agent, prices)
    horizon = lam.shape[1]
    riccati = _riccati(agent, horizon)
    offsets, _, _ = _offsets(agent, riccati, lam)
    policy = AffinePolicy(riccati["gains"], offsets)
    box = _resolve_box(agent, horizon)
    _, u_mean, _, _ = _mean_and_covariance(agent, policy)
    worst = float(np.abs(u_mean).max(initial=0.0))
    if worst > box:
        raise BoxConstraintError(
            f"expected control {worst:.4g} leaves the box [-{box:.4g}, {box:.4g}]"
        )
    return policy


def exact_expected_control(agent: LQGAgentParams, policy: AffinePolicy) -> np.ndarray:
    """
    Expected control trajectory of an affine policy, shape `(p, T)`.

    The noise has mean zero, so the mean state follows
    `x_{t+1} = (A + B K_t) x_t + B k_t`.
    """
    x = agent.x0
    controls = np.empty((agent.control_dim, policy.horizon))
    for t in range(policy.horizon):
        u = policy.gains[t] @ x + policy.offsets[t]
        controls[:, t] = u
        x = agent.A @ x + agent.B @ u
    return controls


def exact_expected_cost(agent: LQGAgentParams, policy: AffinePolicy) -> float:
    """Expected local cost `E[G]` of any affine policy, without the price term."""
    x_mean, u_mean, x_cov, u_cov = _mean_and_covariance(agent, policy)
    state = agent.state_cost * (
        np.sum(x_mean[:-1] ** 2) + np.trace(x_cov[:-1], axis1=1, axis2=2).sum()
    )
    control = agent.control_cost * (
        np.sum(u_mean**2) + np.trace(u_cov, axis1=1, axis2=2).sum()
    )
    terminal = agent.terminal_cost * (np.sum(x_mean[-1] ** 2) + np.trace(x_cov[-1]))
    return float(0.5 * (state + control + terminal))


def simulate_lqg(
    agent: LQGAgentParams,
    policy: AffinePolicy,
    stream: NoiseStream,
    n_paths: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray | float]:
    """
    Simulate an affine policy.

    Args:
        agent: Agent parameters.
        policy: Policy to apply.
        stream: Source of the Gaussian noise.
        n_paths: Number of paths sharing the stream. `None` simulates one
            path and drops the path axis.

    Returns:
        Controls `(p, T)`, states `(T + 1, d)` and the realized local cost
        (without the price term), with a leading path axis when `n_paths`
        is given.
    """
    horizon = policy.horizon
    batch = () if n_paths is None else (n_paths,)
    noise = stream.standard_normal(batch + (horizon, agent.noise_dim))
    x = np.broadcast_to(agent.x0, batch + (agent.state_dim,)).copy()
    controls = np.empty(batch + (agent.control_dim, horizon))
    states = np.empty(batch + (horizon + 1, agent.state_dim))
    cost = np.zeros(batch)
    for t in range(horizon):
        states[..., t, :] = x
        u = x @ policy.gains[t].T + policy.offsets[t]
        controls[..., :, t] = u
        cost = cost + 0.5 * (
            agent.state_cost * np.sum(x * x, axis=-1)
            + agent.control_cost * np.sum(u * u, axis=-1)
        )
        x = x @ agent.A.T + u @ agent.B.T + noise[..., t, :] @ agent.C.T
    states[..., horizon, :] = x
    cost = cost + 0.5 * agent.terminal_cost * np.sum(x * x, axis=-1)
    if n_paths is None:
        return controls, states, float(cost)
    return controls, states, cost


def v_opt_lqg(agg: LQGAggregateParams, prices: PriceSignal | np.ndarray) -> np.ndarray:
    """
    Aggregate response `v_t = r_t + lambda_t / (2 nu)`.

    Accepts any array whose trailing axes match the target, so that a
    stack of prices is answered at once.
    """
    lam = prices.values if isinstance(prices, PriceSignal) else np.asarray(prices)
    return agg.target + lam / (2.0 * agg.nu)


def _mv(matrix: np.ndarray, vector: np.ndarray) -> np.ndarray:
    """Batched matrix-vector product with broadcasting of the leading axes."""
    return (matrix @ vector[..., np.newaxis])[..., 0]


@dataclass(frozen=True, eq=False)
class _LQGStack:
    """Riccati data of many agents, stacked along leading axes."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    x0: np.ndarray
    state_cost: np.ndarray
    control_cost: np.ndarray
    terminal_cost: np.ndarray
    gains: np.ndarray
    H_inv: np.ndarray
    PB: np.ndarray
    P0: np.ndarray
    noise_const: np.ndarray
    box: np.ndarray
    has_noise: bool

    @classmethod
    def build(cls, agents: Sequence[LQGAgentParams], horizon: int) -> "_LQGStack":
        dims = {(a.state_dim, a.control_dim, a.noise_dim) for a in agents}
        if len(dims) != 1:
            raise ValueError(f"agents must share their dimensions, not {sorted(dims)}")
        riccati = [_riccati(a, horizon) for a in agents]
        return cls(
            A=np.stack([a.A for a in agents]),
            B=np.stack([a.B for a in agents]),
            C=np.stack([a.C for a in agents]),
            x0=np.stack([a.x0 for a in agents]),
            state_cost=np.array([a.state_cost for a in agents]),
            control_cost=np.array([a.control_cost for a in agents]),
            terminal_cost=np.array([a.terminal_cost for a in agents]),
            gains=np.stack([r["gains"] for r in riccati]),
            H_inv=np.stack([r["H_inv"] for r in riccati]),
            PB=np.stack([r["PB"] for r in riccati]),
            P0=np.stack([r["P"][0] for r in riccati]),
            noise_const=np.array([r["noise_const"] for r in riccati]),
            box=np.array([_resolve_box(a, horizon) for a in agents]),
            has_noise=any(np.any(a.C != 0) for a in agents),
        )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.state_cost.shape

    @property
    def horizon(self) -> int:
        return self.gains.shape[-3]

    def take(self, idx: np.ndarray) -> "_LQGStack":
        """Stack of the agents `idx`, with `idx` of any shape."""
        arrays = {
            f.name: getattr(self, f.name)[idx]
            for f in dataclasses.fields(self)
            if f.name != "has_noise"
        }
        return _LQGStack(**arrays, has_noise=self.has_noise)

    def offsets(self, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Offsets of every agent for prices of shape `L + (p, T)`.

        The price batch `L` is broadcast against the agent axes with one
        extra axis, so `(J, p, T)` prices and `(n,)` agents give `(J, n)`
        offsets, and `(J, p, T)` prices with `(J, m)` agents give `(J, m)`.

        Returns:
            Offsets `batch + (T, p)`, `s_0` of shape `batch + (d,)` and the
            price-dependent value constant `batch`.
        """
        lam = np.moveaxis(np.asarray(lam, dtype=float), -1, -2)[..., np.newaxis, :, :]
        batch = np.broadcast_shapes(lam.shape[:-2], self.shape)
        horizon, p = lam.shape[-2:]
        d = self.A.shape[-1]
        s = np.zeros(batch + (d,))
        const = np.zeros(batch)
        offsets = np.empty(batch + (horizon, p))
        A_T = np.swapaxes(self.A, -1, -2)
        B_T = np.swapaxes(self.B, -1, -2)
        for t in reversed(range(horizon)):
            g = 0.5 * lam[..., t, :] + _mv(B_T, s)
            k = -_mv(self.H_inv[..., t, :, :], g)
            s = _mv(A_T, _mv(self.PB[..., t, :, :], k) + s)
            const = const + 0.5 * np.sum(g * k, axis=-1)
            offsets[..., t, :] = k
        return offsets, s, const

    def rollout(
        self, offsets: np.ndarray, noise: np.ndarray | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """
        Controls `batch + (p, T)` and local costs `batch` of every agent.

        Without `noise` the rollout is the mean trajectory.
        """
        batch = offsets.shape[:-2]
        horizon, p = offsets.shape[-2:]
        x = np.broadcast_to(self.x0, batch + self.x0.shape[-1:]).copy()
        controls = np.empty(batch + (p, horizon))
        cost = np.zeros(batch)
        for t in range(horizon):
            u = _mv(self.gains[..., t, :, :], x) + offsets[..., t, :]
            controls[..., :, t] = u
            cost = cost + 0.5 * (
                self.state_cost * np.sum(x * x, axis=-1)
                + self.control_cost * np.sum(u * u, axis=-1)
            )
            x = _mv(self.A, x) + _mv(self.B, u)
            if noise is not None:
                x = x + _mv(self.C, noise[..., t, :])
        cost = cost + 0.5 * self.terminal_cost * np.sum(x * x, axis=-1)
        return controls, cost

    def values(self, lam: np.ndarray) -> np.ndarray:
        """Optimal expected `G + <lambda, u>` of every agent."""
        _, s0, const = self.offsets(lam)
        quadratic = 0.5 * np.einsum("...i,...ij,...j->...", self.x0, self.P0, self.x0)
        return quadratic + np.sum(s0 * self.x0, axis=-1) + const + self.noise_const

    def violations(self, mean_controls: np.ndarray) -> np.ndarray:
        """Boolean mask of the batch entries whose mean controls leave the box."""
        worst = np.abs(mean_controls).max(axis=(-2, -1))
        return worst > self.box


class LQGPopulation(AgentPopulation):
    """
    A population of LQG agents sharing their dimensions and horizon.

    Realizations are vectorized across agents: at iteration `k` the noise of
    the `j`-th listed agent is row `j` of one Gaussian block drawn from
    `derive_block_stream(master, k)`. When no agent has noise, realizations
    are the mean trajectories and coincide bit for bit with
    `expected_coupling`.

    Args:
        agents: Agent parameters.
        horizon: Number of time steps `T`.
    """

    has_exact_expectation = True

    def __init__(self, agents: Sequence[LQGAgentParams], horizon: int):
        if len(agents) < 1:
            raise ValueError("`agents` must not be empty")
        if horizon < 1:
            raise ValueError(f"`horizon` must be at least 1, not {horizon}")
        self.agents = list(agents)
        self.horizon = int(horizon)
        self._stack = _LQGStack.build(self.agents, self.horizon)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def control_dim(self) -> int:
        return self.agents[0].control_dim

    @property
    def noise_dim(self) -> int:
        return self.agents[0].noise_dim

    @property
    def boxes(self) -> np.ndarray:
        return self._stack.box

    def best_response(self, agent: int, prices: PriceSignal) -> AffinePolicy:
        params = self.agents[agent]
        if params.box is None:
            params = dataclasses.replace(params, box=float(self._stack.box[agent]))
        return riccati_best_response(params, prices)

    def simulate(
        self, agent: int, policy: AffinePolicy, stream: NoiseStream
    ) -> tuple[np.ndarray, float]:
        controls, _, cost = simulate_lqg(self.agents[agent], policy, stream)
        return controls, float(cost)

    def exact_expected_control(self, agent: int, policy: AffinePolicy) -> np.ndarray:
        return exact_expected_control(self.agents[agent], policy)

    def _substack(self, agents: np.ndarray) -> _LQGStack:
        if agents.shape == (self.n_agents,) and np.array_equal(
            agents, np.arange(self.n_agents)
        ):
            return self._stack
        return self._stack.take(agents)

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
        stack = self._substack(agents)
        offsets, _, _ = stack.offsets(prices.values)
        mean_controls, mean_cost = stack.rollout(offsets)
        _check_box(stack, mean_controls, agents, iteration=iteration)
        if not stack.has_noise:
            return AgentRealization(mean_controls, mean_cost)
        block = StreamPurpose.BLOCK if purpose == StreamPurpose.AGENT else purpose
        noise = derive_block_stream(master, iteration, block).standard_normal(
            (len(agents), self.horizon, self.noise_dim)
        )
        controls, cost = stack.rollout(offsets, noise)
        return AgentRealization(controls, cost)

    def expected_coupling(self, prices: PriceSignal, workers: int = 1) -> np.ndarray:
        offsets, _, _ = self._stack.offsets(prices.values)
        mean_controls, _ = self._stack.rollout(offsets)
        _check_box(self._stack, mean_controls, np.arange(self.n_agents))
        return mean_controls.mean(axis=0)

    def expected_local_values(self, prices: PriceSignal) -> np.ndarray:
        # the price pairing of the problem carries the factor 1/2
        return self._stack.values(prices.values)


def _check_box(
    stack: _LQGStack,
    mean_controls: np.ndarray,
    agents: np.ndarray,
    iteration: int | None = None,
    replicate_axis: bool = False,
) -> None:
    bad = stack.violations(mean_controls)
    if not np.any(bad):
        return
    position = tuple(int(i) for i in np.argwhere(bad)[0])
    box = float(np.broadcast_to(stack.box, bad.shape)[position])
    kwargs = {"iteration": iteration}
    if replicate_axis:
        kwargs["replicate"] = position[0]
    kwargs["agent"] = int(agents[position])
    raise BoxConstraintError(
        f"expected control leaves the box [-{box:.4g}, {box:.4g}]",
        **kwargs,
    )


class LQGAggregate(AggregateOracle):
    """Oracle of `F0(v) = nu/2 sum_t |v_t - r_t|^2` under a pairing weight of 1/2."""

    def __init__(self, params: LQGAggregateParams):
        self.params = params
        self.lipschitz = params.nu

    def evaluate(self, v: np.ndarray) -> float:
        residual = np.asarray(v) - self.params.target
        return float(0.5 * self.params.nu * np.sum(residual**2))

    def v_opt(self, prices: PriceSignal) -> np.ndarray:
        return v_opt_lqg(self.params, prices)


def lqg_growth_bound(
    boxes: np.ndarray, target: np.ndarray, nu: float
) -> tuple[float, float]:
    """
    Constants `(M1, M2)` with `|Y|^2 <= M1 + M2 |lambda|^2`.

    `Y = u - r - lambda / (2 nu)` and every control stays in its box, so
    `|Y|^2 <= 3 (T p M^2 + |r|^2) + 3 |lambda|^2 / (4 nu^2)`.
    """
    cells = target.size
    M1 = 3.0 * (cells * float(np.max(boxes)) ** 2 + float(np.sum(target**2)))
    M2 = 3.0 / (4.0 * nu**2)
    return M1, M2


def make_lqg_problem(
    agents: Sequence[LQGAgentParams],
    nu: float = 1.0,
    target: np.ndarray | None = None,
    horizon: int | None = None,
) -> ProblemInstance:
    """
    Assemble the LQG benchmark.

    Args:
        agents: Agent parameters.
        nu: Aggregate curvature.
        target: Target `r` of shape `(p, T)` or `(T,)`. Defaults to a ramp
            from 0 to 1.
        horizon: Number of steps, required when `target` is omitted.

    Returns:
        A `ProblemInstance` with pairing weight 1/2 and one channel per
        control component.
    """
    p = agents[0].control_dim
    if target is None:
        if horizon is None:
            raise ValueError("one of `target` and `horizon` must be given")
        target = np.tile(np.linspace(0.0, 1.0, horizon), (p, 1))
    params = LQGAggregateParams(nu=nu, target=target)
    if params.target.shape[0] != p:
        raise ValueError(
            f"`target` must have {p} rows, one per control, not {params.target.shape[0]}"
        )
    population = LQGPopulation(agents, params.horizon)
    channels = ("control",) if p == 1 else tuple(f"control_{j}" for j in range(p))
    return ProblemInstance(
        population=population,
        aggregate=LQGAggregate(params),
        channels=channels,
        weight=np.full(params.target.shape, 0.5),
        description={
            "problem": "lqg",
            "nu": nu,
            "target": params.target.tolist(),
            "agents": [a.to_dict() for a in agents],
        },
        growth=lqg_growth_bound(population.boxes, params.target, nu),
    )


@dataclass(frozen=True)
class LQGFamily:
    """
    A family of LQG instances indexed by the population size.

    Agent `i` scales the state and control costs of `params` by factors
    drawn uniformly in `[1 - heterogeneity, 1 + heterogeneity]`; the draws
    of the first `n` agents do not depend on the population size.

    Attributes:
        horizon (int): Number of time steps.
        params (LQGAgentParams): Nominal agent.
        nu (float): Aggregate curvature.
        target (tuple[float, ...] | None): Aggregate target, a ramp from 0 to 1
            when omitted.
        heterogeneity (float): Relative spread of the cost scalings, in `[0, 1)`.
        seed (int): Seed of the scalings.
    """

    horizon: int = 10
    params: LQGAgentParams = dataclasses.field(default_factory=LQGAgentParams)
    nu: float = 1.0
    target: tuple[float, ...] | None = None
    heterogeneity: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.heterogeneity < 1:
            raise ValueError(
                f"`heterogeneity` must be in [0, 1), not {self.heterogeneity}"
            )

    def agents(self, n: int) -> list[LQGAgentParams]:
        if n < 1:
            raise ValueError(f"`n` must be at least 1, not {n}")
        if self.heterogeneity == 0:
            return [self.params] * n
        agents = []
        for i in range(n):
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(i,)))
            scale_d, scale_q = 1 + self.heterogeneity * rng.uniform(-1, 1, size=2)
            agents.append(
                dataclasses.replace(
                    self.params,
                    state_cost=self.params.state_cost * scale_d,
                    control_cost=self.params.control_cost * scale_q,
                )
            )
        return agents

    def problem(self, n: int) -> ProblemInstance:
        target = None if self.target is None else np.asarray(self.target, dtype=float)
        return make_lqg_problem(self.agents(n), self.nu, target, self.horizon)


def exact_saddle_point(problem: ProblemInstance) -> PriceSignal:
    """
    Price solving `mean_i E[u_i(lambda)] = v(lambda)` directly.

    Expected controls are affine in the price, so the map is evaluated on the
    unit prices and the resulting linear system is solved.
    """
    zero = problem.prices()
    base = problem.population.expected_coupling(zero) - problem.aggregate.v_opt(zero)
    shape = zero.shape
    size = int(np.prod(shape))
    jacobian = np.empty((size, size))
    for j in range(size):
        unit = np.zeros(size)
        unit[j] = 1.0
        shifted = problem.prices(unit.reshape(shape))
        gradient = problem.population.expected_coupling(shifted) - problem.aggregate.v_opt(
            shifted
        )
        jacobian[:, j] = (gradient - base).reshape(-1)
    solution = linalg.solve(jacobian, -base.reshape(-1))
    return problem.prices(solution.reshape(shape))


class BiasVarianceReport:
    """
    Bias, variance and mean squared error of stochastic prices.

    For every population size `n` and checkpoint `k`, with `J` replicates
    `lambda^{k,n,j}` and reference price `lambda^n`:

    - `b_{k,n} = mean_j lambda^{k,n,j} - lambda^n`,
    - `v_{k,n} = mean_j |lambda^{k,n,j} - lambda^n - b_{k,n}|^2`,
    - `l_{k,n} = v_{k,n} + |b_{k,n}|^2`.

    Attributes:
        n_values (np.ndarray): Population sizes.
        checkpoints (np.ndarray): Iteration checkpoints.
        J (int): Number of replicates.
        bias (np.ndarray): `b`, shape `(n_values, checkpoints, p, T)`.
        bias_norm2 (np.ndarray): `|b|^2`, shape `(n_values, checkpoints)`.
        variance (np.ndarray): `v`, shape `(n_values, checkpoints)`.
        error (np.ndarray): `l`, shape `(n_values, checkpoints)`.
        metadata (dict): Experiment settings.
    """

    def __init__(
        self,
        n_values: Sequence[int],
        checkpoints: Sequence[int],
        lambdas: np.ndarray,
        references: np.ndarray,
        metadata: dict | None = None,
    ):
        """
        Initialize a `BiasVarianceReport()` instance.

        Args:
            n_values: Population sizes.
            checkpoints: Iterations at which prices were recorded.
            lambdas: Recorded prices, shape `(n_values, checkpoints, J, p, T)`.
            references: Reference prices, shape `(n_values, p, T)`.
            metadata: Experiment settings kept with the report.
        """
        self.n_values = np.asarray(n_values, dtype=int)
        self.checkpoints = np.asarray(checkpoints, dtype=int)
        self.lambdas = np.asarray(lambdas, dtype=float)
        self.references = np.asarray(references, dtype=float)
        expected = (len(self.n_values), len(self.checkpoints))
        if self.lambdas.shape[:2] != expected or self.lambdas.ndim != 5:
            raise ValueError(
                f"`lambdas` must have shape {expected} + (J, p, T), "
                f"not {self.lambdas.shape}"
            )
        self.J = self.lambdas.shape[2]
        self.metadata = {} if metadata is None else dict(metadata)
        self._fit()

    def _fit(self):
        deviations = self.lambdas - self.references[:, np.newaxis, np.newaxis]
        self.bias = deviations.mean(axis=2)
        centered = deviations - self.bias[:, :, np.newaxis]
        self.variance = np.sum(centered**2, axis=(3, 4)).mean(axis=2)
        self.bias_norm2 = np.sum(self.bias**2, axis=(2, 3))
        self.error = self.variance + self.bias_norm2

    @staticmethod
    def _slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
        with np.errstate(divide="ignore"):
            lx, ly = np.log10(x), np.log10(y)
        finite = np.isfinite(lx) & np.isfinite(ly)
        if finite.sum() < 2 or np.ptp(lx[finite]) == 0:
            return float("nan"), float("nan")
        regression = st.linregress(lx[finite], ly[finite])
        return float(regression.slope), float(regression.intercept)

    def slopes(self) -> dict[str, dict[int, float]]:
        """
        Least-squares slopes of the `log10-log10` curves.

        Returns:
            `{"variance_vs_iteration": {n: slope}, "bias_vs_iteration":
            {n: slope}, "variance_vs_population": {k: slope}}`.
        """
        return {
            "variance_vs_iteration": {
                int(n): self._slope(self.checkpoints, self.variance[i])[0]
                for i, n in enumerate(self.n_values)
            },
            "bias_vs_iteration": {
                int(n): self._slope(self.checkpoints, self.bias_norm2[i])[0]
                for i, n in enumerate(self.n_values)
            },
            "variance_vs_population": {
                int(k): self._slope(self.n_values, self.variance[:, i])[0]
                for i, k in enumerate(self.checkpoints)
            },
        }

    def tables(self) -> dict[str, dict[str, np.ndarray]]:
        """Column dictionaries of the report tables, keyed by table name."""
        with np.errstate(divide="ignore"):
            log_k = np.log10(self.checkpoints.astype(float))
            log_n = np.log10(self.n_values.astype(float))
            log_variance = np.log10(self.variance)
            log_bias = np.log10(self.bias_norm2)
        by_iteration = {"log10_k": log_k}
        bias_by_iteration = {"log10_k": log_k}
        by_population = {"log10_n": log_n}
        for i, n in enumerate(self.n_values):
            by_iteration[f"n={n}"] = log_variance[i]
            bias_by_iteration[f"n={n}"] = log_bias[i]
        for i, k in enumerate(self.checkpoints):
            by_population[f"k={k}"] = log_variance[:, i]

        rows: dict[str, list] = {"curve": [], "fixed": [], "slope": [], "intercept": []}
        for curve, x, ys, labels in (
            ("variance_vs_iteration", self.checkpoints, self.variance, self.n_values),
            ("bias_vs_iteration", self.checkpoints, self.bias_norm2, self.n_values),
            ("variance_vs_population", self.n_values, self.variance.T, self.checkpoints),
        ):
            for label, y in zip(labels, ys):
                slope, intercept = self._slope(x, y)
                rows["curve"].append(curve)
                rows["fixed"].append(int(label))
                rows["slope"].append(slope)
                rows["intercept"].append(intercept)
        return {
            "log_variance_price_x_iteration": by_iteration,
            "log_variance_price_x_population": by_population,
            "log_bias_price_x_iteration": bias_by_iteration,
            "slopes": {name: np.asarray(values) for name, values in rows.items()},
        }

    def to_frames(self, backend: str = "pandas") -> dict:
        """
        Report tables as dataframes, keyed by table name.

        Args:
            backend: The dataframe library, `"pandas"` or `"polars"`.
        """
        return {
            name: _frame(columns, backend).to_native()
            for name, columns in self.tables().items()
        }

    def to_csv(self, directory: str | os.PathLike) -> list[str]:
        """Write one CSV per table into `directory` and return the paths."""
        os.makedirs(directory, exist_ok=True)
        return [
            _write_csv(columns, os.path.join(directory, f"{name}.csv"))
            for name, columns in self.tables().items()
        ]

    def plot(self, colors: list[str] | None = None) -> Figure:
        """
        Plot the variance against the iteration and against the population.

        Args:
            colors: Line colors, one per curve. Defaults to the package palette.
        """
        fig, (ax_k, ax_n) = plt.subplots(ncols=2, figsize=(10, 4.5))
        n_curves = max(len(self.n_values), len(self.checkpoints))
        colors = _get_first_n_colors(colors, n_curves)
        with np.errstate(divide="ignore"):
            for i, n in enumerate(self.n_values):
                ax_k.plot(
                    np.log10(self.checkpoints),
                    np.log10(self.variance[i]),
                    marker="o",
                    color=colors[i],
                    label=f"n={n}",
                )
            for i, k in enumerate(self.checkpoints):
                ax_n.plot(
                    np.log10(self.n_values),
                    np.log10(self.variance[:, i]),
                    marker="o",
                    color=colors[i],
                    label=f"k={k}",
                )
        ax_k.set_xlabel("log10 k")
        ax_n.set_xlabel("log10 n")
        for ax in (ax_k, ax_n):
            ax.set_ylabel("log10 variance")
            ax.legend(frameon=False)
            _themify(ax)
        self.fig = fig
        return fig


def _run_replicates(
    problem: ProblemInstance,
    schedule: StepSchedule,
    checkpoints: np.ndarray,
    seeds: Sequence[int],
    sample_size: int | None,
) -> np.ndarray:
    """
    Stochastic prices of `J` independent replicates, vectorized.

    Replicate `j` follows exactly the iterations of
    `stochastic_uzawa(problem, schedule, K, seeds[j])`, or of the sampled
    variant when `sample_size` is given.
    """
    population = problem.population
    if not isinstance(population, LQGPopulation):
        raise TypeError("replicates can only be vectorized on an `LQGPopulation`")
    params = problem.aggregate.params  # type: ignore[attr-defined]
    stack = population._stack
    n = population.n_agents
    J = len(seeds)
    K = int(checkpoints.max(initial=0))
    lam = np.zeros((J,) + problem.weight.shape)
    records = np.empty((len(checkpoints), J) + problem.weight.shape)
    record_at = {int(k): i for i, k in enumerate(checkpoints)}
    limit = DIVERGENCE_FACTOR
    if 0 in record_at:
        records[record_at[0]] = lam

    rows = n if sample_size is None else sample_size
    all_agents = np.arange(n)
    for k in range(K):
        if sample_size is None:
            sub, agents = stack, np.broadcast_to(all_agents, (J, n))
        else:
            agents = np.stack([sample_indices(s, k, n, sample_size) for s in seeds])
            sub = stack.take(agents)
        offsets, _, _ = sub.offsets(lam)
        controls, _ = sub.rollout(offsets)
        _check_box(sub, controls, agents, iteration=k, replicate_axis=True)
        if stack.has_noise:
            noise = np.stack(
                [
                    derive_block_stream(s, k).standard_normal(
                        (rows, population.horizon, population.noise_dim)
                    )
                    for s in seeds
                ]
            )
            controls, _ = sub.rollout(offsets, noise)
        Y = controls.mean(axis=1) - v_opt_lqg(params, lam)
        finite = np.all(np.isfinite(Y), axis=(1, 2))
        if not np.all(finite):
            raise NonFiniteGradientError(
                "non-finite stochastic gradient",
                iteration=k,
                replicate=int(np.argmin(finite)),
            )
        lam = lam + step_rho(schedule, k) * Y
        norms = np.sqrt(np.sum(lam**2, axis=(1, 2)))
        if np.any(norms > limit):
            j = int(np.argmax(norms))
            raise DivergenceError(
                f"||lambda|| = {norms[j]:.3g} exceeds the divergence guard {limit:.3g}",
                iteration=k,
                replicate=j,
            )
        if k + 1 in record_at:
            records[record_at[k + 1]] = lam
        if (k + 1) % max(1, K // 10) == 0:
            logger.info("k=%d mean |lambda|=%.4g", k + 1, float(norms.mean()))
    return records


def replicate_seed(seed: int, n: int, j: int) -> int:
    """Master seed of replicate `j` at population size `n`."""
    return derive_seed(seed, StreamPurpose.REPLICATE, n, j)


def bias_variance_experiment(
    family: LQGFamily,
    n_values: Sequence[int] = (10, 100),
    checkpoints: Sequence[int] = (10, 100, 1000),
    J: int = 200,
    schedule: StepSchedule = StepSchedule(4.0, 20.0),
    seed: int = 0,
    reference_iterations: int = 10_000,
    sample_size: int | None = None,
) -> BiasVarianceReport:
    """
    Bias and variance of Stochastic Uzawa prices across population sizes.

    For every `n`, the reference price is computed by deterministic Uzawa
    over `reference_iterations` iterations; then `J` independent replicates
    of stochastic Uzawa, with seeds `derive_seed(seed, REPLICATE, n, j)`,
    are run up to the last checkpoint.

    Args:
        family: Instance family.
        n_values: Population sizes.
        checkpoints: Iterations at which prices are recorded.
        J: Number of replicates per population size.
        schedule: Step sizes.
        seed: Master seed.
        reference_iterations: Iterations of the deterministic reference.
        sample_size: Run the sampled variant with this many agents per
            iteration instead.

    Returns:
        A `BiasVarianceReport`.
    """
    if J < 1:
        raise ValueError(f"`J` must be at least 1, not {J}")
    checkpoints = np.asarray(sorted(set(int(k) for k in checkpoints)), dtype=int)
    if checkpoints.size == 0 or checkpoints[0] < 0:
        raise ValueError("`checkpoints` must be nonnegative iteration indices")
    lambdas = []
    references = []
    for n in n_values:
        problem = family.problem(int(n))
        reference, _ = deterministic_uzawa(problem, schedule, reference_iterations)
        references.append(reference.values)
        seeds = [replicate_seed(seed, int(n), j) for j in range(J)]
        logger.info("n=%d: %d replicates up to k=%d", n, J, checkpoints[-1])
        lambdas.append(_run_replicates(problem, schedule, checkpoints, seeds, sample_size))
    metadata = {
        "seed": int(seed),
        "J": int(J),
        "schedule": {"a": schedule.a, "b": schedule.b},
        "reference_iterations": int(reference_iterations),
        "sample_size": sample_size,
        "horizon": family.horizon,
        "nu": family.nu,
        "heterogeneity": family.heterogeneity,
    }
    return BiasVarianceReport(
        n_values, checkpoints, np.stack(lambdas), np.stack(references), metadata
    )

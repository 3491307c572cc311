"""
Dense convex quadratic programming with a Mehrotra predictor-corrector
primal-dual interior point method.

The problems solved here are small (a few dozen to a few hundred
variables): every iteration factorizes the reduced KKT system densely.
"""

import io
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.optimize import linprog

from .exceptions import QPInfeasible, QPMaxIterations, QPNotPSD, QPError

logger = logging.getLogger(__name__)

PSD_THRESHOLD: float = 1e-8
_FRACTION_TO_BOUNDARY: float = 0.99
_REGULARIZATION: float = 1e-11


def _as_matrix(a, n_cols: int, name: str) -> np.ndarray:
    if a is None:
        return np.zeros((0, n_cols))
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.shape[1] != n_cols:
        raise ValueError(f"`{name}` must have {n_cols} columns, not {a.shape[1]}")
    return a


def _as_vector(b, size: int, name: str, fill: float = 0.0) -> np.ndarray:
    if b is None:
        return np.full(size, fill)
    b = np.atleast_1d(np.asarray(b, dtype=float)).ravel()
    if b.size == 1 and size != 1:
        b = np.full(size, float(b[0]))
    if b.size != size:
        raise ValueError(f"`{name}` must have {size} entries, not {b.size}")
    return b


@dataclass
class QPProblem:
    """
    `min 1/2 x^T Q x + c^T x + offset` subject to `A_eq x = b_eq`,
    `A_in x <= b_in` and `lower <= x <= upper`.

    Attributes:
        Q (np.ndarray): Symmetric positive semidefinite matrix, shape `(N, N)`.
        c (np.ndarray): Linear term, shape `(N,)`.
        A_eq (np.ndarray): Equality matrix, shape `(p, N)`.
        b_eq (np.ndarray): Equality right-hand side.
        A_in (np.ndarray): Inequality matrix, shape `(m, N)`.
        b_in (np.ndarray): Inequality right-hand side.
        lower (np.ndarray): Lower bounds, `-inf` where absent.
        upper (np.ndarray): Upper bounds, `+inf` where absent.
        offset (float): Constant added to the objective.
        labels_eq (list[str]): Names of the equality rows.
        labels_in (list[str]): Names of the inequality rows.
    """

    Q: np.ndarray
    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    offset: float = 0.0
    labels_eq: list[str] = field(default_factory=list)
    labels_in: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = self.Q.shape[0]
        if self.Q.shape != (n, n):
            raise ValueError(f"`Q` must be square, not {self.Q.shape}")
        scale = max(1.0, float(np.abs(self.Q).max(initial=0.0)))
        if np.abs(self.Q - self.Q.T).max(initial=0.0) > 1e-10 * scale:
            raise ValueError("`Q` must be symmetric")
        self.Q = 0.5 * (self.Q + self.Q.T)
        self.c = _as_vector(self.c, n, "c")
        self.A_eq = _as_matrix(self.A_eq, n, "A_eq")
        self.b_eq = _as_vector(self.b_eq, self.A_eq.shape[0], "b_eq")
        self.A_in = _as_matrix(self.A_in, n, "A_in")
        self.b_in = _as_vector(self.b_in, self.A_in.shape[0], "b_in")
        self.lower = _as_vector(self.lower, n, "lower", fill=-np.inf)
        self.upper = _as_vector(self.upper, n, "upper", fill=np.inf)
        if np.any(self.lower > self.upper):
            raise ValueError("`lower` must not exceed `upper`")
        if not self.labels_eq:
            self.labels_eq = [f"eq[{i}]" for i in range(self.A_eq.shape[0])]
        if not self.labels_in:
            self.labels_in = [f"in[{i}]" for i in range(self.A_in.shape[0])]
        if len(self.labels_eq) != self.A_eq.shape[0]:
            raise ValueError("`labels_eq` must name every equality row")
        if len(self.labels_in) != self.A_in.shape[0]:
            raise ValueError("`labels_in` must name every inequality row")

    @property
    def n_vars(self) -> int:
        return self.Q.shape[0]

    def objective(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.Q @ x + self.c @ x + self.offset)

    def scaled(self, s: float) -> "QPProblem":
        """Same feasible set with the objective multiplied by `s > 0`."""
        if not s > 0:
            raise ValueError(f"`s` must be positive, not {s}")
        return QPProblem(
            s * self.Q,
            s * self.c,
            self.A_eq,
            self.b_eq,
            self.A_in,
            self.b_in,
            self.lower,
            self.upper,
            s * self.offset,
            list(self.labels_eq),
            list(self.labels_in),
        )

    def inequality_system(self) -> tuple[np.ndarray, np.ndarray, list[str]]:
        """Inequality rows followed by one row per finite bound."""
        n = self.n_vars
        eye = np.eye(n)
        lo = np.flatnonzero(np.isfinite(self.lower))
        hi = np.flatnonzero(np.isfinite(self.upper))
        G = np.vstack([self.A_in, -eye[lo], eye[hi]])
        h = np.concatenate([self.b_in, -self.lower[lo], self.upper[hi]])
        labels = (
            list(self.labels_in)
            + [f"x[{i}] >= lower" for i in lo]
            + [f"x[{i}] <= upper" for i in hi]
        )
        return G, h, labels

    def dual_value(self, solution: "QPSolution") -> float:
        """
        Lagrangian dual function at the returned multipliers.

        Requires a positive definite `Q`.
        """
        G, h, _ = self.inequality_system()
        z = solution.z_stacked
        w = self.c + self.A_eq.T @ solution.y + G.T @ z
        factor = la.cho_factor(self.Q)
        return float(
            -0.5 * w @ la.cho_solve(factor, w)
            - self.b_eq @ solution.y
            - h @ z
            + self.offset
        )

    def dump(self, path: str | os.PathLike) -> str:
        """
        Write the problem data in a plain-text matrix format.

        Every block starts with a `# name rows cols` line followed by its
        rows, whitespace separated.
        """
        blocks = [
            ("Q", self.Q),
            ("c", self.c[np.newaxis, :]),
            ("A_eq", self.A_eq),
            ("b_eq", self.b_eq[np.newaxis, :]),
            ("A_in", self.A_in),
            ("b_in", self.b_in[np.newaxis, :]),
            ("lower", self.lower[np.newaxis, :]),
            ("upper", self.upper[np.newaxis, :]),
            ("offset", np.array([[self.offset]])),
        ]
        buffer = io.StringIO()
        buffer.write("# uzawa-qp 1\n")
        for name, block in blocks:
            buffer.write(f"# {name} {block.shape[0]} {block.shape[1]}\n")
            if block.size:
                np.savetxt(buffer, block, fmt="%.17g")
        with open(path, "w", encoding="utf-8") as f:
            f.write(buffer.getvalue())
        return os.fspath(path)


@dataclass
class QPSolution:
    """
    Primal-dual solution of a `QPProblem`.

    Attributes:
        x (np.ndarray): Primal solution.
        y (np.ndarray): Equality multipliers.
        z (np.ndarray): Inequality multipliers (nonnegative).
        z_lower (np.ndarray): Lower bound multipliers, zero where no bound.
        z_upper (np.ndarray): Upper bound multipliers, zero where no bound.
        objective (float): Objective value at `x`.
        stationarity (float): `||Qx + c + A_eq^T y + A_in^T z - z_lower + z_upper||_inf`.
        primal_residual (float): Largest equality or inequality violation.
        complementarity (float): Largest multiplier times slack product.
        iterations (int): Interior point iterations.
        z_stacked (np.ndarray): Multipliers of `QPProblem.inequality_system()`.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    objective: float
    stationarity: float
    primal_residual: float
    complementarity: float
    iterations: int
    z_stacked: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


def _repair_psd(Q: np.ndarray) -> np.ndarray:
    if Q.size == 0:
        return Q
    eigenvalues, vectors = la.eigh(Q)
    smallest = float(eigenvalues.min())
    if smallest < -PSD_THRESHOLD:
        raise QPNotPSD(f"`Q` has eigenvalue {smallest:.3e} < -{PSD_THRESHOLD:g}")
    if smallest < 0:
        Q = (vectors * np.maximum(eigenvalues, 0.0)) @ vectors.T
        Q = 0.5 * (Q + Q.T)
    return Q


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    negative = dv < 0
    if not np.any(negative):
        return 1.0
    return float(min(1.0, np.min(-v[negative] / dv[negative])))


class _KKTSystem:
    """Factorized reduced Newton system with iterative refinement."""

    def __init__(self, M: np.ndarray, A: np.ndarray):
        n, p = M.shape[0], A.shape[0]
        self._n = n
        self._K = np.block([[M, A.T], [A, np.zeros((p, p))]])
        reg = _REGULARIZATION * max(1.0, float(np.abs(M).max(initial=0.0)))
        K_reg = self._K.copy()
        K_reg[:n, :n] += reg * np.eye(n)
        K_reg[n:, n:] -= reg * np.eye(p)
        self._lu = la.lu_factor(K_reg, check_finite=False)

    def solve(self, rhs_x: np.ndarray, rhs_y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rhs = np.concatenate([rhs_x, rhs_y])
        sol = la.lu_solve(self._lu, rhs, check_finite=False)
        for _ in range(2):
            sol = sol - la.lu_solve(self._lu, self._K @ sol - rhs, check_finite=False)
        return sol[: self._n], sol[self._n :]


def _farkas_certificate(
    A: np.ndarray, b: np.ndarray, G: np.ndarray, h: np.ndarray, y: np.ndarray, z: np.ndarray
) -> dict | None:
    norm = max(np.abs(y).max(initial=0.0), np.abs(z).max(initial=0.0))
    if not np.isfinite(norm) or norm == 0:
        return None
    y_hat, z_hat = y / norm, np.maximum(z, 0.0) / norm
    residual = float(np.abs(A.T @ y_hat + G.T @ z_hat).max(initial=0.0))
    gap = float(b @ y_hat + h @ z_hat)
    if residual <= 1e-7 and gap < -1e-6:
        return {"y": y_hat, "z": z_hat, "residual": residual, "gap": gap}
    return None


def _binding_labels(weights: np.ndarray, labels: list[str], top: int = 5) -> list[str]:
    if weights.size == 0:
        return []
    weights = np.nan_to_num(np.abs(weights), nan=0.0, posinf=np.finfo(float).max)
    order = np.argsort(-weights, kind="stable")
    total = weights.sum()
    if total == 0:
        return []
    return [labels[i] for i in order[:top] if weights[i] > 1e-6 * total]


def _solve_equality_qp(problem: QPProblem, Q: np.ndarray, tol: float) -> QPSolution:
    A, b = problem.A_eq, problem.b_eq
    n, p = problem.n_vars, A.shape[0]
    K = np.block([[Q, A.T], [A, np.zeros((p, p))]])
    sol, *_ = la.lstsq(K, np.concatenate([-problem.c, b]))
    x, y = sol[:n], sol[n:]
    primal = float(np.abs(A @ x - b).max(initial=0.0))
    stationarity = float(np.abs(Q @ x + problem.c + A.T @ y).max(initial=0.0))
    scale = 1.0 + max(np.abs(b).max(initial=0.0), np.abs(problem.c).max(initial=0.0))
    if primal > tol * scale:
        raise QPInfeasible(
            "equality constraints are inconsistent",
            binding=_binding_labels(A @ x - b, problem.labels_eq),
        )
    if stationarity > tol * scale:
        raise QPError("objective is unbounded below on the equality constraints")
    return QPSolution(
        x=x,
        y=y,
        z=np.zeros(0),
        z_lower=np.zeros(n),
        z_upper=np.zeros(n),
        objective=problem.objective(x),
        stationarity=stationarity,
        primal_residual=primal,
        complementarity=0.0,
        iterations=0,
    )


def qp_solve(problem: QPProblem, tol: float = 1e-8, max_iter: int = 100) -> QPSolution:
    """
    Solve a convex quadratic program.

    Args:
        problem: The quadratic program.
        tol: Termination tolerance on the KKT residuals, relative to the
            magnitude of the problem data (absolute for unit-scaled data).
        max_iter: Maximum number of interior point iterations.

    Returns:
        A `QPSolution` whose KKT residuals are within tolerance.

    Raises:
        QPNotPSD: `Q` has an eigenvalue below `-1e-8`.
        QPInfeasible: The feasible set is empty.
        QPMaxIterations: The tolerance was not reached in `max_iter` iterations.
    """
    if not tol > 0:
        raise ValueError(f"`tol` must be positive, not {tol}")
    Q = _repair_psd(problem.Q)
    c = problem.c
    A, b = problem.A_eq, problem.b_eq
    G, h, labels = problem.inequality_system()
    n, p, m = problem.n_vars, A.shape[0], G.shape[0]

    if m == 0:
        return _solve_equality_qp(problem, Q, tol)

    scale_d = 1.0 + max(np.abs(c).max(initial=0.0), np.abs(Q).max(initial=0.0))
    scale_p = 1.0 + max(np.abs(b).max(initial=0.0), np.abs(h).max(initial=0.0))

    # starting point from the least-squares fit of the inequalities
    x, y = _KKTSystem(Q + G.T @ G, A).solve(-c + G.T @ h, b)
    s = np.maximum(h - G @ x, 1.0)
    z = np.ones(m)

    last = (x, y, z, s)
    converged = False
    stalled = 0
    iteration = 0
    for iteration in range(1, max_iter + 1):
        r_d = Q @ x + c + A.T @ y + G.T @ z
        r_p = A @ x - b
        r_i = G @ x + s - h
        mu = float(s @ z) / m

        primal = max(np.abs(r_p).max(initial=0.0), np.abs(r_i).max(initial=0.0))
        if (
            np.abs(r_d).max(initial=0.0) <= tol * scale_d
            and primal <= tol * scale_p
            and float(np.max(s * z)) <= tol * scale_d * scale_p
        ):
            converged = True
            break

        w = z / s
        try:
            kkt = _KKTSystem(Q + G.T @ (w[:, np.newaxis] * G), A)
        except (la.LinAlgError, ValueError):
            break

        def direction(r_sz: np.ndarray):
            rhs_x = -r_d - G.T @ (w * r_i) + G.T @ (r_sz / s)
            dx, dy = kkt.solve(rhs_x, -r_p)
            dz = w * (G @ dx + r_i) - r_sz / s
            ds = -r_i - G @ dx
            return dx, dy, dz, ds

        dx_a, dy_a, dz_a, ds_a = direction(s * z)
        alpha_a = min(_max_step(s, ds_a), _max_step(z, dz_a))
        mu_aff = float((s + alpha_a * ds_a) @ (z + alpha_a * dz_a)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        dx, dy, dz, ds = direction(s * z + ds_a * dz_a - sigma * mu)
        alpha = min(1.0, _FRACTION_TO_BOUNDARY * min(_max_step(s, ds), _max_step(z, dz)))

        x, y, z, s = x + alpha * dx, y + alpha * dy, z + alpha * dz, s + alpha * ds
        if not all(np.all(np.isfinite(v)) for v in (x, y, z, s)):
            x, y, z, s = last
            break
        last = (x, y, z, s)
        stalled = stalled + 1 if alpha < 1e-10 else 0
        if stalled >= 5:
            break

    if not converged:
        certificate = _farkas_certificate(A, b, G, h, y, z)
        if certificate is not None:
            raise QPInfeasible(
                "Farkas certificate found",
                certificate=certificate,
                binding=_binding_labels(certificate["z"], labels),
            )
        feasibility = linprog(
            np.zeros(n),
            A_ub=G,
            b_ub=h,
            A_eq=A if p else None,
            b_eq=b if p else None,
            bounds=[(None, None)] * n,
            method="highs",
        )
        if feasibility.status == 2:
            raise QPInfeasible(
                "feasibility restoration failed",
                binding=_binding_labels(z, labels),
            )
        raise QPMaxIterations(
            f"no convergence after {iteration} iterations (tol={tol:g})"
        )

    logger.debug("QP with %d variables solved in %d iterations", n, iteration)

    n_in = problem.A_in.shape[0]
    has_lower = np.isfinite(problem.lower)
    has_upper = np.isfinite(problem.upper)
    n_lo = int(has_lower.sum())
    z_lower = np.zeros(n)
    z_upper = np.zeros(n)
    z_lower[has_lower] = z[n_in : n_in + n_lo]
    z_upper[has_upper] = z[n_in + n_lo :]

    slack = h - G @ x
    return QPSolution(
        x=x,
        y=y,
        z=z[:n_in],
        z_lower=z_lower,
        z_upper=z_upper,
        objective=problem.objective(x),
        stationarity=float(np.abs(Q @ x + c + A.T @ y + G.T @ z).max(initial=0.0)),
        primal_residual=float(
            max(np.abs(A @ x - b).max(initial=0.0), np.max(-slack, initial=0.0))
        ),
        complementarity=float(np.abs(z * slack).max(initial=0.0)),
        iterations=iteration,
        z_stacked=z,
    )

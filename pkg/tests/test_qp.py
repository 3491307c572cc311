import itertools

import pytest
import numpy as np

from uzawa.exceptions import QPError, QPInfeasible, QPMaxIterations, QPNotPSD
from uzawa.qp import QPProblem, qp_solve


@pytest.fixture
def simplex_qp():
    # min 1/2 |x|^2 - x1 - x2  s.t.  x1 + x2 <= 1
    return QPProblem(
        Q=np.eye(2),
        c=[-1.0, -1.0],
        A_in=[[1.0, 1.0]],
        b_in=[1.0],
        labels_in=["budget"],
    )


def test_inequality_qp(simplex_qp):
    solution = qp_solve(simplex_qp)
    np.testing.assert_allclose(solution.x, [0.5, 0.5], atol=1e-7)
    assert solution.objective == pytest.approx(-0.75)
    assert solution.z[0] == pytest.approx(0.5, abs=1e-6)
    assert solution.primal_residual < 1e-7
    assert solution.iterations >= 1


def test_strong_duality(simplex_qp):
    solution = qp_solve(simplex_qp)
    assert simplex_qp.dual_value(solution) == pytest.approx(solution.objective, abs=1e-6)


def test_bounds():
    problem = QPProblem(Q=[[1.0]], c=[-3.0], lower=[0.0], upper=[2.0])
    solution = qp_solve(problem)
    assert solution.x[0] == pytest.approx(2.0, abs=1e-7)
    assert solution.objective == pytest.approx(-4.0)
    assert solution.z_upper[0] == pytest.approx(1.0, abs=1e-6)
    assert solution.z_lower[0] == pytest.approx(0.0, abs=1e-6)


def test_equality_only():
    problem = QPProblem(Q=np.eye(2), c=[0.0, 0.0], A_eq=[[1.0, 1.0]], b_eq=[2.0])
    solution = qp_solve(problem)
    np.testing.assert_allclose(solution.x, [1.0, 1.0])
    assert solution.y[0] == pytest.approx(-1.0)
    assert solution.iterations == 0


def test_linear_program():
    problem = QPProblem(
        Q=np.zeros((2, 2)),
        c=[-1.0, -2.0],
        A_in=[[1.0, 1.0]],
        b_in=[4.0],
        lower=[0.0, 0.0],
        upper=[3.0, np.inf],
    )
    solution = qp_solve(problem)
    np.testing.assert_allclose(solution.x, [0.0, 4.0], atol=1e-6)
    assert solution.objective == pytest.approx(-8.0, abs=1e-6)


def test_random_qp_beats_feasible_points():
    rng = np.random.default_rng(0)
    n, m = 6, 4
    L = rng.standard_normal((n, n))
    problem = QPProblem(
        Q=L @ L.T + 0.1 * np.eye(n),
        c=rng.standard_normal(n),
        A_eq=rng.standard_normal((1, n)),
        b_eq=[0.0],
        A_in=rng.standard_normal((m, n)),
        b_in=np.ones(m),
        lower=np.full(n, -2.0),
        upper=np.full(n, 2.0),
    )
    solution = qp_solve(problem)
    assert solution.primal_residual < 1e-6
    assert np.all(solution.z >= -1e-9)

    a = problem.A_eq[0]
    for _ in range(200):
        x = rng.uniform(-1, 1, n)
        x -= a * (a @ x) / (a @ a)
        if np.all(problem.A_in @ x <= problem.b_in) and np.all(np.abs(x) <= 2):
            assert solution.objective <= problem.objective(x) + 1e-7


def test_scaled_problem_keeps_minimizer(simplex_qp):
    solution = qp_solve(simplex_qp.scaled(1e3))
    np.testing.assert_allclose(solution.x, [0.5, 0.5], atol=1e-6)
    assert solution.objective == pytest.approx(-750.0, rel=1e-6)

    with pytest.raises(ValueError, match="`s` must be positive"):
        simplex_qp.scaled(0.0)


def test_infeasible_bounds():
    problem = QPProblem(Q=[[1.0]], c=[0.0], A_in=[[1.0]], b_in=[-1.0], lower=[0.0])
    with pytest.raises(QPInfeasible) as excinfo:
        qp_solve(problem)
    assert isinstance(excinfo.value, QPError)


def test_infeasible_equalities():
    problem = QPProblem(
        Q=np.eye(2), c=[0.0, 0.0], A_eq=[[1.0, 1.0], [1.0, 1.0]], b_eq=[1.0, 2.0]
    )
    with pytest.raises(QPInfeasible, match="inconsistent"):
        qp_solve(problem)


def test_max_iterations(simplex_qp):
    with pytest.raises(QPMaxIterations):
        qp_solve(simplex_qp, max_iter=1)


def test_not_psd():
    problem = QPProblem(Q=[[-1.0]], c=[0.0], lower=[0.0], upper=[1.0])
    with pytest.raises(QPNotPSD):
        qp_solve(problem)


def test_slightly_negative_q_is_repaired():
    problem = QPProblem(
        Q=np.diag([1.0, -1e-10]), c=[-1.0, 1.0], lower=[0.0, 0.0], upper=[5.0, 5.0]
    )
    solution = qp_solve(problem)
    np.testing.assert_allclose(solution.x, [1.0, 0.0], atol=1e-6)


@pytest.mark.parametrize(
    "kwargs, match",
    [
        ({"Q": [[1.0, 2.0], [0.0, 1.0]], "c": [0.0, 0.0]}, "symmetric"),
        ({"Q": np.eye(2), "c": [0.0, 0.0, 0.0]}, "`c` must have 2 entries"),
        ({"Q": np.eye(2), "c": [0.0, 0.0], "A_in": [[1.0]]}, "`A_in` must have 2 columns"),
        ({"Q": [[1.0]], "c": [0.0], "lower": [1.0], "upper": [0.0]}, "`lower` must not"),
        (
            {"Q": [[1.0]], "c": [0.0], "A_in": [[1.0]], "b_in": [1.0], "labels_in": []},
            None,
        ),
    ],
)
def test_problem_validation(kwargs, match):
    if match is None:
        assert QPProblem(**kwargs).labels_in == ["in[0]"]
        return
    with pytest.raises(ValueError, match=match):
        QPProblem(**kwargs)


def test_invalid_tolerance(simplex_qp):
    with pytest.raises(ValueError, match="`tol` must be positive"):
        qp_solve(simplex_qp, tol=0.0)


def test_inequality_system_labels():
    problem = QPProblem(
        Q=np.eye(2), c=[0.0, 0.0], A_in=[[1.0, 0.0]], b_in=[1.0], lower=[0.0, -np.inf]
    )
    G, h, labels = problem.inequality_system()
    assert G.shape == (2, 2)
    np.testing.assert_array_equal(h, [1.0, 0.0])
    assert labels == ["in[0]", "x[0] >= lower"]


def test_dump(tmp_path, simplex_qp):
    path = simplex_qp.dump(tmp_path / "problem.txt")
    with open(path) as f:
        lines = f.read().splitlines()
    assert lines[0] == "# uzawa-qp 1"
    assert "# Q 2 2" in lines
    assert "# A_eq 0 2" in lines


def active_set_minimum(Q, c, A, b):
    """Best objective over the KKT points of every active subset."""
    n, m = Q.shape[0], A.shape[0]
    best = np.inf
    for size in range(min(m, n) + 1):
        for active in itertools.combinations(range(m), size):
            rows = A[list(active)]
            kkt = np.block([[Q, rows.T], [rows, np.zeros((size, size))]])
            rhs = np.concatenate([-c, b[list(active)]])
            try:
                solution = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            if not np.allclose(kkt @ solution, rhs, atol=1e-9):
                continue
            x, z = solution[:n], solution[n:]
            if np.all(A @ x <= b + 1e-9) and np.all(z >= -1e-9):
                best = min(best, 0.5 * x @ Q @ x + c @ x)
    return best


@pytest.mark.parametrize("seed", range(100))
def test_matches_active_set_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    m = int(rng.integers(1, 5))
    L = rng.standard_normal((n, n))
    Q = L @ L.T + 0.5 * np.eye(n)
    c = 3 * rng.standard_normal(n)
    A = rng.standard_normal((m, n))
    # the origin is strictly feasible
    b = rng.uniform(0.1, 1.0, m)

    solution = qp_solve(QPProblem(Q=Q, c=c, A_in=A, b_in=b))
    assert solution.objective == pytest.approx(
        active_set_minimum(Q, c, A, b), rel=1e-7, abs=1e-6
    )

class UzawaError(Exception):
    """Base class of every error raised by the solvers of this package."""


class SolverError(UzawaError):
    """
    An agent or aggregate solve failed inside a dual iteration.

    Attributes:
        iteration (int | None): Dual iteration at which the failure happened.
        agent (int | None): Agent index, when the failure is local to one agent.
        replicate (int | None): Replicate index in repeated experiments.
    """

    def __init__(
        self,
        message: str,
        *,
        iteration: int | None = None,
        agent: int | None = None,
        replicate: int | None = None,
    ):
        self.iteration = iteration
        self.agent = agent
        self.replicate = replicate
        context = [
            f"{name}={value}"
            for name, value in (
                ("iteration", iteration),
                ("agent", agent),
                ("replicate", replicate),
            )
            if value is not None
        ]
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


class NonFiniteGradientError(SolverError):
    """The stochastic gradient contains NaN or infinite entries."""


class DivergenceError(SolverError):
    """The price iterate left the region the divergence guard allows."""


class GrowthBoundError(SolverError):
    """The gradient norm violates the calibrated bound M1 + M2 ||lambda||^2."""


class BoxConstraintError(SolverError):
    """An unconstrained best response leaves the box it was assumed to respect."""


class MissingCapabilityError(UzawaError, NotImplementedError):
    """The agents cannot provide an exact expected control."""


class GridValidityError(UzawaError, ValueError):
    """A dynamic programming grid cannot produce valid transition probabilities."""


class QPError(UzawaError):
    """Base class of quadratic programming failures."""


class QPInfeasible(QPError):
    """
    The feasible set of the quadratic program is empty.

    Attributes:
        certificate (dict | None): Normalized multipliers `(y, z)` such that
            `A_eq^T y + A_in^T z = 0`, `z >= 0` and `b_eq^T y + b_in^T z < 0`,
            when one was found during the iterations.
        binding (list[str]): Labels of the constraints carrying the largest
            weight in the certificate, or in the last iterate.
    """

    def __init__(
        self,
        message: str,
        certificate: dict | None = None,
        binding: list[str] | None = None,
    ):
        self.certificate = certificate
        self.binding = [] if binding is None else list(binding)
        if self.binding:
            message = f"{message}; binding: {', '.join(self.binding)}"
        super().__init__(message)


class QPMaxIterations(QPError):
    """The interior point iterations stopped before reaching the tolerance."""


class QPNotPSD(QPError, ValueError):
    """The quadratic matrix has an eigenvalue below the repair threshold."""


class ConfigError(UzawaError, ValueError):
    """
    An experiment configuration is missing a section, a key, or is malformed.

    Attributes:
        section (str | None): Offending section name.
        key (str | None): Offending key name.
        line (int | None): Line number in the configuration file, if known.
    """

    def __init__(
        self,
        message: str,
        *,
        section: str | None = None,
        key: str | None = None,
        line: int | None = None,
    ):
        self.section = section
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if section is not None:
            where.append(f"[{section}]" if key is None else f"[{section}] {key}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)

"""Worst-case disturbance identification.

The search treats the disturbance on one target branch as the control input
of the cascade dynamics and minimizes

    J = 0.5*||y_final||^2 + epsilon * sum_{k < horizon} u_k^2 / (horizon - k)

The first-order stationarity conditions couple the stacked trajectory
Y^1..Y^m to a costate recursion driven backward through the per-step
Jacobians; eliminating the controls leaves one algebraic system in the
stacked trajectory, solved here with a quasi-Newton root finder from random
initial trajectories.  Every candidate control is validated by forward
simulation before its cost may replace the incumbent, so the reported
optimum never relies on the solver's internal trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import root as scipy_root

from .cascade import (
    CascadeTrajectory,
    DisturbancePlan,
    check_transition_band,
    line_state,
    simulate,
)
from .gridlinalg import DEAD_BRANCH_TOL, SingularIslandError
from .network import PowerNetwork
from .powerflow import solve_flows
from .sensitivity import step_jacobian


class ResidualEvaluationError(RuntimeError):
    """Power flow failed while evaluating a candidate trajectory."""

    def __init__(self, step: int, cause: Exception):
        self.step = step
        super().__init__(f"power flow failed at candidate step {step}: {cause}")


@dataclass(frozen=True)
class SearchConfig:
    """All solver and search parameters.

    steps is the cascade length m; horizon is the number of initial steps at
    which the control may act (1 <= horizon <= steps-1).  seed feeds a
    counter-based generator: iteration i of the search on branch b draws its
    random initial trajectory from stream (seed, b, i), so results are
    reproducible and branch searches are independent.
    """

    steps: int
    sigma: float = 5e4
    epsilon: float = 1e-4
    horizon: int = 1
    i_max: int = 10
    j_max: float = 1e6
    seed: int = 0
    root_tol: float = 1e-8
    max_solver_iterations: int = 20000
    tol_zero: float = DEAD_BRANCH_TOL

    def __post_init__(self) -> None:
        if self.steps < 2:
            raise ValueError(f"steps must be at least 2, got {self.steps}")
        if not 1 <= self.horizon <= self.steps - 1:
            raise ValueError(
                f"horizon must satisfy 1 <= horizon <= steps-1, got {self.horizon} with steps={self.steps}"
            )
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.i_max < 0:
            raise ValueError(f"i_max must be nonnegative, got {self.i_max}")
        if self.j_max <= 0:
            raise ValueError(f"j_max must be positive, got {self.j_max}")
        if self.root_tol < 0:
            raise ValueError(f"root_tol must be nonnegative, got {self.root_tol}")
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")
        if self.max_solver_iterations <= 0:
            raise ValueError("max_solver_iterations must be positive")


@dataclass(frozen=True)
class CostBreakdown:
    terminal: float
    control_energy: float

    @property
    def total(self) -> float:
        return self.terminal + self.control_energy


def cost(trajectory: CascadeTrajectory, plan: DisturbancePlan, config: SearchConfig) -> CostBreakdown:
    """Terminal admittance energy plus weighted control energy.

    Rejects plans whose shape disagrees with the config; controls at or past
    the horizon are constrained to zero (their cost weight would be 1/0).
    """
    if plan.steps != config.steps:
        raise ValueError(f"plan has {plan.steps} steps but config expects {config.steps}")
    if plan.horizon != config.horizon:
        raise ValueError(f"plan horizon {plan.horizon} differs from config horizon {config.horizon}")
    if trajectory.m != plan.steps:
        raise ValueError(f"trajectory has {trajectory.m} steps but the plan has {plan.steps}")
    for k in range(config.horizon, plan.steps):
        if plan.controls[k] != 0.0:
            raise ValueError(f"control at step {k} must be zero at horizon {config.horizon}")
    final = trajectory.final.admittance
    terminal = 0.5 * float(final @ final)
    energy = config.epsilon * sum(
        plan.controls[k] ** 2 / (config.horizon - k) for k in range(config.horizon)
    )
    return CostBreakdown(terminal=terminal, control_energy=float(energy))


def _flow_solutions(network, states, base, injections, config):
    """Flow solutions at Y^0..Y^{m-1} of a candidate stacked trajectory."""
    sols = []
    for k in range(config.steps):
        y_k = base if k == 0 else states[k - 1]
        try:
            sols.append(solve_flows(network, y_k, injections, config.tol_zero))
        except SingularIslandError as exc:
            raise ResidualEvaluationError(k, exc) from exc
    return sols


def _costates_from_solutions(network, states, injections, config, sols) -> np.ndarray:
    """Rows are lambda_1..lambda_m propagated backward from lambda_m = Y^m."""
    m, n = config.steps, network.n
    lambdas = np.empty((m, n))
    lambdas[m - 1] = states[m - 1]
    for k in range(m - 1, 0, -1):
        jac = step_jacobian(
            network,
            states[k - 1],
            injections,
            sigma=config.sigma,
            tol_zero=config.tol_zero,
            flow=sols[k],
        ).matrix
        lambdas[k - 1] = jac.T @ lambdas[k]
    return lambdas


def costate_sequence(
    network: PowerNetwork, states, injections, config: SearchConfig
) -> np.ndarray:
    """Costates lambda_1..lambda_m along a stacked trajectory Y^1..Y^m."""
    states = np.asarray(states, dtype=float).reshape(config.steps, network.n)
    sols = _flow_solutions(network, states, network.susceptances, injections, config)
    return _costates_from_solutions(network, states, injections, config, sols)


def controls_from_costates(costates, target_branch: int, config: SearchConfig) -> np.ndarray:
    """Recover the per-step controls: u_k = -((horizon-k)/(2 eps)) * lambda_{k+1}[target]."""
    costates = np.asarray(costates, dtype=float)
    target = target_branch - 1
    u = np.zeros(config.steps)
    for k in range(config.horizon):
        u[k] = -(config.horizon - k) / (2.0 * config.epsilon) * costates[k, target]
    return u


def residual(
    stacked,
    network: PowerNetwork,
    target_branch: int,
    injections,
    config: SearchConfig,
) -> np.ndarray:
    """Stationarity defect of a candidate stacked trajectory, flattened (m*n,).

    Block k is Y^{k+1} - G(P^k) Y^k plus, on the target branch only, the
    weighted costate term that encodes the eliminated control.
    """
    m, n = config.steps, network.n
    states = np.asarray(stacked, dtype=float).reshape(m, n)
    base = network.susceptances
    target = target_branch - 1

    sols = _flow_solutions(network, states, base, injections, config)
    lambdas = _costates_from_solutions(network, states, injections, config, sols)

    out = np.empty((m, n))
    for k in range(m):
        prev = base if k == 0 else states[k - 1]
        g = np.asarray(line_state(sols[k].flows, network.thresholds, config.sigma))
        out[k] = states[k] - g * prev
        weight = max(0, config.horizon - k)
        if weight:
            out[k, target] += weight / (2.0 * config.epsilon) * lambdas[k, target]
    return out.ravel()


@dataclass(frozen=True)
class SolverReport:
    converged: bool
    residual_norm: float
    evaluations: int
    message: str


def solve_necessary_conditions(
    network: PowerNetwork,
    target_branch: int,
    config: SearchConfig,
    injections=None,
    rng: np.random.Generator | None = None,
    x0=None,
):
    """One quasi-Newton root solve of the stationarity system.

    Starts from a random stacked trajectory with every entry uniform in
    [0, nominal susceptance].  Convergence means the residual infinity norm
    fell to root_tol or below; a failed solve is reported, not raised.
    Returns (states (m, n), controls (m,) or None, SolverReport).
    """
    m, n = config.steps, network.n
    p = network.injections if injections is None else np.asarray(injections, dtype=float)
    if x0 is None:
        if rng is None:
            rng = np.random.default_rng(config.seed)
        x0 = rng.uniform(0.0, np.tile(network.susceptances, m))
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != m * n:
        raise ValueError(f"initial stacked trajectory has {x0.size} entries, expected {m * n}")

    def fun(x):
        try:
            return residual(x, network, target_branch, p, config)
        except ResidualEvaluationError:
            # steer the solver away from states whose power flow is unsolvable
            return 1e8 * (1.0 + np.abs(x))

    sol = scipy_root(fun, x0, method="hybr", options={"maxfev": config.max_solver_iterations})
    rnorm = float(np.max(np.abs(sol.fun)))
    converged = bool(np.isfinite(rnorm) and rnorm <= config.root_tol)
    states = sol.x.reshape(m, n)

    controls = None
    if converged:
        sols = _flow_solutions(network, states, network.susceptances, p, config)
        lambdas = _costates_from_solutions(network, states, p, config, sols)
        controls = controls_from_costates(lambdas, target_branch, config)
    report = SolverReport(
        converged=converged,
        residual_norm=rnorm,
        evaluations=int(sol.nfev),
        message=str(sol.message),
    )
    return states, controls, report


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    converged: bool
    residual_norm: float
    u0: float | None
    cost: float | None
    best_cost: float


@dataclass(frozen=True, eq=False)
class SearchResult:
    branch: int
    u_star: tuple[float, ...] | None
    j_star: float
    iterations: tuple[IterationRecord, ...]
    trajectory: CascadeTrajectory | None
    config: SearchConfig

    @property
    def u0(self) -> float | None:
        return self.u_star[0] if self.u_star is not None else None


def iterative_search(
    network: PowerNetwork,
    target_branch: int,
    config: SearchConfig,
    injections=None,
) -> SearchResult:
    """Repeated randomized root solves, each validated by forward simulation.

    Runs i_max + 1 rounds.  A converged round recovers its control, replays it
    through the cascade, and its simulated cost competes against the incumbent
    (initialized at j_max).  Failed rounds are recorded and skipped.
    """
    network.branch_index(target_branch)
    check_transition_band(network.thresholds, config.sigma)
    base_cost = 0.5 * float(network.susceptances @ network.susceptances)
    if config.j_max <= base_cost:
        raise ValueError(
            f"j_max={config.j_max:g} does not exceed the undisturbed terminal cost {base_cost:g}"
        )

    records: list[IterationRecord] = []
    j_star = config.j_max
    u_star: tuple[float, ...] | None = None
    best_traj: CascadeTrajectory | None = None

    for i in range(config.i_max + 1):
        rng = np.random.default_rng([config.seed, target_branch, i])
        _, controls, report = solve_necessary_conditions(
            network, target_branch, config, injections, rng=rng
        )
        j_i: float | None = None
        u0: float | None = None
        if report.converged and controls is not None:
            plan = DisturbancePlan(
                target_branch=target_branch,
                controls=tuple(float(u) for u in controls),
                horizon=config.horizon,
            )
            traj = simulate(
                network,
                plan,
                sigma=config.sigma,
                injections=injections,
                tol_zero=config.tol_zero,
            )
            j_i = cost(traj, plan, config).total
            u0 = plan.controls[0]
            if j_i < j_star:
                j_star = j_i
                u_star = plan.controls
                best_traj = traj
        records.append(
            IterationRecord(
                iteration=i,
                converged=report.converged,
                residual_norm=report.residual_norm,
                u0=u0,
                cost=j_i,
                best_cost=j_star,
            )
        )

    return SearchResult(
        branch=target_branch,
        u_star=u_star,
        j_star=j_star,
        iterations=tuple(records),
        trajectory=best_traj,
        config=config,
    )


def rank_branches(
    network: PowerNetwork, config: SearchConfig, injections=None
) -> tuple[SearchResult, ...]:
    """Worst-case search on every branch, sorted by ascending best cost.

    Each branch draws from its own seed stream, so the per-branch results do
    not depend on evaluation order; ties break toward the lower branch ID.
    """
    results = [
        iterative_search(network, branch.id, config, injections)
        for branch in network.branches
    ]
    results.sort(key=lambda r: (r.j_star, r.branch))
    return tuple(results)

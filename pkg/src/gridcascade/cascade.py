"""Breaker dynamics: smooth line-state function and the cascade recursion.

One cascade step scales every branch admittance by its line state and then
adds the control increment on the target branch:

    y[k+1] = g(flows(y[k])) * y[k] + e_target * u[k]        (breakers latch)
    y[k+1] = g(flows(y[k])) * y[0] + e_target * u[k]        (breakers reclose)

Flows are always evaluated at the pre-control state.  The line state g is a
smooth 0/1 switch around the branch power threshold; the transition band has
half-width pi/(2*sigma) in squared flow, so large sigma approaches a hard
breaker.  The dynamics themselves never round: a severed branch keeps its
(tiny) admittance value and merely stops conducting once it falls below the
dead-branch tolerance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .gridlinalg import DEAD_BRANCH_TOL, IslandDecomposition
from .network import PowerNetwork
from .powerflow import FlowSolution, solve_flows


def check_transition_band(thresholds, sigma: float) -> None:
    """Reject configurations whose healthy regime is empty for some branch."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    c2 = np.square(np.asarray(thresholds, dtype=float))
    half_band = np.pi / (2.0 * sigma)
    bad = np.nonzero(c2 <= half_band)[0]
    if bad.size:
        raise ValueError(
            f"threshold of branch {bad[0] + 1} is too small for sigma={sigma:g}: "
            "the healthy regime below the transition band is empty"
        )


def line_state(power, threshold, sigma: float):
    """Smooth breaker state in [0, 1] as a function of branch power.

    1 below the transition band, 0 above it, (1 - sin(sigma*(p^2 - c^2)))/2
    inside; continuously differentiable in the flow.
    """
    p2 = np.square(np.asarray(power, dtype=float))
    c2 = np.square(np.asarray(threshold, dtype=float))
    half_band = np.pi / (2.0 * sigma)
    delta = p2 - c2
    mid = 0.5 * (1.0 - np.sin(sigma * delta))
    out = np.where(delta >= half_band, 0.0, np.where(delta <= -half_band, 1.0, mid))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class DisturbancePlan:
    """Target branch, per-step control increments, and the control horizon.

    controls[k] is the susceptance increment added to the target branch after
    the step-k breaker action; entries at or beyond the horizon must be zero.
    """

    target_branch: int
    controls: tuple[float, ...]
    horizon: int = 1

    def __post_init__(self) -> None:
        m = len(self.controls)
        if m < 2:
            raise ValueError(f"a plan needs at least 2 steps, got {m}")
        if not 1 <= self.horizon <= m - 1:
            raise ValueError(f"horizon must satisfy 1 <= horizon <= steps-1, got {self.horizon} with {m} steps")
        for k in range(self.horizon, m):
            if self.controls[k] != 0.0:
                raise ValueError(f"control at step {k} is {self.controls[k]!r} but the horizon is {self.horizon}")

    @classmethod
    def single_shot(cls, target_branch: int, u0: float, steps: int, horizon: int = 1) -> "DisturbancePlan":
        """Plan that applies one increment at step 0 and nothing afterwards."""
        controls = (u0,) + (0.0,) * (steps - 1)
        return cls(target_branch=target_branch, controls=controls, horizon=horizon)

    @property
    def steps(self) -> int:
        return len(self.controls)


@dataclass(frozen=True, eq=False)
class TrajectoryStep:
    """State snapshot at one cascade step (flows evaluated at this state)."""

    index: int
    admittance: np.ndarray
    flows: np.ndarray
    line_states: np.ndarray
    islands: IslandDecomposition
    dead_branches: frozenset[int]
    new_outages: frozenset[int]
    slack_absorption: np.ndarray
    flagged_islands: tuple[tuple[int, ...], ...]


@dataclass(frozen=True, eq=False)
class CascadeTrajectory:
    steps: tuple[TrajectoryStep, ...]
    plan: DisturbancePlan
    sigma: float
    reclosing: bool
    tol_zero: float
    steady_state_step: int | None

    @property
    def m(self) -> int:
        return len(self.steps) - 1

    @property
    def final(self) -> TrajectoryStep:
        return self.steps[-1]

    @property
    def admittances(self) -> np.ndarray:
        """(m+1, n) array of the per-step admittance vectors."""
        return np.stack([s.admittance for s in self.steps])

    @property
    def outage_events(self) -> tuple[frozenset[int], ...]:
        return tuple(s.new_outages for s in self.steps)


def cascade_step(
    network: PowerNetwork,
    y,
    control: float = 0.0,
    target_branch: int | None = None,
    injections=None,
    *,
    sigma: float,
    reclosing: bool = False,
    y_base=None,
    tol_zero: float = DEAD_BRANCH_TOL,
) -> np.ndarray:
    """Advance the admittance vector by one step of the breaker recursion."""
    y = np.asarray(y, dtype=float)
    sol = solve_flows(network, y, injections, tol_zero)
    g = line_state(sol.flows, network.thresholds, sigma)
    base = network.susceptances if y_base is None else np.asarray(y_base, dtype=float)
    nxt = g * (base if reclosing else y)
    if control != 0.0:
        if target_branch is None:
            raise ValueError("a nonzero control needs a target branch")
        nxt = nxt.copy()
        nxt[network.branch_index(target_branch)] += control
    return nxt


def simulate(
    network: PowerNetwork,
    plan: DisturbancePlan,
    *,
    sigma: float,
    injections=None,
    reclosing: bool = False,
    tol_zero: float = DEAD_BRANCH_TOL,
) -> CascadeTrajectory:
    """Run the full cascade for a disturbance plan and record every step.

    The trajectory always spans plan.steps steps even if a steady state is
    reached earlier; the first step index at which the admittance vector
    repeats its predecessor (with no further control) is recorded.
    """
    check_transition_band(network.thresholds, sigma)
    m = plan.steps
    if m > network.n and not reclosing:
        warnings.warn(
            f"{m} cascade steps exceed the branch count {network.n}; without "
            "reclosing the cascade settles in at most one step per branch",
            stacklevel=2,
        )
    target = network.branch_index(plan.target_branch)
    y0 = network.susceptances.astype(float)

    records: list[TrajectoryStep] = []
    dead_prev: frozenset[int] = frozenset()
    steady: int | None = None
    y = y0.copy()
    g_prev = None
    for k in range(m + 1):
        sol = solve_flows(network, y, injections, tol_zero)
        g = line_state(sol.flows, network.thresholds, sigma)
        dead = {int(l) + 1 for l in np.nonzero(np.abs(y) < tol_zero)[0]}
        if g_prev is not None:
            dead.update(int(l) + 1 for l in np.nonzero(g_prev == 0.0)[0])
        dead_set = frozenset(dead)
        records.append(
            TrajectoryStep(
                index=k,
                admittance=y.copy(),
                flows=sol.flows,
                line_states=np.asarray(g, dtype=float),
                islands=sol.islands,
                dead_branches=dead_set,
                new_outages=dead_set - dead_prev,
                slack_absorption=sol.slack_absorption,
                flagged_islands=sol.flagged_islands,
            )
        )
        dead_prev = dead_set
        if k == m:
            break
        nxt = g * (y0 if reclosing else y)
        if plan.controls[k] != 0.0:
            nxt[target] += plan.controls[k]
        if steady is None and np.array_equal(nxt, y) and not any(plan.controls[k + 1 :]):
            steady = k  # the state stopped changing k steps after the disturbance
        y = nxt
        g_prev = g

    return CascadeTrajectory(
        steps=tuple(records),
        plan=plan,
        sigma=sigma,
        reclosing=reclosing,
        tol_zero=tol_zero,
        steady_state_step=steady,
    )

"""Analytic derivatives of the cascade dynamics.

Everything here is hand-derived from three pieces:

* the slope of the smooth line-state function inside its transition band,
* the derivative of the grounded inverse with respect to one branch
  susceptance, a triple product mirroring d(inv A) = -inv(A) dA inv(A)
  per island,
* the product-rule expansion of a branch flow's sensitivity.

Derivatives are taken at frozen island topology.  Branches below the
dead-branch tolerance do not conduct, so the implemented flow map is locally
constant in their admittance; flow_jacobian and step_jacobian therefore carry
zero columns for dead branches, which is what finite differences of the
actual dynamics see.  grounded_inverse_derivative keeps the raw triple
product even for a dead branch (the expression is well defined); it logs a
diagnostic when asked for one that bridges islands.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cascade import line_state
from .gridlinalg import (
    DEAD_BRANCH_TOL,
    IslandDecomposition,
    ground,
    grounded_inverse,
    live_mask,
    nodal_admittance,
)
from .network import PowerNetwork
from .powerflow import FlowSolution, solve_flows

log = logging.getLogger(__name__)


def line_state_derivative(power, threshold, sigma: float):
    """Slope of the line state with respect to branch power.

    -p * sigma * cos(sigma*(p^2 - c^2)) strictly inside the transition band,
    exactly zero outside; the interior expression vanishes at the band edges,
    so the derivative is continuous.
    """
    p = np.asarray(power, dtype=float)
    c = np.asarray(threshold, dtype=float)
    delta = np.square(p) - np.square(c)
    half_band = np.pi / (2.0 * sigma)
    inside = np.abs(delta) < half_band
    out = np.where(inside, -p * sigma * np.cos(sigma * delta), 0.0)
    return float(out) if out.ndim == 0 else out


def _grounded_rank_one(
    network: PowerNetwork, islands: IslandDecomposition, s: int
) -> np.ndarray:
    """ground(a_s a_s^T) for the incidence row of 0-based branch s."""
    br = network.branches[s]
    a_s = np.zeros(network.n_buses)
    a_s[br.from_bus - 1] = 1.0
    a_s[br.to_bus - 1] = -1.0
    return ground(np.outer(a_s, a_s), islands)


def grounded_inverse_derivative(
    network: PowerNetwork,
    y,
    branch_id: int,
    tol_zero: float = DEAD_BRANCH_TOL,
) -> np.ndarray:
    """Derivative of the grounded inverse of the nodal admittance matrix
    with respect to one branch susceptance, at frozen island topology:

        -M ground(a_s a_s^T) M      with M the grounded inverse.

    Evaluates for any branch, including dead ones whose endpoints now sit in
    different islands (flagged in the log as topology-inconsistent).
    """
    s = network.branch_index(branch_id)
    adm = nodal_admittance(network, y, tol_zero)
    m = grounded_inverse(adm.matrix, adm.decomposition)
    br = network.branches[s]
    if adm.decomposition.island_of(br.from_bus) != adm.decomposition.island_of(br.to_bus):
        log.warning(
            "branch %d bridges islands %s and %s; its admittance derivative is "
            "topology-inconsistent",
            branch_id,
            adm.decomposition.island_of(br.from_bus),
            adm.decomposition.island_of(br.to_bus),
        )
    k_s = _grounded_rank_one(network, adm.decomposition, s)
    return -m @ k_s @ m


def flow_jacobian(
    network: PowerNetwork,
    y,
    injections=None,
    tol_zero: float = DEAD_BRANCH_TOL,
    flow: FlowSolution | None = None,
) -> np.ndarray:
    """All branch-flow sensitivities d flow_l / d y_s as an (n, n) matrix.

    Shares one grounded-inverse factorization across columns.  Columns of
    dead branches are zero (the flow map does not see them), as are rows of
    dead branches (their flow is identically zero).
    """
    y = np.asarray(y, dtype=float)
    sol = flow if flow is not None else solve_flows(network, y, injections, tol_zero)
    a = network.incidence
    m = sol.grounded_inv
    theta = sol.theta
    live = live_mask(y, tol_zero)
    y_eff = np.where(live, y, 0.0)
    gaps = a @ theta

    jac = np.zeros((network.n, network.n))
    m_p = theta  # M @ P, which is theta by construction
    refs = {r - 1 for r in sol.islands.references}
    bus_island = sol.islands.bus_island
    for s in np.nonzero(live)[0]:
        br = network.branches[s]
        i, j = br.from_bus - 1, br.to_bus - 1
        # ground(a_s a_s^T) @ theta without forming the matrix
        w = np.zeros(network.n_buses)
        if bus_island[i] == bus_island[j]:
            v = np.zeros(network.n_buses)
            if i not in refs:
                v[i] = 1.0
            if j not in refs:
                v[j] = -1.0
            w = v * (v @ m_p)
        else:
            if i not in refs:
                w[i] = m_p[i]
            if j not in refs:
                w[j] = m_p[j]
        jac[:, s] = -y_eff * (a @ (m @ w))
        jac[s, s] += gaps[s]
    return jac


def branch_flow_derivative(
    network: PowerNetwork,
    y,
    injections,
    branch_id: int,
    wrt_branch_id: int,
    tol_zero: float = DEAD_BRANCH_TOL,
) -> float:
    """d flow_l / d y_s for one pair of branches.

    Sum of the direct term (nonzero only for s = l, where it equals the
    angle gap across the branch) and the grounded-inverse sensitivity term.
    """
    jac = flow_jacobian(network, y, injections, tol_zero)
    return float(jac[network.branch_index(branch_id), network.branch_index(wrt_branch_id)])


@dataclass(frozen=True, eq=False)
class StepJacobian:
    """Derivative of one cascade step with respect to the incoming admittances."""

    matrix: np.ndarray
    evaluated_at: np.ndarray


def step_jacobian(
    network: PowerNetwork,
    y,
    injections=None,
    *,
    sigma: float,
    tol_zero: float = DEAD_BRANCH_TOL,
    flow: FlowSolution | None = None,
) -> StepJacobian:
    """Jacobian of y -> g(flows(y)) * y (the zero-control cascade step).

    Entry (l, s) is g'(P_l) * dP_l/dy_s * y_l + g(P_l) * delta_ls.  Rows of
    branches saturated at g = 0 or g = 1 outside the transition band reduce
    to their diagonal entry.
    """
    y = np.asarray(y, dtype=float)
    sol = flow if flow is not None else solve_flows(network, y, injections, tol_zero)
    g = np.asarray(line_state(sol.flows, network.thresholds, sigma), dtype=float)
    slope = np.asarray(
        line_state_derivative(sol.flows, network.thresholds, sigma), dtype=float
    )
    matrix = np.diag(g)
    if np.any(slope != 0.0):
        fj = flow_jacobian(network, y, injections, tol_zero, flow=sol)
        matrix = matrix + (slope * y)[:, None] * fj
    y_view = y.copy()
    y_view.flags.writeable = False
    matrix.flags.writeable = False
    return StepJacobian(matrix=matrix, evaluated_at=y_view)


def finite_difference_errors(
    network: PowerNetwork,
    y,
    injections=None,
    *,
    sigma: float,
    h: float = 1e-6,
    tol_zero: float = DEAD_BRANCH_TOL,
) -> dict[str, float]:
    """Max relative error of each analytic derivative against central differences.

    Ships with the CLI gradient check; perturbs only live branches so the
    comparison stays on the smooth part of the flow map.
    """
    y = np.asarray(y, dtype=float)
    p = network.injections if injections is None else np.asarray(injections, dtype=float)
    live = np.nonzero(live_mask(y, tol_zero))[0]

    def rel(err: float, scale: float) -> float:
        return err / max(scale, 1e-12)

    errors = {"grounded_inverse": 0.0, "branch_flow": 0.0, "step_jacobian": 0.0, "line_state": 0.0}

    for s in live:
        up, dn = y.copy(), y.copy()
        up[s] += h
        dn[s] -= h
        adm_up = nodal_admittance(network, up, tol_zero)
        adm_dn = nodal_admittance(network, dn, tol_zero)
        fd = (
            grounded_inverse(adm_up.matrix, adm_up.decomposition)
            - grounded_inverse(adm_dn.matrix, adm_dn.decomposition)
        ) / (2 * h)
        analytic = grounded_inverse_derivative(network, y, s + 1, tol_zero)
        errors["grounded_inverse"] = max(
            errors["grounded_inverse"],
            rel(float(np.max(np.abs(analytic - fd))), float(np.max(np.abs(fd)))),
        )

        fd_flow = (
            solve_flows(network, up, p, tol_zero).flows
            - solve_flows(network, dn, p, tol_zero).flows
        ) / (2 * h)
        jac_col = flow_jacobian(network, y, p, tol_zero)[:, s]
        errors["branch_flow"] = max(
            errors["branch_flow"],
            rel(float(np.max(np.abs(jac_col - fd_flow))), float(np.max(np.abs(fd_flow)))),
        )

        step = lambda v: np.asarray(
            line_state(solve_flows(network, v, p, tol_zero).flows, network.thresholds, sigma)
        ) * v
        fd_step = (step(up) - step(dn)) / (2 * h)
        col = step_jacobian(network, y, p, sigma=sigma, tol_zero=tol_zero).matrix[:, s]
        errors["step_jacobian"] = max(
            errors["step_jacobian"],
            rel(float(np.max(np.abs(col - fd_step))), float(max(np.max(np.abs(fd_step)), 1.0))),
        )

    flows = solve_flows(network, y, p, tol_zero).flows
    for l, (pw, c) in enumerate(zip(flows, network.thresholds)):
        fd = (line_state(pw + h, c, sigma) - line_state(pw - h, c, sigma)) / (2 * h)
        analytic = line_state_derivative(pw, c, sigma)
        if abs(fd) > 1e-6 or abs(analytic) > 1e-6:
            errors["line_state"] = max(
                errors["line_state"], rel(abs(analytic - fd), abs(fd))
            )
    return errors

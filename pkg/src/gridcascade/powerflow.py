"""Islanded DC power flow: bus angles, branch flows, and slack bookkeeping.

Each island is solved independently with its reference bus pinned to angle
zero.  The reference bus also absorbs the island's injection imbalance (there
is no redispatch), so the implied reference injection generally differs from
the stated one; the difference is exposed for diagnostics.

The reported branch flow is y_l * (theta_i - theta_j), signed from the
branch's from-bus toward its to-bus.  The corresponding off-diagonal nodal
admittance entry is -y_l, so building the same quantity from the matrix
flips the sign; only the magnitude feeds the breaker model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridlinalg import (
    DEAD_BRANCH_TOL,
    IslandDecomposition,
    NodalAdmittance,
    effective_admittance,
    grounded_inverse,
    nodal_admittance,
)
from .network import PowerNetwork


@dataclass(frozen=True, eq=False)
class FlowSolution:
    """One power-flow solve: angles, flows and per-island slack diagnostics.

    slack_absorption[i] is the extra injection the i-th island's reference bus
    had to supply on top of its stated injection; it equals minus the island's
    injection imbalance.  flagged_islands lists islands whose reference is a
    load bus forced to generate, or that carry load with no generation at all.
    """

    theta: np.ndarray
    flows: np.ndarray
    admittance: NodalAdmittance
    grounded_inv: np.ndarray
    injections: np.ndarray
    slack_absorption: np.ndarray
    flagged_islands: tuple[tuple[int, ...], ...]

    @property
    def islands(self) -> IslandDecomposition:
        return self.admittance.decomposition


def solve_flows(
    network: PowerNetwork,
    y,
    injections=None,
    tol_zero: float = DEAD_BRANCH_TOL,
) -> FlowSolution:
    """Solve the islanded DC power flow for one admittance state."""
    p = network.injections if injections is None else np.asarray(injections, dtype=float)
    if p.shape != (network.n_buses,):
        raise ValueError(f"injection vector has shape {p.shape}, expected ({network.n_buses},)")

    adm = nodal_admittance(network, y, tol_zero)
    inv = grounded_inverse(adm.matrix, adm.decomposition)
    theta = inv @ p  # exact zeros at reference buses: their rows of inv are zero

    y_eff = effective_admittance(y, tol_zero)
    flows = y_eff * (network.incidence @ theta)

    implied = network.incidence.T @ flows  # net outflow per bus
    refs = np.array(adm.decomposition.references, dtype=int) - 1
    slack = implied[refs] - p[refs]

    flagged = []
    for members, ref in zip(adm.decomposition.islands, adm.decomposition.references):
        idx = np.asarray(members, dtype=int) - 1
        has_generation = bool(np.any(p[idx] > 0.0))
        has_load = bool(np.any(p[idx] < 0.0))
        ref_kind = network.buses[ref - 1].kind
        ref_generates = implied[ref - 1] > 1e-12
        if (has_load and not has_generation) or (ref_kind == "L" and ref_generates):
            flagged.append(members)

    slack.flags.writeable = False
    theta.flags.writeable = False
    flows.flags.writeable = False
    return FlowSolution(
        theta=theta,
        flows=flows,
        admittance=adm,
        grounded_inv=inv,
        injections=p,
        slack_absorption=slack,
        flagged_islands=tuple(flagged),
    )


def solve_angles(
    network: PowerNetwork,
    y,
    injections=None,
    tol_zero: float = DEAD_BRANCH_TOL,
) -> np.ndarray:
    """Bus voltage angles; exactly zero at every island reference bus."""
    return solve_flows(network, y, injections, tol_zero).theta


def branch_flows(
    network: PowerNetwork,
    y,
    injections=None,
    tol_zero: float = DEAD_BRANCH_TOL,
) -> np.ndarray:
    """Per-branch flows y_l (theta_i - theta_j); exactly zero on dead branches."""
    return solve_flows(network, y, injections, tol_zero).flows


def matrix_branch_flow(solution: FlowSolution, network: PowerNetwork, branch_id: int) -> float:
    """Flow on one branch assembled from nodal-admittance entries.

    Evaluates B[i,j] * (e_i - e_j)^T B^grounded-inverse P, the matrix form of
    the branch flow.  Because B[i,j] = -y_l this is the negative of the
    reported flow; it exists as an independent cross-check of the solve.
    """
    br = network.branches[network.branch_index(branch_id)]
    i, j = br.from_bus - 1, br.to_bus - 1
    b_ij = solution.admittance.matrix[i, j]
    return float(b_ij * (solution.theta[i] - solution.theta[j]))

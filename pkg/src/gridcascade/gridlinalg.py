"""Island decomposition and the grounded-matrix operators behind islanded DC power flow.

A branch conducts only while its susceptance magnitude stays above
DEAD_BRANCH_TOL; everything below that is treated as an open breaker.  The
live branches split the bus set into islands (connected components), and each
island solves its own power flow with the lowest-ID member as reference bus.

Two island-aware matrix operators do the heavy lifting:

* ``ground(M, islands)`` zeroes the reference row and column inside every
  island block (cross-island entries are dropped as well).
* ``grounded_inverse(M, islands)`` inverts each island block with the
  reference row/column deleted and re-embeds the inverse, leaving exact zeros
  at every reference bus.

For a connected island the grounded block of the nodal admittance matrix is
the classic grounded Laplacian, which is nonsingular, so the reduced solve is
well posed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .network import PowerNetwork

# Susceptance magnitude (p.u.) below which a branch no longer conducts.  The
# cascade dynamics stay continuous; this threshold only decides which branches
# participate in islanding and power flow.
DEAD_BRANCH_TOL = 1e-2

# 1-norm condition estimate above which a reduced island block is rejected.
COND_LIMIT = 1e13


class SingularIslandError(ArithmeticError):
    """A reduced island block was singular or numerically unusable."""

    def __init__(self, island: tuple[int, ...], cond: float):
        self.island = island
        self.cond = cond
        super().__init__(
            f"reduced block of island {island} is singular or ill-conditioned "
            f"(1-norm condition estimate {cond:.3e}); the island decomposition "
            "is inconsistent with the admittances"
        )


@dataclass(frozen=True, eq=False)
class IslandDecomposition:
    """Partition of the buses into connected components of the live grid.

    ``islands`` holds 1-based bus IDs, each island ascending, islands ordered
    by their smallest member.  ``references`` names each island's slack bus:
    the lowest-ID reference-type bus if the island has one, else the lowest-ID
    generator bus, else the lowest-ID member.  The reference bus is pinned to
    angle zero and absorbs the island's injection imbalance.
    """

    islands: tuple[tuple[int, ...], ...]
    references: tuple[int, ...]
    bus_island: np.ndarray  # island index for each 0-based bus position

    @property
    def q(self) -> int:
        return len(self.islands)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(members) for members in self.islands)

    def island_of(self, bus_id: int) -> int:
        return int(self.bus_island[bus_id - 1])


@dataclass(frozen=True, eq=False)
class NodalAdmittance:
    """Bus admittance matrix A^T diag(y_live) A plus the islands it was built from."""

    matrix: np.ndarray
    decomposition: IslandDecomposition

    def ground(self) -> np.ndarray:
        return ground(self.matrix, self.decomposition)

    def grounded_inverse(self) -> np.ndarray:
        return grounded_inverse(self.matrix, self.decomposition)


def live_mask(y, tol_zero: float = DEAD_BRANCH_TOL) -> np.ndarray:
    return np.abs(np.asarray(y, dtype=float)) > tol_zero


def effective_admittance(y, tol_zero: float = DEAD_BRANCH_TOL) -> np.ndarray:
    """Per-branch susceptance with dead branches zeroed out."""
    y = np.asarray(y, dtype=float)
    return np.where(live_mask(y, tol_zero), y, 0.0)


def _reference_bus(network: PowerNetwork, members: tuple[int, ...]) -> int:
    """Slack choice for one island.

    The designated reference bus keeps the job while it is in the island.
    Otherwise the generator with the least scheduled output takes over (it has
    the most headroom to absorb the island's imbalance); islands without any
    generation fall back to the lowest-numbered bus.
    """
    rank = {"R": 0, "G": 1, "L": 2}

    def key(bus: int):
        b = network.buses[bus - 1]
        return (rank[b.kind], b.injection if b.kind == "G" else 0.0, bus)

    return min(members, key=key)


def find_islands(
    network: PowerNetwork, y, tol_zero: float = DEAD_BRANCH_TOL
) -> IslandDecomposition:
    """Connected components of the graph whose edges are the live branches."""
    y = np.asarray(y, dtype=float)
    if y.shape != (network.n,):
        raise ValueError(f"admittance vector has shape {y.shape}, expected ({network.n},)")
    n_b = network.n_buses
    live = live_mask(y, tol_zero)
    rows = np.array([br.from_bus - 1 for br in network.branches])[live]
    cols = np.array([br.to_bus - 1 for br in network.branches])[live]
    adjacency = coo_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(n_b, n_b)
    )
    _, labels = connected_components(adjacency, directed=False)

    groups: dict[int, list[int]] = {}
    for pos, label in enumerate(labels):
        groups.setdefault(int(label), []).append(pos + 1)
    islands = tuple(
        tuple(sorted(members)) for members in sorted(groups.values(), key=min)
    )
    references = tuple(_reference_bus(network, members) for members in islands)
    bus_island = np.empty(n_b, dtype=int)
    for idx, members in enumerate(islands):
        for bus in members:
            bus_island[bus - 1] = idx
    bus_island.flags.writeable = False
    return IslandDecomposition(islands=islands, references=references, bus_island=bus_island)


def nodal_admittance(
    network: PowerNetwork, y, tol_zero: float = DEAD_BRANCH_TOL
) -> NodalAdmittance:
    """Assemble A^T diag(y) A over the live branches and its island structure.

    Dead branches contribute exactly zero, so entries coupling different
    islands are exact zeros and every row sums to zero.
    """
    y_eff = effective_admittance(y, tol_zero)
    if y_eff.shape != (network.n,):
        raise ValueError(f"admittance vector has shape {y_eff.shape}, expected ({network.n},)")
    if not np.all(np.isfinite(y_eff)):
        raise ValueError("admittance vector contains non-finite entries")
    a = network.incidence
    matrix = (a * y_eff[:, None]).T @ a
    matrix.flags.writeable = False
    return NodalAdmittance(
        matrix=matrix, decomposition=find_islands(network, y, tol_zero)
    )


def ground(matrix: np.ndarray, islands: IslandDecomposition) -> np.ndarray:
    """Zero each island's reference row/column, dropping cross-island entries."""
    out = np.zeros_like(matrix)
    for members, ref in zip(islands.islands, islands.references):
        idx = np.asarray(members, dtype=int) - 1
        block = matrix[np.ix_(idx, idx)].copy()
        ref_pos = members.index(ref)
        block[ref_pos, :] = 0.0
        block[:, ref_pos] = 0.0
        out[np.ix_(idx, idx)] = block
    return out


def grounded_inverse(matrix: np.ndarray, islands: IslandDecomposition) -> np.ndarray:
    """Invert each island block with the reference row/column deleted, re-embed.

    Reference rows and columns of the result are exact zeros; singleton
    islands contribute nothing.  Raises SingularIslandError when a reduced
    block cannot be inverted reliably.
    """
    out = np.zeros_like(matrix)
    for members, ref in zip(islands.islands, islands.references):
        idx = np.asarray([bus - 1 for bus in members if bus != ref], dtype=int)
        if idx.size == 0:
            continue
        block = matrix[np.ix_(idx, idx)]
        try:
            inv = np.linalg.inv(block)
        except np.linalg.LinAlgError:
            raise SingularIslandError(members, np.inf) from None
        if not np.all(np.isfinite(inv)):
            raise SingularIslandError(members, np.inf)
        cond = np.linalg.norm(block, 1) * np.linalg.norm(inv, 1)
        if cond > COND_LIMIT:
            raise SingularIslandError(members, float(cond))
        out[np.ix_(idx, idx)] = inv
    return out

"""Grid data model: buses, branches, JSON case files and the incidence matrix.

A case file describes a lossless transmission network in per-unit quantities
on a common MVA base:

    {
      "base_mva": 100,
      "buses":    [{"id": 1, "type": "R|G|L", "injection": 0.71}, ...],
      "branches": [{"id": 1, "from": 1, "to": 4,
                    "reactance": 0.058, "threshold": 1.0}, ...]
    }

Bus IDs must be the contiguous set 1..n_b (listed in order), branch IDs the
contiguous set 1..n.  Branch susceptance is derived as 1/reactance; the
"threshold" field is the per-branch power limit that drives breaker action.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

BUS_KINDS = ("R", "G", "L")  # reference, generator, load


class CaseError(ValueError):
    """A case file failed validation; the message names the offending record."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str         # one of BUS_KINDS
    injection: float  # per-unit; positive = generation, negative = load


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    reactance: float  # per-unit, > 0
    threshold: float  # per-unit power limit, > 0

    @property
    def susceptance(self) -> float:
        return 1.0 / self.reactance


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PowerNetwork:
    """Immutable bus/branch model with cached array views.

    Arrays are 0-indexed by list position; positions coincide with the 1-based
    IDs minus one.  Instances are safe to share across threads.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    base_mva: float = 100.0

    def __post_init__(self) -> None:
        _validate(self.buses, self.branches, self.base_mva)

    @property
    def n(self) -> int:
        """Branch count."""
        return len(self.branches)

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @cached_property
    def incidence(self) -> np.ndarray:
        return _frozen(build_incidence(self))

    @cached_property
    def injections(self) -> np.ndarray:
        return _frozen(np.array([b.injection for b in self.buses], dtype=float))

    @cached_property
    def susceptances(self) -> np.ndarray:
        """Nominal per-branch susceptances 1/x."""
        return _frozen(np.array([br.susceptance for br in self.branches], dtype=float))

    @cached_property
    def thresholds(self) -> np.ndarray:
        return _frozen(np.array([br.threshold for br in self.branches], dtype=float))

    def branch_index(self, branch_id: int) -> int:
        """0-based position of a 1-based branch ID."""
        if not 1 <= branch_id <= self.n:
            raise CaseError(f"branch {branch_id} does not exist (valid: 1..{self.n})")
        return branch_id - 1


def _validate(buses: tuple[Bus, ...], branches: tuple[Branch, ...], base_mva: float) -> None:
    if base_mva <= 0:
        raise CaseError(f"base_mva must be positive, got {base_mva}")
    if not buses:
        raise CaseError("case defines no buses")
    for pos, bus in enumerate(buses, start=1):
        if bus.id != pos:
            raise CaseError(f"bus ids must be 1..{len(buses)} in order; position {pos} has id {bus.id}")
        if bus.kind not in BUS_KINDS:
            raise CaseError(f"bus {bus.id}: unknown type {bus.kind!r} (expected one of {BUS_KINDS})")
    if not any(b.kind == "R" for b in buses):
        raise CaseError("case must designate at least one reference (type R) bus")

    ids = {b.id for b in buses}
    seen_pairs: dict[frozenset[int], int] = {}
    for pos, br in enumerate(branches, start=1):
        if br.id != pos:
            raise CaseError(f"branch ids must be 1..{len(branches)} in order; position {pos} has id {br.id}")
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch {br.id}: from and to bus are both {br.from_bus}")
        for end in (br.from_bus, br.to_bus):
            if end not in ids:
                raise CaseError(f"branch {br.id}: references missing bus {end}")
        if br.reactance <= 0:
            raise CaseError(f"branch {br.id}: reactance must be positive, got {br.reactance}")
        if br.threshold <= 0:
            raise CaseError(f"branch {br.id}: threshold must be positive, got {br.threshold}")
        pair = frozenset((br.from_bus, br.to_bus))
        if pair in seen_pairs:
            raise CaseError(
                f"branch {br.id}: duplicates bus pair of branch {seen_pairs[pair]} "
                "(parallel branches are not supported)"
            )
        seen_pairs[pair] = br.id


def build_incidence(network: PowerNetwork) -> np.ndarray:
    """Signed branch-bus incidence: row per branch, +1 at from_bus, -1 at to_bus."""
    a = np.zeros((network.n, network.n_buses))
    for row, br in enumerate(network.branches):
        a[row, br.from_bus - 1] = 1.0
        a[row, br.to_bus - 1] = -1.0
    return a


def load_case(path: str | Path) -> PowerNetwork:
    """Load and validate a JSON case file.

    Raises CaseError on malformed JSON, schema violations, duplicate or
    dangling IDs, and non-positive reactances or thresholds.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise CaseError(f"case file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CaseError(f"{path}: not valid JSON ({exc})") from None
    return network_from_dict(raw, origin=str(path))


def network_from_dict(raw: dict, origin: str = "<dict>") -> PowerNetwork:
    if not isinstance(raw, dict):
        raise CaseError(f"{origin}: top level must be an object")
    for key in ("buses", "branches"):
        if key not in raw or not isinstance(raw[key], list):
            raise CaseError(f"{origin}: missing or non-list field {key!r}")

    def need(record: dict, field: str, kind: str, index: int):
        if field not in record:
            raise CaseError(f"{origin}: {kind} record {index} lacks field {field!r}")
        return record[field]

    buses = tuple(
        Bus(
            id=int(need(b, "id", "bus", i)),
            kind=str(need(b, "type", "bus", i)),
            injection=float(need(b, "injection", "bus", i)),
        )
        for i, b in enumerate(raw["buses"], start=1)
    )
    branches = tuple(
        Branch(
            id=int(need(br, "id", "branch", i)),
            from_bus=int(need(br, "from", "branch", i)),
            to_bus=int(need(br, "to", "branch", i)),
            reactance=float(need(br, "reactance", "branch", i)),
            threshold=float(need(br, "threshold", "branch", i)),
        )
        for i, br in enumerate(raw["branches"], start=1)
    )
    return PowerNetwork(buses=buses, branches=branches, base_mva=float(raw.get("base_mva", 100)))


def network_to_dict(network: PowerNetwork) -> dict:
    return {
        "base_mva": network.base_mva,
        "buses": [
            {"id": b.id, "type": b.kind, "injection": b.injection} for b in network.buses
        ],
        "branches": [
            {
                "id": br.id,
                "from": br.from_bus,
                "to": br.to_bus,
                "reactance": br.reactance,
                "threshold": br.threshold,
            }
            for br in network.branches
        ],
    }


def save_case(network: PowerNetwork, path: str | Path) -> None:
    """Write a network back out in the JSON case schema (round-trips load_case)."""
    Path(path).write_text(json.dumps(network_to_dict(network), indent=2) + "\n")


def bundled_case_path(name: str) -> Path:
    """Path of one of the packaged case files: ieee9, ieee14, twobus, threebus."""
    candidate = resources.files("gridcascade").joinpath("cases").joinpath(f"{name}.json")
    if not candidate.is_file():
        raise CaseError(f"no bundled case named {name!r}")
    return Path(str(candidate))


def load_bundled_case(name: str) -> PowerNetwork:
    return load_case(bundled_case_path(name))

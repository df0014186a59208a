"""Linear-optic Bell-state measurement on dual-rail photons.

Two 50/50 beam splitters mix rail 0 of both inputs into detectors (u0, v0)
and rail 1 into (u1, v1). Only psi+/psi- can be told apart: a coincidence on
(u0, u1) or (v0, v1) heralds psi+, on (u0, v1) or (v0, u1) psi-. The psi-
heralds are brought to psi+ by a Z flip (a pi phase on one rail) recorded in
the Pauli frame.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

from .devices import PovmSet
from .fock_core import BranchEnsemble, apply_beam_splitter, apply_phase, measure_remove, mix


class ClickPattern(NamedTuple):
    u0: int
    v0: int
    u1: int
    v1: int


class BellIndex(enum.Enum):
    PSI_PLUS = "psi+"
    PSI_MINUS = "psi-"


@dataclass(frozen=True)
class PauliFrame:
    z_flip: bool = False


@dataclass(frozen=True)
class Classification:
    accepted: bool
    bell_index: BellIndex | None = None
    frame: PauliFrame | None = None


@dataclass(frozen=True)
class BsmOutcome:
    pattern: ClickPattern
    accepted: bool
    bell_index: BellIndex | None
    probability: float
    conditional: BranchEnsemble


_PSI_PLUS_PAIRS = {("u0", "u1"), ("v0", "v1")}

# detector kinds permitted at each site; node BSMs must resolve photon number
SITE_KINDS = {"center": ("pnr", "spd"), "node": ("pnr",)}


def classify_pattern(pattern: Sequence[int], kind: str = "pnr", site: str = "center") -> Classification:
    pattern = ClickPattern(*pattern)
    if kind not in SITE_KINDS.get(site, ()):
        raise ValueError(f"detector kind {kind!r} not allowed at {site!r} BSM")
    fired = [name for name, k in pattern._asdict().items() if k > 0]
    if len(fired) != 2:
        return Classification(False)
    rail0 = [d for d in fired if d in ("u0", "v0")]
    rail1 = [d for d in fired if d in ("u1", "v1")]
    if len(rail0) != 1 or len(rail1) != 1:
        return Classification(False)
    # a PNR detector reporting two photons is a multi-photon event
    if any(getattr(pattern, d) != 1 for d in fired):
        return Classification(False)
    index = BellIndex.PSI_PLUS if (rail0[0], rail1[0]) in _PSI_PLUS_PAIRS else BellIndex.PSI_MINUS
    return Classification(True, index, PauliFrame(z_flip=index is BellIndex.PSI_MINUS))


def accepted_patterns() -> list[ClickPattern]:
    return [ClickPattern(1, 0, 1, 0), ClickPattern(1, 0, 0, 1), ClickPattern(0, 1, 1, 0), ClickPattern(0, 1, 0, 1)]


def _check_rails(left_rails, right_rails, num_modes):
    rails = list(left_rails) + list(right_rails)
    if len(rails) != 4 or len(set(rails)) != 4:
        raise ValueError(f"BSM needs four distinct rails, got {rails}")
    for r in rails:
        if not 0 <= r < num_modes:
            raise IndexError(f"rail {r} out of range")
    return rails


def bsm_apply(s: BranchEnsemble, left_rails: Sequence[int], right_rails: Sequence[int]) -> BranchEnsemble:
    """Optical part of the BSM. Outputs (u0, v0, u1, v1) replace (l0, r0, l1, r1)."""
    _check_rails(left_rails, right_rails, s.num_modes)
    l0, l1 = left_rails
    r0, r1 = right_rails
    s = apply_beam_splitter(s, l0, r0, 0.5, 0.0)
    return apply_beam_splitter(s, l1, r1, 0.5, 0.0)


def _detector_order(left_rails, right_rails) -> list[int]:
    l0, l1 = left_rails
    r0, r1 = right_rails
    return [l0, r0, l1, r1]  # u0, v0, u1, v1


def pattern_element(pattern: Sequence[int], povm: PovmSet) -> list:
    return [povm.coefficients(k) for k in pattern]


def all_pattern_probabilities(
    s: BranchEnsemble, left_rails: Sequence[int], right_rails: Sequence[int], povm: PovmSet
) -> dict:
    """Probability of every click pattern (after the optical circuit)."""
    out = bsm_apply(s, left_rails, right_rails)
    detectors = _detector_order(left_rails, right_rails)
    probs = {}
    for labels in itertools.product(povm.labels, repeat=4):
        p, _ = measure_remove(out, detectors, pattern_element(labels, povm))
        if p > 0:
            probs[ClickPattern(*labels)] = p
    return probs


def bsm_outcomes(
    s: BranchEnsemble,
    left_rails: Sequence[int],
    right_rails: Sequence[int],
    povm: PovmSet,
    kind: str = "pnr",
    site: str = "center",
    compressed: bool = True,
) -> list[BsmOutcome]:
    """Accepted outcomes with their unnormalized conditional states (no frame applied)."""
    out = bsm_apply(s, left_rails, right_rails)
    detectors = _detector_order(left_rails, right_rails)
    outcomes = []
    for pattern in accepted_patterns():
        cls = classify_pattern(pattern, kind, site)
        p, cond = measure_remove(out, detectors, pattern_element(pattern, povm), compressed=compressed)
        outcomes.append(BsmOutcome(pattern, cls.accepted, cls.bell_index, p, cond))
    return outcomes


def bsm_measure(
    s: BranchEnsemble,
    left_rails: Sequence[int],
    right_rails: Sequence[int],
    povm: PovmSet,
    kind: str = "pnr",
    site: str = "center",
    frame_mode: int = -1,
) -> tuple[float, BranchEnsemble]:
    """Run the BSM and keep the heralded, frame-corrected remainder.

    ``frame_mode`` indexes the remaining modes; the Z flip for psi- heralds is
    applied there. Returns the total acceptance probability and the mixture of
    accepted conditional states (its trace equals that probability).
    """
    remaining = s.num_modes - 4
    if remaining <= 0:
        raise ValueError("no modes left after the BSM")
    frame_mode %= remaining
    parts = []
    total = 0.0
    for outcome in bsm_outcomes(s, left_rails, right_rails, povm, kind, site):
        if not outcome.accepted or outcome.probability <= 0:
            continue
        cond = outcome.conditional
        if outcome.bell_index is BellIndex.PSI_MINUS:
            cond = apply_phase(cond, frame_mode, math.pi)
        parts.append(cond)
        total += outcome.probability
    if not parts:
        return 0.0, BranchEnsemble.empty(remaining, s.policy, s.dropped_weight)
    merged = mix(parts)
    # every part inherits the parent's diagnostics; count them once
    dropped = max(p.dropped_weight for p in parts)
    return total, BranchEnsemble(merged.num_modes, merged.basis, merged.rows, merged.policy, dropped)

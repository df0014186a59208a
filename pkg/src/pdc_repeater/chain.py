"""Elementary links and repeater chains.

One multiplexed mode is propagated; the M parallel modes enter only through
the heralding probability of each link. Stage states are renormalized
between stages and each stage's success probability is recorded.

Mode layout of a link (and of any chained) state: ``(L0, L1, R0, R1)``, the
two rails of the left memory followed by the two rails of the right memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .bsm import bsm_measure
from .devices import DetectorSpec, SourceSpec, detector_povm, fiber_transmissivity, memory_apply, source_state
from .fock_core import (
    BranchEnsemble,
    FidelityUndefinedError,
    PureState,
    TruncationPolicy,
    apply_beam_splitter,
    apply_loss,
    compress,
    fidelity_with_pure,
    measure_remove,
    tensor,
)

SWAP_ORDERS = ("sequential", "tree")


class QberUndefinedError(ValueError):
    """No coincidence survives endpoint post-selection."""


class NumericalInvariantError(RuntimeError):
    """A probability or trace left its allowed range beyond tolerance."""


@dataclass(frozen=True)
class ChainConfig:
    total_distance_km: float
    num_links: int
    alpha_db_per_km: float
    source: SourceSpec = field(default_factory=SourceSpec)
    center_detectors: DetectorSpec = field(default_factory=DetectorSpec)
    node_detectors: DetectorSpec = field(default_factory=DetectorSpec)
    endpoint_detectors: DetectorSpec = field(default_factory=DetectorSpec)
    memory_efficiency: float = 1.0
    end_memory: bool = True
    freq_modes: int = 1
    spatial_modes: int = 1
    rep_rate_hz: float = 3.0e7
    swap_order: str = "sequential"
    truncation: TruncationPolicy = field(default_factory=TruncationPolicy)

    def __post_init__(self):
        if self.num_links < 1:
            raise ValueError("num_links must be >= 1")
        if self.total_distance_km < 0:
            raise ValueError("total_distance_km must be >= 0")
        if self.alpha_db_per_km < 0:
            raise ValueError("alpha_db_per_km must be >= 0")
        if self.freq_modes < 1 or self.spatial_modes < 1:
            raise ValueError("mode counts must be >= 1")
        if not 0.0 <= self.memory_efficiency <= 1.0:
            raise ValueError("memory_efficiency must lie in [0, 1]")
        if self.rep_rate_hz <= 0:
            raise ValueError("rep_rate_hz must be > 0")
        if self.swap_order not in SWAP_ORDERS:
            raise ValueError(f"unknown swap_order {self.swap_order!r}")
        if self.swap_order == "tree" and self.num_links & (self.num_links - 1):
            raise ValueError("tree swap order requires num_links to be a power of two")
        if self.node_detectors.kind != "pnr":
            raise ValueError("repeater-node detectors must be photon-number resolving")

    @property
    def modes(self) -> int:
        return self.freq_modes * self.spatial_modes

    @property
    def link_length_km(self) -> float:
        return self.total_distance_km / self.num_links


@dataclass(frozen=True)
class LinkResult:
    p_s0: float
    p_link: float
    state: BranchEnsemble  # unnormalized, trace = p_s0


@dataclass(frozen=True)
class EndToEndResult:
    p_link: tuple
    p_swap: tuple
    p_ab: float
    q_z: float | None
    q_x: float | None
    final_state: BranchEnsemble
    dropped_weight: float = 0.0
    p_s0: float = 0.0

    @property
    def p_link_product(self) -> float:
        return math.prod(self.p_link)

    @property
    def p_swap_product(self) -> float:
        return math.prod(self.p_swap)


def canonical_bell_state() -> PureState:
    """Target two-qubit state on (A0, A1, B0, B1) after frame correction."""
    r = 1 / math.sqrt(2)
    return PureState(4, {(1, 0, 0, 1): complex(r), (0, 1, 1, 0): complex(r)})


def multiplex_prob(p_s0: float, modes: int) -> float:
    """Probability that at least one of ``modes`` independent attempts succeeds."""
    if not 0.0 <= p_s0 <= 1.0:
        raise ValueError("p_s0 must lie in [0, 1]")
    if modes < 1:
        raise ValueError("modes must be >= 1")
    if modes == 1:
        return p_s0
    if p_s0 == 1.0:
        return 1.0
    return -math.expm1(modes * math.log1p(-p_s0))


def _check_probability(name: str, p: float, tol: float = 1e-9) -> float:
    if not (-tol <= p <= 1 + tol) or math.isnan(p):
        raise NumericalInvariantError(f"{name} = {p!r} outside [0, 1]")
    return min(1.0, max(0.0, p))


def elementary_link(cfg: ChainConfig) -> LinkResult:
    policy = cfg.truncation
    eta_half = fiber_transmissivity(cfg.link_length_km / 2, cfg.alpha_db_per_km)
    state, _kept = source_state(cfg.source)
    src = BranchEnsemble.from_pure(state, policy)
    # (a0, a1, b0, b1): the b rails travel to the link center
    src = compress(apply_loss(apply_loss(src, 2, eta_half), 3, eta_half))
    joint = tensor(src, src)  # (aL0, aL1, bL0, bL1, aR0, aR1, bR0, bR1)
    povm = detector_povm(cfg.center_detectors, policy.per_mode_cutoff)
    p_s0, cond = bsm_measure(joint, (2, 3), (6, 7), povm, kind=cfg.center_detectors.kind, site="center")
    p_s0 = _check_probability("p_s0", p_s0)
    if p_s0 > 0:
        cond = compress(cond)
    return LinkResult(p_s0, multiplex_prob(p_s0, cfg.modes), cond)


def swap_links(
    left: BranchEnsemble,
    right: BranchEnsemble,
    node_detectors: DetectorSpec,
    eta_mem: float,
) -> tuple[float, BranchEnsemble]:
    """Entanglement swapping at a repeater node.

    ``left`` and ``right`` are normalized 4-rail states; the inner memories
    (left's R rails, right's L rails) are read out with efficiency ``eta_mem``
    and measured. Returns the success probability and the unnormalized
    conditional state on the outer rails.
    """
    if node_detectors.kind != "pnr":
        raise ValueError("repeater-node detectors must be photon-number resolving")
    policy = left.policy
    left = compress(memory_apply(left, (2, 3), eta_mem))
    right = compress(memory_apply(right, (0, 1), eta_mem))
    joint = tensor(left, right)  # (A0, A1, X0, X1, Y0, Y1, B0, B1)
    povm = detector_povm(node_detectors, policy.per_mode_cutoff)
    p, cond = bsm_measure(joint, (2, 3), (4, 5), povm, kind="pnr", site="node")
    p = _check_probability("p_swap", p)
    if p > 0:
        cond = compress(cond)
    return p, cond


def _sequential(link: BranchEnsemble, n: int, cfg: ChainConfig):
    state = link
    p_swaps = []
    for _ in range(n - 1):
        p, cond = swap_links(state, link, cfg.node_detectors, cfg.memory_efficiency)
        p_swaps.append(p)
        if p == 0:
            return p_swaps, cond
        state = cond.normalized()
    return p_swaps, state


def _tree(link: BranchEnsemble, n: int, cfg: ChainConfig):
    # all sub-chains at one level are identical, so one swap per level suffices
    state = link
    p_swaps = []
    count = n
    while count > 1:
        p, cond = swap_links(state, state, cfg.node_detectors, cfg.memory_efficiency)
        p_swaps.extend([p] * (count // 2))
        if p == 0:
            return p_swaps, cond
        state = cond.normalized()
        count //= 2
    return p_swaps, state


def _qber_element(alice_rail: int, bob_rail: int, povm):
    one = povm.coefficients(1)
    zero = povm.coefficients(0)
    a = [one, zero] if alice_rail == 0 else [zero, one]
    b = [one, zero] if bob_rail == 0 else [zero, one]
    return a + b


# rail correlation of the canonical state: Z anti-correlated, X correlated
EXPECTED_SAME_RAIL = {"Z": False, "X": True}


def endpoint_distribution(final_state: BranchEnsemble, povm, basis: str) -> dict:
    """Probability of each accepted (alice_rail, bob_rail) single-click pair."""
    if basis not in ("Z", "X"):
        raise ValueError(f"unknown basis {basis!r}")
    s = final_state
    if basis == "X":
        s = apply_beam_splitter(apply_beam_splitter(s, 0, 1, 0.5, 0.0), 2, 3, 0.5, 0.0)
    out = {}
    for a in (0, 1):
        for b in (0, 1):
            p, _ = measure_remove(s, [0, 1, 2, 3], _qber_element(a, b, povm))
            out[(a, b)] = p
    return out


def measure_qber(final_state: BranchEnsemble, endpoint_detectors: DetectorSpec, basis: str) -> tuple[float, float]:
    """Endpoint post-selection probability and bit error rate in one basis."""
    if endpoint_detectors.kind != "pnr":
        raise ValueError("endpoint detectors must be photon-number resolving")
    povm = detector_povm(endpoint_detectors, final_state.policy.per_mode_cutoff)
    dist = endpoint_distribution(final_state, povm, basis)
    p_ab = sum(dist.values())
    if p_ab <= 0:
        raise QberUndefinedError("no accepted endpoint coincidences")
    same = EXPECTED_SAME_RAIL[basis]
    err = sum(p for (a, b), p in dist.items() if (a == b) != same)
    return p_ab, err / p_ab


def end_to_end(cfg: ChainConfig) -> EndToEndResult:
    link = elementary_link(cfg)
    n = cfg.num_links
    if link.p_s0 == 0:
        return EndToEndResult((link.p_link,) * n, (0.0,) * (n - 1), 0.0, None, None, link.state, p_s0=0.0)
    link_state = link.state.normalized()
    if cfg.swap_order == "tree":
        p_swaps, state = _tree(link_state, n, cfg)
    else:
        p_swaps, state = _sequential(link_state, n, cfg)
    p_swaps = p_swaps + [0.0] * (n - 1 - len(p_swaps))
    if state.trace == 0 or any(p == 0 for p in p_swaps):
        return EndToEndResult((link.p_link,) * n, tuple(p_swaps), 0.0, None, None, state, state.dropped_weight, link.p_s0)
    if cfg.end_memory:
        state = memory_apply(state, (0, 1, 2, 3), cfg.memory_efficiency)
    state = compress(state)
    if abs(state.trace - 1) > 1e-9:
        raise NumericalInvariantError(f"final state trace {state.trace!r} != 1")
    try:
        p_ab, q_z = measure_qber(state, cfg.endpoint_detectors, "Z")
        _, q_x = measure_qber(state, cfg.endpoint_detectors, "X")
    except QberUndefinedError:
        p_ab, q_z, q_x = 0.0, None, None
    p_ab = _check_probability("p_ab", p_ab)
    if q_z is not None:
        q_z = _check_probability("q_z", q_z)
        q_x = _check_probability("q_x", q_x)
    return EndToEndResult((link.p_link,) * n, tuple(p_swaps), p_ab, q_z, q_x, state, state.dropped_weight, link.p_s0)


def single_pair_fidelity(state: BranchEnsemble) -> float:
    """Fidelity with the canonical Bell state after projecting onto one photon per side."""
    keep = []
    for w, st in state.branches:
        amps = {occ: v for occ, v in st.amplitudes.items() if occ[0] + occ[1] == 1 and occ[2] + occ[3] == 1}
        norm_sq = sum(abs(v) ** 2 for v in amps.values())
        if norm_sq > 0:
            norm = math.sqrt(norm_sq)
            keep.append((w * norm_sq, PureState(4, {k: v / norm for k, v in amps.items()})))
    if not keep:
        raise FidelityUndefinedError("no single-pair component")
    return fidelity_with_pure(BranchEnsemble.from_branches(4, keep, state.policy), canonical_bell_state())

"""Sources, detectors, fiber and memory models.

Source states live on four modes ordered ``(a0, a1, b0, b1)``: ``a`` is the
half kept in the local memory, ``b`` the half sent down the fiber, and the
index is the dual-rail (polarization or time-bin) label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fock_core import BranchEnsemble, PureState, apply_loss

SOURCE_MODELS = ("spdc_truncated", "pdc_exact", "perfect_pair")
DETECTOR_KINDS = ("pnr", "spd")
POVM_MODELS = ("exact", "paper")


@dataclass(frozen=True)
class SourceSpec:
    model: str = "spdc_truncated"
    n_s: float = 0.035
    pair_terms_max: int = 2

    def __post_init__(self):
        if self.model not in SOURCE_MODELS:
            raise ValueError(f"unknown source model {self.model!r}")
        if self.n_s < 0:
            raise ValueError("n_s must be >= 0")
        if self.pair_terms_max < 1:
            raise ValueError("pair_terms_max must be >= 1")


@dataclass(frozen=True)
class DetectorSpec:
    eta: float = 1.0
    dark_rate_hz: float = 0.0
    rep_rate_hz: float = 3.0e7
    kind: str = "pnr"
    povm_model: str = "exact"

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("detector efficiency must lie in [0, 1]")
        if self.dark_rate_hz < 0:
            raise ValueError("dark_rate_hz must be >= 0")
        if self.rep_rate_hz <= 0:
            raise ValueError("rep_rate_hz must be > 0")
        if self.kind not in DETECTOR_KINDS:
            raise ValueError(f"unknown detector kind {self.kind!r}")
        if self.povm_model not in POVM_MODELS:
            raise ValueError(f"unknown povm model {self.povm_model!r}")
        if not self.p_dark < 1.0:
            raise ValueError("dark-click probability per window must be < 1")

    @property
    def p_dark(self) -> float:
        """Dark-click probability per detection window."""
        return self.dark_rate_hz / self.rep_rate_hz


@dataclass(frozen=True)
class PovmSet:
    """Fock-diagonal POVM: ``elements[k] = (clicks, coefficients on Pi_0..Pi_nmax)``."""

    elements: tuple

    @property
    def n_max(self) -> int:
        return len(self.elements[0][1]) - 1

    @property
    def labels(self) -> tuple:
        return tuple(label for label, _ in self.elements)

    def coefficients(self, label: int) -> np.ndarray:
        for lab, coeffs in self.elements:
            if lab == label:
                return coeffs
        return np.zeros(self.n_max + 1)

    def matrix(self) -> np.ndarray:
        """Rows are outcomes, columns photon numbers."""
        return np.array([c for _, c in self.elements])

    def completeness(self) -> np.ndarray:
        """Diagonal of ``sum_k F_k``; all ones for a complete POVM."""
        return self.matrix().sum(axis=0)


# ----------------------------------------------------------------------------
# sources


def spdc_probabilities(n_s: float) -> tuple[float, float, float]:
    """Zero-, one- and two-pair probabilities of the truncated source."""
    if n_s < 0:
        raise ValueError("n_s must be >= 0")
    p0 = 1.0 / (n_s + 1.0)
    p1 = n_s / (n_s + 1.0) ** 2
    return p0, p1, 1.0 - p1 - p0


def spdc_state(n_s: float) -> PureState:
    p0, p1, p2 = spdc_probabilities(n_s)
    a1 = math.sqrt(p1 / 2)
    a2 = math.sqrt(max(p2, 0.0) / 3)
    terms = [
        ((0, 0, 0, 0), math.sqrt(p0)),
        ((1, 0, 0, 1), a1),
        ((0, 1, 1, 0), a1),
        ((2, 0, 0, 2), a2),
        ((1, 1, 1, 1), -a2),
        ((0, 2, 2, 0), a2),
    ]
    amps = {occ: complex(v) for occ, v in terms if v != 0}
    # p2 is defined by complement, so this only removes roundoff
    norm = math.sqrt(sum(abs(v) ** 2 for v in amps.values()))
    return PureState(4, {k: v / norm for k, v in amps.items()})


def perfect_pair_state() -> PureState:
    r = 1 / math.sqrt(2)
    return PureState(4, {(1, 0, 0, 1): complex(r), (0, 1, 1, 0): complex(r)})


def pdc_pair_probability(n_s: float, n: int) -> float:
    """Squared amplitude of the n-pair term of the untruncated PDC state."""
    cosh2 = n_s + 1.0
    tanh2 = n_s / (n_s + 1.0)
    return (n + 1) * tanh2**n / cosh2**2


def pdc_exact_state(n_s: float, pair_terms_max: int) -> tuple[PureState, float]:
    """PDC state summed up to ``pair_terms_max`` pairs, renormalized.

    Returns the state and the probability weight of the kept terms (the
    renormalization factor is its inverse).
    """
    if n_s < 0:
        raise ValueError("n_s must be >= 0")
    if pair_terms_max < 1:
        raise ValueError("pair_terms_max must be >= 1")
    gt = math.acosh(math.sqrt(n_s + 1.0))
    amps = {}
    for n in range(pair_terms_max + 1):
        amp_n = math.sqrt(n + 1) * math.tanh(gt) ** n / math.cosh(gt) ** 2
        for m in range(n + 1):
            occ = (n - m, m, m, n - m)
            v = amp_n * (-1) ** m / math.sqrt(n + 1)
            if v != 0:
                amps[occ] = complex(v)
    kept = sum(abs(v) ** 2 for v in amps.values())
    norm = math.sqrt(kept)
    return PureState(4, {k: v / norm for k, v in amps.items()}), kept


def source_state(spec: SourceSpec) -> tuple[PureState, float]:
    """State emitted per mode, with the probability kept by any truncation."""
    if spec.model == "spdc_truncated":
        return spdc_state(spec.n_s), 1.0
    if spec.model == "perfect_pair":
        return perfect_pair_state(), 1.0
    return pdc_exact_state(spec.n_s, spec.pair_terms_max)


# ----------------------------------------------------------------------------
# detectors


def _dark_distribution(p_d: float) -> np.ndarray:
    # Poisson(p_d) kept up to one dark count per window
    return np.array([1.0, p_d]) / (1.0 + p_d)


def _exact_click_matrix(eta: float, p_d: float, n_max: int) -> np.ndarray:
    """P(k clicks | n photons) for k = 0..n_max+1, n = 0..n_max."""
    dark = _dark_distribution(p_d)
    out = np.zeros((n_max + 2, n_max + 1))
    for n in range(n_max + 1):
        detected = np.array([math.comb(n, d) * eta**d * (1 - eta) ** (n - d) for d in range(n + 1)])
        for d, pd_ in enumerate(detected):
            for extra, pk in enumerate(dark):
                out[d + extra, n] += pd_ * pk
    return out


def detector_povm(spec: DetectorSpec, n_max: int) -> PovmSet:
    if n_max < 2:
        raise ValueError("n_max must be >= 2")
    eta, p_d = spec.eta, spec.p_dark
    size = n_max + 1

    if spec.povm_model == "paper":
        f0 = np.zeros(size)
        f0[:3] = [(1 - p_d), (1 - eta) * (1 - p_d), (1 - eta) ** 2 * (1 - p_d)]
        if spec.kind == "spd":
            return PovmSet(((0, f0), (1, 1.0 - f0)))
        f1 = np.zeros(size)
        f1[:3] = [p_d, eta + (1 - eta) * p_d, eta * (1 - eta) + (1 - eta) ** 2 * p_d]
        f2 = np.zeros(size)
        f2[2] = eta**2
        return PovmSet(((0, f0), (1, f1), (2, f2)))

    probs = _exact_click_matrix(eta, p_d, n_max)
    if spec.kind == "spd":
        return PovmSet(((0, probs[0]), (1, probs[1:].sum(axis=0))))
    return PovmSet(tuple((k, probs[k]) for k in range(probs.shape[0])))


# ----------------------------------------------------------------------------
# fiber and memory


def fiber_transmissivity(length_km: float, alpha_db_per_km: float) -> float:
    if length_km < 0 or alpha_db_per_km < 0:
        raise ValueError("length and attenuation must be >= 0")
    return 10.0 ** (-alpha_db_per_km * length_km / 10.0)


def memory_apply(s: BranchEnsemble, rails: Sequence[int], eta_mem: float) -> BranchEnsemble:
    """Readout loss of a memory holding ``rails``."""
    for rail in rails:
        s = apply_loss(s, rail, eta_mem)
    return s

"""Sparse linear-optics engine on a truncated multimode Fock space.

States are ensembles of pure branches, ``rho = sum_k w_k |psi_k><psi_k|``.
Loss Kraus operators and Fock-diagonal POVM elements both map pure branches
to pure branches, so no density matrix over the full truncated space is ever
formed. Internally an ensemble is a matrix whose rows are the weighted branch
vectors ``sqrt(w_k) psi_k`` over the occupations that actually carry
amplitude (its *basis*); every linear operation then acts on rows.

Beam-splitter convention (creation operators)::

    a_i^dag -> sqrt(T) a_i^dag + e^{i phi} sqrt(1-T) a_j^dag
    a_j^dag -> -e^{-i phi} sqrt(1-T) a_i^dag + sqrt(T) a_j^dag
"""

from __future__ import annotations

import cmath
import math
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

Occupation = tuple  # tuple[int, ...], photons per mode

NORM_TOL = 1e-12
MERGE_DECIMALS = 12


class TruncationError(ValueError):
    """Raised when an operation leaves the truncated Fock space."""

    def __init__(self, message: str, dropped_weight: float):
        super().__init__(f"{message} (dropped weight ~ {dropped_weight:.3e})")
        self.dropped_weight = dropped_weight


class FidelityUndefinedError(ValueError):
    pass


@dataclass(frozen=True)
class TruncationPolicy:
    per_mode_cutoff: int = 4
    global_photon_bound: int = 8
    amplitude_floor: float = 1e-15
    # when set, overflowing amplitudes are discarded and their weight recorded
    drop_overflow: bool = False

    def __post_init__(self):
        if self.per_mode_cutoff < 2:
            raise ValueError("per_mode_cutoff must be >= 2")
        if self.global_photon_bound < 1:
            raise ValueError("global_photon_bound must be >= 1")
        if self.amplitude_floor < 0:
            raise ValueError("amplitude_floor must be >= 0")

    def admits(self, occ: Occupation) -> bool:
        return sum(occ) <= self.global_photon_bound and max(occ, default=0) <= self.per_mode_cutoff


DEFAULT_POLICY = TruncationPolicy()


@dataclass(frozen=True)
class PureState:
    """A (possibly unnormalized) pure state ``sum_n c_n |n>``.

    ``amplitudes`` must not be mutated after construction.
    """

    num_modes: int
    amplitudes: Mapping[Occupation, complex]

    def __post_init__(self):
        for occ in self.amplitudes:
            if len(occ) != self.num_modes:
                raise ValueError(f"occupation {occ} does not have {self.num_modes} modes")
            if min(occ, default=0) < 0:
                raise ValueError(f"negative occupation {occ}")
        if self.norm_sq() > 1 + NORM_TOL:
            raise ValueError(f"state is super-normalized (norm^2 = {self.norm_sq()!r})")

    @classmethod
    def vacuum(cls, num_modes: int) -> "PureState":
        return cls(num_modes, {(0,) * num_modes: 1.0 + 0j})

    @classmethod
    def basis(cls, occ: Sequence[int]) -> "PureState":
        occ = tuple(int(n) for n in occ)
        return cls(len(occ), {occ: 1.0 + 0j})

    @classmethod
    def from_terms(cls, terms: Iterable[tuple[Sequence[int], complex]], normalize: bool = True) -> "PureState":
        amps: dict = defaultdict(complex)
        num_modes = None
        for occ, amp in terms:
            occ = tuple(int(n) for n in occ)
            num_modes = len(occ) if num_modes is None else num_modes
            amps[occ] += amp
        if num_modes is None:
            raise ValueError("no terms given")
        amps = {k: v for k, v in amps.items() if v != 0}
        if normalize:
            norm = math.sqrt(sum(abs(v) ** 2 for v in amps.values()))
            amps = {k: v / norm for k, v in amps.items()}
        return cls(num_modes, amps)

    def norm_sq(self) -> float:
        return float(sum(abs(v) ** 2 for v in self.amplitudes.values()))

    def normalized(self) -> "PureState":
        norm = math.sqrt(self.norm_sq())
        if norm == 0:
            raise ValueError("cannot normalize the zero vector")
        return PureState(self.num_modes, {k: v / norm for k, v in self.amplitudes.items()})

    def inner(self, other: "PureState") -> complex:
        """<self|other>"""
        if other.num_modes != self.num_modes:
            raise ValueError("mode count mismatch")
        return complex(sum(v.conjugate() * other.amplitudes.get(k, 0) for k, v in self.amplitudes.items()))

    def amplitude(self, occ: Sequence[int]) -> complex:
        return self.amplitudes.get(tuple(occ), 0j)


class BranchEnsemble:
    """Weighted mixture of normalized pure branches on ``num_modes`` modes.

    ``rows[k]`` is ``sqrt(w_k) psi_k`` expressed over ``basis``. The public view
    is :attr:`branches`, a tuple of ``(weight, PureState)``. ``dropped_weight``
    accumulates probability removed by truncation, pruning and compression.
    Instances are immutable.
    """

    def __init__(
        self,
        num_modes: int,
        basis: Sequence[Occupation],
        rows: np.ndarray,
        policy: TruncationPolicy = DEFAULT_POLICY,
        dropped_weight: float = 0.0,
    ):
        basis = tuple(tuple(int(n) for n in occ) for occ in basis)
        rows = np.array(rows, dtype=complex)
        rows = np.zeros((0, len(basis)), dtype=complex) if rows.size == 0 else rows.reshape(-1, len(basis))
        for occ in basis:
            if len(occ) != num_modes:
                raise ValueError(f"occupation {occ} does not have {num_modes} modes")
        if len(set(basis)) != len(basis):
            raise ValueError("duplicate basis occupations")
        total = float(np.sum(np.abs(rows) ** 2))
        if total > 1 + NORM_TOL:
            raise ValueError(f"ensemble trace {total!r} exceeds 1")
        rows.flags.writeable = False
        self.num_modes = num_modes
        self.basis = basis
        self.rows = rows
        self.policy = policy
        self.dropped_weight = float(dropped_weight)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_branches(
        cls, num_modes: int, branches: Iterable[tuple[float, PureState]], policy: TruncationPolicy = DEFAULT_POLICY
    ) -> "BranchEnsemble":
        branches = list(branches)
        for w, st in branches:
            if w < 0:
                raise ValueError(f"negative branch weight {w}")
            if st.num_modes != num_modes:
                raise ValueError("branch mode count mismatch")
            if abs(st.norm_sq() - 1) > NORM_TOL:
                raise ValueError(f"branch not normalized (norm^2 = {st.norm_sq()!r})")
        basis = sorted({occ for _, st in branches for occ in st.amplitudes})
        for occ in basis:
            if not policy.admits(occ):
                raise TruncationError(f"occupation {occ} outside truncation policy", float("nan"))
        index = {occ: i for i, occ in enumerate(basis)}
        rows = np.zeros((len(branches), len(basis)), dtype=complex)
        for b, (w, st) in enumerate(branches):
            for occ, v in st.amplitudes.items():
                rows[b, index[occ]] = math.sqrt(w) * v
        return _finish(num_modes, basis, rows, policy, 0.0)

    @classmethod
    def from_pure(cls, state: PureState, policy: TruncationPolicy = DEFAULT_POLICY) -> "BranchEnsemble":
        """Single branch whose weight is the state's squared norm."""
        for occ, v in state.amplitudes.items():
            if not policy.admits(occ):
                raise TruncationError(f"occupation {occ} outside truncation policy", abs(v) ** 2)
        basis = sorted(state.amplitudes)
        rows = np.array([[state.amplitudes[o] for o in basis]], dtype=complex)
        return _finish(state.num_modes, basis, rows, policy, 0.0)

    @classmethod
    def vacuum(cls, num_modes: int, policy: TruncationPolicy = DEFAULT_POLICY) -> "BranchEnsemble":
        return cls.from_pure(PureState.vacuum(num_modes), policy)

    @classmethod
    def empty(cls, num_modes: int, policy: TruncationPolicy = DEFAULT_POLICY, dropped_weight: float = 0.0):
        return cls(num_modes, (), np.zeros((0, 0)), policy, dropped_weight)

    # -- views --------------------------------------------------------------

    @cached_property
    def weights(self) -> np.ndarray:
        return np.sum(np.abs(self.rows) ** 2, axis=1)

    @cached_property
    def branches(self) -> tuple:
        out = []
        for row, w in zip(self.rows, self.weights):
            norm = math.sqrt(w)
            amps = {self.basis[i]: complex(row[i] / norm) for i in np.flatnonzero(row)}
            out.append((float(w), PureState(self.num_modes, amps)))
        return tuple(out)

    @property
    def trace(self) -> float:
        return float(np.sum(self.weights))

    def density_matrix(self) -> np.ndarray:
        """rho over :attr:`basis`; only for the small supports met in compression and tests."""
        return self.rows.T @ self.rows.conj()

    def scaled(self, factor: float) -> "BranchEnsemble":
        if factor < 0:
            raise ValueError("negative scale factor")
        return BranchEnsemble(self.num_modes, self.basis, self.rows * math.sqrt(factor), self.policy, self.dropped_weight)

    def normalized(self) -> "BranchEnsemble":
        tr = self.trace
        if tr <= 0:
            raise ValueError("cannot normalize a zero-trace ensemble")
        return self.scaled(1.0 / tr)

    def with_policy(self, policy: TruncationPolicy) -> "BranchEnsemble":
        return BranchEnsemble(self.num_modes, self.basis, self.rows, policy, self.dropped_weight)

    def __len__(self) -> int:
        return self.rows.shape[0]

    def __repr__(self) -> str:
        return (
            f"BranchEnsemble(num_modes={self.num_modes}, branches={len(self)}, support={len(self.basis)}, "
            f"trace={self.trace:.6g})"
        )


# ----------------------------------------------------------------------------
# internal helpers


def _finish(
    num_modes: int,
    basis: Sequence[Occupation],
    rows: np.ndarray,
    policy: TruncationPolicy,
    dropped: float,
    merge: bool = True,
) -> BranchEnsemble:
    """Prune tiny amplitudes, drop empty rows/columns and merge equal branches."""
    rows = np.asarray(rows, dtype=complex)
    if rows.size == 0:
        return BranchEnsemble.empty(num_modes, policy, dropped)
    weights = np.sum(np.abs(rows) ** 2, axis=1)
    keep_rows = weights > 0
    rows, weights = rows[keep_rows], weights[keep_rows]
    if rows.shape[0] == 0:
        return BranchEnsemble.empty(num_modes, policy, dropped)
    if policy.amplitude_floor > 0:
        small = np.abs(rows) < policy.amplitude_floor * np.sqrt(weights)[:, None]
        small &= rows != 0
        if small.any():
            dropped += float(np.sum(np.abs(rows[small]) ** 2))
            rows = np.where(small, 0, rows)
            weights = np.sum(np.abs(rows) ** 2, axis=1)
            keep_rows = weights > 0
            rows, weights = rows[keep_rows], weights[keep_rows]
            if rows.shape[0] == 0:
                return BranchEnsemble.empty(num_modes, policy, dropped)
    cols = np.flatnonzero(np.any(rows != 0, axis=0))
    if len(cols) < len(basis):
        basis = [basis[i] for i in cols]
        rows = rows[:, cols]
    if merge and rows.shape[0] > 1:
        rows, weights = _merge_rows(rows, weights)
    # canonical column order keeps results independent of operation history
    order = sorted(range(len(basis)), key=lambda i: basis[i])
    if order != list(range(len(basis))):
        basis = [basis[i] for i in order]
        rows = rows[:, order]
    return BranchEnsemble(num_modes, basis, rows, policy, dropped)


def _merge_rows(rows: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # identical normalized states (to ~1e-12 per amplitude) collapse into one
    # branch; a near-miss across a rounding boundary just stays separate
    unit = rows / np.sqrt(weights)[:, None]
    key = np.round(unit, MERGE_DECIMALS) + (0.0 + 0.0j)
    seen: dict = {}
    groups = []
    for b in range(rows.shape[0]):
        g = seen.setdefault(key[b].tobytes(), len(seen))
        groups.append(g)
    if len(seen) == rows.shape[0]:
        return rows, weights
    groups = np.asarray(groups)
    merged_w = np.bincount(groups, weights=weights)
    first = np.zeros(len(seen), dtype=int)
    first[groups[::-1]] = np.arange(rows.shape[0])[::-1]
    return unit[first] * np.sqrt(merged_w)[:, None], merged_w


def _check_mode(s: BranchEnsemble, mode: int) -> None:
    if not 0 <= mode < s.num_modes:
        raise IndexError(f"mode {mode} out of range for {s.num_modes}-mode state")


def _apply_column_map(s: BranchEnsemble, entries: Iterable[tuple[int, Occupation, complex]]):
    """rows @ M^T for a sparse map given as (source column, target occupation, coefficient)."""
    target_index: dict = {}
    r, c, v = [], [], []
    for col, occ, coef in entries:
        r.append(target_index.setdefault(occ, len(target_index)))
        c.append(col)
        v.append(coef)
    mat = sp.csr_matrix((v, (r, c)), shape=(len(target_index), len(s.basis)), dtype=complex)
    new_rows = np.asarray((mat @ s.rows.T).T)
    return list(target_index), new_rows


# ----------------------------------------------------------------------------
# operations


def trace_of(s: BranchEnsemble) -> float:
    return s.trace


def tensor(a: BranchEnsemble, b: BranchEnsemble) -> BranchEnsemble:
    """Joint state of two systems on disjoint modes (a's modes first)."""
    policy = a.policy
    dropped = a.dropped_weight + b.dropped_weight
    num_modes = a.num_modes + b.num_modes
    if len(a) == 0 or len(b) == 0:
        return BranchEnsemble.empty(num_modes, policy, dropped)
    na = np.array([sum(o) for o in a.basis])
    nb = np.array([sum(o) for o in b.basis])
    allowed = (na[:, None] + nb[None, :]) <= policy.global_photon_bound
    prod = np.einsum("ia,jb->ijab", a.rows, b.rows).reshape(len(a) * len(b), len(a.basis), len(b.basis))
    lost = float(np.sum(np.abs(prod[:, ~allowed]) ** 2)) if not allowed.all() else 0.0
    if lost > 0 and not policy.drop_overflow:
        raise TruncationError("tensor product exceeds global_photon_bound", lost)
    ia, ib = np.nonzero(allowed)
    basis = [a.basis[i] + b.basis[j] for i, j in zip(ia, ib)]
    rows = prod[:, ia, ib]
    return _finish(num_modes, basis, rows, policy, dropped + lost, merge=False)


@lru_cache(maxsize=4096)
def _bs_table(transmissivity: float, phase: float, m: int, n: int) -> tuple:
    """Output amplitudes of |m, n> through the beam splitter, as ((p, q), c) pairs."""
    t = math.sqrt(transmissivity)
    r = math.sqrt(max(0.0, 1.0 - transmissivity))
    s = cmath.exp(1j * phase) * r
    u = -cmath.exp(-1j * phase) * r
    coeffs: dict = defaultdict(complex)
    for k in range(m + 1):
        ck = math.comb(m, k) * t**k * s ** (m - k)
        if ck == 0:
            continue
        for l in range(n + 1):
            cl = math.comb(n, l) * u**l * t ** (n - l)
            if cl == 0:
                continue
            coeffs[(k + l, m + n - k - l)] += ck * cl
    pref = 1.0 / math.sqrt(math.factorial(m) * math.factorial(n))
    out = []
    for (p, q), c in sorted(coeffs.items()):
        amp = c * pref * math.sqrt(math.factorial(p) * math.factorial(q))
        if amp != 0:
            out.append(((p, q), amp))
    return tuple(out)


def apply_beam_splitter(
    s: BranchEnsemble, mode_i: int, mode_j: int, transmissivity: float, phase: float = 0.0
) -> BranchEnsemble:
    if mode_i == mode_j:
        raise ValueError("beam splitter needs two distinct modes")
    _check_mode(s, mode_i)
    _check_mode(s, mode_j)
    if not 0.0 <= transmissivity <= 1.0:
        raise ValueError(f"transmissivity {transmissivity} outside [0, 1]")
    if len(s) == 0:
        return s

    def entries():
        for col, occ in enumerate(s.basis):
            for (p, q), c in _bs_table(transmissivity, phase, occ[mode_i], occ[mode_j]):
                new = list(occ)
                new[mode_i] = p
                new[mode_j] = q
                yield col, tuple(new), c

    basis, rows = _apply_column_map(s, entries())
    cutoff = s.policy.per_mode_cutoff
    over = np.array([o[mode_i] > cutoff or o[mode_j] > cutoff for o in basis], dtype=bool)
    dropped = s.dropped_weight
    if over.any():
        lost = float(np.sum(np.abs(rows[:, over]) ** 2))
        if lost > NORM_TOL and not s.policy.drop_overflow:
            raise TruncationError("beam splitter output exceeds per_mode_cutoff", lost)
        dropped += lost
        basis = [o for o, bad in zip(basis, over) if not bad]
        rows = rows[:, ~over]
    # a unitary cannot make distinct branches equal
    return _finish(s.num_modes, basis, rows, s.policy, dropped, merge=False)


def apply_loss(s: BranchEnsemble, mode: int, eta: float) -> BranchEnsemble:
    """Pure-loss channel of transmissivity ``eta`` on one mode.

    Kraus operator ``A_k`` removes ``k`` photons; each input branch yields one
    output branch per ``k``.
    """
    _check_mode(s, mode)
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"eta {eta} outside [0, 1]")
    if eta == 1.0 or len(s) == 0:
        return s
    n_max = max(occ[mode] for occ in s.basis)
    target_index: dict = {}
    per_k = []
    for k in range(n_max + 1):
        entries = []
        for col, occ in enumerate(s.basis):
            n = occ[mode]
            if n < k:
                continue
            c = math.sqrt(math.comb(n, k) * eta ** (n - k) * (1.0 - eta) ** k)
            if c == 0:
                continue
            new = occ[:mode] + (n - k,) + occ[mode + 1 :]
            entries.append((col, target_index.setdefault(new, len(target_index)), c))
        per_k.append(entries)
    dim = len(target_index)
    blocks = []
    for entries in per_k:
        if not entries:
            continue
        cols, tgt, vals = zip(*entries)
        mat = sp.csr_matrix((vals, (tgt, cols)), shape=(dim, len(s.basis)))
        blocks.append(np.asarray((mat @ s.rows.T).T))
    return _finish(s.num_modes, list(target_index), np.vstack(blocks), s.policy, s.dropped_weight)


def apply_phase(s: BranchEnsemble, mode: int, phase: float) -> BranchEnsemble:
    """Phase shift ``exp(i phase n)`` on one mode."""
    _check_mode(s, mode)
    factors = np.array([cmath.exp(1j * phase * occ[mode]) for occ in s.basis], dtype=complex)
    return BranchEnsemble(s.num_modes, s.basis, s.rows * factors[None, :], s.policy, s.dropped_weight)


def permute_modes(s: BranchEnsemble, order: Sequence[int]) -> BranchEnsemble:
    """New mode k is old mode ``order[k]``."""
    if sorted(order) != list(range(s.num_modes)):
        raise ValueError(f"{order} is not a permutation of {s.num_modes} modes")
    basis = [tuple(occ[o] for o in order) for occ in s.basis]
    return _finish(s.num_modes, basis, s.rows, s.policy, s.dropped_weight, merge=False)


ElementSpec = Union[Sequence, Callable[[Occupation], float]]


def _element_function(element: ElementSpec, n_modes: int) -> Callable[[Occupation], float]:
    if callable(element):
        return element
    if len(element) != n_modes:
        raise ValueError(f"element has {len(element)} factors for {n_modes} measured modes")
    diags = []
    for factor in element:
        arr = np.asarray(factor)
        if arr.ndim == 2:
            if arr.shape[0] != arr.shape[1]:
                raise ValueError("POVM factor must be square")
            if np.any(np.abs(arr - np.diag(np.diag(arr))) > 0):
                raise ValueError("non-diagonal POVM elements are not supported")
            arr = np.diag(arr)
        diags.append(np.real(arr).astype(float))

    def coeff(sub: Occupation) -> float:
        c = 1.0
        for d, n in zip(diags, sub):
            if n >= len(d):
                raise ValueError(f"POVM factor has no coefficient for {n} photons")
            c *= d[n]
        return c

    return coeff


def measure_remove(
    s: BranchEnsemble, modes: Sequence[int], element: ElementSpec, compressed: bool = False
) -> tuple[float, BranchEnsemble]:
    """Apply a Fock-diagonal POVM element to ``modes`` and trace them out.

    ``element`` is either one diagonal per measured mode (a product element;
    1-D coefficient vectors or diagonal matrices) or a callable mapping the
    measured occupation to its coefficient. Returns the outcome probability and
    the unnormalized conditional state on the remaining modes. With
    ``compressed`` the conditional state comes back in eigenbranch form.
    """
    modes = list(modes)
    if len(set(modes)) != len(modes):
        raise ValueError("measured modes must be distinct")
    for m in modes:
        _check_mode(s, m)
    coeff = _element_function(element, len(modes))
    remaining = s.num_modes - len(modes)
    measured = set(modes)
    keep = [k for k in range(s.num_modes) if k not in measured]
    if len(s) == 0:
        return 0.0, BranchEnsemble.empty(remaining, s.policy, s.dropped_weight)

    rest_index: dict = {}
    groups: dict = defaultdict(lambda: ([], []))
    for col, occ in enumerate(s.basis):
        sub = tuple(occ[m] for m in modes)
        rest = tuple(occ[k] for k in keep)
        cols, tgts = groups[sub]
        cols.append(col)
        tgts.append(rest_index.setdefault(rest, len(rest_index)))
    dim = len(rest_index)
    rest_basis = list(rest_index)

    gram = np.zeros((dim, dim), dtype=complex) if compressed else None
    blocks = []
    for sub in sorted(groups):
        c = coeff(sub)
        if c < 0 or c > 1 + NORM_TOL:
            raise ValueError(f"POVM coefficient {c} outside [0, 1]")
        if c == 0:
            continue
        cols, tgts = groups[sub]
        block = np.zeros((len(s), dim), dtype=complex)
        block[:, tgts] = s.rows[:, cols] * math.sqrt(c)
        if compressed:
            gram += block.T @ block.conj()
        else:
            blocks.append(block)
    if compressed:
        out = _from_density(remaining, rest_basis, gram, s.policy, s.dropped_weight)
    elif blocks:
        out = _finish(remaining, rest_basis, np.vstack(blocks), s.policy, s.dropped_weight)
    else:
        out = BranchEnsemble.empty(remaining, s.policy, s.dropped_weight)
    return out.trace, out


def fidelity_with_pure(s: BranchEnsemble, ref: PureState) -> float:
    if ref.num_modes != s.num_modes:
        raise ValueError("mode count mismatch")
    tr = s.trace
    if tr <= 0:
        raise FidelityUndefinedError("fidelity of a zero-trace ensemble is undefined")
    ref = ref.normalized()
    vec = np.array([ref.amplitudes.get(occ, 0) for occ in s.basis], dtype=complex)
    f = float(np.sum(np.abs(s.rows @ vec.conj()) ** 2)) / tr
    return min(1.0, max(0.0, f))


def _from_density(
    num_modes: int,
    basis: Sequence[Occupation],
    rho: np.ndarray,
    policy: TruncationPolicy,
    dropped: float,
    rel_tol: float = 1e-14,
) -> BranchEnsemble:
    rho = (rho + rho.conj().T) / 2
    tr = float(np.real(np.trace(rho)))
    if tr <= 0:
        return BranchEnsemble.empty(num_modes, policy, dropped)
    evals, evecs = np.linalg.eigh(rho)
    keep = evals > rel_tol * tr
    dropped += float(np.sum(np.clip(evals[~keep], 0, None)))
    vecs = evecs[:, keep].T  # rows are eigenvectors
    # fix each eigenvector's global phase so output is deterministic
    pivots = np.argmax(np.abs(vecs) > 1e-8 * np.abs(vecs).max(axis=1, keepdims=True), axis=1)
    phases = vecs[np.arange(len(vecs)), pivots]
    vecs = vecs * (np.abs(phases) / phases)[:, None]
    rows = vecs * np.sqrt(evals[keep])[:, None]
    return _finish(num_modes, list(basis), rows[::-1], policy, dropped, merge=False)


def compress(s: BranchEnsemble, rel_tol: float = 1e-14) -> BranchEnsemble:
    """Rewrite the ensemble as the eigendecomposition of its density matrix.

    The represented state is unchanged apart from eigenvalues below
    ``rel_tol * trace``, which are dropped and recorded. Afterwards the number
    of branches equals the rank.
    """
    if len(s) <= 1:
        return s
    return _from_density(s.num_modes, s.basis, s.density_matrix(), s.policy, s.dropped_weight, rel_tol)


def mix(ensembles: Sequence[BranchEnsemble]) -> BranchEnsemble:
    """Incoherent sum of ensembles on the same modes."""
    if not ensembles:
        raise ValueError("nothing to mix")
    first = ensembles[0]
    index: dict = {}
    for e in ensembles:
        if e.num_modes != first.num_modes:
            raise ValueError("mode count mismatch")
        for occ in e.basis:
            index.setdefault(occ, len(index))
    blocks = []
    for e in ensembles:
        block = np.zeros((len(e), len(index)), dtype=complex)
        block[:, [index[o] for o in e.basis]] = e.rows
        blocks.append(block)
    rows = np.vstack(blocks) if blocks else np.zeros((0, len(index)))
    return _finish(first.num_modes, list(index), rows, first.policy, sum(e.dropped_weight for e in ensembles))


def mean_photons(s: BranchEnsemble, mode: int) -> float:
    _check_mode(s, mode)
    n = np.array([occ[mode] for occ in s.basis], dtype=float)
    return float(np.sum(np.abs(s.rows) ** 2 * n[None, :]))

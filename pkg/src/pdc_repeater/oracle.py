"""Dense density-matrix reference for cross-checking the sparse engine.

Nothing here reuses the engine's arithmetic: beam splitters are built by
exponentiating the two-mode generator, loss Kraus operators are read off a
beam-splitter dilation with a vacuum environment mode, and measurement is an
explicit partial trace. Only the occupation-tuple convention is shared.
Meant for small instances (a few thousand basis states at most).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

MAX_DIM = 10_000


class BasisTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class DenseState:
    basis: tuple
    matrix: np.ndarray

    @property
    def num_modes(self) -> int:
        return len(self.basis[0]) if self.basis else 0

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def index(self) -> dict:
        return {occ: i for i, occ in enumerate(self.basis)}

    def check(self, tol: float = 1e-10) -> None:
        m = self.matrix
        if np.max(np.abs(m - m.conj().T), initial=0.0) > 1e-12:
            raise ValueError("density matrix is not Hermitian")
        if self.trace > 1 + 1e-12:
            raise ValueError("trace exceeds 1")
        if len(m) and np.linalg.eigvalsh(m).min() < -tol:
            raise ValueError("density matrix is not positive semidefinite")


# ----------------------------------------------------------------------------
# bases


def enumerate_basis(num_modes: int, cutoff: int, photon_bound: int) -> tuple:
    out = [
        occ
        for occ in itertools.product(range(cutoff + 1), repeat=num_modes)
        if sum(occ) <= photon_bound
    ]
    if len(out) > MAX_DIM:
        raise BasisTooLargeError(f"basis of {len(out)} states exceeds {MAX_DIM}")
    return tuple(sorted(out))


def grouped_basis(num_modes: int, cutoff: int, groups: Sequence[tuple[Sequence[int], int]]) -> tuple:
    """Occupations whose photon count within each mode group stays within its bound."""
    out = []
    for occ in itertools.product(range(cutoff + 1), repeat=num_modes):
        if all(sum(occ[m] for m in modes) <= bound for modes, bound in groups):
            out.append(occ)
    if len(out) > MAX_DIM:
        raise BasisTooLargeError(f"basis of {len(out)} states exceeds {MAX_DIM}")
    return tuple(sorted(out))


def dense_from_ensemble(s, basis: Sequence | None = None) -> DenseState:
    """rho = sum_k w_k |psi_k><psi_k| from an ensemble's public branch view."""
    if basis is None:
        basis = enumerate_basis(s.num_modes, s.policy.per_mode_cutoff, s.policy.global_photon_bound)
    basis = tuple(basis)
    if len(basis) > MAX_DIM:
        raise BasisTooLargeError(f"basis of {len(basis)} states exceeds {MAX_DIM}")
    index = {occ: i for i, occ in enumerate(basis)}
    rho = np.zeros((len(basis), len(basis)), dtype=complex)
    for w, st in s.branches:
        vec = np.zeros(len(basis), dtype=complex)
        for occ, amp in st.amplitudes.items():
            vec[index[occ]] = amp
        rho += w * np.outer(vec, vec.conj())
    return DenseState(basis, rho)


def dense_from_pure(amplitudes: dict, basis: Sequence) -> DenseState:
    basis = tuple(basis)
    index = {occ: i for i, occ in enumerate(basis)}
    vec = np.zeros(len(basis), dtype=complex)
    for occ, amp in amplitudes.items():
        vec[index[occ]] = amp
    return DenseState(basis, np.outer(vec, vec.conj()))


def embed(st: DenseState, basis: Sequence) -> DenseState:
    """Re-express a state in a larger basis that contains its support."""
    basis = tuple(basis)
    index = {occ: i for i, occ in enumerate(basis)}
    pos = [index[occ] for occ in st.basis]
    rho = np.zeros((len(basis), len(basis)), dtype=complex)
    rho[np.ix_(pos, pos)] = st.matrix
    return DenseState(basis, rho)


# ----------------------------------------------------------------------------
# operators


@lru_cache(maxsize=256)
def _two_mode_unitary(transmissivity: float, phase: float, n_total: int) -> tuple[np.ndarray, dict]:
    """exp(theta (e^{i phi} a_j^dag a_i - e^{-i phi} a_i^dag a_j)) on two modes with <= n_total photons."""
    states = [(p, q) for p in range(n_total + 1) for q in range(n_total + 1 - p)]
    idx = {s: k for k, s in enumerate(states)}
    dim = len(states)
    hop = np.zeros((dim, dim), dtype=complex)  # a_j^dag a_i
    for (p, q), k in idx.items():
        if p > 0:
            hop[idx[(p - 1, q + 1)], k] = math.sqrt(p * (q + 1))
    theta = math.acos(math.sqrt(transmissivity))
    gen = theta * (np.exp(1j * phase) * hop - np.exp(-1j * phase) * hop.conj().T)
    return scipy.linalg.expm(gen), idx


def beam_splitter_unitary(basis: Sequence, mode_i: int, mode_j: int, transmissivity: float, phase: float = 0.0):
    n_total = max((occ[mode_i] + occ[mode_j] for occ in basis), default=0)
    u2, idx2 = _two_mode_unitary(transmissivity, phase, n_total)
    index = {occ: k for k, occ in enumerate(basis)}
    r, c, v = [], [], []
    for col, occ in enumerate(basis):
        n = occ[mode_i] + occ[mode_j]
        src = idx2[(occ[mode_i], occ[mode_j])]
        for p in range(n + 1):
            amp = u2[idx2[(p, n - p)], src]
            if abs(amp) < 1e-300:
                continue
            out = list(occ)
            out[mode_i], out[mode_j] = p, n - p
            out = tuple(out)
            if out not in index:
                if abs(amp) > 1e-12:
                    raise BasisTooLargeError(f"beam splitter output {out} missing from basis")
                continue
            r.append(index[out])
            c.append(col)
            v.append(amp)
    return sp.csr_matrix((v, (r, c)), shape=(len(basis), len(basis)), dtype=complex)


def loss_kraus(basis: Sequence, mode: int, eta: float) -> list:
    """Kraus operators <k|_env U_BS |0>_env of a loss beam splitter."""
    n_max = max((occ[mode] for occ in basis), default=0)
    u2, idx2 = _two_mode_unitary(eta, 0.0, n_max)
    index = {occ: k for k, occ in enumerate(basis)}
    ops = []
    for k in range(n_max + 1):
        r, c, v = [], [], []
        for col, occ in enumerate(basis):
            n = occ[mode]
            if n < k:
                continue
            amp = u2[idx2[(n - k, k)], idx2[(n, 0)]]
            out = occ[:mode] + (n - k,) + occ[mode + 1 :]
            if out not in index:
                raise BasisTooLargeError(f"loss output {out} missing from basis")
            r.append(index[out])
            c.append(col)
            v.append(amp)
        ops.append(sp.csr_matrix((v, (r, c)), shape=(len(basis), len(basis)), dtype=complex))
    return ops


def phase_unitary(basis: Sequence, mode: int, phase: float):
    return sp.diags([np.exp(1j * phase * occ[mode]) for occ in basis]).tocsr()


def dense_apply_unitary(u, st: DenseState) -> DenseState:
    if u.shape != st.matrix.shape:
        raise ValueError("operator dimension does not match basis")
    m = u @ st.matrix
    m = (u.conj() @ m.T).T if sp.issparse(u) else m @ u.conj().T
    return DenseState(st.basis, np.asarray(m))


def dense_apply_kraus(ops: Sequence, st: DenseState) -> DenseState:
    out = np.zeros_like(st.matrix)
    for a in ops:
        if a.shape != st.matrix.shape:
            raise ValueError("operator dimension does not match basis")
        out += np.asarray(dense_apply_unitary(a, st).matrix)
    return DenseState(st.basis, out)


def dense_measure(
    st: DenseState, modes: Sequence[int], coefficient: Callable[[tuple], float]
) -> tuple[float, DenseState]:
    """Tr[(E (x) I) rho] and the partial trace over ``modes`` of sqrt(E) rho sqrt(E)."""
    modes = list(modes)
    keep = [k for k in range(st.num_modes) if k not in modes]
    rest_basis = tuple(sorted({tuple(occ[k] for k in keep) for occ in st.basis}))
    rest_index = {occ: i for i, occ in enumerate(rest_basis)}
    by_sub: dict = {}
    for i, occ in enumerate(st.basis):
        by_sub.setdefault(tuple(occ[m] for m in modes), []).append((i, rest_index[tuple(occ[k] for k in keep)]))
    out = np.zeros((len(rest_basis), len(rest_basis)), dtype=complex)
    for sub, pairs in by_sub.items():
        e = coefficient(sub)
        if e == 0:
            continue
        src = [i for i, _ in pairs]
        dst = [j for _, j in pairs]
        out[np.ix_(dst, dst)] += e * st.matrix[np.ix_(src, src)]
    cond = DenseState(rest_basis, out)
    return cond.trace, cond


def product_coefficient(diagonals: Sequence[Sequence[float]]) -> Callable[[tuple], float]:
    def coeff(sub):
        return float(np.prod([d[n] for d, n in zip(diagonals, sub)]))

    return coeff


def dense_tensor(a: DenseState, b: DenseState) -> DenseState:
    basis = tuple(x + y for x in a.basis for y in b.basis)
    return DenseState(basis, np.kron(a.matrix, b.matrix))


def restrict(st: DenseState, basis: Sequence) -> DenseState:
    """Express ``st`` over ``basis``; the support must be covered."""
    basis = tuple(basis)
    index = {occ: i for i, occ in enumerate(basis)}
    pos, src = [], []
    for i, occ in enumerate(st.basis):
        if occ in index:
            pos.append(index[occ])
            src.append(i)
        elif abs(st.matrix[i, i]) > 1e-14:
            raise BasisTooLargeError(f"support {occ} missing from target basis")
    rho = np.zeros((len(basis), len(basis)), dtype=complex)
    rho[np.ix_(pos, pos)] = st.matrix[np.ix_(src, src)]
    return DenseState(basis, rho)


def trace_distance(a: DenseState, b: DenseState) -> float:
    """Half the trace norm of a - b; bases may differ, the union is used."""
    if a.basis != b.basis:
        union = tuple(sorted(set(a.basis) | set(b.basis)))
        a, b = restrict(a, union), restrict(b, union)
    diff = a.matrix - b.matrix
    diff = (diff + diff.conj().T) / 2
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))


# ----------------------------------------------------------------------------
# whole-chain reference


def dense_bsm(st: DenseState, left_rails, right_rails, povm_matrix: np.ndarray, frame_mode_after: int):
    """Dual-rail BSM with psi- heralds phase-corrected; returns (p_accept, conditional)."""
    l0, l1 = left_rails
    r0, r1 = right_rails
    for i, j in ((l0, r0), (l1, r1)):
        st = dense_apply_unitary(beam_splitter_unitary(st.basis, i, j, 0.5, 0.0), st)
    detectors = [l0, r0, l1, r1]  # u0, v0, u1, v1
    zero, one = povm_matrix[0], povm_matrix[1]
    total = 0.0
    parts = []
    for d0 in (0, 1):  # which rail-0 detector fires
        for d1 in (0, 1):  # which rail-1 detector fires
            diags = [one if d0 == 0 else zero, one if d0 == 1 else zero, one if d1 == 0 else zero, one if d1 == 1 else zero]
            p, cond = dense_measure(st, detectors, product_coefficient(diags))
            # (u0, u1) and (v0, v1) herald psi+; the mixed pairs psi-
            if d0 != d1 and p > 0:
                cond = dense_apply_unitary(phase_unitary(cond.basis, frame_mode_after, math.pi), cond)
            total += p
            parts.append(cond)
    basis = parts[0].basis
    return total, DenseState(basis, sum(p.matrix for p in parts))


def _normalize(st: DenseState) -> DenseState:
    return DenseState(st.basis, st.matrix / st.trace)


def dense_link(source_amplitudes: dict, eta_half: float, povm_matrix: np.ndarray, cutoff: int, pairs: int):
    """Reference elementary link: returns (p_s0, conditional state on (L0, L1, R0, R1))."""
    src_basis = grouped_basis(4, cutoff, [((0, 1), pairs), ((2, 3), pairs)])
    src = dense_from_pure(source_amplitudes, src_basis)
    for rail in (2, 3):
        src = dense_apply_kraus(loss_kraus(src.basis, rail, eta_half), src)
    joint = dense_tensor(src, src)
    big = grouped_basis(8, cutoff, [((0, 1), pairs), ((4, 5), pairs), ((2, 3, 6, 7), 2 * pairs)])
    joint = restrict(joint, big)
    return dense_bsm(joint, (2, 3), (6, 7), povm_matrix, frame_mode_after=3)


def dense_swap(left: DenseState, right: DenseState, eta_mem: float, povm_matrix: np.ndarray, cutoff: int, pairs: int):
    for rail in (2, 3):
        left = dense_apply_kraus(loss_kraus(left.basis, rail, eta_mem), left)
    for rail in (0, 1):
        right = dense_apply_kraus(loss_kraus(right.basis, rail, eta_mem), right)
    joint = dense_tensor(left, right)
    big = grouped_basis(8, cutoff, [((0, 1), pairs), ((6, 7), pairs), ((2, 3, 4, 5), 2 * pairs)])
    joint = restrict(joint, big)
    return dense_bsm(joint, (2, 3), (4, 5), povm_matrix, frame_mode_after=3)


def dense_qber(st: DenseState, povm_matrix: np.ndarray, basis: str) -> tuple[float, float]:
    """(p_ab, q) for one-click-per-side post-selection; Z expects opposite rails, X equal rails."""
    if basis == "X":
        for i, j in ((0, 1), (2, 3)):
            st = dense_apply_unitary(beam_splitter_unitary(st.basis, i, j, 0.5, 0.0), st)
    zero, one = povm_matrix[0], povm_matrix[1]
    p_ab = 0.0
    err = 0.0
    for a in (0, 1):
        for b in (0, 1):
            diags = [one if a == 0 else zero, one if a == 1 else zero, one if b == 0 else zero, one if b == 1 else zero]
            p, _ = dense_measure(st, [0, 1, 2, 3], product_coefficient(diags))
            p_ab += p
            same = a == b
            if same != (basis == "X"):
                err += p
    return p_ab, (err / p_ab if p_ab > 0 else float("nan"))


def dense_chain(
    source_amplitudes: dict,
    eta_half: float,
    center_povm: np.ndarray,
    node_povm: np.ndarray,
    endpoint_povm: np.ndarray,
    eta_mem: float,
    num_links: int,
    end_memory: bool,
    cutoff: int,
    pairs: int,
) -> dict:
    """Sequential-order reference for the whole chain."""
    p_s0, link = dense_link(source_amplitudes, eta_half, center_povm, cutoff, pairs)
    result = {"p_s0": p_s0, "link_state": link, "p_swap": []}
    if p_s0 == 0:
        return result
    link = _normalize(link)
    state = link
    for _ in range(num_links - 1):
        p, cond = dense_swap(state, link, eta_mem, node_povm, cutoff, pairs)
        result["p_swap"].append(p)
        if p == 0:
            return result
        state = _normalize(cond)
    if end_memory:
        for rail in range(4):
            state = dense_apply_kraus(loss_kraus(state.basis, rail, eta_mem), state)
    result["final_state"] = state
    result["p_ab"], result["q_z"] = dense_qber(state, endpoint_povm, "Z")
    _, result["q_x"] = dense_qber(state, endpoint_povm, "X")
    return result

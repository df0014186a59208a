import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pdc_repeater.fock_core import (
    BranchEnsemble,
    FidelityUndefinedError,
    PureState,
    TruncationError,
    TruncationPolicy,
    apply_beam_splitter,
    apply_loss,
    apply_phase,
    compress,
    fidelity_with_pure,
    measure_remove,
    mean_photons,
    mix,
    permute_modes,
    tensor,
)

R2 = 1 / math.sqrt(2)


def ens(terms, policy=TruncationPolicy()):
    return BranchEnsemble.from_pure(PureState.from_terms(terms), policy)


def test_pure_state_rejects_supernormalized():
    with pytest.raises(ValueError):
        PureState(1, {(1,): 1.5})


def test_vacuum_and_basis():
    assert PureState.vacuum(3).amplitude((0, 0, 0)) == 1
    assert PureState.basis((1, 2)).norm_sq() == pytest.approx(1.0)


def test_from_pure_keeps_norm_as_weight():
    s = BranchEnsemble.from_pure(PureState(1, {(1,): 0.6}))
    assert s.trace == pytest.approx(0.36)


def test_trace_above_one_rejected():
    with pytest.raises(ValueError):
        BranchEnsemble(1, [(0,)], np.array([[1.1]]))


def test_hong_ou_mandel():
    s = apply_beam_splitter(ens([((1, 1), 1.0)]), 0, 1, 0.5)
    (w, out), = s.branches
    assert w == pytest.approx(1.0)
    assert abs(out.amplitude((1, 1))) < 1e-12
    # (|0,2> - |2,0>)/sqrt2 up to a global phase
    assert out.amplitude((0, 2)) == pytest.approx(-out.amplitude((2, 0)))
    assert abs(out.amplitude((2, 0))) == pytest.approx(R2)


def test_beam_splitter_single_photon_convention():
    s = apply_beam_splitter(ens([((1, 0), 1.0)]), 0, 1, 0.3, 0.7)
    (_, out), = s.branches
    assert out.amplitude((1, 0)) == pytest.approx(math.sqrt(0.3))
    assert out.amplitude((0, 1)) == pytest.approx(math.sqrt(0.7) * np.exp(0.7j))


def test_beam_splitter_cutoff_overflow():
    s = ens([((2, 2), 1.0)], TruncationPolicy(per_mode_cutoff=3))
    with pytest.raises(TruncationError) as info:
        apply_beam_splitter(s, 0, 1, 0.5)
    assert info.value.dropped_weight > 0
    lenient = s.with_policy(TruncationPolicy(per_mode_cutoff=3, drop_overflow=True))
    out = apply_beam_splitter(lenient, 0, 1, 0.5)
    assert out.trace + out.dropped_weight == pytest.approx(1.0)


def test_tensor_global_bound():
    a = ens([((2, 2), 1.0)], TruncationPolicy(global_photon_bound=4))
    with pytest.raises(TruncationError):
        tensor(a, a)


def test_loss_photon_statistics():
    s = apply_loss(ens([((2,), 1.0)]), 0, 0.3)
    rho = s.density_matrix()
    probs = dict(zip(s.basis, np.real(np.diag(rho))))
    assert probs[(2,)] == pytest.approx(0.09)
    assert probs[(1,)] == pytest.approx(0.42)
    assert probs[(0,)] == pytest.approx(0.49)
    assert mean_photons(s, 0) == pytest.approx(0.6)


def test_full_loss_gives_vacuum():
    s = apply_loss(ens([((1, 0), R2), ((0, 1), R2)]), 0, 0.0)
    assert mean_photons(s, 0) == 0
    assert s.trace == pytest.approx(1.0)


def test_phase_on_vacuum_is_trivial():
    s = ens([((0,), 1.0)])
    assert np.allclose(apply_phase(s, 0, 1.2).density_matrix(), s.density_matrix())


def test_measure_remove_projects_and_traces_out():
    s = ens([((1, 0), R2), ((0, 1), R2)])
    p, cond = measure_remove(s, [0], [np.array([0.0, 1.0])])
    assert p == pytest.approx(0.5)
    (w, out), = cond.branches
    assert out.amplitude((0,)) == pytest.approx(1.0)


def test_measure_remove_rejects_offdiagonal_element():
    s = ens([((1, 0), 1.0)])
    with pytest.raises(ValueError):
        measure_remove(s, [0], [np.array([[0, 1], [1, 0]])])


def test_measure_all_modes_with_zero_probability():
    p, cond = measure_remove(ens([((1,), 1.0)]), [0], [np.array([1.0, 0.0])])
    assert p == 0 and cond.trace == 0


def test_compress_preserves_state_and_reduces_to_rank():
    a = PureState.from_terms([((1, 0), 1.0)])
    b = PureState.from_terms([((0, 1), 1.0)])
    c = PureState.from_terms([((1, 0), R2), ((0, 1), R2)])
    s = BranchEnsemble.from_branches(2, [(0.3, a), (0.3, b), (0.4, c)])
    out = compress(s)
    assert len(out) == 2
    assert np.allclose(out.density_matrix(), s.density_matrix(), atol=1e-14)


def test_mix_sums_traces():
    a = ens([((1, 0), 1.0)]).scaled(0.25)
    b = ens([((0, 1), 1.0)]).scaled(0.5)
    assert mix([a, b]).trace == pytest.approx(0.75)


def test_permute_modes():
    s = permute_modes(ens([((1, 0, 2), 1.0)]), [2, 0, 1])
    assert s.basis == ((2, 1, 0),)


def test_fidelity():
    bell = PureState.from_terms([((1, 0), R2), ((0, 1), R2)])
    assert fidelity_with_pure(BranchEnsemble.from_pure(bell), bell) == pytest.approx(1.0)
    with pytest.raises(FidelityUndefinedError):
        fidelity_with_pure(BranchEnsemble.empty(2), bell)


amplitude = st.complex_numbers(max_magnitude=1.0, allow_nan=False, allow_infinity=False)


@settings(max_examples=60, deadline=None)
@given(
    a=st.lists(amplitude, min_size=6, max_size=6),
    t=st.floats(0.0, 1.0),
    phi=st.floats(-math.pi, math.pi),
    eta=st.floats(0.0, 1.0),
)
def test_unitary_and_loss_preserve_trace(a, t, phi, eta):
    occs = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    if sum(abs(x) ** 2 for x in a) < 1e-6:
        return
    s = ens(list(zip(occs, a)))
    out = apply_beam_splitter(s, 0, 1, t, phi)
    assert out.trace == pytest.approx(1.0, abs=1e-12)
    assert mean_photons(out, 0) + mean_photons(out, 1) == pytest.approx(mean_photons(s, 0) + mean_photons(s, 1))
    lossy = apply_loss(out, 1, eta)
    assert lossy.trace == pytest.approx(1.0, abs=1e-12)
    assert mean_photons(lossy, 1) == pytest.approx(eta * mean_photons(out, 1), abs=1e-12)

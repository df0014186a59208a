"""Randomized engine-vs-oracle comparisons shared by the unit and acceptance suites."""

import math

import numpy as np

from pdc_repeater import oracle
from pdc_repeater.bsm import bsm_measure
from pdc_repeater.devices import DetectorSpec, detector_povm
from pdc_repeater.fock_core import (
    BranchEnsemble,
    PureState,
    TruncationPolicy,
    apply_beam_splitter,
    apply_loss,
    apply_phase,
    measure_remove,
)

POLICY = TruncationPolicy(per_mode_cutoff=2, global_photon_bound=2)
KINDS = ("bs", "loss", "phase", "measure", "bsm")


def random_ensemble(rng, n_modes):
    basis = oracle.enumerate_basis(n_modes, 2, 2)
    branches = []
    weights = rng.dirichlet(np.ones(rng.integers(1, 4))) * rng.uniform(0.5, 1.0)
    for w in weights:
        support = rng.choice(len(basis), size=min(len(basis), rng.integers(1, 5)), replace=False)
        amps = rng.normal(size=len(support)) + 1j * rng.normal(size=len(support))
        amps /= np.linalg.norm(amps)
        branches.append((float(w), PureState(n_modes, {basis[k]: complex(a) for k, a in zip(support, amps)})))
    return BranchEnsemble.from_branches(n_modes, branches, POLICY)


def random_detector(rng):
    return DetectorSpec(eta=float(rng.uniform(0.3, 1.0)), dark_rate_hz=float(rng.choice([0.0, 1e-3])) * 3e7)


def cases(count, seed=20240601):
    rng = np.random.default_rng(seed)
    for case in range(count):
        kind = KINDS[case % len(KINDS)]
        n = int(rng.integers(5 if kind == "bsm" else 2, 9))
        yield case, kind, n, int(rng.integers(2**31))


def run_case(kind, n_modes, seed):
    """Max deviation (trace distance or probability) between engine and oracle for one operation."""
    rng = np.random.default_rng(seed)
    s = random_ensemble(rng, n_modes)
    d = oracle.dense_from_ensemble(s)
    dev = 0.0
    if kind == "bs":
        i, j = (int(x) for x in rng.choice(n_modes, 2, replace=False))
        t, phi = float(rng.uniform()), float(rng.uniform(-math.pi, math.pi))
        out = apply_beam_splitter(s, i, j, t, phi)
        ref = oracle.dense_apply_unitary(oracle.beam_splitter_unitary(d.basis, i, j, t, phi), d)
    elif kind == "loss":
        m, eta = int(rng.integers(n_modes)), float(rng.uniform())
        out = apply_loss(s, m, eta)
        ref = oracle.dense_apply_kraus(oracle.loss_kraus(d.basis, m, eta), d)
    elif kind == "phase":
        m, phi = int(rng.integers(n_modes)), float(rng.uniform(-math.pi, math.pi))
        out = apply_phase(s, m, phi)
        ref = oracle.dense_apply_unitary(oracle.phase_unitary(d.basis, m, phi), d)
    elif kind == "measure":
        k = int(rng.integers(1, min(3, n_modes - 1) + 1))
        modes = [int(x) for x in rng.choice(n_modes, k, replace=False)]
        povm = detector_povm(random_detector(rng), 2)
        diags = [povm.coefficients(int(rng.integers(0, 3))) for _ in modes]
        p, out = measure_remove(s, modes, diags)
        p_ref, ref = oracle.dense_measure(d, modes, oracle.product_coefficient(diags))
        dev = abs(p - p_ref)
    else:
        rails = [int(x) for x in rng.choice(n_modes, 4, replace=False)]
        povm = detector_povm(random_detector(rng), 2)
        p, out = bsm_measure(s, rails[:2], rails[2:], povm)
        p_ref, ref = oracle.dense_bsm(d, rails[:2], rails[2:], povm.matrix(), n_modes - 5)
        dev = abs(p - p_ref)
    return max(dev, oracle.trace_distance(oracle.dense_from_ensemble(out), ref))

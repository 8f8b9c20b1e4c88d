import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qjumps import qstate
from qjumps.exceptions import NumericalConsistencyError, StructuralError
from qjumps.qstate import Projector

from conftest import KET0, KET1, SIGMA_X, SIGMA_Z


def test_eigendecompose_groups_degenerate_eigenvalues():
    out = qstate.eigendecompose(np.diag([2.0, 2.0, 0.0]))
    assert [round(lam, 12) for lam, _ in out] == [2.0, 0.0]
    assert out[0][1].rank == 2
    assert np.allclose(out[0][1].matrix(), np.diag([1, 1, 0]))
    assert np.allclose(out[1][1].matrix(), np.diag([0, 0, 1]))


def test_eigendecompose_identity_is_one_block():
    out = qstate.eigendecompose(np.eye(3))
    assert len(out) == 1
    lam, p = out[0]
    assert lam == pytest.approx(1.0)
    assert p.rank == 3


def test_eigendecompose_pauli_x():
    (lp, pp), (lm, pm) = qstate.eigendecompose(SIGMA_X)
    assert (lp, lm) == pytest.approx((1.0, -1.0))
    plus = np.array([1, 1]) / math.sqrt(2)
    minus = np.array([1, -1]) / math.sqrt(2)
    assert np.allclose(pp.matrix(), np.outer(plus, plus))
    assert np.allclose(pm.matrix(), np.outer(minus, minus))


def test_eigendecompose_rejects_non_hermitian():
    with pytest.raises(StructuralError):
        qstate.eigendecompose(np.array([[0, 1], [0, 0]]))


def test_reconstruction_and_completeness(rng):
    h = qstate.random_hermitian(7, rng)
    h[:3, :3] = 0
    h[3:, :3] = h[:3, 3:] = 0                 # a degenerate zero block of size 3
    out = qstate.eigendecompose(h)
    rebuilt = sum(lam * p.matrix() for lam, p in out)
    assert qstate.operator_norm(rebuilt - h) <= 1e-9 * qstate.operator_norm(h)
    assert np.allclose(sum(p.matrix() for _, p in out), np.eye(7), atol=1e-10)
    lams = [lam for lam, _ in out]
    assert lams == sorted(lams, reverse=True)
    assert any(p.rank == 3 for _, p in out)


def test_spectral_decompose_examples():
    d = qstate.spectral_decompose(np.diag([1.0, 0.0]))
    assert len(d) == 1 and d[0].weight == pytest.approx(1.0) and d[0].projector.rank == 1

    d = qstate.spectral_decompose(np.diag([0.7, 0.3]))
    assert d.weights == pytest.approx([0.7, 0.3])
    assert np.allclose(d[0].projector.matrix(), np.outer(KET0, KET0))
    assert np.allclose(d[1].projector.matrix(), np.outer(KET1, KET1))


def test_spectral_decompose_one_euler_step_of_damping():
    # (1 - a dt)|0><0| + a dt |1><1| with a = 1, dt = 0.01
    d = qstate.spectral_decompose(np.diag([0.99, 0.01]))
    assert d.weights == pytest.approx([0.99, 0.01], abs=1e-14)


def test_spectral_decompose_rejects_bad_trace():
    with pytest.raises(StructuralError):
        qstate.spectral_decompose(np.diag([0.7, 0.7]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), dim=st.integers(2, 8))
def test_random_density_decomposition_invariants(seed, dim):
    rho = qstate.random_density_matrix(dim, np.random.default_rng(seed))
    d = qstate.spectral_decompose(rho)
    w = d.weights
    assert np.all(np.diff(w) < 0)
    assert abs(d.total_weight() + d.residual - 1.0) <= 1e-8
    projs = [b.projector.matrix() for b in d.branches]
    for i in range(len(projs)):
        for j in range(i + 1, len(projs)):
            assert qstate.operator_norm(projs[i] @ projs[j]) <= 1e-8
    # completeness up to dropped (numerically zero) eigenvalues
    assert qstate.operator_norm(sum(projs) - np.eye(dim)) <= 1e-8 or d.residual != 0.0


def test_projector_invariants(rng):
    v = rng.normal(size=(5, 2)) + 1j * rng.normal(size=(5, 2))
    p = Projector.from_basis(v)
    m = p.matrix()
    assert np.allclose(m @ m, m, atol=1e-10)
    assert np.allclose(m, m.conj().T, atol=1e-10)
    assert round(np.trace(m).real) == p.rank == 2
    assert np.trace(p.density()).real == pytest.approx(1.0)


def test_expectation_examples(rng):
    rho = qstate.random_density_matrix(3, rng)
    assert qstate.expectation(rho, np.eye(3)) == pytest.approx(1.0)
    assert qstate.expectation(np.diag([1.0, 0.0]), np.diag([5.0, -1.0])) == pytest.approx(5.0)
    assert qstate.expectation(np.eye(2) / 2, SIGMA_X) == pytest.approx(0.0, abs=1e-15)


def test_expectation_is_linear(rng):
    rho = qstate.random_density_matrix(4, rng)
    x, y = qstate.random_hermitian(4, rng), qstate.random_hermitian(4, rng)
    a, b = rng.normal(size=2)
    lhs = qstate.expectation(rho, a * x + b * y)
    rhs = a * qstate.expectation(rho, x) + b * qstate.expectation(rho, y)
    assert abs(lhs - rhs) <= 1e-10


def test_expectation_dimension_mismatch():
    with pytest.raises(StructuralError):
        qstate.expectation(np.eye(2) / 2, np.eye(3))


def test_uncertainty_examples(rng):
    assert qstate.uncertainty(np.diag([1.0, 0.0]), SIGMA_Z) == pytest.approx(0.0, abs=1e-12)
    assert qstate.uncertainty(np.eye(2) / 2, SIGMA_Z) == pytest.approx(1.0)
    rho = qstate.random_density_matrix(3, rng)
    assert qstate.uncertainty(rho, np.eye(3)) == pytest.approx(0.0, abs=1e-7)


def test_uncertainty_zero_iff_support_in_one_eigenspace():
    x = np.diag([1.0, 1.0, -2.0])
    inside = np.zeros((3, 3))
    inside[:2, :2] = [[0.5, 0.3], [0.3, 0.5]]          # supported on the +1 eigenspace
    assert qstate.uncertainty(inside, x) <= 1e-8
    mixed = np.diag([0.5, 0.0, 0.5])
    assert qstate.uncertainty(mixed, x) > 1e-8


def test_uncertainty_rejects_negative_radicand():
    # unit trace and Hermitian but not positive: <X>^2 = 3.24 exceeds <X^2> = 1
    bad = np.array([[0.5, 0.9], [0.9, 0.5]])
    with pytest.raises(NumericalConsistencyError):
        qstate.uncertainty(bad, SIGMA_X)


def test_projector_distance_examples():
    p = Projector.from_vector(KET0)
    assert qstate.projector_distance(p, p) == pytest.approx(0.0, abs=1e-15)
    assert qstate.projector_distance(p, Projector.from_vector(KET1)) == pytest.approx(1.0)
    q = Projector.from_vector(np.array([math.cos(math.pi / 4), math.sin(math.pi / 4)]))
    assert qstate.projector_distance(p, q) == pytest.approx(math.sin(math.pi / 4), abs=1e-12)


def test_projector_distance_dimension_mismatch():
    with pytest.raises(StructuralError):
        qstate.projector_distance(Projector.from_vector(KET0), Projector.from_vector(np.ones(3)))


def test_trace_distance_matches_definition(rng):
    a = qstate.random_density_matrix(4, rng)
    b = qstate.random_density_matrix(4, rng)
    ref = 0.5 * np.sum(np.abs(np.linalg.eigvalsh(a - b)))
    assert qstate.trace_distance(a, b) == pytest.approx(ref)

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cavityfb import fock
from cavityfb.errors import InvalidArgument, UnphysicalBath
from cavityfb.fock import BathParams, DensityMatrix

from conftest import random_density, random_hermitian


def test_ladder_action_on_fock_states():
    sp = fock.make_space(6)
    a = fock.annihilation(sp)
    for n in range(1, 6):
        out = a.matrix @ fock.fock_ket(sp, n)
        assert np.allclose(out, np.sqrt(n) * fock.fock_ket(sp, n - 1))


def test_commutator_is_identity_below_truncation():
    sp = fock.make_space(7)
    a = fock.annihilation(sp)
    c = (a @ a.dag() - a.dag() @ a).matrix
    assert np.allclose(c[:-1, :-1], np.eye(6))
    assert c[-1, -1] == pytest.approx(-6)


def test_quadratures_vacuum_variance_one():
    sp = fock.make_space(5)
    x, y = fock.quadratures(sp)
    vac = fock.fock_state(sp, 0)
    assert fock.variance(x, vac) == pytest.approx(1)
    assert fock.variance(y, vac) == pytest.approx(1)


def test_coherent_state_moments():
    sp = fock.make_space(40)
    alpha = 1.2 - 0.7j
    rho = fock.coherent_state(sp, alpha)
    a = fock.annihilation(sp)
    x, y = fock.quadratures(sp)
    assert fock.expect(a, rho) == pytest.approx(alpha, abs=1e-10)
    assert fock.expect(x, rho).real == pytest.approx(2 * alpha.real, abs=1e-10)
    assert fock.expect(y, rho).real == pytest.approx(2 * alpha.imag, abs=1e-10)
    assert fock.variance(x, rho) == pytest.approx(1, abs=1e-9)


def test_thermal_occupation():
    sp = fock.make_space(60)
    rho = fock.thermal_state(sp, 0.8)
    assert fock.expect(fock.number(sp), rho).real == pytest.approx(0.8, rel=1e-9)


def test_partial_trace_of_product_state(rng):
    s1, s2 = fock.make_space(3), fock.make_space(4)
    r1, r2 = random_density(rng, 3), random_density(rng, 4)
    sp = fock.tensor_space(s1, s2)
    rho = DensityMatrix(sp, np.kron(r1, r2))
    assert np.allclose(fock.partial_trace(rho, sp, 0), r1)
    assert np.allclose(fock.partial_trace(rho, sp, 1), r2)


def test_embed_matches_kron():
    s1, s2 = fock.make_space(3), fock.make_space(2)
    sp = fock.tensor_space(s1, s2)
    a = fock.annihilation(s2)
    assert np.allclose(fock.embed(a, sp, 1).matrix, np.kron(np.eye(3), a.matrix))


def test_trace_distance_orthogonal_states():
    sp = fock.make_space(3)
    assert fock.trace_distance(fock.fock_state(sp, 0).matrix, fock.fock_state(sp, 2).matrix) == pytest.approx(1)


def test_variance_rejects_non_hermitian():
    sp = fock.make_space(4)
    with pytest.raises(InvalidArgument):
        fock.variance(fock.annihilation(sp), fock.fock_state(sp, 0))


def test_density_matrix_checks():
    sp = fock.make_space(2)
    with pytest.raises(InvalidArgument):
        DensityMatrix(sp, np.diag([1.2, -0.2])).check()
    with pytest.raises(InvalidArgument):
        DensityMatrix(sp, np.diag([0.5, 0.4])).check()


def test_operator_space_mismatch():
    with pytest.raises(InvalidArgument):
        fock.annihilation(fock.make_space(3)) + fock.annihilation(fock.make_space(4))


def test_expm_hermitian_is_unitary(rng):
    sp = fock.make_space(5)
    h = fock.Operator(sp, random_hermitian(rng, 5))
    u = fock.expm_hermitian(h).matrix
    assert np.allclose(u @ u.conj().T, np.eye(5))


def test_bath_validation_and_weights():
    with pytest.raises(UnphysicalBath):
        BathParams(1.0, 2.0)
    with pytest.raises(UnphysicalBath):
        BathParams(-0.1)
    assert BathParams.vacuum().L == 1
    b = BathParams(0.5, 0.3 + 0.2j)
    assert b.L == pytest.approx(2.6)
    assert b.L_y == pytest.approx(1.4)
    sq = BathParams.squeezed(1.0)
    assert abs(sq.M) ** 2 == pytest.approx(2.0)
    assert not sq.is_classical


@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_random_states_pass_checks(seed, d):
    rng = np.random.default_rng(seed)
    sp = fock.make_space(d)
    rho = DensityMatrix(sp, random_density(rng, d)).check()
    assert np.trace(rho.matrix).real == pytest.approx(1)
    v = fock.vec(rho.matrix)
    assert np.allclose(fock.unvec(v, d), rho.matrix)


@given(st.integers(0, 2**32 - 1))
def test_vec_identity_column_major(seed):
    rng = np.random.default_rng(seed)
    A, B, R = (rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) for _ in range(3))
    assert np.allclose(np.kron(B.T, A) @ fock.vec(R), fock.vec(A @ R @ B))

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cavityfb import fock, generators as gen
from cavityfb.errors import InvalidArgument, MalformedGenerator, Unsupported
from cavityfb.fock import BathParams, Operator

from conftest import random_bath, random_density, random_hermitian

D = 5
SP = fock.make_space(D)
seeds = st.integers(0, 2**32 - 1)


def _rand_op(rng, scale=0.5):
    return Operator(SP, scale * (rng.normal(size=(D, D)) + 1j * rng.normal(size=(D, D))))


def _herm(rng, scale=0.5):
    return Operator(SP, random_hermitian(rng, D, scale))


def _check_valid_generator(L):
    assert L.trace_leak() < 1e-10
    rho = random_density(np.random.default_rng(0), L.space.dim)
    out = L.apply(rho)
    assert np.allclose(out, out.conj().T, atol=1e-10)


# ------------------------------------------------------------ invariants

@given(seeds)
def test_quadrature_generator_trace_and_hermiticity(seed):
    rng = np.random.default_rng(seed)
    _check_valid_generator(gen.quadrature_feedback_liouvillian(_herm(rng), _herm(rng), random_bath(rng)))


@given(seeds)
def test_complex_generator_trace_and_hermiticity(seed):
    rng = np.random.default_rng(seed)
    _check_valid_generator(gen.complex_feedback_liouvillian(_rand_op(rng), _herm(rng), random_bath(rng)))


@given(seeds)
def test_heterodyne_generator_trace_and_hermiticity(seed):
    rng = np.random.default_rng(seed)
    b = random_bath(rng, 0.5)
    if b.L_x <= 0 or b.L_y <= 0:
        return
    for damp in (True, False):
        _check_valid_generator(gen.heterodyne_feedback_liouvillian(_herm(rng), _herm(rng), bath=b,
                                                                   return_damping=damp))


@given(seeds)
def test_complex_with_imaginary_amplitude_is_quadrature_feedback(seed):
    rng = np.random.default_rng(seed)
    Y, b = _herm(rng), random_bath(rng)
    a = gen.complex_feedback_liouvillian(-1j * Y, bath=b)
    q = gen.quadrature_feedback_liouvillian(Y, bath=b)
    assert (a - q).norm() < 1e-10


@given(seeds)
def test_heterodyne_is_complex_plus_diffusion(seed):
    rng = np.random.default_rng(seed)
    b = random_bath(rng, 0.5)
    if b.L_x <= 0 or b.L_y <= 0:
        return
    X, Y = _herm(rng), _herm(rng)
    het = gen.heterodyne_feedback_liouvillian(X, Y, bath=b)
    cplx = gen.complex_feedback_liouvillian(X - 1j * Y, bath=b)
    diff = 2 * b.L_x * gen.lindblad(Y.matrix) + 2 * b.L_y * gen.lindblad(X.matrix)
    assert np.max(np.abs(het.matrix - cplx.matrix - diff)) < 1e-10
    # the literal form differs only by the bath-type terms of A
    lit = gen.heterodyne_feedback_liouvillian(X, Y, bath=b, return_damping=False)
    q = gen.bath_terms((X - 1j * Y).matrix, b)
    assert np.max(np.abs(het.matrix - lit.matrix - q)) < 1e-10


@given(seeds)
def test_heterodyne_first_moments_match_complex(seed):
    # with X, Y linear in a, a^dag the extra diffusion does not move <a>
    rng = np.random.default_rng(seed)
    sp = fock.make_space(8)
    x, y = fock.quadratures(sp)
    p, q = rng.normal(size=2), rng.normal(size=2)
    X, Y = p[0] * x + p[1] * y, q[0] * x + q[1] * y
    het = gen.heterodyne_feedback_liouvillian(X, Y)
    cplx = gen.complex_feedback_liouvillian(X - 1j * Y)
    rho = np.zeros((8, 8), dtype=complex)
    rho[:4, :4] = random_density(rng, 4)
    a = fock.annihilation(sp).matrix
    assert abs(np.trace(a @ (het.apply(rho) - cplx.apply(rho)))) < 1e-10


@pytest.mark.parametrize("N", [0.0, 0.1, 1.0, 10.0])
def test_heterodyne_weights_positive_at_squeezing_limit(N):
    for phase in (0.0, np.pi / 2, np.pi):
        b = BathParams.squeezed(N, phase)
        assert b.L_x > 0 and b.L_y > 0
        gen.heterodyne_feedback_liouvillian(fock.zero(SP), fock.zero(SP), bath=b)


def test_feedback_generators_reject_coherent_bath_and_non_hermitian():
    with pytest.raises(Unsupported):
        gen.quadrature_feedback_liouvillian(fock.zero(SP), bath=BathParams(0, 0, 1.0))
    with pytest.raises(InvalidArgument):
        gen.quadrature_feedback_liouvillian(fock.annihilation(SP))


# ------------------------------------------------------------- examples

def test_mirror_loop_pi_vanishes_and_zero_doubles_rate():
    sp = fock.make_space(8)
    assert gen.mirror_loop_liouvillian(1.0, np.pi, sp).norm() < 1e-12
    a = fock.annihilation(sp).matrix
    L0 = gen.mirror_loop_liouvillian(1.0, 0.0, sp)
    assert np.max(np.abs(L0.matrix - 4 * gen.lindblad(a))) < 1e-14


@pytest.mark.parametrize("phi", [0.0, np.pi / 2, np.pi, 2.0])
def test_mirror_amplitude_reproduces_mirror_loop(phi):
    sp = fock.make_space(6)
    c1, A = gen.mirror_amplitude(0.8, phi, sp)
    a = gen.complex_feedback_liouvillian(A, c1=c1)
    b = gen.mirror_loop_liouvillian(0.8, phi, sp)
    assert (a - b).norm() < 1e-12


def test_heterodyne_mirror_analog_at_pi():
    sp = fock.make_space(6)
    a = fock.annihilation(sp).matrix
    c1, A = gen.mirror_amplitude(1.0, np.pi, sp)
    X, Y = gen.hermitian_parts(A)
    full = gen.heterodyne_feedback_liouvillian(X, Y, c1=c1)
    assert np.max(np.abs(full.matrix - gen.lindblad(a) - gen.lindblad(a.conj().T))) < 1e-12
    lit = gen.heterodyne_feedback_liouvillian(X, Y, c1=c1, return_damping=False)
    assert np.max(np.abs(lit.matrix - gen.lindblad(a.conj().T))) < 1e-12


def test_hermitian_parts_roundtrip():
    rng = np.random.default_rng(3)
    A = _rand_op(rng)
    X, Y = gen.hermitian_parts(A)
    assert X.is_hermitian() and Y.is_hermitian()
    assert np.allclose((X - 1j * Y).matrix, A.matrix)


def test_quadrature_operator_is_hermitian_partner():
    sp = fock.make_space(6)
    A = gen.linear_amplitude(sp, 1.5, -1.0)
    assert np.allclose(gen.quadrature_operator(sp, 1.5).matrix, (1j * A).matrix)


def test_single_cavity_with_drive_is_valid():
    sp = fock.make_space(6)
    L = gen.single_cavity_liouvillian(fock.annihilation(sp), 1.0, BathParams(0.2, 0.1, 0.3 + 0.1j))
    _check_valid_generator(L)


def test_cascaded_requires_two_factors():
    with pytest.raises(InvalidArgument):
        gen.cascaded_liouvillian(1, 1, None, fock.zero(SP))


def test_two_mode_intensity_needs_vacuum():
    with pytest.raises(Unsupported):
        gen.two_mode_feedback_liouvillian(gen.IntensityCoupling(fock.zero(SP)), 10.0, bath=BathParams(0.1))


def test_two_mode_generators_are_valid():
    sp = fock.make_space(3)
    x, y = fock.quadratures(sp)
    for c in (gen.IntensityCoupling(0.3 * x), gen.QuadratureCoupling(0.2 * y),
              gen.ComplexAmplitudeCoupling(B=0.3 * fock.annihilation(sp))):
        L = gen.two_mode_feedback_liouvillian(c, 5.0, driven_dim=3)
        assert L.space.factors == (3, 3)
        _check_valid_generator(L)


# ----------------------------------------------------- Lindblad-form check

def test_gell_mann_basis_orthonormal():
    F = gen.gell_mann_basis(4)
    gram = np.einsum("aij,bji->ab", F, F)
    assert np.allclose(gram, np.eye(16))
    assert all(np.allclose(f, f.conj().T) for f in F)


@given(seeds)
def test_lindblad_check_accepts_random_lindblad(seed):
    rng = np.random.default_rng(seed)
    d = 3
    sp = fock.make_space(d)
    L = gen.hamiltonian(random_hermitian(rng, d))
    for _ in range(2):
        L = L + gen.lindblad(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    chk = gen.lindblad_form_check(gen.Liouvillian(sp, L))
    assert chk.valid


def test_lindblad_check_rejects_negative_dissipator():
    sp = fock.make_space(3)
    a = fock.annihilation(sp).matrix
    chk = gen.lindblad_form_check(gen.Liouvillian(sp, gen.lindblad(a) - 0.5 * gen.lindblad(a.conj().T)))
    assert not chk.valid and chk.min_kossakowski_eigenvalue < 0


def test_lindblad_check_rejects_non_trace_preserving():
    sp = fock.make_space(3)
    with pytest.raises(MalformedGenerator):
        gen.lindblad_form_check(gen.Liouvillian(sp, -np.eye(9)))


def test_expanded_intensity_converges_at_third_order():
    sp = fock.make_space(8)
    x, _ = fock.quadratures(sp)
    ss = np.array([0.1, 0.05, 0.025])
    d = [(gen.intensity_feedback_liouvillian(s * x, form="expanded")
          - gen.intensity_feedback_liouvillian(s * x, form="lindblad")).norm() for s in ss]
    assert np.polyfit(np.log(ss), np.log(d), 1)[0] >= 2.9


def test_intensity_form_validity():
    sp = fock.make_space(5)
    x, _ = fock.quadratures(sp)
    assert not gen.lindblad_form_check(gen.intensity_feedback_liouvillian(x, form="expanded")).valid
    assert gen.lindblad_form_check(gen.intensity_feedback_liouvillian(x, form="lindblad")).valid
    with pytest.raises(InvalidArgument):
        gen.intensity_feedback_liouvillian(x, form="other")

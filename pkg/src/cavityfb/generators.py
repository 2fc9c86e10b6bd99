"""Feedback master-equation generators as dense Liouvillian matrices.

Time is measured in units of the source-cavity decay rate, so the source
jump operator ``c1`` is the bare annihilation operator unless a caller
passes something else. All generators act on column-major ``vec(rho)``
(see :mod:`cavityfb.fock`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from . import fock
from .errors import InvalidArgument, MalformedGenerator, UnphysicalBath, Unsupported
from .fock import BathParams, Operator, Space
from .policy import DEFAULT_POLICY, NumericPolicy

# ------------------------------------------------------ superoperator kit
# Built sparse (a two-mode generator has a few nonzeros per row) and
# densified once inside Liouvillian.


def _eye(d: int):
    return sp.identity(d, dtype=complex, format="csr")


def spre(a) -> sp.csr_matrix:
    """a rho"""
    return sp.kron(_eye(a.shape[0]), sp.csr_matrix(a), format="csr")


def spost(b) -> sp.csr_matrix:
    """rho b"""
    return sp.kron(sp.csr_matrix(b).T, _eye(b.shape[0]), format="csr")


def sprepost(a, b) -> sp.csr_matrix:
    """a rho b"""
    return sp.kron(sp.csr_matrix(b).T, sp.csr_matrix(a), format="csr")


def comm(a) -> sp.csr_matrix:
    """[a, rho]"""
    return spre(a) - spost(a)


def lindblad(c) -> sp.csr_matrix:
    """D[c]"""
    c = np.asarray(c)
    cd = c.conj().T
    cdc = cd @ c
    return sprepost(c, cd) - 0.5 * spre(cdc) - 0.5 * spost(cdc)


def hamiltonian(h) -> sp.csr_matrix:
    """-i[h, rho]"""
    return -1j * comm(h)


# ------------------------------------------------------------ Liouvillian


@dataclass(frozen=True, eq=False)
class Liouvillian:
    space: Space
    matrix: np.ndarray = field(repr=False)
    label: str = ""

    def __post_init__(self):
        m = self.matrix.toarray() if sp.issparse(self.matrix) else np.array(self.matrix, dtype=complex)
        m = m.astype(complex, copy=False)
        n = self.space.dim**2
        if m.shape != (n, n):
            raise InvalidArgument(f"Liouvillian shape {m.shape} does not match dim^2 = {n}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        """Sparse copy used by the integrators."""
        return sp.csr_matrix(self.matrix)

    def apply(self, rho) -> np.ndarray:
        r = rho.matrix if isinstance(rho, (fock.DensityMatrix, Operator)) else np.asarray(rho)
        return fock.unvec(self.matrix @ fock.vec(r), self.space.dim)

    def __add__(self, other: "Liouvillian") -> "Liouvillian":
        return Liouvillian(self.space, self.matrix + other.matrix, f"{self.label}+{other.label}")

    def __sub__(self, other: "Liouvillian") -> "Liouvillian":
        return Liouvillian(self.space, self.matrix - other.matrix, f"{self.label}-{other.label}")

    def norm(self) -> float:
        """Spectral norm of the dim^2 x dim^2 matrix."""
        return float(np.linalg.norm(self.matrix, 2))

    def trace_leak(self) -> float:
        """max |vec(I)^dag L|, zero for a trace-preserving generator."""
        left = fock.vec(np.eye(self.space.dim)).conj() @ self.matrix
        return float(np.max(np.abs(left)))


# ---------------------------------------------------------------- helpers


def _m(op: Optional[Operator], space: Space) -> np.ndarray:
    if op is None:
        return np.zeros((space.dim, space.dim), dtype=complex)
    if op.space != space:
        raise InvalidArgument("operator space does not match the generator space")
    return op.matrix


def _hermitian(op: Optional[Operator], name: str):
    if op is not None and not op.is_hermitian():
        raise InvalidArgument(f"{name} must be Hermitian (max |M - M^dag| = {op.hermiticity_error():.3g})")


def _check_bath(bath: Optional[BathParams], feedback: bool = True) -> BathParams:
    bath = bath if bath is not None else BathParams()
    if not isinstance(bath, BathParams):
        raise InvalidArgument("bath must be a BathParams")
    if feedback and bath.beta != 0:
        raise Unsupported("coherent bath amplitude is not supported by the feedback generators")
    return bath


def _source(c1: Optional[Operator], like: Operator) -> Operator:
    return c1 if c1 is not None else fock.annihilation(like.space)


def bath_terms(c: np.ndarray, bath: BathParams) -> np.ndarray:
    """(N+1)D[c] + N D[c^dag] + M/2 [c^dag,[c^dag, .]] + M*/2 [c,[c, .]]"""
    cd = c.conj().T
    out = (bath.N + 1) * lindblad(c)
    if bath.N:
        out = out + bath.N * lindblad(cd)
    if bath.M:
        out = out + 0.5 * bath.M * comm(cd) @ comm(cd) + 0.5 * np.conj(bath.M) * comm(c) @ comm(c)
    return out


# -------------------------------------------------------------- generators


def single_cavity_liouvillian(c1: Operator, gamma1: float = 1.0, bath: Optional[BathParams] = None,
                              H0: Optional[Operator] = None) -> Liouvillian:
    """Source cavity damped into a white-noise bath with coherent drive."""
    bath = _check_bath(bath, feedback=False)
    _hermitian(H0, "H0")
    c = c1.matrix
    L = gamma1 * bath_terms(c, bath)
    if bath.beta:
        L = L + np.sqrt(gamma1) * comm(np.conj(bath.beta) * c - bath.beta * c.conj().T)
    L = L + hamiltonian(_m(H0, c1.space))
    return Liouvillian(c1.space, L, "single-cavity")


def _mode_ops(space: Space) -> tuple[np.ndarray, np.ndarray]:
    if space.is_atomic or len(space.factors) != 2:
        raise InvalidArgument("cascaded generator needs a two-factor tensor space (source, driven)")
    c1 = fock.embed(fock.annihilation(space.factor(0)), space, 0).matrix
    c2 = fock.embed(fock.annihilation(space.factor(1)), space, 1).matrix
    return c1, c2


def cascaded_liouvillian(gamma1: float, gamma2: float, bath: Optional[BathParams],
                         H: Operator) -> Liouvillian:
    """Source (slot 0) driving a second cavity (slot 1) through a one-way bath."""
    bath = _check_bath(bath, feedback=False)
    _hermitian(H, "H")
    space = H.space
    c1, c2 = _mode_ops(space)
    c1d, c2d = c1.conj().T, c2.conj().T
    g12 = np.sqrt(gamma1 * gamma2)
    N, M = bath.N, bath.M

    # [c1 W, c2^dag] + [c2, W c1^dag]
    cross = sprepost(c1, c2d) - spre(c2d @ c1) + sprepost(c2, c1d) - spost(c1d @ c2)
    L = (N + 1) * (gamma1 * lindblad(c1) + gamma2 * lindblad(c2) + g12 * cross)
    if N:
        # [c1^dag W, c2] + [c2^dag, W c1]
        cross_n = sprepost(c1d, c2) - spre(c2 @ c1d) + sprepost(c2d, c1) - spost(c1 @ c2d)
        L = L + N * (gamma1 * lindblad(c1d) + gamma2 * lindblad(c2d) + g12 * cross_n)
    if M:
        C1d, C2d, C1, C2 = comm(c1d), comm(c2d), comm(c1), comm(c2)
        L = L + M * (0.5 * gamma1 * C1d @ C1d + 0.5 * gamma2 * C2d @ C2d + g12 * C2d @ C1d)
        L = L + np.conj(M) * (0.5 * gamma1 * C1 @ C1 + 0.5 * gamma2 * C2 @ C2 + g12 * C2 @ C1)
    if bath.beta:
        b = bath.beta
        L = L + np.sqrt(gamma1) * comm(np.conj(b) * c1 - b * c1d)
        L = L + np.sqrt(gamma2) * comm(np.conj(b) * c2 - b * c2d)
    L = L + hamiltonian(H.matrix)
    return Liouvillian(space, L, "cascaded")


# two-mode (all-optical) feedback couplings ---------------------------------


@dataclass(frozen=True)
class IntensityCoupling:
    """V = c2^dag c2 K."""

    K: Operator


@dataclass(frozen=True)
class QuadratureCoupling:
    """V = (c2 + c2^dag) J."""

    J: Operator


@dataclass(frozen=True)
class ComplexAmplitudeCoupling:
    """V = c2 B^dag + c2^dag B with B = -i g (c1 + mu c1^dag).

    For real ``g`` and ``mu`` this is mode conversion plus a parametric
    term of relative strength ``mu``. Passing ``B`` directly overrides
    ``g``/``mu`` and allows any source operator.
    """

    g: float = 0.0
    mu: float = 0.0
    B: Optional[Operator] = None

    def source_operator(self, space: Space) -> Operator:
        if self.B is not None:
            return self.B
        a = fock.annihilation(space)
        return -1j * self.g * (a + self.mu * a.dag())


Coupling = Union[IntensityCoupling, QuadratureCoupling, ComplexAmplitudeCoupling]


def two_mode_feedback_liouvillian(coupling: Coupling, gamma2: float, H0: Optional[Operator] = None,
                                  bath: Optional[BathParams] = None,
                                  driven_dim: int = 4) -> Liouvillian:
    """Full source + driven-cavity model; the driven mode is factor 1."""
    bath = _check_bath(bath)
    if isinstance(coupling, IntensityCoupling):
        if not bath.is_vacuum:
            raise Unsupported("intensity coupling needs a vacuum bath: photon-flux noise swamps the signal")
        src = coupling.K.space
        _hermitian(coupling.K, "K")
    elif isinstance(coupling, QuadratureCoupling):
        src = coupling.J.space
        _hermitian(coupling.J, "J")
    elif isinstance(coupling, ComplexAmplitudeCoupling):
        src = coupling.B.space if coupling.B is not None else (H0.space if H0 is not None else None)
        if src is None:
            raise InvalidArgument("ComplexAmplitudeCoupling(g, mu) needs H0 or B to fix the source space")
    else:
        raise InvalidArgument(f"unknown coupling {coupling!r}")
    _hermitian(H0, "H0")

    space = fock.tensor_space(src, fock.make_space(driven_dim))
    c2 = fock.embed(fock.annihilation(space.factor(1)), space, 1)
    if isinstance(coupling, IntensityCoupling):
        V = c2.dag() @ c2 @ fock.embed(coupling.K, space, 0)
        label = "two-mode-intensity"
    elif isinstance(coupling, QuadratureCoupling):
        V = (c2 + c2.dag()) @ fock.embed(coupling.J, space, 0)
        label = "two-mode-quadrature"
    else:
        B = fock.embed(coupling.source_operator(src), space, 0)
        V = c2 @ B.dag() + c2.dag() @ B
        label = "two-mode-complex"
    H = V if H0 is None else V + fock.embed(H0, space, 0)
    L = cascaded_liouvillian(1.0, gamma2, bath, H)
    return Liouvillian(space, L.matrix, label)


# reduced (Markovian) feedback generators --------------------------------


def intensity_feedback_liouvillian(Z: Operator, H0: Optional[Operator] = None, form: str = "lindblad",
                                   c1: Optional[Operator] = None) -> Liouvillian:
    """Direct-detection / intensity feedback.

    ``form="expanded"`` is the second-order expansion in ``Z``, which is
    not of Lindblad form; ``form="lindblad"`` uses the jump operator
    ``exp(-iZ) c1``.
    """
    _hermitian(Z, "Z")
    _hermitian(H0, "H0")
    c1 = _source(c1, Z)
    z, c = Z.matrix, c1.matrix
    if form == "expanded":
        S = sprepost(c, c.conj().T)
        CZ = comm(z)
        L = -1j * CZ @ S - 0.5 * CZ @ CZ @ S + lindblad(c)
    elif form == "lindblad":
        L = lindblad(fock.expm_hermitian(Z).matrix @ c)
    else:
        raise InvalidArgument(f"form must be 'expanded' or 'lindblad', got {form!r}")
    L = L + hamiltonian(_m(H0, Z.space))
    return Liouvillian(Z.space, L, f"intensity-{form}")


def quadrature_feedback_liouvillian(Y: Operator, H0: Optional[Operator] = None,
                                    bath: Optional[BathParams] = None,
                                    c1: Optional[Operator] = None) -> Liouvillian:
    """Homodyne / quadrature feedback with a (possibly squeezed or thermal) bath."""
    bath = _check_bath(bath)
    _hermitian(Y, "Y")
    _hermitian(H0, "H0")
    c1 = _source(c1, Y)
    y, c = Y.matrix, c1.matrix
    cd = c.conj().T
    N, M = bath.N, bath.M
    CY = comm(y)
    L = (N + 1) * (lindblad(c) - 1j * CY @ (spre(c) + spost(cd)))
    L = L + N * (lindblad(cd) + 1j * CY @ (spre(cd) + spost(c)))
    if M:
        L = L + M * (0.5 * comm(cd) @ comm(cd) + 1j * CY @ comm(cd))
        L = L + np.conj(M) * (0.5 * comm(c) @ comm(c) - 1j * CY @ comm(c))
    L = L + bath.L * lindblad(y) + hamiltonian(_m(H0, Y.space))
    return Liouvillian(Y.space, L, "quadrature-feedback")


def complex_feedback_liouvillian(A: Operator, H0: Optional[Operator] = None,
                                 bath: Optional[BathParams] = None,
                                 c1: Optional[Operator] = None) -> Liouvillian:
    """All-optical complex-amplitude feedback with effective operator ``A``."""
    bath = _check_bath(bath)
    _hermitian(H0, "H0")
    c1 = _source(c1, A)
    a, c = A.matrix, c1.matrix
    ad, cd = a.conj().T, c.conj().T
    N, M = bath.N, bath.M
    L = (N + 1) * (lindblad(c + a) + hamiltonian(0.5j * (cd @ a - ad @ c)))
    if N:
        L = L + N * (lindblad(cd + ad) + hamiltonian(0.5j * (c @ ad - a @ cd)))
    if M:
        L = L + M * (0.5 * comm(cd + ad) @ comm(cd + ad) + 1j * comm(0.5j * (cd @ ad - ad @ cd)))
        L = L + np.conj(M) * (0.5 * comm(c + a) @ comm(c + a) + 1j * comm(0.5j * (c @ a - a @ c)))
    L = L + hamiltonian(_m(H0, A.space))
    return Liouvillian(A.space, L, "complex-feedback")


def hermitian_parts(A: Operator) -> tuple[Operator, Operator]:
    """Split ``A = X - iY`` into Hermitian ``(X, Y)``."""
    return (A + A.dag()) / 2, 0.5j * (A - A.dag())


def linear_amplitude(space: Space, lam: float, mu: float) -> Operator:
    """A = (lam/2)(a + mu a^dag); mu = -1 is quadrature feedback."""
    a = fock.annihilation(space)
    return (lam / 2) * (a + mu * a.dag())


def quadrature_operator(space: Space, lam: float) -> Operator:
    """Y = -(lam/2) y, the Hermitian partner of ``linear_amplitude(lam, -1)``."""
    _, y = fock.quadratures(space)
    return -(lam / 2) * y


def mirror_loop_liouvillian(gamma: float, phi: float, space: Space) -> Liouvillian:
    """Output fed straight back into the cavity's second mirror with loop phase ``phi``."""
    if gamma <= 0:
        raise InvalidArgument("gamma must be positive")
    a = fock.annihilation(space).matrix
    L = 2 * gamma * (1 + np.cos(phi)) * lindblad(a) + hamiltonian(gamma * np.sin(phi) * (a.conj().T @ a))
    return Liouvillian(space, L, "mirror-loop")


def mirror_amplitude(gamma: float, phi: float, space: Space) -> tuple[Operator, Operator]:
    """``(c1, A)`` for which the complex-amplitude generator is the mirror loop.

    The source operator carries the rate, ``c1 = sqrt(gamma) a``, and the
    loop phase enters as ``exp(-i phi)`` so that ``phi`` has the same sign
    as in :func:`mirror_loop_liouvillian`.
    """
    a = fock.annihilation(space)
    return np.sqrt(gamma) * a, np.sqrt(gamma) * np.exp(-1j * phi) * a


def heterodyne_feedback_liouvillian(X: Operator, Y: Operator, H0: Optional[Operator] = None,
                                    bath: Optional[BathParams] = None,
                                    c1: Optional[Operator] = None, return_damping: bool = True) -> Liouvillian:
    """Heterodyne (two half-efficiency homodyne) feedback with ``H_fb = I_x Y + I_y X``.

    With ``return_damping`` (default) the bath-type terms of ``A = X - iY``
    are kept, so the result is the complex-amplitude generator for ``A``
    plus the current-noise diffusion ``2 L_x D[Y] + 2 L_y D[X]``: the mean
    field matches the all-optical loop and the φ=π mirror analog is
    ``gamma (D[a] + D[a^dag])``. Without it only the bath, linear and
    diffusion terms remain (at φ=π this leaves ``gamma D[a^dag]``).
    """
    bath = _check_bath(bath)
    _hermitian(X, "X")
    _hermitian(Y, "Y")
    _hermitian(H0, "H0")
    c1 = _source(c1, Y)
    x, y, c = X.matrix, Y.matrix, c1.matrix
    cd = c.conj().T
    N, M = bath.N, bath.M
    if bath.L_x <= 0 or bath.L_y <= 0:
        raise UnphysicalBath(f"heterodyne needs L_x, L_y > 0 (got {bath.L_x:g}, {bath.L_y:g})")
    CX, CY = comm(x), comm(y)
    L = (N + 1) * (lindblad(c) - 1j * CY @ (spre(c) + spost(cd)) - 1j * CX @ (-1j * spre(c) + 1j * spost(cd)))
    L = L + N * (lindblad(cd) + 1j * CY @ (spre(cd) + spost(c)) + 1j * CX @ (1j * spre(cd) - 1j * spost(c)))
    if M:
        L = L + M * (0.5 * comm(cd) @ comm(cd) + 1j * CY @ comm(cd) - 1j * CX @ comm(1j * cd))
        L = L + np.conj(M) * (0.5 * comm(c) @ comm(c) - 1j * CY @ comm(c) + 1j * CX @ comm(-1j * c))
    L = L + 2 * bath.L_x * lindblad(y) + 2 * bath.L_y * lindblad(x) + hamiltonian(_m(H0, Y.space))
    if return_damping:
        L = L + bath_terms(x - 1j * y, bath)
    return Liouvillian(Y.space, L, "heterodyne-feedback")


# ------------------------------------------------------- Lindblad-form check


def gell_mann_basis(d: int) -> np.ndarray:
    """Orthonormal Hermitian basis of d x d matrices, shape (d*d, d, d).

    Element 0 is I/sqrt(d); then the symmetric pairs (j<k, row-major order),
    the antisymmetric pairs in the same order, and finally the d-1 diagonal
    generators. Tr[F_a F_b] = delta_ab.
    """
    basis = [np.eye(d, dtype=complex) / np.sqrt(d)]
    pairs = [(j, k) for j in range(d) for k in range(j + 1, d)]
    for j, k in pairs:
        m = np.zeros((d, d), dtype=complex)
        m[j, k] = m[k, j] = 1 / np.sqrt(2)
        basis.append(m)
    for j, k in pairs:
        m = np.zeros((d, d), dtype=complex)
        m[j, k] = -1j / np.sqrt(2)
        m[k, j] = 1j / np.sqrt(2)
        basis.append(m)
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1
        diag[l] = -l
        basis.append(np.diag(diag / np.sqrt(l * (l + 1))).astype(complex))
    return np.array(basis)


def process_coefficients(L: Liouvillian) -> np.ndarray:
    """Matrix ``c`` with L(rho) = sum_ab c_ab F_a rho F_b^dag over the Gell-Mann basis."""
    d = L.space.dim
    F = gell_mann_basis(d)
    phi = F.reshape(d * d, d * d).T  # column a = row-major flattening of F_a
    # S[(k,i),(l,j)] = sum c_ab F_b*[k,l] F_a[i,j]; reshuffle to rows (i,j), cols (k,l)
    R = L.matrix.reshape(d, d, d, d).transpose(1, 3, 0, 2).reshape(d * d, d * d)
    return phi.conj().T @ R @ phi


@dataclass(frozen=True)
class LindbladCheck:
    valid: bool
    min_kossakowski_eigenvalue: float
    kossakowski: np.ndarray = field(repr=False)
    hamiltonian: np.ndarray = field(repr=False)


def lindblad_form_check(L: Liouvillian, policy: NumericPolicy = DEFAULT_POLICY) -> LindbladCheck:
    """Decompose ``L`` as -i[H, .] + sum K_ab (F_a . F_b^dag - {F_b^dag F_a, .}/2).

    ``valid`` is True when the Kossakowski matrix ``K`` is positive
    semidefinite to ``policy.kossakowski``.
    """
    scale = max(1.0, float(np.max(np.abs(L.matrix))))
    if L.trace_leak() > policy.validation * scale:
        raise MalformedGenerator(f"generator is not trace preserving (leak {L.trace_leak():.3g})")
    c = process_coefficients(L)
    if np.max(np.abs(c - c.conj().T)) > policy.validation * scale:
        raise MalformedGenerator("generator does not preserve Hermiticity")
    c = (c + c.conj().T) / 2
    d = L.space.dim
    K = c[1:, 1:]
    mineig = float(np.min(np.linalg.eigvalsh(K)))
    F = gell_mann_basis(d)
    G = c[0, 0] / (2 * d) * np.eye(d) + np.einsum("a,aij->ij", c[1:, 0], F[1:]) / np.sqrt(d)
    H = (G - G.conj().T) / 2j
    return LindbladCheck(mineig >= -policy.kossakowski, mineig, K, H)

"""Truncated Fock-space linear algebra.

Operators are dense complex matrices tagged with the :class:`Space` they act
on. Superoperators use column-major vectorisation,

    vec(rho)[i + d*j] = rho[i, j],      vec(A rho B) = (B^T kron A) vec(rho),

and every module in the package goes through :func:`vec` / :func:`unvec` so
the convention lives in one place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .errors import InvalidArgument, UnphysicalBath
from .policy import DEFAULT_POLICY


def _frozen(m: np.ndarray) -> np.ndarray:
    m = np.array(m, dtype=complex)
    m.flags.writeable = False
    return m


# ---------------------------------------------------------------- spaces


@dataclass(frozen=True)
class Space:
    dim: int
    factors: tuple[int, ...] = ()

    def __post_init__(self):
        if self.dim < 2:
            raise InvalidArgument(f"space dimension must be >= 2, got {self.dim}")
        if self.factors and int(np.prod(self.factors)) != self.dim:
            raise InvalidArgument(f"factor dims {self.factors} do not multiply to {self.dim}")

    @property
    def is_atomic(self) -> bool:
        return not self.factors

    def factor(self, slot: int) -> "Space":
        if self.is_atomic:
            raise InvalidArgument("atomic space has no factors")
        return Space(self.factors[slot])


def make_space(dim: int) -> Space:
    if int(dim) != dim or dim < 2:
        raise InvalidArgument(f"Fock truncation must be an integer >= 2, got {dim!r}")
    return Space(int(dim))


def tensor_space(*spaces: Space) -> Space:
    dims = []
    for s in spaces:
        dims.extend(s.factors or (s.dim,))
    return Space(int(np.prod(dims)), tuple(dims))


# ------------------------------------------------------------- operators


@dataclass(frozen=True, eq=False)
class Operator:
    space: Space
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (self.space.dim, self.space.dim):
            raise InvalidArgument(f"matrix shape {m.shape} does not match space dim {self.space.dim}")
        object.__setattr__(self, "matrix", m)

    # algebra ----------------------------------------------------------
    def _other(self, other):
        if isinstance(other, Operator):
            if other.space != self.space:
                raise InvalidArgument("operators live on different spaces")
            return other.matrix
        return None

    def __add__(self, other):
        m = self._other(other)
        if m is None:
            return Operator(self.space, self.matrix + other * np.eye(self.space.dim))
        return Operator(self.space, self.matrix + m)

    __radd__ = __add__

    def __neg__(self):
        return Operator(self.space, -self.matrix)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, scalar):
        if isinstance(scalar, Operator):
            return self @ scalar
        return Operator(self.space, scalar * self.matrix)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Operator(self.space, self.matrix / scalar)

    def __matmul__(self, other):
        m = self._other(other)
        if m is None:
            return NotImplemented
        return Operator(self.space, self.matrix @ m)

    def __pow__(self, k: int):
        return Operator(self.space, np.linalg.matrix_power(self.matrix, k))

    def dag(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def is_hermitian(self, tol: float = DEFAULT_POLICY.algebraic) -> bool:
        return self.hermiticity_error() <= tol * max(1.0, float(np.max(np.abs(self.matrix))))

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


def identity(space: Space) -> Operator:
    return Operator(space, np.eye(space.dim))


def zero(space: Space) -> Operator:
    return Operator(space, np.zeros((space.dim, space.dim)))


def _require_atomic(space: Space):
    if not space.is_atomic:
        raise InvalidArgument("ladder operators on a tensor space must be built with embed()")


def annihilation(space: Space) -> Operator:
    _require_atomic(space)
    return Operator(space, np.diag(np.sqrt(np.arange(1, space.dim)), 1))


def creation(space: Space) -> Operator:
    return annihilation(space).dag()


def number(space: Space) -> Operator:
    _require_atomic(space)
    return Operator(space, np.diag(np.arange(space.dim, dtype=float)))


def quadratures(space: Space) -> tuple[Operator, Operator]:
    """Return ``(x, y) = (a + a^dag, -i a + i a^dag)``; vacuum variance 1."""
    a = annihilation(space)
    return a + a.dag(), -1j * a + 1j * a.dag()


def embed(op: Operator, target: Space, slot: int) -> Operator:
    if target.is_atomic:
        raise InvalidArgument("embed target must be a tensor space")
    if not 0 <= slot < len(target.factors):
        raise InvalidArgument(f"slot {slot} out of range for {len(target.factors)} factors")
    if op.space.dim != target.factors[slot] or not op.space.is_atomic:
        raise InvalidArgument(
            f"operator dim {op.space.dim} does not match factor {slot} (dim {target.factors[slot]})"
        )
    mats = [np.eye(d) for d in target.factors]
    mats[slot] = op.matrix
    return Operator(target, reduce(np.kron, mats))


def expm_hermitian(h: Operator, scale: complex = -1j) -> Operator:
    """exp(scale * h) for Hermitian ``h`` via eigendecomposition."""
    if not h.is_hermitian():
        raise InvalidArgument("expm_hermitian needs a Hermitian operator")
    w, v = np.linalg.eigh(h.matrix)
    return Operator(h.space, (v * np.exp(scale * w)) @ v.conj().T)


# --------------------------------------------------------- density matrix


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    space: Space
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (self.space.dim, self.space.dim):
            raise InvalidArgument(f"matrix shape {m.shape} does not match space dim {self.space.dim}")
        object.__setattr__(self, "matrix", m)

    def violations(self) -> dict:
        m = self.matrix
        herm = float(np.max(np.abs(m - m.conj().T)))
        mineig = float(np.min(np.linalg.eigvalsh((m + m.conj().T) / 2)))
        return {
            "trace": float(abs(np.trace(m) - 1.0)),
            "hermiticity": herm,
            "negativity": max(0.0, -mineig),
        }

    def check(self, tol: float = DEFAULT_POLICY.validation) -> "DensityMatrix":
        bad = {k: v for k, v in self.violations().items() if v > tol}
        if bad:
            raise InvalidArgument(f"not a valid density matrix (tol {tol:g}): {bad}")
        return self

    def hermitized(self) -> "DensityMatrix":
        m = (self.matrix + self.matrix.conj().T) / 2
        return DensityMatrix(self.space, m / np.trace(m).real)


def pure_state(space: Space, ket: Sequence[complex]) -> DensityMatrix:
    psi = np.asarray(ket, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return DensityMatrix(space, np.outer(psi, psi.conj()))


def fock_ket(space: Space, n: int) -> np.ndarray:
    if not 0 <= n < space.dim:
        raise InvalidArgument(f"Fock level {n} outside truncation {space.dim}")
    psi = np.zeros(space.dim, dtype=complex)
    psi[n] = 1.0
    return psi


def fock_state(space: Space, n: int) -> DensityMatrix:
    return pure_state(space, fock_ket(space, n))


def coherent_ket(space: Space, alpha: complex) -> np.ndarray:
    """Truncated coherent state, renormalised inside the truncation."""
    _require_atomic(space)
    n = np.arange(space.dim)
    logfact = np.array([0.0] + list(np.cumsum(np.log(np.arange(1, space.dim)))))
    if alpha == 0:
        return fock_ket(space, 0)
    amp = np.exp(n * np.log(complex(alpha)) - 0.5 * logfact - 0.5 * abs(alpha) ** 2)
    return amp / np.linalg.norm(amp)


def coherent_state(space: Space, alpha: complex) -> DensityMatrix:
    return pure_state(space, coherent_ket(space, alpha))


def thermal_state(space: Space, nbar: float) -> DensityMatrix:
    _require_atomic(space)
    if nbar < 0:
        raise InvalidArgument("thermal occupancy must be >= 0")
    if nbar == 0:
        return fock_state(space, 0)
    p = (nbar / (1 + nbar)) ** np.arange(space.dim)
    return DensityMatrix(space, np.diag(p / p.sum()))


def partial_trace(rho: DensityMatrix | np.ndarray, space: Space, keep: int) -> np.ndarray:
    """Reduced matrix on factor ``keep`` of a two-or-more factor space."""
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    dims = space.factors
    k = len(dims)
    t = m.reshape(dims + dims)
    letters = "abcdefghijklmnop"
    row = list(letters[:k])
    col = list(letters[k : 2 * k])
    for i in range(k):
        if i != keep:
            col[i] = row[i]
    subs = "".join(row) + "".join(col) + "->" + row[keep] + col[keep]
    return np.einsum(subs, t)


def trace_distance(r1: np.ndarray, r2: np.ndarray) -> float:
    d = np.asarray(r1) - np.asarray(r2)
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh((d + d.conj().T) / 2))))


def top_population(rho: np.ndarray, space: Space, levels: int = 2) -> float:
    """Largest population on the top ``levels`` Fock levels of any factor."""
    m = np.asarray(rho)
    dims = space.factors or (space.dim,)
    worst = 0.0
    for slot in range(len(dims)):
        r = m if len(dims) == 1 else partial_trace(m, space, slot)
        worst = max(worst, float(np.sum(np.real(np.diag(r))[-levels:])))
    return worst


# ------------------------------------------------------------ expectations


def _mat(x) -> np.ndarray:
    return x.matrix if isinstance(x, (Operator, DensityMatrix)) else np.asarray(x)


def _same_space(op, rho):
    if isinstance(op, Operator) and isinstance(rho, (Operator, DensityMatrix)) and op.space != rho.space:
        raise InvalidArgument("operator and state live on different spaces")


def expect(op, rho) -> complex:
    _same_space(op, rho)
    return complex(np.trace(_mat(op) @ _mat(rho)))


def variance(op, rho) -> float:
    _same_space(op, rho)
    if isinstance(op, Operator) and not op.is_hermitian():
        raise InvalidArgument("variance requires a Hermitian operator")
    m = _mat(op)
    r = _mat(rho)
    mean = np.trace(m @ r)
    return float((np.trace(m @ m @ r) - mean**2).real)


# ---------------------------------------------------- superoperator actions


def dissipator_apply(c, rho) -> np.ndarray:
    """c rho c^dag - (c^dag c rho + rho c^dag c)/2."""
    _same_space(c, rho)
    cm, r = _mat(c), _mat(rho)
    cdc = cm.conj().T @ cm
    return cm @ r @ cm.conj().T - 0.5 * (cdc @ r + r @ cdc)


def h_superop_apply(c, rho) -> np.ndarray:
    """Measurement innovation c rho + rho c^dag - Tr[c rho + rho c^dag] rho."""
    _same_space(c, rho)
    cm, r = _mat(c), _mat(rho)
    s = cm @ r + r @ cm.conj().T
    return s - np.trace(s) * r


# ---------------------------------------------------------- vectorisation


def vec(m: np.ndarray) -> np.ndarray:
    return np.asarray(m).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape(dim, dim, order="F")


# ----------------------------------------------------------------- bath


@dataclass(frozen=True)
class BathParams:
    """White-noise input: occupancy ``N``, squeezing ``M``, coherent amplitude ``beta``."""

    N: float = 0.0
    M: complex = 0.0
    beta: complex = 0.0

    def __post_init__(self):
        object.__setattr__(self, "N", float(self.N))
        object.__setattr__(self, "M", complex(self.M))
        object.__setattr__(self, "beta", complex(self.beta))
        if self.N < 0:
            raise UnphysicalBath(f"N must be >= 0, got {self.N}")
        excess = abs(self.M) ** 2 - self.N * (self.N + 1)
        if excess > DEFAULT_POLICY.algebraic * max(1.0, self.N * (self.N + 1)):
            raise UnphysicalBath(
                f"|M|^2 = {abs(self.M) ** 2:.6g} exceeds N(N+1) = {self.N * (self.N + 1):.6g}"
            )

    @classmethod
    def vacuum(cls) -> "BathParams":
        return cls()

    @classmethod
    def squeezed(cls, N: float, phase: float = 0.0) -> "BathParams":
        """Minimum-uncertainty squeezed bath, |M| = sqrt(N(N+1))."""
        return cls(N, np.sqrt(N * (N + 1)) * np.exp(1j * phase))

    @property
    def is_vacuum(self) -> bool:
        return self.N == 0 and self.M == 0 and self.beta == 0

    @property
    def is_classical(self) -> bool:
        return abs(self.M) <= self.N

    @property
    def L(self) -> float:
        """Homodyne noise weight 2N + 1 + M + M*; below one for squeezed input."""
        return 2 * self.N + 1 + 2 * self.M.real

    @property
    def L_x(self) -> float:
        return self.L

    @property
    def L_y(self) -> float:
        return 2 * self.N + 1 - 2 * self.M.real

"""Linear quadrature dynamics for feedback with ``A = (lam/2)(c1 + mu c1^dag)``.

Each quadrature q obeys ``dq/dt = -drift*q - gain*nu_q`` with vacuum noise
``nu_q`` and the reflected control beam has quadrature
``q3 = out_sys*q + out_noise*nu_q``. ``mu = -1`` is plain quadrature
feedback; the y-row is the x-row with ``mu -> -mu``.

Spectra are normalised so that the vacuum gives 1. A loop delay ``tau``
enters only through ``lam -> lam exp(i omega tau)`` and is defined for
``mu = -1`` only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class QuadratureRow:
    drift: float
    input_gain: float
    output_system: float
    output_noise: float


@dataclass(frozen=True)
class LinearQuadratureModel:
    lam: float
    mu: float
    tau: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidArgument("lambda must be >= 0")
        if self.tau < 0:
            raise InvalidArgument("tau must be >= 0")
        if self.tau > 0 and self.mu != -1:
            raise InvalidArgument("a loop delay is only modelled for quadrature feedback (mu = -1)")

    @staticmethod
    def _row(lam, mu: float) -> QuadratureRow:
        h = lam / 2
        return QuadratureRow(
            drift=0.5 * (1 + lam * (1 - mu) + h**2 * (1 - mu**2)),
            input_gain=1 + h * (1 - mu),
            output_system=-(1 + h * (1 + mu)),
            output_noise=-1.0,
        )

    @property
    def x(self) -> QuadratureRow:
        return self._row(self.lam, self.mu)

    @property
    def y(self) -> QuadratureRow:
        return self._row(self.lam, -self.mu)

    def row(self, q: str) -> QuadratureRow:
        if q not in ("x", "y"):
            raise InvalidArgument(f"quadrature must be 'x' or 'y', got {q!r}")
        return self.x if q == "x" else self.y

    def coefficients(self, q: str, omega: float) -> tuple[complex, complex, complex, complex]:
        """(drift, gain, out_sys, out_noise) at frequency ``omega`` including the delay.

        With a delay the source field reaches the driven cavity a time tau
        late, so the feedback drift and gain, and the pass-through part of
        the output, carry exp(i omega tau); the feedback's own contribution
        to the output does not.
        """
        if self.tau == 0:
            r = self.row(q)
            return r.drift, r.input_gain, r.output_system, r.output_noise
        p = np.exp(1j * omega * self.tau)
        if q == "x":
            return 0.5 + self.lam * p, 1 + self.lam * p, -p, -p
        return 0.5, 1.0, -(p + self.lam), -p


def build_linear_model(lam: float, mu: float = -1.0, tau: float = 0.0) -> LinearQuadratureModel:
    return LinearQuadratureModel(float(lam), float(mu), float(tau))


def _vx(lam: float, mu: float) -> float:
    h = lam / 2
    return (1 + lam * (1 - mu) + h**2 * (1 - mu) ** 2) / (1 + lam * (1 - mu) + h**2 * (1 - mu**2))


def steady_variance_analytic(lam: float, mu: float = -1.0) -> tuple[float, float]:
    """Intracavity steady-state (V(x), V(y)); mu = -1 gives (1+lam)^2/(1+2 lam) and 1."""
    if lam < 0:
        raise InvalidArgument("lambda must be >= 0")
    return _vx(lam, mu), _vx(lam, -mu)


def model_steady_variance(model: LinearQuadratureModel) -> tuple[float, float]:
    """Same quantity from the model's drift and gain, gain^2 / (2 drift)."""
    return tuple(r.input_gain**2 / (2 * r.drift) for r in (model.x, model.y))


@dataclass(frozen=True)
class Spectrum:
    omegas: np.ndarray
    Sx: np.ndarray
    Sy: np.ndarray


def output_spectrum(model: LinearQuadratureModel, omegas) -> Spectrum:
    """Closed-form squeezing spectra of the reflected control beam."""
    w = np.asarray(omegas, dtype=float)
    if not np.all(np.isfinite(w)):
        raise InvalidArgument("frequency grid must be finite")
    lam, mu = model.lam, model.mu
    if model.tau > 0:
        sx = (0.25 + w**2) / np.abs(0.5 + lam * np.exp(1j * w * model.tau) - 1j * w) ** 2
        return Spectrum(w, sx, 1 / sx)
    sigma = 1 + lam + (lam / 2) ** 2 * (1 - mu**2)

    def s(m):
        return (0.25 * (sigma + lam * m) ** 2 + w**2) / (0.25 * (sigma - lam * m) ** 2 + w**2)

    return Spectrum(w, s(mu), s(-mu))


def quadrature_spectrum_closed_form(lam: float, omegas, tau: float = 0.0) -> Spectrum:
    """(1/4 + w^2) / |1/2 + lam e^{i w tau} - i w|^2 and its reciprocal."""
    return output_spectrum(LinearQuadratureModel(lam, -1.0, tau), omegas)


def transfer_function_spectrum(model: LinearQuadratureModel, omegas) -> Spectrum:
    """Spectra from |C (-i w - A)^-1 B + D|^2 with A = -drift, B = -gain."""
    w = np.asarray(omegas, dtype=float)
    out = {}
    for q in ("x", "y"):
        vals = np.empty(w.shape)
        for i, om in enumerate(w.flat):
            k, g, c, d = model.coefficients(q, om)
            h = c * (-g) / (-1j * om + k) + d
            vals.flat[i] = abs(h) ** 2
        out[q] = vals
    return Spectrum(w, out["x"], out["y"])


def inloop_commutator_factor(lam: float, omega, tau: float = 0.0):
    """Ratio of the in-loop [x2, y2] commutator to its free-field value."""
    if lam < 0:
        raise InvalidArgument("lambda must be >= 0")
    w = np.asarray(omega, dtype=float)
    f = (0.25 + w**2) / (0.25 + w**2 + lam * np.exp(1j * w * tau) * (0.5 + 1j * w))
    return complex(f) if f.ndim == 0 else f


def pfunction_diffusion_matrix(lam: float, mu: float) -> np.ndarray:
    """Diffusion matrix of D[A] in the P representation, quadrature coordinates.

    For A = p a + q a^dag the normally ordered correspondences give the
    second-order part q^2 d_a d_a* - (pq/2)(d_a^2 + d_a*^2). Rewritten in
    x = a + a*, y = -i(a - a*) it is ``grad^T D grad`` with D returned here,
    which is (lam^2/4) diag(mu^2 - mu, mu^2 + mu).
    """
    p, q = lam / 2, lam * mu / 2
    dc = np.array([[-0.5 * p * q, 0.5 * q * q], [0.5 * q * q, -0.5 * p * q]], dtype=complex)
    jac = np.array([[1, -1j], [1, 1j]])  # (d_a, d_a*) = jac @ (d_x, d_y)
    return np.real_if_close(jac.T @ dc @ jac).real


def pfunction_diffusion_eigenvalues(lam: float, mu: float, tol: float = 1e-12) -> tuple[float, float, bool]:
    """(e_plus, e_minus, nonclassical) for A = (lam/2)(c1 + mu c1^dag), real mu."""
    if lam < 0:
        raise InvalidArgument("lambda must be >= 0")
    ev = np.linalg.eigvalsh(pfunction_diffusion_matrix(lam, mu))
    return float(ev[1]), float(ev[0]), bool(ev[0] < -tol)

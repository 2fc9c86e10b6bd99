"""Deterministic propagation, steady states and variance growth."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np
import scipy.linalg as la

from . import fock
from .errors import InvalidArgument, NoUniqueSteadyState, StateInvariantError
from .fock import DensityMatrix, Operator
from .generators import Liouvillian
from .policy import DEFAULT_POLICY, NumericPolicy


@dataclass
class EvolutionResult:
    times: np.ndarray
    states: list  # DensityMatrix per output time (Hermitised)
    observables: dict = field(default_factory=dict)  # name -> complex array over times
    boundary_leakage: float = 0.0
    trace_drift: float = 0.0
    policy: NumericPolicy = DEFAULT_POLICY

    @property
    def reliable(self) -> bool:
        return self.boundary_leakage <= self.policy.leakage

    def expect(self, op: Operator) -> np.ndarray:
        return np.array([fock.expect(op, s) for s in self.states])

    def variance(self, op: Operator) -> np.ndarray:
        return np.array([fock.variance(op, s) for s in self.states])


def rk4_step(L, v: np.ndarray, dt: float) -> np.ndarray:
    k1 = L @ v
    k2 = L @ (v + 0.5 * dt * k1)
    k3 = L @ (v + 0.5 * dt * k2)
    k4 = L @ (v + dt * k3)
    return v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def propagate(L: Liouvillian, rho0: DensityMatrix, t_final: float, dt: float = 1e-3, stride: int = 10,
              observables: Optional[Mapping[str, Operator]] = None,
              policy: NumericPolicy = DEFAULT_POLICY) -> EvolutionResult:
    """Fixed-step RK4 of d vec(rho)/dt = L vec(rho).

    States are recorded every ``stride`` steps and at ``t_final``. The trace
    is never renormalised during the run; its drift is reported instead.
    Raises StateInvariantError once a recorded state leaves ``policy.abort``.
    """
    if dt <= 0 or t_final < 0:
        raise InvalidArgument("need dt > 0 and t_final >= 0")
    if stride < 1:
        raise InvalidArgument("stride must be >= 1")
    if rho0.space != L.space:
        raise InvalidArgument("initial state and generator live on different spaces")
    rho0.check(policy.validation)
    n_steps = int(round(t_final / dt))
    if abs(n_steps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise InvalidArgument(f"t_final={t_final} is not a whole number of steps of dt={dt}")
    d = L.space.dim
    A = L.csr
    obs = dict(observables or {})

    v = fock.vec(rho0.matrix).astype(complex)
    times, states, drift, leak = [], [], 0.0, 0.0

    def record(step: int):
        nonlocal drift, leak
        m = fock.unvec(v, d)
        tr = np.trace(m)
        herm = float(np.max(np.abs(m - m.conj().T)))
        mineig = float(np.min(np.linalg.eigvalsh((m + m.conj().T) / 2)))
        drift = max(drift, abs(tr - 1.0))
        if abs(tr - 1.0) > policy.abort or herm > policy.abort or mineig < -policy.abort:
            raise StateInvariantError(
                f"state invalid at t={step * dt:.6g}: |tr-1|={abs(tr - 1):.3g}, "
                f"hermiticity {herm:.3g}, min eigenvalue {mineig:.3g}",
                step=step,
            )
        leak = max(leak, fock.top_population(m, L.space))
        times.append(step * dt)
        states.append(DensityMatrix(L.space, m).hermitized())

    record(0)
    for step in range(1, n_steps + 1):
        v = rk4_step(A, v, dt)
        if step % stride == 0 or step == n_steps:
            record(step)

    result = EvolutionResult(np.array(times), states, {}, leak, drift, policy)
    for name, op in obs.items():
        result.observables[name] = result.expect(op)
    return result


def steady_state(L: Liouvillian, policy: NumericPolicy = DEFAULT_POLICY) -> DensityMatrix:
    """Null vector of ``L`` from a dense SVD."""
    d = L.space.dim
    _, s, vh = la.svd(L.matrix)
    if s.size < 2 or s[-2] <= policy.singular_gap:
        raise NoUniqueSteadyState(
            f"generator has no unique stationary state (two smallest singular values "
            f"{s[-2] if s.size > 1 else s[-1]:.3g}, {s[-1]:.3g})"
        )
    m = fock.unvec(vh[-1].conj(), d)
    tr = np.trace(m)
    if abs(tr) < policy.validation:
        raise NoUniqueSteadyState("null vector is traceless; generator is not trace preserving")
    return DensityMatrix(L.space, m / tr).hermitized()


def residual(L: Liouvillian, rho: DensityMatrix) -> float:
    return float(np.linalg.norm(L.matrix @ fock.vec(rho.matrix)))


@dataclass(frozen=True)
class GrowthFit:
    slope: float
    intercept: float
    r2: float

    @property
    def linear(self) -> bool:
        return self.r2 >= 0.99


def _fit(t: np.ndarray, v: np.ndarray) -> GrowthFit:
    slope, intercept = np.polyfit(t, v, 1)
    resid = v - (slope * t + intercept)
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    # a flat line is a perfect (zero-slope) fit
    r2 = 1.0 if ss_tot <= 1e-24 * max(1.0, float(np.sum(v**2))) else 1.0 - ss_res / ss_tot
    return GrowthFit(float(slope), float(intercept), r2)


def variance_growth_rate(L: Liouvillian, rho0: DensityMatrix, window: tuple[float, float],
                         dt: float = 1e-3, stride: int = 10) -> dict[str, GrowthFit]:
    """Least-squares slope of V(x)(t) and V(y)(t) over ``window``."""
    t0, t1 = window
    if not 0 <= t0 < t1:
        raise InvalidArgument("window must satisfy 0 <= t0 < t1")
    res = propagate(L, rho0, t1, dt, stride)
    x, y = fock.quadratures(L.space)
    sel = res.times >= t0 - 1e-12
    t = res.times[sel]
    return {q: _fit(t, res.variance(op)[sel]) for q, op in (("x", x), ("y", y))}

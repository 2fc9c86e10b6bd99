"""Quantum trajectories with feedback and their ensemble statistics.

Three unravelings are provided:

* ``jump``: direct photodetection; every detection is followed by the
  unitary ``exp(-iZ)`` (state vectors, vacuum bath).
* ``homodyne``: one diffusive channel; the current drives ``exp(-i I Y dt)``
  applied after the measurement update of the same step.
* ``heterodyne``: two half-efficiency channels driving
  ``exp(-i (I_x Y + I_y X) dt)``.

Diffusive schemes evolve density matrices with a first-order Kraus-form
step, ``rho -> M rho M^dag + dt sum_k L_k rho L_k^dag`` followed by
renormalisation, where ``M = 1 - (iH + 1/2 sum L^dag L) dt + C dy``. To
first order it is the Euler-Maruyama step of the conditional master
equation, but it keeps the conditioned state positive.

Random numbers: trajectory ``i`` of a run with base seed ``s`` draws noise
channel ``k`` from ``Philox(SeedSequence(s, spawn_key=(i, k)))``, in blocks
of ``NOISE_BLOCK`` steps. Trajectories are processed in fixed groups of
``GROUP_SIZE`` and reduced in index order, so results are bit-identical for
any thread count.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import fock
from .errors import InvalidArgument, StateInvariantError, StepTooLarge, UnphysicalBath
from .fock import BathParams, DensityMatrix, Operator
from .generators import (
    Liouvillian,
    bath_terms,
    comm,
    hamiltonian,
    heterodyne_feedback_liouvillian,
    intensity_feedback_liouvillian,
    lindblad,
    quadrature_feedback_liouvillian,
    spost,
    spre,
)
from .policy import DEFAULT_POLICY, NumericPolicy

NOISE_BLOCK = 512
GROUP_SIZE = 50
SCHEMES = ("jump", "homodyne", "heterodyne")
OBSERVABLES = ("x", "y", "n", "x2", "y2")


def trajectory_rng(base_seed: int, index: int, channel: int) -> np.random.Generator:
    """Counter-based stream for one noise channel of one trajectory."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(index), int(channel)))
    return np.random.Generator(np.random.Philox(ss))


# ------------------------------------------------------------ innovations


@dataclass(frozen=True)
class Channel:
    """A measured output quadrature: innovation operator and current noise weight."""

    name: str
    gamma: Operator  # innovation operator
    weight: float  # L (homodyne) or 2 L_q (heterodyne)
    quadrature: Operator  # deterministic part of the current is <quadrature>


def _coeffs(N: float, M: complex, printed: bool) -> tuple[complex, complex, complex, complex]:
    m, ms = (np.conj(M), M) if not printed else (M, np.conj(M))
    return N + m + 1, N + ms, N - m + 1, N - ms


def innovation_channels(c1: Operator, bath: BathParams, scheme: str, printed: bool = False) -> list[Channel]:
    """Measured channels of the homodyne or heterodyne unraveling.

    ``printed=True`` swaps M and M* in the innovation operators. That
    variant does not average to the bath generator when M is complex; it is
    kept only so that the mismatch can be demonstrated.
    """
    c = c1
    cd = c1.dag()
    ax, bx, ay, by = _coeffs(bath.N, bath.M, printed)
    gx = ax * c - bx * cd
    qx = c + cd
    if scheme == "homodyne":
        if bath.L <= 0:
            raise UnphysicalBath(f"homodyne needs L > 0 (got {bath.L:g})")
        return [Channel("x", gx, bath.L, qx)]
    if scheme == "heterodyne":
        if bath.L_x <= 0 or bath.L_y <= 0:
            raise UnphysicalBath(f"heterodyne needs L_x, L_y > 0 (got {bath.L_x:g}, {bath.L_y:g})")
        gy = ay * (-1j * c) - by * (1j * cd)
        qy = -1j * c + 1j * cd
        return [Channel("x", gx, 2 * bath.L_x, qx), Channel("y", gy, 2 * bath.L_y, qy)]
    raise InvalidArgument(f"no diffusive channels for scheme {scheme!r}")


def averaged_generator(c1: Operator, feedback: Sequence[Operator], channels: Sequence[Channel],
                       bath: BathParams, H0: Optional[Operator] = None) -> Liouvillian:
    """Ensemble-averaged generator of a diffusive feedback unraveling.

    Channel ``q`` with feedback operator ``F_q`` contributes
    ``-i[F_q, G_q rho + rho G_q^dag] + w_q D[F_q]`` on top of the bath terms.
    """
    space = c1.space
    L = bath_terms(c1.matrix, bath)
    for F, ch in zip(feedback, channels):
        g = ch.gamma.matrix
        CF = comm(F.matrix)
        L = L - 1j * CF @ (spre(g) + spost(g.conj().T)) + ch.weight * lindblad(F.matrix)
    if H0 is not None:
        L = L + hamiltonian(H0.matrix)
    return Liouvillian(space, L, "averaged-unraveling")


def _kossakowski_ops(basis: Sequence[np.ndarray], K: np.ndarray, tol: float = 1e-13) -> list[np.ndarray]:
    """Lindblad operators for sum_ij K_ij (F_i rho F_j^dag - 1/2 {F_j^dag F_i, rho})."""
    w, U = np.linalg.eigh((K + K.conj().T) / 2)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w.min() < -1e-9 * scale:
        raise UnphysicalBath(f"unmeasured part of the bath is not completely positive (eigenvalue {w.min():.3g})")
    ops = []
    for lam, u in zip(w, U.T):
        if lam > tol * scale:
            ops.append(np.sqrt(lam) * sum(ui * F for ui, F in zip(u, basis)))
    return ops


def _bath_matrix(bath: BathParams) -> np.ndarray:
    return np.array([[bath.N + 1, -np.conj(bath.M)], [-bath.M, bath.N]], dtype=complex)


# ----------------------------------------------------------------- config


@dataclass(frozen=True)
class TrajectoryConfig:
    scheme: str
    c1: Operator
    initial: object  # DensityMatrix, or a ket (array) for the jump scheme
    t_final: float
    dt: float = 1e-4
    stride: int = 100
    H0: Optional[Operator] = None
    Z: Optional[Operator] = None
    Y: Optional[Operator] = None
    X: Optional[Operator] = None
    bath: BathParams = field(default_factory=BathParams)
    return_damping: bool = True
    policy: NumericPolicy = DEFAULT_POLICY

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise InvalidArgument(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not self.c1.space.is_atomic:
            raise InvalidArgument("trajectories need a single-mode source space")
        if self.dt <= 0 or self.t_final < 0 or self.stride < 1:
            raise InvalidArgument("need dt > 0, t_final >= 0 and stride >= 1")
        n = int(round(self.t_final / self.dt))
        if abs(n * self.dt - self.t_final) > 1e-9 * max(1.0, self.t_final):
            raise InvalidArgument(f"t_final={self.t_final} is not a whole number of steps of dt={self.dt}")
        for name in ("H0", "Z", "Y", "X"):
            op = getattr(self, name)
            if op is None:
                continue
            if op.space != self.c1.space:
                raise InvalidArgument(f"{name} lives on a different space from c1")
            if not op.is_hermitian():
                raise InvalidArgument(f"{name} must be Hermitian")
        if self.scheme == "jump" and not self.bath.is_vacuum:
            raise InvalidArgument("the jump unraveling supports the vacuum bath only")
        if self.bath.beta != 0:
            raise InvalidArgument("coherent bath amplitude is not supported by the trajectories")
        if self.scheme != "jump":
            innovation_channels(self.c1, self.bath, self.scheme)

    @property
    def space(self):
        return self.c1.space

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def output_steps(self) -> np.ndarray:
        n = self.n_steps
        steps = list(range(0, n + 1, self.stride))
        if steps[-1] != n:
            steps.append(n)
        return np.array(steps)

    def generator(self) -> Liouvillian:
        """Master equation the ensemble average should follow."""
        sp = self.space
        if self.scheme == "jump":
            Z = self.Z if self.Z is not None else fock.zero(sp)
            return intensity_feedback_liouvillian(Z, self.H0, "lindblad", self.c1)
        Y = self.Y if self.Y is not None else fock.zero(sp)
        if self.scheme == "homodyne":
            return quadrature_feedback_liouvillian(Y, self.H0, self.bath, self.c1)
        X = self.X if self.X is not None else fock.zero(sp)
        return heterodyne_feedback_liouvillian(X, Y, self.H0, self.bath, self.c1, self.return_damping)

    def initial_density(self) -> DensityMatrix:
        if isinstance(self.initial, DensityMatrix):
            return self.initial
        psi = np.asarray(self.initial, dtype=complex)
        return DensityMatrix(self.space, np.outer(psi, psi.conj()))

    def initial_ket(self) -> np.ndarray:
        if isinstance(self.initial, DensityMatrix):
            w, v = np.linalg.eigh(self.initial.matrix)
            if abs(w[-1] - 1) > self.policy.validation:
                raise InvalidArgument("the jump unraveling needs a pure initial state")
            return v[:, -1]
        psi = np.asarray(self.initial, dtype=complex)
        if psi.shape != (self.space.dim,):
            raise InvalidArgument("initial ket has the wrong dimension")
        nrm = np.linalg.norm(psi)
        if abs(nrm - 1) > self.policy.validation:
            raise InvalidArgument(f"initial ket is not normalised (norm {nrm:.12g})")
        return psi


# ----------------------------------------------------------------- records


@dataclass
class TrajectoryRecord:
    """One trajectory sampled at the output times.

    ``currents`` holds the integrated current ``I dt`` of every step, one
    array per channel; ``jump_times`` the detection times (jump scheme).
    """

    times: np.ndarray
    states: list
    expectations: dict
    seed: int
    index: int
    dt: float
    currents: Optional[dict] = None
    jump_times: Optional[np.ndarray] = None

    def current_increments(self) -> dict:
        """Current integrated over each output interval (first row is zero)."""
        if not self.currents:
            return {}
        steps = np.rint(self.times / self.dt).astype(int)
        out = {}
        for k, inc in self.currents.items():
            cs = np.concatenate([[0.0], np.cumsum(inc)])
            out[k] = np.diff(cs[steps], prepend=0.0)
        return out

    def jump_counts(self) -> np.ndarray:
        steps = np.rint(self.times / self.dt).astype(int)
        if self.jump_times is None:
            return np.zeros(len(steps), dtype=int)
        jsteps = np.rint(np.asarray(self.jump_times) / self.dt).astype(int)
        cum = np.searchsorted(np.sort(jsteps), steps, side="right")
        return np.diff(cum, prepend=0)


@dataclass
class EnsembleStats:
    times: np.ndarray
    mean: dict
    stderr: dict
    count: int
    base_seed: int

    def within(self, name: str, reference: np.ndarray, n_sigma: float = 3.0) -> np.ndarray:
        """Pointwise |mean - reference| <= n_sigma * stderr."""
        return np.abs(self.mean[name] - np.asarray(reference)) <= n_sigma * self.stderr[name]


# --------------------------------------------------------------- stepping


class _Group:
    """Noise source for a fixed group of trajectories."""

    def __init__(self, base_seed: int, indices: Sequence[int], n_channels: int, uniform: bool):
        self.gens = [[trajectory_rng(base_seed, i, k) for k in range(n_channels)] for i in indices]
        self.uniform = uniform
        self.buf = None
        self.pos = NOISE_BLOCK

    def draw(self) -> np.ndarray:
        """Next step's samples, shape (group, channels)."""
        if self.pos == NOISE_BLOCK:
            if self.uniform:
                self.buf = np.array([[g.random(NOISE_BLOCK) for g in gs] for gs in self.gens])
            else:
                self.buf = np.array([[g.standard_normal(NOISE_BLOCK) for g in gs] for gs in self.gens])
            self.pos = 0
        out = self.buf[:, :, self.pos]
        self.pos += 1
        return out


def _run_jump(cfg: TrajectoryConfig, base_seed: int, indices: Sequence[int], keep: bool):
    sp = cfg.space
    d = sp.dim
    c = cfg.c1.matrix
    cdc = c.conj().T @ c
    H0 = cfg.H0.matrix if cfg.H0 is not None else np.zeros((d, d), complex)
    Z = cfg.Z if cfg.Z is not None else fock.zero(sp)
    J = fock.expm_hermitian(Z).matrix @ c
    from scipy.linalg import expm

    U = expm((-1j * H0 - 0.5 * cdc) * cfg.dt)
    obs = _obs_matrices(sp)
    B = len(indices)
    psi = np.tile(cfg.initial_ket(), (B, 1))
    noise = _Group(base_seed, indices, 1, uniform=True)
    out_steps = set(cfg.output_steps().tolist())
    rec = _Recorder(cfg, B, keep)
    jumps = [[] for _ in range(B)]
    rec.ket(0, psi, obs)
    for step in range(1, cfg.n_steps + 1):
        r = noise.draw()[:, 0]
        p = cfg.dt * np.einsum("bi,ij,bj->b", psi.conj(), cdc, psi).real
        if p.max() > 0.1:
            raise StepTooLarge(f"dt * <c1^dag c1> = {p.max():.3g} > 0.1 at step {step}; reduce dt")
        hit = r < p
        new = psi @ U.T
        if hit.any():
            new[hit] = psi[hit] @ J.T
            for b in np.flatnonzero(hit):
                jumps[b].append(step * cfg.dt)
        psi = new / np.linalg.norm(new, axis=1, keepdims=True)
        if step in out_steps:
            rec.ket(step, psi, obs)
    return rec, None, [np.array(j) for j in jumps]


def _unitary_factory(F: np.ndarray):
    e, V = np.linalg.eigh((F + F.conj().T) / 2)
    return e, V


def _run_diffusive(cfg: TrajectoryConfig, base_seed: int, indices: Sequence[int], keep: bool):
    sp = cfg.space
    d = sp.dim
    policy = cfg.policy
    bath = cfg.bath
    c = cfg.c1.matrix
    cd = c.conj().T
    zero = np.zeros((d, d), complex)
    Y = cfg.Y.matrix if cfg.Y is not None else zero
    X = cfg.X.matrix if cfg.X is not None else zero
    H0 = cfg.H0.matrix if cfg.H0 is not None else zero
    chans = innovation_channels(cfg.c1, bath, cfg.scheme)

    # unmeasured part of the bath, plus the return damping for heterodyne
    K = _bath_matrix(bath)
    meas = [(ch.gamma.matrix, ch.weight) for ch in chans]
    K_res = K.copy()
    for ch, vec_ in zip(chans, _channel_vectors(bath, cfg.scheme)):
        K_res -= np.outer(vec_, vec_.conj()) / ch.weight
    ops = _kossakowski_ops([c, cd], K_res)
    if cfg.scheme == "heterodyne" and cfg.return_damping:
        A = X - 1j * Y
        ops += _kossakowski_ops([A, A.conj().T], K)
    Cs = [g / np.sqrt(w) for g, w in meas]

    # work in the eigenbasis of Y so that the x-channel feedback is diagonal
    eY, V = _unitary_factory(Y)
    Vd = V.conj().T

    def rot(m):
        return Vd @ m @ V

    ops_r = [rot(o) for o in ops]
    Cs_r = [rot(C) for C in Cs]
    quads_r = [rot(ch.quadrature.matrix) for ch in chans]
    Heff = rot(H0) - 0.5j * sum((o.conj().T @ o for o in ops_r + Cs_r), np.zeros((d, d), complex))
    M0 = np.eye(d) - 1j * Heff * cfg.dt
    dY = eY[:, None] - eY[None, :]
    if cfg.scheme == "heterodyne":
        eX, VX = _unitary_factory(X)
        W = Vd @ VX  # columns: X eigenvectors in the Y basis
        Wd = W.conj().T
        dX = eX[:, None] - eX[None, :]
    obs = {k: rot(m) for k, m in _obs_matrices(sp).items()}

    B = len(indices)
    rho = np.tile(rot(cfg.initial_density().matrix), (B, 1, 1))
    noise = _Group(base_seed, indices, len(chans), uniform=False)
    out_steps = set(cfg.output_steps().tolist())
    rec = _Recorder(cfg, B, keep, basis=V)
    currents = np.zeros((B, cfg.n_steps, len(chans))) if keep else None
    window = np.zeros((B, len(chans)))
    rec.density(0, rho, obs, window)
    sdt = np.sqrt(cfg.dt)
    for step in range(1, cfg.n_steps + 1):
        dW = sdt * noise.draw()
        Idt = np.empty((B, len(chans)))
        Mop = np.broadcast_to(M0, (B, d, d)).copy()
        for k, (C, q, ch) in enumerate(zip(Cs_r, quads_r, chans)):
            meanC = np.einsum("ij,bji->b", C + C.conj().T, rho).real
            dy = meanC * cfg.dt + dW[:, k]
            Mop += dy[:, None, None] * C
            Idt[:, k] = np.einsum("ij,bji->b", q, rho).real * cfg.dt + np.sqrt(ch.weight) * dW[:, k]
        new = Mop @ rho @ Mop.conj().transpose(0, 2, 1)
        for o in ops_r:
            new += cfg.dt * (o @ rho @ o.conj().T)
        # feedback driven by the just-measured currents
        if cfg.scheme == "homodyne":
            ph = np.exp(-1j * Idt[:, 0, None, None] * dY)
            new = new * ph
        else:
            new = new * np.exp(-1j * Idt[:, 0, None, None] * dY)
            t = Wd @ new @ W
            t = t * np.exp(-1j * Idt[:, 1, None, None] * dX)
            new = W @ t @ Wd
        new = 0.5 * (new + new.conj().transpose(0, 2, 1))
        tr = np.einsum("bii->b", new).real
        rho = new / tr[:, None, None]
        window += Idt
        if keep:
            currents[:, step - 1] = Idt
        if step in out_steps:
            rec.density(step, rho, obs, window, check=policy, seed=base_seed, indices=indices)
            window = np.zeros_like(window)
    return rec, currents, None


def _channel_vectors(bath: BathParams, scheme: str) -> list[np.ndarray]:
    """Innovation operators as coefficient vectors in the (c, c^dag) basis."""
    ax, bx, ay, by = _coeffs(bath.N, bath.M, False)
    vx = np.array([ax, -bx], complex)
    if scheme == "homodyne":
        return [vx]
    return [vx, np.array([-1j * ay, -1j * by], complex)]


def _obs_matrices(space) -> dict:
    x, y = fock.quadratures(space)
    n = fock.number(space)
    return {"x": x.matrix, "y": y.matrix, "n": n.matrix, "x2": x.matrix @ x.matrix, "y2": y.matrix @ y.matrix}


class _Recorder:
    def __init__(self, cfg: TrajectoryConfig, B: int, keep: bool, basis: Optional[np.ndarray] = None):
        self.cfg = cfg
        self.keep = keep
        self.basis = basis
        self.steps = []
        self.values = {k: [] for k in OBSERVABLES}
        self.current_windows = []
        self.states = [[] for _ in range(B)] if keep else None

    def ket(self, step, psi, obs):
        self.steps.append(step)
        for k, m in obs.items():
            self.values[k].append(np.einsum("bi,ij,bj->b", psi.conj(), m, psi).real)
        if self.keep:
            for b in range(psi.shape[0]):
                self.states[b].append(psi[b].copy())

    def density(self, step, rho, obs, window, check: Optional[NumericPolicy] = None, seed=None, indices=None):
        if check is not None:
            mins = np.linalg.eigvalsh(rho).min(axis=1)
            bad = np.flatnonzero(mins < -check.abort)
            if bad.size:
                b = int(bad[0])
                raise StateInvariantError(
                    f"conditioned state lost positivity (min eigenvalue {mins[b]:.3g}) in trajectory "
                    f"{indices[b]} at t={step * self.cfg.dt:.6g}",
                    step=step,
                    seed=(seed, int(indices[b])),
                )
        self.steps.append(step)
        for k, m in obs.items():
            self.values[k].append(np.einsum("ij,bji->b", m, rho).real)
        self.current_windows.append(window.copy())
        if self.keep:
            V = self.basis
            for b in range(rho.shape[0]):
                self.states[b].append(DensityMatrix(self.cfg.space, V @ rho[b] @ V.conj().T))

    def arrays(self) -> dict:
        """name -> array (group, times)."""
        out = {k: np.stack(v, axis=1) for k, v in self.values.items()}
        if self.current_windows:
            cw = np.stack(self.current_windows, axis=1)  # (group, times, channels)
            for k in range(cw.shape[2]):
                out["I" + "xy"[k]] = cw[:, :, k]
        return out


def _run_group(cfg: TrajectoryConfig, base_seed: int, indices: Sequence[int], keep: bool):
    if cfg.scheme == "jump":
        return _run_jump(cfg, base_seed, indices, keep)
    return _run_diffusive(cfg, base_seed, indices, keep)


# ------------------------------------------------------------- public ops


def run_trajectory(cfg: TrajectoryConfig, seed: int, index: int = 0) -> TrajectoryRecord:
    """Single trajectory ``index`` of the run with base seed ``seed``."""
    rec, currents, jumps = _run_group(cfg, seed, [index], keep=True)
    times = np.array(rec.steps) * cfg.dt
    vals = {k: v[0] for k, v in rec.arrays().items() if k in OBSERVABLES}
    cur = None
    if currents is not None:
        names = "xy"[: currents.shape[2]]
        cur = {names[k]: currents[0, :, k] for k in range(currents.shape[2])}
    return TrajectoryRecord(times, rec.states[0], vals, int(seed), int(index), cfg.dt, cur,
                            jumps[0] if jumps is not None else None)


def jump_trajectory(c1: Operator, Z: Optional[Operator], H0: Optional[Operator], psi0, t_final: float,
                    dt: float = 1e-3, seed: int = 0, stride: int = 1, index: int = 0) -> TrajectoryRecord:
    cfg = TrajectoryConfig("jump", c1, psi0, t_final, dt, stride, H0=H0, Z=Z)
    return run_trajectory(cfg, seed, index)


def homodyne_trajectory(c1: Operator, Y: Optional[Operator], H0: Optional[Operator], bath: Optional[BathParams],
                        rho0: DensityMatrix, t_final: float, dt: float = 1e-4, seed: int = 0, stride: int = 1,
                        index: int = 0) -> TrajectoryRecord:
    cfg = TrajectoryConfig("homodyne", c1, rho0, t_final, dt, stride, H0=H0, Y=Y, bath=bath or BathParams())
    return run_trajectory(cfg, seed, index)


def heterodyne_trajectory(c1: Operator, X: Optional[Operator], Y: Optional[Operator], H0: Optional[Operator],
                          bath: Optional[BathParams], rho0: DensityMatrix, t_final: float, dt: float = 1e-4,
                          seed: int = 0, stride: int = 1, index: int = 0,
                          return_damping: bool = True) -> TrajectoryRecord:
    cfg = TrajectoryConfig("heterodyne", c1, rho0, t_final, dt, stride, H0=H0, Y=Y, X=X,
                           bath=bath or BathParams(), return_damping=return_damping)
    return run_trajectory(cfg, seed, index)


def ensemble_values(cfg: TrajectoryConfig, n_traj: int, base_seed: int, threads: int = 1) -> tuple[np.ndarray, dict]:
    """Per-trajectory conditioned expectations, name -> array (n_traj, times)."""
    if n_traj < 2:
        raise InvalidArgument("an ensemble needs at least two trajectories")
    if threads < 1:
        raise InvalidArgument("threads must be >= 1")
    groups = [list(range(s, min(s + GROUP_SIZE, n_traj))) for s in range(0, n_traj, GROUP_SIZE)]

    def work(idx):
        rec, _, _ = _run_group(cfg, base_seed, idx, keep=False)
        return rec

    if threads == 1:
        recs = [work(g) for g in groups]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            recs = list(ex.map(work, groups))
    times = np.array(recs[0].steps) * cfg.dt
    parts = [r.arrays() for r in recs]
    values = {k: np.concatenate([p[k] for p in parts], axis=0) for k in parts[0]}
    return times, values


def ensemble_average(cfg: TrajectoryConfig, n_traj: int, base_seed: int, threads: int = 1) -> EnsembleStats:
    """Ensemble means and standard errors of the conditioned observables.

    Besides the raw moments, ``Vx``/``Vy`` are the unconditional variances
    mean<q^2> - mean<q>^2 (delta-method errors) and ``Ix``/``Iy`` the
    currents averaged over each output interval.
    """
    times, vals = ensemble_values(cfg, n_traj, base_seed, threads)
    n = n_traj
    mean, se = {}, {}
    for k, v in vals.items():
        if k.startswith("I"):
            width = np.diff(times, prepend=np.nan)
            with np.errstate(invalid="ignore", divide="ignore"):
                v = v / width
        mean[k] = v.mean(axis=0)
        se[k] = v.std(axis=0, ddof=1) / np.sqrt(n)
    for q in ("x", "y"):
        m1 = mean[q]
        infl = vals[q + "2"] - 2 * m1 * vals[q]
        mean["V" + q] = mean[q + "2"] - m1**2
        se["V" + q] = infl.std(axis=0, ddof=1) / np.sqrt(n)
    return EnsembleStats(times, mean, se, n, int(base_seed))


def master_equation_reference(cfg: TrajectoryConfig, times: np.ndarray) -> dict:
    """Expectations under ``cfg.generator()`` at ``times``, for comparison with an ensemble."""
    from .evolve import propagate

    res = propagate(cfg.generator(), cfg.initial_density(), cfg.t_final, dt=min(cfg.dt, 1e-3),
                    stride=1, policy=cfg.policy)
    obs = _obs_matrices(cfg.space)
    out = {}
    for k, m in obs.items():
        allv = np.array([np.trace(m @ s.matrix).real for s in res.states])
        out[k] = np.interp(times, res.times, allv)
    out["Vx"] = out["x2"] - out["x"] ** 2
    out["Vy"] = out["y2"] - out["y"] ** 2
    return out


# --------------------------------------------------------------------- I/O


def write_record_csv(record: TrajectoryRecord, path, comment: Optional[str] = None):
    """Rows at the output times: expectations, current increments, jump counts."""
    cols = ["time"]
    data = [record.times]
    for k in OBSERVABLES:
        v = np.asarray(record.expectations[k])
        cols += [f"re_{k}", f"im_{k}"]
        data += [v.real, np.zeros_like(v.real) if not np.iscomplexobj(v) else v.imag]
    for k, inc in record.current_increments().items():
        cols.append(f"dI{k}")
        data.append(inc)
    if record.jump_times is not None:
        cols.append("jumps")
        data.append(record.jump_counts())
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in zip(*data):
            w.writerow([f"{float(v):.17g}" if not isinstance(v, (int, np.integer)) else str(v) for v in row])


def write_seed_sidecar(path, base_seed: int, n_traj: int):
    info = {
        "base_seed": int(base_seed),
        "n_trajectories": int(n_traj),
        "scheme": "numpy Philox(SeedSequence(base_seed, spawn_key=(trajectory_index, channel)))",
        "noise_block": NOISE_BLOCK,
        "group_size": GROUP_SIZE,
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")

"""Conveyor-belt memory lattice: system plus ``N`` field bins, one collision per step.

Factor 0 of the joint space is the system; factor ``k + 1`` is the bin that
exits after ``k`` more steps and couples with ``kappa_k``.  A step applies
``U = exp(G)`` to the whole lattice, releases factor 1 (the exiting bin) and
appends a fresh vacuum bin at the far end.  The fresh bin plays the part
of the input pump.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .hilbert import (
    DEFAULT_DIM_CAP,
    CompositeSpace,
    DimensionCapError,
    StateVector,
    embed,
    expm,
    fingerprint,
    is_hermitian,
    ladder,
    reduced_from_vector,
)
from .kernel import CouplingKernel


@dataclass(frozen=True)
class SystemSpec:
    hamiltonian: np.ndarray
    coupling: np.ndarray
    label: str = ""

    def __post_init__(self):
        h = np.asarray(self.hamiltonian, dtype=complex)
        s = np.asarray(self.coupling, dtype=complex)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError(f"Hamiltonian must be square, got shape {h.shape}")
        if s.shape != h.shape:
            raise ValueError(f"coupling operator shape {s.shape} != Hamiltonian shape {h.shape}")
        if not is_hermitian(h):
            raise ValueError("Hamiltonian is not Hermitian")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "coupling", s)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.hamiltonian, self.coupling)

    @classmethod
    def qubit_decay(cls, omega: float = 0.0, rabi: float = 0.0) -> "SystemSpec":
        """Two-level emitter; basis ``|0> = ground``, ``|1> = excited``, ``s`` lowers."""
        sm = np.array([[0, 1], [0, 0]], dtype=complex)
        sx = np.array([[0, 1], [1, 0]], dtype=complex)
        h = omega * np.diag([0.0, 1.0]) + 0.5 * rabi * sx
        return cls(h, sm, "qubit")


@dataclass(frozen=True)
class LatticeConfig:
    dt: float
    n_bins: int
    n_max: int = 2
    dim_cap: int = DEFAULT_DIM_CAP

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_bins < 1:
            raise ValueError("need at least one memory bin")
        if self.n_max < 1:
            raise ValueError("Fock cutoff n_max must be >= 1")

    @property
    def bin_dim(self) -> int:
        return self.n_max + 1

    @property
    def memory_time(self) -> float:
        return self.n_bins * self.dt

    def space(self, system_dim: int) -> CompositeSpace:
        total = system_dim * self.bin_dim ** self.n_bins
        if total > self.dim_cap:
            raise DimensionCapError(
                f"joint dimension {system_dim}*{self.bin_dim}^{self.n_bins} = {total} "
                f"exceeds cap {self.dim_cap}")
        return CompositeSpace((system_dim,) + (self.bin_dim,) * self.n_bins)


@dataclass(frozen=True)
class JointState:
    """Pure system+memory state at interaction-picture time ``step * dt``."""

    space: CompositeSpace
    vector: StateVector
    step: int = 0

    @property
    def psi(self) -> np.ndarray:
        return self.vector.amplitudes

    @property
    def log_weight(self) -> float:
        return self.vector.log_weight

    @property
    def weight(self) -> float:
        return self.vector.weight

    def reduced_system(self) -> np.ndarray:
        return reduced_from_vector(self.psi, self.space, [0])


def initial_joint(psi_s: np.ndarray, cfg: LatticeConfig) -> JointState:
    """Uncorrelated start: system state times vacuum in every bin."""
    psi_s = np.asarray(psi_s, dtype=complex)
    space = cfg.space(psi_s.shape[0])
    vac = np.zeros(cfg.bin_dim ** cfg.n_bins, dtype=complex)
    vac[0] = 1.0
    return JointState(space, StateVector.from_unnormalized(np.kron(psi_s, vac)), 0)


def _check_kernel(kappa: CouplingKernel, cfg: LatticeConfig) -> None:
    if kappa.n != cfg.n_bins:
        raise ValueError(f"kernel has {kappa.n} samples but lattice has {cfg.n_bins} bins")
    if not math.isclose(kappa.dt, cfg.dt, rel_tol=1e-12):
        raise ValueError(f"kernel dt {kappa.dt} != lattice dt {cfg.dt}")


def build_collision_generator(sys: SystemSpec, kappa: CouplingKernel,
                              cfg: LatticeConfig) -> np.ndarray:
    """Anti-Hermitian one-step generator.

    ``G = -i dt H_S + sum_k (theta_k s b_k^dag - conj(theta_k) s^dag b_k)``
    with ``theta_k = kappa_k dt**1.5``.
    """
    _check_kernel(kappa, cfg)
    space = cfg.space(sys.dim)
    g = -1j * cfg.dt * embed(sys.hamiltonian, 0, space)
    b = ladder(cfg.n_max)
    s_full = embed(sys.coupling, 0, space)
    sd_full = s_full.conj().T
    for k, theta in enumerate(kappa.theta):
        if theta == 0:
            continue
        bk = embed(b, k + 1, space)
        g += theta * (s_full @ bk.conj().T) - np.conj(theta) * (sd_full @ bk)
    return g


@dataclass
class CollisionModel:
    """System, kernel and lattice bundled with the cached one-step unitary."""

    system: SystemSpec
    kernel: CouplingKernel
    config: LatticeConfig
    generator: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.generator = build_collision_generator(self.system, self.kernel, self.config)

    @cached_property
    def unitary(self) -> np.ndarray:
        return expm(self.generator)

    @property
    def space(self) -> CompositeSpace:
        return self.config.space(self.system.dim)

    @property
    def n_bins(self) -> int:
        return self.config.n_bins

    @property
    def theta(self) -> np.ndarray:
        return self.kernel.theta

    def initial(self, psi_s: np.ndarray) -> JointState:
        return initial_joint(psi_s, self.config)


def conveyor_step(state: JointState, unitary: np.ndarray) -> tuple[JointState, np.ndarray]:
    """Collide once.

    Returns the post-collision joint state, with the exiting bin (factor 1)
    still attached, and that bin's reduced density matrix.  The caller then
    detaches the bin by projection (:func:`nmmonitor.monitor.bargmann_project`)
    or by tracing, and calls :func:`attach_vacuum`.
    """
    collided = collide(state, unitary)
    return collided, reduced_from_vector(collided.psi, state.space, [1])


def collide(state: JointState, unitary: np.ndarray) -> JointState:
    psi = unitary @ state.psi
    return JointState(state.space, StateVector(psi, state.log_weight), state.step + 1)


def attach_vacuum(state: JointState, bin_dim: int) -> JointState:
    """Append a fresh vacuum bin as the last factor (the input pump)."""
    psi = np.zeros((state.psi.shape[0], bin_dim), dtype=complex)
    psi[:, 0] = state.psi
    return JointState(state.space.appended(bin_dim), StateVector(psi.ravel(), state.log_weight),
                      state.step)


def trace_exit_and_shift(rho: np.ndarray, space: CompositeSpace) -> np.ndarray:
    """Density-matrix conveyor shift: trace factor 1, append a vacuum bin."""
    d = space.factor_dims[0]
    bd = space.factor_dims[1]
    rest = space.total_dim // (d * bd)
    t = rho.reshape(d, bd, rest, d, bd, rest)
    reduced = np.einsum("iajkal->ijkl", t)
    out = np.zeros((d, rest, bd, d, rest, bd), dtype=complex)
    out[:, :, 0, :, :, 0] = reduced
    n = space.total_dim
    return out.reshape(n, n)


def evolve_nonselective(sys: SystemSpec, kappa: CouplingKernel, cfg: LatticeConfig, steps: int,
                        initial: np.ndarray, reduce: bool = True,
                        model: CollisionModel | None = None) -> np.ndarray:
    """Unitary collision plus trace over each exiting bin, ``steps`` times.

    Returns ``steps + 1`` density matrices (index = step), reduced to the
    system unless ``reduce`` is false.
    """
    model = model or CollisionModel(sys, kappa, cfg)
    space = model.space
    psi0 = initial_joint(initial, cfg).psi
    rho = np.outer(psi0, psi0.conj())
    u = model.unitary
    ud = u.conj().T
    out = []
    for step in range(steps + 1):
        if step:
            rho = trace_exit_and_shift(u @ rho @ ud, space)
        out.append(_reduce_system(rho, space) if reduce else rho)
    return np.array(out)


def _reduce_system(rho: np.ndarray, space: CompositeSpace) -> np.ndarray:
    d = space.factor_dims[0]
    rest = space.total_dim // d
    return np.einsum("iaja->ij", rho.reshape(d, rest, d, rest))


@dataclass(frozen=True)
class OutputMean:
    """Exit-bin heterodyne mean per step (index ``m - 1`` for step ``m``)."""

    direct: np.ndarray
    predicted: np.ndarray

    @property
    def defect(self) -> np.ndarray:
        return self.direct - self.predicted


def convolve_drift(theta: np.ndarray, s_mean: np.ndarray) -> np.ndarray:
    """``sum_k theta_k <s>_{m-k}`` for ``m = 1..len(s_mean)``.

    ``s_mean[j - 1]`` is ``<s>`` for collision ``j``; collisions before the
    first are absent.
    """
    n = s_mean.shape[0]
    out = np.zeros(n, dtype=complex)
    for k, th in enumerate(theta):
        if k < n:
            out[k:] += th * s_mean[: n - k]
    return out


def output_mean_nonselective(sys: SystemSpec, kappa: CouplingKernel, cfg: LatticeConfig,
                             steps: int, initial: np.ndarray) -> OutputMean:
    """Direct ``<b_exit>`` from the joint simulation versus the input-output convolution.

    The prediction for step ``m`` is ``sum_k theta_k <s>_{m-k}`` with
    ``<s>_j`` taken in the reduced state entering collision ``j``.
    """
    model = CollisionModel(sys, kappa, cfg)
    space = model.space
    psi0 = initial_joint(initial, cfg).psi
    rho = np.outer(psi0, psi0.conj())
    u = model.unitary
    ud = u.conj().T
    b_exit = embed(ladder(cfg.n_max), 1, space)
    direct = np.zeros(steps, dtype=complex)
    s_mean = np.zeros(steps, dtype=complex)
    for m in range(1, steps + 1):
        s_mean[m - 1] = np.trace(_reduce_system(rho, space) @ sys.coupling)
        rho = u @ rho @ ud
        direct[m - 1] = np.trace(rho @ b_exit)
        rho = trace_exit_and_shift(rho, space)
    return OutputMean(direct, convolve_drift(kappa.theta, s_mean))

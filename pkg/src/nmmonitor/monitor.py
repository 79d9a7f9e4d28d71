"""Heterodyne monitoring of the exiting bins.

Every exiting bin is read out in the Bargmann basis.  Conditioning on a
read-out ``xi`` contracts the bin against ``conj(xi)**n / sqrt(n!)`` and
multiplies the branch weight by ``exp(-|xi|^2) / pi`` times the squared norm
of the contracted vector, so the weight is the outcome density.

Two conditional objects come out of a record:

* the conditional mixed state at step ``n``: measured bins projected,
  in-memory bins traced out;
* the retrodicted pure state at step ``p``: in-memory bins additionally
  projected on their later read-outs, available once the record reaches
  ``p + N - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal

import numpy as np

from .hilbert import StateVector, coherent_components
from .kernel import CouplingKernel, NoisePath, color, reconstruct
from .lattice import CollisionModel, JointState, attach_vacuum, collide, convolve_drift

LOG_PI = math.log(math.pi)


class InvalidStateError(ValueError):
    """Zero-norm branch: the conditioning outcome has vanishing probability."""


class InsufficientRecordError(ValueError):
    def __init__(self, required: int, available: int, what: str = "retrodiction"):
        self.required = required
        self.available = available
        super().__init__(f"{what} needs the record through step {required}, "
                         f"only {available} steps are available")


@dataclass(frozen=True)
class HeterodyneRecord:
    """Bin-normalized read-outs ``xi_bar_m``; ``bins[m - 1]`` is step ``m``."""

    dt: float
    bins: np.ndarray
    seed: int | None = None
    n_bins: int = 1
    n_max: int = 1
    kernel_fingerprint: str = ""
    system_fingerprint: str = ""

    def __post_init__(self):
        object.__setattr__(self, "bins", np.asarray(self.bins, dtype=complex).ravel())

    def __len__(self) -> int:
        return self.bins.shape[0]

    def continuum(self) -> np.ndarray:
        return self.bins / math.sqrt(self.dt)

    def prefix(self, n: int) -> "HeterodyneRecord":
        return HeterodyneRecord(self.dt, self.bins[:n], self.seed, self.n_bins, self.n_max,
                                self.kernel_fingerprint, self.system_fingerprint)

    @classmethod
    def for_model(cls, model: CollisionModel, bins, seed=None) -> "HeterodyneRecord":
        return cls(model.config.dt, bins, seed, model.n_bins, model.config.n_max,
                   _kernel_fingerprint(model.kernel), model.system.fingerprint)


def _kernel_fingerprint(kappa: CouplingKernel) -> str:
    from .hilbert import fingerprint

    return fingerprint(np.array([kappa.dt]), kappa.samples)


@dataclass(frozen=True)
class ConditionalMixedState:
    step: int
    rho: np.ndarray
    log_weight: float = 0.0

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)

    def expect(self, op: np.ndarray) -> complex:
        return complex(np.trace(self.rho @ op))


@dataclass(frozen=True)
class RetrodictedPureState:
    step: int
    horizon: int
    vector: StateVector

    @property
    def psi(self) -> np.ndarray:
        return self.vector.amplitudes

    @property
    def weight(self) -> float:
        return self.vector.weight

    def expect(self, op: np.ndarray) -> complex:
        return complex(np.vdot(self.psi, op @ self.psi))


def bargmann_project(joint: JointState, bin: int, xi: complex) -> JointState:
    """Project composite factor ``bin`` on the Bargmann vector of ``xi`` and drop it."""
    space = joint.space
    if not 1 <= bin < space.n_factors:
        raise IndexError(f"bin factor {bin} out of range 1..{space.n_factors - 1}")
    dims = space.factor_dims
    t = joint.psi.reshape(math.prod(dims[:bin]), dims[bin], math.prod(dims[bin + 1:]))
    c = np.conj(coherent_components(xi, dims[bin] - 1))
    v = np.einsum("anb,n->ab", t, c).ravel()
    norm2 = float(np.vdot(v, v).real)
    if not norm2 > 0.0:
        raise InvalidStateError(f"projection of bin {bin} on xi={xi:.4g} has zero norm")
    log_w = joint.log_weight + math.log(norm2) - abs(xi) ** 2 - LOG_PI
    return JointState(space.without(bin), StateVector(v / math.sqrt(norm2), log_w), joint.step)


def _exit_rows(joint: JointState) -> np.ndarray:
    dims = joint.space.factor_dims
    t = joint.psi.reshape(dims[0], dims[1], -1)
    return np.transpose(t, (1, 0, 2)).reshape(dims[1], -1)


def sample_outcome(rows: np.ndarray, rng: np.random.Generator) -> complex:
    """Exact draw from the heterodyne density of a Fock-truncated bin.

    ``rows[n]`` holds the (unit total norm) joint amplitudes with the bin in
    ``|n>``.  The envelope ``P(Gamma(D) > |xi|^2) / (pi D)`` dominates the
    density and is itself sampled exactly (``|xi|^2 = U * Gamma(D + 1)``);
    rejection then returns an exact sample, accepting a third of proposals
    on average for ``D = 3``.
    """
    d = rows.shape[0]
    inv_fact = np.array([1.0 / math.factorial(n) for n in range(d)])
    while True:
        u = rng.gamma(d + 1) * rng.random()
        xi = math.sqrt(u) * complex(math.cos(phi := 2 * math.pi * rng.random()), math.sin(phi))
        c = np.conj(coherent_components(xi, d - 1))
        v = c @ rows
        # acceptance = density / (D * envelope) = |v|^2 / sum_{n<D} u^n / n!
        bound = float(np.dot(u ** np.arange(d), inv_fact))
        if rng.random() * bound < float(np.vdot(v, v).real):
            return xi


def heterodyne_sample(joint: JointState, rng: np.random.Generator) -> tuple[complex, JointState]:
    """Read out factor 1 and return ``(xi_bar, collapsed joint without that bin)``."""
    if joint.space.n_factors < 2:
        raise IndexError("joint state has no bin to measure")
    if not np.vdot(joint.psi, joint.psi).real > 0:
        raise InvalidStateError("cannot measure a zero-norm state")
    xi = sample_outcome(_exit_rows(joint), rng)
    return xi, bargmann_project(joint, 1, xi)


def advance(state: JointState, model: CollisionModel, xi: complex) -> JointState:
    """One monitored step conditioned on the exit read-out ``xi``."""
    collided = collide(state, model.unitary)
    return attach_vacuum(bargmann_project(collided, 1, xi), model.config.bin_dim)


@dataclass
class Trajectory:
    record: HeterodyneRecord
    states: list[ConditionalMixedState]
    final: JointState


def run_trajectory(model: CollisionModel, steps: int, seed: int, psi0: np.ndarray) -> Trajectory:
    """Monitored evolution; ``states[n]`` is the conditional mixed state after ``n`` steps."""
    rng = np.random.default_rng(seed)
    state = model.initial(psi0)
    u = model.unitary
    bd = model.config.bin_dim
    bins = np.zeros(steps, dtype=complex)
    states = [ConditionalMixedState(0, state.reduced_system(), state.log_weight)]
    for m in range(1, steps + 1):
        collided = collide(state, u)
        xi, projected = heterodyne_sample(collided, rng)
        bins[m - 1] = xi
        state = attach_vacuum(projected, bd)
        states.append(ConditionalMixedState(m, state.reduced_system(), state.log_weight))
    return Trajectory(HeterodyneRecord.for_model(model, bins, seed), states, state)


def replay(record: HeterodyneRecord, model: CollisionModel, psi0: np.ndarray,
           steps: int | None = None) -> Iterator[JointState]:
    """Conditioned joint states after ``0, 1, ..., steps`` steps of the record."""
    steps = len(record) if steps is None else steps
    if steps > len(record):
        raise InsufficientRecordError(steps, len(record), "replay")
    state = model.initial(psi0)
    yield state
    for m in range(1, steps + 1):
        state = advance(state, model, record.bins[m - 1])
        yield state


def conditional_mixed(record: HeterodyneRecord, model: CollisionModel, n: int,
                      psi0: np.ndarray) -> ConditionalMixedState:
    """Replay ``n`` steps and trace out the bins still in memory."""
    if n > len(record):
        raise InsufficientRecordError(n, len(record), "conditional state")
    *_, state = replay(record, model, psi0, n)
    return ConditionalMixedState(n, state.reduced_system(), state.log_weight)


def project_memory(state: JointState, values) -> JointState:
    """Project the interacted in-memory bins (factors ``1..N-1``) on ``values``.

    The last factor must be the fresh vacuum bin; it is dropped by taking
    its vacuum component, which is exact.
    """
    values = np.atleast_1d(np.asarray(values, dtype=complex))
    n_bins = state.space.n_factors - 1
    if values.shape[0] != n_bins - 1:
        raise ValueError(f"need {n_bins - 1} in-memory values, got {values.shape[0]}")
    bd = state.space.factor_dims[-1]
    psi = state.psi.reshape(-1, bd)[:, 0]
    s = JointState(state.space.without(n_bins), StateVector(psi, state.log_weight), state.step)
    for xi in values:
        s = bargmann_project(s, 1, xi)
    return s


def _retro(state: JointState, record: HeterodyneRecord, p: int, n_bins: int) -> RetrodictedPureState:
    future = record.bins[p:p + n_bins - 1]
    projected = project_memory(state, future)
    return RetrodictedPureState(p, p + n_bins - 1, projected.vector)


def retrodict(record: HeterodyneRecord, model: CollisionModel, p: int,
              psi0: np.ndarray) -> RetrodictedPureState:
    """Pure system state at step ``p``, conditioned on the record through ``p + N - 1``."""
    need = p + model.n_bins - 1
    if need > len(record):
        raise InsufficientRecordError(need, len(record))
    *_, state = replay(record, model, psi0, p)
    return _retro(state, record, p, model.n_bins)


def retrodict_path(record: HeterodyneRecord, model: CollisionModel,
                   psi0: np.ndarray) -> list[RetrodictedPureState]:
    """All retrodicted states ``p = 0..len(record) - N + 1`` in one replay."""
    last = len(record) - model.n_bins + 1
    if last < 0:
        raise InsufficientRecordError(model.n_bins - 1, len(record))
    return [_retro(state, record, p, model.n_bins)
            for p, state in enumerate(replay(record, model, psi0, last))]


def project_memory_batch(state: JointState, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`project_memory` over rows of ``values``.

    Returns unnormalized system vectors ``(S, d)`` scaled so that
    ``|v|^2 * exp(-sum|xi|^2) / pi**(N-1)`` is the branch weight relative to
    ``state``, and the per-row log of that Gaussian measure factor.
    """
    values = np.atleast_2d(np.asarray(values, dtype=complex))
    n_mem = state.space.n_factors - 2
    if values.shape[1] != n_mem:
        raise ValueError(f"need {n_mem} in-memory values per row, got {values.shape[1]}")
    d = state.space.factor_dims[0]
    bd = state.space.factor_dims[-1]
    t = state.psi.reshape(-1, bd)[:, 0].reshape(d, bd ** n_mem)
    comps = np.ones((values.shape[0], 1), dtype=complex)
    for j in range(n_mem):
        c = np.conj(coherent_components(values[:, j], bd - 1))
        comps = (comps[:, :, None] * c[:, None, :]).reshape(values.shape[0], -1)
    vecs = comps @ t.T
    log_measure = -np.sum(np.abs(values) ** 2, axis=1) - n_mem * LOG_PI
    return vecs, log_measure


def gaussian_quadrature(order: int, n_complex: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Tensor Gauss-Hermite rule for the complex Gaussian measure ``exp(-|xi|^2)/pi``.

    Exact for polynomials of degree ``< 2*order`` in each real coordinate.
    Returns nodes ``(Q, n_complex)`` and weights ``(Q,)`` summing to 1.
    """
    x, w = np.polynomial.hermite.hermgauss(order)
    z = (x[:, None] + 1j * x[None, :]).ravel()
    wz = (w[:, None] * w[None, :]).ravel() / math.pi
    nodes = np.array(np.meshgrid(*([z] * n_complex), indexing="ij")).reshape(n_complex, -1).T
    weights = np.prod(np.array(np.meshgrid(*([wz] * n_complex), indexing="ij")), axis=0).ravel()
    return nodes, weights


def radial_angular_grid(n_radial: int, n_angular: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and plain area weights (``d^2 xi``) for integrands ``~ exp(-|xi|^2) poly``.

    Radial Gauss-Laguerre in ``u = |xi|^2`` times a uniform angular rule.
    """
    u, w = np.polynomial.laguerre.laggauss(n_radial)
    phi = 2 * math.pi * np.arange(n_angular) / n_angular
    nodes = (np.sqrt(u)[:, None] * np.exp(1j * phi)[None, :]).ravel()
    area = (0.5 * w * np.exp(u))[:, None] * np.full(n_angular, 2 * math.pi / n_angular)[None, :]
    return nodes, area.ravel()


def quadrature_retrodicted_average(state: JointState, order: int) -> np.ndarray:
    """Gaussian-quadrature average of retrodicted projectors over the in-memory bins.

    Equals the normalized conditional mixed state when the quadrature is
    exact (``order >= n_max + 1``).
    """
    n_mem = state.space.n_factors - 2
    if n_mem == 0:
        v = state.psi.reshape(-1, state.space.factor_dims[-1])[:, 0]
        return np.outer(v, v.conj()) / np.vdot(v, v).real
    nodes, weights = gaussian_quadrature(order, n_mem)
    vecs, _ = project_memory_batch(state, nodes)
    rho = np.einsum("q,qi,qj->ij", weights, vecs, vecs.conj())
    return rho / np.trace(rho).real


def mc_retrodicted_average(state: JointState, n_samples: int,
                           rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo version: future read-outs drawn from the vacuum Gaussian measure."""
    n_mem = state.space.n_factors - 2
    from .kernel import complex_normal

    values = complex_normal(rng, (n_samples, n_mem)).reshape(n_samples, n_mem)
    vecs, _ = project_memory_batch(state, values)
    rho = vecs.T @ vecs.conj() / n_samples
    return rho / np.trace(rho).real


Expectation = Literal["retrodicted", "mixed"]


def _s_mean_states(record: HeterodyneRecord, model: CollisionModel, psi0: np.ndarray,
                   expectation: Expectation) -> np.ndarray:
    """``<s>`` entering each collision ``j = 1..`` that the record allows."""
    s = model.system.coupling
    if expectation == "retrodicted":
        retro = retrodict_path(record, model, psi0)
        return np.array([r.expect(s) for r in retro])
    if expectation == "mixed":
        return np.array([complex(np.trace(st.reduced_system() @ s))
                         for st in replay(record, model, psi0)])
    raise ValueError(f"unknown expectation {expectation!r}")


def predicted_signal_mean(record: HeterodyneRecord, model: CollisionModel, m: int,
                          psi0: np.ndarray, expectation: Expectation = "retrodicted"
                          ) -> tuple[complex, list[int]]:
    """``E[xi_bar_m] = sum_k theta_k <s>_{m-k}``.

    ``<s>`` for collision ``j`` is evaluated in the state at step ``j - 1``
    (retrodicted by default).  With retrodicted states the record must reach
    ``m + N - 2``.  Returns the mean and the state steps used.
    """
    n = model.n_bins
    steps = [m - k - 1 for k in range(n) if m - k - 1 >= 0]
    need = max(steps) + (n - 1 if expectation == "retrodicted" else 0)
    if need > len(record):
        raise InsufficientRecordError(need, len(record), "signal prediction")
    s = model.system.coupling
    mean = 0j
    for k, theta in enumerate(model.theta):
        p = m - k - 1
        if p < 0:
            continue
        if expectation == "retrodicted":
            ev = retrodict(record, model, p, psi0).expect(s)
        else:
            ev = conditional_mixed(record, model, p, psi0).expect(s)
        mean += theta * ev
    return mean, steps


def signal_predictions(record: HeterodyneRecord, model: CollisionModel, psi0: np.ndarray,
                       expectation: Expectation = "retrodicted") -> tuple[np.ndarray, np.ndarray]:
    """Predicted means for every step the record supports, plus the ``<s>`` path.

    Element ``m - 1`` of the first array predicts ``record.bins[m - 1]``.
    """
    s_mean = _s_mean_states(record, model, psi0, expectation)
    if expectation == "retrodicted":
        # s_mean[p] covers collision p + 1; predictions need s through collision m
        n_pred = min(len(record), s_mean.shape[0])
    else:
        n_pred = len(record)
        s_mean = s_mean[:n_pred]
    return convolve_drift(model.theta, s_mean[:n_pred]), s_mean[:n_pred]


def innovations(record: HeterodyneRecord, model: CollisionModel, psi0: np.ndarray,
                expectation: Expectation = "retrodicted") -> np.ndarray:
    pred, _ = signal_predictions(record, model, psi0, expectation)
    return record.bins[: pred.shape[0]] - pred


@dataclass(frozen=True)
class GirsanovCheck:
    a: np.ndarray
    a_tilde: np.ndarray
    residual: float
    drift: np.ndarray = field(repr=False)


def girsanov_colored(record: HeterodyneRecord, kappa: CouplingKernel, s_mean: np.ndarray,
                     innovations: np.ndarray | None = None) -> GirsanovCheck:
    """Colored-noise image of the output signal.

    ``s_mean[j - 1]`` is ``<s>`` for collision ``j``.  The white part is the
    supplied ``innovations`` (default: record minus the input-output drift).
    Computes ``a = color(innovations)`` and
    ``a_tilde_m = a_m + dt * sum_l alpha_l <s>_{m-l}`` over lags
    ``|l| < N`` with the Hermitian extension of ``alpha``; future values enter
    through negative lags.  The residual is ``max |color(record) - a_tilde|``,
    i.e. the outer-convolved form of the signal-mean relation.
    """
    s_mean = np.asarray(s_mean, dtype=complex)
    n = len(record)
    if s_mean.shape[0] != n:
        raise ValueError(f"<s> path has {s_mean.shape[0]} entries, record has {n}")
    if innovations is None:
        innovations = record.bins - convolve_drift(kappa.theta, s_mean)
    innovations = np.asarray(innovations, dtype=complex)
    if innovations.shape[0] != n:
        raise ValueError("innovations and record lengths differ")
    dt = record.dt
    a = color(NoisePath(dt, innovations), kappa).bins
    b_col = color(NoisePath(dt, record.bins), kappa).bins
    alpha = reconstruct(kappa)
    length = a.shape[0]
    drift = np.zeros(length, dtype=complex)
    for lag in range(-(kappa.n - 1), kappa.n):
        # collision index j = m - lag, m = i + 1
        j = np.arange(1, length + 1) - lag
        ok = (j >= 1) & (j <= n)
        drift[ok] += alpha.lag(lag) * s_mean[j[ok] - 1]
    drift *= dt
    a_tilde = a + drift
    residual = float(np.max(np.abs(b_col - a_tilde))) if length else 0.0
    return GirsanovCheck(a, a_tilde, residual, drift)


@dataclass
class EnsembleResult:
    mean: np.ndarray
    stderr: np.ndarray
    n_trajectories: int
    records: list[HeterodyneRecord] = field(default_factory=list, repr=False)

    def trace_distance_stderr(self) -> np.ndarray:
        """Standard error of the trace distance of the mean, via its Hilbert-Schmidt spread.

        Exact for qubits, where trace distance is ``||.||_HS / sqrt(2)``.
        """
        return np.sqrt(np.sum(self.stderr ** 2, axis=(1, 2)) / 2.0)


def _trajectory_rhos(args) -> tuple[np.ndarray, HeterodyneRecord]:
    model, steps, seed, psi0 = args
    traj = run_trajectory(model, steps, seed, psi0)
    return np.array([s.rho for s in traj.states]), traj.record


def run_ensemble(model: CollisionModel, steps: int, n_trajectories: int, seed: int,
                 psi0: np.ndarray, workers: int = 1, keep_records: bool = False) -> EnsembleResult:
    """Average conditional states over trajectories seeded by ``derive_seed(seed, i)``.

    Results are collected in trajectory-index order whatever the worker count.
    """
    from .kernel import derive_seed

    model.unitary  # build once before fan-out
    jobs = [(model, steps, derive_seed(seed, i), psi0) for i in range(n_trajectories)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trajectory_rhos, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_trajectory_rhos(j) for j in jobs]
    rhos = np.array([r[0] for r in results])
    mean = rhos.mean(axis=0)
    if n_trajectories > 1:
        var = rhos.real.var(axis=0, ddof=1) + rhos.imag.var(axis=0, ddof=1)
        stderr = np.sqrt(var / n_trajectories)
    else:
        stderr = np.zeros(mean.shape)
    records = [r[1] for r in results] if keep_records else []
    return EnsembleResult(mean, stderr, n_trajectories, records)


def write_record(path: str | Path, record: HeterodyneRecord) -> None:
    """Header lines ``# key: value``, then ``m, re, im`` per step (exact float repr)."""
    header = {
        "dt": repr(float(record.dt)),
        "N": str(record.n_bins),
        "n_max": str(record.n_max),
        "seed": "" if record.seed is None else str(record.seed),
        "kernel_fingerprint": record.kernel_fingerprint,
        "system_fingerprint": record.system_fingerprint,
    }
    lines = [f"# {k}: {v}" for k, v in header.items()]
    lines += [f"{m}, {float(z.real)!r}, {float(z.imag)!r}" for m, z in enumerate(record.bins, 1)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_record(path: str | Path) -> HeterodyneRecord:
    header: dict[str, str] = {}
    bins = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            k, _, v = line[1:].partition(":")
            header[k.strip()] = v.strip()
            continue
        m, re, im = (f.strip() for f in line.split(","))
        if int(m) != len(bins) + 1:
            raise ValueError(f"{path}: expected step {len(bins) + 1}, got {m}")
        bins.append(complex(float(re), float(im)))
    seed = header.get("seed", "")
    return HeterodyneRecord(float(header["dt"]), np.array(bins, dtype=complex),
                            int(seed) if seed else None, int(header["N"]), int(header["n_max"]),
                            header.get("kernel_fingerprint", ""),
                            header.get("system_fingerprint", ""))


def write_conditional_states(path: str | Path, states: list[ConditionalMixedState]) -> None:
    """One line per step: ``m, weight, re(rho_00), im(rho_00), re(rho_01), ...`` (row-major)."""
    lines = []
    for st in states:
        entries = ", ".join(f"{float(z.real)!r}, {float(z.imag)!r}" for z in st.rho.ravel())
        lines.append(f"{st.step}, {st.weight!r}, {entries}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_conditional_states(path: str | Path) -> list[ConditionalMixedState]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        fields = [f.strip() for f in line.split(",")]
        step, weight = int(fields[0]), float(fields[1])
        vals = np.array([float(f) for f in fields[2:]])
        z = vals[0::2] + 1j * vals[1::2]
        d = math.isqrt(z.shape[0])
        out.append(ConditionalMixedState(step, z.reshape(d, d),
                                         math.log(weight) if weight > 0 else -math.inf))
    return out

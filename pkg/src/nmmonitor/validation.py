"""Quick invariant checks of every module, each reporting its measured defect."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import hilbert, kernel, lattice, monitor


@dataclass(frozen=True)
class Check:
    module: str
    name: str
    measured: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.measured <= self.tolerance)

    def row(self) -> dict:
        return {"module": self.module, "name": self.name, "measured": self.measured,
                "tolerance": self.tolerance, "passed": self.passed}


def _hilbert_checks(rng) -> list[Check]:
    a, b, c = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)) for n in (2, 3, 2))
    assoc = np.max(np.abs(hilbert.tensor(hilbert.tensor(a, b), c) - hilbert.tensor(a, hilbert.tensor(b, c))))
    space = hilbert.CompositeSpace((2, 3, 2))
    v = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    rho = np.outer(v, v.conj())
    tr = max(abs(np.trace(hilbert.partial_trace(rho, space, keep)) - np.trace(rho))
             for keep in ([0], [1], [2], [0, 2]))
    d = 5
    bop = hilbert.ladder(d - 1)
    comm = np.diag(bop @ bop.conj().T - bop.conj().T @ bop).real
    expected = np.ones(d)
    expected[-1] = -(d - 1)
    k = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    g = 1j * (k + k.conj().T)
    u = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    iso = abs(np.linalg.norm(hilbert.expm_apply(g, u)) - np.linalg.norm(u)) / np.linalg.norm(u)
    cutoff = 6
    nodes, weights = monitor.gaussian_quadrature(cutoff + 1)
    cs = hilbert.coherent_components(nodes[:, 0], cutoff)
    ident = np.einsum("q,qi,qj->ij", weights, cs, cs.conj())
    return [
        Check("hilbert", "tensor associativity", float(assoc), hilbert.ALGEBRA_TOL * 100),
        Check("hilbert", "partial trace preserves trace", float(tr), hilbert.ALGEBRA_TOL * 10),
        Check("hilbert", "truncated commutator diagonal", float(np.max(np.abs(comm - expected))),
              hilbert.ALGEBRA_TOL),
        Check("hilbert", "expm isometry (anti-Hermitian)", float(iso), hilbert.ISOMETRY_TOL),
        Check("hilbert", "coherent completeness", float(np.max(np.abs(ident - np.eye(cutoff + 1)))), 1e-8),
    ]


def _kernel_checks(rng, model: lattice.CollisionModel) -> list[Check]:
    kappa = model.kernel
    alpha = kernel.reconstruct(kappa)
    fac = kernel.factorize(alpha, kappa.n)
    # long enough window that the exponential tail beyond T is below 1e-8
    dt = 0.05
    exp_alpha = kernel.CorrelationFunction(dt, 0.5 * np.exp(-2 * np.arange(3200) * dt))
    fac_exp = kernel.factorize(exp_alpha, 400)
    white = kernel.sample_white_noise(20000, 1.0, int(rng.integers(2 ** 32)))
    n = len(white)
    mean = abs(white.bins.mean())
    return [
        Check("kernel", "factorize/reconstruct round trip (config kernel)", fac.residual, 1e-8),
        Check("kernel", "factorize/reconstruct round trip (exponential)", fac_exp.residual, 1e-8),
        Check("kernel", "white-noise mean", float(mean), 5 / math.sqrt(n)),
        Check("kernel", "white-noise E xi^2", float(abs(np.mean(white.bins ** 2))), 5 / math.sqrt(n)),
        Check("kernel", "white-noise E|xi|^2 - 1", float(abs(np.mean(abs(white.bins) ** 2) - 1)),
              5 * math.sqrt(2 / n)),
    ]


def _lattice_checks(model: lattice.CollisionModel, psi0: np.ndarray) -> list[Check]:
    g = model.generator
    rhos = lattice.evolve_nonselective(model.system, model.kernel, model.config, 20, psi0,
                                       model=model)
    trace_def = float(np.max(np.abs(np.trace(rhos, axis1=1, axis2=2) - 1)))
    min_eig = float(min(np.linalg.eigvalsh(r).min() for r in rhos))
    dt = 0.01
    decay = lattice.evolve_nonselective(lattice.SystemSpec.qubit_decay(),
                                        kernel.CouplingKernel.markov(1.0, dt),
                                        lattice.LatticeConfig(dt, 1, 2), 300, np.array([0, 1]))
    t = np.arange(301) * dt
    rel = float(np.max(np.abs(decay[:, 1, 1].real / np.exp(-t) - 1)))
    return [
        Check("lattice", "generator anti-Hermitian", float(np.max(np.abs(g + g.conj().T))),
              hilbert.ALGEBRA_TOL),
        Check("lattice", "non-selective trace preservation", trace_def, hilbert.ISOMETRY_TOL),
        Check("lattice", "non-selective positivity (-min eigenvalue)", max(0.0, -min_eig),
              hilbert.ISOMETRY_TOL),
        Check("lattice", "Markov decay vs exp(-t), relative", rel, 0.02),
    ]


def _monitor_checks(rng, model: lattice.CollisionModel, psi0: np.ndarray) -> list[Check]:
    steps = 2 * model.n_bins + 2
    traj = monitor.run_trajectory(model, steps, int(rng.integers(2 ** 32)), psi0)
    state = model.initial(psi0)
    for xi in traj.record.bins[: steps // 2]:
        state = monitor.advance(state, model, xi)
    collided = lattice.collide(state, model.unitary)
    nodes, area = monitor.radial_angular_grid(model.config.n_max + 2, 2 * model.config.n_max + 3)
    total = sum(a * monitor.bargmann_project(collided, 1, z).weight / collided.vector.weight
                for z, a in zip(nodes, area))
    keep = [i for i in range(collided.space.n_factors) if i != 1]
    traced = hilbert.reduced_from_vector(collided.psi, collided.space, keep)
    gq_nodes, gq_w = monitor.gaussian_quadrature(model.config.n_max + 1)
    avg = np.zeros_like(traced)
    for z, w in zip(gq_nodes[:, 0], gq_w):
        p = monitor.bargmann_project(collided, 1, z)
        scale = p.vector.weight / collided.vector.weight * math.pi * math.exp(abs(z) ** 2)
        avg += w * scale * np.outer(p.psi, p.psi.conj())
    retro_avg = monitor.quadrature_retrodicted_average(state, model.config.n_max + 1)
    s_path = rng.standard_normal(steps) + 1j * rng.standard_normal(steps)
    white = rng.standard_normal(steps) + 1j * rng.standard_normal(steps)
    from .lattice import convolve_drift

    record = monitor.HeterodyneRecord(model.config.dt,
                                      white + convolve_drift(model.kernel.theta, s_path))
    gir = monitor.girsanov_colored(record, model.kernel, s_path, innovations=white)
    return [
        Check("monitor", "heterodyne density normalization", abs(total - 1), 1e-8),
        Check("monitor", "Bargmann quadrature = partial trace", float(np.max(np.abs(avg - traced))), 1e-8),
        Check("monitor", "retrodicted quadrature = conditional mixed",
              float(np.max(np.abs(retro_avg - state.reduced_system()))), 1e-8),
        Check("monitor", "Girsanov convolved identity", gir.residual, 1e-10),
    ]


def run_all(model: lattice.CollisionModel, psi0: np.ndarray, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    suites: list[Callable[[], list[Check]]] = [
        lambda: _hilbert_checks(rng),
        lambda: _kernel_checks(rng, model),
        lambda: _lattice_checks(model, psi0),
        lambda: _monitor_checks(rng, model, psi0),
    ]
    out: list[Check] = []
    for suite in suites:
        out.extend(suite())
    return out

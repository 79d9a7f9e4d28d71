"""Bath correlation functions, causal coupling kernels and noise synthesis.

Discrete conventions (time step ``dt``):

* correlation from kernel:  ``alpha_m = dt * sum_k kappa_{m+k} conj(kappa_k)``
* colored noise:            ``a_m = sqrt(dt) * sum_k xi_bar_{m+k} conj(kappa_k)``

where ``xi_bar`` is bin-normalized white noise (``E|xi_bar|^2 = 1``).  The
colored path is anticipating: ``a_m`` reads bins at indices ``>= m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import scipy.linalg

PSD_RTOL = 1e-10

Normalization = Literal["bin", "continuum"]


class NotFactorizableError(ValueError):
    """The correlation's Toeplitz covariance is indefinite."""

    def __init__(self, min_eigenvalue: float, message: str | None = None):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(message or f"correlation is not positive semidefinite "
                                    f"(most negative eigenvalue {min_eigenvalue:.3e})")


@dataclass(frozen=True)
class CorrelationFunction:
    """Samples ``alpha_m``, ``m = 0..M-1``; negative lags are ``conj(alpha_m)``."""

    dt: float
    samples: np.ndarray
    stderr: np.ndarray | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=complex).ravel())

    def __len__(self) -> int:
        return self.samples.shape[0]

    def lag(self, m: int) -> complex:
        """Hermitian extension; zero beyond the stored support."""
        if abs(m) >= len(self):
            return 0j
        return self.samples[m] if m >= 0 else np.conj(self.samples[-m])

    def toeplitz(self, size: int | None = None) -> np.ndarray:
        size = len(self) if size is None else size
        col = np.zeros(size, dtype=complex)
        k = min(size, len(self))
        col[:k] = self.samples[:k]
        return scipy.linalg.toeplitz(col, col.conj())


@dataclass(frozen=True)
class CouplingKernel:
    """Causal coupling samples ``kappa_k = kappa(k dt)`` on the memory window ``[0, T)``."""

    dt: float
    samples: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        s = np.asarray(self.samples, dtype=complex).ravel()
        if s.shape[0] < 1:
            raise ValueError("a coupling kernel needs at least one sample")
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def memory_time(self) -> float:
        return self.n * self.dt

    @property
    def theta(self) -> np.ndarray:
        """Per-step collision amplitudes ``kappa_k * dt**1.5``."""
        return self.samples * self.dt ** 1.5

    @classmethod
    def markov(cls, gamma: float, dt: float) -> "CouplingKernel":
        return cls(dt, np.array([math.sqrt(gamma) / dt]))

    @classmethod
    def exponential(cls, gamma: float, lam: float, dt: float, n: int) -> "CouplingKernel":
        """``kappa(t) = sqrt(gamma*lam) exp(-lam t)``; correlation ``(gamma/2) exp(-lam t)``."""
        k = np.arange(n)
        return cls(dt, math.sqrt(gamma * lam) * np.exp(-lam * k * dt))

    @classmethod
    def zero(cls, dt: float, n: int) -> "CouplingKernel":
        return cls(dt, np.zeros(n))


@dataclass(frozen=True)
class NoisePath:
    dt: float
    bins: np.ndarray
    seed: int | None = None
    normalization: Normalization = "bin"

    def __post_init__(self):
        if self.normalization not in ("bin", "continuum"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        object.__setattr__(self, "bins", np.asarray(self.bins, dtype=complex))

    def __len__(self) -> int:
        return self.bins.shape[-1]

    def continuum(self) -> np.ndarray:
        return self.bins / math.sqrt(self.dt) if self.normalization == "bin" else self.bins

    def binned(self) -> np.ndarray:
        return self.bins if self.normalization == "bin" else self.bins * math.sqrt(self.dt)


def reconstruct(kappa: CouplingKernel) -> CorrelationFunction:
    """Correlation ``alpha_m`` for lags ``0..N-1`` produced by a causal kernel."""
    k = kappa.samples
    n = k.shape[0]
    alpha = np.array([np.vdot(k[: n - m], k[m:]) for m in range(n)]) * kappa.dt
    alpha[0] = alpha[0].real
    return CorrelationFunction(kappa.dt, alpha)


def _levinson_row(alpha: np.ndarray, window: int, n_out: int):
    """Last ``n_out`` entries of the final Cholesky row of the Toeplitz covariance.

    Returns ``(row, order, error)`` with ``row[k] = L[W-1, W-1-k]``.  If the
    prediction-error variance falls below the semidefinite floor the
    recursion stops and ``row`` is ``None``; ``order`` is where it stopped
    and ``error`` the offending variance.
    """
    alpha = alpha[:window]
    a0 = alpha[0].real
    floor = PSD_RTOL * a0
    # forward predictor: a[i-1] multiplies x_{t-i}
    a = np.zeros(window, dtype=complex)
    scratch = np.empty(window, dtype=complex)
    rev = alpha[::-1].copy()  # rev[W-1-m] = alpha_m, so descending lags are ascending slices
    err = a0
    row = np.zeros(n_out, dtype=complex)
    target = window - 1
    first_row_order = window - n_out
    for p in range(window):
        if p > 0:
            q = p - 1
            # sum_{i=1}^{q} a_i alpha_{p-i}
            acc = np.dot(a[:q], rev[window - p:window - 1]) if q else 0.0
            k = (alpha[p] - acc) / err
            if q:
                np.conjugate(a[q - 1::-1] if q > 1 else a[:1], out=scratch[:q])
                a[:q] -= k * scratch[:q]
            a[q] = k
            err = err * (1.0 - abs(k) ** 2)
            if err <= floor:
                return None, p, err
        if p >= first_row_order:
            # E[x_{W-1} conj(x_p - sum_i a_i x_{p-i})] / sqrt(err)
            base = target - p
            c = alpha[base] - np.vdot(a[:p], alpha[base + 1:base + p + 1])
            row[base] = c / math.sqrt(err)
    return row, window, err


@dataclass(frozen=True)
class Factorization:
    kernel: CouplingKernel
    residual: float
    window: int


def factorize(alpha: CorrelationFunction, n: int, window: int | None = None,
              target_residual: float = 1e-10, max_window: int = 16384) -> Factorization:
    """Causal kernel ``kappa`` (length ``n``) whose :func:`reconstruct` matches ``alpha``.

    The final row of the Cholesky factor of the Hermitian Toeplitz covariance,
    reversed, is the causal (minimum-phase) factor once the window is long
    enough.  It is obtained in O(W^2) through the Levinson recursion.  The
    window starts at ``8 n`` and doubles until the reconstruct residual
    drops below ``target_residual`` or ``max_window`` is reached.  Lags
    beyond the stored samples are taken as zero.
    """
    if n < 1:
        raise ValueError("kernel length must be >= 1")
    dt = alpha.dt
    a0 = alpha.samples[0]
    if abs(a0.imag) > PSD_RTOL * max(1.0, abs(a0)) or a0.real < 0:
        raise NotFactorizableError(min(a0.real, 0.0), "alpha_0 must be real and nonnegative")
    if a0.real == 0:
        if np.any(alpha.samples != 0):
            raise NotFactorizableError(float(-np.max(np.abs(alpha.samples))))
        return Factorization(CouplingKernel(dt, np.zeros(n)), 0.0, n)

    window = max(8 * n, n) if window is None else max(window, n)
    best = None
    while True:
        padded = np.zeros(window, dtype=complex)
        m = min(window, len(alpha))
        padded[:m] = alpha.samples[:m]
        row, reached, err = _levinson_row(padded, window, n)
        if row is None:
            if err < -PSD_RTOL * a0.real:
                size = reached + 1
                ev = scipy.linalg.eigvalsh(alpha.toeplitz(size) if size <= len(alpha)
                                           else CorrelationFunction(dt, padded).toeplitz(size),
                                           subset_by_index=[0, 0])[0]
                raise NotFactorizableError(float(ev))
            # singular at order `reached`: only a genuinely semidefinite extension
            # (checked on the padded window) is accepted
            size = min(window, 2048)
            ev = scipy.linalg.eigvalsh(CorrelationFunction(dt, padded).toeplitz(size),
                                       subset_by_index=[0, 0])[0]
            if ev < -PSD_RTOL * a0.real * size:
                raise NotFactorizableError(float(ev))
            window = reached
            if window < 1:
                raise NotFactorizableError(0.0)
            row, _, _ = _levinson_row(padded, window, min(n, window))
            row = np.concatenate([row, np.zeros(n - row.shape[0])])
            kernel = _fix_phase(CouplingKernel(dt, row / math.sqrt(dt)))
            return Factorization(kernel, _residual(kernel, alpha), window)
        kernel = _fix_phase(CouplingKernel(dt, row / math.sqrt(dt)))
        res = _residual(kernel, alpha)
        if best is None or res < best.residual:
            best = Factorization(kernel, res, window)
        if res <= target_residual or 2 * window > max_window:
            return best
        window *= 2


def _fix_phase(kappa: CouplingKernel) -> CouplingKernel:
    s = kappa.samples
    mag = np.abs(s)
    nz = np.flatnonzero(mag > 1e-14 * max(mag.max(), 1e-300))
    if nz.size == 0:
        return kappa
    ph = s[nz[0]] / mag[nz[0]]
    return CouplingKernel(kappa.dt, s * np.conj(ph))


def _residual(kappa: CouplingKernel, alpha: CorrelationFunction) -> float:
    rec = reconstruct(kappa).samples
    m = min(len(rec), len(alpha))
    target = np.zeros(len(rec), dtype=complex)
    target[:m] = alpha.samples[:m]
    return float(np.max(np.abs(rec - target)))


def derive_seed(seed: int, index: int) -> int:
    """Deterministic per-trajectory seed: ``SeedSequence(seed, spawn_key=(index,))``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def complex_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Circular complex Gaussian with ``E|z|^2 = 1``."""
    z = rng.standard_normal(size=(2,) + tuple(np.atleast_1d(size)))
    return (z[0] + 1j * z[1]) / math.sqrt(2.0)


def sample_white_noise(n: int, dt: float, seed: int) -> NoisePath:
    if n < 1:
        raise ValueError("need at least one bin")
    rng = np.random.default_rng(seed)
    return NoisePath(dt, complex_normal(rng, n), seed, "bin")


def color(xi: NoisePath, kappa: CouplingKernel, length: int | None = None) -> NoisePath:
    """Anticipating convolution of white noise with ``conj(kappa)``.

    ``xi.bins`` may carry leading batch axes; time is the last axis.  The
    output has ``len(xi) - N + 1`` samples unless ``length`` asks for fewer.
    """
    n = kappa.n
    bins = xi.binned()
    available = bins.shape[-1] - n + 1
    length = available if length is None else length
    if length < 1 or length > available:
        raise ValueError(f"path of {bins.shape[-1]} bins is too short for {length} colored "
                         f"samples with a {n}-bin kernel (needs {length + n - 1})")
    out = np.zeros(bins.shape[:-1] + (length,), dtype=complex)
    for k, c in enumerate(np.conj(kappa.samples)):
        if c != 0:
            out += c * bins[..., k:k + length]
    return NoisePath(xi.dt, out * math.sqrt(xi.dt), xi.seed, "continuum")


def estimate_correlation(paths: Sequence[NoisePath] | NoisePath, max_lag: int) -> CorrelationFunction:
    """Empirical ``E[a_{t+m} conj(a_t)]`` in continuum normalization, with standard errors.

    Each path is averaged over time first; the standard error comes from the
    spread of those per-path averages, so paths must be independent.
    """
    if isinstance(paths, NoisePath):
        data = np.atleast_2d(paths.continuum())
        dt = paths.dt
    else:
        if len(paths) == 0:
            raise ValueError("empty ensemble")
        dt = paths[0].dt
        lengths = {len(p) for p in paths}
        if len(lengths) != 1:
            raise ValueError("paths must have equal lengths")
        data = np.stack([p.continuum() for p in paths])
    n_paths, length = data.shape
    if max_lag >= length:
        raise ValueError("max_lag must be shorter than the paths")
    est = np.zeros(max_lag + 1, dtype=complex)
    se = np.zeros(max_lag + 1)
    for m in range(max_lag + 1):
        per_path = np.mean(data[:, m:] * np.conj(data[:, : length - m]), axis=1)
        est[m] = per_path.mean()
        if n_paths > 1:
            se[m] = math.sqrt((per_path.real.var(ddof=1) + per_path.imag.var(ddof=1)) / n_paths)
    return CorrelationFunction(dt, est, se)


def write_samples(path: str | Path, dt: float, samples: np.ndarray, kind: str) -> None:
    """Text format: ``# kind``, ``# dt``, ``# N`` header, then ``index, re, im`` lines."""
    samples = np.asarray(samples, dtype=complex)
    lines = [f"# kind: {kind}", f"# dt: {float(dt)!r}", f"# N: {samples.shape[0]}"]
    lines += [f"{i}, {float(z.real)!r}, {float(z.imag)!r}" for i, z in enumerate(samples)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_samples(path: str | Path) -> tuple[str, float, np.ndarray]:
    header: dict[str, str] = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
            continue
        i, re, im = (f.strip() for f in line.split(","))
        if int(i) != len(rows):
            raise ValueError(f"{path}: expected index {len(rows)}, got {i}")
        rows.append(complex(float(re), float(im)))
    n = int(header["N"])
    if n != len(rows):
        raise ValueError(f"{path}: header says N={n}, file has {len(rows)} samples")
    return header.get("kind", ""), float(header["dt"]), np.array(rows, dtype=complex)


def write_kernel(path: str | Path, kappa: CouplingKernel) -> None:
    write_samples(path, kappa.dt, kappa.samples, "kernel")


def read_kernel(path: str | Path) -> CouplingKernel:
    _, dt, s = read_samples(path)
    return CouplingKernel(dt, s)


def write_correlation(path: str | Path, alpha: CorrelationFunction) -> None:
    write_samples(path, alpha.dt, alpha.samples, "correlation")


def read_correlation(path: str | Path) -> CorrelationFunction:
    _, dt, s = read_samples(path)
    return CorrelationFunction(dt, s)

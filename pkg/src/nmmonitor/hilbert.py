"""Dense linear algebra on small tensor-product Hilbert spaces.

Operators and states are plain complex ``numpy`` arrays. Composite spaces
flatten row-major over their factors with factor 0 (the system) slowest;
every other module relies on this single convention.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

DEFAULT_DIM_CAP = 4096
ALGEBRA_TOL = 1e-12
ISOMETRY_TOL = 1e-10


class DimensionCapError(ValueError):
    """Raised when a composite dimension would exceed the configured cap."""


class NumericError(ArithmeticError):
    """Raised on non-finite input to a numerical kernel."""


class TruncationWarning(UserWarning):
    """A coherent amplitude lies outside the Fock truncation's validity radius."""


def is_hermitian(a: np.ndarray, tol: float = ALGEBRA_TOL) -> bool:
    a = np.asarray(a)
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    return a.shape[0] == a.shape[1] and bool(np.all(np.abs(a - a.conj().T) <= tol * scale))


def is_antihermitian(a: np.ndarray, tol: float = ALGEBRA_TOL) -> bool:
    a = np.asarray(a)
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    return a.shape[0] == a.shape[1] and bool(np.all(np.abs(a + a.conj().T) <= tol * scale))


@dataclass(frozen=True)
class CompositeSpace:
    """Ordered tensor-product space; factor 0 is the slowest index."""

    factor_dims: tuple[int, ...]
    total_dim: int = field(init=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.factor_dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"factor dimensions must be positive, got {dims}")
        object.__setattr__(self, "factor_dims", dims)
        object.__setattr__(self, "total_dim", math.prod(dims))

    @property
    def n_factors(self) -> int:
        return len(self.factor_dims)

    def without(self, index: int) -> "CompositeSpace":
        self._check(index)
        return CompositeSpace(self.factor_dims[:index] + self.factor_dims[index + 1:])

    def appended(self, dim: int) -> "CompositeSpace":
        return CompositeSpace(self.factor_dims + (dim,))

    def _check(self, index: int) -> None:
        if not 0 <= index < len(self.factor_dims):
            raise IndexError(f"factor {index} out of range for {len(self.factor_dims)} factors")


@dataclass(frozen=True)
class StateVector:
    """Unit-norm amplitudes plus the log of a carried likelihood factor.

    The unnormalized conditional vector is ``sqrt(weight) * amplitudes``.
    The log form keeps long records from underflowing.
    """

    amplitudes: np.ndarray
    log_weight: float = 0.0

    @property
    def dim(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def weight(self) -> float:
        return math.exp(self.log_weight)

    @classmethod
    def from_unnormalized(cls, v: np.ndarray, log_weight: float = 0.0) -> "StateVector":
        v = np.asarray(v, dtype=complex)
        norm2 = float(np.vdot(v, v).real)
        if not norm2 > 0.0:
            raise ValueError("zero-norm vector cannot be normalized")
        return cls(v / math.sqrt(norm2), log_weight + math.log(norm2))


def tensor(a: np.ndarray, b: np.ndarray, dim_cap: int = DEFAULT_DIM_CAP) -> np.ndarray:
    """Kronecker product with ``a`` on the slow index."""
    a = np.asarray(a)
    b = np.asarray(b)
    rows = a.shape[0] * b.shape[0]
    cols = (a.shape[1] if a.ndim > 1 else 1) * (b.shape[1] if b.ndim > 1 else 1)
    if max(rows, cols) > dim_cap:
        raise DimensionCapError(f"tensor dimension {rows}x{cols} exceeds cap {dim_cap}")
    return np.kron(a, b)


def kron_all(factors: Iterable[np.ndarray], dim_cap: int = DEFAULT_DIM_CAP) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for f in factors:
        out = tensor(out, f, dim_cap)
    return out


def embed(op: np.ndarray, index: int, space: CompositeSpace) -> np.ndarray:
    """Lift a single-factor operator to the whole composite space."""
    space._check(index)
    left = math.prod(space.factor_dims[:index])
    right = math.prod(space.factor_dims[index + 1:])
    return np.kron(np.kron(np.eye(left), op), np.eye(right))


def partial_trace(rho: np.ndarray, space: CompositeSpace, keep: Sequence[int]) -> np.ndarray:
    """Reduced density matrix on the factors in ``keep`` (returned in ascending order)."""
    rho = np.asarray(rho)
    if rho.shape != (space.total_dim, space.total_dim):
        raise ValueError(f"rho has shape {rho.shape}, space has dimension {space.total_dim}")
    keep = sorted(set(int(k) for k in keep))
    for k in keep:
        space._check(k)
    n = space.n_factors
    traced = [i for i in range(n) if i not in keep]
    t = rho.reshape(space.factor_dims * 2)
    # einsum labels: ket axes 0..n-1, bra axes n..2n-1; traced bra axes reuse the ket label
    ket = list(range(n))
    bra = [i if i in traced else n + i for i in range(n)]
    out = [i for i in keep] + [n + i for i in keep]
    reduced = np.einsum(t, ket + bra, out)
    d = math.prod(space.factor_dims[i] for i in keep)
    return reduced.reshape(d, d)


def reduced_from_vector(psi: np.ndarray, space: CompositeSpace, keep: Sequence[int]) -> np.ndarray:
    """Partial trace of ``|psi><psi|`` without forming the full projector."""
    keep = sorted(set(int(k) for k in keep))
    for k in keep:
        space._check(k)
    traced = [i for i in range(space.n_factors) if i not in keep]
    t = np.transpose(np.asarray(psi).reshape(space.factor_dims), keep + traced)
    d = math.prod(space.factor_dims[i] for i in keep)
    m = t.reshape(d, -1)
    return m @ m.conj().T


def ladder(cutoff: int) -> np.ndarray:
    """Truncated annihilation operator on Fock states ``0..cutoff``."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    return np.diag(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), k=1).astype(complex)


def coherent(xi: complex, cutoff: int, radius: float | None = None) -> np.ndarray:
    """Unnormalized Bargmann vector ``exp(xi b^dag)|0>`` truncated at ``cutoff``.

    Component ``n`` is ``xi**n / sqrt(n!)``. Amplitudes with
    ``|xi|**2 > radius`` (default ``cutoff / 2``) trigger a
    :class:`TruncationWarning` but are still returned.
    """
    radius = cutoff / 2 if radius is None else radius
    if abs(xi) ** 2 > radius:
        warnings.warn(f"|xi|^2 = {abs(xi) ** 2:.3g} exceeds truncation radius {radius:.3g}",
                      TruncationWarning, stacklevel=2)
    return coherent_components(np.asarray(xi, dtype=complex), cutoff)


def coherent_components(xi: np.ndarray, cutoff: int) -> np.ndarray:
    """Vectorized Bargmann components; the Fock index is the last axis."""
    xi = np.asarray(xi, dtype=complex)
    n = np.arange(cutoff + 1)
    inv_sqrt_fact = np.exp(-0.5 * np.array([math.lgamma(k + 1) for k in n]))
    powers = np.ones(xi.shape + (cutoff + 1,), dtype=complex)
    for k in range(1, cutoff + 1):
        powers[..., k] = powers[..., k - 1] * xi
    return powers * inv_sqrt_fact


def expm(g: np.ndarray) -> np.ndarray:
    """Matrix exponential by Pade scaling-and-squaring."""
    g = np.asarray(g, dtype=complex)
    if not np.all(np.isfinite(g)):
        raise NumericError("generator has non-finite entries")
    return scipy.linalg.expm(g)


def expm_apply(g: np.ndarray, v: np.ndarray | StateVector) -> np.ndarray | StateVector:
    """Return ``exp(g) @ v``; a :class:`StateVector` keeps its weight and is renormalized."""
    if isinstance(v, StateVector):
        out = expm(g) @ v.amplitudes
        return StateVector.from_unnormalized(out, v.log_weight)
    v = np.asarray(v, dtype=complex)
    if g.shape[1] != v.shape[0]:
        raise ValueError(f"generator {g.shape} does not act on vector of length {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise NumericError("vector has non-finite entries")
    return expm(g) @ v


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.trace(rho @ rho)))


def trace_distance(a: np.ndarray, b: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(a - b))))


def fingerprint(*arrays: np.ndarray) -> str:
    """Short content hash used to tie records to the kernel/system that produced them."""
    import hashlib

    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype=complex))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]

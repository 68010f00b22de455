"""Truncated Fock space and two-level operator algebra.

The joint space is ordered oscillator ⊗ atom, so the basis state |n, s>
sits at index ``2*n + s`` with ``s = 0`` for the lower atomic level |a>
and ``s = 1`` for the upper level |b>.  Every composite object carries
its :class:`CompositeSpace` so that mixing truncations is an error
rather than a silent broadcast.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import expm
from scipy.stats import poisson

ATOM_LEVELS = ("a", "b")
ATOM_INDEX = {"a": 0, "b": 1}

# Positivity of every DensityMatrix is checked only when this is set; the
# eigenvalue call dominates the cost of small Monte Carlo steps otherwise.
CHECK_POSITIVITY = os.environ.get("RYDTOMO_CHECK_PSD", "") not in ("", "0")

LEAKAGE_TOLERANCE = 1e-4
DISPLACEMENT_LEAKAGE_TOLERANCE = 1e-6


class TruncationWarning(UserWarning):
    """Population is approaching or leaving the truncated Fock space."""


@dataclass(frozen=True)
class FockSpace:
    n_max: int = 15

    def __post_init__(self) -> None:
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max!r}")

    @property
    def dim(self) -> int:
        return self.n_max + 1


@dataclass(frozen=True)
class CompositeSpace:
    """Oscillator ⊗ two-level atom with levels (a, b)."""

    oscillator: FockSpace = field(default_factory=FockSpace)

    @property
    def dim(self) -> int:
        return 2 * self.oscillator.dim

    @property
    def n_max(self) -> int:
        return self.oscillator.n_max

    def index(self, n: int, level: str) -> int:
        return 2 * n + ATOM_INDEX[level]


def _frozen(matrix: NDArray) -> NDArray[np.complex128]:
    m = np.array(matrix, dtype=np.complex128, copy=True)
    m.flags.writeable = False
    return m


@dataclass(frozen=True, eq=False)
class CompositeOperator:
    """A matrix on the joint space, optionally checked to be Hermitian."""

    matrix: NDArray[np.complex128]
    space: CompositeSpace
    hermitian: bool = False

    def __post_init__(self) -> None:
        m = _frozen(self.matrix)
        if m.shape != (self.space.dim, self.space.dim):
            raise ValueError(f"operator shape {m.shape} does not match space dimension {self.space.dim}")
        if self.hermitian and not np.allclose(m, m.conj().T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(m).max())):
            raise ValueError("operator flagged Hermitian but differs from its conjugate transpose")
        object.__setattr__(self, "matrix", m)

    def __matmul__(self, other: CompositeOperator) -> CompositeOperator:
        _same_space(self.space, other.space)
        return CompositeOperator(self.matrix @ other.matrix, self.space)

    def __add__(self, other: CompositeOperator) -> CompositeOperator:
        _same_space(self.space, other.space)
        return CompositeOperator(self.matrix + other.matrix, self.space, self.hermitian and other.hermitian)

    def dag(self) -> CompositeOperator:
        return CompositeOperator(self.matrix.conj().T, self.space, self.hermitian)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Joint oscillator-atom state.  Validated on construction."""

    matrix: NDArray[np.complex128]
    space: CompositeSpace

    def __post_init__(self) -> None:
        m = _frozen(self.matrix)
        if m.shape != (self.space.dim, self.space.dim):
            raise ValueError(f"density matrix shape {m.shape} does not match space dimension {self.space.dim}")
        tr = np.trace(m)
        if abs(tr - 1.0) > 1e-8:
            raise ValueError(f"density matrix trace {tr.real:.12g} differs from 1")
        if np.abs(m - m.conj().T).max() > 1e-10:
            raise ValueError("density matrix is not Hermitian")
        if CHECK_POSITIVITY:
            lam = np.linalg.eigvalsh(m).min()
            if lam < -1e-8:
                raise ValueError(f"density matrix has negative eigenvalue {lam:.3g}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def product(cls, rho_osc: NDArray, atom_level: str | NDArray, space: CompositeSpace) -> DensityMatrix:
        """ϱ ⊗ |μ><μ| (or ϱ ⊗ ρ_atom for a 2x2 array)."""
        if isinstance(atom_level, str):
            rho_atom = np.zeros((2, 2), complex)
            rho_atom[ATOM_INDEX[atom_level], ATOM_INDEX[atom_level]] = 1.0
        else:
            rho_atom = np.asarray(atom_level, complex)
        rho_osc = np.asarray(rho_osc, complex)
        if rho_osc.shape != (space.oscillator.dim,) * 2:
            raise ValueError("oscillator state does not match the space")
        return cls(np.kron(rho_osc, rho_atom), space)

    def oscillator(self) -> NDArray[np.complex128]:
        return partial_trace_atom(self.matrix)

    def atom(self) -> NDArray[np.complex128]:
        return partial_trace_oscillator(self.matrix)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix).min())


def _same_space(s1: CompositeSpace, s2: CompositeSpace) -> None:
    if s1 != s2:
        raise ValueError(f"space mismatch: {s1} vs {s2}")


def ladder_operators(space: FockSpace) -> tuple[NDArray, NDArray, NDArray]:
    """Return (ĉ, ĉ†, n̂) on the truncated space."""
    if space.n_max < 1:
        raise ValueError("n_max must be >= 1")
    c = np.diag(np.sqrt(np.arange(1, space.dim)), k=1).astype(complex)
    cdag = c.conj().T
    return c, cdag, cdag @ c


def number_operator(space: FockSpace) -> NDArray:
    return np.diag(np.arange(space.dim)).astype(complex)


def parity_operator(space: FockSpace) -> NDArray:
    return np.diag((-1.0) ** np.arange(space.dim)).astype(complex)


def sigma(upper: str, lower: str) -> NDArray:
    """Atomic transition operator σ_{μ'μ} = |μ'><μ|."""
    s = np.zeros((2, 2), complex)
    s[ATOM_INDEX[upper], ATOM_INDEX[lower]] = 1.0
    return s


def coherent_leakage(alpha: complex, n_max: int) -> float:
    """Population of |α> above n_max (Poisson tail)."""
    return float(poisson.sf(n_max, abs(alpha) ** 2))


def displacement_operator(space: FockSpace, alpha: complex) -> NDArray:
    """D(α) = exp(α ĉ† − α* ĉ) by dense matrix exponential."""
    leak = coherent_leakage(alpha, space.n_max)
    if leak > DISPLACEMENT_LEAKAGE_TOLERANCE:
        warnings.warn(
            f"D({alpha:.4g})|0> leaks {leak:.2e} of its population above n_max={space.n_max}",
            TruncationWarning,
            stacklevel=2,
        )
    c, cdag, _ = ladder_operators(space)
    return expm(alpha * cdag - np.conj(alpha) * c)


def coherent_state(space: FockSpace, alpha: complex) -> NDArray:
    """Normalised truncated coherent-state vector from the Poisson amplitudes."""
    n = np.arange(space.dim)
    logfact = np.cumsum(np.log(np.maximum(n, 1)))
    amp = np.exp(-abs(alpha) ** 2 / 2 - 0.5 * logfact) * np.power(complex(alpha), n)
    return amp / np.linalg.norm(amp)


def fock_state(space: FockSpace, n: int) -> NDArray:
    v = np.zeros(space.dim, complex)
    v[n] = 1.0
    return v


def embed(op: NDArray, subsystem: Literal["oscillator", "atom"], space: CompositeSpace) -> CompositeOperator:
    op = np.asarray(op, complex)
    if subsystem == "oscillator":
        if op.shape != (space.oscillator.dim,) * 2:
            raise ValueError(f"oscillator operator of shape {op.shape} does not fit n_max={space.n_max}")
        m = np.kron(op, np.eye(2))
    elif subsystem == "atom":
        if op.shape != (2, 2):
            raise ValueError(f"atom operator must be 2x2, got {op.shape}")
        m = np.kron(np.eye(space.oscillator.dim), op)
    else:
        raise ValueError(f"unknown subsystem {subsystem!r}")
    return CompositeOperator(m, space)


def partial_trace_atom(rho: NDArray) -> NDArray:
    """Reduced oscillator matrix ϱ = tr_atom ρ."""
    d = rho.shape[0] // 2
    r = np.asarray(rho).reshape(d, 2, d, 2)
    return np.einsum("isjs->ij", r)


def partial_trace_oscillator(rho: NDArray) -> NDArray:
    d = rho.shape[0] // 2
    r = np.asarray(rho).reshape(d, 2, d, 2)
    return np.einsum("nsnt->st", r)


def fidelity(rho: NDArray, sigma_: NDArray) -> float:
    """Uhlmann fidelity (tr √(√ρ σ √ρ))² for density matrices or state vectors."""
    rho = np.asarray(rho, complex)
    sigma_ = np.asarray(sigma_, complex)
    if rho.ndim == 1 and sigma_.ndim == 1:
        return float(abs(np.vdot(rho, sigma_)) ** 2)
    if sigma_.ndim == 1:
        rho, sigma_ = sigma_, rho
    if rho.ndim == 1:
        return float(np.real(np.vdot(rho, sigma_ @ rho)))
    lam, v = np.linalg.eigh(rho)
    sq = (v * np.sqrt(np.clip(lam, 0, None))) @ v.conj().T
    mu = np.linalg.eigvalsh(sq @ sigma_ @ sq)
    return float(np.sum(np.sqrt(np.clip(mu, 0, None))) ** 2)


def top_population(rho_osc: NDArray, levels: int = 2) -> float:
    return float(np.real(np.diag(rho_osc)[-levels:].sum()))


def check_leakage(rho_osc: NDArray, where: str = "", tolerance: float = LEAKAGE_TOLERANCE) -> float:
    """Warn when the top two Fock levels carry more than ``tolerance``."""
    p = top_population(rho_osc)
    if p > tolerance:
        warnings.warn(
            f"{where or 'state'} has population {p:.2e} in the top two Fock levels",
            TruncationWarning,
            stacklevel=2,
        )
    return p

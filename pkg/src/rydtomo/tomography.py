"""Wigner tomography by displacement and QND phonon counting.

For each grid point α the prepared state is displaced by −α with driven
atoms, a K-atom QND sequence collapses it onto a Fock state, and the
histogram p̃_n over N_s repetitions gives W(α) = (2/π) Σ (−1)ⁿ p̃_n.

Exact mode skips the Monte Carlo: it applies D(−α) as an operator, in a
Fock space padded until truncation is negligible, and reads the diagonal.

Random numbers come from one master seed.  Work unit (pixel p, sample s)
uses ``SeedSequence(master, spawn_key=(p, s))``, i.e. the s-th child of the
p-th child, so results do not depend on how units are scheduled.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import expm

from .control import DisplacementPlan, displace_array, plan_displacement, solve_drive_for_target
from .dissipation import Decoherence
from .hilbert import LEAKAGE_TOLERANCE, FockSpace, coherent_state, ladder_operators
from .propagator import MONTE_CARLO, PropagationConfig
from .ramsey import MeasurementRecord, qnd_sequence_array
from .system_model import SystemParams

MapFn = Callable[[Callable, Iterable], Iterable]

# Largest Fock space exact mode will pad to.
EXACT_PAD_LIMIT = 200
# Default half-width of stochastic grids.  Larger displacements push the
# state far up the Fock ladder and approach the drive-amplitude cap.
STOCHASTIC_EXTENT = 1.5


@dataclass(frozen=True)
class InitialStateSpec:
    """Oscillator state to be reconstructed.

    ``weights`` holds (n, amplitude) pairs for superpositions and is
    normalised on preparation.
    """

    kind: Literal["fock", "coherent", "superposition", "thermal"]
    n: int = 0
    alpha: complex = 0j
    weights: tuple[tuple[int, complex], ...] = ()
    nbar: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("fock", "coherent", "superposition", "thermal"):
            raise ValueError(f"unknown state kind {self.kind!r}")
        if self.kind == "fock" and self.n < 0:
            raise ValueError("Fock index must be >= 0")
        if self.kind == "superposition":
            if not self.weights or any(n < 0 for n, _ in self.weights):
                raise ValueError("superposition needs (n >= 0, amplitude) pairs")
            if math.fsum(abs(complex(w)) ** 2 for _, w in self.weights) == 0:
                raise ValueError("superposition weights are not normalisable")
        if self.kind == "thermal" and not self.nbar >= 0:
            raise ValueError("thermal occupation must be >= 0")

    @classmethod
    def fock(cls, n: int) -> InitialStateSpec:
        return cls("fock", n=n)

    @classmethod
    def coherent(cls, alpha: complex) -> InitialStateSpec:
        return cls("coherent", alpha=complex(alpha))

    @classmethod
    def superposition(cls, weights: dict[int, complex] | Iterable[tuple[int, complex]]) -> InitialStateSpec:
        items = weights.items() if isinstance(weights, dict) else weights
        return cls("superposition", weights=tuple((int(n), complex(w)) for n, w in items))

    @classmethod
    def thermal(cls, nbar: float) -> InitialStateSpec:
        return cls("thermal", nbar=float(nbar))

    @property
    def top_level(self) -> int:
        """Highest Fock level with appreciable weight, for padding estimates."""
        if self.kind == "fock":
            return self.n
        if self.kind == "superposition":
            return max(n for n, _ in self.weights)
        if self.kind == "coherent":
            return int(math.ceil(abs(self.alpha) ** 2))
        return int(math.ceil(self.nbar))


def prepare_initial_state(spec: InitialStateSpec, space: FockSpace) -> NDArray:
    d = space.dim
    if spec.kind == "fock":
        if spec.n > space.n_max:
            raise ValueError(f"|{spec.n}> lies outside n_max={space.n_max}")
        psi = np.zeros(d, complex)
        psi[spec.n] = 1
    elif spec.kind == "coherent":
        psi = coherent_state(space, spec.alpha)
    elif spec.kind == "superposition":
        psi = np.zeros(d, complex)
        for n, w in spec.weights:
            if n > space.n_max:
                raise ValueError(f"|{n}> lies outside n_max={space.n_max}")
            psi[n] += w
        psi /= np.linalg.norm(psi)
    else:
        # geometric distribution, renormalised on the truncated space
        if spec.nbar == 0:
            p = np.zeros(d)
            p[0] = 1
        else:
            q = spec.nbar / (1 + spec.nbar)
            p = q ** np.arange(d)
            p /= p.sum()
        return np.diag(p).astype(complex)
    return np.outer(psi, psi.conj())


def wigner_point(p_tilde: NDArray) -> float:
    p = np.asarray(p_tilde, float)
    if abs(p.sum() - 1) > 1e-9 or np.any(p < 0):
        raise ValueError("p̃ must be a normalised distribution")
    parity = 1 - 2 * (np.arange(p.size) % 2)
    return float(2 / math.pi * (parity @ p))


def analytic_wigner(psi: NDArray, alpha: complex) -> float:
    """W of a pure state from the displaced-parity formula, for tests and references."""
    space = FockSpace(psi.size - 1)
    c, cdag, _ = ladder_operators(space)
    D = expm(-alpha * cdag + np.conj(alpha) * c)
    p = np.abs(D @ psi) ** 2
    return wigner_point(p / p.sum())


def wigner_of_density(rho_osc: NDArray, grid: NDArray) -> NDArray:
    """W over ``grid`` for an oscillator density matrix, by displaced parity.

    The state is embedded in a padded Fock space so that displacement does
    not run into the cutoff.
    """
    grid = np.asarray(grid, complex)
    d = rho_osc.shape[0]
    r = float(np.abs(grid).max(initial=0.0)) + math.sqrt(d)
    dim = int(min(EXACT_PAD_LIMIT, max(d, math.ceil((r + 7) ** 2))))
    rho = np.zeros((dim, dim), complex)
    rho[:d, :d] = rho_osc
    c, cdag, _ = ladder_operators(FockSpace(dim - 1))
    parity = 1 - 2 * (np.arange(dim) % 2)
    out = np.empty(grid.shape)
    for idx, a in np.ndenumerate(grid):
        D = expm(-a * cdag + np.conj(a) * c)
        out[idx] = 2 / math.pi * float(np.real(np.einsum("ij,jk,ik->i", D, rho, D.conj())) @ parity)
    return out


# --------------------------------------------------------------------------
# exact mode


def _padded_dim(spec: InitialStateSpec, alpha_max: float, n_max: int) -> int:
    # Displacing by |α| spreads the state to about (|α| + √n)² ± a few
    # widths; the Poisson tail then drops faster than exponentially.
    r = alpha_max + math.sqrt(spec.top_level + 1)
    return int(min(EXACT_PAD_LIMIT, max(n_max + 1, math.ceil((r + 7) ** 2))))


def exact_distribution(spec: InitialStateSpec, alpha: complex, n_max: int, dim: int | None = None) -> NDArray:
    """Diagonal of D(−α) ϱ D(−α)† on the padded space.

    Levels above n_max are kept: the parity sum needs them, even though a
    collapse run on the physical space could never report them.
    """
    dim = dim or _padded_dim(spec, abs(alpha), n_max)
    space = FockSpace(dim - 1)
    if spec.kind in ("fock", "superposition") and spec.top_level > space.n_max:
        raise ValueError("state does not fit the padded space")
    rho = prepare_initial_state(spec, space)
    c, cdag, _ = ladder_operators(space)
    D = expm(-alpha * cdag + np.conj(alpha) * c)
    p = np.real(np.einsum("ij,jk,ik->i", D, rho, D.conj()))
    return np.clip(p, 0, None)


def required_n_max(spec: InitialStateSpec, alpha: complex, n_min: int, tolerance: float = 0.1 * LEAKAGE_TOLERANCE) -> int:
    """Smallest cutoff ≥ n_min whose top two levels hold < ``tolerance`` of D(−α)ϱD(−α)†."""
    p = exact_distribution(spec, alpha, n_min)
    tail = np.cumsum(p[::-1])[::-1]  # tail[n] = population at n and above
    for n in range(max(n_min, 1), p.size - 1):
        if tail[n - 1] < tolerance:
            return n
    raise ValueError(f"displacement {alpha} needs more than {p.size - 1} Fock levels")


# --------------------------------------------------------------------------
# stochastic mode


@dataclass(frozen=True)
class TomographySettings:
    N_atoms: int = 8
    K_atoms: int = 43
    method: Literal["a", "b"] = "a"
    decoherence: Decoherence = Decoherence()
    propagation: PropagationConfig = MONTE_CARLO
    drive_ramp: float = 0.0

    def __post_init__(self) -> None:
        if self.method not in ("a", "b"):
            raise ValueError("method must be 'a' or 'b'")
        if self.N_atoms < 0 or self.K_atoms < 1:
            raise ValueError("need N_atoms >= 0 and K_atoms >= 1")


@dataclass(frozen=True)
class SampleResult:
    pixel: int
    sample: int
    record: MeasurementRecord

    def estimate(self, method: str) -> int | None:
        return self.record.fock_estimate_a if method == "a" else self.record.fock_estimate_b


@dataclass(frozen=True)
class PhononEstimate:
    p_tilde: NDArray
    counts: NDArray
    undetermined: int
    samples: tuple[SampleResult, ...] = field(repr=False)


def displacement_plan_for(alpha: complex, params: SystemParams, N_atoms: int, ramp: float = 0.0) -> DisplacementPlan:
    """Plan displacing the oscillator by −α."""
    if N_atoms == 0:
        if alpha != 0:
            raise ValueError("a non-zero displacement needs atoms")
        return DisplacementPlan(0, 0j, params.drive_beam.tau, 0.0, 0j, 0j, 0.0, ramp)
    omega0 = solve_drive_for_target(-alpha, N_atoms, params, ramp=ramp)
    return plan_displacement(params, omega0, N_atoms, ramp)


def run_sample(
    spec: InitialStateSpec,
    plan: DisplacementPlan,
    params: SystemParams,
    settings: TomographySettings,
    rng: np.random.Generator,
    pixel: int = 0,
    sample: int = 0,
) -> SampleResult:
    """Prepare → displace → QND-collapse, once."""
    rho = prepare_initial_state(spec, params.space.oscillator)
    dec, cfg = settings.decoherence, settings.propagation
    rho = displace_array(rho, params, plan, rng, dec, cfg)
    _, record = qnd_sequence_array(rho, params, settings.K_atoms, rng, dec, cfg=cfg)
    return SampleResult(pixel, sample, record)


def _histogram(results: Iterable[SampleResult], method: str, dim: int) -> tuple[NDArray, NDArray, int]:
    counts = np.zeros(dim, int)
    undetermined = 0
    for r in results:
        n = r.estimate(method)
        if n is None:
            undetermined += 1
        else:
            counts[n] += 1
    total = counts.sum()
    p = counts / total if total else np.full(dim, np.nan)
    return p, counts, undetermined


def estimate_phonon_distribution(
    spec: InitialStateSpec,
    alpha: complex,
    params: SystemParams,
    N_s: int,
    rng: np.random.Generator,
    settings: TomographySettings = TomographySettings(),
) -> PhononEstimate:
    """p̃_n of the state displaced by −α, from N_s collapse runs.

    Undetermined Method-B samples are excluded and counted.
    """
    if N_s < 1:
        raise ValueError("N_s must be >= 1")
    plan = displacement_plan_for(alpha, params, settings.N_atoms, settings.drive_ramp)
    params = dataclasses.replace(params, n_max=required_n_max(spec, alpha, params.n_max))
    results = tuple(run_sample(spec, plan, params, settings, rng, 0, s) for s in range(N_s))
    p, counts, und = _histogram(results, settings.method, params.space.oscillator.dim)
    return PhononEstimate(p, counts, und, results)


# --------------------------------------------------------------------------
# grids


def square_grid(S: int, extent: float) -> NDArray:
    """S×S points over [−extent, extent]²; row index is Im α, column Re α."""
    if S < 1 or extent < 0:
        raise ValueError("need S >= 1 and extent >= 0")
    x = np.linspace(-extent, extent, S) if S > 1 else np.zeros(1)
    return x[None, :] + 1j * x[:, None]


def pixel_seed(master: int, pixel: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(pixel,)).generate_state(1, np.uint64)[0])


def sample_generator(master: int, pixel: int, sample: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master, spawn_key=(pixel, sample)))


@dataclass(frozen=True)
class WignerGrid:
    alphas: NDArray
    p_n: NDArray
    W: NDArray
    N_s: int
    seeds: NDArray
    mode: str = "stochastic"
    method: str = "a"
    undetermined: NDArray | None = None
    counts: NDArray | None = None

    def __post_init__(self) -> None:
        S = self.alphas.shape
        if self.W.shape != S or self.p_n.shape[:2] != S:
            raise ValueError("grid arrays disagree in shape")
        sums = self.p_n.sum(axis=-1)
        ok = np.isnan(sums) | (np.abs(sums - 1) < 1e-9)
        if not ok.all():
            raise ValueError("pixel distributions must sum to one")

    @property
    def S(self) -> int:
        return self.alphas.shape[0]


@dataclass(frozen=True)
class _Unit:
    """Picklable work unit for process pools."""

    spec: InitialStateSpec
    plan: DisplacementPlan
    params: SystemParams
    settings: TomographySettings
    master: int
    pixel: int
    sample: int

    def __call__(self) -> SampleResult:
        rng = sample_generator(self.master, self.pixel, self.sample)
        return run_sample(self.spec, self.plan, self.params, self.settings, rng, self.pixel, self.sample)


def _run_unit(unit: _Unit) -> SampleResult:
    return unit()


def run_tomography_grid(
    spec: InitialStateSpec,
    params: SystemParams,
    grid: NDArray,
    N_s: int,
    seed: int = 0,
    settings: TomographySettings = TomographySettings(),
    mode: Literal["stochastic", "exact"] = "stochastic",
    map_fn: MapFn = map,
    progress: Callable[[int, int], None] | None = None,
) -> WignerGrid:
    """Reconstruct W over ``grid`` (S×S complex array).

    ``map_fn`` runs the (pixel, sample) units; pass ``executor.map`` for
    parallel execution.  Results are aggregated by index, so any mapping
    order yields the same grid.
    """
    grid = np.asarray(grid, complex)
    flat = grid.ravel()
    dim = params.space.oscillator.dim
    seeds = np.array([pixel_seed(seed, p) for p in range(flat.size)], dtype=np.uint64).reshape(grid.shape)
    if mode == "exact":
        pad = _padded_dim(spec, float(np.abs(flat).max(initial=0.0)), params.n_max)
        p = np.array([exact_distribution(spec, a, params.n_max, pad) for a in flat])
        p /= p.sum(axis=1, keepdims=True)
        W = np.array([wigner_point(row) for row in p])
        return WignerGrid(grid, p.reshape(*grid.shape, pad), W.reshape(grid.shape), 0, seeds, "exact", settings.method)
    if mode != "stochastic":
        raise ValueError(f"unknown mode {mode!r}")
    if N_s < 1:
        raise ValueError("N_s must be >= 1")

    # Each pixel gets a Fock cutoff large enough for its displaced state.
    pixel_params = [dataclasses.replace(params, n_max=required_n_max(spec, a, params.n_max)) for a in flat]
    dim = max(pp.n_max for pp in pixel_params) + 1
    plans = [displacement_plan_for(a, params, settings.N_atoms, settings.drive_ramp) for a in flat]
    units = [
        _Unit(spec, plans[p], pixel_params[p], settings, seed, p, s) for p in range(flat.size) for s in range(N_s)
    ]
    by_pixel: list[list[SampleResult]] = [[] for _ in flat]
    for i, r in enumerate(map_fn(_run_unit, units)):
        by_pixel[r.pixel].append(r)
        if progress:
            progress(i + 1, len(units))
    p_n = np.empty((flat.size, dim))
    counts = np.empty((flat.size, dim), int)
    und = np.empty(flat.size, int)
    for p, results in enumerate(by_pixel):
        p_n[p], counts[p], und[p] = _histogram(results, settings.method, dim)
    W = np.array([wigner_point(row) if np.isfinite(row).all() else np.nan for row in p_n])
    return WignerGrid(
        grid, p_n.reshape(*grid.shape, dim), W.reshape(grid.shape), N_s, seeds, "stochastic", settings.method,
        und.reshape(grid.shape), counts.reshape(*grid.shape, dim),
    )


def exact_wigner_reference(spec: InitialStateSpec, params: SystemParams, grid: NDArray) -> NDArray:
    """Exact-mode grid values, for comparison with stochastic reconstructions."""
    return run_tomography_grid(spec, params, grid, 0, mode="exact").W


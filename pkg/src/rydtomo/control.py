"""Coherent displacement of the oscillator with driven fly-by atoms.

A driven, far-detuned atom imprints D(ξ e^{−iθ}) e^{−iθn̂} on the
oscillator (global phase dropped).  N atoms in a row give
D(α_N) e^{−iNθn̂} with

    α_N = ξ sin(Nθ/2)/sin(θ/2) e^{−i(N+1)θ/2}.

The rotation e^{−iNθn̂} is compensated in software by a pre-rotation
e^{+iNθn̂}, so the compensated sequence is a pure displacement.

The drive is on while the atom is inside region C.  Switching it on and
off abruptly leaves each atom with a small |b> admixture that carries
phonon-number information away; smooth edges (``ramp``) suppress it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray
from scipy.integrate import quad, solve_ivp

from .dissipation import Decoherence, build_channels
from .hamiltonian import HamiltonianConfig, drive_envelope, passage_hamiltonian
from .hilbert import DensityMatrix, check_leakage, partial_trace_atom
from .propagator import PassageMap, PropagationConfig, passage_map
from .system_model import TWO_PI, AtomTrajectory, SystemParams, instantaneous_coupling, sample_trajectory

MAX_RABI = TWO_PI * 1.8e6


class UnreachableTarget(ValueError):
    def __init__(self, alpha: complex, max_alpha: float) -> None:
        super().__init__(f"|α| = {abs(alpha):.4g} exceeds the reachable {max_alpha:.4g} at |Ω0| ≤ 2π·1.8 MHz")
        self.max_alpha = max_alpha


def _window(traj: AtomTrajectory, params: SystemParams) -> tuple[float, float]:
    return traj.window(params.beam.L)


def accumulated_phase_theta(traj: AtomTrajectory, params: SystemParams) -> float:
    """θ = ∫K²/Δ dt with Δ = ω_osc − ω_ba."""
    t0, t1 = _window(traj, params)
    big_delta = -params.delta

    def f(t: float) -> float:
        return float(instantaneous_coupling(traj, t, params)) ** 2 / big_delta

    val, _ = quad(f, t0, t1, epsabs=0.0, epsrel=1e-10, limit=200, points=[(t0 + t1) / 2])
    return val


def displacement_amplitude(
    traj: AtomTrajectory, params: SystemParams, omega0: complex, ramp: float = 0.0
) -> tuple[complex, float]:
    """(ξ, θ) for one driven passage, ξ = i∫Ω*(t)K/(2Δ) e^{iθ(t)} dt.

    Ω(t) = Ω₀ w(t) with the drive envelope w of ramp duration ``ramp``.
    """
    t0, t1 = _window(traj, params)
    big_delta = -params.delta
    theta = accumulated_phase_theta(traj, params)
    if omega0 == 0:
        return 0j, theta

    # θ(t) and the unit-drive integral together; ξ is linear in Ω₀*.
    def rhs(t: float, y: NDArray) -> NDArray:
        K = float(instantaneous_coupling(traj, t, params))
        e = np.exp(1j * y[0]) * (float(drive_envelope(t, t0, t1, ramp)) if ramp else 1.0)
        return np.array([K**2 / big_delta, (K / (2 * big_delta) * e).real, (K / (2 * big_delta) * e).imag])

    tm = (t0 + t1) / 2
    y = np.zeros(3)
    for a, b in ((t0, tm), (tm, t1)):
        sol = solve_ivp(rhs, (a, b), y, method="DOP853", rtol=1e-12, atol=1e-16)
        y = sol.y[:, -1]
    xi = 1j * np.conj(omega0) * complex(y[1], y[2])
    return complex(xi), theta


def net_displacement(N: int, xi: complex, theta: float) -> complex:
    if N < 1:
        raise ValueError("N must be at least 1")
    s = math.sin(theta / 2)
    if abs(s) < 1e-9:
        ratio = N
    else:
        ratio = math.sin(N * theta / 2) / s
    return complex(ratio * xi * np.exp(-1j * (N + 1) * theta / 2))


@dataclass(frozen=True)
class DisplacementPlan:
    N: int
    omega0: complex
    tau: float
    theta: float
    xi: complex
    alpha_N: complex
    residual_phase: float
    ramp: float = 0.0

    def __post_init__(self) -> None:
        if self.N < 0:
            raise ValueError("N must be >= 0")
        if not self.ramp >= 0:
            raise ValueError("ramp must be >= 0")
        expected = net_displacement(self.N, self.xi, self.theta) if self.N else 0j
        if abs(expected - self.alpha_N) > 1e-12 * max(1.0, abs(expected)):
            raise ValueError("alpha_N inconsistent with (N, xi, theta)")


def plan_displacement(params: SystemParams, omega0: complex, N: int = 8, ramp: float = 0.0) -> DisplacementPlan:
    """Analytic plan on the mean drive trajectory."""
    traj = params.drive_beam.mean_trajectory()
    xi, theta = displacement_amplitude(traj, params, omega0, ramp)
    alpha = net_displacement(N, xi, theta) if N else 0j
    return DisplacementPlan(N, complex(omega0), params.drive_beam.tau, theta, xi, alpha, N * theta, ramp)


@lru_cache(maxsize=8)
def _unit_response(params: SystemParams, N: int, ramp: float = 0.0) -> complex:
    # α_N for Ω₀ = 1 rad/s; α_N = conj(Ω₀)·this
    return plan_displacement(params, 1.0, N, ramp).alpha_N


def max_reachable(params: SystemParams, N: int = 8, max_rabi: float = MAX_RABI, ramp: float = 0.0) -> float:
    return abs(_unit_response(params, N, ramp)) * max_rabi


def solve_drive_for_target(
    alpha_target: complex, N: int, params: SystemParams, max_rabi: float = MAX_RABI, ramp: float = 0.0
) -> complex:
    """Ω₀ (rad/s) whose N-atom sequence displaces by ``alpha_target``."""
    if alpha_target == 0:
        return 0j
    unit = _unit_response(params, N, ramp)
    omega0 = np.conj(alpha_target / unit)
    if abs(omega0) > max_rabi * (1 + 1e-12):
        raise UnreachableTarget(alpha_target, abs(unit) * max_rabi)
    return complex(omega0)


@lru_cache(maxsize=64)
def driven_passage(
    traj: AtomTrajectory, params: SystemParams, omega0: complex, decoherence: Decoherence, cfg: PropagationConfig,
    ramp: float = 0.0,
) -> PassageMap:
    H = passage_hamiltonian(traj, params, HamiltonianConfig.driven(omega0, ramp=ramp))
    t0, t1 = _window(traj, params)
    return passage_map(H, build_channels(params, decoherence), t0, t1, cfg)


def rotate(rho_osc: NDArray, angle: float) -> NDArray:
    """e^{iφn̂} ϱ e^{−iφn̂}."""
    ph = np.exp(1j * angle * np.arange(rho_osc.shape[0]))
    return rho_osc * ph[:, None] * ph.conj()[None, :]


def displace_array(
    rho_osc: NDArray,
    params: SystemParams,
    plan: DisplacementPlan,
    rng: np.random.Generator | None,
    decoherence: Decoherence = Decoherence(),
    cfg: PropagationConfig = PropagationConfig(),
    compensate: bool = True,
) -> NDArray:
    if plan.N == 0:
        return rho_osc
    if compensate:
        rho_osc = rotate(rho_osc, plan.residual_phase)
    mean = params.drive_beam.mean_trajectory()
    a = np.zeros((2, 2), complex)
    a[0, 0] = 1
    for _ in range(plan.N):
        traj = sample_trajectory(params.drive_beam, rng) if decoherence.beam else mean
        m = driven_passage(traj, params, plan.omega0, decoherence, cfg, plan.ramp)
        rho_osc = partial_trace_atom(m.apply(np.kron(rho_osc, a)))
        rho_osc = 0.5 * (rho_osc + rho_osc.conj().T)
    check_leakage(rho_osc, "oscillator after displacement")
    return rho_osc


def run_displacement_sequence(
    rho: DensityMatrix,
    params: SystemParams,
    plan: DisplacementPlan,
    rng: np.random.Generator | None = None,
    decoherence: Decoherence = Decoherence(),
    cfg: PropagationConfig = PropagationConfig(),
    compensate: bool = True,
) -> DensityMatrix:
    """N driven master-equation passages, each atom entering in |a>.

    A generator is needed only when ``decoherence.beam`` samples
    trajectories.
    """
    if decoherence.beam and rng is None and plan.N:
        raise ValueError("beam sampling needs a random generator")
    out = displace_array(rho.oscillator(), params, plan, rng, decoherence, cfg, compensate)
    return DensityMatrix.product(out, "a", rho.space)

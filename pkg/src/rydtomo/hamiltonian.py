"""Rotating-frame Hamiltonian of the atom-oscillator pair and the
adiabatically eliminated oscillator Hamiltonian.

Both subsystems are referred to a frame rotating at ω_osc.  The atom then
carries the static detuning δ = ω_ba − ω_osc on |b><b| and, in the
resonant approximation, couples through −K(t)(ĉ†σ_ab + ĉσ_ba).  The
microwave drive is taken at the oscillator frequency, so it is static in
this frame:

    H/ħ = δ σ_bb − K(t)(ĉ†σ_ab + ĉσ_ba) + w(t)(Ω₀* σ_ba + Ω₀ σ_ab)/2.

The envelope w(t) is 1 across region C by default; a non-zero ``ramp``
gives it smooth edges of that duration at entry and exit.

With this drive convention the second-order elimination of |b> gives
K²/Δ ĉ†ĉ − KΩ₀/(2Δ) ĉ − KΩ₀*/(2Δ) ĉ† with Δ = ω_osc − ω_ba = −δ.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .hilbert import CompositeOperator, CompositeSpace, ladder_operators, sigma
from .system_model import AtomTrajectory, SystemParams, instantaneous_coupling, off_center_coupling


class RegimeWarning(UserWarning):
    """Adiabatic elimination used outside |δ| > |Ω₀|, |K|."""


@dataclass(frozen=True)
class HamiltonianConfig:
    mode: Literal["qnd", "driven"] = "qnd"
    omega0: complex | None = None
    rwa: bool = True
    quadratic: bool = False
    ramp: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in ("qnd", "driven"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if (self.mode == "driven") != (self.omega0 is not None):
            raise ValueError("omega0 is required for the driven mode and forbidden otherwise")
        if not self.ramp >= 0:
            raise ValueError("ramp must be >= 0")
        if self.ramp and self.mode != "driven":
            raise ValueError("a drive ramp needs the driven mode")
        if self.quadratic and self.rwa:
            # Every term of the angle-squared expansion rotates at ω_osc or
            # faster in this frame, so nothing of it survives the RWA.
            raise ValueError("the quadratic interaction term has no resonant part; use rwa=False")

    @classmethod
    def driven(cls, omega0: complex, **kw) -> HamiltonianConfig:
        return cls(mode="driven", omega0=complex(omega0), **kw)


@lru_cache(maxsize=8)
def composite_operators(space: CompositeSpace) -> dict[str, NDArray]:
    c, cdag, num = ladder_operators(space.oscillator)
    eye_o = np.eye(space.oscillator.dim)
    s_ab, s_ba = sigma("a", "b"), sigma("b", "a")
    ops = {
        "c": np.kron(c, np.eye(2)),
        "n": np.kron(num, np.eye(2)),
        "s_bb": np.kron(eye_o, sigma("b", "b")),
        "s_ab": np.kron(eye_o, s_ab),
        "s_ba": np.kron(eye_o, s_ba),
        "cdag_s_ab": np.kron(cdag, s_ab),
        "c_s_ba": np.kron(c, s_ba),
        "c_s_ab": np.kron(c, s_ab),
        "cdag_s_ba": np.kron(cdag, s_ba),
    }
    for m in ops.values():
        m.flags.writeable = False
    return ops


def _smooth_step(x: NDArray) -> NDArray:
    # ψ(x)/(ψ(x) + ψ(1−x)) with ψ(x) = exp(−1/x): infinitely differentiable,
    # so the high-order Magnus steps keep their order across the ramp ends.
    x = np.clip(x, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        a = np.where(x > 0, np.exp(-1 / np.where(x > 0, x, 1.0)), 0.0)
        b = np.where(x < 1, np.exp(-1 / np.where(x < 1, 1 - x, 1.0)), 0.0)
    return a / (a + b)


def drive_envelope(t: ArrayLike, t0: float, t1: float, ramp: float = 0.0) -> NDArray:
    """Flat-top window on [t0, t1] with smooth edges lasting ``ramp``."""
    t = np.asarray(t, float)
    inside = (t >= t0) & (t <= t1)
    if ramp == 0:
        return inside.astype(float)
    return np.where(inside, _smooth_step(np.minimum(t - t0, t1 - t) / ramp), 0.0)


@dataclass(frozen=True, eq=False)
class AffineHamiltonian:
    """H(t) = static + profile(t)·coupling [+ envelope(t)·drive].

    Real scalar profiles, evaluated on arrays of times.  This is the
    structure exploited by the Magnus propagator; the optional drive term
    carries a ramped microwave envelope, whose edge duration is
    ``time_scale``.
    """

    static: NDArray[np.complex128]
    coupling: NDArray[np.complex128]
    profile: Callable[[NDArray], NDArray]
    space: CompositeSpace
    drive: NDArray[np.complex128] | None = None
    envelope: Callable[[NDArray], NDArray] | None = None
    time_scale: float = float("inf")

    def __post_init__(self) -> None:
        if (self.drive is None) != (self.envelope is None):
            raise ValueError("drive and envelope come together")

    def __call__(self, t: float) -> NDArray:
        h = self.static + float(self.profile(np.asarray(t))) * self.coupling
        if self.drive is not None:
            h = h + float(self.envelope(np.asarray(t))) * self.drive
        return h


def drive_term(space: CompositeSpace, omega0: complex) -> NDArray:
    ops = composite_operators(space)
    return 0.5 * (np.conj(omega0) * ops["s_ba"] + omega0 * ops["s_ab"])


def passage_hamiltonian(traj: AtomTrajectory, params: SystemParams, cfg: HamiltonianConfig) -> AffineHamiltonian:
    """The resonant rotating-frame Hamiltonian as an affine function of K(t)."""
    if not cfg.rwa:
        raise ValueError("only the resonant Hamiltonian is affine in K(t)")
    space = params.space
    ops = composite_operators(space)
    static = params.delta * ops["s_bb"]
    coupling = -(ops["cdag_s_ab"] + ops["c_s_ba"])

    def profile(t: NDArray) -> NDArray:
        return instantaneous_coupling(traj, t, params)

    if cfg.mode == "driven" and cfg.ramp:
        t0, t1 = traj.window(params.beam.L)
        if 2 * cfg.ramp > t1 - t0:
            raise ValueError("drive ramps longer than the passage")

        def envelope(t: NDArray) -> NDArray:
            return drive_envelope(t, t0, t1, cfg.ramp)

        return AffineHamiltonian(static, coupling, profile, space, drive_term(space, cfg.omega0), envelope, cfg.ramp)
    if cfg.mode == "driven":
        static = static + drive_term(space, cfg.omega0)
    return AffineHamiltonian(static, coupling, profile, space)


def rotating_frame_hamiltonian(
    t: float, traj: AtomTrajectory, params: SystemParams, cfg: HamiltonianConfig = HamiltonianConfig()
) -> CompositeOperator:
    """H̃(t)/ħ in rad/s."""
    space = params.space
    ops = composite_operators(space)
    K = float(instantaneous_coupling(traj, t, params))
    h = params.delta * ops["s_bb"] - K * (ops["cdag_s_ab"] + ops["c_s_ba"])
    if cfg.mode == "driven":
        w = float(drive_envelope(t, *traj.window(params.beam.L), cfg.ramp)) if cfg.ramp else 1.0
        h = h + w * drive_term(space, cfg.omega0)
    if not cfg.rwa:
        w = params.oscillator.omega_osc
        ph = np.exp(-2j * w * t)
        h = h - K * (ph * ops["c_s_ab"] + np.conj(ph) * ops["cdag_s_ba"])
        if cfg.quadratic:
            Kg = float(off_center_coupling(traj, t, params))
            e = np.exp(-1j * w * t)
            x = e * ops["c"] + np.conj(e) * ops["c"].conj().T
            s = np.conj(e) * ops["s_ba"] + e * ops["s_ab"]
            h = h + Kg * params.oscillator.phi_zpm * (x @ x @ s)
    return CompositeOperator(h, space, hermitian=True)


def effective_dho_hamiltonian(
    t: ArrayLike, traj: AtomTrajectory, params: SystemParams, omega0: complex
) -> NDArray:
    """Oscillator-only Hamiltonian (rad/s) after eliminating |b>."""
    c, cdag, num = ladder_operators(params.space.oscillator)
    K = float(instantaneous_coupling(traj, t, params))
    big_delta = -params.delta
    if abs(big_delta) <= max(abs(omega0), abs(K)):
        warnings.warn(
            f"adiabatic elimination outside its regime: |δ|={abs(big_delta):.3g}, |Ω0|={abs(omega0):.3g}, |K|={abs(K):.3g}",
            RegimeWarning,
            stacklevel=2,
        )
    return (K**2 * num - 0.5 * K * omega0 * c - 0.5 * K * np.conj(omega0) * cdag) / big_delta

"""Physical parameterisation: torsional oscillator, Rydberg atom, atomic
beam and the dipole-dipole coupling geometry.

All quantities are SI with angular frequencies in rad/s.  The helpers in
:func:`summary` convert to the cycles-per-second units used for display.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.constants import epsilon_0, hbar

from .dissipation import DecoherenceRates, bose_occupation
from .hilbert import CompositeSpace, FockSpace

TWO_PI = 2 * np.pi
Vector = tuple[float, float, float]


def _positive(**kw: float) -> None:
    for name, v in kw.items():
        if not np.isfinite(v) or v <= 0:
            raise ValueError(f"{name} must be positive, got {v!r}")


def moment_of_inertia(m_cnt: float, w: float, m_sfl: float, r: float) -> float:
    """Tube plus spherical load: m_cnt w²/4 + 2 m_sfl r²/5."""
    _positive(m_cnt=m_cnt, w=w, r=r)
    if not np.isfinite(m_sfl) or m_sfl < 0:
        raise ValueError(f"m_sfl must be non-negative, got {m_sfl!r}")
    return m_cnt * w**2 / 4 + 2 * m_sfl * r**2 / 5


def oscillator_frequency(kappa: float, inertia: float) -> float:
    _positive(kappa=kappa, inertia=inertia)
    return float(np.sqrt(kappa / inertia))


def zero_point_amplitude(omega: float, inertia: float) -> float:
    _positive(omega=omega, inertia=inertia)
    return float(np.sqrt(hbar / (2 * omega * inertia)))


@dataclass(frozen=True)
class OscillatorParams:
    kappa: float
    inertia: float
    d_osc: float
    Q: float
    T_osc: float

    def __post_init__(self) -> None:
        _positive(kappa=self.kappa, inertia=self.inertia, d_osc=self.d_osc, Q=self.Q)
        if self.T_osc < 0:
            raise ValueError("T_osc must be >= 0")

    @property
    def omega_osc(self) -> float:
        return oscillator_frequency(self.kappa, self.inertia)

    @property
    def phi_zpm(self) -> float:
        return zero_point_amplitude(self.omega_osc, self.inertia)

    @property
    def gamma(self) -> float:
        """Energy damping rate ω/Q."""
        return self.omega_osc / self.Q


@dataclass(frozen=True)
class AtomParams:
    omega_ba: float
    d_ba: float
    mass: float

    def __post_init__(self) -> None:
        _positive(omega_ba=self.omega_ba, d_ba=self.d_ba, mass=self.mass)


@dataclass(frozen=True)
class BeamParams:
    """Atomic beam statistics.  The region C spans |Z| <= L/2."""

    r0_mean: Vector
    v_mean: Vector
    sigma_x: float
    sigma_y: float
    sigma_vz: float
    L: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "r0_mean", tuple(float(x) for x in self.r0_mean))
        object.__setattr__(self, "v_mean", tuple(float(x) for x in self.v_mean))
        if len(self.r0_mean) != 3 or len(self.v_mean) != 3:
            raise ValueError("r0_mean and v_mean must be 3-vectors")
        if self.r0_mean[1] <= 0:
            raise ValueError("impact parameter r0_mean.y must be positive")
        if self.v_mean[2] <= 0:
            raise ValueError("v_mean.z must be positive")
        _positive(L=self.L)
        for name in ("sigma_x", "sigma_y", "sigma_vz"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def D(self) -> float:
        return self.r0_mean[1]

    @property
    def tau(self) -> float:
        return self.L / float(np.linalg.norm(self.v_mean))

    def mean_trajectory(self) -> AtomTrajectory:
        return AtomTrajectory(self.r0_mean, self.v_mean)

    def without_spread(self) -> BeamParams:
        return replace(self, sigma_x=0.0, sigma_y=0.0, sigma_vz=0.0)


@dataclass(frozen=True)
class AtomTrajectory:
    """Uniform classical motion R(t) = r0 + v t."""

    r0: Vector
    v: Vector

    def __post_init__(self) -> None:
        object.__setattr__(self, "r0", tuple(float(x) for x in self.r0))
        object.__setattr__(self, "v", tuple(float(x) for x in self.v))

    def position(self, t: ArrayLike) -> NDArray:
        t = np.asarray(t, float)
        return np.asarray(self.r0) + np.multiply.outer(t, np.asarray(self.v))

    def window(self, L: float) -> tuple[float, float]:
        """Entry and exit times of the region |Z| <= L/2."""
        z0, vz = self.r0[2], self.v[2]
        if vz <= 0:
            raise ValueError("trajectory must move along +Z")
        t_in = max((-L / 2 - z0) / vz, 0.0)
        t_out = (L / 2 - z0) / vz
        return t_in, t_out


def coupling_profile(r: ArrayLike, D: float) -> tuple[NDArray, NDArray]:
    """Dipole-dipole profiles f = (D/R)³(1 − 3Z²/R²) and g = 3XZD³/R⁵."""
    r = np.asarray(r, float)
    X, Z = r[..., 0], r[..., 2]
    R2 = np.einsum("...i,...i->...", r, r)
    if np.any(R2 == 0):
        raise ValueError("coupling profile undefined at the origin")
    R = np.sqrt(R2)
    q = (D / R) ** 3
    return q * (1 - 3 * Z**2 / R2), 3 * X * Z * q / R2


def coupling_constant(d_ba: float, d_osc: float, D: float, omega: float, inertia: float) -> float:
    """K0 = V0/√(2ħωI) with V0 = d_ba d_osc/(4πε0 D³)."""
    V0 = d_ba * d_osc / (4 * np.pi * epsilon_0 * D**3)
    return float(V0 / np.sqrt(2 * hbar * omega * inertia))


@dataclass(frozen=True)
class SystemParams:
    """Complete physical parameter set.

    ``beam`` carries the measurement (QND) atoms and ``drive_beam`` the
    slower-transit displacement atoms; both share the impact parameter.
    The detuning δ = ω_ba − ω_osc is derived, never stored.
    """

    oscillator: OscillatorParams
    atom: AtomParams
    beam: BeamParams
    drive_beam: BeamParams
    rates: DecoherenceRates
    n_max: int = 15

    def __post_init__(self) -> None:
        FockSpace(self.n_max)
        if not np.isclose(self.beam.D, self.drive_beam.D, rtol=1e-12, atol=0):
            raise ValueError("measurement and drive beams must share the impact parameter")
        if self.beam.L != self.drive_beam.L:
            raise ValueError("measurement and drive beams must share the region length")
        n_th = bose_occupation(self.oscillator.omega_osc, self.oscillator.T_osc)
        if not np.isclose(self.rates.n_th, n_th, rtol=1e-9, atol=1e-300):
            raise ValueError(f"rates.n_th={self.rates.n_th!r} inconsistent with T_osc (expected {n_th!r})")
        if self.delta == 0:
            raise ValueError("zero detuning: the dispersive readout requires ω_ba != ω_osc")

    @property
    def space(self) -> CompositeSpace:
        return CompositeSpace(FockSpace(self.n_max))

    @property
    def delta(self) -> float:
        return self.atom.omega_ba - self.oscillator.omega_osc

    @property
    def D(self) -> float:
        return self.beam.D

    @property
    def V0(self) -> float:
        return self.atom.d_ba * self.oscillator.d_osc / (4 * np.pi * epsilon_0 * self.D**3)

    @property
    def K0(self) -> float:
        o = self.oscillator
        return coupling_constant(self.atom.d_ba, o.d_osc, self.D, o.omega_osc, o.inertia)

    def quiet(self) -> SystemParams:
        """Same parameters with the beam spreads removed."""
        return replace(self, beam=self.beam.without_spread(), drive_beam=self.drive_beam.without_spread())


def make_params(
    *,
    kappa: float,
    inertia: float,
    d_osc: float,
    Q: float,
    T_osc: float,
    detuning: float,
    d_ba: float,
    mass: float,
    r0: Vector,
    v_measure: Vector,
    v_drive: Vector,
    sigma_x: float,
    sigma_y: float,
    sigma_vz: float,
    L: float,
    gamma_bbr: float,
    gamma_deph: float,
    gamma_osc: float | None = None,
    n_max: int = 15,
) -> SystemParams:
    """Build :class:`SystemParams` from raw inputs, deriving ω_ba, Γ_osc and n_th."""
    osc = OscillatorParams(kappa, inertia, d_osc, Q, T_osc)
    omega = osc.omega_osc
    rates = DecoherenceRates(
        gamma_osc=osc.gamma if gamma_osc is None else gamma_osc,
        n_th=bose_occupation(omega, T_osc),
        gamma_bbr=gamma_bbr,
        gamma_deph=gamma_deph,
    )
    beam = BeamParams(r0, v_measure, sigma_x, sigma_y, sigma_vz, L)
    return SystemParams(
        oscillator=osc,
        atom=AtomParams(omega + detuning, d_ba, mass),
        beam=beam,
        drive_beam=replace(beam, v_mean=tuple(v_drive)),
        rates=rates,
        n_max=n_max,
    )


# Reference design point.  The transition frequency is derived from the
# oscillator frequency and the design detuning of −2π·12.88 MHz.
TABLE_S1 = dict(
    kappa=2.085e-11,
    inertia=1.126e-32,
    d_osc=2.58e-20,
    Q=1.37e8,
    T_osc=0.025,
    detuning=-TWO_PI * 12.88e6,
    d_ba=5.69e-26,
    mass=1.44e-25,
    r0=(0.0, 21.675e-6, -15.436e-6),
    v_measure=(0.0, 0.0, 8.0),
    v_drive=(0.0, 0.0, 14.0),
    sigma_x=0.707e-6,
    sigma_y=0.707e-6,
    sigma_vz=0.01,
    L=30.872e-6,
    gamma_bbr=TWO_PI * 988.63,
    gamma_deph=TWO_PI * 1.50e3,
    n_max=15,
)

# Inputs of the inertia estimate (tube and ferroelectric load).
INERTIA_INPUTS = dict(m_cnt=8.71e-19, w=75.79e-9, m_sfl=6.31e-18, r=63.3e-9)


def table_s1(**overrides) -> SystemParams:
    return make_params(**{**TABLE_S1, **overrides})


def instantaneous_coupling(traj: AtomTrajectory, t: ArrayLike, params: SystemParams) -> NDArray:
    """K(t) = K0 f(R(t)) in rad/s."""
    f, _ = coupling_profile(traj.position(t), params.D)
    return params.K0 * f


def off_center_coupling(traj: AtomTrajectory, t: ArrayLike, params: SystemParams) -> NDArray:
    """K0 g(R(t)), the profile multiplying the quadratic-in-angle term."""
    _, g = coupling_profile(traj.position(t), params.D)
    return params.K0 * g


def sample_trajectory(beam: BeamParams, rng: np.random.Generator) -> AtomTrajectory:
    """Gaussian X(0), Y(0) and v_Z around the beam means."""
    x0, y0, z0 = beam.r0_mean
    vx, vy, vz = beam.v_mean
    x, y, v = rng.normal((x0, y0, vz), (beam.sigma_x, beam.sigma_y, beam.sigma_vz))
    return AtomTrajectory((x, y, z0), (vx, vy, v))


def summary(params: SystemParams) -> dict[str, float]:
    """Derived quantities in display units."""
    o = params.oscillator
    return {
        "omega_osc_2pi_megahertz": o.omega_osc / TWO_PI / 1e6,
        "omega_ba_2pi_megahertz": params.atom.omega_ba / TWO_PI / 1e6,
        "detuning_2pi_megahertz": params.delta / TWO_PI / 1e6,
        "phi_zpm_radian": o.phi_zpm,
        "K0_2pi_megahertz": params.K0 / TWO_PI / 1e6,
        "n_thermal": params.rates.n_th,
        "gamma_osc_2pi_hertz": params.rates.gamma_osc / TWO_PI,
        "gamma_bbr_2pi_hertz": params.rates.gamma_bbr / TWO_PI,
        "gamma_deph_2pi_hertz": params.rates.gamma_deph / TWO_PI,
        "tau_measure_microsecond": params.beam.tau * 1e6,
        "tau_drive_microsecond": params.drive_beam.tau * 1e6,
    }

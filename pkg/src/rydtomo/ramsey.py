"""Ramsey interferometry with fly-by atoms: π/2 pulses, reference-phase
calibration, projective detection and K-atom QND sequences.

The π/2 pulses are resonant with the atomic transition.  Propagation runs
in the frame rotating at ω_osc, so after each passage the bare phase δτ
is removed before the second pulse; only the coupling-induced phase is
read out.  Between atoms the joint state is reset to ϱ ⊗ |a><a|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.constants import hbar
from scipy.integrate import quad

from .dissipation import Decoherence, build_channels
from .hamiltonian import HamiltonianConfig, passage_hamiltonian
from .hilbert import CompositeOperator, DensityMatrix, check_leakage, partial_trace_atom
from .propagator import MONTE_CARLO, PassageMap, PropagationConfig, passage_map
from .system_model import AtomTrajectory, SystemParams, instantaneous_coupling, sample_trajectory


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PulseMatrix:
    """π/2 pulse [[1, −e^{iφ}], [e^{−iφ}, 1]]/√2 in the (a, b) basis."""

    phi: float = 0.0

    @property
    def matrix(self) -> NDArray:
        e = np.exp(1j * self.phi)
        return np.array([[1.0, -e], [np.conj(e), 1.0]]) / math.sqrt(2)

    def composite(self, space) -> CompositeOperator:
        return CompositeOperator(np.kron(np.eye(space.oscillator.dim), self.matrix), space)


def apply_atom_unitary(rho: NDArray, u: NDArray) -> NDArray:
    """(1 ⊗ u) ρ (1 ⊗ u)† without building the joint operator."""
    d = rho.shape[0] // 2
    r = rho.reshape(d, 2, d, 2)
    r = np.einsum("st,itju,vu->isjv", u, r, u.conj(), optimize=False)
    return r.reshape(2 * d, 2 * d)


def _frame_phase(rho: NDArray, phase: float) -> NDArray:
    """Conjugate by exp(i·phase·σ_bb)."""
    d = rho.shape[0] // 2
    s = np.tile([0.0, 1.0], d)
    ph = np.exp(1j * phase * s)
    return rho * ph[:, None] * ph.conj()[None, :]


# --------------------------------------------------------------------------
# analytic phases


def dressed_energies(n: int, K: float, delta: float) -> tuple[float, float]:
    """E±⁽ⁿ⁾ = ħδ/2 [−1 ± √(1 + 4nK²/δ²)] in joules."""
    if delta == 0:
        raise ValueError("dressed energies need a non-zero detuning")
    root = math.sqrt(1 + 4 * n * K**2 / delta**2)
    return hbar * delta / 2 * (-1 + root), hbar * delta / 2 * (-1 - root)


def _phase_rate(n: int, K: NDArray, delta: float) -> NDArray:
    # [E₋⁽ⁿ⁺¹⁾ − E₊⁽ⁿ⁾]/ħ with the bare −δ removed
    x = 4 * K**2 / delta**2
    return -delta / 2 * (np.sqrt(1 + (n + 1) * x) + np.sqrt(1 + n * x) - 2)


def analytic_phase_shift(n: int, traj: AtomTrajectory, params: SystemParams) -> float:
    """Φ⁽ⁿ⁾: dressed-state phase of |n> relative to |0> over one passage."""
    t0, t1 = traj.window(params.beam.L)
    delta = params.delta

    def rate(t: float) -> float:
        K = instantaneous_coupling(traj, t, params)
        return float(_phase_rate(n, K, delta) - _phase_rate(0, K, delta))

    val, _ = quad(rate, t0, t1, epsabs=0.0, epsrel=1e-10, limit=200, points=[(t0 + t1) / 2])
    return val


def coupling_phases(n_values: Sequence[int], trajs: Sequence[AtomTrajectory], params: SystemParams, nodes: int = 256) -> NDArray:
    """Coupling-induced Ramsey phase for each (trajectory, n), by Gauss-Legendre.

    Returns an array of shape (len(trajs), len(n_values)).  Absolute, not
    referenced to n = 0, so trajectories can be compared with each other.
    """
    x, w = np.polynomial.legendre.leggauss(nodes)
    out = np.empty((len(trajs), len(n_values)))
    for i, tr in enumerate(trajs):
        t0, t1 = tr.window(params.beam.L)
        # Split at the midpoint where the coupling peaks.
        tm = (t0 + t1) / 2
        t = np.concatenate([tm + (tm - t0) * (x - 1) / 2, tm + (t1 - tm) * (x + 1) / 2])
        wt = np.concatenate([w * (tm - t0) / 2, w * (t1 - tm) / 2])
        K = instantaneous_coupling(tr, t, params)
        for j, n in enumerate(n_values):
            out[i, j] = wt @ _phase_rate(n, K, params.delta)
    return out


def ramsey_contrast(tau: NDArray | float, params: SystemParams, decoherence: Decoherence) -> NDArray:
    """Decay of the a-b coherence over a passage of duration τ."""
    g = (params.rates.gamma_bbr if decoherence.bbr else 0.0) + (params.rates.gamma_deph if decoherence.dephasing else 0.0)
    return np.exp(-g * np.asarray(tau))


@dataclass(frozen=True)
class PhaseTable:
    """Predicted Ramsey response for n = 0 … n_design.

    ``p_b_ideal`` is sin²(Φ⁽ⁿ⁾/2) on the mean trajectory and serves Method B.
    ``p_b`` and ``p_b_std`` are the beam and decoherence average and spread
    when those are enabled, and equal ``p_b_ideal`` and 0 otherwise.
    """

    phases: tuple[float, ...]
    p_b: tuple[float, ...]
    p_b_ideal: tuple[float, ...]
    p_b_std: tuple[float, ...]

    def __post_init__(self) -> None:
        if abs(self.phases[0]) > 1e-12:
            raise ValueError("Φ⁽⁰⁾ must be anchored to zero")
        if not np.all(np.isfinite(self.phases + self.p_b + self.p_b_ideal)):
            raise ValueError("phase table entries must be finite")

    @property
    def n_design(self) -> int:
        return len(self.phases) - 1

    def infer(self, outcomes: Sequence[str]) -> int | None:
        """Method B: the n whose predicted P_b is nearest the b-fraction.

        Returns None for an empty record, a tie, or a fraction outside the
        predicted range by more than half the record's resolution 1/k.
        """
        k = len(outcomes)
        if k == 0:
            return None
        f = sum(o == "b" for o in outcomes) / k
        pred = np.asarray(self.p_b_ideal)
        slack = 0.5 / k
        if f < pred.min() - slack or f > pred.max() + slack:
            return None
        d = np.abs(pred - f)
        best = int(np.argmin(d))
        if np.count_nonzero(d <= d[best] + 1e-12) > 1:
            return None
        return best


def build_phase_table(
    params: SystemParams,
    n_design: int = 5,
    decoherence: Decoherence = Decoherence(),
    samples: int = 4000,
    seed: int = 0,
) -> PhaseTable:
    traj = params.beam.mean_trajectory()
    phases = tuple(analytic_phase_shift(n, traj, params) for n in range(n_design + 1))
    ideal = tuple(math.sin(p / 2) ** 2 for p in phases)
    ns = list(range(n_design + 1))
    ref = coupling_phases([0], [traj], params)[0, 0]
    if decoherence.beam:
        rng = np.random.default_rng(seed)
        trajs = [sample_trajectory(params.beam, rng) for _ in range(samples)]
    else:
        trajs = [traj]
    ph = coupling_phases(ns, trajs, params)
    taus = np.array([np.subtract(*tr.window(params.beam.L)[::-1]) for tr in trajs])
    C = ramsey_contrast(taus, params, decoherence)[:, None]
    pb = 0.5 * (1 - C * np.cos(ph - ref))
    return PhaseTable(phases, tuple(pb.mean(axis=0)), ideal, tuple(pb.std(axis=0)))


@lru_cache(maxsize=16)
def cached_phase_table(params: SystemParams, decoherence: Decoherence, n_design: int = 5) -> PhaseTable:
    return build_phase_table(params, n_design, decoherence)


# --------------------------------------------------------------------------
# passages


@lru_cache(maxsize=64)
def qnd_passage(traj: AtomTrajectory, params: SystemParams, decoherence: Decoherence, cfg: PropagationConfig) -> PassageMap:
    H = passage_hamiltonian(traj, params, HamiltonianConfig())
    t0, t1 = traj.window(params.beam.L)
    return passage_map(H, build_channels(params, decoherence), t0, t1, cfg)


def _passage_through_c(rho: NDArray, traj: AtomTrajectory, params: SystemParams, decoherence: Decoherence, cfg: PropagationConfig) -> NDArray:
    t0, t1 = traj.window(params.beam.L)
    out = qnd_passage(traj, params, decoherence, cfg).apply(rho)
    return _frame_phase(out, params.delta * (t1 - t0))


def _entry_state(rho_osc: NDArray) -> NDArray:
    # first pulse on |a>: (|a> + |b>)/√2
    psi = PulseMatrix(0.0).matrix[:, 0]
    return np.kron(rho_osc, np.outer(psi, psi.conj()))


def calibrate_reference_phase(params: SystemParams, cfg: PropagationConfig = PropagationConfig()) -> float:
    """φ* giving P_b = 0 for the ground state on the mean trajectory.

    P_b(φ) = ½[1 + 2 Re(e^{−iφ} ρ_ab)] for the atom state before the
    second pulse, so the minimum sits at φ* = arg ρ_ab − π.
    """
    space = params.space
    rho_osc = np.zeros((space.oscillator.dim,) * 2, complex)
    rho_osc[0, 0] = 1
    rho = _passage_through_c(_entry_state(rho_osc), params.beam.mean_trajectory(), params, Decoherence.off(), cfg)
    atom = rho.reshape(space.oscillator.dim, 2, space.oscillator.dim, 2).trace(axis1=0, axis2=2)
    rho_ab = atom[0, 1]
    phi = float(np.angle(rho_ab)) - math.pi
    phi = (phi + math.pi) % (2 * math.pi) - math.pi
    pb = 0.5 * (1 + 2 * np.real(np.exp(-1j * phi) * rho_ab))
    if not pb < 1e-6:
        raise CalibrationError(f"no reference phase reaches P_b < 1e-6 (minimum {pb:.3g})")
    return phi


@lru_cache(maxsize=16)
def cached_reference_phase(params: SystemParams) -> float:
    return calibrate_reference_phase(params)


# --------------------------------------------------------------------------
# detection and sequences


@dataclass(frozen=True)
class MeasurementRecord:
    outcomes: tuple[str, ...]
    fock_estimate_a: int
    fock_estimate_b: int | None
    seed: int | None = None
    p_b_trace: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self) -> None:
        if not self.outcomes:
            raise ValueError("a record needs at least one outcome")
        if set(self.outcomes) - {"a", "b"}:
            raise ValueError("outcomes must be 'a' or 'b'")

    @property
    def K(self) -> int:
        return len(self.outcomes)

    @property
    def p_b_estimate(self) -> float:
        return self.outcomes.count("b") / len(self.outcomes)


def _detect(rho: NDArray, rng: np.random.Generator) -> tuple[str, NDArray, float]:
    diag = np.real(np.diagonal(rho))
    pb = float(diag[1::2].sum())
    if not -1e-10 <= pb <= 1 + 1e-10:
        raise ValueError(f"detection probability {pb!r} outside [0, 1]")
    pb = min(max(pb, 0.0), 1.0)
    eta = rng.random()
    outcome = "b" if eta < pb else "a"
    s = 1 if outcome == "b" else 0
    post = np.zeros_like(rho)
    post[s::2, s::2] = rho[s::2, s::2] / (pb if s else 1 - pb)
    return outcome, post, pb


def detect_atom(rho: DensityMatrix, rng: np.random.Generator) -> tuple[str, DensityMatrix]:
    """Projective detection of the atomic level, with state collapse."""
    outcome, post, _ = _detect(rho.matrix, rng)
    return outcome, DensityMatrix(post, rho.space)


def _single_atom(
    rho_osc: NDArray,
    traj: AtomTrajectory,
    params: SystemParams,
    phi_star: float,
    rng: np.random.Generator,
    decoherence: Decoherence,
    cfg: PropagationConfig,
) -> tuple[str, NDArray, float]:
    rho = _passage_through_c(_entry_state(rho_osc), traj, params, decoherence, cfg)
    rho = apply_atom_unitary(rho, PulseMatrix(phi_star).matrix)
    outcome, post, pb = _detect(rho, rng)
    rho_osc = partial_trace_atom(post)
    return outcome, 0.5 * (rho_osc + rho_osc.conj().T), pb


def ramsey_single_atom(
    rho: DensityMatrix,
    traj: AtomTrajectory,
    params: SystemParams,
    phi_star: float,
    rng: np.random.Generator,
    decoherence: Decoherence = Decoherence(),
    cfg: PropagationConfig = PropagationConfig(),
) -> tuple[str, DensityMatrix]:
    """One atom: π/2 pulse, passage, π/2 pulse with phase φ*, detection.

    The returned state is ϱ ⊗ |a><a| with the collapsed oscillator state.
    """
    outcome, rho_osc, _ = _single_atom(rho.oscillator(), traj, params, phi_star, rng, decoherence, cfg)
    return outcome, DensityMatrix.product(rho_osc, "a", rho.space)


def qnd_probability(rho_osc: NDArray, traj: AtomTrajectory, params: SystemParams, phi_star: float,
                    decoherence: Decoherence = Decoherence.off(), cfg: PropagationConfig = PropagationConfig()) -> float:
    """Detection probability in b for one atom, without sampling."""
    rho = _passage_through_c(_entry_state(np.asarray(rho_osc, complex)), traj, params, decoherence, cfg)
    rho = apply_atom_unitary(rho, PulseMatrix(phi_star).matrix)
    return float(np.real(np.diagonal(rho))[1::2].sum())


def run_qnd_sequence(
    rho: DensityMatrix,
    params: SystemParams,
    K_atoms: int,
    rng: np.random.Generator,
    decoherence: Decoherence = Decoherence(),
    *,
    phi_star: float | None = None,
    table: PhaseTable | None = None,
    cfg: PropagationConfig = MONTE_CARLO,
    seed: int | None = None,
) -> tuple[MeasurementRecord, DensityMatrix]:
    """K successive atoms with freshly sampled trajectories.

    Method A reads the most probable Fock state of the final oscillator
    state; Method B infers n from the detection record alone.
    """
    rho_osc, record = qnd_sequence_array(
        rho.oscillator(), params, K_atoms, rng, decoherence, phi_star=phi_star, table=table, cfg=cfg, seed=seed
    )
    return record, DensityMatrix.product(rho_osc, "a", rho.space)


def qnd_sequence_array(
    rho_osc: NDArray,
    params: SystemParams,
    K_atoms: int,
    rng: np.random.Generator,
    decoherence: Decoherence = Decoherence(),
    *,
    phi_star: float | None = None,
    table: PhaseTable | None = None,
    cfg: PropagationConfig = MONTE_CARLO,
    seed: int | None = None,
) -> tuple[NDArray, MeasurementRecord]:
    if K_atoms < 1:
        raise ValueError("a QND sequence needs at least one atom")
    if phi_star is None:
        phi_star = cached_reference_phase(params)
    if table is None:
        table = cached_phase_table(params, decoherence)
    mean = params.beam.mean_trajectory()
    outcomes, trace = [], []
    for _ in range(K_atoms):
        traj = sample_trajectory(params.beam, rng) if decoherence.beam else mean
        o, rho_osc, pb = _single_atom(rho_osc, traj, params, phi_star, rng, decoherence, cfg)
        outcomes.append(o)
        trace.append(pb)
    check_leakage(rho_osc, "oscillator after QND sequence")
    record = MeasurementRecord(
        outcomes=tuple(outcomes),
        fock_estimate_a=int(np.argmax(np.real(np.diagonal(rho_osc)))),
        fock_estimate_b=table.infer(outcomes),
        seed=seed,
        p_b_trace=tuple(trace),
    )
    return rho_osc, record

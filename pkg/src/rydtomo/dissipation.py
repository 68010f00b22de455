"""Lindblad channels: thermal bath of the oscillator, black-body
redistribution between the Rydberg levels and dephasing of the atom.

Jump operators carry their rate prefactor, so each channel contributes
``L ρ L† − {L†L, ρ}/2`` to the master equation.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import TYPE_CHECKING

import numpy as np
from scipy.constants import hbar, k as k_B

from .hilbert import CompositeOperator, CompositeSpace, embed, ladder_operators, sigma

if TYPE_CHECKING:
    from .system_model import SystemParams


def bose_occupation(omega: float, temperature: float) -> float:
    """Mean thermal phonon number 1/(exp(ħω/kT) − 1)."""
    if temperature < 0 or omega <= 0:
        raise ValueError("temperature must be >= 0 and omega > 0")
    if temperature == 0:
        return 0.0
    return float(1.0 / np.expm1(hbar * omega / (k_B * temperature)))


@dataclass(frozen=True)
class DecoherenceRates:
    """Rates in rad/s; ``n_th`` is the bath occupation at the oscillator frequency."""

    gamma_osc: float
    n_th: float
    gamma_bbr: float
    gamma_deph: float

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and >= 0, got {v!r}")


@dataclass(frozen=True)
class Decoherence:
    """Per-channel switches.  ``beam`` controls trajectory sampling."""

    thermal: bool = True
    bbr: bool = True
    dephasing: bool = True
    beam: bool = True

    @classmethod
    def off(cls) -> Decoherence:
        return cls(False, False, False, False)

    @property
    def any_channel(self) -> bool:
        return self.thermal or self.bbr or self.dephasing


CHANNEL_NAMES = ("thermal", "bbr", "dephasing", "beam")


@dataclass(frozen=True, eq=False)
class LindbladChannel:
    name: str
    operator: CompositeOperator

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.operator.matrix)):
            raise ValueError(f"channel {self.name} has non-finite entries")


def build_channels(params: SystemParams, toggles: Decoherence = Decoherence()) -> list[LindbladChannel]:
    space = params.space
    rates = params.rates
    c, cdag, _ = ladder_operators(space.oscillator)
    out: list[LindbladChannel] = []

    def add(name: str, op: np.ndarray, subsystem: str, rate: float) -> None:
        if rate > 0:
            out.append(LindbladChannel(name, embed(np.sqrt(rate) * op, subsystem, space)))

    if toggles.thermal:
        add("thermal_down", c, "oscillator", (rates.n_th + 1) * rates.gamma_osc)
        add("thermal_up", cdag, "oscillator", rates.n_th * rates.gamma_osc)
    if toggles.bbr:
        add("bbr_b_to_a", sigma("a", "b"), "atom", rates.gamma_bbr)
        add("bbr_a_to_b", sigma("b", "a"), "atom", rates.gamma_bbr)
    if toggles.dephasing:
        add("dephasing_a", sigma("a", "a"), "atom", rates.gamma_deph)
        add("dephasing_b", sigma("b", "b"), "atom", rates.gamma_deph)
    return out


def dissipator(rho: np.ndarray, channels: list[LindbladChannel]) -> np.ndarray:
    """Dense evaluation of Σ_α L_α ρ L_α† − {L_α†L_α, ρ}/2."""
    out = np.zeros_like(rho, dtype=complex)
    for ch in channels:
        L = ch.operator.matrix
        LdL = L.conj().T @ L
        out += L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)
    return out


def channel_space(channels: list[LindbladChannel]) -> CompositeSpace | None:
    return channels[0].operator.space if channels else None

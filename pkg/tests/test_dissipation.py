import math

import numpy as np
import pytest

from rydtomo.dissipation import (
    CHANNEL_NAMES,
    Decoherence,
    DecoherenceRates,
    bose_occupation,
    build_channels,
    dissipator,
)
from rydtomo.hilbert import CompositeSpace, DensityMatrix, FockSpace
from rydtomo.propagator import evolve
from rydtomo.system_model import TWO_PI


def test_rates(params):
    r = params.rates
    assert r.gamma_osc / TWO_PI == pytest.approx(50, rel=1e-3)
    assert r.gamma_bbr / TWO_PI == pytest.approx(988.63)
    assert r.gamma_deph / TWO_PI == pytest.approx(1.5e3)
    assert r.n_th == pytest.approx(2.0e-6, rel=0.05)


def test_bose_occupation():
    assert bose_occupation(TWO_PI * 6848.69e6, 0.025) == pytest.approx(2.0e-6, rel=0.05)
    assert bose_occupation(1.0, 0.0) == 0.0
    # high-temperature limit kT/ħω
    assert bose_occupation(TWO_PI * 1e6, 1.0) == pytest.approx(20837, rel=1e-3)
    with pytest.raises(ValueError):
        bose_occupation(1.0, -1.0)
    with pytest.raises(ValueError):
        DecoherenceRates(-1.0, 0.0, 0.0, 0.0)


def test_channel_set(params):
    chans = build_channels(params)
    assert [c.name for c in chans] == [
        "thermal_down", "thermal_up", "bbr_b_to_a", "bbr_a_to_b", "dephasing_a", "dephasing_b",
    ]
    assert build_channels(params, Decoherence.off()) == []
    assert [c.name for c in build_channels(params, Decoherence(thermal=False, bbr=False))] == ["dephasing_a", "dephasing_b"]
    down = chans[0].operator.matrix
    expected = math.sqrt((params.rates.n_th + 1) * params.rates.gamma_osc)
    s = params.space
    assert down[s.index(0, "a"), s.index(1, "a")] == pytest.approx(expected)
    assert CHANNEL_NAMES == ("thermal", "bbr", "dephasing", "beam")
    assert not Decoherence.off().any_channel


def _random_state(space, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(space.dim, space.dim)) + 1j * rng.normal(size=(space.dim, space.dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho)


def test_dissipator_trace_free(params):
    rho = _random_state(params.space, 0)
    assert abs(np.trace(dissipator(rho, build_channels(params)))) < 1e-6 * params.rates.gamma_deph


def test_dephasing_preserves_populations(params):
    chans = build_channels(params, Decoherence(thermal=False, bbr=False))
    rho = DensityMatrix(_random_state(params.space, 1), params.space)
    t = 2e-4
    out = evolve(rho, None, chans, 0.0, t)
    assert np.allclose(np.diag(out.matrix), np.diag(rho.matrix), rtol=0, atol=1e-14)
    s = params.space
    i, j = s.index(2, "a"), s.index(2, "b")
    assert out.matrix[i, j] == pytest.approx(rho.matrix[i, j] * math.exp(-params.rates.gamma_deph * t), rel=1e-9)
    # oscillator coherences within one atomic level are untouched
    k = s.index(3, "a")
    assert out.matrix[i, k] == pytest.approx(rho.matrix[i, k], rel=1e-12)


def test_bbr_equilibrates(params):
    space = CompositeSpace(FockSpace(1))
    chans = build_channels(params, Decoherence(thermal=False, dephasing=False))
    chans = [type(c)(c.name, type(c.operator)(c.operator.matrix[:4, :4], space)) for c in chans]
    rho = DensityMatrix.product(np.diag([1.0, 0.0]), "b", space)
    g = params.rates.gamma_bbr
    for t in (0.1 / g, 1 / (2 * g), 5 / g):
        out = evolve(rho, None, chans, 0.0, t)
        pb = np.trace(out.atom()[1:, 1:]).real
        assert pb == pytest.approx(0.5 + 0.5 * math.exp(-2 * g * t), abs=1e-9)
        assert np.trace(out.matrix).real == pytest.approx(1, abs=1e-12)
    final = evolve(rho, None, chans, 0.0, 20 / g)
    assert np.allclose(final.atom(), np.eye(2) / 2, atol=1e-12)

"""
Counting phonons with a beam of Rydberg atoms
=============================================

Each atom crosses the oscillator's near field between two microwave
pulses.  The coupling shifts the atom's Ramsey phase by an amount that
depends on the phonon number, so the fraction of atoms found in |b>
reveals n.  Run with ``python demos/phonon_counting.py``.
"""

import numpy as np

from rydtomo.dissipation import Decoherence
from rydtomo.hilbert import DensityMatrix, fock_state
from rydtomo.ramsey import build_phase_table, run_qnd_sequence
from rydtomo.system_model import summary, table_s1

params = table_s1()
for key, value in summary(params).items():
    print(f"{key:>32s}  {value:.6g}")

# The phase picked up per atom, and the Ramsey probability it implies.
# Beam spread and decoherence blur the ideal values.
table = build_phase_table(params, 5, Decoherence())
print("\n n   phase   P_b ideal   P_b mean ± std")
for n in range(6):
    print(f"{n:2d}  {table.phases[n]:6.3f}  {table.p_b_ideal[n]:9.4f}   {table.p_b[n]:.4f} ± {table.p_b_std[n]:.4f}")

# Send 43 atoms past a Fock state and read n back in two ways:
# A from the collapsed state, B from the click record alone.
osc = params.space.oscillator
rng = np.random.default_rng(7)
print("\n n   b clicks   method A   method B")
for n in range(6):
    rho = DensityMatrix.product(np.diag(fock_state(osc, n)), "a", params.space)
    record, _ = run_qnd_sequence(rho, params, 43, rng, Decoherence.off())
    print(f"{n:2d}   {record.outcomes.count('b'):5d}      {record.fock_estimate_a:5d}     {record.fock_estimate_b}")

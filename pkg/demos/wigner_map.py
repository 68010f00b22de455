"""
Wigner function of a phonon superposition
=========================================

Displace, count phonons, and take the parity: W(alpha) is (2/pi) times
the mean of (-1)^n after a displacement by -alpha.  The exact mode
skips the atom sampling, so this map of (|1> + |3>)/sqrt(2) takes a
second.  Pass ``mode="stochastic"`` with a sample count to simulate the
measurement itself, which costs many atom passages per pixel.
"""

import numpy as np

from rydtomo.system_model import table_s1
from rydtomo.tomography import InitialStateSpec, run_tomography_grid, square_grid

params = table_s1()
state = InitialStateSpec.superposition({1: 1, 3: 1})
grid = square_grid(9, 2.0)
W = run_tomography_grid(state, params, grid, 0, mode="exact").W

print("Re alpha ->", " ".join(f"{x:6.2f}" for x in grid[0].real))
for row, a in zip(W[::-1], grid[::-1, 0]):
    print(f"Im {a.imag:5.2f}  ", " ".join(f"{w:+6.3f}" for w in row))
print(f"\nW(0) = {W[4, 4]:+.4f}, negative because only odd phonon numbers are present")
print(f"normalisation check, sum W dA = {W.sum() * (grid[0, 1] - grid[0, 0]).real ** 2:.3f} (coarse grid)")

"""Free-fermion QFI versus L at and just off the critical field, with fitted exponents."""

import numpy as np

from critsense import free_fermion
from critsense.probe_optimizer import fit_scaling

SIZES = np.array([100, 200, 400, 700, 1000])

for h in (1.0, 1.005, 1.05, 3.0):
    q = np.array([free_fermion.qfi_transverse(h, 1.0, int(L)).qfi_richardson for L in SIZES])
    fit = fit_scaling(SIZES, q, growth=True)
    print(f"h_z = {h:<6} F_Q = {np.array2string(q, precision=4)}  b = {fit.b:.3f}")

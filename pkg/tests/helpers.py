"""Model and field builders shared by the test modules."""

import numpy as np

from singular_mfg.fields import FieldSpec
from singular_mfg.hamiltonian import PowerHamiltonian


def power_model(dim=1, gamma=1.2, a=1.0, a_amp=0.0, V=0.0, V_amp=0.0):
    k = [1] * dim
    a_spec = FieldSpec.from_config({"const": a, "fourier": [[k, a_amp, 0.0]]} if a_amp else {"const": a})
    V_spec = FieldSpec.from_config({"const": V, "fourier": [[k, V_amp, 0.0]]} if V_amp else {"const": V})
    return PowerHamiltonian(a_spec, V_spec, gamma, dim)


def cos_field(grid, amp, const=0.0, phase=0.0):
    x = grid.coords
    return const + amp * np.prod(np.cos(2 * np.pi * x + phase), axis=0)

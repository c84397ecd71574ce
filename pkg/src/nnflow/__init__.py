"""Steady compressible power-law and Herschel-Bulkley flow: regularized
hierarchy solvers and verification diagnostics on structured grids."""
from .constitutive import (HBRegParams, PowerLawParams, PressureLaw, admissible,
                           dual_exponents, eval_pressure, eval_stress_hb_reg,
                           eval_stress_power_law, hb_g_eps)
from .fields import Grid

__all__ = [
    "Grid", "HBRegParams", "PowerLawParams", "PressureLaw", "admissible",
    "dual_exponents", "eval_pressure", "eval_stress_hb_reg", "eval_stress_power_law",
    "hb_g_eps",
]
__version__ = "0.1.0"

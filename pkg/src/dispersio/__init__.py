"""Dissipative linear systems with memory and their conservative extensions.

The main entry points are

* :mod:`dispersio.spectra` for friction kernels, Herglotz transforms and
  spectral densities,
* :mod:`dispersio.pdc` for the power dissipation checks,
* :mod:`dispersio.extension` for building conservative hidden-mode
  extensions,
* :mod:`dispersio.dynamics` for time stepping and the energy ledger,
* :mod:`dispersio.models` for the oscillator and Lorentz examples.
"""

__version__ = "0.1.0"

from .spectra import (  # noqa: E402
    DispersiveSystem,
    FrictionKernel,
    HerglotzEvaluator,
    LorentzParams,
    SpectralDensity,
    SpectralGrid,
    kernel_transform,
    stieltjes_invert,
)
from .pdc import PdcReport, check_admittance_pdc, check_freq_pdc, check_time_pdc  # noqa: E402
from .extension import (  # noqa: E402
    BlockSystem,
    Extension,
    SpectralBlockSystem,
    admittance_recover,
    assemble_block,
    build_from_admittance,
    build_from_density,
    reconstruct_kernel_freq,
    reconstruct_kernel_time,
)
from .dynamics import (  # noqa: E402
    ForcingSignal,
    Trajectory,
    energy_ledger,
    simulate_direct,
    simulate_extended,
)

__all__ = [
    "__version__",
    "DispersiveSystem",
    "FrictionKernel",
    "HerglotzEvaluator",
    "LorentzParams",
    "SpectralDensity",
    "SpectralGrid",
    "kernel_transform",
    "stieltjes_invert",
    "PdcReport",
    "check_time_pdc",
    "check_freq_pdc",
    "check_admittance_pdc",
    "BlockSystem",
    "Extension",
    "SpectralBlockSystem",
    "admittance_recover",
    "assemble_block",
    "build_from_admittance",
    "build_from_density",
    "reconstruct_kernel_freq",
    "reconstruct_kernel_time",
    "ForcingSignal",
    "Trajectory",
    "energy_ledger",
    "simulate_direct",
    "simulate_extended",
]

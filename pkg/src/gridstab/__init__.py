"""Small-signal stability mapping for converter-dominated power networks."""
from importlib.metadata import PackageNotFoundError, version as _pkg_version

try:
    __version__ = _pkg_version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .dae import PowerSystem
from .equilibrium import (
    DispatchSpec,
    Equilibrium,
    UnitDispatch,
    assemble_equilibrium,
    default_dispatch,
    refine_equilibrium,
    solve_power_flow,
)
from .netmodel import Network, kcl_shunt_current, load_network_config, load_to_impedance
from .simulate import Scenario, TimeSeries, convergence_check, simulate
from .smallsignal import (
    LinearModel,
    ModalAnalysis,
    classify_stability,
    eigen_analysis,
    linearize,
    reduce_to_ode,
)
from .sweep import SweepResult, SweepSpec, region_summary, run_sweep

__all__ = [
    "__version__", "PowerSystem", "DispatchSpec", "UnitDispatch", "Equilibrium",
    "assemble_equilibrium", "default_dispatch", "refine_equilibrium", "solve_power_flow",
    "Network", "kcl_shunt_current", "load_network_config", "load_to_impedance",
    "Scenario", "TimeSeries", "convergence_check", "simulate",
    "LinearModel", "ModalAnalysis", "classify_stability", "eigen_analysis", "linearize",
    "reduce_to_ode", "SweepResult", "SweepSpec", "region_summary", "run_sweep",
]

"""Hybrid mimetic finite volume solver for miscible displacement in porous media."""

from importlib.metadata import PackageNotFoundError, version as _version

try:
    __version__ = _version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import (  # noqa: E402
    AdmissibilityError, CompatibilityError, HMMError, IncompatibleDataError, InputError,
    MeshFormatError, ModelError, SolverError,
)
from .mesh import (  # noqa: E402
    Mesh, build_mesh, check_admissibility, generate_perturbed_mesh, generate_rect_mesh,
    generate_tri_mesh, refine_uniform,
)
from .discrete import DiscreteField, FluxField, SpaceTimeField, TimeGrid  # noqa: E402
from .linalg import SolverConfig, solve, solve_singular_neumann  # noqa: E402
from .pressure import solve_pressure  # noqa: E402
from .transport import Scenario, run_simulation  # noqa: E402
from .scenarios import preset  # noqa: E402
from .diagnostics import (  # noqa: E402
    convergence_study, dtc_quartic_integral, dual_seminorm, energy_report, mass_ledger,
    uniform_error,
)

__all__ = [
    "AdmissibilityError", "CompatibilityError", "DiscreteField", "FluxField", "HMMError",
    "IncompatibleDataError", "InputError", "Mesh", "MeshFormatError", "ModelError", "Scenario",
    "SolverConfig", "SolverError", "SpaceTimeField", "TimeGrid", "build_mesh",
    "check_admissibility", "convergence_study", "dtc_quartic_integral", "dual_seminorm",
    "energy_report", "generate_perturbed_mesh", "generate_rect_mesh", "generate_tri_mesh",
    "mass_ledger", "preset", "refine_uniform", "run_simulation", "solve", "solve_pressure",
    "solve_singular_neumann", "uniform_error", "__version__",
]

"""Free-slip Rayleigh-Benard convection and its (Ra, Pr) updates."""
from .grid import RBCGrid, galerkin_project
from .solver import (
    RBCFields,
    RBCNudge,
    RBCParams,
    RBCStepper,
    imex_step,
    kinetic_energy,
    rhs_rbc,
    spinup,
    streamfunction_solve,
)
from .snapshot import read_snapshot, write_snapshot
from .twin import RBCTwinConfig, initial_truth, run_rbc_twin
from .updates import rls_pr_ra_update, rni_plus_ra_pr_update, rni_ra_pr_update

__all__ = [
    "RBCGrid", "galerkin_project", "RBCFields", "RBCNudge", "RBCParams", "RBCStepper", "imex_step",
    "kinetic_energy", "rhs_rbc", "spinup", "streamfunction_solve", "read_snapshot", "write_snapshot",
    "RBCTwinConfig", "initial_truth", "run_rbc_twin", "rls_pr_ra_update", "rni_plus_ra_pr_update",
    "rni_ra_pr_update",
]

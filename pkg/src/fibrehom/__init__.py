"""Bloch-fibre problems for high-contrast fibre composites and their two-scale limit."""
from fibrehom.assembly import (KronForm, TensorMesh, bloch_stiffness_1d, bloch_stiffness_2d,
                               compose_pencil, dense_oracle_form, mass_1d, mass_2d)
from fibrehom.bloch import (Field, SubspaceBasis, coercivity_gap, directional_gap,
                            epsilon_bands, modulate, solve_epsilon_resolvent)
from fibrehom.cell import (HomogenizedCoefficients, harmonic_mean, homogenized_matrix,
                           solve_cell_problem)
from fibrehom.config import StudyConfig, load_config, parse_config
from fibrehom.eigensolve import SpectralResult, dense_eigs, smallest_eigs
from fibrehom.limit import (LimitElement, assemble_limit_form, limit_bands, radial_oracle,
                            solve_limit_resolvent)
from fibrehom.mesh import (CoefficientProfile, ParameterError, PeriodicMesh1D, PeriodicMesh2D,
                           build_cross_section_mesh, build_interval_mesh, fibre_submesh)
from fibrehom.study import (eigenvalue_convergence_study, emit, fit_rate,
                            resolvent_convergence_study)

__version__ = "0.1.0"

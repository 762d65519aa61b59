"""Invariant convex bodies of second-order strongly elliptic systems.

The package checks algebraic invariance conditions (left-eigenvector
alignment of coefficient matrices with a body's outward normals), classifies
admissible matrix families per body shape, detects mixing-matrix times
scalar-operator factorizations, verifies normalized discrete transforms and
builds counterexample witnesses, and backs everything with two numerical
solvers (finite differences on a box, Fourier modes on a half-space) whose
solutions are audited against the predicted invariant bodies.
"""

from .bodies import (Ball, ConvexBody, DegenerateBodyError, HalfSpace,
                     PolyhedralAngle, PolyhedralCone, PolyhedralCylinder,
                     Polytope, SampledSmooth, SphericalCylinder, box, orthant,
                     pull_inside, unit_sphere_samples)
from .conditions import (ConditionFailure, ConditionReport, SystemCoefficients,
                         check_linear_conditions, check_quasilinear_conditions,
                         cone_in_complement, default_eta_samples,
                         ellipticity_constant, left_eigen_scalar,
                         normal_alignment_split)
from .fdsolve import (BoxGrid, GridField, InvarianceAudit, LinearProblem,
                      PicardConfig, SolveError, SolveReport, SolverConfig,
                      assemble_matrix, audit_invariance, random_boundary_field,
                      search_boundary_violation, solve_dirichlet, solve_linear,
                      solve_quasilinear)
from .halfspace import (DefectiveModeError, HalfSpaceProblem, HalfSpaceSolution,
                        PreparedHalfSpace, audit_halfspace_invariance,
                        kernel_normalization_check, search_halfspace_violation,
                        solve_halfspace, stable_modes)
from .structure import (Factorization, StructureClass, admissible_family,
                        alignment_solution_space, classify_matrix,
                        cone_conjugation, detect_factorization,
                        factorized_coefficients)
from .transform import (DiscreteKernel, KernelPoint, KernelReport,
                        NormalizationError, WitnessError, apply_transform,
                        build_witness, check_kernel_invariance,
                        double_layer_kernel)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]

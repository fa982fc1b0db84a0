"""Low-rank third-order tensor completion by alternating minimisation over subspaces."""

from .altmin import (AltMinConfig, RowSolveResult, kron_altmin, kron_step, solve_row,
                     standard_altmin, standard_step, unfolding_altmin)
from .exceptions import (BudgetError, ConvergenceError, DegeneracyError,
                         ObservationFormatError, TensorCompError)
from .harness import SweepSpec, TrialConfig, TrialRecord, run_sweep, run_trial
from .observations import (ObservationSet, SamplingPlan, read_observations, sample,
                           sample_count, split, split_k, subsample, write_observations)
from .pipeline import complete_exact
from .postprocess import (build_polytope, convex_refine, jennrich, match_components,
                          project_to_subspaces)
from .spectral_init import InitConfig, build_bhat, init_subspaces
from .synthetic import NoiseSpec, add_noise, gen_correlated, gen_uncorrelated, generate
from .tensor_core import (CoreTensor, CPDecomposition, DenseTensor3, SubspaceBasis,
                          SubspaceTriple, khatri_rao, kronecker, normalized_mse,
                          principal_angle_sine, top_r_left_singular_basis, unfold)

__version__ = "0.1.0"

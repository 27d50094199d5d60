"""Mean-field Langevin training of two-layer networks: particles, grid oracle and log-Sobolev bounds."""
from .dynamics import SimConfig, TrajectoryLog, em_step, init_ensemble, simulate
from .errors import ConvergenceFailure, InfeasibleBound, InvalidArgument, MflsiError, NumericFault
from .experiment import ExperimentConfig, TeacherSpec, emit_plot_data, make_teacher_dataset, run_experiment
from .fp_oracle import (GridDensity, compare_particle_to_grid, fp_step, gibbs_fixed_point, grid_free_energy,
                        sample_from_grid)
from .lsi import (LsiBoundReport, LyapunovCertificate, lyapunov_bound, lyapunov_constants, phi, quartic_bound,
                  rate_bound, verify_lyapunov)
from .model import (ActivationSpec, Dataset, LossSpec, Particle, ParticleEnsemble, RegularizerSpec, Specs,
                    loss_grad, potential_grad, potential_hess, potential_value, predict, validate_activation,
                    validate_regularizer)
from .objective import ObjectiveReport, RateFit, entropy_knn, empirical_risk, fit_decay_rate, free_energy, regularizer_mean

__version__ = "0.1.0"

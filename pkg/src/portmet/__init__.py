"""Learning open dissipative dynamics by parts.

A numpy toolkit around the double thermoelastic pendulum: a
thermodynamically consistent ground-truth simulator, metriplectic networks
(skew reversible operator, PSD dissipative operator, soft degeneracy
constraints) coupled through boundary ports, a from-scratch reverse-mode
trainer, and rollout evaluation with thermodynamic audits.
"""

from .state import (StateVector, SystemState, PendulumParams, Trajectory, Dataset,
                    derivative_labels, derivative_label_arrays, split_dataset)
from .dataio import save_dataset, load_dataset
from .oracle import (OracleModel, ICSpec, internal_energy, spring_temperature,
                     spring_tension, oracle_rhs, rhs_batch, total_energy, total_entropy,
                     energy_batch, simulate_batch, equilibrium_state, entropy_for_temperature)
from .autodiff import Tape, Var, ParamStore, DenseNet, save_checkpoint, load_checkpoint
from .nets import (BulkNet, BulkNetConfig, MetriplecticOutput, Normalization,
                   eval_bulk, degeneracy_residual, energy_entropy_rates)
from .ports import (PortModel, BoundaryNet, BoundaryNetConfig, SubsystemEval,
                    save_port_model, load_port_model)
from .training import (TrainConfig, TrainReport, TrainerState, Adam, train,
                       loss_single, mean_losses, stacked_labels, DivergenceError)
from .evaluate import (BoxStats, boxplot_stats, Rollout, rollout, OracleFieldModel,
                       relative_l2_stats, thermo_audit, physics_audit, evaluate_model,
                       evaluate_split, persistence_stats, EvalReport)

__version__ = "0.1.0"

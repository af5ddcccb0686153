"""Neural-network-constrained day-ahead HVAC scheduling with
decision-focused learning.

Subpackages by responsibility:

* :mod:`hvacdfl.thermal` — one-step thermal models (ReLU net, lumped RC)
* :mod:`hvacdfl.scenarios` — weather, tariffs, comfort data, k-medoids days
* :mod:`hvacdfl.encoding` — schedule MIQP with tightened big-M ReLU rows
* :mod:`hvacdfl.solver` — interior-point QP + branch-and-bound MIQP
* :mod:`hvacdfl.schedule` — solve-and-decode convenience layer
* :mod:`hvacdfl.plant` — thermostat-actuated ground-truth building emulator
* :mod:`hvacdfl.losses` — expost-plus / hierarchical losses, evaluation
* :mod:`hvacdfl.training` — stochastic-smoothing DFL and ITO pretraining
* :mod:`hvacdfl.qp_training` — KKT sensitivities and the QP/FB baselines
* :mod:`hvacdfl.experiments` — config-driven experiment pipeline
* :mod:`hvacdfl.cli` — command-line front end
"""

from .encoding import InputBox, MiqpInstance, NeuronBounds, build_miqp, predicted_tightening_ratio, propagate_bounds
from .losses import EvalRecord, evaluate, expost_plus, expost_price, hierarchical_loss
from .plant import PlantModel, PlantTrace, default_plant, generate_pretraining_dataset, simulate
from .scenarios import BuildingScenario, WeatherYear, build_tariff, default_scenario, generate_weather_year, kmedoids_days
from .schedule import ScheduleSolution, solve_schedule
from .solver import MiqpSolution, QpSolution, fix_binaries, solve_miqp, solve_qp
from .thermal import NeuralThermalModel, RcThermalModel, build_nn_model, flatten_params, nn_forward, rc_step, rollout, unflatten_params
from .training import GaussianParamDist, TrainingConfig, TrainingLog, pretrain_ito, sample_theta, score_gradient, train_dfl
from .qp_training import QpSensitivity, qp_sensitivity, train_fixed_binaries, train_qp_relaxation

__version__ = "0.1.0"

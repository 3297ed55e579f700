"""Search for misclassified points inside a training distribution's support."""

__version__ = "0.1.0"

from .cma_search import (AttackOutcome, AttackPreconditionError, SearchSpace, attack, fitness,
                         parametric_space, read_outcomes, write_outcomes)
from .evaluation import (AttackConfig, AttackRateReport, ChurchWindowGrid, ModelSeeds, SweepConfig,
                         attack_rate, augment_and_retrain, church_window, collect_adversarials, fit_model,
                         has_clean_band, render_grid, robust_train_experiment, scaling_sweep)
from .evo_strategy import EsState, es_ask, es_init, es_tell, minimize
from .mlp import MlpModel, TrainConfig, accuracy, forward, grad_check, load_model, mlp_init, predict, save_model, train
from .parametric_data import (LabeledDataset, Membership, UniformPairSupport, membership, read_dataset,
                              sample_dataset, write_dataset)
from .scene_space import (SceneVector, SubprocessOracle, SyntheticOracle, attack_scene, oracle_classify,
                          sample_scene, scene_membership)
from .seeding import derive_seed, make_rng
from .stochasticity import AblationSpec, BaseConfig, EvalConfig, Source, find_robust_base, run_ablation

__all__ = [n for n in dir() if not n.startswith("_")]

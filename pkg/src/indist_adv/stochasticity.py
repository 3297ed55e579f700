"""Ablation over the four random sources behind a trained model's robustness.

Starting from a reference configuration, one source at a time gets a fresh
seed per trial while the others stay pinned:

* ``CmaSearch``: the attack seed (the model is trained once)
* ``Sgd``: the minibatch shuffling seed
* ``SamplingBias``: the training-set draw
* ``ModelInit``: the weight initialization

Trial ``t`` replaces the varied seed ``s`` by ``derive_seed(s, "trial", t)``.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .evaluation import ACCURACY_GATE, AttackConfig, ModelSeeds, attack_rate, fit_model, held_out_accuracy
from .mlp import MlpModel, TrainConfig, model_to_json
from .parallel import parallel_map
from .parametric_data import UniformPairSupport
from .seeding import derive_seed

log = logging.getLogger(__name__)

ROBUST_RATE_SCREEN = 0.3


class Source(str, enum.Enum):
    CMA_SEARCH = "CmaSearch"
    SGD = "Sgd"
    SAMPLING_BIAS = "SamplingBias"
    MODEL_INIT = "ModelInit"


SOURCE_FIELD = {
    Source.CMA_SEARCH: "cma_seed",
    Source.SGD: "sgd_seed",
    Source.SAMPLING_BIAS: "data_seed",
    Source.MODEL_INIT: "init_seed",
}


class BaseModelGateError(RuntimeError):
    """The reference configuration does not train to the accuracy gate."""


@dataclass(frozen=True)
class BaseConfig:
    dim: int
    dataset_size: int
    data_seed: int
    init_seed: int
    sgd_seed: int
    cma_seed: int

    @property
    def model_seeds(self) -> ModelSeeds:
        return ModelSeeds(self.data_seed, self.init_seed, self.sgd_seed)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> BaseConfig:
        return cls(**{k: int(obj[k]) for k in cls.__dataclass_fields__})


@dataclass
class EvalConfig:
    n_starts: int = 100
    n_repeats: int = 1
    test_size: int = 2000
    attack: AttackConfig = field(default_factory=AttackConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> EvalConfig:
        obj = dict(obj)
        return cls(attack=AttackConfig(**obj.pop("attack", {})), train=TrainConfig(**obj.pop("train", {})), **obj)


@dataclass(frozen=True)
class AblationSpec:
    base: BaseConfig
    varied: Source
    n_trials: int = 10

    def __post_init__(self):
        object.__setattr__(self, "varied", Source(self.varied))
        if self.n_trials < 1:
            raise ValueError("n_trials must be positive")

    def trial_config(self, t: int) -> BaseConfig:
        name = SOURCE_FIELD[self.varied]
        return replace(self.base, **{name: derive_seed(getattr(self.base, name), "trial", t)})

    def to_json(self) -> dict:
        return {"base": self.base.to_json(), "varied": self.varied.value, "n_trials": self.n_trials}

    @classmethod
    def from_json(cls, obj: dict) -> AblationSpec:
        return cls(BaseConfig.from_json(obj["base"]), Source(obj["varied"]), int(obj["n_trials"]))


@dataclass
class TrialRecord:
    trial: int
    config: BaseConfig
    model_hash: str
    accuracy: float
    rate: float
    mean_distance: float | None

    def to_json(self) -> dict:
        d = asdict(self)
        d["config"] = self.config.to_json()
        return d


@dataclass
class AblationReport:
    spec: AblationSpec
    eval_cfg: EvalConfig
    base_accuracy: float
    trials: list[TrialRecord]
    per_trial_rates: list[float]
    mean: float
    std: float

    def to_json(self) -> dict:
        return {
            "spec": self.spec.to_json(),
            "eval": self.eval_cfg.to_json(),
            "base_accuracy": self.base_accuracy,
            "trials": [t.to_json() for t in self.trials],
            "per_trial_rates": self.per_trial_rates,
            "mean": self.mean,
            "std": self.std,
        }


def model_hash(model: MlpModel) -> str:
    return hashlib.sha256(json.dumps(model_to_json(model), sort_keys=True).encode()).hexdigest()


def _test_seed(cfg: BaseConfig) -> int:
    # tied to the base data seed so every trial is scored on the same held-out set
    return derive_seed(cfg.data_seed, "test")


def train_config_model(cfg: BaseConfig, eval_cfg: EvalConfig) -> MlpModel:
    model, _, _ = fit_model(cfg.dim, cfg.dataset_size, cfg.model_seeds, eval_cfg.train)
    return model


def evaluate_config(cfg: BaseConfig, eval_cfg: EvalConfig, test_seed: int, model: MlpModel | None = None,
                    jobs: int = 1):
    """Train (unless ``model`` is given) and attack one configuration.

    Returns ``(model, accuracy, AttackRateReport)``.
    """
    support = UniformPairSupport(cfg.dim)
    model = model if model is not None else train_config_model(cfg, eval_cfg)
    acc = held_out_accuracy(model, support, test_seed, eval_cfg.test_size)
    report = attack_rate(model, support, eval_cfg.n_starts, eval_cfg.n_repeats, eval_cfg.attack,
                         cfg.cma_seed, jobs=jobs)
    return model, acc, report


def _run_trial(item, eval_cfg: EvalConfig, test_seed: int, shared_model: MlpModel | None):
    t, cfg = item
    model, acc, report = evaluate_config(cfg, eval_cfg, test_seed, shared_model)
    return TrialRecord(t, cfg, model_hash(model), acc, report.mean_rate, report.mean_distance)


def run_ablation(spec: AblationSpec, eval_cfg: EvalConfig | None = None, jobs: int = 1) -> AblationReport:
    """Train the base, then run ``spec.n_trials`` trials varying one source."""
    eval_cfg = eval_cfg or EvalConfig()
    test_seed = _test_seed(spec.base)
    support = UniformPairSupport(spec.base.dim)
    base_model = train_config_model(spec.base, eval_cfg)
    base_acc = held_out_accuracy(base_model, support, test_seed, eval_cfg.test_size)
    if base_acc <= ACCURACY_GATE:
        raise BaseModelGateError(f"base model accuracy {base_acc:.4f} is not above {ACCURACY_GATE}")
    shared = base_model if spec.varied is Source.CMA_SEARCH else None
    items = [(t, spec.trial_config(t)) for t in range(spec.n_trials)]
    run = functools.partial(_run_trial, eval_cfg=eval_cfg, test_seed=test_seed, shared_model=shared)
    trials = parallel_map(run, items, jobs)
    for tr in trials:
        log.info("trial %d %s: accuracy %.4f rate %.3f", tr.trial, spec.varied.value, tr.accuracy, tr.rate)
    rates = [tr.rate for tr in trials]
    a = np.asarray(rates, dtype=float)
    return AblationReport(spec, eval_cfg, base_acc, trials, rates, float(a.mean()), float(a.std()))


def rerun_trial(report: dict, t: int, jobs: int = 1) -> TrialRecord:
    """Recompute trial ``t`` of a saved report from the report alone."""
    spec = AblationSpec.from_json(report["spec"])
    eval_cfg = EvalConfig.from_json(report["eval"])
    shared = train_config_model(spec.base, eval_cfg) if spec.varied is Source.CMA_SEARCH else None
    model, acc, rep = evaluate_config(spec.trial_config(t), eval_cfg, _test_seed(spec.base), shared, jobs)
    return TrialRecord(t, spec.trial_config(t), model_hash(model), acc, rep.mean_rate, rep.mean_distance)


@dataclass
class CandidateRecord:
    index: int
    config: BaseConfig
    accuracy: float
    rate: float | None

    def to_json(self) -> dict:
        return {"index": self.index, "config": self.config.to_json(), "accuracy": self.accuracy,
                "rate": self.rate}


def candidate_config(dim: int, dataset_size: int, seed: int, k: int) -> BaseConfig:
    """Candidate ``k`` shares data, SGD and CMA seeds; only the init seed differs."""
    return BaseConfig(dim, dataset_size, derive_seed(seed, "data"), derive_seed(seed, "init", k),
                      derive_seed(seed, "sgd"), derive_seed(seed, "cma"))


def find_robust_base(dim: int, dataset_size: int, max_candidates: int, cfg: EvalConfig | None = None,
                     seed: int = 0, rate_screen: float = ROBUST_RATE_SCREEN, jobs: int = 1):
    """Screen candidates until one is accurate and hard to attack.

    Returns ``(base or None, candidate log)``.  A candidate passes when its
    held-out accuracy exceeds the gate and its attack rate is at most
    ``rate_screen``.  Candidates under the accuracy gate are not attacked.
    """
    cfg = cfg or EvalConfig()
    logbook: list[CandidateRecord] = []
    for k in range(max_candidates):
        cand = candidate_config(dim, dataset_size, seed, k)
        model = train_config_model(cand, cfg)
        acc = held_out_accuracy(model, UniformPairSupport(dim), _test_seed(cand), cfg.test_size)
        rate = None
        if acc > ACCURACY_GATE:
            _, _, rep = evaluate_config(cand, cfg, _test_seed(cand), model, jobs)
            rate = rep.mean_rate
        logbook.append(CandidateRecord(k, cand, acc, rate))
        log.info("candidate %d: accuracy %.4f rate %s", k, acc, rate)
        if rate is not None and rate <= rate_screen:
            return cand, logbook
    return None, logbook

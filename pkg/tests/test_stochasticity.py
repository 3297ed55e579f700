import json

import numpy as np
import pytest

from indist_adv.evaluation import AttackConfig
from indist_adv.mlp import TrainConfig
from indist_adv.stochasticity import (SOURCE_FIELD, AblationSpec, BaseConfig, BaseModelGateError, EvalConfig,
                                      Source, candidate_config, evaluate_config, find_robust_base, rerun_trial,
                                      run_ablation, _test_seed)

CFG = EvalConfig(n_starts=3, n_repeats=1, test_size=400, attack=AttackConfig(max_generations=40))


@pytest.fixture(scope="module")
def base():
    b, log = find_robust_base(8, 1000, 6, CFG, seed=2, rate_screen=1.0)
    assert b is not None
    return b


@pytest.mark.parametrize("source", list(Source))
def test_only_varied_seed_changes(base, source):
    spec = AblationSpec(base, source, 4)
    varied = SOURCE_FIELD[source]
    seen = set()
    for t in range(4):
        cfg = spec.trial_config(t)
        for name in ("dim", "dataset_size", *SOURCE_FIELD.values()):
            if name != varied:
                assert getattr(cfg, name) == getattr(base, name)
        seen.add(getattr(cfg, varied))
    assert len(seen) == 4 and getattr(base, varied) not in seen


def test_cma_source_trains_once(base):
    rep = run_ablation(AblationSpec(base, Source.CMA_SEARCH, 3), CFG)
    assert len({t.model_hash for t in rep.trials}) == 1
    a = np.array(rep.per_trial_rates)
    assert abs(rep.mean - a.mean()) <= 1e-12 and abs(rep.std - a.std()) <= 1e-12


def test_init_source_retrains_and_report_replays(base):
    rep = run_ablation(AblationSpec(base, Source.MODEL_INIT, 2), CFG)
    assert len({t.model_hash for t in rep.trials}) == 2
    obj = json.loads(json.dumps(rep.to_json()))
    again = rerun_trial(obj, 1)
    assert again.to_json() == rep.trials[1].to_json()


def test_parallel_trials_match_serial(base):
    a = run_ablation(AblationSpec(base, Source.SGD, 2), CFG, jobs=1)
    b = run_ablation(AblationSpec(base, Source.SGD, 2), CFG, jobs=2)
    assert a.to_json() == b.to_json()


def test_gate_error(base):
    untrained = EvalConfig(n_starts=3, test_size=400, train=TrainConfig(epochs=0))
    with pytest.raises(BaseModelGateError):
        run_ablation(AblationSpec(base, Source.SGD, 1), untrained)


def test_spec_validation(base):
    with pytest.raises(ValueError):
        AblationSpec(base, "Dropout", 1)
    with pytest.raises(ValueError):
        AblationSpec(base, Source.SGD, 0)
    spec = AblationSpec(base, "Sgd", 2)
    assert AblationSpec.from_json(json.loads(json.dumps(spec.to_json()))) == spec


def test_find_robust_base_zero_budget():
    assert find_robust_base(8, 1000, 0, CFG) == (None, [])


def test_find_robust_base_logs_and_reproduces():
    cfg = EvalConfig(n_starts=2, test_size=400, attack=AttackConfig(max_generations=20))
    b, log = find_robust_base(6, 400, 3, cfg, seed=5, rate_screen=-1.0)
    assert b is None and len(log) == 3
    assert [c.config for c in log] == [candidate_config(6, 400, 5, k) for k in range(3)]
    assert len({c.config.init_seed for c in log}) == 3
    assert len({(c.config.data_seed, c.config.sgd_seed, c.config.cma_seed) for c in log}) == 1
    for c in log:
        _, acc, rep = evaluate_config(c.config, cfg, _test_seed(c.config))
        assert acc == c.accuracy
        if c.rate is not None:
            assert rep.mean_rate == c.rate


def test_base_config_json():
    b = BaseConfig(20, 100, 1, 2, 3, 2**64 - 1)
    assert BaseConfig.from_json(json.loads(json.dumps(b.to_json()))) == b

"""
Which random choice makes a model robust?
=========================================

Hold a configuration fixed and re-draw one seed at a time: the attack seed,
the SGD shuffling seed, the training-set draw, or the weight initialization.
This is a toy-sized run; the full-scale version trains on 100 000 points.
"""

# %%
from indist_adv.evaluation import AttackConfig
from indist_adv.stochasticity import AblationSpec, EvalConfig, Source, find_robust_base, run_ablation

cfg = EvalConfig(n_starts=10, n_repeats=1, attack=AttackConfig(max_generations=200))
base, log = find_robust_base(dim=10, dataset_size=2000, max_candidates=5, cfg=cfg, seed=1, rate_screen=0.5)
for c in log:
    print(f"candidate {c.index}: accuracy {c.accuracy:.4f}, attack rate {c.rate}")

# %%
if base is None:
    print("no candidate passed the screen; raise max_candidates or rate_screen")
else:
    for source in Source:
        rep = run_ablation(AblationSpec(base, source, n_trials=3), cfg)
        hashes = len({t.model_hash for t in rep.trials})
        print(f"{source.value:>13}: rates {rep.per_trial_rates} mean {rep.mean:.2f} ({hashes} distinct models)")

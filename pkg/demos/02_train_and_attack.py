"""
Training a classifier and searching inside its training distribution
====================================================================

Two classes live in disjoint cubes.  A small MLP separates them almost
perfectly on held-out data, yet CMA-Search often finds points *inside* a
cube that the model puts in the wrong class.
"""

# %%
import numpy as np

from indist_adv.cma_search import attack, parametric_space
from indist_adv.evaluation import AttackConfig, ModelSeeds, attack_rate, fit_model, held_out_accuracy
from indist_adv.parametric_data import UniformPairSupport, membership

support = UniformPairSupport(dim=20)
model, data, losses = fit_model(20, 1000, ModelSeeds.derive(3), support=support)
print(f"loss {losses[0]:.3f} -> {losses[-1]:.3f}")
print(f"held-out accuracy: {held_out_accuracy(model, support, seed=11):.4f}")

# %% One search from a correctly classified class-0 point.
rng = np.random.default_rng(0)
start = rng.uniform(-10, 10, 20)
assert np.argmax(model(start[None])) == 0
out = attack(model, 0, start, parametric_space(support, 0), max_generations=1500, seed=5)
if out.success:
    print(f"found after {out.iterations_used} generations, distance {out.distance:.2f}")
    print("still in class 0's cube:", membership(support, out.adversarial).name)
    print("model now says class", int(np.argmax(model(out.adversarial[None]))))
else:
    print("no adversarial point within the budget")

# %% The attack rate: the fraction of correct starts for which the search succeeds.
report = attack_rate(model, support, n_starts=20, n_repeats=1, attack_cfg=AttackConfig(300), seed=1)
print(f"attack rate {report.mean_rate:.2f}, mean distance {report.mean_distance}")

"""
The evolution strategy on its own
=================================

CMA-ES samples a population from a Gaussian, ranks it, and moves the mean,
covariance and step size toward the better half.  Here it runs on two
textbook functions through the ask/tell interface.
"""

# %%
import numpy as np

from indist_adv.evo_strategy import GenerationInfeasible, es_ask, es_init, es_tell, minimize, rank
from indist_adv.seeding import make_rng


def sphere(x):
    return float(x @ x)


def rosenbrock(x):
    return float(np.sum(100 * (x[1:] - x[:-1] ** 2) ** 2 + (1 - x[:-1]) ** 2))


# %% The convenience loop stops at a target value or an evaluation budget.
x, f, evals, state = minimize(sphere, np.full(10, 3.0), 1.0, make_rng(0), max_evals=6000, target=1e-8)
print(f"sphere:     f = {f:.2e} after {evals} evaluations, final sigma {state.sigma:.2e}")

x, f, evals, _ = minimize(rosenbrock, np.zeros(5), 0.5, make_rng(0), max_evals=30_000, target=1e-6)
print(f"rosenbrock: f = {f:.2e} after {evals} evaluations, x = {np.round(x, 4)}")

# %% The same thing by hand, minimizing the sphere over x >= 1 componentwise.
# Infeasible offspring get fitness +inf, sort last and are never selected.
# A generation with fewer than mu feasible offspring is refused; draw again.
state = es_init(np.full(4, 3.0), 0.5)
rng = make_rng(1)
redraws = 0
for gen in range(150):
    while True:
        X = es_ask(state, rng)
        fit = np.array([sphere(p) if np.all(p >= 1) else np.inf for p in X])
        try:
            state = es_tell(state, rank(X, fit))
            break
        except GenerationInfeasible:
            redraws += 1
print(f"constrained sphere: mean {np.round(state.mean, 4)} ({redraws} generations redrawn)")

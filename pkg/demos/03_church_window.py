"""
Looking at the boundary: church-window slices
=============================================

A 2-D slice through the start point, spanned by the direction to the
adversarial point and a random orthogonal direction.  White cells are
classified correctly, red ones are in-distribution mistakes, black ones lie
outside the data's support.
"""

# %%
from pathlib import Path

from indist_adv.evaluation import ModelSeeds, attack_rate, church_window, fit_model, has_clean_band, render_grid
from indist_adv.parametric_data import UniformPairSupport

out_dir = Path("demo_out")
out_dir.mkdir(exist_ok=True)

support = UniformPairSupport(20)
model, _, _ = fit_model(20, 1000, ModelSeeds.derive(3), support=support)
report = attack_rate(model, support, n_starts=10, n_repeats=1, seed=2)

# %%
for k, o in enumerate(report.successes[:3]):
    grid = church_window(model, support, o.start, o.adversarial, orth_seed=k)
    path = out_dir / f"window_{k}.ppm"
    render_grid(grid, path)
    row = "".join("CAO"[c] for c in grid.center_row()[grid.steps[1] // 2:])
    print(f"{path}: clean band {has_clean_band(grid)}  beta=0 row from the start: {row}")

"""
Scene parameters and an external classifier
===========================================

Scenes are camera and light parameters drawn from fixed distributions.  A
classifier of rendered scenes is reached through a child process speaking
JSON lines; the built-in synthetic oracle stands in for a renderer plus a
network.  The search moves only the camera block.
"""

# %%
import sys

import numpy as np

from indist_adv.scene_space import SubprocessOracle, attack_scene, block_mask, sample_scene, scene_membership
from indist_adv.seeding import make_rng

rng = make_rng(4)
scene = sample_scene(rng)
print(f"{scene.n_lights} light(s), flat length {scene.flat.size}")
print("camera position", np.round(scene.camera.position, 3), "fov", round(scene.camera.fov, 1))
print("in distribution:", scene_membership(scene))

# %% Any command that reads requests on stdin and answers on stdout will do.
cmd = [sys.executable, "-m", "indist_adv.oracle_server", "--seed", "0"]
with SubprocessOracle(cmd) as oracle:
    (label, probs), = oracle.classify([scene])
    print(f"oracle label {label}, p = {probs[label]:.3f}")
    wins = 0
    for i in range(10):
        s = sample_scene(rng)
        out = attack_scene(oracle, s, "camera", max_generations=15, seed=i)
        if out.success:
            wins += 1
            untouched = np.array_equal(out.adversarial[~block_mask(s.n_lights, "camera")],
                                       s.flat[~block_mask(s.n_lights, "camera")])
            print(f"scene {i}: flipped with a {out.distance:.2f}% camera change; lights untouched: {untouched}")
    print(f"{wins}/10 scenes flipped within 15 generations")

"""Retarget a synthetic pick episode onto a shape library and write point-cloud observations.

The scene is a rendered ball moved by a box-shaped arm. The library holds the
scanned ball and a larger ball; each generated episode swaps in one of them.

Run: python demos/retarget_episode.py [--out /tmp/shapegen_demo]
"""

import argparse
import time
from pathlib import Path

import numpy as np

from shapegen.alignment import make_retarget_plan
from shapegen.episode import load_episode
from shapegen.geometry import icosphere
from shapegen.library import add_shape, init_library, plug
from shapegen.neural import TrainConfig
from shapegen.obsgen import (
    ObsGenConfig,
    chamfer_distance,
    generate_observations,
    source_observation,
    write_generated_episode,
)
from shapegen.synthetic import write_sphere_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="/tmp/shapegen_demo")
    ap.add_argument("--n-points", type=int, default=4096)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    scene = write_sphere_scene(out / "scene")
    episode = load_episode(out / "scene")
    print(f"episode {episode.episode_id}: {episode.length} frames, "
          f"{episode.intrinsics.width}x{episode.intrinsics.height} depth")

    cfg = TrainConfig(grid_resolution=64, sdf_epochs=10, epochs=2, batch_size=1024, learning_rate=1e-3)
    t0 = time.perf_counter()
    lib = init_library("sphere", scene.scanned, cfg)
    lib = add_shape(lib, scene.scanned, "ball", cfg)
    lib = add_shape(lib, icosphere(4, 0.07, name="big_ball"), "big_ball", cfg)
    plugged = plug(lib, scene.scanned, cfg)
    print(f"library with {len(lib)} entries trained and plugged in {time.perf_counter() - t0:.0f} s")

    oc = ObsGenConfig(n_points=args.n_points)
    for target in plugged.targets:
        plan = make_retarget_plan(episode, scene.annotation, plugged, target)
        shift = np.linalg.norm(plan.actions[-1].translation - episode.actions[-1].translation)
        t0 = time.perf_counter()
        obs = list(generate_observations(episode, plan, plugged.substitute_mesh(target), oc,
                                         scene.annotation.other_foreground_objects))
        fps = plan.length / (time.perf_counter() - t0)
        dest = write_generated_episode(plan, obs, out / "generated" / target, oc,
                                       gripper_widths=episode.gripper_widths)
        cd = chamfer_distance(dict(obs)[25], source_observation(episode, 25, oc))
        print(f"{target}: final grasp moved {1000 * shift:.1f} mm, frame 25 chamfer to source {cd:.2e} m, "
              f"{fps:.1f} frames/s -> {dest}")


if __name__ == "__main__":
    main()

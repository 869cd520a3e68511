"""Train every forecaster variant on oracle boxes and compare them on held-out scenes.

This is a reduced version of the acceptance experiment (a few hundred scenes
instead of two thousand), so it finishes in a few minutes. The columns are
the held-out collision rate between 0 and 3 s and the mean per-waypoint NLL.
"""

import sys

from spagnn.model import VARIANTS
from spagnn.scenes import generate_dataset
from spagnn.train import TrainConfig, evaluate_model, prepare_scene, train_loop


def main(n_train: int = 300, iterations: int = 400) -> None:
    train = [prepare_scene(s) for s in generate_dataset("mixed", n_train, 100)]
    held = [prepare_scene(s) for s in generate_dataset("mixed", 100, 200)]
    print(f"{'variant':18s} {'collision 0-3 s':>16s} {'NLL':>8s} {'L2 @ 3 s':>10s}")
    for variant in VARIANTS:
        cfg = TrainConfig(mode="forecast", variant=variant, iterations=iterations, batch_size=8)
        rep = evaluate_model(train_loop(cfg, train).store, cfg, held)
        print(f"{variant:18s} {rep.collision[(0.0, 3.0)]:14.1f} ‰ {rep.nll:8.3f} {rep.errors[3.0][0]:8.0f} cm")


if __name__ == "__main__":
    main(*map(int, sys.argv[1:3]))

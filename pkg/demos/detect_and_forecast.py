"""Joint training of the detector and the forecaster, then a rendered rollout.

Early iterations feed the forecaster ground-truth boxes and later ones
switch to live detections (scheduled sampling with the toy breakpoints).
The script writes ``rollout.svg`` with the PR curve and two scenes, each
waypoint drawn as a one-sigma ellipse. Forecast errors are reported at recall
0.5, or at 90% of the best recall the detector reaches if that is lower.
"""

import dataclasses
import sys

from spagnn.plotting import compose_svg, pr_svg, rollout_svg
from spagnn.scenes import generate_dataset
from spagnn.train import TrainConfig, evaluate_model, predict, prepare_scene, train_loop


def main(iterations: int = 600, out: str = "rollout.svg") -> None:
    train = [prepare_scene(s) for s in generate_dataset("mixed", 200, 11)]
    test = [prepare_scene(s) for s in generate_dataset("mixed", 30, 12)]
    cfg = TrainConfig(
        mode="joint", iterations=iterations, lr=5e-4, augment=True,
        breakpoints=(iterations // 3, 2 * iterations // 3),
    )
    result = train_loop(cfg, train, log_every=100)
    best_recall = evaluate_model(result.store, dataclasses.replace(cfg, mode="detect"), test).pr[1].max(initial=0.0)
    if best_recall == 0.0:
        print("the detector found no vehicles; train for more iterations")
        return
    rep = evaluate_model(result.store, cfg, test, recall=min(0.5, 0.9 * best_recall))
    print(f"mAP {rep.map:.3f}; at recall {rep.operating_recall:.2f}: L2 at 3 s {rep.errors[3.0][0]:.0f} cm; collisions 0-3 s {rep.collision[(0.0, 3.0)]:.1f} permille")
    panels = [(pr_svg(*rep.pr, f"mAP {rep.map:.3f}"), 320, 240)]
    for k, sc in enumerate(test[:2]):
        panels.append((rollout_svg(predict(result.store, cfg, sc).world, sc.label_future, f"scene {k}"), 300, 300))
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(compose_svg(panels))
    print(f"wrote {out}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 600)

"""Train a small model on the built-in synthetic faces.

The synthetic dataset renders an analytic three-region scene (a head, two
eyes, a mouth-like bar) from random poses, so there is real multi-view
structure to learn but no data to download. A couple of thousand steps on
one CPU core gives a model whose rendered masks visibly track the scene;
the other demos default to the checkpoint this script writes.

    python3 demos/00_train_toy.py --steps 2000 --out runs/demo
"""

import argparse

from lcnerf import TrainConfig, train


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--out", default="runs/demo")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    config = TrainConfig()
    config.seed = args.seed
    config.total_steps = args.steps
    config.checkpoint_every = max(args.steps // 4, 1)
    config.log_every = 50

    # Desk-scale knobs: 3 regions, 32 px renders, width-32 generators.
    # The generator lr is raised from the full-scale default; at this
    # scale the default is too timid to sharpen the density field.
    config.model.regions = 3
    config.model.geo_hidden_dim = 32
    config.model.geo_feature_dim = 32
    config.model.tex_hidden_dim = 32
    config.model.tex_feature_dim = 32
    config.resolution = 32
    config.eikonal_points = 256
    config.lr_generator = 2e-4

    def progress(metrics):
        if metrics["step"] % 50 == 0:
            print(f"step {metrics['step']:>5}  generator {metrics['loss_g']:.3f}  "
                  f"image D {metrics['loss_d_image']:.3f}  "
                  f"pair D {metrics['loss_d_pair']:.3f}  "
                  f"beta {metrics['beta']:.4f}")

    print(f"training {args.steps} steps into {args.out}")
    final = train(config, args.out, progress=progress)
    print(f"final checkpoint: {final}")
    print("next: python3 demos/01_generate_views.py")


if __name__ == "__main__":
    main()

"""Bring an existing image into the model so it can be edited.

Inversion runs in two phases: optimize per-region style rows until the
render matches the photo (the rows live in the same space the generator
samples from, so every editing tool keeps working), then briefly fine-tune
the generator weights around that pivot to recover detail the style space
cannot express.

Here the "photo" is a render from a different seed, so ground truth is
known and reconstruction quality is easy to judge.

    python3 demos/04_invert_photo.py --checkpoint runs/demo/checkpoint_final.lcnf
"""

import argparse
from pathlib import Path

from lcnerf import invert, open_session, save_image_png
from lcnerf.rendering import Camera


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--checkpoint", default="runs/demo/checkpoint_final.lcnf")
    parser.add_argument("--photo-seed", type=int, default=33)
    parser.add_argument("--latent-iters", type=int, default=150)
    parser.add_argument("--tuning-iters", type=int, default=100)
    parser.add_argument("--out", default="out/invert")
    args = parser.parse_args()

    # Fabricate the subject: a held-out identity the inversion never sees
    # the latents of, only its image and segmentation.
    subject = open_session(args.checkpoint, seed=args.photo_seed)
    shot = subject.render()
    camera = subject.view()

    session = invert(shot.image, shot.labels(), camera, args.checkpoint,
                     latent_iterations=args.latent_iters,
                     tuning_iterations=args.tuning_iters, seed=0)
    latent = session.inversion_losses["latent"]
    tuning = session.inversion_losses["tuning"]
    print(f"latent phase   {latent[0]:.4f} -> {latent[-1]:.4f} "
          f"({len(latent)} iters)")
    print(f"tuning phase   {tuning[0]:.4f} -> {tuning[-1]:.4f} "
          f"({len(tuning)} iters)")

    recon = session.render()
    err = (recon.image - shot.image).abs().mean()
    print(f"mean reconstruction error {err:.4f}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image_png(out / "photo.png", shot.image)
    save_image_png(out / "reconstruction.png", recon.image)
    print(f"wrote photo + reconstruction to {out}; the returned session "
          f"accepts the same edits as a generated one")


if __name__ == "__main__":
    main()

"""Command-line entry points: train, generate, invert, edit, transfer,
evaluate, and serve.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every
subcommand takes ``--seed`` and writes its artifacts under ``--out``,
including the effective configuration or invocation record so a run can
be reproduced from its output directory alone.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .adversarial import TrainingDiverged
from .checkpoint import CheckpointError
from .config import ConfigError, TrainConfig
from .data import LabelSchema, load_mask_png, save_mask_png
from .inversion import (LatentBankError, edit_mask, invert, load_latent_bank,
                        open_session, save_latent_bank, swap_region_latents)
from .metrics import dilate_mask, mask_consistency, pixel_difference
from .rendering import save_image_png
from .training import (build_state, load_checkpoint, save_checkpoint, train,
                       training_camera)


class UsageError(ValueError):
    """Argument value errors that should exit with status 2."""


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except (UsageError, ConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (FileNotFoundError, CheckpointError, LatentBankError,
            TrainingDiverged, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lcnerf",
        description="Region-compositional radiance fields: training, "
                    "generation, inversion, mask editing, style transfer, "
                    "and edit evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="INI config; defaults train the toy setup")
    p.add_argument("--override", action="append", default=[],
                   metavar="SECTION.KEY=VALUE",
                   help="config override applied after the file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("generate", help="sample an identity and render views")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--views", default="0.0",
                   help="comma-separated azimuths, each optionally az:el")
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("invert", help="fit latents and weights to an image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--latent-iters", type=int, default=300)
    p.add_argument("--tuning-iters", type=int, default=200)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_invert)

    p = sub.add_parser("edit", help="optimize named regions toward a mask")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bank", help="latent bank file; otherwise sample --seed")
    p.add_argument("--target-mask", required=True)
    p.add_argument("--regions", required=True,
                   help="comma-separated region ids to move")
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_edit)

    p = sub.add_parser("transfer", help="swap region styles from a donor")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bank", help="latent bank file; otherwise sample --seed")
    p.add_argument("--donor", help="donor latent bank file")
    p.add_argument("--donor-seed", type=int, default=None,
                   help="sample the donor instead of reading a file")
    p.add_argument("--regions", required=True,
                   help="comma-separated region ids, or 'all'")
    p.add_argument("--which", choices=("geometry", "texture", "both"),
                   default="both")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_transfer)

    p = sub.add_parser("evaluate",
                       help="score before/after edit directories with "
                            "pixel-difference and mask-consistency")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--schema", choices=("toy", "celeba"), default="toy")
    p.add_argument("--regions", type=int, default=None,
                   help="region count for the toy schema; default inferred")
    p.add_argument("--dilate", type=int, default=3,
                   help="pixels of edit-boundary band excluded from PD")
    p.add_argument("--edits", help="JSON file mapping pair stem to the "
                                   "edited region id; default inferred")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--max-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--frontend", default=None, metavar="DIR",
                   help="directory of static files (the browser editor) "
                        "to serve at /")
    p.set_defaults(handler=cmd_serve)

    return parser


# ----------------------------------------------------------------- plumbing

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    record = {key: value for key, value in vars(args).items()
              if key != "handler"}
    (out / "invocation.json").write_text(
        json.dumps(record, sort_keys=True, indent=2) + "\n")
    return out


def _load_image(path) -> torch.Tensor:
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr.copy())


def _schema_for(session) -> LabelSchema:
    if session.config.data.dataset == "celeba":
        return LabelSchema.celeba()
    return LabelSchema.toy(session.regions)


def _parse_regions(text: str, limit: int | None = None) -> list[int]:
    try:
        ids = [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise UsageError(f"--regions {text!r} is not a comma-separated "
                         f"integer list")
    if not ids:
        raise UsageError("--regions names no regions")
    if limit is not None:
        for region in ids:
            if not 0 <= region < limit:
                raise UsageError(f"region id {region} outside [0, {limit})")
    return ids


def _parse_views(text: str) -> list[tuple[float, float]]:
    views = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        az, _, el = part.partition(":")
        try:
            views.append((float(az), float(el) if el else 0.0))
        except ValueError:
            raise UsageError(f"--views entry {part!r} is not az[:el]")
    if not views:
        raise UsageError("--views names no views")
    return views


def _session_from_args(args):
    session = open_session(args.checkpoint, seed=args.seed)
    if args.bank:
        bank = load_latent_bank(args.bank)
        if bank.regions != session.regions:
            raise UsageError(
                f"bank has {bank.regions} regions, model has "
                f"{session.regions}")
        session.bank = bank
        session.base_bank = bank.clone()
    return session


def _save_render(session, out: Path, stem: str, schema: LabelSchema,
                 azimuth: float | None = None, elevation: float | None = None,
                 size: int | None = None) -> None:
    with torch.no_grad():
        result = session.render(azimuth=azimuth, elevation=elevation,
                                size=size)
    save_image_png(out / f"{stem}_image.png", result.image_over())
    save_mask_png(out / f"{stem}_mask.png", result.labels(), schema.palette)


# -------------------------------------------------------------- subcommands

def cmd_train(args) -> int:
    config = TrainConfig.load(args.config) if args.config else TrainConfig()
    config.apply_overrides(args.override)
    if args.seed is not None:
        config.seed = args.seed
    out = _out_dir(args)

    def progress(metrics):
        step = metrics["step"]
        if not args.quiet and (step % max(config.log_every, 1) == 0
                               or step == config.total_steps):
            print(f"step {step}/{config.total_steps}  "
                  f"g {metrics['loss_g']:.4f}  "
                  f"d_image {metrics['loss_d_image']:.4f}  "
                  f"d_pair {metrics['loss_d_pair']:.4f}")

    final = train(config, out, resume=args.resume, progress=progress)
    print(f"effective config: {out / 'config.ini'}")
    print(f"final checkpoint: {final}")
    return 0


def cmd_generate(args) -> int:
    views = _parse_views(args.views)
    session = open_session(args.checkpoint, seed=args.seed)
    schema = _schema_for(session)
    out = _out_dir(args)
    for index, (azimuth, elevation) in enumerate(views):
        _save_render(session, out, f"view{index:03d}", schema,
                     azimuth=azimuth, elevation=elevation, size=args.size)
    save_latent_bank(out / "bank.lclw", session.bank)
    print(f"wrote {len(views)} view(s) and bank.lclw to {out}")
    return 0


def cmd_invert(args) -> int:
    image = _load_image(args.image)
    labels = load_mask_png(args.mask)
    config = load_checkpoint(args.checkpoint).config
    camera = training_camera(config, 0.0, 0.0)
    session = invert(image, labels, camera, args.checkpoint,
                     latent_iterations=args.latent_iters,
                     tuning_iterations=args.tuning_iters, seed=args.seed)
    out = _out_dir(args)
    schema = _schema_for(session)
    save_latent_bank(out / "bank.lclw", session.bank)
    _save_render(session, out, "reconstruction", schema)
    (out / "losses.json").write_text(
        json.dumps(session.inversion_losses, indent=2) + "\n")

    # The tuned weights are part of the inversion result; re-wrap them as
    # a checkpoint so later edit/transfer runs can load them.
    state = build_state(config)
    state.generators.load_state_dict(session.generators.state_dict())
    state.fusion.load_state_dict(session.fusion.state_dict())
    save_checkpoint(state, out / "tuned.lcnf")
    print(f"wrote bank.lclw, reconstruction renders, losses.json, "
          f"tuned.lcnf to {out}")
    return 0


def cmd_edit(args) -> int:
    session = _session_from_args(args)
    labels = load_mask_png(args.target_mask)
    regions = _parse_regions(args.regions, session.regions)
    if args.iterations < 1:
        raise UsageError("--iterations must be positive")
    out = _out_dir(args)
    schema = _schema_for(session)
    _save_render(session, out, "before", schema)

    job = edit_mask(session, labels, regions, iterations=args.iterations)
    (out / "job.json").write_text(json.dumps({
        "status": job.status,
        "iterations": job.iteration,
        "losses": job.losses,
        "error": job.error or None,
    }, indent=2) + "\n")
    if job.status != "done":
        print(f"error: edit failed: {job.error}", file=sys.stderr)
        return 1

    _save_render(session, out, "after", schema)
    save_latent_bank(out / "bank_edited.lclw", session.bank)
    print(f"logged {len(job.losses)} iteration(s); "
          f"final loss {job.losses[-1]:.6f}")
    print(f"wrote before/after renders, job.json, bank_edited.lclw to {out}")
    return 0


def cmd_transfer(args) -> int:
    session = _session_from_args(args)
    if (args.donor is None) == (args.donor_seed is None):
        raise UsageError("exactly one of --donor or --donor-seed is required")
    if args.donor is not None:
        donor = load_latent_bank(args.donor)
    else:
        donor = open_session(args.checkpoint, seed=args.donor_seed).bank
    if args.regions.strip() == "all":
        regions = list(range(session.regions))
    else:
        regions = _parse_regions(args.regions, session.regions)
    out = _out_dir(args)
    schema = _schema_for(session)
    _save_render(session, out, "before", schema)
    swap_region_latents(session, regions, donor, args.which)
    _save_render(session, out, "after", schema)
    save_latent_bank(out / "bank_swapped.lclw", session.bank)
    print(f"swapped {args.which} of regions {regions}; outputs in {out}")
    return 0


def cmd_evaluate(args) -> int:
    before = Path(args.before)
    after = Path(args.after)
    if not before.is_dir() or not after.is_dir():
        raise UsageError("--before and --after must be directories")
    if args.dilate < 0:
        raise UsageError("--dilate must be >= 0")
    stems = sorted(p.name[:-len("_image.png")]
                   for p in before.glob("*_image.png"))
    if not stems:
        raise UsageError(f"no *_image.png files in {before}")

    manifest = {}
    if args.edits:
        manifest = json.loads(Path(args.edits).read_text())

    pairs = []
    top_class = 0
    for stem in stems:
        entry = {}
        for side, root in (("before", before), ("after", after)):
            image_path = root / f"{stem}_image.png"
            mask_path = root / f"{stem}_mask.png"
            for path in (image_path, mask_path):
                if not path.is_file():
                    raise FileNotFoundError(f"missing {path}")
            entry[side] = (_load_image(image_path), load_mask_png(mask_path))
        pairs.append((stem, entry))
        top_class = max(top_class, int(entry["before"][1].max()),
                        int(entry["after"][1].max()))

    regions = args.regions if args.regions is not None else top_class + 1
    schema = (LabelSchema.celeba() if args.schema == "celeba"
              else LabelSchema.toy(max(regions, 2)))

    scored = []
    for stem, entry in pairs:
        image_b, mask_b = entry["before"]
        image_a, mask_a = entry["after"]
        edited = manifest.get(stem)
        if edited is None:
            edited = _infer_edited_region(mask_b, mask_a)
        if edited is not None and not 0 <= edited < schema.regions:
            raise UsageError(f"edited region {edited} for {stem!r} outside "
                             f"[0, {schema.regions})")
        if edited is None:
            non_edit = torch.ones_like(mask_b, dtype=torch.bool)
        else:
            touched = ((mask_b == edited) | (mask_a == edited)).float()
            non_edit = dilate_mask(touched, args.dilate) < 0.5
        pd = (pixel_difference(image_b, image_a, non_edit)
              if bool(non_edit.any()) else None)
        mc = mask_consistency(mask_b, mask_a)
        scored.append({"stem": stem, "region": edited, "pd": pd, "mc": mc})

    report = _evaluation_report(scored, schema)
    out = _out_dir(args)
    (out / "evaluation.json").write_text(json.dumps(report, indent=2) + "\n")
    text = _evaluation_table(report)
    (out / "evaluation.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.checkpoint_dir, max_render_size=args.max_size,
                     static_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ------------------------------------------------------------- evaluation

def _infer_edited_region(mask_b: torch.Tensor,
                         mask_a: torch.Tensor) -> int | None:
    """The edited region is the class involved in the most label churn.

    Background churn is ignored: a moved region vacates and claims
    background pixels in equal measure, which would otherwise tie or win.
    """
    changed = mask_b != mask_a
    if not bool(changed.any()):
        return None
    counts = torch.bincount(torch.cat([mask_b[changed], mask_a[changed]]))
    counts[0] = 0
    return int(counts.argmax())


def _evaluation_report(scored: list[dict], schema: LabelSchema) -> dict:
    def summarize(rows):
        if not rows:
            return {"pairs": 0, "pd": None, "mc": None}
        pds = [r["pd"] for r in rows if r["pd"] is not None]
        return {
            "pairs": len(rows),
            "pd": sum(pds) / len(pds) if pds else None,
            "mc": sum(r["mc"] for r in rows) / len(rows),
        }

    rows = []
    for region in range(1, schema.regions):
        matching = [r for r in scored if r["region"] == region]
        rows.append({"region": schema.names[region], **summarize(matching)})
    report = {"rows": rows, "average": {"region": "average",
                                        **summarize(scored)}}
    report["pairs"] = [
        {**entry,
         "region": None if entry["region"] is None
         else schema.names[entry["region"]]}
        for entry in scored
    ]
    return report


def _evaluation_table(report: dict) -> str:
    def fmt(value):
        return "-" if value is None else f"{value:.6f}"

    lines = [f"{'region':<12}{'pairs':>6}{'PD':>12}{'MC':>12}"]
    for row in report["rows"] + [report["average"]]:
        lines.append(f"{row['region']:<12}{row['pairs']:>6}"
                     f"{fmt(row['pd']):>12}{fmt(row['mc']):>12}")
    return "\n".join(lines) + "\n"


if __name__ == "__main__":
    sys.exit(main())

"""Image inversion, mask-driven local editing, and latent style transfer.

An EditSession owns one model instance (its generator weights may be
fine-tuned per image, so sessions never share modules) plus the current
latent bank. Every mutation goes through a history record; replaying the
history from the base bank reproduces the current bank bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import Tensor

from .adversarial import TrainingDiverged
from .config import TrainConfig
from .fusion import FusionModule
from .generators import LatentBank, RegionGeneratorBank
from .rendering import Camera, RenderResult, render
from .training import load_checkpoint

BANK_MAGIC = b"LCLW"
BANK_VERSION = 1

JOB_STATES = ("pending", "running", "done", "failed")


class LatentBankError(RuntimeError):
    pass


def save_latent_bank(path, bank: LatentBank) -> None:
    """Write a bank as magic, version, K, L_w, then w_g rows, then w_t rows."""
    blob = bytearray()
    blob += BANK_MAGIC
    blob += struct.pack("<III", BANK_VERSION, bank.regions, bank.style_dim)
    for rows in (bank.w_g, bank.w_t):
        blob += rows.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_latent_bank(path) -> LatentBank:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise LatentBankError(f"{path} is truncated (only {len(data)} bytes)")
    if data[:4] != BANK_MAGIC:
        raise LatentBankError(f"{path} is not a latent bank file (bad magic)")
    version, regions, style_dim = struct.unpack("<III", data[4:16])
    if version != BANK_VERSION:
        raise LatentBankError(
            f"latent bank version {version} unsupported (this build reads "
            f"version {BANK_VERSION})"
        )
    expected = 16 + 2 * regions * style_dim * 4
    if len(data) != expected:
        raise LatentBankError(
            f"{path} holds {len(data)} bytes, expected {expected} for "
            f"{regions} regions x {style_dim} dims"
        )
    flat = torch.frombuffer(bytearray(data[16:]), dtype=torch.float32)
    w_g = flat[: regions * style_dim].reshape(regions, style_dim).clone()
    w_t = flat[regions * style_dim:].reshape(regions, style_dim).clone()
    return LatentBank(w_g=w_g, w_t=w_t)


@dataclass
class HistoryRecord:
    """One applied mutation: an additive geometry delta or a row swap."""
    kind: str                      # "edit" | "swap"
    region_ids: tuple[int, ...]
    which: str                     # geometry | texture | both
    delta: Tensor | None = None    # (K, L_w), zero outside region_ids (edit)
    donor: LatentBank | None = None


def apply_record(bank: LatentBank, record: HistoryRecord) -> LatentBank:
    if record.kind == "edit":
        return LatentBank(w_g=bank.w_g + record.delta, w_t=bank.w_t)
    if record.kind == "swap":
        ids = list(record.region_ids)
        out = bank
        if record.which in ("geometry", "both"):
            out = out.with_rows(ids, record.donor.w_g[ids], "geometry")
        if record.which in ("texture", "both"):
            out = out.with_rows(ids, record.donor.w_t[ids], "texture")
        return out
    raise ValueError(f"unknown history record kind {record.kind!r}")


@dataclass
class EditSession:
    generators: RegionGeneratorBank
    fusion: FusionModule
    bank: LatentBank
    base_bank: LatentBank
    camera: Camera
    config: TrainConfig
    checkpoint: str = ""
    history: list = field(default_factory=list)
    inversion_losses: dict = field(default_factory=dict)

    @property
    def regions(self) -> int:
        return self.bank.regions

    def view(self, azimuth: float | None = None, elevation: float | None = None,
             size: int | None = None) -> Camera:
        side = size if size is not None else self.camera.resolution[0]
        return Camera(
            azimuth=self.camera.azimuth if azimuth is None else azimuth,
            elevation=self.camera.elevation if elevation is None else elevation,
            radius=self.camera.radius, fov=self.camera.fov,
            resolution=(side, side))

    def render(self, azimuth: float | None = None,
               elevation: float | None = None,
               size: int | None = None,
               bank: LatentBank | None = None) -> RenderResult:
        """Deterministic midpoint render of the current (or given) bank."""
        cam = self.view(azimuth, elevation, size)
        return render(self.generators, self.fusion,
                      bank if bank is not None else self.bank, cam,
                      samples_per_ray=self.config.samples_per_ray,
                      near=self.config.camera.near, far=self.config.camera.far)

    def apply(self, record: HistoryRecord) -> None:
        self.bank = apply_record(self.bank, record)
        self.history.append(record)

    def replay_bank(self) -> LatentBank:
        """Re-derive the current bank from the base through the history."""
        bank = self.base_bank
        for record in self.history:
            bank = apply_record(bank, record)
        return bank


def open_session(checkpoint_path, seed: int = 0) -> EditSession:
    """Session around a freshly sampled identity from a checkpoint."""
    state = load_checkpoint(checkpoint_path)
    rng = torch.Generator()
    rng.manual_seed(seed)
    with torch.no_grad():
        bank = state.generators.sample_latents(rng).detach()
    camera = Camera(azimuth=0.0, elevation=0.0,
                    radius=state.config.camera.radius,
                    fov=state.config.camera.fov,
                    resolution=(state.config.resolution, state.config.resolution))
    return EditSession(generators=state.generators, fusion=state.fusion,
                       bank=bank, base_bank=bank.clone(), camera=camera,
                       config=state.config, checkpoint=str(checkpoint_path))


def _session_render(generators, fusion, bank, camera, config) -> RenderResult:
    return render(generators, fusion, bank, camera,
                  samples_per_ray=config.samples_per_ray,
                  near=config.camera.near, far=config.camera.far)


def _reconstruction_loss(result: RenderResult, image: Tensor, labels: Tensor,
                         mask_weight: float = 0.5) -> Tensor:
    pixel = F.mse_loss(result.image_over(), image)
    probs = result.mask_with_background().clamp_min(1e-8)
    # Contiguous: the spatial NLL backward rejects permuted views.
    log_probs = probs.log().permute(2, 0, 1)[None].contiguous()
    ce = F.nll_loss(log_probs, labels[None])
    return pixel + mask_weight * ce


def invert(image: Tensor, labels: Tensor, camera: Camera, checkpoint_path,
           latent_iterations: int = 300, tuning_iterations: int = 200,
           latent_lr: float = 1e-2, tuning_lr: float = 1e-4,
           seed: int | None = None) -> EditSession:
    """Two-phase inversion: fit per-region style rows, then fine-tune weights.

    Phase 1 optimizes every geometry and texture row against pixel MSE
    plus mask cross-entropy. Phase 2 freezes the recovered bank and
    fine-tunes the generator weights around that pivot with the same
    objective. The returned session owns the tuned weights.
    """
    state = load_checkpoint(checkpoint_path)
    config = state.config
    if image.shape[:2] != camera.resolution or labels.shape != camera.resolution:
        raise ValueError(
            f"image {tuple(image.shape[:2])} / labels {tuple(labels.shape)} "
            f"do not match camera resolution {camera.resolution}"
        )
    if int(labels.max()) >= config.model.regions:
        raise ValueError(
            f"labels use id {int(labels.max())} outside the model's "
            f"{config.model.regions} regions"
        )
    # The photo is data: a graph-carrying tensor (a live render, say)
    # must not be backpropagated through on every iteration.
    image = image.detach()
    labels = labels.detach()
    rng = torch.Generator()
    rng.manual_seed(config.seed if seed is None else seed)
    with torch.no_grad():
        start = state.generators.mean_latents(rng)
    w_g = start.w_g.clone().requires_grad_(True)
    w_t = start.w_t.clone().requires_grad_(True)

    losses_latent = []
    opt = torch.optim.Adam([w_g, w_t], lr=latent_lr)
    for _ in range(latent_iterations):
        result = _session_render(state.generators, state.fusion,
                                 LatentBank(w_g=w_g, w_t=w_t), camera, config)
        loss = _reconstruction_loss(result, image, labels)
        if not bool(torch.isfinite(loss.detach())):
            raise TrainingDiverged("inversion_latent", float(loss.detach()))
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses_latent.append(float(loss.detach()))

    bank = LatentBank(w_g=w_g.detach().clone(), w_t=w_t.detach().clone())

    losses_tuning = []
    params = list(state.generators.parameters()) + list(state.fusion.parameters())
    opt = torch.optim.Adam(params, lr=tuning_lr)
    for _ in range(tuning_iterations):
        result = _session_render(state.generators, state.fusion, bank,
                                 camera, config)
        loss = _reconstruction_loss(result, image, labels)
        if not bool(torch.isfinite(loss.detach())):
            raise TrainingDiverged("inversion_tuning", float(loss.detach()))
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses_tuning.append(float(loss.detach()))

    return EditSession(generators=state.generators, fusion=state.fusion,
                       bank=bank, base_bank=bank.clone(), camera=camera,
                       config=config, checkpoint=str(checkpoint_path),
                       inversion_losses={"latent": losses_latent,
                                         "tuning": losses_tuning})


class EditJob:
    """Mask-fitting optimization over the geometry rows of named regions.

    Mutable so a polling thread can watch ``status``, ``iteration``, and
    ``losses`` while the optimization runs.
    """

    def __init__(self, job_id: str, region_ids: tuple[int, ...],
                 target_labels: Tensor, budget: int):
        self.job_id = job_id
        self.region_ids = region_ids
        self.target_labels = target_labels
        self.budget = budget
        self.status = "pending"
        self.iteration = 0
        self.losses: list[float] = []
        self.previews: dict[int, Tensor] = {}
        self.delta: Tensor | None = None
        self.error: str = ""

    def _advance(self, status: str) -> None:
        if JOB_STATES.index(status) < JOB_STATES.index(self.status):
            raise RuntimeError(f"job cannot move {self.status} -> {status}")
        self.status = status


def edit_mask(session: EditSession, target_labels: Tensor,
              region_ids, iterations: int = 500, lr: float = 1e-2,
              preview_every: int = 50, job_id: str = "edit",
              on_iteration=None) -> EditJob:
    """Optimize an additive delta on the named regions' geometry rows.

    The objective is MSE between the one-hot target mask and the rendered
    mask probabilities (background-filled). Texture rows and other
    regions' geometry rows are never touched: the delta tensor is zero
    outside the named rows by construction. On success the session's bank
    advances and the history records the delta.
    """
    ids = tuple(int(i) for i in region_ids)
    if not ids:
        raise ValueError("at least one region id is required")
    for region in ids:
        if not 0 <= region < session.regions:
            raise ValueError(
                f"region id {region} outside [0, {session.regions})"
            )
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate region ids in {ids}")
    if target_labels.shape != session.camera.resolution:
        raise ValueError(
            f"target mask {tuple(target_labels.shape)} does not match session "
            f"resolution {session.camera.resolution}"
        )
    if int(target_labels.max()) >= session.regions:
        raise ValueError(
            f"target mask uses id {int(target_labels.max())} outside the "
            f"model's {session.regions} regions"
        )

    job = EditJob(job_id, ids, target_labels.clone(), iterations)
    target = F.one_hot(target_labels.long(), session.regions).float()
    rows = torch.zeros(len(ids), session.bank.style_dim,
                       dtype=session.bank.w_g.dtype, requires_grad=True)
    opt = torch.optim.Adam([rows], lr=lr)
    index = torch.tensor(ids)

    def delta_bank(row_values: Tensor) -> LatentBank:
        delta = torch.zeros_like(session.bank.w_g).index_copy(0, index, row_values)
        return LatentBank(w_g=session.bank.w_g + delta, w_t=session.bank.w_t)

    job._advance("running")
    with torch.no_grad():
        job.previews[0] = session.render().image_over()
    try:
        for step in range(iterations):
            result = session.render(bank=delta_bank(rows))
            loss = F.mse_loss(result.mask_with_background(), target)
            if not bool(torch.isfinite(loss.detach())):
                raise TrainingDiverged("edit_mask", float(loss.detach()))
            opt.zero_grad()
            loss.backward()
            opt.step()
            job.iteration = step + 1
            job.losses.append(float(loss.detach()))
            if preview_every and job.iteration % preview_every == 0:
                with torch.no_grad():
                    job.previews[job.iteration] = session.render(
                        bank=delta_bank(rows)).image_over()
            if on_iteration is not None:
                on_iteration(job)
    except TrainingDiverged as err:
        job.error = str(err)
        job._advance("failed")
        return job

    delta = torch.zeros_like(session.bank.w_g).index_copy(
        0, index, rows.detach())
    job.delta = delta
    session.apply(HistoryRecord(kind="edit", region_ids=ids,
                                which="geometry", delta=delta))
    job._advance("done")
    return job


def swap_region_latents(session: EditSession, region_ids, donor: LatentBank,
                        which: str = "both") -> EditSession:
    """Replace the named regions' style rows with the donor's.

    ``region_ids`` is an iterable of ids, or the string ``"all"``.
    """
    if which not in ("geometry", "texture", "both"):
        raise ValueError(f"which must be geometry, texture, or both, got {which!r}")
    if isinstance(region_ids, str):
        if region_ids != "all":
            raise ValueError(f"region_ids must be ids or 'all', got {region_ids!r}")
        region_ids = range(session.regions)
    ids = tuple(int(i) for i in region_ids)
    for region in ids:
        if not 0 <= region < session.regions:
            raise ValueError(f"region id {region} outside [0, {session.regions})")
    if donor.regions != session.regions or donor.style_dim != session.bank.style_dim:
        raise ValueError(
            f"donor bank is {donor.regions}x{donor.style_dim}, session needs "
            f"{session.regions}x{session.bank.style_dim}"
        )
    session.apply(HistoryRecord(kind="swap", region_ids=ids, which=which,
                                donor=donor.detach().clone()))
    return session


def save_history(session: EditSession, out_dir) -> Path:
    """Write the history as JSON lines; tensors go to referenced bank files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "history.jsonl"
    with open(path, "w") as handle:
        for index, record in enumerate(session.history):
            row = {"kind": record.kind,
                   "region_ids": list(record.region_ids),
                   "which": record.which}
            if record.kind == "edit":
                ref = f"delta_{index:03d}.lclw"
                save_latent_bank(out_dir / ref, LatentBank(
                    w_g=record.delta, w_t=torch.zeros_like(record.delta)))
                row["delta_ref"] = ref
            else:
                ref = f"donor_{index:03d}.lclw"
                save_latent_bank(out_dir / ref, record.donor)
                row["donor_ref"] = ref
            handle.write(json.dumps(row, sort_keys=True) + "\n")
    return path


def load_history(path) -> list[HistoryRecord]:
    path = Path(path)
    records = []
    for line in path.read_text().splitlines():
        row = json.loads(line)
        ids = tuple(row["region_ids"])
        if row["kind"] == "edit":
            bank = load_latent_bank(path.parent / row["delta_ref"])
            records.append(HistoryRecord(kind="edit", region_ids=ids,
                                         which=row["which"], delta=bank.w_g))
        else:
            donor = load_latent_bank(path.parent / row["donor_ref"])
            records.append(HistoryRecord(kind="swap", region_ids=ids,
                                         which=row["which"], donor=donor))
    return records

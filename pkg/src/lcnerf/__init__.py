"""Region-compositional radiance fields for faces.

Per-region geometry/texture generator pairs are fused by softmaxed
confidences into one SDF-backed radiance field, rendered with image and
semantic mask sharing the same ray quadrature, and edited by optimizing
only the latent rows of named regions.
"""

from .adversarial import (ImageMaskDiscriminator, ImagePoseDiscriminator,
                          TrainingDiverged, eikonal_loss, gan_softplus,
                          generator_loss, image_disc_loss,
                          image_mask_disc_loss, minimal_surface_loss,
                          pose_loss, r1_penalty)
from .config import (CameraConfig, ConfigError, DataConfig, LossWeights,
                     ModelConfig, TrainConfig)
from .data import (LabelSchema, SegmentedSample, ToyDataset, ToyScene,
                   build_toy_dataset, generate_toy_scene, load_celeba,
                   load_mask_png, mask_png_bytes, merge_labels, sample_pose,
                   save_mask_png)
from .fusion import (FieldSample, FusionModule, evaluate_field,
                     fuse_confidences, fuse_features, sdf_to_density,
                     sdf_with_gradient)
from .generators import (GeometryGenerator, LatentBank, MappingNetwork,
                         ModulatedSineLayer, RegionGeneratorBank,
                         TextureGenerator)
from .inversion import (EditJob, EditSession, HistoryRecord, LatentBankError,
                        apply_record, edit_mask, invert, load_history,
                        load_latent_bank, open_session, save_history,
                        save_latent_bank, swap_region_latents)
from .metrics import dilate_mask, mask_consistency, mask_iou, pixel_difference
from .rendering import (Camera, CompositeResult, RayBatch, RenderResult,
                        composite, generate_rays, image_to_uint8, render,
                        sample_depths, save_image_png)
from .training import (TrainState, build_state, load_checkpoint,
                       save_checkpoint, train, train_step)

__all__ = [name for name in dir() if not name.startswith("_")]

"""Foreground-preserving background swaps and view augmentation."""
from tobias.augment.masks import MaskCache, PatchMask, compute_patch_mask, precompute_masks
from tobias.augment.patches import (MergedView, assemble_patches, merge, mixup, random_merge,
                                    split_patches, top_half_mask)
from tobias.augment.pipeline import AugmentationPipeline, default_transforms
from tobias.augment.view import ViewPool, sample_view

__all__ = ["AugmentationPipeline", "MaskCache", "MergedView", "PatchMask", "ViewPool",
           "assemble_patches", "compute_patch_mask", "default_transforms", "merge", "mixup",
           "precompute_masks", "random_merge", "sample_view", "split_patches", "top_half_mask"]

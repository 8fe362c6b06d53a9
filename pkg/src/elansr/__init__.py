"""Efficient long-range attention super-resolution on a minimal autodiff core."""

from .tensor import (
    BnParams,
    ConvParams,
    MacCounter,
    Tensor,
    batch_norm,
    batched_matmul,
    concat,
    conv2d,
    count_macs,
    default_dtype,
    fold_bn_into_conv,
    identity_bn,
    no_grad,
    pixel_shuffle,
    pixel_unshuffle,
    relu,
    set_default_dtype,
    softmax,
    tensor,
    zeros,
)
from .ops import (
    AsaWeights,
    AttentionScores,
    CropRecord,
    ElabWeights,
    GmsaConfig,
    GmsaWeights,
    ShiftPhase,
    asa_compute,
    asa_reuse,
    circular_shift,
    elab_forward,
    gmsa,
    inverse_circular_shift,
    local_feature_block,
    pad_to_windows,
    shift_conv,
    spatial_shift_5group,
    window_partition,
    window_reverse,
)
from .model import (
    ElanConfig,
    ElanWeights,
    FlopsReport,
    PRESETS,
    build,
    count_flops,
    count_params,
    elan_light,
    elan_normal,
    fold_batch_norms,
    forward,
    iter_arrays,
    toy_config,
    trainable_tensors,
)
from .metrics import Image, PSNR_IDENTICAL, psnr, rgb_to_ycbcr, ssim
from .data import PatchPair, augment, bicubic_resize, sample_patch_pairs
from .train import OptimizerState, Schedule, adam_step, l1_loss, lr_at, train_toy

__version__ = "0.1.0"

"""Network-specific operators: shift convolution and windowed multi-scale attention.

The attention here follows the accelerated form: batch norm instead of layer
norm, one projection serving both query and key, group-wise windows of
different sizes, and normalized score matrices that downstream blocks of the
same window layout may reuse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    BnParams,
    ConvParams,
    Tensor,
    batch_norm,
    batched_matmul,
    concat,
    conv2d,
    mac_scope,
    pad2d_reflect,
    relu,
    roll2d,
    softmax,
    _make,
)


# ---------------------------------------------------------------------------
# Spatial shift and shift-conv
# ---------------------------------------------------------------------------

_SHIFT_DIRS = ("left", "right", "up", "down", "none")
_SHIFT_INVERSE = {"left": "right", "right": "left", "up": "down", "down": "up", "none": "none"}


def _group_bounds(c: int) -> list[tuple[int, int]]:
    # equal fifths; remainder channels join the unshifted last group
    g = c // 5
    bounds = [(i * g, (i + 1) * g) for i in range(4)]
    bounds.append((4 * g, c))
    return bounds


def _shifted_copy(dst: np.ndarray, src: np.ndarray, direction: str) -> None:
    if direction == "none":
        dst[...] = src
    elif direction == "left":
        dst[:, :, :, :-1] = src[:, :, :, 1:]
    elif direction == "right":
        dst[:, :, :, 1:] = src[:, :, :, :-1]
    elif direction == "up":
        dst[:, :, :-1, :] = src[:, :, 1:, :]
    elif direction == "down":
        dst[:, :, 1:, :] = src[:, :, :-1, :]


def _shift5_raw(arr: np.ndarray, inverse: bool = False) -> np.ndarray:
    out = np.zeros_like(arr)
    for (lo, hi), d in zip(_group_bounds(arr.shape[1]), _SHIFT_DIRS):
        if inverse:
            d = _SHIFT_INVERSE[d]
        _shifted_copy(out[:, lo:hi], arr[:, lo:hi], d)
    return out


def spatial_shift_5group(x: Tensor) -> Tensor:
    """Translate four channel fifths one pixel left/right/up/down, zero-filled.

    The last fifth (plus any remainder channels) passes through unchanged.
    Zero parameters, zero MACs.
    """
    if x.data.shape[1] < 5:
        raise ValueError(f"spatial shift needs >= 5 channels, got {x.data.shape[1]}")
    out = _make(_shift5_raw(x.data), (x,))
    if out._parents:
        # the transpose of a zero-filled shift is the opposite shift
        out._backward_fn = lambda g, a=x: a._accumulate(_shift5_raw(g, inverse=True))
    return out


def shift_conv(x: Tensor, p: ConvParams) -> Tensor:
    """Five-group spatial shift followed by a 1x1 convolution.

    Same parameter count and MACs as the 1x1 convolution alone, with a
    3x3-like receptive field.
    """
    if p.kernel_size != 1:
        raise ValueError(f"shift_conv takes a 1x1 convolution, got k={p.kernel_size}")
    return conv2d(spatial_shift_5group(x), p)


def local_feature_block(x: Tensor, w1: ConvParams, w2: ConvParams) -> Tensor:
    """Residual local feature extraction: two shift-convs around a ReLU."""
    with mac_scope("lfe"):
        y = shift_conv(relu(shift_conv(x, w1)), w2)
    return x + y


# ---------------------------------------------------------------------------
# Window partitioning and circular shift
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowLayout:
    """Bookkeeping to undo a window partition."""

    batch: int
    channels: int
    height: int
    width: int
    window: int

    @property
    def num_windows(self) -> int:
        return (self.height // self.window) * (self.width // self.window)


def window_partition(x: Tensor, m: int) -> tuple[Tensor, WindowLayout]:
    """Cut (N, C, H, W) into non-overlapped m x m windows: (N*nW, m*m, C)."""
    n, c, h, w = x.data.shape
    if h % m or w % m:
        raise ValueError(f"spatial dims {(h, w)} not divisible by window {m}")
    layout = WindowLayout(n, c, h, w, m)
    t = x.reshape(n, c, h // m, m, w // m, m)
    t = t.transpose((0, 2, 4, 3, 5, 1))
    return t.reshape(n * layout.num_windows, m * m, c), layout


def window_reverse(windows: Tensor, layout: WindowLayout) -> Tensor:
    """Exact inverse of :func:`window_partition`."""
    n, c, h, w, m = (
        layout.batch,
        layout.channels,
        layout.height,
        layout.width,
        layout.window,
    )
    t = windows.reshape(n, h // m, w // m, m, m, c)
    t = t.transpose((0, 5, 1, 3, 2, 4))
    return t.reshape(n, c, h, w)


def circular_shift(x: Tensor, offset: tuple[int, int]) -> Tensor:
    """Toroidal translation along the diagonal; see :func:`inverse_circular_shift`."""
    return roll2d(x, offset)


def inverse_circular_shift(x: Tensor, offset: tuple[int, int]) -> Tensor:
    return roll2d(x, (-offset[0], -offset[1]))


@dataclass(frozen=True)
class CropRecord:
    """Original spatial extent to restore after window padding."""

    height: int
    width: int
    pad_bottom: int
    pad_right: int

    @property
    def is_identity(self) -> bool:
        return self.pad_bottom == 0 and self.pad_right == 0

    def apply(self, x: Tensor) -> Tensor:
        if self.is_identity:
            return x
        return x[:, :, : self.height, : self.width]


def pad_to_windows(x: Tensor, sizes) -> tuple[Tensor, CropRecord]:
    """Reflection-pad H and W up to the least common multiple of `sizes`."""
    n, c, h, w = x.data.shape
    m = math.lcm(*[int(s) for s in sizes])
    pb = (-h) % m
    pr = (-w) % m
    rec = CropRecord(h, w, pb, pr)
    if rec.is_identity:
        return x, rec
    return pad2d_reflect(x, (0, pb, 0, pr)), rec


# ---------------------------------------------------------------------------
# Accelerated self-attention
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShiftPhase:
    """Whether the feature is circularly shifted, and by how much."""

    shifted: bool
    offset: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if not self.shifted and self.offset != (0, 0):
            raise ValueError("unshifted phase must carry a zero offset")


@dataclass
class AsaWeights:
    """One attention group's projections.

    `theta` produces both query and key (there is no separate key projection);
    `g` produces the value. Sharing blocks reuse upstream scores and carry no
    theta; folded inference weights carry no batch norms.
    """

    theta: ConvParams | None
    g: ConvParams
    bn_theta: BnParams | None
    bn_g: BnParams | None

    def __post_init__(self):
        if self.theta is None and self.bn_theta is not None:
            raise ValueError("bn_theta without a theta projection")
        if self.g.kernel_size != 1 or (self.theta and self.theta.kernel_size != 1):
            raise ValueError("attention projections must be 1x1 convolutions")


@dataclass
class GmsaWeights:
    """All attention weights of one block: K group projections plus the merge."""

    groups: list[AsaWeights]
    merge: ConvParams


@dataclass(frozen=True)
class GmsaConfig:
    """Window sizes and channel split of the grouped attention."""

    window_sizes: tuple[int, ...]
    group_channels: tuple[int, ...]
    heads_per_group: int = 1

    def __post_init__(self):
        if len(self.window_sizes) < 1 or len(self.window_sizes) != len(self.group_channels):
            raise ValueError("need one window size per channel group")
        if any(m < 1 for m in self.window_sizes):
            raise ValueError("window sizes must be positive")
        if any(c < 1 for c in self.group_channels):
            raise ValueError("group channel counts must be positive")
        if self.heads_per_group < 1:
            raise ValueError("heads_per_group must be positive")

    @property
    def num_groups(self) -> int:
        return len(self.window_sizes)

    @property
    def channels(self) -> int:
        return sum(self.group_channels)


@dataclass
class AttentionScores:
    """Normalized per-group attention matrices, reusable across blocks.

    Each entry has shape (batch * num_windows * heads, m*m, m*m) with rows
    summing to one. Scores are immutable once produced and safe to share
    read-only across blocks of the same window layout and shift phase.
    """

    groups: list[Tensor]
    window_sizes: tuple[int, ...]
    padded_hw: tuple[tuple[int, int], ...]
    batch: int
    heads: int
    phase: ShiftPhase
    block_index: int | None = None


def _split_heads(windows: Tensor, heads: int) -> Tensor:
    if heads == 1:
        return windows
    b, t, c = windows.data.shape
    d = c // heads
    return windows.reshape(b, t, heads, d).transpose((0, 2, 1, 3)).reshape(b * heads, t, d)


def _merge_heads(windows: Tensor, heads: int) -> Tensor:
    if heads == 1:
        return windows
    bh, t, d = windows.data.shape
    b = bh // heads
    return windows.reshape(b, heads, t, d).transpose((0, 2, 1, 3)).reshape(b, t, heads * d)


def asa_compute(
    xg: Tensor,
    w: AsaWeights,
    m: int,
    heads: int = 1,
    training: bool = False,
    phase: ShiftPhase = ShiftPhase(False),
    block_index: int | None = None,
) -> tuple[Tensor, AttentionScores]:
    """Windowed self-attention with a shared query/key projection.

    Returns the attended feature and the normalized scores for reuse. The
    pre-softmax score matrix is symmetric because query and key coincide.
    """
    if w.theta is None:
        raise ValueError("asa_compute needs a theta projection (sharing block weights?)")
    n, _, h, wd = xg.data.shape
    with mac_scope("attn_theta"):
        q = conv2d(xg, w.theta)
        if w.bn_theta is not None:
            q = batch_norm(q, w.bn_theta, training)
    with mac_scope("attn_g"):
        v = conv2d(xg, w.g)
        if w.bn_g is not None:
            v = batch_norm(v, w.bn_g, training)
    cg = q.data.shape[1]
    if cg % heads:
        raise ValueError(f"group width {cg} not divisible by {heads} heads")
    qw, layout = window_partition(q, m)
    vw, _ = window_partition(v, m)
    qh = _split_heads(qw, heads)
    with mac_scope("attn_qk"):
        logits = batched_matmul(qh, qh.transpose((0, 2, 1)))
    scores = softmax(logits * (1.0 / math.sqrt(cg // heads)), axis=-1)
    with mac_scope("attn_av"):
        out_w = batched_matmul(scores, _split_heads(vw, heads))
    out = window_reverse(_merge_heads(out_w, heads), layout)
    record = AttentionScores(
        groups=[scores],
        window_sizes=(m,),
        padded_hw=((h, wd),),
        batch=n,
        heads=heads,
        phase=phase,
        block_index=block_index,
    )
    return out, record


def asa_reuse(
    xg: Tensor,
    w: AsaWeights,
    scores: AttentionScores,
    group: int = 0,
    training: bool = False,
) -> Tensor:
    """Apply previously computed attention scores to a fresh value projection.

    Skips the theta projection and the score computation entirely.
    """
    n, _, h, wd = xg.data.shape
    if group >= len(scores.groups):
        raise ValueError(f"scores carry {len(scores.groups)} groups, asked for {group}")
    if scores.padded_hw[group] != (h, wd) or scores.batch != n:
        raise ValueError(
            f"window layout mismatch: scores were computed on batch {scores.batch} "
            f"extent {scores.padded_hw[group]}, input is batch {n} extent {(h, wd)}"
        )
    m = scores.window_sizes[group]
    with mac_scope("attn_g"):
        v = conv2d(xg, w.g)
        if w.bn_g is not None:
            v = batch_norm(v, w.bn_g, training)
    vw, layout = window_partition(v, m)
    with mac_scope("attn_av"):
        out_w = batched_matmul(scores.groups[group], _split_heads(vw, scores.heads))
    return window_reverse(_merge_heads(out_w, scores.heads), layout)


# ---------------------------------------------------------------------------
# Group-wise multi-scale self-attention
# ---------------------------------------------------------------------------

def gmsa(
    x: Tensor,
    cfg: GmsaConfig,
    weights: GmsaWeights,
    phase: ShiftPhase,
    shared: AttentionScores | None = None,
    training: bool = False,
    block_index: int | None = None,
) -> tuple[Tensor, AttentionScores]:
    """Residual grouped attention over per-group window sizes.

    Each group's query/key/value projections read the full feature and emit
    that group's channel share; outputs are concatenated and merged by a 1x1
    convolution. When `shared` is given, its scores replace the per-group
    score computation (same window layout and shift phase required).
    """
    c = x.data.shape[1]
    if cfg.channels != c:
        raise ValueError(f"group channels {cfg.group_channels} do not sum to C={c}")
    if len(weights.groups) != cfg.num_groups:
        raise ValueError("one weight set per attention group is required")
    if shared is not None:
        if shared.phase != phase:
            raise ValueError(
                f"shift phase mismatch: scores carry {shared.phase}, block runs {phase}"
            )
        if shared.window_sizes != cfg.window_sizes:
            raise ValueError(
                f"window sizes mismatch: scores carry {shared.window_sizes}, "
                f"config wants {cfg.window_sizes}"
            )
    xs = circular_shift(x, phase.offset) if phase.shifted else x
    outs = []
    produced: list[Tensor] = []
    padded_hw: list[tuple[int, int]] = []
    for k, m in enumerate(cfg.window_sizes):
        xp, crop = pad_to_windows(xs, (m,))
        if shared is not None:
            out_k = asa_reuse(xp, weights.groups[k], shared, k, training)
        else:
            out_k, rec = asa_compute(
                xp,
                weights.groups[k],
                m,
                cfg.heads_per_group,
                training,
                phase,
                block_index,
            )
            produced.append(rec.groups[0])
            padded_hw.append(rec.padded_hw[0])
        outs.append(crop.apply(out_k))
    merged = concat(outs, axis=1)
    with mac_scope("merge"):
        merged = conv2d(merged, weights.merge)
    if phase.shifted:
        merged = inverse_circular_shift(merged, phase.offset)
    if shared is not None:
        record = shared
    else:
        record = AttentionScores(
            groups=produced,
            window_sizes=cfg.window_sizes,
            padded_hw=tuple(padded_hw),
            batch=x.data.shape[0],
            heads=cfg.heads_per_group,
            phase=phase,
            block_index=block_index,
        )
    return x + merged, record


@dataclass
class ElabWeights:
    """One block: two shift-convs (expand/project) plus grouped attention."""

    expand: ConvParams
    project: ConvParams
    attn: GmsaWeights


def elab_forward(
    x: Tensor,
    block: ElabWeights,
    cfg: GmsaConfig,
    phase: ShiftPhase,
    shared: AttentionScores | None = None,
    training: bool = False,
    block_index: int | None = None,
) -> tuple[Tensor, AttentionScores]:
    """Local feature extraction followed by grouped attention, both residual."""
    y = local_feature_block(x, block.expand, block.project)
    return gmsa(y, cfg, block.attn, phase, shared, training, block_index)

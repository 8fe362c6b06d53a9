"""Full network assembly: configuration, weights, forward pass, cost model.

The pipeline is a 3x3 head convolution, a chain of residual blocks (shift-conv
local features plus grouped windowed attention), a global shortcut from the
head output, and a 3x3 tail convolution feeding a pixel shuffle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ops import (
    AsaWeights,
    AttentionScores,
    ElabWeights,
    GmsaConfig,
    GmsaWeights,
    ShiftPhase,
    elab_forward,
)
from .tensor import (
    BnParams,
    ConvParams,
    Tensor,
    conv2d,
    default_dtype,
    fold_bn_into_conv,
    identity_bn,
    mac_scope,
    pixel_shuffle,
)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ElanConfig:
    """Architecture hyperparameters of one model instance."""

    num_blocks: int
    channels: int
    gmsa: GmsaConfig
    share_depth: int = 1
    scale: int = 4
    expansion: int = 2

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError("need at least one block")
        if self.share_depth < 0:
            raise ValueError("share_depth must be non-negative")
        if self.num_blocks % (self.share_depth + 1):
            raise ValueError(
                f"num_blocks {self.num_blocks} must be divisible by share_depth+1 "
                f"= {self.share_depth + 1}"
            )
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.expansion < 1:
            raise ValueError("expansion must be positive")
        if self.channels < 5:
            raise ValueError("shift grouping needs at least 5 channels")
        if self.gmsa.channels != self.channels:
            raise ValueError(
                f"group channels {self.gmsa.group_channels} do not sum to {self.channels}"
            )
        if list(self.gmsa.window_sizes) != sorted(self.gmsa.window_sizes):
            raise ValueError("window sizes must be ascending")

    @property
    def shift_offset(self) -> tuple[int, int]:
        s = max(self.gmsa.window_sizes) // 2
        return (s, s)

    def phase_of(self, block_index: int) -> ShiftPhase:
        """Shift phase alternates between consecutive sharing units."""
        unit = block_index // (self.share_depth + 1)
        if unit % 2 == 1:
            return ShiftPhase(True, self.shift_offset)
        return ShiftPhase(False)

    def computes_scores(self, block_index: int) -> bool:
        return block_index % (self.share_depth + 1) == 0


def _equal_split(channels: int, k: int) -> tuple[int, ...]:
    base = channels // k
    split = [base] * k
    split[-1] += channels - base * k
    return tuple(split)


def elan_light(scale: int = 4) -> ElanConfig:
    """24 blocks, 60 channels, windows 4/8/16, one reused score set per pair."""
    return ElanConfig(
        num_blocks=24,
        channels=60,
        gmsa=GmsaConfig((4, 8, 16), _equal_split(60, 3)),
        share_depth=1,
        scale=scale,
        expansion=2,
    )


def elan_normal(scale: int = 4) -> ElanConfig:
    """36 blocks, 180 channels, windows 4/8/16."""
    return ElanConfig(
        num_blocks=36,
        channels=180,
        gmsa=GmsaConfig((4, 8, 16), _equal_split(180, 3)),
        share_depth=1,
        scale=scale,
        expansion=2,
    )


def toy_config(scale: int = 4, channels: int = 16, num_blocks: int = 2) -> ElanConfig:
    """Desk-scale configuration for overfit runs and gradient checks."""
    return ElanConfig(
        num_blocks=num_blocks,
        channels=channels,
        gmsa=GmsaConfig((4, 8), _equal_split(channels, 2)),
        share_depth=1,
        scale=scale,
        expansion=2,
    )


PRESETS = {"elan-light": elan_light, "elan": elan_normal}


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

@dataclass
class ElanWeights:
    """The full parameter set, block by block; sharing blocks lack theta."""

    head: ConvParams
    blocks: list[ElabWeights]
    tail: ConvParams


def _init_conv(rng, out_ch: int, in_ch: int, k: int, dtype) -> ConvParams:
    # fan-in scaled uniform; bias drawn from the same range
    bound = 1.0 / math.sqrt(in_ch * k * k)
    w = rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k)).astype(dtype)
    b = rng.uniform(-bound, bound, size=(out_ch,)).astype(dtype)
    return ConvParams(
        weight=Tensor(w, requires_grad=True),
        bias=Tensor(b, requires_grad=True),
        padding=(k - 1) // 2,
    )


def build(cfg: ElanConfig, seed: int = 0, dtype=None) -> ElanWeights:
    """Deterministically initialize all weights for `cfg` from `seed`."""
    dt = np.dtype(dtype or default_dtype()).type
    rng = np.random.default_rng(seed)
    c, e = cfg.channels, cfg.expansion
    head = _init_conv(rng, c, 3, 3, dt)
    blocks = []
    for i in range(cfg.num_blocks):
        expand = _init_conv(rng, c * e, c, 1, dt)
        project = _init_conv(rng, c, c * e, 1, dt)
        groups = []
        for cg in cfg.gmsa.group_channels:
            if cfg.computes_scores(i):
                theta = _init_conv(rng, cg, c, 1, dt)
                bn_theta = identity_bn(cg, dt)
            else:
                theta, bn_theta = None, None
            groups.append(
                AsaWeights(
                    theta=theta,
                    g=_init_conv(rng, cg, c, 1, dt),
                    bn_theta=bn_theta,
                    bn_g=identity_bn(cg, dt),
                )
            )
        merge = _init_conv(rng, c, c, 1, dt)
        blocks.append(ElabWeights(expand=expand, project=project, attn=GmsaWeights(groups, merge)))
    tail = _init_conv(rng, 3 * cfg.scale * cfg.scale, c, 3, dt)
    return ElanWeights(head=head, blocks=blocks, tail=tail)


def iter_arrays(w: ElanWeights):
    """Yield (name, array) over every stored scalar array in canonical order.

    The order defines the checkpoint blob layout and doubles as the
    parameter-count oracle.
    """
    def conv_arrays(prefix, p: ConvParams):
        yield f"{prefix}.weight", p.weight.data
        yield f"{prefix}.bias", p.bias.data

    def bn_arrays(prefix, p: BnParams):
        yield f"{prefix}.gamma", p.gamma.data
        yield f"{prefix}.beta", p.beta.data
        yield f"{prefix}.running_mean", p.running_mean
        yield f"{prefix}.running_var", p.running_var

    yield from conv_arrays("head", w.head)
    for i, blk in enumerate(w.blocks):
        yield from conv_arrays(f"blocks.{i}.expand", blk.expand)
        yield from conv_arrays(f"blocks.{i}.project", blk.project)
        for k, grp in enumerate(blk.attn.groups):
            if grp.theta is not None:
                yield from conv_arrays(f"blocks.{i}.attn.{k}.theta", grp.theta)
            if grp.bn_theta is not None:
                yield from bn_arrays(f"blocks.{i}.attn.{k}.bn_theta", grp.bn_theta)
            yield from conv_arrays(f"blocks.{i}.attn.{k}.g", grp.g)
            if grp.bn_g is not None:
                yield from bn_arrays(f"blocks.{i}.attn.{k}.bn_g", grp.bn_g)
        yield from conv_arrays(f"blocks.{i}.attn.merge", blk.attn.merge)
    yield from conv_arrays("tail", w.tail)


def trainable_tensors(w: ElanWeights) -> list[Tensor]:
    """Every tensor the optimizer updates (conv weights/biases, BN affine)."""
    out: list[Tensor] = []

    def conv(p: ConvParams):
        out.extend([p.weight, p.bias])

    conv(w.head)
    for blk in w.blocks:
        conv(blk.expand)
        conv(blk.project)
        for grp in blk.attn.groups:
            if grp.theta is not None:
                conv(grp.theta)
            if grp.bn_theta is not None:
                out.extend([grp.bn_theta.gamma, grp.bn_theta.beta])
            conv(grp.g)
            if grp.bn_g is not None:
                out.extend([grp.bn_g.gamma, grp.bn_g.beta])
        conv(blk.attn.merge)
    conv(w.tail)
    return out


def fold_batch_norms(w: ElanWeights) -> ElanWeights:
    """Return inference weights with every batch norm absorbed into its conv."""
    blocks = []
    for blk in w.blocks:
        groups = []
        for grp in blk.attn.groups:
            theta = grp.theta
            if theta is not None and grp.bn_theta is not None:
                theta = fold_bn_into_conv(theta, grp.bn_theta)
            g = grp.g
            if grp.bn_g is not None:
                g = fold_bn_into_conv(g, grp.bn_g)
            groups.append(AsaWeights(theta=theta, g=g, bn_theta=None, bn_g=None))
        blocks.append(
            ElabWeights(
                expand=blk.expand,
                project=blk.project,
                attn=GmsaWeights(groups, blk.attn.merge),
            )
        )
    return ElanWeights(head=w.head, blocks=blocks, tail=w.tail)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def forward(w: ElanWeights, cfg: ElanConfig, x: Tensor, training: bool = False) -> Tensor:
    """Super-resolve a (N, 3, H, W) tensor to (N, 3, scale*H, scale*W)."""
    if x.data.ndim != 4 or x.data.shape[1] != 3:
        raise ValueError(f"input must be (N, 3, H, W), got {x.data.shape}")
    if len(w.blocks) != cfg.num_blocks:
        raise ValueError(
            f"weights carry {len(w.blocks)} blocks, config wants {cfg.num_blocks}"
        )
    with mac_scope("head"):
        shallow = conv2d(x, w.head)
    deep = shallow
    scores: AttentionScores | None = None
    for i, blk in enumerate(w.blocks):
        shared = None if cfg.computes_scores(i) else scores
        deep, scores = elab_forward(
            deep, blk, cfg.gmsa, cfg.phase_of(i), shared, training, block_index=i
        )
    merged = shallow + deep
    with mac_scope("tail"):
        out = conv2d(merged, w.tail)
    return pixel_shuffle(out, cfg.scale)


# ---------------------------------------------------------------------------
# Cost model
# ---------------------------------------------------------------------------

@dataclass
class FlopsReport:
    """Analytic MAC and parameter breakdown mirroring the runtime counter."""

    macs: dict[str, int]
    params: dict[str, int]
    input_hw: tuple[int, int]
    scale: int

    @property
    def total_macs(self) -> int:
        return sum(self.macs.values())

    @property
    def total_flops(self) -> int:
        # two floating-point ops per multiply-accumulate
        return 2 * self.total_macs

    @property
    def attention_core_macs(self) -> int:
        return self.macs.get("attn_qk", 0) + self.macs.get("attn_av", 0)

    @property
    def total_params(self) -> int:
        return sum(self.params.values())

    def lines(self) -> list[str]:
        out = [f"input {self.input_hw[1]}x{self.input_hw[0]} -> "
               f"{self.scale * self.input_hw[1]}x{self.scale * self.input_hw[0]}"]
        out.append(f"{'submodule':<12}{'MACs':>16}{'params':>12}")
        keys = ["head", "lfe", "attn_theta", "attn_g", "attn_qk", "attn_av", "merge", "tail"]
        for key in keys:
            out.append(f"{key:<12}{self.macs.get(key, 0):>16,}{self.params.get(key, 0):>12,}")
        out.append(f"{'total':<12}{self.total_macs:>16,}{self.total_params:>12,}")
        out.append(f"attention core MACs: {self.attention_core_macs:,}")
        out.append(f"total params: {self.total_params:,} ({self.total_params / 1e3:.1f}K)")
        out.append(f"total MACs: {self.total_macs:,} ({self.total_macs / 1e9:.2f}G)")
        out.append(f"total FLOPs (2x MACs): {self.total_flops:,} ({self.total_flops / 1e9:.2f}G)")
        return out


def _conv_params(out_ch: int, in_ch: int, k: int) -> int:
    return out_ch * in_ch * k * k + out_ch


def _bn_params(ch: int) -> int:
    # gamma, beta, running mean, running variance
    return 4 * ch


def count_params(cfg: ElanConfig) -> int:
    """Exact count of stored scalars (weights, biases, BN affine and buffers)."""
    return sum(count_params_by_submodule(cfg).values())


def count_params_by_submodule(cfg: ElanConfig) -> dict[str, int]:
    c, e = cfg.channels, cfg.expansion
    out = {
        "head": _conv_params(c, 3, 3),
        "lfe": 0,
        "attn_theta": 0,
        "attn_g": 0,
        "attn_qk": 0,
        "attn_av": 0,
        "merge": 0,
        "tail": _conv_params(3 * cfg.scale**2, c, 3),
    }
    for i in range(cfg.num_blocks):
        out["lfe"] += _conv_params(c * e, c, 1) + _conv_params(c, c * e, 1)
        for cg in cfg.gmsa.group_channels:
            if cfg.computes_scores(i):
                out["attn_theta"] += _conv_params(cg, c, 1) + _bn_params(cg)
            out["attn_g"] += _conv_params(cg, c, 1) + _bn_params(cg)
        out["merge"] += _conv_params(c, c, 1)
    return out


def _padded_extent(h: int, w: int, m: int) -> tuple[int, int]:
    return (h + (-h) % m, w + (-w) % m)


def count_flops(cfg: ElanConfig, h: int, w: int, batch: int = 1) -> FlopsReport:
    """Analytic MACs for one forward pass on an (h, w) low-resolution input.

    Mirrors the instrumented runtime counter exactly: convolutions at
    out*in*k^2*H*W, attention matmuls at their padded window extents, batch
    norm at one MAC per element, sharing blocks without theta/score cost.
    """
    c, e = cfg.channels, cfg.expansion
    hw = h * w
    macs = {
        "head": batch * 3 * c * 9 * hw,
        "lfe": 0,
        "attn_theta": 0,
        "attn_g": 0,
        "attn_qk": 0,
        "attn_av": 0,
        "merge": 0,
        "tail": batch * c * 3 * cfg.scale**2 * 9 * hw,
    }
    for i in range(cfg.num_blocks):
        macs["lfe"] += batch * (c * c * e * hw + c * e * c * hw)
        computes = cfg.computes_scores(i)
        for cg, m in zip(cfg.gmsa.group_channels, cfg.gmsa.window_sizes):
            hp, wp = _padded_extent(h, w, m)
            phw = hp * wp
            if computes:
                # projection conv plus its batch norm
                macs["attn_theta"] += batch * (c * cg * phw + cg * phw)
                macs["attn_qk"] += batch * phw * m * m * cg
            macs["attn_g"] += batch * (c * cg * phw + cg * phw)
            macs["attn_av"] += batch * phw * m * m * cg
        macs["merge"] += batch * c * c * hw
    return FlopsReport(
        macs=macs,
        params=count_params_by_submodule(cfg),
        input_hw=(h, w),
        scale=cfg.scale,
    )

"""
A small ViT detection backbone with windowed and global attention blocks.

Full frames run densely over all N tokens and refresh the reference tensors. Masked frames embed
only the kept regions; global blocks attend over the kept tokens, windowed blocks scatter them
into the block's reference tensor, attend over all N tokens and gather the kept rows back.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
from torch import Tensor, nn

from vidmask.constant import (
    TOY_EMBED_DIM,
    TOY_FFN_HIDDEN,
    TOY_FRAME_SIZE,
    TOY_GLOBAL_EVERY,
    TOY_NUM_BLOCKS,
    TOY_NUM_HEADS,
    TOY_WINDOW_SIDE,
    VIT_B_EMBED_DIM,
    VIT_B_FFN_HIDDEN,
    VIT_B_FRAME_SIZE,
    VIT_B_GLOBAL_EVERY,
    VIT_B_NUM_BLOCKS,
    VIT_B_NUM_HEADS,
    VIT_B_WINDOW_SIDE,
    REGION_SIZE,
)
from vidmask.custom_exception import ConfigError, LocationError, ShapeError, SpecMismatchError, StateError
from vidmask.mask_builder import GridSpec, RegionMask

logger = logging.getLogger(__name__)

DTYPE = torch.float64


def every_nth_block(num_blocks: int, every: int) -> frozenset[int]:
    """1-based indices of blocks 'every', 2*'every', ... (ViT-B with every=3: {3, 6, 9, 12})."""
    return frozenset(range(every, num_blocks + 1, every))


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int
    num_heads: int
    num_blocks: int
    global_block_indices: frozenset[int]
    window_side: int
    ffn_hidden: int
    grid: GridSpec
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "global_block_indices", frozenset(int(i) for i in self.global_block_indices))
        if self.embed_dim < 1 or self.num_heads < 1 or self.num_blocks < 1 or self.ffn_hidden < 1:
            raise ConfigError("embed_dim, num_heads, num_blocks and ffn_hidden must all be >= 1")
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}")
        if not self.global_block_indices <= set(range(1, self.num_blocks + 1)):
            raise ConfigError(f"global blocks {sorted(self.global_block_indices)} outside 1..{self.num_blocks}")
        if self.windowed_block_indices:
            if self.window_side < 1:
                raise ConfigError(f"window side must be >= 1, got {self.window_side}")
            if self.grid.rows % self.window_side or self.grid.cols % self.window_side:
                raise ConfigError(
                    f"token grid {self.grid.rows}x{self.grid.cols} is not divisible by window side {self.window_side}"
                )

    @classmethod
    def vit_b(cls, windowed: bool = True, seed: int = 0, frame_size: tuple[int, int] = VIT_B_FRAME_SIZE) -> ModelConfig:
        return cls(
            embed_dim=VIT_B_EMBED_DIM,
            num_heads=VIT_B_NUM_HEADS,
            num_blocks=VIT_B_NUM_BLOCKS,
            global_block_indices=(
                every_nth_block(VIT_B_NUM_BLOCKS, VIT_B_GLOBAL_EVERY) if windowed
                else frozenset(range(1, VIT_B_NUM_BLOCKS + 1))
            ),
            window_side=VIT_B_WINDOW_SIDE,
            ffn_hidden=VIT_B_FFN_HIDDEN,
            grid=GridSpec(frame_size, REGION_SIZE),
            seed=seed,
        )

    @classmethod
    def toy(cls, windowed: bool = True, seed: int = 0, frame_size: tuple[int, int] = TOY_FRAME_SIZE) -> ModelConfig:
        return cls(
            embed_dim=TOY_EMBED_DIM,
            num_heads=TOY_NUM_HEADS,
            num_blocks=TOY_NUM_BLOCKS,
            global_block_indices=(
                every_nth_block(TOY_NUM_BLOCKS, TOY_GLOBAL_EVERY) if windowed
                else frozenset(range(1, TOY_NUM_BLOCKS + 1))
            ),
            window_side=TOY_WINDOW_SIDE,
            ffn_hidden=TOY_FFN_HIDDEN,
            grid=GridSpec(frame_size, REGION_SIZE),
            seed=seed,
        )

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def num_tokens(self) -> int:
        return self.grid.num_tokens

    @property
    def patch_dim(self) -> int:
        return self.grid.region_size ** 2 * 3

    @property
    def window_tokens(self) -> int:
        return self.window_side ** 2

    @property
    def windowed_block_indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(1, self.num_blocks + 1) if i not in self.global_block_indices)

    @property
    def num_windowed_blocks(self) -> int:
        return len(self.windowed_block_indices)

    @property
    def backbone(self) -> str:
        return "windowed" if self.windowed_block_indices else "global"

    def is_global(self, block_index: int) -> bool:
        return block_index in self.global_block_indices


@dataclass
class TraceEntry:
    op: str
    rows: int
    macs: int


@dataclass
class OpTrace:
    """What one forward pass executed: MACs per linear/attention op and scatter/gather counts."""

    entries: list[TraceEntry] = field(default_factory=list)
    gathers: int = 0
    scatters: int = 0
    tokens_processed: int = 0
    full_frame: bool = True

    def linear(self, op: str, rows: int, fan_in: int, fan_out: int) -> None:
        self.entries.append(TraceEntry(op, rows, rows * fan_in * fan_out))

    def attention(self, op: str, queries: int, keys_per_query: int, dim: int) -> None:
        # Q.K^T and A.V each cost queries * keys * dim MACs summed over heads.
        self.entries.append(TraceEntry(op, queries, 2 * queries * keys_per_query * dim))

    def gather(self) -> None:
        self.gathers += 1

    def scatter(self) -> None:
        self.scatters += 1

    @property
    def macs(self) -> int:
        return sum(entry.macs for entry in self.entries)

    @property
    def scatter_gather_ops(self) -> int:
        return self.gathers + self.scatters


@dataclass(frozen=True)
class AttentionInputs:
    """Per-head query, key and value matrices, shaped (..., n, d)."""

    q: Tensor
    k: Tensor
    v: Tensor

    def __post_init__(self):
        if self.q.ndim < 2 or self.q.shape != self.k.shape or self.k.shape != self.v.shape:
            raise ShapeError(
                f"attention inputs must share one (..., n, d) shape, got {tuple(self.q.shape)}, "
                f"{tuple(self.k.shape)}, {tuple(self.v.shape)}"
            )
        if self.q.shape[-2] < 1:
            raise ShapeError("attention needs at least one token")


def attention(inputs: AttentionInputs) -> Tensor:
    """Softmax(Q K^T / sqrt(d)) V with a row-max subtraction before exponentiation."""
    d = inputs.q.shape[-1]
    logits = inputs.q @ inputs.k.transpose(-2, -1) / math.sqrt(d)
    logits = logits - logits.amax(dim=-1, keepdim=True)
    weights = logits.exp()
    weights = weights / weights.sum(dim=-1, keepdim=True)
    return weights @ inputs.v


def window_partition(x: Tensor, grid_hw: tuple[int, int], window_side: int) -> Tensor:
    """(heads, rows*cols, d) -> (heads, num_windows, window_side**2, d)."""
    heads, _, d = x.shape
    rows, cols = grid_hw
    x = x.reshape(heads, rows // window_side, window_side, cols // window_side, window_side, d)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(heads, -1, window_side * window_side, d)


def window_unpartition(windows: Tensor, grid_hw: tuple[int, int], window_side: int) -> Tensor:
    heads, _, _, d = windows.shape
    rows, cols = grid_hw
    x = windows.reshape(heads, rows // window_side, cols // window_side, window_side, window_side, d)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(heads, rows * cols, d)


class Block(nn.Module):
    """Pre-norm transformer block; `window_side` 0 means global attention."""

    def __init__(self, dim: int, num_heads: int, ffn_hidden: int, window_side: int = 0, grid_hw=None):
        super().__init__()
        self.num_heads = num_heads
        self.window_side = window_side
        self.grid_hw = grid_hw
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, ffn_hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(ffn_hidden, dim)

    @property
    def windowed(self) -> bool:
        return self.window_side > 0

    def attend(self, x: Tensor, trace: Optional[OpTrace] = None) -> Tensor:
        """Attention sublayer with its residual. Windowed blocks expect all N tokens in grid order."""
        n, dim = x.shape
        heads = self.num_heads
        qkv = self.qkv(self.norm1(x))
        q, k, v = qkv.reshape(n, 3, heads, dim // heads).permute(1, 2, 0, 3).unbind(0)
        if self.windowed:
            if n != self.grid_hw[0] * self.grid_hw[1]:
                raise ShapeError(f"windowed block needs all {self.grid_hw[0] * self.grid_hw[1]} tokens, got {n}")
            q, k, v = (window_partition(t, self.grid_hw, self.window_side) for t in (q, k, v))
            out = window_unpartition(attention(AttentionInputs(q, k, v)), self.grid_hw, self.window_side)
            keys_per_query = self.window_side ** 2
        else:
            out = attention(AttentionInputs(q, k, v))
            keys_per_query = n
        out = self.proj(out.permute(1, 0, 2).reshape(n, dim))
        if trace is not None:
            trace.linear("qkv", n, dim, 3 * dim)
            trace.attention("attention", n, keys_per_query, dim)
            trace.linear("proj", n, dim, dim)
        return x + out

    def feed_forward(self, x: Tensor, trace: Optional[OpTrace] = None) -> Tensor:
        """FFN sublayer with its residual; acts on every token independently."""
        out = self.fc2(self.act(self.fc1(self.norm2(x))))
        if trace is not None:
            trace.linear("fc1", x.shape[0], x.shape[1], self.fc1.out_features)
            trace.linear("fc2", x.shape[0], self.fc1.out_features, x.shape[1])
        return x + out

    def forward(self, x: Tensor, trace: Optional[OpTrace] = None) -> Tensor:
        return self.feed_forward(self.attend(x, trace), trace)


class MaskedViT(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        grid_hw = (config.grid.rows, config.grid.cols)
        self.patch_embed = nn.Linear(config.patch_dim, config.embed_dim)
        self.pos_embed = nn.Parameter(torch.zeros(config.num_tokens, config.embed_dim))
        self.blocks = nn.ModuleList(
            Block(
                config.embed_dim,
                config.num_heads,
                config.ffn_hidden,
                window_side=0 if config.is_global(i) else config.window_side,
                grid_hw=grid_hw,
            )
            for i in range(1, config.num_blocks + 1)
        )
        self.to(DTYPE)
        self.requires_grad_(False)
        initialize_weights(self, config.seed)


def initialize_weights(model: nn.Module, seed: int) -> None:
    """
    Deterministic initialisation from one seeded torch.Generator (CPU Mersenne Twister).

    Parameters are visited in `named_parameters()` order. The patch embedding ~ N(0, 1/fan_in), so
    token features start as a scaled projection of the pixels; every other weight, bias and the
    positional embeddings ~ N(0, 0.02^2); layer norms start at identity. Draws are made in float32
    so that the float64 weights survive a float32 round trip through the weight file exactly.
    """
    generator = torch.Generator().manual_seed(int(seed))
    for name, param in model.named_parameters():
        if ".norm" in name:
            param.fill_(1.0 if name.endswith("weight") else 0.0)
            continue
        draw = torch.randn(param.shape, generator=generator, dtype=torch.float32)
        if name == "patch_embed.weight":
            draw = draw * torch.tensor(param.shape[1], dtype=torch.float32).rsqrt()
        else:
            draw = draw * torch.tensor(0.02, dtype=torch.float32)
        param.copy_(draw.to(DTYPE))


def build_model(config: ModelConfig) -> MaskedViT:
    model = MaskedViT(config)
    model.eval()
    logger.debug(
        f"Built {config.backbone} backbone: L={config.embed_dim} H={config.num_heads} B={config.num_blocks} "
        f"N={config.num_tokens} windowed blocks={list(config.windowed_block_indices)}"
    )
    return model


@dataclass(frozen=True)
class TokenSet:
    """Token embeddings paired with their row-major grid locations (sorted, unique)."""

    locations: Tensor
    embeddings: Tensor

    def __post_init__(self):
        locations = torch.as_tensor(self.locations, dtype=torch.int64)
        if locations.ndim != 1:
            raise ShapeError(f"locations must be 1-D, got shape {tuple(locations.shape)}")
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != locations.shape[0]:
            raise ShapeError(
                f"{locations.shape[0]} locations do not match embeddings of shape {tuple(self.embeddings.shape)}"
            )
        if locations.numel() > 1 and not bool(torch.all(locations[1:] > locations[:-1])):
            raise ShapeError("token locations must be strictly increasing")
        object.__setattr__(self, "locations", locations)

    def __len__(self) -> int:
        return int(self.locations.shape[0])


@dataclass
class ReferenceState:
    """Feature-reuse memory of one video sequence: one input tensor per windowed block plus the output."""

    block_inputs: dict[int, Tensor] = field(default_factory=dict)
    reference_output: Optional[Tensor] = None
    last_full_frame: Optional[int] = None

    @classmethod
    def for_model(cls, config: ModelConfig) -> ReferenceState:
        shape = (config.num_tokens, config.embed_dim)
        return cls(
            block_inputs={i: torch.zeros(shape, dtype=DTYPE) for i in config.windowed_block_indices},
            reference_output=torch.zeros(shape, dtype=DTYPE),
        )

    @property
    def initialized(self) -> bool:
        return self.last_full_frame is not None

    @property
    def num_buffers(self) -> int:
        return len(self.block_inputs) + (self.reference_output is not None)


def _check_locations(locations: Tensor, num_tokens: int) -> Tensor:
    locations = torch.as_tensor(locations, dtype=torch.int64)
    if locations.numel():
        bad = locations[(locations < 0) | (locations >= num_tokens)]
        if bad.numel():
            raise LocationError(int(bad[0]), num_tokens)
    return locations


def gather(tensor: Tensor, locations, trace: Optional[OpTrace] = None) -> TokenSet:
    locations = _check_locations(locations, tensor.shape[0])
    if trace is not None:
        trace.gather()
    return TokenSet(locations, tensor.index_select(0, locations))


def scatter(tokens: TokenSet, base: Tensor, trace: Optional[OpTrace] = None) -> Tensor:
    """Write token rows into a copy of `base`; every other row is copied unchanged."""
    _check_locations(tokens.locations, base.shape[0])
    if tokens.embeddings.shape[1:] != base.shape[1:]:
        raise ShapeError(f"token width {tuple(tokens.embeddings.shape)} does not match base {tuple(base.shape)}")
    out = base.clone()
    out[tokens.locations] = tokens.embeddings
    if trace is not None:
        trace.scatter()
    return out


def frame_to_patches(frame: np.ndarray, grid: GridSpec) -> Tensor:
    """HxWx3 uint8 frame -> (N, region_size**2 * 3) rows of centred pixel values, row-major regions."""
    height, width = grid.frame_size
    if frame.shape != (height, width, 3):
        raise ShapeError(f"frame shape {frame.shape} does not match expected {(height, width, 3)}")
    r = grid.region_size
    pixels = torch.from_numpy(np.ascontiguousarray(frame, dtype=np.float64) / 255.0 - 0.5)
    patches = pixels.reshape(grid.rows, r, grid.cols, r, 3).permute(0, 2, 1, 3, 4)
    return patches.reshape(grid.num_tokens, r * r * 3)


@torch.inference_mode()
def patch_embed(
    frame: np.ndarray,
    model: MaskedViT,
    mask: Optional[RegionMask] = None,
    trace: Optional[OpTrace] = None,
) -> TokenSet:
    """Embed the kept regions (all regions without a mask) and add their positional embeddings."""
    config = model.config
    if mask is None:
        locations = torch.arange(config.num_tokens, dtype=torch.int64)
    else:
        if mask.spec != config.grid:
            raise SpecMismatchError(f"mask over {mask.spec} does not match model grid {config.grid}")
        locations = torch.from_numpy(mask.locations()).to(torch.int64)
        if trace is not None:
            trace.gather()
    patches = frame_to_patches(frame, config.grid).index_select(0, locations)
    embeddings = model.patch_embed(patches) + model.pos_embed.index_select(0, locations)
    if trace is not None:
        trace.linear("patch_embed", len(locations), config.patch_dim, config.embed_dim)
    return TokenSet(locations, embeddings)


@torch.inference_mode()
def msa_block_global(tokens: TokenSet, block: Block, trace: Optional[OpTrace] = None) -> TokenSet:
    """Run a global-attention block over exactly the given tokens."""
    return TokenSet(tokens.locations, block(tokens.embeddings, trace))


@torch.inference_mode()
def wmsa_block_masked(
    tokens: TokenSet,
    reference: Tensor,
    block: Block,
    trace: Optional[OpTrace] = None,
) -> tuple[TokenSet, Tensor]:
    """
    Windowed block over a sparse token set.

    The tokens are scattered into the block's reference tensor, attention runs over all N tokens
    of the scattered tensor, and the rows at the token locations are gathered back before the
    per-token FFN. Returns the output tokens and the scattered tensor, which is the block's new
    reference.
    """
    num_tokens = block.grid_hw[0] * block.grid_hw[1]
    if reference.shape[0] != num_tokens:
        raise ShapeError(f"reference tensor has {reference.shape[0]} rows, expected {num_tokens}")
    scattered = scatter(tokens, reference, trace)
    hidden = gather(block.attend(scattered, trace), tokens.locations, trace)
    return TokenSet(tokens.locations, block.feed_forward(hidden.embeddings, trace)), scattered


@torch.inference_mode()
def forward_dense(
    frame: np.ndarray,
    model: MaskedViT,
    state: ReferenceState,
    frame_index: int = 0,
    trace: Optional[OpTrace] = None,
) -> Tensor:
    """Process all N tokens and overwrite every reference tensor and the reference output."""
    if trace is not None:
        trace.full_frame = True
        trace.tokens_processed = model.config.num_tokens
    x = patch_embed(frame, model, None, trace).embeddings
    for index, block in enumerate(model.blocks, start=1):
        if block.windowed:
            state.block_inputs[index] = x
        x = block(x, trace)
    state.reference_output = x
    state.last_full_frame = frame_index
    return x.clone()


@torch.inference_mode()
def forward_masked(
    frame: np.ndarray,
    mask: RegionMask,
    model: MaskedViT,
    state: ReferenceState,
    trace: Optional[OpTrace] = None,
) -> Tensor:
    """
    Process only the kept regions and update the reference output at their locations.

    Rows at unkept locations are returned bitwise equal to the previous reference output. An
    all-false mask processes nothing and touches no buffer.
    """
    if not state.initialized:
        raise StateError("masked frame before any full frame")
    if trace is not None:
        trace.full_frame = False
        trace.tokens_processed = mask.keep_count
    if mask.keep_count == 0:
        return state.reference_output.clone()

    tokens = patch_embed(frame, model, mask, trace)
    for index, block in enumerate(model.blocks, start=1):
        if block.windowed:
            tokens, state.block_inputs[index] = wmsa_block_masked(tokens, state.block_inputs[index], block, trace)
        else:
            tokens = msa_block_global(tokens, block, trace)
    state.reference_output = scatter(tokens, state.reference_output, trace)
    return state.reference_output.clone()

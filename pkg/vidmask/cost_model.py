"""
Analytic MAC and buffer-memory accounting for the backbone.

Counting unit is the multiply-accumulate of linear layers and attention products. Layer norms,
softmax, GELU and residual adds are not counted. Buffers are sized in 32-bit floats.

Masked windowed blocks are priced with QKV, attention and output projection over all N tokens of
the scattered tensor, and the FFN over the kept tokens only. Global blocks and the patch embedding
are priced over the kept tokens.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import pandas as pd

from vidmask.constant import (
    BYTES_PER_FLOAT,
    CSV_COLUMNS,
    GATES_PER_BLOCK,
    GIGA,
    MEMORY_COLUMNS,
    REFERENCE_GMACS,
)
from vidmask.custom_exception import ConfigError
from vidmask.toy_vit import ModelConfig, OpTrace

logger = logging.getLogger(__name__)

MEGA = 1e6


@dataclass(frozen=True)
class CostReport:
    backbone_gmacs: float
    buffer_bytes: int
    scatter_gather_ops: int
    tokens_processed: int
    macs: int = 0
    full_frame: bool = True

    def __post_init__(self):
        if min(self.backbone_gmacs, self.buffer_bytes, self.scatter_gather_ops, self.tokens_processed) < 0:
            raise ConfigError("cost report fields must be non-negative")

    @property
    def buffer_mb(self) -> float:
        return self.buffer_bytes / MEGA

    def to_dict(self) -> dict:
        return {
            "backbone_gmacs": self.backbone_gmacs,
            "macs": self.macs,
            "buffer_bytes": self.buffer_bytes,
            "scatter_gather_ops": self.scatter_gather_ops,
            "tokens_processed": self.tokens_processed,
            "full_frame": self.full_frame,
        }


def patch_embed_macs(config: ModelConfig, tokens: int) -> int:
    return tokens * config.patch_dim * config.embed_dim


def global_block_macs(config: ModelConfig, tokens: int) -> int:
    L, F, n = config.embed_dim, config.ffn_hidden, tokens
    return 4 * n * L * L + 2 * n * n * L + 2 * n * L * F


def windowed_block_macs(config: ModelConfig, tokens: int) -> int:
    """Attention sublayer over all N scattered tokens, FFN over `tokens`."""
    L, F, N = config.embed_dim, config.ffn_hidden, config.num_tokens
    return 4 * N * L * L + 2 * N * config.window_tokens * L + 2 * tokens * L * F


def dense_macs(config: ModelConfig) -> int:
    return masked_macs(config, config.num_tokens)


def masked_macs(config: ModelConfig, tokens_kept: int) -> int:
    if not 0 < tokens_kept <= config.num_tokens:
        raise ConfigError(f"tokens_kept must be in 1..{config.num_tokens}, got {tokens_kept}")
    total = patch_embed_macs(config, tokens_kept)
    total += len(config.global_block_indices) * global_block_macs(config, tokens_kept)
    total += config.num_windowed_blocks * windowed_block_macs(config, tokens_kept)
    return total


def flops_dense(config: ModelConfig) -> float:
    """Backbone GMACs of one fully processed frame."""
    return dense_macs(config) / GIGA


def flops_masked(config: ModelConfig, tokens_kept: int) -> float:
    """Backbone GMACs of one masked frame that keeps `tokens_kept` tokens."""
    return masked_macs(config, tokens_kept) / GIGA


def frame_macs(config: ModelConfig, tokens_processed: int, full_frame: bool) -> int:
    """What a traced forward pass should report. Masked frames that keep nothing cost nothing."""
    if full_frame:
        return dense_macs(config)
    return masked_macs(config, tokens_processed) if tokens_processed else 0


def masked_scatter_gather_ops(config: ModelConfig) -> int:
    return 2 + 2 * config.num_windowed_blocks


def memory_reference_reuse(config: ModelConfig) -> int:
    """One N x L reference per windowed block plus the reference output buffer."""
    return (config.num_windowed_blocks + 1) * config.num_tokens * config.embed_dim * BYTES_PER_FLOAT


def memory_eventful_block(config: ModelConfig) -> int:
    N, L = config.num_tokens, config.embed_dim
    gates = GATES_PER_BLOCK * N * L * BYTES_PER_FLOAT
    attention_product = N * N * config.num_heads * BYTES_PER_FLOAT
    value_product = N * L * BYTES_PER_FLOAT
    return gates + attention_product + value_product


def memory_eventful(config: ModelConfig) -> int:
    """Token gates, buffers and cached attention/value products of every block."""
    return config.num_blocks * memory_eventful_block(config)


def memory_token_gating(config: ModelConfig) -> int:
    """Token gates and buffers alone, without the cached products."""
    return config.num_blocks * GATES_PER_BLOCK * config.num_tokens * config.embed_dim * BYTES_PER_FLOAT


def measure_run(trace: OpTrace, config: ModelConfig) -> CostReport:
    report = CostReport(
        backbone_gmacs=trace.macs / GIGA,
        buffer_bytes=memory_reference_reuse(config),
        scatter_gather_ops=trace.scatter_gather_ops,
        tokens_processed=trace.tokens_processed,
        macs=trace.macs,
        full_frame=trace.full_frame,
    )
    expected = frame_macs(config, trace.tokens_processed, trace.full_frame)
    if report.macs != expected:
        logger.warning(f"Traced {report.macs} MACs but the analytic model predicts {expected}")
    return report


def cost_table(config: ModelConfig, tokens: Iterable[int], dataset: str = "analytic") -> pd.DataFrame:
    """One dense row followed by one masked row per requested token count, in the results CSV schema."""
    N = config.num_tokens
    rows = [_cost_row(config, dataset, N, "dense", flops_dense(config), 0, 0)]
    for n in tokens:
        rows.append(
            _cost_row(
                config,
                dataset,
                int(n),
                "masked",
                flops_masked(config, int(n)),
                memory_reference_reuse(config),
                masked_scatter_gather_ops(config),
            )
        )
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


def _cost_row(config, dataset, tokens, masking, gmacs, buffer_bytes, ops) -> dict:
    return {
        "dataset": dataset,
        "backbone": config.backbone,
        "tokens_processed": tokens,
        "patch_keep_rate": tokens / config.num_tokens,
        "period": 0,
        "static_keep_rate": 0.0,
        "precision": 0.0,
        "recall": 0.0,
        "gmacs": gmacs,
        "buffer_mb": buffer_bytes / MEGA,
        "scatter_gather_ops": ops,
        "masking": masking,
    }


def tokens_for_keep_rates(config: ModelConfig, keep_rates: Iterable[float]) -> list[int]:
    tokens = []
    for rate in keep_rates:
        n = int(rate * config.num_tokens)
        if not 0.0 < rate <= 1.0 or n < 1:
            raise ConfigError(f"keep rate {rate} selects no tokens out of {config.num_tokens}")
        tokens.append(n)
    return tokens


def memory_table(config: ModelConfig) -> pd.DataFrame:
    N, L = config.num_tokens, config.embed_dim
    buffer = N * L * BYTES_PER_FLOAT
    windowed = config.num_windowed_blocks
    rows = [
        ("reference_reuse_blocks", windowed, windowed * buffer),
        ("reference_reuse_output", 1, buffer),
        ("reference_reuse_total", windowed + 1, memory_reference_reuse(config)),
        ("eventful_block", GATES_PER_BLOCK + 2, memory_eventful_block(config)),
        ("eventful_total", config.num_blocks * (GATES_PER_BLOCK + 2), memory_eventful(config)),
        ("token_gating_total", config.num_blocks * GATES_PER_BLOCK, memory_token_gating(config)),
    ]
    return pd.DataFrame(
        [{"mechanism": m, "buffers": b, "bytes": n, "mb": n / MEGA} for m, b, n in rows],
        columns=MEMORY_COLUMNS,
    )


def reference_residuals(seed: int = 0, windowed: Optional[bool] = None) -> pd.DataFrame:
    """Relative difference between computed and published GMACs for the ViT-B geometry."""
    rows = []
    for (backbone, tokens), published in REFERENCE_GMACS.items():
        if windowed is not None and (backbone == "windowed") != windowed:
            continue
        config = ModelConfig.vit_b(windowed=backbone == "windowed", seed=seed)
        computed = flops_masked(config, tokens)
        rows.append(
            {
                "backbone": backbone,
                "tokens_processed": tokens,
                "computed_gmacs": computed,
                "published_gmacs": published,
                "residual": (computed - published) / published,
            }
        )
    return pd.DataFrame(rows)


def log_reference_residuals(residuals: pd.DataFrame) -> None:
    for row in residuals.itertuples(index=False):
        logger.info(
            f"{row.backbone:>8} n={row.tokens_processed:4d}: {row.computed_gmacs:7.2f} GMACs "
            f"vs published {row.published_gmacs:7.2f} ({row.residual:+.2%})"
        )


def write_table(df: pd.DataFrame, path: str) -> str:
    df.to_csv(path, index=False)
    logger.debug(f"Wrote {len(df)} rows to {path}")
    return path

from vidmask.mask_builder import (
    BBox,
    FrameKind,
    GridSpec,
    Heatmap,
    MaskSchedule,
    RegionMask,
    accumulate_heatmap,
    combined_mask,
    dynamic_mask,
    region_scores,
    schedule_frame,
    static_mask,
)
from vidmask.toy_vit import (
    MaskedViT,
    ModelConfig,
    ReferenceState,
    TokenSet,
    build_model,
    forward_dense,
    forward_masked,
)
from vidmask.detector import Detection, DetectionHead, EvalResult, evaluate, head, iou
from vidmask.cost_model import (
    CostReport,
    flops_dense,
    flops_masked,
    measure_run,
    memory_eventful,
    memory_reference_reuse,
)
from vidmask.video_harness import SyntheticScene, ablate_masks, generate, run_oracle, run_sequence

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from math import ceil
from typing import Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from mdc import MDC

from env_config import read_env_config
from logconf import log_setup
from vidmask.config import RunConfig
from vidmask.constant import CSV_COLUMNS, DATASET_NAME, SEQUENCE_DIR_PREFIX, TRAIN_ANNOTATIONS_FILE
from vidmask.cost_model import (
    cost_table,
    log_reference_residuals,
    memory_table,
    reference_residuals,
    tokens_for_keep_rates,
    write_table,
)
from vidmask.custom_exception import SpecMismatchError, VidMaskError
from vidmask.formats import (
    MaskWriter,
    load_weights,
    read_annotations,
    save_features,
    save_weights,
    write_annotations,
    write_detections,
    write_heatmap_pgm,
)
from vidmask.mask_builder import GridSpec, accumulate_heatmap, region_scores, static_mask
from vidmask.toy_vit import ModelConfig, build_model
from vidmask.utils import ensure_dir, file_checksum, keep_rate_tag
from vidmask.video_harness import (
    SequenceJob,
    ablate_masks,
    aggregate_row,
    calibrate_head,
    generate,
    load_sequence,
    pooled_evaluation,
    run_many,
    save_sequence,
    sequence_dirs,
    sequence_scenes,
    training_annotations,
)

logger = logging.getLogger("cli")

PROG = "vidmask"


class ArgumentParser(argparse.ArgumentParser):

    def error(self, message):
        self.exit(2, f"{PROG}: error: {message}\n")


def scene_kwargs(config: RunConfig) -> dict:
    return {
        "num_objects": tuple(config.num_objects),
        "object_size": tuple(config.object_size),
        "max_speed": config.max_speed,
        "camera_velocity": tuple(config.camera_velocity),
        "num_classes": config.num_classes,
    }


def generated_sequences(config: RunConfig):
    scenes = sequence_scenes(config.seed_scene, config.num_sequences, tuple(config.frame_size), config.num_frames, **scene_kwargs(config))
    return [generate(scene, config.seed_scene) for scene in scenes]


def generated_training(config: RunConfig):
    return training_annotations(
        tuple(config.frame_size), config.train_sequences, config.num_frames, config.seed_scene, **scene_kwargs(config)
    )


def load_inputs(config: RunConfig):
    """Sequences and static-mask training annotations, from --input or regenerated from the seeds."""
    if config.input:
        sequences = [load_sequence(d) for d in sequence_dirs(config.input)]
        train = read_annotations(os.path.join(config.input, TRAIN_ANNOTATIONS_FILE))
        logger.info(f"Loaded {len(sequences)} sequences from {config.input}")
        return sequences, train
    return generated_sequences(config), generated_training(config)


def print_header(config: RunConfig):
    print(f"# seed_scene={config.seed_scene} seed_model={config.seed_model} backbone={config.backbone}")


def cmd_gen(config: RunConfig, args):
    out = ensure_dir(config.out)
    print_header(config)
    paths = []
    for i, sequence in enumerate(generated_sequences(config)):
        paths.extend(save_sequence(sequence, os.path.join(out, f"{SEQUENCE_DIR_PREFIX}{i:03d}")))
    paths.append(write_annotations(generated_training(config), os.path.join(out, TRAIN_ANNOTATIONS_FILE)))
    for path in paths:
        print(f"{file_checksum(path)}  {path}")
    logger.info(f"Generated {config.num_sequences} sequences of {config.num_frames} frames in {out}")


def cmd_mask(config: RunConfig, args):
    out = ensure_dir(config.out)
    print_header(config)
    if args.annotations:
        annotations = read_annotations(args.annotations)
    elif config.input:
        annotations = read_annotations(os.path.join(config.input, TRAIN_ANNOTATIONS_FILE))
    else:
        annotations = generated_training(config)
    spec = GridSpec.padded(annotations.frame_size, config.region_size)
    heatmap = accumulate_heatmap(annotations.pairs(), spec)
    scores = region_scores(heatmap, spec)
    writer = MaskWriter()
    paths = [write_heatmap_pgm(heatmap, os.path.join(out, "heatmap.pgm"))]
    for k_s in config.static_keep:
        mask = static_mask(scores, k_s, spec)
        stem = "static_mask" if len(config.static_keep) == 1 else f"static_mask_ks{k_s:g}"
        paths.append(writer.write(mask, os.path.join(out, f"{stem}.json"), "json"))
        paths.append(writer.write(mask, os.path.join(out, f"{stem}.pgm"), "pgm"))
        logger.info(f"Static mask k_s={k_s:g}: {mask.keep_count}/{spec.num_tokens} regions")
    for path in paths:
        print(path)


def load_model(config: RunConfig, weights: Optional[str]):
    expected = config.to_model_config()
    if not weights:
        return build_model(expected)
    model = load_weights(weights)
    # A stored model keeps its own seed.
    if replace(model.config, seed=expected.seed) != expected:
        raise SpecMismatchError(f"{weights}: stored model {model.config} does not match the configured geometry")
    logger.info(f"Loaded backbone weights from {weights} (seed_model={model.config.seed})")
    return model


def prepare_run(config: RunConfig, weights: Optional[str] = None):
    model = load_model(config, weights)
    sequences, train = load_inputs(config)
    detection_head = calibrate_head(
        model,
        [s.frames[0] for s in sequences],
        [s.boxes[0] for s in sequences],
        [s.classes[0] for s in sequences],
        threshold=config.threshold,
        connectivity=config.connectivity,
    )
    return model, sequences, train, detection_head


def final_feature_maps(result) -> dict:
    maps = {"masked": result.final_features}
    if result.final_oracle_features is not None:
        maps["oracle"] = result.final_oracle_features
    return maps


def cmd_run(config: RunConfig, args):
    out = ensure_dir(config.out)
    print_header(config)
    model, sequences, train, detection_head = prepare_run(config, args.weights)
    save_weights(model, os.path.join(out, "weights.mvdt"))
    rows = []
    schedules = config.schedules()
    for n, sched in enumerate(schedules):
        tag = keep_rate_tag(sched.period, sched.static_keep_rate)
        with MDC(progress=f"{ceil(n / len(schedules) * 100)}%"):
            jobs = [
                SequenceJob(s.frames, train, sched, detection_head, s.boxes, oracle=config.oracle)
                for s in sequences
            ]
            results = run_many(jobs, model, config.threads, show_progress=args.progress)
            row = aggregate_row(results, DATASET_NAME)
            rows.append(row)
            report = {
                "header": config.header(),
                "summary": row,
                "sequences": [r.to_dict() for r in results],
            }
            with open(os.path.join(out, f"run_{tag}.json"), "w") as f:
                json.dump(report, f, indent=2)
                f.write("\n")
            for i, result in enumerate(results):
                write_detections(result.detections, os.path.join(out, f"detections_{tag}_{SEQUENCE_DIR_PREFIX}{i:03d}.json"))
                if args.save_features:
                    save_features(final_feature_maps(result), os.path.join(out, f"features_{tag}_{SEQUENCE_DIR_PREFIX}{i:03d}.mvdt"), model.config)
            logger.info(
                f"P={sched.period} k_s={sched.static_keep_rate:g}: keep rate {row['patch_keep_rate']:.3f}, "
                f"{row['gmacs']:.4f} GMACs/frame, precision {row['precision']:.3f}, recall {row['recall']:.3f}"
            )
    path = write_table(pd.DataFrame(rows), os.path.join(out, "results.csv"))
    print(path)


def cmd_ablate(config: RunConfig, args):
    out = ensure_dir(config.out)
    print_header(config)
    model, sequences, train, detection_head = prepare_run(config, args.weights)
    rows = []
    schedules = config.schedules()
    for n, sched in enumerate(schedules):
        with MDC(progress=f"{ceil(n / len(schedules) * 100)}%"):
            ablations = [ablate_masks(s.frames, train, model, sched, detection_head, s.boxes, args.progress) for s in sequences]
            for mode in ("combined", "static", "dynamic"):
                results = [a.runs()[mode] for a in ablations]
                overall = pooled_evaluation(results)
                masked = pooled_evaluation(results, masked_only=True)
                rows.append(
                    {
                        "period": sched.period,
                        "static_keep_rate": sched.static_keep_rate,
                        "masking": mode,
                        "mode_static_keep_rate": results[0].static_keep_rate,
                        "patch_keep_rate": float(np.mean([r.patch_keep_rate for r in results])),
                        "precision": overall.precision,
                        "recall": overall.recall,
                        "f1": overall.f1,
                        "masked_f1": masked.f1,
                    }
                )
                logger.info(f"P={sched.period} k_s={sched.static_keep_rate:g} {mode:>8}: F1 {overall.f1:.3f} (masked frames {masked.f1:.3f})")
    with open(os.path.join(out, "ablation.json"), "w") as f:
        json.dump({"header": config.header(), "rows": rows}, f, indent=2)
        f.write("\n")
    print(write_table(pd.DataFrame(rows), os.path.join(out, "ablation.csv")))


def cmd_cost(config: RunConfig, args):
    out = ensure_dir(config.out)
    model_config = config.to_model_config()
    tokens = list(args.tokens or [])
    if args.keep_rates or not tokens:
        tokens += tokens_for_keep_rates(model_config, args.keep_rates or [0.25, 0.5, 0.75, 1.0])
    costs = cost_table(model_config, tokens)
    memory = memory_table(model_config)
    reference = ModelConfig.vit_b(windowed=model_config.backbone == "windowed", seed=model_config.seed)
    if model_config == reference:
        log_reference_residuals(reference_residuals(model_config.seed, windowed=model_config.backbone == "windowed"))
    print(write_table(costs[CSV_COLUMNS], os.path.join(out, "cost.csv")))
    print(write_table(memory, os.path.join(out, "memory.csv")))


COMMANDS = {
    "gen": cmd_gen,
    "mask": cmd_mask,
    "run": cmd_run,
    "ablate": cmd_ablate,
    "cost": cmd_cost,
}


def shared_flags() -> ArgumentParser:
    parser = ArgumentParser(add_help=False)
    parser.add_argument("--period", type=int, nargs="+", help="Full-frame period P; several values run every combination")
    parser.add_argument("--static-keep", type=float, nargs="+", help="Static keep rate k_s in [0, 1]; several values allowed")
    parser.add_argument("--backbone", choices=["windowed", "global"], help="Windowed (ViTDet-style) or all-global backbone")
    parser.add_argument("--region-size", type=int, help="Pixels per region side. Defaults to 16")
    parser.add_argument("--dilation", type=int, help="Dynamic-mask dilation in regions. Defaults to 0")
    parser.add_argument("--seed-scene", type=int, help="Seed of the synthetic scenes")
    parser.add_argument("--seed-model", type=int, help="Seed of the backbone weights")
    parser.add_argument("--oracle", nargs="?", const="on", choices=["on", "off"], help="Compare every frame against a dense run")
    parser.add_argument("--toy", action="store_true", default=None, help="Desk-scale geometry: 128x128 frames, L=64, H=4, B=4, window 4")
    parser.add_argument("--out", type=str, help="Output directory")
    parser.add_argument("--config", type=str, help="JSON file mirroring the run configuration")
    parser.add_argument("--input", type=str, help="Directory written by `gen` to read sequences from")
    parser.add_argument("--frames", type=int, dest="num_frames", help="Frames per generated sequence")
    parser.add_argument("--sequences", type=int, dest="num_sequences", help="Number of evaluation sequences")
    parser.add_argument("--train-sequences", type=int, help="Number of sequences behind the static-mask heatmap")
    parser.add_argument("--camera-velocity", type=int, nargs=2, metavar=("DX", "DY"), help="Camera pan in pixels per frame")
    parser.add_argument("--num-classes", type=int, help="Object classes in generated scenes")
    parser.add_argument("--threshold", type=float, help="Objectness threshold of the detection head")
    parser.add_argument("--threads", type=int, help="Sequences evaluated concurrently")
    parser.add_argument("--progress", action="store_true", help="Show progress bars")
    parser.add_argument("--log-level", type=str, default=None, help="Console log level, e.g. DEBUG")
    return parser


CONFIG_FLAGS = [
    "period", "static_keep", "backbone", "region_size", "dilation", "seed_scene", "seed_model", "oracle",
    "toy", "out", "input", "num_frames", "num_sequences", "train_sequences", "camera_velocity",
    "num_classes", "threshold", "threads",
]


def flags_from_args(args) -> dict:
    flags = {name: getattr(args, name, None) for name in CONFIG_FLAGS}
    if flags["oracle"] is not None:
        flags["oracle"] = flags["oracle"] == "on"
    return flags


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog=PROG, description="Region-masked video detection experiments")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="{gen,mask,run,ablate,cost}")
    parent = shared_flags()
    subparsers.add_parser("gen", parents=[parent], help="Generate synthetic sequences and annotations")
    mask_parser = subparsers.add_parser("mask", parents=[parent], help="Build static masks from annotations")
    mask_parser.add_argument("--annotations", type=str, help="Annotation JSON. Defaults to the training annotations")
    run_parser = subparsers.add_parser("run", parents=[parent], help="Run the masked pipeline and write results")
    ablate_parser = subparsers.add_parser("ablate", parents=[parent], help="Compare static, dynamic and combined masks")
    for p in (run_parser, ablate_parser):
        p.add_argument("--weights", type=str, help="MVDT weight file written by `run`. Defaults to weights drawn from --seed-model")
    run_parser.add_argument("--save-features", action="store_true", help="Write the last frame's feature maps (and the oracle's) per sequence")
    cost_parser = subparsers.add_parser("cost", parents=[parent], help="Write the analytic cost and memory tables")
    cost_parser.add_argument("--keep-rates", type=float, nargs="+", help="Patch keep rates to price")
    cost_parser.add_argument("--tokens", type=int, nargs="+", help="Token counts to price")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    # load the environment variables
    load_dotenv()
    log_setup(args.log_level)

    try:
        config = RunConfig.resolve(flags_from_args(args), args.config, read_env_config("VIDMASK"))
        COMMANDS[args.command](config, args)
    except VidMaskError as e:
        print(f"{PROG}: error: {e.message}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    with MDC(progress="0%"):
        sys.exit(main())

"""Command implementations for the condensegan pipeline."""

from __future__ import annotations

import logging
from argparse import Namespace
from pathlib import Path
from typing import Optional

from .config import RunConfig, config_digest, parse_manual_keep, validate_config
from .constants import (
    CHECKPOINT_DIR,
    IMAGE_CHANNELS,
    PRUNED_CHECKPOINT,
    REPORT_DIR,
    STAGE1_CHECKPOINT,
    STUDENT_CHECKPOINT,
)
from .costmodel import FactorSource, build_cost_vector, cost_rows, forward_latency
from .dataio import (
    Checkpoint,
    PairedSample,
    gen_synthetic_pairs,
    load_checkpoint,
    read_report,
    save_checkpoint,
    split_pairs,
    write_report,
)
from .distill import stage2_finetune
from .errors import ConfigurationError
from .hingeprune import apply_pruning, build_pruning_plan, curve_rows, detect_hinges, hinge_rows
from .netgraph import NetworkGraph, build_patchgan, build_unet, count_macs, unet_name
from .penalize import Regime, Strategy
from .trainer import evaluate_l1, near_zero_fraction, stage1_train

logger = logging.getLogger(__name__)


# ------------------------------------------------------------------ helpers
def checkpoint_path(config: RunConfig, name: str) -> Path:
    return config.workdir / CHECKPOINT_DIR / name


def report_path(config: RunConfig, name: str) -> Path:
    return config.workdir / REPORT_DIR / f"{name}.csv"


def load_dataset(config: RunConfig) -> tuple[list[PairedSample], list[PairedSample]]:
    samples = gen_synthetic_pairs(
        config.seed,
        config.data.n_train + config.data.n_holdout,
        config.model.input_size,
        config.model.depth,
    )
    return split_pairs(samples, config.data.n_holdout)


def _load_graph(path: Path, name: str) -> tuple[Checkpoint, NetworkGraph]:
    checkpoint = load_checkpoint(path)
    graph = checkpoint.graphs.get(name)
    if graph is None:
        raise ConfigurationError(f"checkpoint {path} holds no '{name}' graph", {"path": str(path)})
    return checkpoint, graph


def _ratio(before: float, after: float) -> Optional[float]:
    return after / before if before else None


def _summary_row(metric: str, before: float, after: float) -> dict[str, object]:
    return {"metric": metric, "before": before, "after": after, "ratio": _ratio(before, after)}


def apply_overrides(config: RunConfig, args: Namespace) -> RunConfig:
    """Fold command-line flags over the file/default configuration."""
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "workdir", None) is not None:
        config.paths.workdir = args.workdir
    command = getattr(args, "command", None)
    if command == "train":
        if args.epochs is not None:
            config.train.epochs = args.epochs
        if args.penal_strategy is not None:
            config.penal.strategy = Strategy(args.penal_strategy)
        if args.regime is not None:
            config.penal.regime = Regime(args.regime)
        if args.factor_source is not None:
            config.penal.layer_factor_source = FactorSource(args.factor_source)
        if args.no_penal:
            config.penal.enabled = False
    elif command == "profile":
        if args.source is not None:
            config.profile.source = FactorSource(args.source)
        if args.repeats is not None:
            config.profile.repeats = args.repeats
        if args.warmup is not None:
            config.profile.warmup = args.warmup
    elif command == "prune":
        if args.min_drop_ratio is not None:
            config.hinge.min_drop_ratio = args.min_drop_ratio
        if args.manual_keep:
            config.hinge.manual_keep.update(parse_manual_keep(args.manual_keep))
    elif command == "distill":
        if args.epochs is not None:
            config.distill.epochs = args.epochs
    return config.sync()


# ----------------------------------------------------------------- commands
def cmd_train(config: RunConfig) -> int:
    """Stage I: train the penalized generator and write the condensed checkpoint."""
    validate_config(config)
    model = config.model
    train, _ = load_dataset(config)
    generator = build_unet(
        model.base_channels,
        model.depth,
        model.cap,
        model.input_size,
        use_instance_norm=model.instance_norm,
        seed=config.seed,
    )
    discriminator = build_patchgan(2 * IMAGE_CHANNELS, model.discriminator_channels, seed=config.seed + 1)
    cost = build_cost_vector(
        generator,
        model.input_size,
        config.penal.layer_factor_source,
        config.profile.repeats,
        config.profile.warmup,
    )
    metadata = {
        "config_digest": config_digest(config),
        "model": unet_name(model.base_channels),
        "model_depth": str(model.depth),
        "model_cap": str(model.cap),
        "input_size": str(model.input_size),
    }
    result = stage1_train(
        generator,
        discriminator,
        train,
        config.train,
        cost_vector=cost,
        checkpoint_path=checkpoint_path(config, STAGE1_CHECKPOINT),
        metadata=metadata,
    )
    write_report(report_path(config, "train_log"), "training_log", result.log.rows())
    logger.info("stage I done: alpha=%.6g, checkpoint %s", result.alpha, checkpoint_path(config, STAGE1_CHECKPOINT))
    return 0


def cmd_profile(config: RunConfig, checkpoint: Optional[str] = None) -> int:
    """Write the per-layer cost vector of a generator checkpoint."""
    validate_config(config)
    path = Path(checkpoint) if checkpoint else checkpoint_path(config, STAGE1_CHECKPOINT)
    _, generator = _load_graph(path, "generator")
    source = config.profile.source
    cost = build_cost_vector(
        generator, config.model.input_size, source, config.profile.repeats, config.profile.warmup
    )
    write_report(
        report_path(config, f"cost_{source.value}"),
        "cost_vector",
        cost_rows(cost, generator, config.model.input_size),
    )
    return 0


def cmd_prune(config: RunConfig, checkpoint: Optional[str] = None, measure_speedup: bool = False) -> int:
    """Detect hinges, cut channels and write the pruned checkpoint plus its reports."""
    validate_config(config)
    path = Path(checkpoint) if checkpoint else checkpoint_path(config, STAGE1_CHECKPOINT)
    source, generator = _load_graph(path, "generator")
    curves, hinges = detect_hinges(
        generator, config.hinge.min_drop_ratio, config.hinge.floor, config.hinge.manual_keep
    )
    pruned = apply_pruning(generator, build_pruning_plan(generator, hinges))

    size = config.model.input_size
    before, after = count_macs(generator, size), count_macs(pruned, size)
    threshold = config.train.near_zero_threshold
    summary = [
        _summary_row("total_macs", before.total_macs, after.total_macs),
        _summary_row("total_params", before.total_params, after.total_params),
        _summary_row("activation_bytes", before.activation_bytes, after.activation_bytes),
        _summary_row(
            "near_zero_fraction",
            near_zero_fraction(generator, threshold),
            near_zero_fraction(pruned, threshold),
        ),
    ]
    write_report(report_path(config, "curves"), "magnitude_curve", curve_rows(curves, hinges))
    write_report(report_path(config, "hinges"), "hinge", hinge_rows(hinges))
    write_report(report_path(config, "prune_summary"), "summary", summary)
    logger.info(
        "MACs %d -> %d, params %d -> %d",
        before.total_macs,
        after.total_macs,
        before.total_params,
        after.total_params,
    )

    graphs = {"generator": pruned}
    if "discriminator" in source.graphs:
        graphs["discriminator"] = source.graphs["discriminator"]
    metadata = dict(source.metadata)
    metadata["stage"] = "pruned"
    metadata["pruned_layers"] = ",".join(str(h.layer_id) for h in hinges if h.pruned)
    save_checkpoint(
        checkpoint_path(config, PRUNED_CHECKPOINT), Checkpoint(graphs=graphs, metadata=metadata)
    )

    if measure_speedup:
        repeats, warmup = config.profile.repeats, config.profile.warmup
        original_ms = forward_latency(generator, size, repeats, warmup)
        pruned_ms = forward_latency(pruned, size, repeats, warmup)
        logger.info(
            "forward latency %.3f ms -> %.3f ms (speed-up %.2fx)",
            original_ms,
            pruned_ms,
            original_ms / pruned_ms if pruned_ms else float("inf"),
        )
    return 0


def cmd_distill(config: RunConfig, student: Optional[str] = None, teacher: Optional[str] = None) -> int:
    """Stage II: fine-tune the pruned student against the condensed teacher."""
    validate_config(config)
    student_path = Path(student) if student else checkpoint_path(config, PRUNED_CHECKPOINT)
    teacher_path = Path(teacher) if teacher else checkpoint_path(config, STAGE1_CHECKPOINT)
    student_ckpt, student_graph = _load_graph(student_path, "generator")
    teacher_ckpt, teacher_graph = _load_graph(teacher_path, "generator")
    discriminator = student_ckpt.graphs.get("discriminator") or teacher_ckpt.graphs.get("discriminator")
    if discriminator is None:
        raise ConfigurationError("no discriminator found in the student or teacher checkpoint")
    if not student_graph.same_topology(teacher_graph):
        raise ConfigurationError(
            "student and teacher differ beyond channel counts",
            {"student": str(student_path), "teacher": str(teacher_path)},
        )

    train, holdout = load_dataset(config)
    metadata = dict(student_ckpt.metadata)
    metadata["config_digest"] = config_digest(config)
    result = stage2_finetune(
        student_graph,
        teacher_graph,
        discriminator,
        train,
        config.distill,
        checkpoint_path=checkpoint_path(config, STUDENT_CHECKPOINT),
        metadata=metadata,
    )
    write_report(report_path(config, "distill_log"), "distill_log", result.log.rows())

    evaluation = holdout or train
    tuned = result.checkpoint.graphs["generator"]
    size = config.model.input_size
    teacher_macs, student_macs = count_macs(teacher_graph, size), count_macs(tuned, size)
    summary = [
        _summary_row("heldout_l1", evaluate_l1(teacher_graph, evaluation), evaluate_l1(tuned, evaluation)),
        _summary_row("total_macs", teacher_macs.total_macs, student_macs.total_macs),
        _summary_row("total_params", teacher_macs.total_params, student_macs.total_params),
    ]
    write_report(report_path(config, "distill_summary"), "summary", summary)
    return 0


def cmd_report(config: RunConfig) -> int:
    """Fold every CSV under the reports directory into one long-form bundle."""
    directory = config.workdir / REPORT_DIR
    bundle = report_path(config, "bundle")
    rows = []
    sources = sorted(directory.glob("*.csv")) if directory.is_dir() else []
    for path in sources:
        if path.name == bundle.name:
            continue
        header, records = read_report(path)
        for index, record in enumerate(records, start=1):
            for column in header:
                rows.append({"source": path.stem, "row": index, "column": column, "value": record.get(column, "")})
    write_report(bundle, "bundle", rows)
    logger.info("bundled %d report(s) into %s", len(sources), bundle)
    return 0


def cmd_pipeline(config: RunConfig) -> int:
    """train -> profile -> prune -> distill -> report."""
    validate_config(config)
    for step in (cmd_train, cmd_profile, cmd_prune, cmd_distill, cmd_report):
        status = step(config)
        if status != 0:
            return status
    return 0


def run_app(args: Namespace, config: RunConfig) -> int:
    """Dispatch a parsed command line."""
    command = args.command
    if command == "train":
        return cmd_train(config)
    if command == "profile":
        return cmd_profile(config, args.checkpoint)
    if command == "prune":
        return cmd_prune(config, args.checkpoint, args.measure_speedup)
    if command == "distill":
        return cmd_distill(config, args.student, args.teacher)
    if command == "report":
        return cmd_report(config)
    return cmd_pipeline(config)

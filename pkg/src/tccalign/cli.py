"""Command-line surface: dataset generation, training, evaluation, alignment.

Every subcommand accepts --config FILE (JSON object keyed by long option
names); precedence is CLI flag > config file > built-in default.  Exit code
is 0 on success, 1 on any typed error, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import align as align_mod
from . import checks
from .data import (FeatureSequence, SyntheticConfig, generate_synthetic,
                   load_dataset, save_dataset, split_dataset)
from .diff import ContractError, ShapeError
from .embedder import EmbedderConfig, load_checkpoint, embed_array
from .fileio import FileFormatError
from .losses import TccConfig
from .baselines import BaselineConfig
from .metrics import ConstantTargetError, DegenerateModelError
from .train import MissingAnnotationError, TrainConfig, evaluate, train

_ERRORS = (ContractError, ShapeError, FileFormatError, MissingAnnotationError,
           DegenerateModelError, ConstantTargetError, FileNotFoundError)


def _apply_config_file(args: argparse.Namespace, parser_defaults: dict) -> None:
    """Fill unset options from --config JSON, then from defaults."""
    file_values = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            file_values = json.load(f)
        if not isinstance(file_values, dict):
            raise FileFormatError(f"{args.config}: config must be a JSON object")
    for key, default in parser_defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, file_values.get(key, default))


def _lookup(sequences, seq_id: str) -> FeatureSequence:
    for seq in sequences:
        if seq.id == seq_id:
            return seq
    raise ContractError(f"sequence id {seq_id!r} not found in dataset")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth_gen(args) -> int:
    config = SyntheticConfig(num_sequences=args.num, min_len=args.min_len,
                             max_len=args.max_len, num_phases=args.phases,
                             noise_std=args.noise, obs_dim=args.obs_dim,
                             warp_strength=args.warp, seed=args.seed)
    sequences = generate_synthetic(config)
    out = Path(args.out)
    manifest = out / "manifest.json" if not out.suffix else out
    save_dataset(sequences, manifest)
    print(f"wrote {len(sequences)} sequences to {manifest}")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    input_dim = dataset[0].feature_dim
    hidden = tuple(int(h) for h in str(args.hidden).split(",") if h)
    embedder = EmbedderConfig(input_dim=input_dim,
                              context_frames=args.context_frames,
                              context_stride=args.context_stride,
                              hidden_sizes=hidden,
                              embedding_dim=args.embedding_dim)
    config = TrainConfig(
        embedder=embedder, loss=args.loss, batch_size=args.batch_size,
        frames_per_seq=args.frames, learning_rate=args.lr,
        weight_decay=args.weight_decay, steps=args.steps, seed=args.seed,
        combine_weight=args.combine_weight, augment_std=args.augment_std,
        checkpoint_every=args.checkpoint_every,
        tcc=TccConfig(variance_weight=args.variance_weight),
        baseline=BaselineConfig())
    result = train(config, dataset, out_prefix=args.out, resume_from=args.resume,
                   split_fraction=args.split_fraction, split_seed=args.split_seed)
    print(f"trained {config.steps} steps; final loss {result.losses[-1]!r}; "
          f"checkpoint at {args.out}")
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    fractions = ([args.label_fraction] if args.label_fraction is not None
                 else [0.1, 0.5, 1.0])
    report = evaluate(args.ckpt, dataset, split=args.split,
                      label_fractions=fractions,
                      split_fraction=args.split_fraction,
                      split_seed=args.split_seed)
    for line in report.to_lines():
        print(line)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    return 0


def _load_pair(args, a_attr: str, b_attr: str):
    dataset = load_dataset(args.data)
    params = load_checkpoint(args.ckpt)
    sa = _lookup(dataset, getattr(args, a_attr))
    sb = _lookup(dataset, getattr(args, b_attr))
    return params, dataset, sa, sb


def cmd_align(args) -> int:
    params, _, sa, sb = _load_pair(args, "a", "b")
    ea, eb = embed_array(params, sa), embed_array(params, sb)
    result = (align_mod.nn_align(ea, eb) if args.mode == "nn"
              else align_mod.dtw_align(ea, eb, band=args.band))
    align_mod.write_alignment(args.out, result)
    print(f"{args.mode} alignment {sa.id} -> {sb.id}: {len(result.pairs)} pairs, "
          f"total cost {result.total_cost!r}")
    return 0


def cmd_simmat(args) -> int:
    params, _, sa, sb = _load_pair(args, "a", "b")
    matrix = align_mod.similarity_matrix(embed_array(params, sa),
                                         embed_array(params, sb))
    align_mod.write_similarity_matrix(args.out, matrix)
    print(f"similarity matrix {matrix.shape[0]}x{matrix.shape[1]} -> {args.out}")
    return 0


def cmd_anomaly(args) -> int:
    dataset = load_dataset(args.data)
    params = load_checkpoint(args.ckpt)
    query = _lookup(dataset, args.query)
    ref_ids = [r for r in args.refs.split(",") if r]
    refs = [embed_array(params, _lookup(dataset, rid)) for rid in ref_ids]
    scores = align_mod.anomaly_score(embed_array(params, query), refs)
    with open(args.out, "w") as f:
        for s in scores:
            f.write(f"{s!r}\n")
    print(f"anomaly scores for {query.id}: max {scores.max()!r} -> {args.out}")
    return 0


def cmd_transfer(args) -> int:
    params, _, target, source = _load_pair(args, "target", "source")
    if source.annotation is None:
        raise MissingAnnotationError(f"source sequence {source.id} has no labels")
    alignment = align_mod.dtw_align(embed_array(params, target),
                                    embed_array(params, source))
    labels = align_mod.transfer_labels(alignment, source.annotation.phase_labels)
    with open(args.out, "w") as f:
        for lab in labels:
            f.write(f"{lab}\n")
    print(f"transferred {len(labels)} labels {source.id} -> {target.id}")
    return 0


def cmd_grad_check(args) -> int:
    results = checks.run_suite(tol=args.tol, instances=args.instances,
                               seed=args.seed)
    failed = False
    for name, report in results:
        print(f"{name}: {report}")
        failed |= not report.passed
    return 1 if failed else 0


def cmd_export_embeddings(args) -> int:
    dataset = load_dataset(args.data)
    params = load_checkpoint(args.ckpt)
    embedded = [FeatureSequence(id=s.id, frames=embed_array(params, s),
                                fps=s.fps, annotation=s.annotation)
                for s in dataset]
    save_dataset(embedded, args.out)
    print(f"exported {len(embedded)} embedding sequences to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tccalign",
        description="Temporal cycle-consistency embedding learning and alignment")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=func, _defaults={})
        p.add_argument("--config", help="JSON file with option defaults")
        return p

    def opt(p, flag, default, dest=None, **kwargs):
        # Register with default None so the config file can fill the gap.
        dest = dest or flag.lstrip("-").replace("-", "_")
        p.add_argument(flag, dest=dest, default=None, **kwargs)
        p._defaults_map = getattr(p, "_defaults_map", {})
        p._defaults_map[dest] = default

    p = add("synth-gen", cmd_synth_gen, help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory or manifest path")
    p.add_argument("--num", required=True, type=int, help="number of sequences")
    opt(p, "--seed", 0, type=int)
    opt(p, "--phases", 4, type=int)
    opt(p, "--noise", 0.05, type=float)
    opt(p, "--min-len", 60, type=int)
    opt(p, "--max-len", 120, type=int)
    opt(p, "--obs-dim", 16, type=int)
    opt(p, "--warp", 1.0, type=float)

    p = add("train", cmd_train, help="train an embedder")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path prefix")
    p.add_argument("--steps", required=True, type=int)
    opt(p, "--loss", "tcc_regression",
        choices=["tcc_regression", "tcc_classification", "tcc_mse", "tcn",
                 "sal", "tcc+tcn", "tcc+sal"])
    opt(p, "--seed", 0, type=int)
    opt(p, "--lr", 1e-4, type=float)
    opt(p, "--batch-size", 4, type=int)
    opt(p, "--frames", 20, type=int)
    opt(p, "--weight-decay", 1e-5, type=float)
    opt(p, "--lambda", 0.001, dest="variance_weight", type=float)
    opt(p, "--combine-weight", 0.5, type=float)
    opt(p, "--augment-std", 0.05, type=float)
    opt(p, "--checkpoint-every", 500, type=int)
    opt(p, "--context-frames", 2, type=int)
    opt(p, "--context-stride", 15, type=int)
    opt(p, "--hidden", "512,512")
    opt(p, "--embedding-dim", 128, type=int)
    opt(p, "--split-fraction", 0.8, type=float)
    opt(p, "--split-seed", 0, type=int)
    p.add_argument("--resume", default=None, help="resume from a .state file")

    p = add("eval", cmd_eval, help="evaluate a checkpoint on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    opt(p, "--split", "val", choices=["train", "val"])
    p.add_argument("--label-fraction", type=float, default=None)
    p.add_argument("--out", default=None, help="optional JSON report path")
    opt(p, "--split-fraction", 0.8, type=float)
    opt(p, "--split-seed", 0, type=int)

    p = add("align", cmd_align, help="align two sequences")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    opt(p, "--mode", "nn", choices=["nn", "dtw"])
    p.add_argument("--band", type=int, default=None)

    p = add("simmat", cmd_simmat, help="export a similarity matrix")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)

    p = add("anomaly", cmd_anomaly, help="score a sequence against references")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--refs", required=True, help="comma-separated sequence ids")
    p.add_argument("--out", required=True)

    p = add("transfer", cmd_transfer, help="transfer labels between sequences")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)

    p = add("grad-check", cmd_grad_check, help="finite-difference check all losses")
    opt(p, "--tol", 1e-4, type=float)
    opt(p, "--instances", 10, type=int)
    opt(p, "--seed", 0, type=int)

    p = add("export-embeddings", cmd_export_embeddings,
            help="embed a dataset and write it in the sequence file format")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="output manifest path")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # Resolve option precedence: explicit flag > config file > default.
    sub_parser = None
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        if args.command in action.choices:
            sub_parser = action.choices[args.command]
            break
    defaults = getattr(sub_parser, "_defaults_map", {})
    try:
        _apply_config_file(args, defaults)
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

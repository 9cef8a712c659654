"""Command-line entry point.

Subcommands: pretrain, finetune, evaluate, mask-sample, attn-stats,
reconstruct, make-fixtures. Every run validates its config up front,
honors the FSFM_SEED environment override, and writes a run manifest
recording the resolved config so results can be replayed.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np
import torch

from .attention_stats import collect_attention_stats
from .dataset import load_batch, load_manifest, load_sample
from .errors import TrainingDiverged, ValidationError
from .finetune import FinetuneConfig, finetune
from .masking import STRATEGIES, MaskConfig, sample_mask
from .metrics import evaluate_scores
from .model import BackboneConfig, DualBranchModel
from .parsing import load_parsing_map
from .regions import patchify_regions
from .synth import write_fixture_set
from .trainer import Pretrainer, TrainConfig, load_checkpoint
from .visualize import export_mask_overlay, export_reconstruction

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4

PRETRAIN_SCHEMA = {
    "type": "object",
    "required": ["manifest", "train"],
    "properties": {
        "manifest": {"type": "string"},
        "backbone": {"type": "object"},
        "train": {"type": "object"},
        "checkpoint_every_epochs": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

FINETUNE_SCHEMA = {
    "type": "object",
    "required": ["checkpoint"],
    "properties": {
        "checkpoint": {"type": "string"},
        "head": {"enum": ["linear", "mlp"]},
        "epochs": {"type": "integer", "minimum": 1},
        "base_lr": {"type": "number", "exclusiveMinimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "weight_decay": {"type": "number", "minimum": 0},
        "freeze_backbone": {"type": "boolean"},
        "seed": {"type": "integer"},
    },
    "additionalProperties": False,
}


def resolve_seed(seed: int) -> int:
    """Config seed, unless FSFM_SEED overrides it."""
    env = os.environ.get("FSFM_SEED")
    if env is None:
        return seed
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"FSFM_SEED must be an integer, got {env!r}") from None


def load_json_config(path: str, schema: dict) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {path}: {exc}") from exc
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        raise ValidationError(f"config failed validation: {exc.message}") from exc
    return doc


def write_run_manifest(anchor: Path, command: str, config: dict, artifacts: list[str]):
    """Record the resolved config next to the run's primary artifact."""
    payload = json.dumps(config, sort_keys=True)
    doc = {
        "command": command,
        "run_id": hashlib.sha1(payload.encode()).hexdigest(),
        "config": config,
        "artifacts": artifacts,
    }
    if anchor.suffix:
        path = anchor.with_name(anchor.stem + ".run.json")
    else:
        anchor.mkdir(parents=True, exist_ok=True)
        path = anchor / "run.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _dump_json(doc: dict, out: str | None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# ---- subcommands ---------------------------------------------------------


def cmd_pretrain(args) -> int:
    doc = load_json_config(args.config, PRETRAIN_SCHEMA)
    backbone = BackboneConfig.from_dict(doc.get("backbone", {}))
    train_dict = dict(doc["train"])
    train_dict["seed"] = resolve_seed(train_dict.get("seed", 0))
    train_cfg = TrainConfig.from_dict(train_dict)
    manifest = load_manifest(doc["manifest"])
    samples = load_batch(manifest, list(range(len(manifest))))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = Pretrainer(backbone, train_cfg, samples)
    every = doc.get("checkpoint_every_epochs", 0)
    artifacts = ["log.jsonl", "ckpt_final.pt"]

    log_path = out / "log.jsonl"
    with open(log_path, "w") as log:

        def on_step(record):
            log.write(json.dumps(record.to_json()) + "\n")
            if record.step % trainer.steps_per_epoch == trainer.steps_per_epoch - 1:
                epoch = record.step // trainer.steps_per_epoch
                print(
                    f"epoch {epoch + 1}/{train_cfg.epochs} "
                    f"loss {record.losses['total']:.4f} lr {record.lr:.2e}",
                    file=sys.stderr,
                )
                if every and (epoch + 1) % every == 0:
                    name = f"ckpt_e{epoch + 1:04d}.pt"
                    trainer.save_checkpoint(out / name)
                    artifacts.append(name)

        trainer.train(on_step=on_step)
    trainer.save_checkpoint(out / "ckpt_final.pt")
    resolved = {
        "manifest": doc["manifest"],
        "backbone": backbone.to_dict(),
        "train": train_cfg.to_dict(),
        "checkpoint_every_epochs": every,
    }
    write_run_manifest(out, "pretrain", resolved, artifacts)
    return EXIT_OK


def cmd_finetune(args) -> int:
    doc = load_json_config(args.config, FINETUNE_SCHEMA)
    payload = load_checkpoint(doc["checkpoint"])
    cfg = FinetuneConfig(
        head=doc.get("head", "linear"),
        epochs=doc.get("epochs", 20),
        base_lr=doc.get("base_lr", 1e-3),
        batch_size=doc.get("batch_size", 8),
        weight_decay=doc.get("weight_decay", 0.05),
        freeze_backbone=doc.get("freeze_backbone", False),
        seed=resolve_seed(doc.get("seed", 0)),
    )
    manifest = load_manifest(args.manifest)
    manifest.require_labels()
    samples = load_batch(manifest, list(range(len(manifest))))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    history_path = out / "history.jsonl"
    with open(history_path, "w") as hist:
        model, history = finetune(
            payload, samples, cfg,
            on_epoch=lambda rec: hist.write(json.dumps(rec) + "\n"),
        )
    torch.save(
        {
            "format": "facemim-finetuned",
            "backbone": payload["backbone"],
            "head": cfg.head,
            "model": model.state_dict(),
        },
        out / "finetuned.pt",
    )
    last = history.last()
    print(
        f"final train acc {last['train_acc']:.3f} auc {last['train_auc']:.3f}",
        file=sys.stderr,
    )
    resolved = {"finetune": {**doc, "seed": cfg.seed}, "manifest": args.manifest}
    write_run_manifest(out, "finetune", resolved, ["finetuned.pt", "history.jsonl"])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    path = Path(args.scores)
    if not path.is_file():
        raise ValidationError(f"scores file not found: {path}")
    records = []
    for i, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"bad JSON on scores line {i + 1}: {exc}") from exc
    report = evaluate_scores(records, group_by_video=args.group_by == "video")
    _dump_json(report.to_json(), args.out)
    return EXIT_OK


def _load_model(checkpoint: str) -> tuple[DualBranchModel, dict]:
    payload = load_checkpoint(checkpoint)
    model = DualBranchModel(BackboneConfig.from_dict(payload["backbone"]))
    model.load_state_dict(payload["model"])
    model.eval()
    return model, payload


def cmd_mask_sample(args) -> int:
    pm = load_parsing_map(args.parsing)
    table = patchify_regions(pm, args.patch_size)
    cfg = MaskConfig(
        strategy=args.strategy, ratio=args.ratio, seed=resolve_seed(args.seed)
    )
    pair = sample_mask(table, cfg)
    doc = {
        "strategy": cfg.strategy,
        "ratio": cfg.ratio,
        "seed": cfg.seed,
        "n_patches": table.n_patches,
        "n_masked": pair.n_masked,
        "region": pair.region,
        "mask": pair.mask.astype(int).tolist(),
        "region_mask": pair.region_mask.astype(int).tolist(),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    artifacts = [out.name]
    if args.overlay:
        if not args.image:
            raise ValidationError("--overlay needs --image")
        from .dataset import FaceSample, load_image

        sample = FaceSample(
            image=load_image(Path(args.image)), parsing=pm, sample_id="mask-sample"
        )
        export_mask_overlay(sample, pair, args.patch_size, args.overlay)
        artifacts.append(Path(args.overlay).name)
    write_run_manifest(out, "mask-sample", doc | {"parsing": args.parsing}, artifacts)
    return EXIT_OK


def cmd_attn_stats(args) -> int:
    model, _ = _load_model(args.checkpoint)
    manifest = load_manifest(args.manifest)
    n = min(len(manifest), args.limit) if args.limit else len(manifest)
    samples = load_batch(manifest, list(range(n)))
    images = torch.stack(
        [
            torch.from_numpy(np.ascontiguousarray(s.image.transpose(2, 0, 1)))
            for s in samples
        ]
    )
    stats = collect_attention_stats(model, images)
    _dump_json(stats.to_json(), args.out)
    if args.out:
        write_run_manifest(
            Path(args.out),
            "attn-stats",
            {"checkpoint": args.checkpoint, "manifest": args.manifest, "limit": n},
            [Path(args.out).name],
        )
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    from .dataset import FaceSample, load_image

    model, _ = _load_model(args.checkpoint)
    sample = FaceSample(
        image=load_image(Path(args.image)),
        parsing=load_parsing_map(args.parsing),
        sample_id=Path(args.image).stem,
    )
    cfg = MaskConfig(
        strategy=args.strategy, ratio=args.ratio, seed=resolve_seed(args.seed)
    )
    export_reconstruction(model, sample, cfg, args.out)
    write_run_manifest(
        Path(args.out),
        "reconstruct",
        {
            "checkpoint": args.checkpoint,
            "image": args.image,
            "parsing": args.parsing,
            "strategy": cfg.strategy,
            "ratio": cfg.ratio,
            "seed": cfg.seed,
        },
        [Path(args.out).name],
    )
    return EXIT_OK


def cmd_make_fixtures(args) -> int:
    seed = resolve_seed(args.seed)
    manifest = write_fixture_set(
        args.out,
        n=args.n,
        size=args.size,
        patch_size=args.patch_size,
        seed=seed,
        labeled=args.labeled,
        split=args.split,
    )
    config = {
        "n": args.n,
        "size": args.size,
        "patch_size": args.patch_size,
        "seed": seed,
        "labeled": args.labeled,
        "split": args.split,
    }
    write_run_manifest(Path(args.out), "make-fixtures", config, [manifest.name])
    print(f"wrote {args.n} fixtures under {args.out}", file=sys.stderr)
    return EXIT_OK


# ---- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facemim",
        description="Region-guided masked-face pretraining toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="run self-supervised pretraining")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="finetune a pretrained encoder")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="compute AUC/HTER from a scores file")
    p.add_argument("--scores", required=True)
    p.add_argument("--group-by", choices=["video"], default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("mask-sample", help="sample one mask from a parsing map")
    p.add_argument("--parsing", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, default="crfr_p")
    p.add_argument("--ratio", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--out", required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--overlay", default=None)
    p.set_defaults(func=cmd_mask_sample)

    p = sub.add_parser("attn-stats", help="attention diagnostics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--limit", type=int, default=8)
    p.set_defaults(func=cmd_attn_stats)

    p = sub.add_parser("reconstruct", help="export a reconstruction panel")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--parsing", required=True)
    p.add_argument("--strategy", choices=STRATEGIES, default="crfr_p")
    p.add_argument("--ratio", type=float, default=0.75)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("make-fixtures", help="generate synthetic face fixtures")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--labeled", action="store_true")
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_fixtures)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except TrainingDiverged as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        print(json.dumps(exc.record, indent=2), file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

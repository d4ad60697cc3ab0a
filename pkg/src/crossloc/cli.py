"""Command-line entry points: gen, train, align, eval, ablate.

Configuration comes from an optional JSON file (sections "gen", "model",
"train", "split") with flag overrides winning.  Every artifact embeds the
hash of the configuration that produced it, and reruns with the same seed
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import ccca, experiments, retrieval
from .checkpoint import load_checkpoint, save_checkpoint
from .dataset import DEFAULT_RATIOS, GenConfig, generate, load_jsonl, save_jsonl, split
from .descriptors import group_descriptors
from .model import ModelConfig, config_hash
from .numerics import ConfigError
from .trainer import TrainConfig, train


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config file must hold a JSON object")
    return data


def _section(cfg: dict, name: str, cls, overrides: dict):
    fields = dict(cfg.get(name, {}))
    fields.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**fields)
    except TypeError as exc:
        raise ConfigError(f"bad {name!r} config: {exc}") from exc


def _write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _split_dataset(dataset, cfg: dict):
    section = cfg.get("split", {})
    ratios = tuple(section.get("ratios", DEFAULT_RATIOS))
    return split(dataset, ratios=ratios, seed=int(section.get("seed", 0)))


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def cmd_gen(args) -> int:
    cfg = _load_config_file(args.config)
    gen_cfg = _section(cfg, "gen", GenConfig, {"seed": args.seed})
    dataset = generate(gen_cfg)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, args.name)
    save_jsonl(dataset, out_path, header={"config_hash": config_hash(dataclasses.asdict(gen_cfg))})
    print(f"wrote {out_path} ({len(dataset.entries)} locations)")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config_file(args.config)
    model_cfg = _section(cfg, "model", ModelConfig, {})
    train_cfg = _section(cfg, "train", TrainConfig, {"seed": args.seed})
    dataset = _split_dataset(load_jsonl(args.data), cfg)
    os.makedirs(args.out, exist_ok=True)
    params, history = train(
        dataset.split_entries("train"),
        dataset.split_entries("val"),
        model_cfg,
        train_cfg,
        checkpoint_dir=args.out,
        quiet=args.quiet,
    )
    _write_text(os.path.join(args.out, "history.json"), history.to_json())
    print(f"trained {train_cfg.epochs} epochs; best val r@1@5m "
          f"{max(history.val_recalls):.3f}; wall {history.wall_clock_s:.1f}s", file=sys.stderr)
    print(f"wrote {os.path.join(args.out, 'checkpoint_best.bin')}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config_file(args.config)
    dataset = _split_dataset(load_jsonl(args.data), cfg)
    params, extra, _ = load_checkpoint(args.checkpoint)
    entries = dataset.split_entries(args.split)
    table = experiments.evaluate_model(
        params,
        entries,
        align_mode=args.align_mode,
        shuffle_seed=args.shuffle_seed,
        views=args.views,
        truncate=args.truncate,
        ks=_int_list(args.k),
        eps=_float_list(args.eps),
        ccca_variant=args.ccca_variant,
        search_mode=args.search_mode,
        per_candidate=args.per_candidate,
    )
    os.makedirs(args.out, exist_ok=True)
    run_cfg = {
        "align_mode": args.align_mode, "shuffle_seed": args.shuffle_seed,
        "views": args.views, "truncate": args.truncate, "split": args.split,
        "k": args.k, "eps": args.eps, "ccca_variant": args.ccca_variant,
        "per_candidate": args.per_candidate, "checkpoint_hash": extra.get("run_hash"),
    }
    comments = [f"config_hash={config_hash(run_cfg)}", f"eval_config={json.dumps(run_cfg, sort_keys=True)}"]
    _write_text(os.path.join(args.out, "recall.tsv"), table.to_tsv(comments))
    _write_text(os.path.join(args.out, "recall.txt"), table.to_text())
    print(table.to_text(), end="")
    return 0


def cmd_align(args) -> int:
    cfg = _load_config_file(args.config)
    dataset = load_jsonl(args.data)
    params, _, _ = load_checkpoint(args.checkpoint)
    by_id = {e.id: e for e in dataset.entries}
    if args.location not in by_id:
        raise ConfigError(f"location {args.location!r} not found in {args.data}")
    records = group_descriptors([by_id[args.location]], params)
    text_group, image_group = records[0].text_group, records[0].image_group
    slots = np.arange(text_group.shape[0])
    if args.shuffle_seed is not None:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(args.shuffle_seed)))
        slots = rng.permutation(len(slots))
    result = ccca.align(
        ccca.ViewGroup(text_group[slots]),
        ccca.ViewGroup(image_group),
        mode=args.search_mode,
        variant=args.ccca_variant,
    )
    print(f"presented order (true slots): {list(int(s) for s in slots)}")
    print(f"permutation: {list(result.permutation)}")
    print(f"score: {result.score:.6f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config_file(args.config)
    model_cfg = _section(cfg, "model", ModelConfig, {})
    train_cfg = _section(cfg, "train", TrainConfig, {})
    dataset = _split_dataset(load_jsonl(args.data), cfg)
    seeds = _int_list(args.seeds)
    results = experiments.run_axis(args.axis, dataset, seeds=seeds,
                                   model_config=model_cfg, train_config=train_cfg)
    summary = experiments.axis_summary(results)
    run_cfg = {"axis": args.axis, "seeds": list(seeds), "model": model_cfg.to_dict(),
               "train": train_cfg.to_dict()}
    comments = [f"config_hash={config_hash(run_cfg)}"]
    comments += [f"mean r@1@5m {arm}: {val:.4f}" for arm, val in summary.items()]
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, f"ablate_{args.axis}.tsv")
    _write_text(out_path, experiments.results_tsv(results, comments))
    for arm, val in summary.items():
        print(f"{args.axis:20s} {arm:12s} mean r@1@5m = {val:.3f}")
    print(f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossloc",
                                     description="cross-modal place recognition pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", default=".", help="output directory")

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--name", default="dataset.jsonl", help="output file name")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train descriptor heads")
    common(p)
    p.add_argument("--data", required=True, help="dataset JSONL")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch logging")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate localization recall")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--align-mode", default="oracle", choices=list(retrieval.ALIGN_MODES))
    p.add_argument("--shuffle-seed", type=int, default=None,
                   help="shuffle query view order with this seed")
    p.add_argument("--views", type=int, default=None, help="keep only the first N views")
    p.add_argument("--truncate", type=float, default=None, help="keep this fraction of each text")
    p.add_argument("--k", default="1,5,10")
    p.add_argument("--eps", default="5,10,15")
    p.add_argument("--ccca-variant", default="full", choices=list(ccca.VARIANTS))
    p.add_argument("--search-mode", default="full", choices=["full", "cyclic"])
    p.add_argument("--per-candidate", action="store_true",
                   help="align against every candidate (exhaustive)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("align", help="align one location's shuffled text group to its images")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--location", required=True)
    p.add_argument("--shuffle-seed", type=int, default=None)
    p.add_argument("--ccca-variant", default="full", choices=list(ccca.VARIANTS))
    p.add_argument("--search-mode", default="full", choices=["full", "cyclic"])
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("ablate", help="sweep one ablation axis")
    common(p)
    p.add_argument("axis", choices=list(experiments.ABLATION_AXES))
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point for the CLI
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface for the pipeline.

Subcommands map 1:1 onto module operations: mine, perturb, negatives,
shuffle-images, neighbors, eval-aro, eval-order, eval-retrieval, train,
report. Option precedence is flags > TOML config file > built-in defaults;
the effective configuration is echoed next to each command's primary output.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from . import __version__
from . import contrastive, embedding_store, evaluator, image_shuffle, perturbation
from . import scene_miner, text_analysis
from .errors import ArokitError, ConfigError, DataFormatError
from .rng import derive_seed


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; the contract says 1.
    def error(self, message: str) -> None:
        raise ConfigError(message)


class RunConfig:
    """Layered option lookup: flags beat the config file beat defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.table: dict = {}
        path = getattr(args, "config", None)
        if path:
            try:
                with open(path, "rb") as fh:
                    self.table = tomllib.load(fh)
            except FileNotFoundError:
                raise ConfigError(f"config file not found: {path}") from None
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None

    def get(self, flag: str, section: str, key: str, default: Any = None) -> Any:
        value = getattr(self.args, flag, None)
        if value is not None:
            return value
        sect = self.table.get(section, {})
        if isinstance(sect, dict) and key in sect:
            return sect[key]
        if section == "" and key in self.table:
            return self.table[key]
        return default

    def seed(self) -> int:
        value = self.get("seed", "", "seed", 0)
        seed = int(value)
        if not 0 <= seed < 2**64:
            raise ConfigError(f"seed must be a u64, got {seed}")
        return seed


def _digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def provenance(seed: int, inputs: dict[str, str | Path]) -> dict:
    return {
        "tool": f"arokit {__version__}",
        "seed": seed,
        "inputs": {name: {"path": str(p), "sha256": _digest(p)} for name, p in inputs.items()},
    }


def echo_config(out_path: str | Path, subcommand: str, params: dict) -> None:
    target = Path(out_path).parent / f"arokit-{subcommand}-config.json"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(params, indent=2, sort_keys=True, default=str) + "\n")


def _read_captions(args: argparse.Namespace, lexicon_path: str) -> list[tuple[str, Any]]:
    """(id, TaggedCaption) pairs from --captions text or --pretagged file."""
    if getattr(args, "pretagged", None):
        with open(args.pretagged, "r", encoding="utf-8") as fh:
            tagged = text_analysis.parse_pretagged(fh)
        return [(f"caption-{i:05d}", t) for i, t in enumerate(tagged)]
    lexicon = text_analysis.load_lexicon(lexicon_path)
    out = []
    with open(args.captions, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if line:
                out.append((f"caption-{i:05d}", text_analysis.tag_text(line, lexicon)))
    return out


# --- subcommand handlers ------------------------------------------------------


def cmd_mine(args: argparse.Namespace, cfg: RunConfig) -> int:
    seed = cfg.seed()
    task = cfg.get("task", "mine", "task", "both")
    blocklist = cfg.get("symmetric", "mine", "symmetric", None)
    symmetric = (
        scene_miner.DEFAULT_SYMMETRIC_RELATIONS
        if blocklist is None
        else {s.strip().lower() for s in (blocklist.split(",") if isinstance(blocklist, str) else blocklist)}
    )
    cases = []
    for scene in scene_miner.read_scene_graphs(args.scenes):
        if task in ("relation", "both"):
            cases.extend(scene_miner.enumerate_relation_cases(scene, symmetric))
        if task in ("attribution", "both"):
            cases.extend(scene_miner.enumerate_attribution_cases(scene))
    cases = scene_miner.sort_cases(cases)
    scene_miner.write_cases(
        args.out, cases, provenance=provenance(seed, {"scenes": args.scenes})
    )
    echo_config(args.out, "mine", {
        "scenes": args.scenes, "out": args.out, "task": task,
        "symmetric": sorted(symmetric), "seed": seed,
    })
    print(f"wrote {len(cases)} cases to {args.out}")
    return 0


def cmd_perturb(args: argparse.Namespace, cfg: RunConfig) -> int:
    seed = cfg.seed()
    lexicon_path = cfg.get("lexicon", "perturb", "lexicon", str(text_analysis.default_lexicon_path()))
    strategy_name = cfg.get("strategy", "perturb", "strategy", None)
    if strategy_name is None:
        raise ConfigError("--strategy is required (a shuffle name or 'order_tasks')")
    items = _read_captions(args, lexicon_path)

    records = []
    if strategy_name == "order_tasks":
        for item_id, tagged in items:
            task = perturbation.build_order_task(
                tagged, derive_seed(seed, item_id), image_id=item_id
            )
            records.append(perturbation.order_task_to_dict(task))
    else:
        try:
            strategy = perturbation.PerturbationStrategy(strategy_name)
        except ValueError:
            raise ConfigError(f"unknown strategy {strategy_name!r}") from None
        for item_id, tagged in items:
            item_seed = derive_seed(seed, item_id)
            records.append({
                "id": item_id,
                "original": tagged.text,
                "strategy": strategy.value,
                "seed": item_seed,
                "perturbed": perturbation.perturb(tagged, strategy, item_seed),
            })

    inputs = {"captions": args.pretagged or args.captions}
    perturbation.write_jsonl(args.out, records, provenance=provenance(seed, inputs))
    echo_config(args.out, "perturb", {
        "strategy": strategy_name, "seed": seed, "out": args.out,
        "input": str(inputs["captions"]), "lexicon": lexicon_path,
    })
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_negatives(args: argparse.Namespace, cfg: RunConfig) -> int:
    seed = cfg.seed()
    lexicon_path = cfg.get("lexicon", "negatives", "lexicon", str(text_analysis.default_lexicon_path()))
    items = _read_captions(args, lexicon_path)
    records = []
    removable = 0
    for _, tagged in items:
        negset = perturbation.generate_negatives(tagged)
        removable += int(negset.removable)
        if negset.removable and args.drop_removable:
            continue
        records.append(perturbation.negative_set_to_dict(negset))
    inputs = {"captions": args.pretagged or args.captions}
    perturbation.write_jsonl(args.out, records, provenance=provenance(seed, inputs))
    echo_config(args.out, "negatives", {
        "seed": seed, "out": args.out, "drop_removable": bool(args.drop_removable),
        "input": str(inputs["captions"]), "lexicon": lexicon_path,
    })
    print(f"wrote {len(records)} records to {args.out} ({removable} without any swap)")
    return 0


def cmd_shuffle_images(args: argparse.Namespace, cfg: RunConfig) -> int:
    seed = cfg.seed()
    grid = image_shuffle.parse_grid(cfg.get("grid", "shuffle_images", "grid", "patches3x3"))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for path in args.images:
        img = image_shuffle.load_image(path)
        name = Path(path).name
        item_seed = derive_seed(seed, name)
        shuffled, perm = image_shuffle.split_and_shuffle(img, grid, item_seed)
        image_shuffle.save_image(out_dir / name, shuffled)
        entries.append({"image": name, "seed": item_seed, "permutation": perm})
    manifest = out_dir / "shuffle_manifest.json"
    image_shuffle.write_shuffle_manifest(
        manifest,
        entries,
        provenance={
            "tool": f"arokit {__version__}",
            "seed": seed,
            "grid": {"rows": grid.rows, "cols": grid.cols},
        },
    )
    echo_config(manifest, "shuffle-images", {
        "grid": f"{grid.rows}x{grid.cols}", "seed": seed,
        "out_dir": str(out_dir), "n_images": len(entries),
    })
    print(f"shuffled {len(entries)} images into {out_dir}")
    return 0


def cmd_neighbors(args: argparse.Namespace, cfg: RunConfig) -> int:
    seed = cfg.seed()
    k = int(cfg.get("k", "neighbors", "k", 3))
    emb = embedding_store.load(args.embeddings)
    table = embedding_store.top_k_neighbors(emb, k)
    embedding_store.write_neighbor_table(
        table, args.out, provenance=provenance(seed, {"embeddings": args.embeddings})
    )
    echo_config(args.out, "neighbors", {"k": k, "embeddings": args.embeddings, "out": args.out})
    print(f"wrote {len(table.ids)} neighbor lists to {args.out}")
    return 0


def _emit(report: evaluator.EvalReport, args: argparse.Namespace) -> None:
    fmt = evaluator.ReportFormat(args.format)
    evaluator.emit_report(report, args.out, fmt)


def cmd_eval_aro(args: argparse.Namespace, cfg: RunConfig) -> int:
    seed = cfg.seed()
    cases = scene_miner.read_cases(args.cases)
    images = embedding_store.load(args.image_embeddings)
    texts = embedding_store.load(args.text_embeddings)
    report = evaluator.match_accuracy(cases, images, texts, seed=seed)
    _emit(report, args)
    echo_config(args.out, "eval-aro", {
        "cases": args.cases, "image_embeddings": args.image_embeddings,
        "text_embeddings": args.text_embeddings, "seed": seed, "format": args.format,
    })
    acc = report.macro_accuracy
    print(f"macro accuracy {acc:.4f}" if acc is not None else "no cases")
    return 0


def cmd_eval_order(args: argparse.Namespace, cfg: RunConfig) -> int:
    seed = cfg.seed()
    tasks = perturbation.read_order_tasks(args.tasks)
    images = embedding_store.load(args.image_embeddings)
    texts = embedding_store.load(args.text_embeddings)
    report = evaluator.order_task_accuracy(tasks, images, texts, seed=seed)
    _emit(report, args)
    echo_config(args.out, "eval-order", {
        "tasks": args.tasks, "image_embeddings": args.image_embeddings,
        "text_embeddings": args.text_embeddings, "seed": seed, "format": args.format,
    })
    acc = report.micro_accuracy
    print(f"order accuracy {acc:.4f}" if acc is not None else "no tasks")
    return 0


def _load_gold(path: str) -> dict[evaluator.RetrievalDirection, dict[str, set[str]]]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    out = {}
    for direction in evaluator.RetrievalDirection:
        if direction.value in raw:
            out[direction] = {
                str(q): {str(r) for r in rel} for q, rel in raw[direction.value].items()
            }
    if not out:
        raise DataFormatError(
            f"{path}: expected keys 'image_to_text' and/or 'text_to_image'"
        )
    return out


def cmd_eval_retrieval(args: argparse.Namespace, cfg: RunConfig) -> int:
    seed = cfg.seed()
    images = embedding_store.load(args.image_embeddings)
    texts = embedding_store.load(args.text_embeddings)
    sim = embedding_store.cosine_matrix(images, texts)
    gold = _load_gold(args.gold)
    ks = [int(k) for k in str(cfg.get("k", "eval_retrieval", "k", "1,5")).split(",")]
    if args.direction == "both":
        directions = [d for d in evaluator.RetrievalDirection if d in gold]
    else:
        directions = [evaluator.RetrievalDirection(args.direction)]
    report = evaluator.retrieval_report(sim, ks, directions, gold, seed=seed)
    _emit(report, args)
    echo_config(args.out, "eval-retrieval", {
        "image_embeddings": args.image_embeddings, "text_embeddings": args.text_embeddings,
        "gold": args.gold, "k": ks, "direction": args.direction, "seed": seed,
    })
    for key in sorted(report.recalls):
        print(f"{key}: {report.recalls[key]:.4f}")
    return 0


def _training_data_from_files(
    images_path: str, captions_path: str, negatives_path: str | None
) -> contrastive.TrainingData:
    """Assemble trainer input from AROE files.

    Image and caption sets must carry identical ids (any order); negatives
    use composite ids "<item>#<j>" tying each row to its item.
    """
    images = embedding_store.load(images_path)
    captions = embedding_store.load(captions_path)
    if set(images.ids) != set(captions.ids):
        raise DataFormatError("image and caption sets must share the same ids")
    order = {item_id: i for i, item_id in enumerate(captions.ids)}
    cap_rows = np.stack([captions.vectors[order[i]] for i in images.ids])

    negs: list[list[np.ndarray]] = [[] for _ in images.ids]
    if negatives_path:
        neg_set = embedding_store.load(negatives_path)
        index = {item_id: i for i, item_id in enumerate(images.ids)}
        for row_id, vec in zip(neg_set.ids, neg_set.vectors):
            item_id, _, tail = row_id.rpartition("#")
            if not item_id or item_id not in index:
                raise DataFormatError(
                    f"negative id {row_id!r} does not match any item (expected '<item>#<j>')"
                )
            negs[index[item_id]].append(np.asarray(vec, dtype=np.float64))
    return contrastive.TrainingData(
        ids=list(images.ids),
        image_vecs=images.vectors.astype(np.float64),
        caption_vecs=cap_rows.astype(np.float64),
        neg_caption_vecs=[
            np.stack(v) if v else np.zeros((0, images.dim)) for v in negs
        ],
    )


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    seed = cfg.seed()

    def opt(flag: str, key: str, default: Any) -> Any:
        return cfg.get(flag, "train", key, default)

    config = contrastive.TrainConfig(
        epochs=int(opt("epochs", "epochs", 5)),
        batch_size=int(opt("batch_size", "batch_size", 32)),
        learning_rate=float(opt("learning_rate", "learning_rate", 1e-3)),
        warmup_steps=int(opt("warmup_steps", "warmup_steps", 50)),
        total_steps=(lambda v: None if v is None else int(v))(opt("total_steps", "total_steps", None)),
        neighbor_k=int(opt("neighbor_k", "neighbor_k", 3)),
        use_neg_captions=not bool(args.no_neg_captions),
        use_neg_images=bool(opt("use_neg_images", "use_neg_images", False)),
        seed=seed,
        weight_decay=float(opt("weight_decay", "weight_decay", 0.01)),
        proj_dim=int(opt("proj_dim", "proj_dim", 16)),
    )
    data = _training_data_from_files(args.images, args.captions, args.negatives)
    if config.use_neg_captions and any(len(v) == 0 for v in data.neg_caption_vecs):
        raise DataFormatError(
            "every item needs at least one negative caption (or pass --no-neg-captions)"
        )
    if config.use_neg_images:
        images = embedding_store.load(args.images)
        table = embedding_store.top_k_neighbors(images, config.neighbor_k)
        index = {item_id: i for i, item_id in enumerate(data.ids)}
        data.neighbors = [
            [index[nid] for nid, _ in nbrs] for nbrs in table.neighbors
        ]

    val_frac = float(opt("val_fraction", "val_fraction", 0.0))
    val_data = None
    if val_frac > 0.0:
        n_val = max(1, int(len(data) * val_frac))
        split = len(data) - n_val
        val_data = (data.image_vecs[split:], data.caption_vecs[split:])
        data = contrastive.TrainingData(
            ids=data.ids[:split],
            image_vecs=data.image_vecs[:split],
            caption_vecs=data.caption_vecs[:split],
            neg_caption_vecs=data.neg_caption_vecs[:split],
            neighbors=[
                [j for j in nbrs if j < split] for nbrs in data.neighbors[:split]
            ] if data.neighbors else None,
        )

    result = contrastive.train(data, config, val_data=val_data)
    contrastive.save_checkpoint(result.model, args.out_checkpoint, config, result.steps)
    if args.trace:
        contrastive.write_trace_csv(result.trace, args.trace)
    echo_config(args.out_checkpoint, "train", {
        "images": args.images, "captions": args.captions,
        "negatives": args.negatives, "val_fraction": val_frac,
        **{k: v for k, v in vars(config).items()},
    })
    last_loss = result.trace[-1].loss if result.trace else float("nan")
    best = f", best val R@1 {result.best_val_r1:.4f}" if result.best_val_r1 is not None else ""
    print(f"trained {result.steps} steps, final loss {last_loss:.4f}{best}")
    return 0


def cmd_report(args: argparse.Namespace, cfg: RunConfig) -> int:
    report = evaluator.read_report(args.infile)
    evaluator.emit_report(report, args.out, evaluator.ReportFormat(args.format))
    print(f"wrote {args.out}")
    return 0


# --- parser wiring --------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="arokit", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--seed", type=int, help="global seed (u64)")
    parser.add_argument("--jobs", type=int, default=1, help="per-item parallelism (default 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="scene graphs to matching test cases")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=["relation", "attribution", "both"])
    p.add_argument("--symmetric", help="comma list of symmetric predicates to skip")
    p.set_defaults(func=cmd_mine)

    for name, handler in (("perturb", cmd_perturb), ("negatives", cmd_negatives)):
        p = sub.add_parser(name, help=f"{name} captions")
        group = p.add_mutually_exclusive_group(required=True)
        group.add_argument("--captions", help="plain text, one caption per line")
        group.add_argument("--pretagged", help="token<TAB>tag blocks, blank-line separated")
        p.add_argument("--lexicon", help="JSON word->tag map (default: shipped)")
        p.add_argument("--out", required=True)
        if name == "perturb":
            p.add_argument("--strategy", help="a shuffle strategy or 'order_tasks'")
        else:
            p.add_argument("--drop-removable", action="store_true",
                           help="drop captions that admit no swap")
        p.set_defaults(func=handler)

    p = sub.add_parser("shuffle-images", help="destroy patch order in images")
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--grid", help="ROWSxCOLS or preset (rows4, cols4, patches3x3)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_shuffle_images)

    p = sub.add_parser("neighbors", help="exact top-k cosine neighbors")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_neighbors)

    p = sub.add_parser("eval-aro", help="score matching cases")
    p.add_argument("--cases", required=True)
    p.add_argument("--image-embeddings", required=True)
    p.add_argument("--text-embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(func=cmd_eval_aro)

    p = sub.add_parser("eval-order", help="score order tasks")
    p.add_argument("--tasks", required=True)
    p.add_argument("--image-embeddings", required=True)
    p.add_argument("--text-embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(func=cmd_eval_order)

    p = sub.add_parser("eval-retrieval", help="Recall@K retrieval scoring")
    p.add_argument("--image-embeddings", required=True)
    p.add_argument("--text-embeddings", required=True)
    p.add_argument("--gold", required=True, help="JSON: direction -> query -> relevant ids")
    p.add_argument("--k", help="comma list, default 1,5")
    p.add_argument("--direction", choices=["both", "image_to_text", "text_to_image"],
                   default="both")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("train", help="train projection heads")
    p.add_argument("--images", required=True, help="AROE image embeddings")
    p.add_argument("--captions", required=True, help="AROE caption embeddings, same ids")
    p.add_argument("--negatives", help="AROE negative captions, ids '<item>#<j>'")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--trace", help="metrics trace CSV")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--total-steps", type=int)
    p.add_argument("--neighbor-k", type=int)
    p.add_argument("--no-neg-captions", action="store_true")
    p.add_argument("--use-neg-images", action="store_true", default=None)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--proj-dim", type=int)
    p.add_argument("--val-fraction", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="re-emit a stored report")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["json", "csv"], default="csv")
    p.set_defaults(func=cmd_report)

    # Accept the global options after the subcommand too. SUPPRESS keeps an
    # absent flag from clobbering the value parsed at the top level.
    for sp in sub.choices.values():
        sp.add_argument("--config", default=argparse.SUPPRESS, help="TOML config file")
        sp.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global seed (u64)")
        sp.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                        help="per-item parallelism (default 1)")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = RunConfig(args)
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        return args.func(args, cfg)
    except ArokitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

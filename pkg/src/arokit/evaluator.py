"""Scoring for matching tasks, order tasks, and retrieval Recall@K.

All scoring is cosine-based over embedding sets. Caption candidates are
resolved by exact string in the text set; image candidates by id. Every
metric here is deterministic: ties are broken by fixed candidate order
(matching) or ascending candidate id (retrieval ranking).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataFormatError
from .embedding_store import EmbeddingSet, SimilarityMatrix, _norms64
from .perturbation import OrderTask
from .scene_miner import AroTestCase


class RetrievalDirection(str, Enum):
    IMAGE_TO_TEXT = "image_to_text"
    TEXT_TO_IMAGE = "text_to_image"


class ReportFormat(str, Enum):
    JSON = "json"
    CSV = "csv"


@dataclass
class GroupStat:
    correct: int
    count: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.count if self.count else 0.0


@dataclass
class EvalReport:
    task: str
    groups: dict[str, GroupStat] = field(default_factory=dict)
    recalls: dict[str, float] = field(default_factory=dict)
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def macro_accuracy(self) -> float | None:
        """Unweighted mean of group accuracies; group sizes are ignored."""
        if not self.groups:
            return None
        return sum(g.accuracy for g in self.groups.values()) / len(self.groups)

    @property
    def micro_accuracy(self) -> float | None:
        total = sum(g.count for g in self.groups.values())
        if not total:
            return None
        return sum(g.correct for g in self.groups.values()) / total


def _unit_rows(emb: EmbeddingSet) -> np.ndarray:
    return emb.vectors.astype(np.float64) / _norms64(emb.vectors, emb.ids)[:, None]


def _resolve_all(
    image_ids: Iterable[str],
    captions: Iterable[str],
    image_embs: EmbeddingSet,
    text_embs: EmbeddingSet,
) -> tuple[dict[str, int], dict[str, int]]:
    img_index = {i: n for n, i in enumerate(image_embs.ids)}
    txt_index = {t: n for n, t in enumerate(text_embs.ids)}
    missing_img = sorted({i for i in image_ids if i not in img_index})
    missing_txt = sorted({t for t in captions if t not in txt_index})
    if missing_img or missing_txt:
        parts = []
        if missing_img:
            parts.append(f"image ids {missing_img[:10]}")
        if missing_txt:
            parts.append(f"captions {missing_txt[:10]}")
        raise DataFormatError("unresolvable keys: " + "; ".join(parts))
    return img_index, txt_index


def match_accuracy(
    cases: Sequence[AroTestCase],
    image_embs: EmbeddingSet,
    text_embs: EmbeddingSet,
    seed: int | None = None,
) -> EvalReport:
    """Pick-the-caption accuracy, grouped by each case's group key.

    Candidates are scored as [false captions..., true caption] and argmax
    takes the lowest index on ties, so a tie against any false caption
    counts as a failure.
    """
    img_index, txt_index = _resolve_all(
        (c.image_id for c in cases),
        (t for c in cases for t in (c.true_caption, *c.false_captions)),
        image_embs,
        text_embs,
    )
    img_unit = _unit_rows(image_embs)
    txt_unit = _unit_rows(text_embs)

    report = EvalReport(task="match", seed=seed)
    chance_sum = 0.0
    for case in cases:
        candidates = list(case.false_captions) + [case.true_caption]
        sims = txt_unit[[txt_index[t] for t in candidates]] @ img_unit[img_index[case.image_id]]
        picked = int(np.argmax(sims))
        correct = picked == len(case.false_captions)
        stat = report.groups.setdefault(case.group_key, GroupStat(0, 0))
        stat.correct += int(correct)
        stat.count += 1
        chance_sum += 1.0 / len(candidates)
    report.metadata = {
        "n_cases": len(cases),
        "chance_level": round(chance_sum / len(cases), 6) if cases else None,
    }
    return report


def order_task_accuracy(
    tasks: Sequence[OrderTask],
    image_embs: EmbeddingSet,
    text_embs: EmbeddingSet,
    seed: int | None = None,
) -> EvalReport:
    """Strict-argmax accuracy of the true caption against its shuffles.

    Alternatives equal to the true caption are degenerate (the strategy had
    no effect) and are dropped; the per-task chance level shrinks to
    1/(1 + kept alternatives) and the mean is recorded in the metadata.
    """
    img_index, txt_index = _resolve_all(
        (t.image_id for t in tasks),
        (c for t in tasks for c in (t.true_caption, *t.alternatives)),
        image_embs,
        text_embs,
    )
    img_unit = _unit_rows(image_embs)
    txt_unit = _unit_rows(text_embs)

    report = EvalReport(task="order", seed=seed)
    stat = report.groups.setdefault("all", GroupStat(0, 0))
    chance_sum = 0.0
    dropped = 0
    for task in tasks:
        kept = [a for a in task.alternatives if a != task.true_caption]
        dropped += len(task.alternatives) - len(kept)
        img_vec = img_unit[img_index[task.image_id]]
        true_sim = float(txt_unit[txt_index[task.true_caption]] @ img_vec)
        if kept:
            alt_best = float(
                np.max(txt_unit[[txt_index[a] for a in kept]] @ img_vec)
            )
            correct = true_sim > alt_best
        else:
            correct = True
        stat.correct += int(correct)
        stat.count += 1
        chance_sum += 1.0 / (1 + len(kept))
    report.metadata = {
        "n_tasks": len(tasks),
        "degenerate_alternatives_dropped": dropped,
        "chance_level": round(chance_sum / len(tasks), 6) if tasks else None,
    }
    return report


def recall_at_k(
    sim: SimilarityMatrix,
    k: int,
    direction: RetrievalDirection,
    gold: Mapping[str, set[str]],
) -> float:
    """Fraction of queries whose top-k candidates hit a relevant item.

    Ranking is by descending similarity with ties broken by ascending
    candidate id.
    """
    if direction is RetrievalDirection.IMAGE_TO_TEXT:
        query_ids, cand_ids, values = sim.row_ids, sim.col_ids, sim.values
    else:
        query_ids, cand_ids, values = sim.col_ids, sim.row_ids, sim.values.T
    missing = sorted(set(query_ids) - set(gold))
    if missing:
        raise DataFormatError(f"queries missing from gold mapping: {missing[:10]}")
    cand_array = np.array(cand_ids)
    hits = 0
    for qi, qid in enumerate(query_ids):
        order = np.lexsort((cand_array, -values[qi]))[:k]
        relevant = gold[qid]
        if any(cand_ids[j] in relevant for j in order):
            hits += 1
    return hits / len(query_ids) if query_ids else 0.0


def retrieval_report(
    sim: SimilarityMatrix,
    ks: Sequence[int],
    directions: Sequence[RetrievalDirection],
    gold_by_direction: Mapping[RetrievalDirection, Mapping[str, set[str]]],
    seed: int | None = None,
) -> EvalReport:
    report = EvalReport(task="retrieval", seed=seed)
    for direction in directions:
        for k in ks:
            value = recall_at_k(sim, k, direction, gold_by_direction[direction])
            report.recalls[f"{direction.value}@{k}"] = value
    report.metadata = {"n_images": len(sim.row_ids), "n_texts": len(sim.col_ids)}
    return report


# --- report serialization ---------------------------------------------------


def _round6(value: float | None) -> float | None:
    return None if value is None else round(value, 6)


def report_to_dict(report: EvalReport) -> dict:
    return {
        "task": report.task,
        "groups": {
            key: {
                "accuracy": _round6(stat.accuracy),
                "correct": stat.correct,
                "count": stat.count,
            }
            for key, stat in sorted(report.groups.items())
        },
        "macro_accuracy": _round6(report.macro_accuracy),
        "micro_accuracy": _round6(report.micro_accuracy),
        "recalls": {k: _round6(v) for k, v in sorted(report.recalls.items())},
        "seed": report.seed,
        "metadata": report.metadata,
    }


def report_from_dict(record: dict) -> EvalReport:
    try:
        return EvalReport(
            task=str(record["task"]),
            groups={
                key: GroupStat(correct=int(g["correct"]), count=int(g["count"]))
                for key, g in record.get("groups", {}).items()
            },
            recalls={k: float(v) for k, v in record.get("recalls", {}).items()},
            seed=record.get("seed"),
            metadata=dict(record.get("metadata", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"bad report record: {exc}") from exc


def _report_csv(report: EvalReport) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["section", "key", "value", "count"])
    for key, stat in sorted(report.groups.items()):
        writer.writerow(["group", key, f"{stat.accuracy:.6f}", stat.count])
    if report.macro_accuracy is not None:
        writer.writerow(["metric", "macro_accuracy", f"{report.macro_accuracy:.6f}", ""])
    if report.micro_accuracy is not None:
        writer.writerow(["metric", "micro_accuracy", f"{report.micro_accuracy:.6f}", ""])
    for key, value in sorted(report.recalls.items()):
        writer.writerow(["recall", key, f"{value:.6f}", ""])
    if report.seed is not None:
        writer.writerow(["meta", "seed", report.seed, ""])
    return out.getvalue()


def emit_report(report: EvalReport, path: str | Path, fmt: ReportFormat = ReportFormat.JSON) -> None:
    path = Path(path)
    if fmt is ReportFormat.JSON:
        payload = json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n"
    else:
        payload = _report_csv(report)
    path.write_text(payload, encoding="utf-8")


def read_report(path: str | Path) -> EvalReport:
    with open(path, "r", encoding="utf-8") as fh:
        return report_from_dict(json.load(fh))

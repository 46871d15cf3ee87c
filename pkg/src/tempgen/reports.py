"""Corpus-level scoring of prediction files against gold datasets, and
report serialization (JSON plus a plain-text precision/recall/F1 table).

Predicted template sequences are parsed leniently, slot labels resolved
against the codec's role order, and values grounded back onto the
document before scoring. Reports carry no timestamps or host paths, so
identical runs serialize byte-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .codec import CodecConfig, decode_predictions
from .corpus import Dataset, DataError, Entity, Example, TaskKind
from .evaluation import (EntityScore, PRF, RoleCounts, SignificanceResult,
                         ceaf_ree_counts, pool_entity_counts, relation_counts)


# ---------------------------------------------------------------------------
# Prediction files: JSONL {"doc_id": ..., "output_tokens": [...], "logprob": ...}

def write_predictions(path: str | Path,
                      rows: Sequence[tuple[str, list[str], float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, tokens, logprob in rows:
            fh.write(json.dumps({"doc_id": doc_id, "output_tokens": tokens,
                                 "logprob": logprob}, ensure_ascii=False))
            fh.write("\n")


def read_predictions(path: str | Path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc_id = obj["doc_id"]
                tokens = obj["output_tokens"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad prediction record: "
                                f"{exc}") from None
            if doc_id in out:
                raise DataError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
            out[doc_id] = [str(t) for t in tokens]
    return out


# ---------------------------------------------------------------------------
# Gold and predicted structures

def gold_role_map(example: Example) -> dict[str, list[Entity]]:
    roles: dict[str, list[Entity]] = {}
    for template in example.templates:
        for sf in template.slots:
            roles.setdefault(sf.slot_name, []).extend(sf.entities)
    return roles


def pred_role_map(tokens: list[str], example: Example, cfg: CodecConfig
                  ) -> tuple[dict[str, list[Entity]], int]:
    """Role map of predicted entities pooled over all recovered templates,
    deduplicated per role by normalized mention set. Also returns the
    parse warning count."""
    grounded, warnings = decode_predictions(tokens, example.document, cfg)
    roles: dict[str, list[Entity]] = {}
    seen: set[tuple[str, frozenset]] = set()
    for fills in grounded:
        for sf in fills:
            for entity in sf.entities:
                key = (sf.slot_name,
                       frozenset(m.surface.casefold() for m in entity.mentions))
                if key in seen:
                    continue
                seen.add(key)
                roles.setdefault(sf.slot_name, []).append(entity)
    return roles, len(warnings)


def _entity_key(entity: Entity, etype: str) -> tuple[str, frozenset]:
    return etype, frozenset(" ".join(m.surface.split()).casefold()
                            for m in entity.mentions)


def _index_relations(template_fills: Sequence[Sequence]) -> tuple[
        list[Entity], list[tuple[tuple[int, str], ...]]]:
    """Flatten per-template slot fills into a deduplicated entity list and
    relations referencing entity indices."""
    entities: list[Entity] = []
    index: dict[tuple[str, frozenset], int] = {}
    relations = []
    for fills in template_fills:
        members = []
        for sf in fills:
            for entity in sf.entities:
                key = _entity_key(entity, sf.slot_name)
                if key not in index:
                    index[key] = len(entities)
                    entities.append(entity)
                members.append((index[key], sf.slot_name))
        if members:
            relations.append(tuple(members))
    return entities, relations


def gold_relations(example: Example) -> tuple[list[Entity],
                                              list[tuple[tuple[int, str], ...]]]:
    return _index_relations([t.slots for t in example.templates])


def pred_relations(tokens: list[str], example: Example, cfg: CodecConfig
                   ) -> tuple[list[Entity], list[tuple[tuple[int, str], ...]],
                              int]:
    grounded, warnings = decode_predictions(tokens, example.document, cfg)
    entities, relations = _index_relations(grounded)
    return entities, relations, len(warnings)


# ---------------------------------------------------------------------------
# Corpus evaluation

@dataclass
class EvalReport:
    task: TaskKind
    doc_ids: list[str]
    per_doc_f1: list[float]
    entity_score: EntityScore | None
    relation_score: RoleCounts | None
    parse_warnings: int
    missing_predictions: int
    significance: SignificanceResult | None = None

    @property
    def headline_f1(self) -> float:
        if self.entity_score is not None:
            return self.entity_score.micro.f1
        return self.relation_score.prf.f1

    def _prf_dict(self, counts: RoleCounts) -> dict:
        prf = counts.prf
        return {"precision": prf.precision, "recall": prf.recall,
                "f1": prf.f1, "correct": counts.correct,
                "predicted": counts.n_pred, "gold": counts.n_gold}

    def as_dict(self) -> dict:
        out: dict = {
            "task": self.task.value,
            "counts": {
                "documents": len(self.doc_ids),
                "missing_predictions": self.missing_predictions,
                "parse_warnings": self.parse_warnings,
            },
        }
        if self.entity_score is not None:
            pooled = sum(self.entity_score.per_role.values(), RoleCounts())
            out["per_role"] = {
                role: self._prf_dict(c)
                for role, c in sorted(self.entity_score.per_role.items())}
            out["micro"] = self._prf_dict(pooled)
        else:
            label = "binary" if self.task is TaskKind.BINARY_RE else "4ary"
            out["per_arity"] = {label: self._prf_dict(self.relation_score)}
            out["micro"] = self._prf_dict(self.relation_score)
        if self.significance is not None:
            out["significance"] = {
                "delta": self.significance.delta,
                "p_value": self.significance.p_value,
                "resamples": self.significance.resamples,
                "seed": self.significance.seed,
            }
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2) + "\n"


def evaluate_predictions(dataset: Dataset,
                         predictions: Mapping[str, Sequence[str]],
                         cfg: CodecConfig,
                         significance: SignificanceResult | None = None
                         ) -> EvalReport:
    """Score a prediction map (doc_id to generated tokens) against gold.

    Predictions for unknown documents are an error; documents without a
    prediction are scored as empty output and counted.
    """
    known = set(dataset.doc_ids())
    unknown = set(predictions) - known
    if unknown:
        raise DataError(f"predictions reference unknown doc_ids "
                        f"{sorted(unknown)[:5]}")

    missing = 0
    warning_total = 0
    per_doc_f1: list[float] = []
    doc_ids: list[str] = []

    if dataset.task is TaskKind.REE:
        per_doc_counts: list[dict[str, RoleCounts]] = []
        for example in dataset:
            tokens = list(predictions.get(example.doc_id, []))
            if example.doc_id not in predictions:
                missing += 1
            roles, n_warn = pred_role_map(tokens, example, cfg)
            warning_total += n_warn
            counts = ceaf_ree_counts(roles, gold_role_map(example))
            per_doc_counts.append(counts)
            pooled = sum(counts.values(), RoleCounts())
            per_doc_f1.append(pooled.prf.f1)
            doc_ids.append(example.doc_id)
        return EvalReport(task=dataset.task, doc_ids=doc_ids,
                          per_doc_f1=per_doc_f1,
                          entity_score=pool_entity_counts(per_doc_counts),
                          relation_score=None,
                          parse_warnings=warning_total,
                          missing_predictions=missing,
                          significance=significance)

    arity = dataset.task.arity
    pooled = RoleCounts()
    for example in dataset:
        tokens = list(predictions.get(example.doc_id, []))
        if example.doc_id not in predictions:
            missing += 1
        p_entities, p_relations, n_warn = pred_relations(tokens, example, cfg)
        warning_total += n_warn
        g_entities, g_relations = gold_relations(example)
        counts = relation_counts(p_relations, g_relations, p_entities,
                                 g_entities, arity)
        pooled = pooled + counts
        per_doc_f1.append(counts.prf.f1)
        doc_ids.append(example.doc_id)
    return EvalReport(task=dataset.task, doc_ids=doc_ids,
                      per_doc_f1=per_doc_f1, entity_score=None,
                      relation_score=pooled, parse_warnings=warning_total,
                      missing_predictions=missing, significance=significance)


def format_report_table(report: EvalReport) -> str:
    """Three-column score table (percentages), one row per role or arity
    plus the micro average."""
    rows: list[tuple[str, PRF]] = []
    if report.entity_score is not None:
        for role, counts in sorted(report.entity_score.per_role.items()):
            rows.append((role, counts.prf))
        rows.append(("micro", report.entity_score.micro))
    else:
        label = "binary" if report.task is TaskKind.BINARY_RE else "4ary"
        rows.append((label, report.relation_score.prf))
        rows.append(("micro", report.relation_score.prf))

    width = max(6, *(len(name) for name, _ in rows))
    lines = [f"{'':<{width}}  {'Prec.':>7} {'Rec.':>7} {'F1':>7}"]
    for name, prf in rows:
        lines.append(f"{name:<{width}}  {100 * prf.precision:>7.2f} "
                     f"{100 * prf.recall:>7.2f} {100 * prf.f1:>7.2f}")
    return "\n".join(lines) + "\n"

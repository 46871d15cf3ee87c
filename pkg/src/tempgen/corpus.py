"""Data model for documents and template annotations, JSONL ingestion, and
a seeded synthetic-corpus generator.

A dataset is a collection of tokenized documents, each annotated with zero
or more templates. A template is an ordered list of slot fills; a slot fill
binds a slot name (an event role or an entity type) to a set of entities;
an entity is a cluster of mentions, and a mention is a contiguous token
span of the owning document.

All types are immutable after construction. Loading and generation are
pure functions of (path | config, seed), so datasets are safe to share
across threads.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised when a record is malformed or violates a dataset invariant."""


class TaskKind(Enum):
    REE = "ree"
    BINARY_RE = "binary-re"
    FOUR_ARY_RE = "4ary-re"

    @property
    def arity(self) -> int | None:
        """Number of slots per template for relation tasks, None for REE."""
        if self is TaskKind.BINARY_RE:
            return 2
        if self is TaskKind.FOUR_ARY_RE:
            return 4
        return None

    @classmethod
    def from_string(cls, s: str) -> "TaskKind":
        for kind in cls:
            if kind.value == s:
                return kind
        raise DataError(f"unknown task {s!r}; expected one of "
                        f"{[k.value for k in cls]}")


@dataclass(frozen=True)
class Mention:
    """A token span. ``start`` is inclusive, ``end`` exclusive.

    Predicted mentions whose surface does not occur in the document carry
    ``start = end = None`` and only a surface string.
    """
    start: int | None
    end: int | None
    surface: str

    def __post_init__(self) -> None:
        if (self.start is None) != (self.end is None):
            raise DataError("mention span must set both start and end or neither")
        if self.start is not None:
            if self.start < 0 or self.end <= self.start:
                raise DataError(f"invalid mention span ({self.start}, {self.end})")

    @property
    def has_span(self) -> bool:
        return self.start is not None


@dataclass(frozen=True)
class Entity:
    """A cluster of coreferent mentions with a role or type label."""
    mentions: tuple[Mention, ...]
    entity_type: str

    def __post_init__(self) -> None:
        if not self.mentions:
            raise DataError("entity must have at least one mention")

    def first_position(self) -> int:
        """Earliest mention start, used for canonical ordering."""
        starts = [m.start for m in self.mentions if m.has_span]
        return min(starts) if starts else 0


@dataclass(frozen=True)
class SlotFill:
    slot_name: str
    entities: tuple[Entity, ...]

    def __post_init__(self) -> None:
        if not self.slot_name:
            raise DataError("slot name must be non-empty")


@dataclass(frozen=True)
class GoldTemplate:
    slots: tuple[SlotFill, ...]


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.tokens:
            raise DataError(f"document {self.doc_id!r} has no tokens")

    def surface(self, start: int, end: int) -> str:
        return " ".join(self.tokens[start:end])


@dataclass(frozen=True)
class Example:
    """One document together with its gold templates."""
    document: Document
    templates: tuple[GoldTemplate, ...]

    @property
    def doc_id(self) -> str:
        return self.document.doc_id


@dataclass(frozen=True)
class Dataset:
    task: TaskKind
    examples: tuple[Example, ...]

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self) -> Iterator[Example]:
        return iter(self.examples)

    def doc_ids(self) -> tuple[str, ...]:
        return tuple(ex.doc_id for ex in self.examples)

    def slot_names(self) -> tuple[str, ...]:
        """Distinct slot names across all templates, sorted."""
        names = {sf.slot_name for ex in self.examples
                 for t in ex.templates for sf in t.slots}
        return tuple(sorted(names))


# ---------------------------------------------------------------------------
# Validation

def validate_example(example: Example, task: TaskKind) -> None:
    doc = example.document
    n = len(doc.tokens)
    if task is TaskKind.REE and len(example.templates) != 1:
        raise DataError(
            f"doc {doc.doc_id!r}: REE documents carry exactly one template, "
            f"got {len(example.templates)}")
    for template in example.templates:
        arity = task.arity
        if arity is not None:
            if len(template.slots) != arity:
                raise DataError(
                    f"doc {doc.doc_id!r}: {task.value} templates carry exactly "
                    f"{arity} slots, got {len(template.slots)}")
            for sf in template.slots:
                if len(sf.entities) != 1:
                    raise DataError(
                        f"doc {doc.doc_id!r}: relation slot {sf.slot_name!r} "
                        f"must hold exactly one entity, got {len(sf.entities)}")
        for sf in template.slots:
            for entity in sf.entities:
                for m in entity.mentions:
                    if not m.has_span:
                        raise DataError(
                            f"doc {doc.doc_id!r}: gold mention lacks a span")
                    if m.end > n:
                        raise DataError(
                            f"doc {doc.doc_id!r}: mention span ({m.start}, {m.end}) "
                            f"exceeds document length {n}")
                    expected = doc.surface(m.start, m.end)
                    if m.surface != expected:
                        raise DataError(
                            f"doc {doc.doc_id!r}: mention surface {m.surface!r} "
                            f"does not match span text {expected!r}")


def validate_dataset(dataset: Dataset) -> None:
    seen: set[str] = set()
    for example in dataset.examples:
        if example.doc_id in seen:
            raise DataError(f"duplicate doc_id {example.doc_id!r}")
        seen.add(example.doc_id)
        validate_example(example, dataset.task)


# ---------------------------------------------------------------------------
# JSONL loading / saving
#
# One record per line:
#   {"doc_id": str, "tokens": [str], "templates":
#     [{"slots": [{"name": str, "entities":
#       [{"type": str, "mentions": [{"start": int, "end": int}]}]}]}]}
# Mention surfaces are recomputed from spans on load and checked against
# the document, so files never store them.

_RECORD_KEYS = {"doc_id", "tokens", "templates"}
_TEMPLATE_KEYS = {"slots"}
_SLOT_KEYS = {"name", "entities"}
_ENTITY_KEYS = {"type", "mentions"}
_MENTION_KEYS = {"start", "end"}


def _check_keys(obj: dict, allowed: set[str], where: str, strict: bool) -> None:
    unknown = set(obj) - allowed
    if not unknown:
        return
    msg = f"unknown field(s) {sorted(unknown)} in {where}"
    if strict:
        raise DataError(msg)
    logger.warning("%s (ignored)", msg)


def _parse_record(obj: dict, strict: bool) -> Example:
    if not isinstance(obj, dict):
        raise DataError("record is not a JSON object")
    _check_keys(obj, _RECORD_KEYS, "record", strict)
    try:
        doc_id = obj["doc_id"]
        tokens = obj["tokens"]
    except KeyError as exc:
        raise DataError(f"record missing field {exc.args[0]!r}") from None
    if not isinstance(doc_id, str):
        raise DataError("doc_id must be a string")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise DataError(f"doc {doc_id!r}: tokens must be a list of strings")
    doc = Document(doc_id=doc_id, tokens=tuple(tokens))

    templates = []
    for t_obj in obj.get("templates", []):
        _check_keys(t_obj, _TEMPLATE_KEYS, f"template of doc {doc_id!r}", strict)
        slots = []
        for s_obj in t_obj.get("slots", []):
            _check_keys(s_obj, _SLOT_KEYS, f"slot of doc {doc_id!r}", strict)
            entities = []
            for e_obj in s_obj.get("entities", []):
                _check_keys(e_obj, _ENTITY_KEYS, f"entity of doc {doc_id!r}", strict)
                mentions = []
                for m_obj in e_obj.get("mentions", []):
                    _check_keys(m_obj, _MENTION_KEYS,
                                f"mention of doc {doc_id!r}", strict)
                    start, end = m_obj.get("start"), m_obj.get("end")
                    if not isinstance(start, int) or not isinstance(end, int):
                        raise DataError(
                            f"doc {doc_id!r}: mention start/end must be integers")
                    if start < 0 or end <= start or end > len(tokens):
                        raise DataError(
                            f"doc {doc_id!r}: mention span ({start}, {end}) out of "
                            f"range for document of {len(tokens)} tokens")
                    mentions.append(
                        Mention(start=start, end=end, surface=doc.surface(start, end)))
                entities.append(Entity(mentions=tuple(mentions),
                                       entity_type=str(e_obj.get("type", ""))))
            slots.append(SlotFill(slot_name=str(s_obj.get("name", "")),
                                  entities=tuple(entities)))
        templates.append(GoldTemplate(slots=tuple(slots)))
    return Example(document=doc, templates=tuple(templates))


def load_dataset(path: str | Path, task: TaskKind, strict: bool = False) -> Dataset:
    """Load and validate a JSONL dataset.

    In strict mode unknown fields are rejected; otherwise they are dropped
    with a warning. Invariant violations are errors in either mode.
    """
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            try:
                examples.append(_parse_record(obj, strict))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    dataset = Dataset(task=task, examples=tuple(examples))
    validate_dataset(dataset)
    return dataset


def _record_dict(example: Example) -> dict:
    return {
        "doc_id": example.doc_id,
        "tokens": list(example.document.tokens),
        "templates": [
            {"slots": [
                {"name": sf.slot_name,
                 "entities": [
                     {"type": e.entity_type,
                      "mentions": [{"start": m.start, "end": m.end}
                                   for m in e.mentions]}
                     for e in sf.entities]}
                for sf in t.slots]}
            for t in example.templates],
    }


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for example in dataset.examples:
            fh.write(json.dumps(_record_dict(example), ensure_ascii=False))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Synthetic corpus generation
#
# Documents are built from planted segments embedded among distractor
# tokens drawn from a filler vocabulary disjoint from every other token
# pool, so the mapping from document to template is unambiguous. Each
# planted mention is wrapped in cue tokens: a slot-specific opening cue
# and a shared closing cue. Entity mentions repeat verbatim, which makes
# copying both learnable and gradeable.

_FILLER_VOCAB_SIZE = 300
_NAME_POOL_SIZE = 1200
_CLOSE_CUE = "endcue"
_REL_OPEN = "relopen"
_REL_CLOSE = "relclose"


@dataclass(frozen=True)
class SynthConfig:
    task: TaskKind
    n_docs: int
    doc_len: tuple[int, int] = (100, 140)
    roles: tuple[str, ...] = ("PerpInd", "PerpOrg", "Target", "Victim", "Weapon")
    entities_per_slot: tuple[int, int] = (0, 2)
    mention_repeat: tuple[int, int] = (1, 2)
    mention_len: tuple[int, int] = (1, 2)
    distractor_ratio: float = 0.2
    relation_count: tuple[int, int] = (1, 2)
    rng_seed: int = 0

    def __post_init__(self) -> None:
        for name in ("doc_len", "entities_per_slot", "mention_repeat",
                     "mention_len", "relation_count"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise DataError(f"invalid {name} range ({lo}, {hi})")
        if not 0.0 <= self.distractor_ratio <= 1.0:
            raise DataError("distractor_ratio must lie in [0, 1]")
        if self.n_docs < 0:
            raise DataError("n_docs must be nonnegative")
        if not self.roles:
            raise DataError("role/type inventory must be non-empty")
        arity = self.task.arity
        if arity is not None and len(self.roles) < arity:
            raise DataError(
                f"{self.task.value} needs at least {arity} entity types, "
                f"got {len(self.roles)}")


def _role_cue(role: str) -> str:
    return role.lower() + "cue"


def _worst_case_planted(cfg: SynthConfig) -> int:
    """Upper bound on planted tokens per document."""
    seg = cfg.mention_len[1] + 2  # open cue + mention + close cue
    if cfg.task is TaskKind.REE:
        n_mentions = len(cfg.roles) * cfg.entities_per_slot[1] * cfg.mention_repeat[1]
        return n_mentions * seg
    arity = cfg.task.arity
    per_relation = 2 + arity * seg  # relation open/close markers
    extra = arity * (cfg.mention_repeat[1] - 1) * seg
    return cfg.relation_count[1] * (per_relation + extra)


def _assemble_document(rng: random.Random, doc_id: str, length: int,
                       segments: list[tuple[list[str], list[tuple[int, object]]]],
                       fillers: list[str]) -> tuple[Document, dict]:
    """Scatter segments among distractors; return document and a map from
    the opaque keys attached to segment positions to absolute offsets."""
    planted = sum(len(tokens) for tokens, _ in segments)
    n_distractors = length - planted
    order = list(range(len(segments)))
    rng.shuffle(order)
    # Distribute distractors over the len(segments)+1 gaps.
    gaps = [0] * (len(segments) + 1)
    for _ in range(n_distractors):
        gaps[rng.randrange(len(gaps))] += 1

    tokens: list[str] = []
    offsets: dict = {}
    for gap, seg_index in zip(gaps, order):
        tokens.extend(rng.choice(fillers) for _ in range(gap))
        seg_tokens, anchors = segments[seg_index]
        base = len(tokens)
        for rel_pos, key in anchors:
            offsets[key] = base + rel_pos
        tokens.extend(seg_tokens)
    tokens.extend(rng.choice(fillers) for _ in range(gaps[-1]))
    return Document(doc_id=doc_id, tokens=tuple(tokens)), offsets


def _sample_surface(rng: random.Random, cfg: SynthConfig, names: list[str],
                    used: set[str]) -> list[str]:
    for _ in range(64):
        k = rng.randint(*cfg.mention_len)
        surface = [rng.choice(names) for _ in range(k)]
        if " ".join(surface) not in used:
            used.add(" ".join(surface))
            return surface
    raise DataError("could not sample a fresh entity surface; name pool exhausted")


def synth_generate(cfg: SynthConfig) -> Dataset:
    """Generate a synthetic dataset, deterministic under ``cfg.rng_seed``.

    Raises DataError when the document length range cannot accommodate the
    planted content plus the requested distractor fraction.
    """
    worst = _worst_case_planted(cfg)
    budget = int(cfg.doc_len[0] * (1.0 - cfg.distractor_ratio))
    if worst > budget:
        raise DataError(
            f"infeasible config: up to {worst} planted tokens per document but "
            f"doc_len {cfg.doc_len[0]} with distractor_ratio "
            f"{cfg.distractor_ratio} leaves only {budget}")

    rng = random.Random(cfg.rng_seed)
    fillers = [f"filler{i:03d}" for i in range(_FILLER_VOCAB_SIZE)]
    names = [f"name{i:04d}" for i in range(_NAME_POOL_SIZE)]

    examples = []
    for doc_index in range(cfg.n_docs):
        doc_id = f"synth-{cfg.task.value}-{doc_index:05d}"
        if cfg.task is TaskKind.REE:
            example = _generate_ree_doc(rng, cfg, doc_id, fillers, names)
        else:
            example = _generate_re_doc(rng, cfg, doc_id, fillers, names)
        examples.append(example)
    dataset = Dataset(task=cfg.task, examples=tuple(examples))
    validate_dataset(dataset)
    return dataset


def _generate_ree_doc(rng: random.Random, cfg: SynthConfig, doc_id: str,
                      fillers: list[str], names: list[str]) -> Example:
    length = rng.randint(*cfg.doc_len)
    used: set[str] = set()
    segments = []
    plan = []  # (role, surface tokens, mention keys)
    for role in cfg.roles:
        for e_index in range(rng.randint(*cfg.entities_per_slot)):
            surface = _sample_surface(rng, cfg, names, used)
            keys = []
            for m_index in range(rng.randint(*cfg.mention_repeat)):
                key = (role, e_index, m_index)
                keys.append(key)
                segments.append(
                    ([_role_cue(role), *surface, _CLOSE_CUE], [(1, key)]))
            plan.append((role, surface, keys))

    doc, offsets = _assemble_document(rng, doc_id, length, segments, fillers)

    slots = []
    for role in cfg.roles:
        entities = []
        for p_role, surface, keys in plan:
            if p_role != role:
                continue
            mentions = tuple(
                Mention(start=offsets[k], end=offsets[k] + len(surface),
                        surface=" ".join(surface))
                for k in sorted(keys, key=offsets.__getitem__))
            entities.append(Entity(mentions=mentions, entity_type=role))
        slots.append(SlotFill(slot_name=role, entities=tuple(entities)))
    template = GoldTemplate(slots=tuple(slots))
    return Example(document=doc, templates=(template,))


def _generate_re_doc(rng: random.Random, cfg: SynthConfig, doc_id: str,
                     fillers: list[str], names: list[str]) -> Example:
    arity = cfg.task.arity
    length = rng.randint(*cfg.doc_len)
    used: set[str] = set()
    segments = []
    relation_plans = []
    for r_index in range(rng.randint(*cfg.relation_count)):
        types = rng.sample(list(cfg.roles), arity)
        rel_tokens: list[str] = [_REL_OPEN]
        anchors = []
        entity_plan = []
        for s_index, etype in enumerate(types):
            surface = _sample_surface(rng, cfg, names, used)
            key = (r_index, s_index, 0)
            anchors.append((len(rel_tokens) + 1, key))
            rel_tokens.extend([_role_cue(etype), *surface, _CLOSE_CUE])
            keys = [key]
            for m_index in range(1, rng.randint(*cfg.mention_repeat)):
                extra = (r_index, s_index, m_index)
                keys.append(extra)
                segments.append(
                    ([_role_cue(etype), *surface, _CLOSE_CUE], [(1, extra)]))
            entity_plan.append((etype, surface, keys))
        rel_tokens.append(_REL_CLOSE)
        segments.append((rel_tokens, anchors))
        relation_plans.append(entity_plan)

    doc, offsets = _assemble_document(rng, doc_id, length, segments, fillers)

    templates = []
    for entity_plan in relation_plans:
        slots = []
        for etype, surface, keys in entity_plan:
            mentions = tuple(
                Mention(start=offsets[k], end=offsets[k] + len(surface),
                        surface=" ".join(surface))
                for k in sorted(keys, key=offsets.__getitem__))
            entity = Entity(mentions=mentions, entity_type=etype)
            slots.append(SlotFill(slot_name=etype, entities=(entity,)))
        templates.append(GoldTemplate(slots=tuple(slots)))
    return Example(document=doc, templates=tuple(templates))


# ---------------------------------------------------------------------------
# Splitting

def split(dataset: Dataset, fractions: tuple[float, float, float],
          seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministically partition a dataset into train/dev/test.

    Fractions must be positive and sum to 1. Sizes are assigned by largest
    remainder, so exact ratios such as (13/17, 2/17, 2/17) on 17 documents
    come out exact.
    """
    if any(f <= 0 for f in fractions):
        raise DataError("all split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {sum(fractions)}")
    n = len(dataset.examples)
    if n < len(fractions):
        raise DataError(f"cannot split {n} documents into {len(fractions)} parts")

    counts = [int(f * n) for f in fractions]
    remainders = [f * n - c for f, c in zip(fractions, counts)]
    for i in sorted(range(len(fractions)), key=lambda i: (-remainders[i], i)):
        if sum(counts) == n:
            break
        counts[i] += 1

    order = list(range(n))
    random.Random(seed).shuffle(order)
    parts = []
    cursor = 0
    for count in counts:
        chosen = sorted(order[cursor:cursor + count])
        parts.append(Dataset(task=dataset.task,
                             examples=tuple(dataset.examples[i] for i in chosen)))
        cursor += count
    return parts[0], parts[1], parts[2]

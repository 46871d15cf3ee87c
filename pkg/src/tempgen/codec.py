"""Bidirectional conversion between template annotations and flat tagged
token sequences, plus lenient parsing of model-generated sequences.

A well-formed sequence obeys the grammar

    sequence := template*
    template := <SOT> slot+ <EOT>
    slot     := <SOSN> name-token+ <EOSN> <SOE> value-token* <EOE>

rendered as plain text with literal tag strings separated by single
spaces. ``parse`` is total: arbitrary token sequences are repaired into
well-formed structure, and every repair is reported as a warning.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass
from enum import Enum

from .corpus import Document, Entity, GoldTemplate, Mention, SlotFill, TaskKind

SOT = "<SOT>"
EOT = "<EOT>"
SOSN = "<SOSN>"
EOSN = "<EOSN>"
SOE = "<SOE>"
EOE = "<EOE>"

SPECIAL_TAGS = (SOT, EOT, SOSN, EOSN, SOE, EOE)
_TAG_SET = frozenset(SPECIAL_TAGS)

_NUMERIC_SLOT_RE = re.compile(r"^<ROLE_(\d+)>$")


class CodecError(ValueError):
    """Raised when an annotation cannot be encoded under the given config."""


class SlotNameStyle(Enum):
    SEMANTIC = "semantic"
    NUMERIC = "numeric"


class SlotLayout(Enum):
    PER_ENTITY = "per-entity"
    MERGED_PER_ROLE = "merged"


@dataclass(frozen=True)
class CodecConfig:
    """Controls how annotations are rendered into a template sequence.

    role_order fixes the canonical slot ordering and, for the numeric
    style, the index behind each ``<ROLE_i>`` alias. mention_policy picks
    which mention renders an entity: "first" takes the earliest span,
    "random" samples one with a generator seeded from (mention_seed,
    doc_id), so encoding is reproducible per document.
    """
    role_order: tuple[str, ...]
    slot_name_style: SlotNameStyle = SlotNameStyle.SEMANTIC
    slot_layout: SlotLayout = SlotLayout.PER_ENTITY
    mention_policy: str = "first"
    mention_seed: int = 0
    merged_separator: str = ";"

    def __post_init__(self) -> None:
        if self.mention_policy not in ("first", "random"):
            raise CodecError(
                f"mention_policy must be 'first' or 'random', got "
                f"{self.mention_policy!r}")
        if len(set(self.role_order)) != len(self.role_order):
            raise CodecError("role_order contains duplicates")

    def slot_label(self, name: str, strict: bool = True) -> str:
        """Rendered slot name under the configured style."""
        if self.slot_name_style is SlotNameStyle.SEMANTIC:
            return name
        try:
            index = self.role_order.index(name)
        except ValueError:
            if strict:
                raise CodecError(f"slot name {name!r} missing from role_order")
            return name
        return f"<ROLE_{index + 1}>"

    def resolve_slot_name(self, label: str) -> str | None:
        """Invert ``slot_label``. Returns None for an unresolvable label."""
        if self.slot_name_style is SlotNameStyle.SEMANTIC:
            return label if label in self.role_order else None
        match = _NUMERIC_SLOT_RE.match(label)
        if not match:
            return None
        index = int(match.group(1)) - 1
        if 0 <= index < len(self.role_order):
            return self.role_order[index]
        return None

    def target_side_tokens(self) -> tuple[str, ...]:
        """Non-document tokens that encoded targets can contain, used when
        building a vocabulary."""
        extra: list[str] = []
        if self.slot_name_style is SlotNameStyle.NUMERIC:
            extra.extend(f"<ROLE_{i + 1}>" for i in range(len(self.role_order)))
        else:
            extra.extend(self.role_order)
        if self.slot_layout is SlotLayout.MERGED_PER_ROLE:
            extra.append(self.merged_separator)
        return tuple(extra)


# ---------------------------------------------------------------------------
# Encoding

def _role_index(cfg: CodecConfig, name: str, strict: bool) -> int:
    try:
        return cfg.role_order.index(name)
    except ValueError:
        if strict:
            raise CodecError(f"slot name {name!r} missing from role_order")
        return len(cfg.role_order)


def _choose_mention(entity: Entity, rng: random.Random | None) -> Mention:
    spanned = sorted(entity.mentions, key=lambda m: (m.start, m.end))
    if rng is None:
        return spanned[0]
    return rng.choice(spanned)


def encode_targets(doc: Document, templates: tuple[GoldTemplate, ...] | list,
                   task: TaskKind, cfg: CodecConfig,
                   strict: bool = True) -> list[str]:
    """Render gold templates into one flat tagged token sequence.

    Templates are ordered by the earliest mention among their entities;
    slots within a template by (role_order position, earliest mention).
    Slots with no entities are omitted, and a template in which every slot
    is empty contributes nothing, so an unfilled annotation encodes to the
    empty sequence.
    """
    rng = None
    if cfg.mention_policy == "random":
        rng = random.Random(f"{cfg.mention_seed}:{doc.doc_id}")

    rendered_templates: list[tuple[int, list[str]]] = []
    for template in templates:
        # Collect and sort first so the mention sampler is consumed in
        # canonical order; encoding is then invariant to input slot order.
        items = []  # (role index, first position, name, entity)
        for sf in template.slots:
            order = _role_index(cfg, sf.slot_name, strict)
            for entity in sf.entities:
                items.append((order, entity.first_position(), sf.slot_name,
                              entity))
        items.sort(key=lambda it: (it[0], it[1]))
        if not items:
            continue

        pairs: list[tuple[str, list[str]]] = []  # (name, value tokens)
        if cfg.slot_layout is SlotLayout.PER_ENTITY:
            for _, _, name, entity in items:
                pairs.append((name, _choose_mention(entity, rng)
                              .surface.split()))
        else:
            for _, _, name, entity in items:
                tokens = _choose_mention(entity, rng).surface.split()
                if pairs and pairs[-1][0] == name:
                    pairs[-1][1].append(cfg.merged_separator)
                    pairs[-1][1].extend(tokens)
                else:
                    pairs.append((name, tokens))

        body: list[str] = [SOT]
        for name, value in pairs:
            label = cfg.slot_label(name, strict=strict)
            body.extend([SOSN, *label.split(), EOSN, SOE, *value, EOE])
        body.append(EOT)
        rendered_templates.append((min(it[1] for it in items), body))

    rendered_templates.sort(key=lambda t: t[0])
    out: list[str] = []
    for _, body in rendered_templates:
        out.extend(body)
    return out


def render_text(tokens: list[str] | tuple[str, ...]) -> str:
    return " ".join(tokens)


def tokens_from_text(text: str) -> list[str]:
    return text.split()


# ---------------------------------------------------------------------------
# Parsing

class WarningKind(Enum):
    UNCLOSED_TAG = "UnclosedTag"
    ORPHAN_TAG = "OrphanTag"
    EMPTY_SLOT_NAME = "EmptySlotName"
    UNKNOWN_SLOT_NAME = "UnknownSlotName"
    TRUNCATED_TEMPLATE = "TruncatedTemplate"


@dataclass(frozen=True)
class ParseWarning:
    kind: WarningKind
    position: int  # token index of the repair; -1 when post-hoc


@dataclass(frozen=True)
class ParsedTemplate:
    """Slots grouped by name in first-appearance order; every <SOE>..<EOE>
    block contributes one value string."""
    slots: tuple[tuple[str, tuple[str, ...]], ...]

    def as_dict(self) -> dict[str, tuple[str, ...]]:
        return dict(self.slots)


def _group_slots(raw: list[tuple[str, str]]) -> ParsedTemplate:
    order: list[str] = []
    grouped: dict[str, list[str]] = {}
    for name, value in raw:
        if name not in grouped:
            grouped[name] = []
            order.append(name)
        grouped[name].append(value)
    return ParsedTemplate(
        slots=tuple((name, tuple(grouped[name])) for name in order))


def parse(tokens: list[str] | tuple[str, ...]) -> tuple[list[ParsedTemplate],
                                                        list[ParseWarning]]:
    """Parse an arbitrary token sequence into templates, repairing grammar
    violations. Never fails; each repair produces one warning:

    - a name or value block missing its closing tag is closed at the next
      special tag or at end of sequence (UnclosedTag); likewise a template
      missing <EOT> and a slot whose value block never starts;
    - tokens outside any block, and stray closing tags, are dropped
      (OrphanTag);
    - a slot with an empty name is dropped (EmptySlotName);
    - a template with zero complete slots is dropped (TruncatedTemplate).

    A sequence that parses with zero warnings is grammatical.
    """
    templates: list[ParsedTemplate] = []
    warnings: list[ParseWarning] = []

    in_template = False
    slots: list[tuple[str, str]] = []
    name_tokens: list[str] | None = None   # collecting a slot name
    value_tokens: list[str] | None = None  # collecting a slot value
    pending_name: str | None = None        # closed name awaiting its value
    awaiting_value = False

    def warn(kind: WarningKind, position: int) -> None:
        warnings.append(ParseWarning(kind=kind, position=position))

    def close_template(position: int) -> None:
        nonlocal in_template, slots
        if slots:
            templates.append(_group_slots(slots))
        else:
            warn(WarningKind.TRUNCATED_TEMPLATE, position)
        slots = []
        in_template = False

    def finish_slot() -> None:
        """Commit the open value block as a slot. A None name means the
        empty-name repair was already reported; the slot is dropped."""
        nonlocal value_tokens, pending_name
        if pending_name is not None:
            slots.append((pending_name, " ".join(value_tokens)))
        value_tokens = None
        pending_name = None

    def abandon_slot(position: int) -> None:
        """Drop a slot whose value block never materialised."""
        nonlocal name_tokens, pending_name, awaiting_value
        warn(WarningKind.UNCLOSED_TAG, position)
        name_tokens = None
        pending_name = None
        awaiting_value = False

    i = 0
    n = len(tokens)
    while i < n:
        tok = tokens[i]
        if value_tokens is not None:
            if tok not in _TAG_SET:
                value_tokens.append(tok)
            elif tok == EOE:
                finish_slot()
            else:
                warn(WarningKind.UNCLOSED_TAG, i)
                finish_slot()
                continue  # reprocess the tag that forced the close
            i += 1
            continue
        if name_tokens is not None:
            if tok not in _TAG_SET:
                name_tokens.append(tok)
            elif tok == EOSN:
                if name_tokens:
                    pending_name = " ".join(name_tokens)
                else:
                    warn(WarningKind.EMPTY_SLOT_NAME, i)
                    pending_name = None
                name_tokens = None
                awaiting_value = True
            elif tok == SOE:
                warn(WarningKind.UNCLOSED_TAG, i)  # missing <EOSN>
                if name_tokens:
                    pending_name = " ".join(name_tokens)
                else:
                    warn(WarningKind.EMPTY_SLOT_NAME, i)
                    pending_name = None
                name_tokens = None
                value_tokens = []
            else:
                warn(WarningKind.UNCLOSED_TAG, i)  # name block never closed
                name_tokens = None
                continue
            i += 1
            continue
        if awaiting_value:
            if tok == SOE:
                awaiting_value = False
                value_tokens = []
            elif tok not in _TAG_SET or tok in (EOSN, EOE):
                warn(WarningKind.ORPHAN_TAG, i)  # dropped; still awaiting <SOE>
            else:
                abandon_slot(i)
                continue
            i += 1
            continue
        if in_template:
            if tok == SOSN:
                name_tokens = []
            elif tok == EOT:
                close_template(i)
            elif tok == SOT:
                warn(WarningKind.UNCLOSED_TAG, i)  # missing <EOT>
                close_template(i)
                continue
            elif tok == SOE:
                warn(WarningKind.EMPTY_SLOT_NAME, i)
                pending_name = None
                value_tokens = []
            else:
                warn(WarningKind.ORPHAN_TAG, i)
            i += 1
            continue
        # outside any template
        if tok == SOT:
            in_template = True
        else:
            warn(WarningKind.ORPHAN_TAG, i)
        i += 1

    if value_tokens is not None:
        warn(WarningKind.UNCLOSED_TAG, n)
        finish_slot()
    if name_tokens is not None or awaiting_value:
        abandon_slot(n)
    if in_template:
        warn(WarningKind.UNCLOSED_TAG, n)
        close_template(n)
    return templates, warnings


def render_parsed(templates: list[ParsedTemplate]) -> list[str]:
    """Serialise parsed templates back to tokens, one slot per value."""
    out: list[str] = []
    for template in templates:
        out.append(SOT)
        for name, values in template.slots:
            for value in values:
                out.extend([SOSN, *name.split(), EOSN, SOE, *value.split(), EOE])
        out.append(EOT)
    return out


# ---------------------------------------------------------------------------
# Grounding parsed output back onto a document

def normalize_surface(s: str) -> str:
    return " ".join(s.split()).casefold()


def _find_span(doc: Document, value_tokens: list[str]) -> Mention | None:
    """Earliest token span whose normalized surface matches."""
    k = len(value_tokens)
    want = normalize_surface(" ".join(value_tokens))
    for start in range(len(doc.tokens) - k + 1):
        if normalize_surface(doc.surface(start, start + k)) == want:
            return Mention(start=start, end=start + k,
                           surface=doc.surface(start, start + k))
    return None


def ground(parsed: ParsedTemplate, doc: Document,
           cfg: CodecConfig | None = None) -> list[SlotFill]:
    """Turn one parsed template into predicted slot fills.

    Every value string becomes a singleton predicted entity anchored at
    the earliest matching token span (case-insensitive, whitespace
    collapsed); values absent from the document keep only their surface.
    Under the merged layout, value strings are split on the separator
    token first. Duplicate values within a slot are dropped, and empty
    values are ignored.
    """
    merged = cfg is not None and cfg.slot_layout is SlotLayout.MERGED_PER_ROLE
    separator = cfg.merged_separator if cfg is not None else ";"

    fills = []
    for name, values in parsed.slots:
        pieces: list[str] = []
        for value in values:
            if merged:
                current: list[str] = []
                for tok in value.split():
                    if tok == separator:
                        pieces.append(" ".join(current))
                        current = []
                    else:
                        current.append(tok)
                pieces.append(" ".join(current))
            else:
                pieces.append(value)
        entities = []
        seen: set[str] = set()
        for piece in pieces:
            norm = normalize_surface(piece)
            if not norm or norm in seen:
                continue
            seen.add(norm)
            mention = _find_span(doc, piece.split())
            if mention is None:
                mention = Mention(start=None, end=None, surface=piece)
            entities.append(Entity(mentions=(mention,), entity_type=name))
        fills.append(SlotFill(slot_name=name, entities=tuple(entities)))
    return fills


def decode_predictions(tokens: list[str], doc: Document, cfg: CodecConfig
                       ) -> tuple[list[list[SlotFill]], list[ParseWarning]]:
    """Full prediction pipeline: parse, resolve slot labels against the
    configured role order, and ground. Returns one slot-fill list per
    recovered template. Labels that resolve to no known role keep their
    raw form and add an UnknownSlotName warning."""
    parsed_templates, warnings = parse(tokens)
    warnings = list(warnings)
    grounded: list[list[SlotFill]] = []
    for parsed in parsed_templates:
        resolved_slots = []
        for name, values in parsed.slots:
            resolved = cfg.resolve_slot_name(name)
            if resolved is None:
                warnings.append(ParseWarning(kind=WarningKind.UNKNOWN_SLOT_NAME,
                                             position=-1))
                resolved = name
            resolved_slots.append((resolved, values))
        grounded.append(ground(ParsedTemplate(slots=tuple(resolved_slots)),
                               doc, cfg))
    return grounded, warnings

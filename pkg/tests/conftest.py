import random

import pytest
import torch

from tempgen.codec import CodecConfig
from tempgen.corpus import (Dataset, Document, Entity, Example, GoldTemplate,
                            Mention, SlotFill, TaskKind)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(2)


def make_doc(tokens, doc_id="doc-0"):
    return Document(doc_id=doc_id, tokens=tuple(tokens))


def make_entity(doc, spans, entity_type):
    """spans: list of (start, end) token spans within doc."""
    mentions = tuple(Mention(start=s, end=e, surface=doc.surface(s, e))
                     for s, e in spans)
    return Entity(mentions=mentions, entity_type=entity_type)


def ree_example(doc_id="doc-0"):
    """Small hand-built REE example with two filled roles."""
    tokens = ("the", "attack", "by", "a", "group", "of", "terrorists",
              "hit", "the", "power", "lines", "with", "a", "machinegun",
              "yesterday")
    doc = make_doc(tokens, doc_id)
    perp = make_entity(doc, [(3, 7)], "PerpInd")
    target = make_entity(doc, [(9, 11)], "Target")
    weapon = make_entity(doc, [(13, 14)], "Weapon")
    template = GoldTemplate(slots=(
        SlotFill(slot_name="PerpInd", entities=(perp,)),
        SlotFill(slot_name="Target", entities=(target,)),
        SlotFill(slot_name="Victim", entities=()),
        SlotFill(slot_name="Weapon", entities=(weapon,)),
    ))
    return Example(document=doc, templates=(template,))


ROLES = ("PerpInd", "PerpOrg", "Target", "Victim", "Weapon")


def default_codec(**kw):
    return CodecConfig(role_order=ROLES, **kw)


def random_annotation(rng: random.Random, doc_id: str, task=TaskKind.REE,
                      roles=ROLES, max_entities=3):
    """Random document + gold templates for round-trip style tests.

    Entity surfaces are drawn from a pool disjoint from filler words so
    mention spans are well-defined.
    """
    words = [f"w{idx}" for idx in range(40)]
    names = [f"n{idx}" for idx in range(60)]

    entities_plan = []
    if task is TaskKind.REE:
        for role in roles:
            for _ in range(rng.randint(0, max_entities)):
                surface = [rng.choice(names)
                           for _ in range(rng.randint(1, 3))]
                repeats = rng.randint(1, 2)
                entities_plan.append((role, surface, repeats))
        groups = [entities_plan]  # one template
    else:
        arity = task.arity
        groups = []
        for _ in range(rng.randint(1, 2)):
            chosen_types = rng.sample(list(roles), arity)
            plan = []
            for etype in chosen_types:
                surface = [rng.choice(names)
                           for _ in range(rng.randint(1, 2))]
                plan.append((etype, surface, rng.randint(1, 2)))
            groups.append(plan)

    tokens: list[str] = []
    placements = {}  # (group, idx, rep) -> (start, end)
    for g, plan in enumerate(groups):
        for i, (role, surface, repeats) in enumerate(plan):
            for rep in range(repeats):
                tokens.extend(rng.choice(words)
                              for _ in range(rng.randint(1, 4)))
                placements[(g, i, rep)] = (len(tokens),
                                           len(tokens) + len(surface))
                tokens.extend(surface)
    tokens.extend(rng.choice(words) for _ in range(rng.randint(1, 5)))
    doc = make_doc(tokens, doc_id)

    templates = []
    for g, plan in enumerate(groups):
        slots = {}
        for i, (role, surface, repeats) in enumerate(plan):
            mentions = tuple(
                Mention(start=placements[(g, i, rep)][0],
                        end=placements[(g, i, rep)][1],
                        surface=" ".join(surface))
                for rep in range(repeats))
            slots.setdefault(role, []).append(
                Entity(mentions=mentions, entity_type=role))
        if task is TaskKind.REE:
            fills = tuple(SlotFill(slot_name=r, entities=tuple(slots.get(r, ())))
                          for r in roles)
        else:
            fills = tuple(SlotFill(slot_name=role,
                                   entities=(slots[role][0],))
                          for role, _, _ in plan)
        templates.append(GoldTemplate(slots=fills))
    if task is TaskKind.REE:
        templates = templates[:1] or [GoldTemplate(slots=tuple(
            SlotFill(slot_name=r, entities=()) for r in roles))]
    return Example(document=doc, templates=tuple(templates))

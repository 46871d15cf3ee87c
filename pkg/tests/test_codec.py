import itertools
import random

import pytest

from tempgen.codec import (CodecConfig, CodecError, SlotLayout, SlotNameStyle,
                           WarningKind, decode_predictions, encode_targets,
                           ground, parse, render_parsed, render_text)
from tempgen.corpus import (Document, Entity, GoldTemplate, Mention, SlotFill,
                            TaskKind)

from conftest import ROLES, default_codec, make_doc, make_entity, ree_example, \
    random_annotation


ALL_CONFIGS = [
    CodecConfig(role_order=ROLES, slot_name_style=style, slot_layout=layout,
                mention_policy=policy, mention_seed=13)
    for style, layout, policy in itertools.product(
        SlotNameStyle, SlotLayout, ("first", "random"))
]


def slot_value_multiset(tokens):
    """Multiset of (slot name, value string) pairs from a token sequence."""
    templates, warnings = parse(tokens)
    assert warnings == []
    pairs = []
    for t in templates:
        for name, values in t.slots:
            pairs.extend((name, v) for v in values)
    return sorted(pairs)


class TestEncodeTargets:
    def test_ree_literal_rendering(self):
        example = ree_example()
        tokens = encode_targets(example.document, example.templates,
                                TaskKind.REE, default_codec())
        assert render_text(tokens) == (
            "<SOT> "
            "<SOSN> PerpInd <EOSN> <SOE> a group of terrorists <EOE> "
            "<SOSN> Target <EOSN> <SOE> power lines <EOE> "
            "<SOSN> Weapon <EOSN> <SOE> machinegun <EOE> "
            "<EOT>")

    def test_zero_templates_is_empty(self):
        doc = make_doc(["just", "words"])
        assert encode_targets(doc, [], TaskKind.BINARY_RE,
                              default_codec()) == []

    def test_numeric_style_uses_role_order_position(self):
        example = ree_example()
        cfg = default_codec(slot_name_style=SlotNameStyle.NUMERIC)
        text = render_text(encode_targets(example.document, example.templates,
                                          TaskKind.REE, cfg))
        assert "<ROLE_1>" in text      # PerpInd is first in role order
        assert "<ROLE_3>" in text      # Target is third
        assert "PerpInd" not in text
        assert cfg.slot_label("PerpInd") == "<ROLE_1>"
        assert cfg.slot_label("PerpOrg") == "<ROLE_2>"

    def test_numeric_roundtrip_recovers_semantic_names(self):
        cfg = default_codec(slot_name_style=SlotNameStyle.NUMERIC)
        for role in ROLES:
            assert cfg.resolve_slot_name(cfg.slot_label(role)) == role

    def test_merged_layout_joins_entities(self):
        doc = make_doc(["Alice", "met", "Bob", "today"])
        alice = make_entity(doc, [(0, 1)], "PerpInd")
        bob = make_entity(doc, [(2, 3)], "PerpInd")
        template = GoldTemplate(slots=(
            SlotFill(slot_name="PerpInd", entities=(alice, bob)),))
        cfg = default_codec(slot_layout=SlotLayout.MERGED_PER_ROLE)
        text = render_text(encode_targets(doc, [template], TaskKind.REE, cfg))
        assert text == ("<SOT> <SOSN> PerpInd <EOSN> "
                        "<SOE> Alice ; Bob <EOE> <EOT>")

    def test_per_entity_layout_one_slot_per_entity(self):
        doc = make_doc(["Alice", "met", "Bob", "today"])
        alice = make_entity(doc, [(0, 1)], "PerpInd")
        bob = make_entity(doc, [(2, 3)], "PerpInd")
        template = GoldTemplate(slots=(
            SlotFill(slot_name="PerpInd", entities=(alice, bob)),))
        text = render_text(encode_targets(doc, [template], TaskKind.REE,
                                          default_codec()))
        assert text == ("<SOT> <SOSN> PerpInd <EOSN> <SOE> Alice <EOE> "
                        "<SOSN> PerpInd <EOSN> <SOE> Bob <EOE> <EOT>")

    def test_unknown_role_strict_raises(self):
        doc = make_doc(["x"])
        entity = make_entity(doc, [(0, 1)], "Mystery")
        template = GoldTemplate(slots=(
            SlotFill(slot_name="Mystery", entities=(entity,)),))
        with pytest.raises(CodecError, match="Mystery"):
            encode_targets(doc, [template], TaskKind.REE, default_codec())

    def test_mention_policy_random_is_reproducible(self):
        rng = random.Random(3)
        example = random_annotation(rng, "doc-r")
        cfg = default_codec(mention_policy="random", mention_seed=5)
        first = encode_targets(example.document, example.templates,
                               TaskKind.REE, cfg)
        second = encode_targets(example.document, example.templates,
                                TaskKind.REE, cfg)
        assert first == second

    def test_all_empty_template_encodes_to_nothing(self):
        doc = make_doc(["nothing", "here"])
        template = GoldTemplate(slots=tuple(
            SlotFill(slot_name=r, entities=()) for r in ROLES))
        assert encode_targets(doc, [template], TaskKind.REE,
                              default_codec()) == []

    def test_re_templates_ordered_by_first_mention(self):
        doc = make_doc(["t1", "e1", "x", "t2", "e2", "y", "t3", "e3"])
        e1 = make_entity(doc, [(1, 2)], "Task")
        e2 = make_entity(doc, [(4, 5)], "Method")
        e3 = make_entity(doc, [(7, 8)], "Metric")
        late = GoldTemplate(slots=(
            SlotFill(slot_name="Method", entities=(e2,)),
            SlotFill(slot_name="Metric", entities=(e3,))))
        early = GoldTemplate(slots=(
            SlotFill(slot_name="Task", entities=(e1,)),
            SlotFill(slot_name="Method", entities=(e2,))))
        cfg = CodecConfig(role_order=("Task", "Method", "Metric"))
        text = render_text(encode_targets(doc, [late, early],
                                          TaskKind.BINARY_RE, cfg))
        assert text.index("e1") < text.index("e3")


class TestParse:
    def test_well_formed_roundtrip_no_warnings(self):
        example = ree_example()
        tokens = encode_targets(example.document, example.templates,
                                TaskKind.REE, default_codec())
        templates, warnings = parse(tokens)
        assert warnings == []
        assert templates[0].as_dict() == {
            "PerpInd": ("a group of terrorists",),
            "Target": ("power lines",),
            "Weapon": ("machinegun",),
        }

    def test_missing_eoe_closed_at_next_tag(self):
        tokens = "<SOT> <SOSN> Victim <EOSN> <SOE> Bob <EOT>".split()
        templates, warnings = parse(tokens)
        assert [t.as_dict() for t in templates] == [{"Victim": ("Bob",)}]
        assert [w.kind for w in warnings] == [WarningKind.UNCLOSED_TAG]

    def test_empty_sequence(self):
        assert parse([]) == ([], [])

    def test_orphan_tokens_dropped(self):
        templates, warnings = parse("stray <SOT> <SOSN> A <EOSN> <SOE> x "
                                    "<EOE> noise <EOT>".split())
        assert [t.as_dict() for t in templates] == [{"A": ("x",)}]
        assert [w.kind for w in warnings] == [WarningKind.ORPHAN_TAG,
                                              WarningKind.ORPHAN_TAG]
        assert [w.position for w in warnings] == [0, 8]

    def test_empty_slot_name(self):
        templates, warnings = parse(
            "<SOT> <SOSN> <EOSN> <SOE> x <EOE> <EOT>".split())
        assert templates == []
        assert WarningKind.EMPTY_SLOT_NAME in [w.kind for w in warnings]
        assert WarningKind.TRUNCATED_TEMPLATE in [w.kind for w in warnings]

    def test_empty_template_dropped(self):
        templates, warnings = parse("<SOT> <EOT>".split())
        assert templates == []
        assert [w.kind for w in warnings] == [WarningKind.TRUNCATED_TEMPLATE]

    def test_unclosed_everything_at_end(self):
        templates, warnings = parse("<SOT> <SOSN> A <EOSN> <SOE> x y".split())
        assert [t.as_dict() for t in templates] == [{"A": ("x y",)}]
        kinds = [w.kind for w in warnings]
        assert kinds.count(WarningKind.UNCLOSED_TAG) == 2  # value, template

    def test_missing_eot_closed_at_next_sot(self):
        templates, warnings = parse(
            "<SOT> <SOSN> A <EOSN> <SOE> x <EOE> "
            "<SOT> <SOSN> B <EOSN> <SOE> y <EOE> <EOT>".split())
        assert [t.as_dict() for t in templates] == [{"A": ("x",)},
                                                    {"B": ("y",)}]
        assert [w.kind for w in warnings] == [WarningKind.UNCLOSED_TAG]

    def test_missing_eosn_closed_at_soe(self):
        templates, warnings = parse(
            "<SOT> <SOSN> A <SOE> x <EOE> <EOT>".split())
        assert [t.as_dict() for t in templates] == [{"A": ("x",)}]
        assert [w.kind for w in warnings] == [WarningKind.UNCLOSED_TAG]

    def test_name_without_value_block_dropped(self):
        templates, warnings = parse(
            "<SOT> <SOSN> A <EOSN> <SOSN> B <EOSN> <SOE> y <EOE> <EOT>".split())
        assert [t.as_dict() for t in templates] == [{"B": ("y",)}]
        assert [w.kind for w in warnings] == [WarningKind.UNCLOSED_TAG]

    def test_parse_is_total_on_noise(self):
        rng = random.Random(0)
        alphabet = ["<SOT>", "<EOT>", "<SOSN>", "<EOSN>", "<SOE>", "<EOE>",
                    "a", "b", "c"]
        for _ in range(300):
            tokens = [rng.choice(alphabet)
                      for _ in range(rng.randint(0, 30))]
            templates, warnings = parse(tokens)  # must not raise
            for t in templates:
                for name, values in t.slots:
                    assert name

    def test_structural_idempotence_on_noise(self):
        rng = random.Random(1)
        alphabet = ["<SOT>", "<EOT>", "<SOSN>", "<EOSN>", "<SOE>", "<EOE>",
                    "a", "b"]
        for _ in range(300):
            tokens = [rng.choice(alphabet)
                      for _ in range(rng.randint(0, 25))]
            templates, _ = parse(tokens)
            rendered = render_parsed(templates)
            again, warnings = parse(rendered)
            assert warnings == []
            assert again == templates


class TestRoundTripProperty:
    @pytest.mark.parametrize("cfg", ALL_CONFIGS,
                             ids=lambda c: f"{c.slot_name_style.value}-"
                                           f"{c.slot_layout.value}-"
                                           f"{c.mention_policy}")
    def test_roundtrip_multiset(self, cfg):
        rng = random.Random(42)
        for i in range(60):
            task = [TaskKind.REE, TaskKind.BINARY_RE,
                    TaskKind.FOUR_ARY_RE][i % 3]
            example = random_annotation(rng, f"doc-{i}", task=task)
            tokens = encode_targets(example.document, example.templates,
                                    task, cfg)
            observed = slot_value_multiset(tokens)  # asserts zero warnings
            expected = sorted(_expected_pairs(example, task, cfg))
            assert observed == expected


def _expected_pairs(example, task, cfg):
    """Independent rendering of the (slot label, value) multiset."""
    rng = (random.Random(f"{cfg.mention_seed}:{example.doc_id}")
           if cfg.mention_policy == "random" else None)
    pairs = []
    for template in example.templates:
        picked = {}
        order = []
        for sf in template.slots:
            for entity in sorted(sf.entities, key=lambda e: e.first_position()):
                mentions = sorted(entity.mentions,
                                  key=lambda m: (m.start, m.end))
                picked.setdefault(sf.slot_name, []).append(
                    (entity.first_position(), mentions))
        for name in cfg.role_order:
            if name in picked:
                order.append((name, sorted(picked[name])))
        # Mention choice consumes the shared rng in encoding order:
        # (role order, entity first position).
        for name, entities in order:
            label = cfg.slot_label(name)
            values = []
            for _, mentions in entities:
                chosen = rng.choice(mentions) if rng else mentions[0]
                values.append(chosen.surface)
            if cfg.slot_layout is SlotLayout.MERGED_PER_ROLE:
                pairs.append((label, f" {cfg.merged_separator} ".join(values)))
            else:
                pairs.extend((label, v) for v in values)
    return pairs


class TestGround:
    def test_exact_match_span(self):
        doc = make_doc(["filler"] * 52 + ["machinegun", "rest"])
        parsed, _ = parse("<SOT> <SOSN> Weapon <EOSN> <SOE> machinegun <EOE> "
                          "<EOT>".split())
        fills = ground(parsed[0], doc, default_codec())
        mention = fills[0].entities[0].mentions[0]
        assert (mention.start, mention.end) == (52, 53)

    def test_case_insensitive_earliest_match(self):
        doc = make_doc(["The", "Bomb", "and", "the", "bomb"])
        parsed, _ = parse("<SOT> <SOSN> Weapon <EOSN> <SOE> the bomb <EOE> "
                          "<EOT>".split())
        fills = ground(parsed[0], doc, default_codec())
        mention = fills[0].entities[0].mentions[0]
        assert (mention.start, mention.end) == (0, 2)

    def test_absent_value_kept_spanless(self):
        doc = make_doc(["nothing", "relevant"])
        parsed, _ = parse("<SOT> <SOSN> Victim <EOSN> <SOE> martians <EOE> "
                          "<EOT>".split())
        fills = ground(parsed[0], doc, default_codec())
        mention = fills[0].entities[0].mentions[0]
        assert mention.start is None and mention.surface == "martians"

    def test_duplicates_deduplicated(self):
        doc = make_doc(["bob", "saw", "bob"])
        parsed, _ = parse(
            "<SOT> <SOSN> Victim <EOSN> <SOE> bob <EOE> "
            "<SOSN> Victim <EOSN> <SOE> Bob <EOE> <EOT>".split())
        fills = ground(parsed[0], doc, default_codec())
        assert len(fills) == 1
        assert len(fills[0].entities) == 1

    def test_merged_values_split_on_separator(self):
        doc = make_doc(["Alice", "met", "Bob"])
        cfg = default_codec(slot_layout=SlotLayout.MERGED_PER_ROLE)
        parsed, _ = parse("<SOT> <SOSN> PerpInd <EOSN> <SOE> Alice ; Bob "
                          "<EOE> <EOT>".split())
        fills = ground(parsed[0], doc, cfg)
        surfaces = [e.mentions[0].surface for e in fills[0].entities]
        assert surfaces == ["Alice", "Bob"]

    def test_decode_predictions_resolves_numeric_labels(self):
        doc = make_doc(["Alice", "met", "Bob"])
        cfg = default_codec(slot_name_style=SlotNameStyle.NUMERIC)
        grounded, warnings = decode_predictions(
            "<SOT> <SOSN> <ROLE_1> <EOSN> <SOE> Alice <EOE> <EOT>".split(),
            doc, cfg)
        assert grounded[0][0].slot_name == "PerpInd"
        assert warnings == []

    def test_decode_predictions_unknown_label_warns(self):
        doc = make_doc(["Alice"])
        grounded, warnings = decode_predictions(
            "<SOT> <SOSN> Nonsense <EOSN> <SOE> Alice <EOE> <EOT>".split(),
            doc, default_codec())
        assert [w.kind for w in warnings] == [WarningKind.UNKNOWN_SLOT_NAME]
        assert grounded[0][0].slot_name == "Nonsense"

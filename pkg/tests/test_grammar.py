import random
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treesynth.grammar import (
    END_TOKEN,
    AmbiguityError,
    GrammarError,
    ParseError,
    SampleError,
    constrained_sample,
    enumerate_trees,
    legal_continuations,
    load_grammar,
    parse,
    serialize,
    sigma,
    text_form,
    tokenize,
)

from conftest import GRAMMAR_DIR, sample_programs

TRACE_EXPR = "(+ (+ (+ (Circle A D 4) (Quad F E 4 6 angle_180)) (Quad 3 E C 2 angle_270)) (Circle C 2 1))"


def test_load_csg2d(csg2d):
    g = csg2d.grammar
    assert set(g.rules) == {"s", "binop", "op", "number", "angle", "circle", "quad"}
    assert g.primitive_heads == {"Circle", "Quad"}
    assert g.start_symbol == "s"
    # every terminal of every alternative is in the vocabulary, no dups
    assert len(set(g.vocabulary)) == len(g.vocabulary)
    assert {"(", ")", "+", "-", "Circle", "Quad"} <= set(g.vocabulary)
    assert {"0", "9", "A", "F"} <= set(g.vocabulary)


def test_rainbow_is_tinysvg_without_move(tinysvg, rainbow):
    assert "move" in tinysvg.grammar.rules
    assert "move" not in rainbow.grammar.rules
    assert "Move" in tinysvg.grammar.vocabulary
    assert "Move" not in rainbow.grammar.vocabulary
    assert rainbow.grammar.primitive_heads == {"Rectangle", "Ellipse"}


def test_root_grammar_files_match_package_data():
    for name in ("csg2d", "tinysvg", "rainbow"):
        root_text = (GRAMMAR_DIR / f"{name}.grammar").read_text()
        from importlib import resources

        pkg_text = resources.files("treesynth").joinpath(f"grammars/{name}.grammar").read_text()
        assert root_text == pkg_text, f"{name}.grammar drifted between grammars/ and package data"


def test_undefined_rule_reference_reports_name():
    spec = "%start s\n%primitives Circle\ns: shape | circle\ncircle: (Circle r=number)\nnumber: [0 to 3]\n"
    with pytest.raises(GrammarError, match="shape"):
        load_grammar(spec)


def test_duplicate_rule_rejected():
    with pytest.raises(GrammarError, match="duplicate"):
        load_grammar("a: x\na: y\n")


def test_empty_alternative_rejected():
    with pytest.raises(GrammarError, match="empty alternative"):
        load_grammar("a: x | \n")


def test_parse_trace_expression(csg2d):
    t = parse(csg2d.grammar, "(+ (Quad 1 0 A 3 angle_135) (Circle 8 2 1))")
    assert t.head == "binop"
    assert sigma(t) == 2
    sub = [c for c in t.children if getattr(c, "head", None) in ("circle", "quad", "binop")]
    assert [c.sigma for c in sub] == [1, 1]


def test_sigma_counts(csg2d):
    g = csg2d.grammar
    assert sigma(parse(g, "(Circle 8 2 1)")) == 1
    assert sigma(parse(g, TRACE_EXPR)) == 4


def test_parse_arity_error_position(csg2d):
    with pytest.raises(ParseError) as exc:
        parse(csg2d.grammar, ["(", "+", ")"])
    assert exc.value.index == 2


def test_parse_unknown_token(csg2d):
    with pytest.raises(ParseError):
        parse(csg2d.grammar, "(Circle 1 2 Z)")


def test_round_trip_small(csg2d):
    for text in ["(Circle 0 0 0)", "(- (Quad 1 2 3 4 angle_0) (Circle F F F))"]:
        t = parse(csg2d.grammar, text)
        assert text_form(t) == text
        assert parse(csg2d.grammar, serialize(t).tokens) == t


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_round_trip_random_csg2d(csg2d, seed):
    g = csg2d.grammar
    t = constrained_sample(g, "s", 0, 8, random.Random(seed))
    assert parse(g, serialize(t).tokens) == t


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_round_trip_random_tinysvg(tinysvg, seed):
    g = tinysvg.grammar
    t = constrained_sample(g, "s", 0, 8, random.Random(seed))
    assert parse(g, serialize(t).tokens) == t


def test_serialize_spans_nest(csg2d):
    t = parse(csg2d.grammar, TRACE_EXPR)
    seq = serialize(t)
    spans = seq.node_spans
    for path, (a, b) in spans.items():
        assert 0 <= a < b <= len(seq.tokens)
        if path:
            parent = spans[path[:-1]]
            assert parent[0] <= a and b <= parent[1]
            assert (a, b) != parent


def test_serialize_injective(csg2d):
    trees = sample_programs(csg2d, 1000, seed=4)
    token_lists = {serialize(t).tokens for t in trees}
    distinct = {t for t in trees}
    assert len(token_lists) == len(distinct)


def test_tokenize_both_forms():
    assert tokenize("(+ (Circle 1 2 3) x)") == tokenize("( + ( Circle 1 2 3 ) x )")


def test_constrained_sample_bounds(csg2d):
    g = csg2d.grammar
    rng = random.Random(0)
    for _ in range(2000):
        t = constrained_sample(g, "s", 0, 2, rng)
        assert 1 <= t.sigma <= 2
    with pytest.raises(SampleError):
        constrained_sample(g, "s", 0, 0, rng)
    with pytest.raises(SampleError):
        constrained_sample(g, "circle", 1, 3, rng)  # circles have sigma exactly 1


def test_constrained_sample_zero_sigma_rules(csg2d):
    g = csg2d.grammar
    rng = random.Random(1)
    t = constrained_sample(g, "angle", -1, 2, rng)
    assert t.head == "angle" and t.sigma == 0


def test_constrained_sample_all_alternatives_appear(csg2d):
    g = csg2d.grammar
    rng = random.Random(2)
    heads = set()
    for _ in range(1000):
        heads.add(constrained_sample(g, "s", 0, 8, rng).head)
    assert heads == {"binop", "circle", "quad"}


def test_constrained_sample_deterministic(csg2d):
    g = csg2d.grammar
    a = [text_form(constrained_sample(g, "s", 0, 8, random.Random(99))) for _ in range(20)]
    b = [text_form(constrained_sample(g, "s", 0, 8, random.Random(99))) for _ in range(20)]
    assert a == b


def test_legal_continuations_exact_small_rules(csg2d, tinysvg):
    # brute-force oracle: enumerate all derivations, compare prefix sets
    for env, rules in ((csg2d, ["op", "number", "angle"]), (tinysvg, ["color", "direction", "sign"])):
        g = env.grammar
        for rule in rules:
            seqs = [serialize(t).tokens for t in enumerate_trees(g, rule)]
            prefixes = {}
            for s in seqs:
                for i in range(len(s) + 1):
                    nxt = prefixes.setdefault(s[:i], set())
                    nxt.add(s[i] if i < len(s) else END_TOKEN)
            for prefix, expected in prefixes.items():
                assert legal_continuations(g, rule, list(prefix)) == expected


def test_legal_continuations_examples(csg2d):
    g = csg2d.grammar
    assert legal_continuations(g, "op", []) == {"+", "-"}
    assert legal_continuations(g, "circle", ["(", "Circle"]) == set("0123456789ABCDEF")
    assert legal_continuations(g, "s", tokenize("(Circle 1 2 3)")) == {END_TOKEN}


def test_legal_continuations_bad_prefix(csg2d):
    with pytest.raises(ParseError):
        legal_continuations(csg2d.grammar, "circle", ["(", "Quad"])


def test_ambiguous_grammar_detected():
    spec = "%start s\ns: a | b\na: x y\nb: x y\n"
    g = load_grammar(spec)
    with pytest.raises(AmbiguityError):
        parse(g, ["x", "y"])

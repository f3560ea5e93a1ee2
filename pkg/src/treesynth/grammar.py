"""Grammar loading, tree representation, parsing, printing, and constrained sampling.

The grammar file format is one rule per line (``name: alt1 | alt2``) with
bare terminal tokens, ``//`` comments, ``field=symbol`` annotations (the
``field=`` part is documentation and is stripped), integer ranges such as
``[0 to 15]`` that expand to single-character hex tokens, and two directive
lines: ``%start <rule>`` and ``%primitives <tok> ...``.

Trees are immutable.  Every grammar choice point becomes an interior node;
literal tokens inside a production become leaves.  Alternatives that consist
of a single nonterminal (e.g. ``s: binop``) are collapsed: the node's
``head`` is the rule whose concrete production was expanded (``binop``)
while its ``context`` records the rule it can be regenerated from (``s``).
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field

NodePath = tuple[int, ...]

END_TOKEN = "<END>"

_HEX = "0123456789ABCDEF"

_UNBOUNDED = 1 << 30


class GrammarError(Exception):
    """Malformed grammar spec or grammar-level contract violation."""


class ParseError(Exception):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class AmbiguityError(ParseError):
    pass


class SampleError(Exception):
    """Unsatisfiable sampling constraint."""


@dataclass(frozen=True)
class Sym:
    name: str
    terminal: bool


@dataclass(frozen=True)
class Production:
    """A concrete (non-unit) alternative, owned by the rule it expands."""

    rule: str
    alt_index: int
    symbols: tuple[Sym, ...]


class Leaf:
    """A terminal occurrence inside a production."""

    __slots__ = ("token", "sigma", "_hash")

    size = 1
    children: tuple = ()

    def __init__(self, token: str, sigma: int):
        self.token = token
        self.sigma = sigma
        self._hash = hash(("leaf", token))

    @property
    def head(self) -> str:
        return self.token

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return isinstance(other, Leaf) and other.token == self.token

    def __repr__(self):
        return f"Leaf({self.token!r})"


class Node:
    """An interior node: one grammar choice point and its expansion."""

    __slots__ = ("head", "context", "alt_index", "children", "sigma", "size", "_hash")

    def __init__(self, head: str, context: str, alt_index: int, children: tuple):
        self.head = head
        self.context = context
        self.alt_index = alt_index
        self.children = children
        self.sigma = sum(c.sigma for c in children)
        self.size = 1 + sum(c.size for c in children)
        self._hash = hash((head, context, alt_index, tuple(c._hash for c in children)))

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, Node) or self._hash != other._hash:
            return False
        return (
            self.head == other.head
            and self.context == other.context
            and self.alt_index == other.alt_index
            and self.children == other.children
        )

    def __repr__(self):
        return f"Node({self.head}, sigma={self.sigma})"


SyntaxTree = Node


def shallow_eq(a, b) -> bool:
    """Same production (or same leaf token); children may still differ."""
    if isinstance(a, Leaf) or isinstance(b, Leaf):
        return isinstance(a, Leaf) and isinstance(b, Leaf) and a.token == b.token
    return a.head == b.head and a.alt_index == b.alt_index


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[str, ...]
    node_spans: dict[NodePath, tuple[int, int]] = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.tokens)


class Grammar:
    def __init__(
        self,
        rules: dict[str, list[tuple[Sym, ...]]],
        start_symbol: str,
        primitive_heads: frozenset[str],
        vocabulary: tuple[str, ...],
        name: str = "",
    ):
        self.rules = rules
        self.start_symbol = start_symbol
        self.primitive_heads = primitive_heads
        self.vocabulary = vocabulary
        self.name = name
        self._vocab_set = set(vocabulary)
        # Concrete productions reachable from each rule through unit chains.
        self.productions: dict[str, list[Production]] = {}
        for rule in rules:
            self.productions[rule] = self._resolve_productions(rule)
        self._compute_sigma_bounds()
        self._compute_costs()
        self._compute_derivation_counts()
        self._compute_first_sets()

    # -- construction-time tables ------------------------------------------------

    def _resolve_productions(self, rule: str, _seen: frozenset[str] | None = None) -> list[Production]:
        seen = _seen or frozenset()
        if rule in seen:
            raise GrammarError(f"unit-production cycle through rule '{rule}'")
        out: list[Production] = []
        for i, symbols in enumerate(self.rules[rule]):
            if len(symbols) == 1 and not symbols[0].terminal:
                out.extend(self._resolve_productions(symbols[0].name, seen | {rule}))
            else:
                out.append(Production(rule, i, symbols))
        return out

    def _compute_sigma_bounds(self):
        self.min_sigma: dict[str, int] = {r: _UNBOUNDED for r in self.rules}
        self.max_sigma: dict[str, int] = {r: 0 for r in self.rules}
        changed = True
        while changed:
            changed = False
            for rule in self.rules:
                lo = min(
                    (self._prod_min_sigma(p) for p in self.productions[rule]),
                    default=_UNBOUNDED,
                )
                hi = max(
                    (self._prod_max_sigma(p) for p in self.productions[rule]),
                    default=0,
                )
                if hi > 10000:  # recursive growth: saturate to unbounded
                    hi = _UNBOUNDED
                if lo != self.min_sigma[rule] or hi != self.max_sigma[rule]:
                    self.min_sigma[rule], self.max_sigma[rule] = lo, hi
                    changed = True
        for rule, lo in self.min_sigma.items():
            if lo >= _UNBOUNDED:
                raise GrammarError(f"rule '{rule}' derives no finite tree")

    def _sym_sigma(self, sym: Sym) -> tuple[int, int]:
        if sym.terminal:
            s = 1 if sym.name in self.primitive_heads else 0
            return s, s
        return self.min_sigma[sym.name], self.max_sigma[sym.name]

    def _prod_min_sigma(self, p: Production) -> int:
        return min(sum(self._sym_sigma(s)[0] for s in p.symbols), _UNBOUNDED)

    def _prod_max_sigma(self, p: Production) -> int:
        return min(sum(self._sym_sigma(s)[1] for s in p.symbols), _UNBOUNDED)

    def _compute_costs(self):
        # Minimum derivation depth per rule, used to force termination of
        # deep samples (cf. grammar-fuzzing cost tables).
        self.cost: dict[str, int] = {r: _UNBOUNDED for r in self.rules}
        changed = True
        while changed:
            changed = False
            for rule in self.rules:
                c = min(
                    (self._prod_cost(p) for p in self.productions[rule]),
                    default=_UNBOUNDED,
                )
                if c < self.cost[rule]:
                    self.cost[rule] = c
                    changed = True

    def _prod_cost(self, p: Production) -> int:
        worst = 0
        for s in p.symbols:
            if not s.terminal:
                worst = max(worst, self.cost[s.name])
        return min(worst + 1, _UNBOUNDED)

    def _compute_derivation_counts(self):
        # Number of distinct derivations per rule, saturated at 2: rules
        # with >= 2 derivable values are valid mutation sites.
        self.derivations: dict[str, int] = {r: 0 for r in self.rules}
        changed = True
        while changed:
            changed = False
            for rule in self.rules:
                total = 0
                for p in self.productions[rule]:
                    ways = 1
                    for s in p.symbols:
                        if not s.terminal:
                            ways *= self.derivations[s.name]
                    total += ways
                total = min(total, 2)
                if total != self.derivations[rule]:
                    self.derivations[rule] = total
                    changed = True
        self.mutable_rules = frozenset(r for r, n in self.derivations.items() if n >= 2)

    def _compute_first_sets(self):
        first: dict[str, set[str]] = {r: set() for r in self.rules}
        changed = True
        while changed:
            changed = False
            for rule in self.rules:
                acc = set()
                for p in self.productions[rule]:
                    lead = p.symbols[0]
                    acc |= {lead.name} if lead.terminal else first[lead.name]
                if acc != first[rule]:
                    first[rule] = acc
                    changed = True
        self.first = {r: frozenset(v) for r, v in first.items()}
        self.prod_first: dict[tuple[str, int], frozenset[str]] = {}
        for rule in self.rules:
            for p in self.productions[rule]:
                lead = p.symbols[0]
                f = frozenset([lead.name]) if lead.terminal else self.first[lead.name]
                self.prod_first[(p.rule, p.alt_index)] = f

    # -- tree helpers --------------------------------------------------------------

    def leaf(self, token: str) -> Leaf:
        return Leaf(token, 1 if token in self.primitive_heads else 0)

    def node(self, production: Production, context: str, children: tuple) -> Node:
        return Node(production.rule, context, production.alt_index, children)

    def node_production(self, node: Node) -> Production:
        return Production(node.head, node.alt_index, self.rules[node.head][node.alt_index])

    def node_at(self, tree: Node, path: NodePath):
        cur = tree
        for i in path:
            cur = cur.children[i]
        return cur


def sigma(tree) -> int:
    """Primitive count of a (sub)tree."""
    return tree.sigma


# -- grammar spec loading -----------------------------------------------------------


_RANGE_RE = re.compile(r"^\[\s*(\d+)\s*(?:to|-)\s*(\d+)\s*\]$")


def load_grammar(spec_text: str, name: str = "") -> Grammar:
    raw_rules: dict[str, list[list[str]]] = {}
    rule_lines: dict[str, int] = {}
    start = None
    primitives: list[str] = []
    for lineno, raw in enumerate(spec_text.splitlines(), start=1):
        line = raw.split("//", 1)[0].strip()
        if not line:
            continue
        if line.startswith("%"):
            parts = line[1:].split()
            if not parts:
                raise GrammarError(f"line {lineno}: empty directive")
            if parts[0] == "start":
                if len(parts) != 2:
                    raise GrammarError(f"line {lineno}: %start takes one rule name")
                start = parts[1]
            elif parts[0] == "primitives":
                primitives.extend(parts[1:])
            else:
                raise GrammarError(f"line {lineno}: unknown directive '%{parts[0]}'")
            continue
        if ":" not in line:
            raise GrammarError(f"line {lineno}: expected 'name: alternatives'")
        rule_name, body = line.split(":", 1)
        rule_name = rule_name.strip()
        if not rule_name or not rule_name.replace("_", "").isalnum():
            raise GrammarError(f"line {lineno}: bad rule name '{rule_name}'")
        if rule_name in raw_rules:
            raise GrammarError(f"line {lineno}: duplicate rule '{rule_name}'")
        alternatives = []
        for alt_text in body.split("|"):
            alt_text = alt_text.strip()
            m = _RANGE_RE.match(alt_text)
            if m:
                lo, hi = int(m.group(1)), int(m.group(2))
                if not 0 <= lo <= hi <= 15:
                    raise GrammarError(f"line {lineno}: range [{lo} .. {hi}] outside single-token alphabet 0..15")
                alternatives.extend([[_HEX[v]] for v in range(lo, hi + 1)])
                continue
            toks = _split_symbols(alt_text)
            if not toks:
                raise GrammarError(f"line {lineno}: empty alternative in rule '{rule_name}'")
            alternatives.append(toks)
        raw_rules[rule_name] = alternatives
        rule_lines[rule_name] = lineno
    if not raw_rules:
        raise GrammarError("no rules defined")
    start = start or next(iter(raw_rules))
    if start not in raw_rules:
        raise GrammarError(f"%start references undefined rule '{start}'")

    rules: dict[str, list[tuple[Sym, ...]]] = {}
    vocab: list[str] = []
    seen_vocab: set[str] = set()
    for rule_name, alts in raw_rules.items():
        resolved = []
        for alt in alts:
            syms = []
            for tok in alt:
                if tok in raw_rules:
                    syms.append(Sym(tok, terminal=False))
                else:
                    syms.append(Sym(tok, terminal=True))
                    if tok not in seen_vocab:
                        seen_vocab.add(tok)
                        vocab.append(tok)
            resolved.append(tuple(syms))
        rules[rule_name] = resolved

    # Undefined-rule detection.  Bare words are terminals unless defined as
    # rules, so a dangling reference is only distinguishable by convention:
    # a lowercase word (len >= 2) is treated as an intended rule reference
    # when it appears inside a multi-symbol alternative, or as a lone
    # alternative in a rule whose other alternatives reference defined
    # rules.  Value alphabets like `color: red | green | ...` stay terminal.
    for rule_name, alts in raw_rules.items():
        has_ref = any(len(a) == 1 and a[0] in raw_rules for a in alts)
        for alt in alts:
            for tok in alt:
                if tok in raw_rules:
                    continue
                wordlike = tok.isalpha() and tok.islower() and len(tok) >= 2
                if wordlike and (len(alt) > 1 or has_ref):
                    raise GrammarError(
                        f"line {rule_lines[rule_name]}: rule '{rule_name}' references undefined rule '{tok}'"
                    )

    for p in primitives:
        if p not in seen_vocab:
            raise GrammarError(f"%primitives token '{p}' never produced by the grammar")
    return Grammar(rules, start, frozenset(primitives), tuple(vocab), name=name)


def _split_symbols(alt_text: str) -> list[str]:
    toks: list[str] = []
    for part in alt_text.split():
        while part.startswith("("):
            toks.append("(")
            part = part[1:]
        trailing = 0
        while part.endswith(")"):
            trailing += 1
            part = part[:-1]
        if part:
            if "=" in part:
                part = part.split("=", 1)[1]
            toks.append(part)
        toks.extend([")"] * trailing)
    return toks


# -- tokenizing / parsing / printing ----------------------------------------------


def tokenize(text: str) -> list[str]:
    """Split program text into tokens; parens bind tight or spaced."""
    out: list[str] = []
    for part in text.split():
        while part.startswith("("):
            out.append("(")
            part = part[1:]
        trailing = 0
        while part.endswith(")"):
            trailing += 1
            part = part[:-1]
        if part:
            out.append(part)
        out.extend([")"] * trailing)
    return out


class _Parser:
    def __init__(self, grammar: Grammar, tokens: list[str]):
        self.g = grammar
        self.toks = tokens
        self.max_fail = 0

    def derive_rule(self, rule: str, pos: int, context: str):
        toks = self.toks
        for prod in self.g.productions[rule]:
            if pos < len(toks) and toks[pos] not in self.g.prod_first[(prod.rule, prod.alt_index)]:
                self.max_fail = max(self.max_fail, pos)
                continue
            yield from self.derive_symbols(prod, 0, pos, [], context)

    def derive_symbols(self, prod: Production, i: int, pos: int, acc: list, context: str):
        if i == len(prod.symbols):
            yield self.g.node(prod, context, tuple(acc)), pos
            return
        sym = prod.symbols[i]
        if sym.terminal:
            if pos < len(self.toks) and self.toks[pos] == sym.name:
                acc.append(self.g.leaf(sym.name))
                yield from self.derive_symbols(prod, i + 1, pos + 1, acc, context)
                acc.pop()
            else:
                self.max_fail = max(self.max_fail, pos)
            return
        for child, newpos in self.derive_rule(sym.name, pos, sym.name):
            acc.append(child)
            yield from self.derive_symbols(prod, i + 1, newpos, acc, context)
            acc.pop()


def parse(grammar: Grammar, tokens, context: str | None = None) -> Node:
    """Parse tokens into a tree deriving from `context` (default: start symbol)."""
    if isinstance(tokens, TokenSeq):
        tokens = list(tokens.tokens)
    elif isinstance(tokens, str):
        tokens = tokenize(tokens)
    context = context or grammar.start_symbol
    if context not in grammar.rules:
        raise GrammarError(f"unknown rule '{context}'")
    for t in tokens:
        if t not in grammar._vocab_set:
            raise ParseError(f"unknown token {t!r}", tokens.index(t))
    p = _Parser(grammar, tokens)
    results = []
    for node, pos in p.derive_rule(context, 0, context):
        if pos == len(tokens):
            results.append(node)
            if len(results) > 1:
                raise AmbiguityError("ambiguous derivation", 0)
        else:
            p.max_fail = max(p.max_fail, pos)
    if not results:
        raise ParseError(f"syntax error at token index {p.max_fail}", p.max_fail)
    return results[0]


def serialize(tree) -> TokenSeq:
    """Token sequence of a tree plus the token span of every interior node."""
    tokens: list[str] = []
    spans: dict[NodePath, tuple[int, int]] = {}

    def walk(node, path: NodePath):
        if isinstance(node, Leaf):
            tokens.append(node.token)
            return
        start = len(tokens)
        for i, c in enumerate(node.children):
            walk(c, path + (i,))
        spans[path] = (start, len(tokens))

    walk(tree, ())
    return TokenSeq(tuple(tokens), spans)


def text_form(tree) -> str:
    """Compact printed form with tight parens: ``(+ (Circle 1 2 3) ...)``."""
    return pretty(tree)[0]


def pretty(tree) -> tuple[str, dict[NodePath, tuple[int, int]]]:
    """Printed form plus character spans of interior nodes (for trace underlining)."""
    out: list[str] = []
    spans: dict[NodePath, tuple[int, int]] = {}

    def walk(node, path: NodePath):
        if isinstance(node, Leaf):
            if node.token == "(":
                out.append("(")
            elif node.token == ")":
                while out and out[-1] == " ":
                    out.pop()
                out.append(")")
                out.append(" ")
            else:
                out.append(node.token)
                out.append(" ")
            return
        start = sum(len(s) for s in out)
        for i, c in enumerate(node.children):
            walk(c, path + (i,))
        end = sum(len(s) for s in out)
        if out and out[-1] == " ":
            end -= 1
        spans[path] = (start, end)

    walk(tree, ())
    textstr = "".join(out).rstrip()
    return textstr, spans


# -- constrained sampling ------------------------------------------------------------


_SOFT_DEPTH = 64


def constrained_sample(
    grammar: Grammar,
    rule: str,
    sigma_min: int,
    sigma_max: int,
    rng: random.Random,
    force_production: Production | None = None,
) -> Node:
    """Sample a tree from `rule` with sigma_min < sigma(t) <= sigma_max.

    The target size is drawn uniformly from the achievable sizes in the
    interval, then a tree of exactly that size is built, so sizes come out
    uniform rather than skewed toward minimal derivations.  Rules that
    derive no primitives use the (-1, sigma_max] convention.  Deterministic
    given the rng state; raises SampleError when the constraint cannot be
    met rather than looping.
    """
    if rule not in grammar.rules:
        raise GrammarError(f"unknown rule '{rule}'")
    if sigma_min < -1 or sigma_min >= sigma_max:
        raise SampleError(f"bad sigma bounds ({sigma_min}, {sigma_max}]")
    lo, hi = sigma_min + 1, sigma_max
    sizes = _exact_sizes(grammar, rule, lo, hi, force_production)
    if not sizes:
        raise SampleError(
            f"rule '{rule}' cannot derive a tree with sigma in ({sigma_min}, {sigma_max}]"
        )
    target = sizes[rng.randrange(len(sizes))] if len(sizes) > 1 else sizes[0]
    return _sample_node(grammar, rule, rule, target, target, rng, 0, force_production)


def _exact_sizes(
    g: Grammar, rule: str, lo: int, hi: int, force_production: Production | None = None
) -> list[int]:
    """Sizes in [lo, hi] the rule (or one forced production) derives exactly."""
    key = (rule, hi, None if force_production is None else (force_production.rule, force_production.alt_index))
    cache = g.__dict__.setdefault("_exact_size_cache", {})
    achievable = cache.get(key)
    if achievable is None:
        achievable = set()
        prods = [force_production] if force_production is not None else g.productions[rule]
        for p in prods:
            ranges = []
            for s in p.symbols:
                smin, smax = g._sym_sigma(s)
                ranges.append((smin, min(smax, hi)))
            ways = _allocation_ways(ranges, hi)
            achievable.update(t for t in range(hi + 1) if ways[0][t] > 0)
        cache[key] = achievable
    return [n for n in sorted(achievable) if lo <= n <= hi]


def _sample_node(
    g: Grammar,
    rule: str,
    context: str,
    lo: int,
    hi: int,
    rng: random.Random,
    depth: int,
    force_production: Production | None = None,
) -> Node:
    if force_production is not None:
        feasible = [force_production]
    else:
        feasible = [
            p
            for p in g.productions[rule]
            if g._prod_min_sigma(p) <= hi and g._prod_max_sigma(p) >= lo
        ]
        if not feasible:
            raise SampleError(f"no feasible alternative of '{rule}' for sigma in [{lo}, {hi}]")
        if depth > _SOFT_DEPTH:
            best = min(g._prod_cost(p) for p in feasible)
            feasible = [p for p in feasible if g._prod_cost(p) == best]
    prod = feasible[rng.randrange(len(feasible))] if len(feasible) > 1 else feasible[0]
    ranges = []
    for s in prod.symbols:
        smin, smax = g._sym_sigma(s)
        ranges.append((smin, min(smax, hi)))
    alloc = _sample_allocation(ranges, max(lo, sum(r[0] for r in ranges)), hi, rng)
    children = []
    for s, amount in zip(prod.symbols, alloc):
        if s.terminal:
            children.append(g.leaf(s.name))
        else:
            children.append(_sample_node(g, s.name, s.name, amount, amount, rng, depth + 1))
    return g.node(prod, context, tuple(children))


def _allocation_ways(ranges: list[tuple[int, int]], maxtotal: int) -> list[list[int]]:
    """ways[i][t]: number of allocations of slots i.. summing to exactly t.

    Per-slot ranges are treated as dense; grammars whose achievable size
    sets have gaps would overcount, but every shipped rule achieves a full
    interval of sizes.
    """
    n = len(ranges)
    ways = [[0] * (maxtotal + 1) for _ in range(n + 1)]
    ways[n][0] = 1
    for i in range(n - 1, -1, -1):
        smin, smax = ranges[i]
        for t in range(maxtotal + 1):
            acc = 0
            for v in range(smin, min(smax, t) + 1):
                acc += ways[i + 1][t - v]
            ways[i][t] = acc
    return ways


def _sample_allocation(
    ranges: list[tuple[int, int]], lo: int, hi: int, rng: random.Random
) -> list[int]:
    """Uniform sample over integer tuples within per-slot ranges summing into [lo, hi]."""
    n = len(ranges)
    ways = _allocation_ways(ranges, hi)
    totals = [t for t in range(lo, hi + 1) if ways[0][t] > 0]
    if not totals:
        raise SampleError(f"no feasible allocation for total in [{lo}, {hi}]")
    weights = [ways[0][t] for t in totals]
    target = _weighted_choice(totals, weights, rng)
    out = []
    remaining = target
    for i in range(n):
        smin, smax = ranges[i]
        vals = [v for v in range(smin, min(smax, remaining) + 1) if ways[i + 1][remaining - v] > 0]
        w = [ways[i + 1][remaining - v] for v in vals]
        v = _weighted_choice(vals, w, rng)
        out.append(v)
        remaining -= v
    return out


def _weighted_choice(values, weights, rng: random.Random):
    total = sum(weights)
    r = rng.randrange(total)
    acc = 0
    for v, w in zip(values, weights):
        acc += w
        if r < acc:
            return v
    return values[-1]


def sample_unconstrained(
    grammar: Grammar, rule: str, rng: random.Random, _context: str | None = None, _depth: int = 0
) -> Node:
    """Plain grammar expansion: productions uniform at every choice point,
    falling back to cheapest productions past a depth limit."""
    prods = grammar.productions[rule]
    if _depth > _SOFT_DEPTH:
        best = min(grammar._prod_cost(p) for p in prods)
        prods = [p for p in prods if grammar._prod_cost(p) == best]
    prod = prods[rng.randrange(len(prods))] if len(prods) > 1 else prods[0]
    children = []
    for s in prod.symbols:
        if s.terminal:
            children.append(grammar.leaf(s.name))
        else:
            children.append(sample_unconstrained(grammar, s.name, rng, s.name, _depth + 1))
    return grammar.node(prod, _context or rule, tuple(children))


# -- legal continuations -------------------------------------------------------------


def legal_continuations(grammar: Grammar, rule: str, partial) -> set[str]:
    """Exact next-token set for a partial derivation from `rule`.

    Includes END_TOKEN iff the partial form is already a complete derivation.
    Raises ParseError when the partial form cannot be extended at all.
    """
    if isinstance(partial, TokenSeq):
        partial = list(partial.tokens)
    if rule not in grammar.rules:
        raise GrammarError(f"unknown rule '{rule}'")
    stacks: set[tuple] = {(Sym(rule, False),)}
    for idx, tok in enumerate(partial):
        stacks = _expand_tops(grammar, stacks)
        advanced = {
            st[1:] for st in stacks if st and st[0].terminal and st[0].name == tok
        }
        if not advanced:
            raise ParseError(f"token {tok!r} at index {idx} is not a valid continuation", idx)
        stacks = advanced
    stacks = _expand_tops(grammar, stacks)
    result: set[str] = set()
    for st in stacks:
        if not st:
            result.add(END_TOKEN)
        elif st[0].terminal:
            result.add(st[0].name)
    return result


def _expand_tops(grammar: Grammar, stacks: set[tuple]) -> set[tuple]:
    out: set[tuple] = set()
    work = list(stacks)
    seen = set(stacks)
    while work:
        st = work.pop()
        if not st or st[0].terminal:
            out.add(st)
            continue
        for prod in grammar.productions[st[0].name]:
            nxt = prod.symbols + st[1:]
            if nxt not in seen:
                seen.add(nxt)
                work.append(nxt)
    return out


# -- exhaustive enumeration (small finite rules) ---------------------------------------


def enumerate_trees(grammar: Grammar, rule: str, max_sigma: int | None = None, limit: int = 100000):
    """All derivations of a rule in deterministic grammar order.

    For recursive rules a `max_sigma` budget is mandatory (it bounds the
    recursion); the enumeration aborts past `limit` trees either way.
    """
    if max_sigma is None and grammar.max_sigma[rule] >= _UNBOUNDED:
        raise SampleError(f"rule '{rule}' is infinite; enumeration needs max_sigma")
    count = [0]

    def from_rule(r: str, context: str, budget: int | None):
        for prod in grammar.productions[r]:
            if budget is not None and grammar._prod_min_sigma(prod) > budget:
                continue
            yield from from_symbols(prod, 0, (), context, budget)

    def from_symbols(prod: Production, i: int, acc: tuple, context: str, budget: int | None):
        if i == len(prod.symbols):
            node = grammar.node(prod, context, acc)
            count[0] += 1
            if count[0] > limit:
                raise SampleError(f"enumeration of '{prod.rule}' exceeds {limit} trees")
            yield node
            return
        sym = prod.symbols[i]
        rest_min = sum(grammar._sym_sigma(s)[0] for s in prod.symbols[i + 1 :])
        if sym.terminal:
            leaf = grammar.leaf(sym.name)
            if budget is not None and leaf.sigma + rest_min > budget:
                return
            nb = None if budget is None else budget - leaf.sigma
            yield from from_symbols(prod, i + 1, acc + (leaf,), context, nb)
        else:
            sub_budget = None if budget is None else budget - rest_min
            for sub in from_rule(sym.name, sym.name, sub_budget):
                nb = None if budget is None else budget - sub.sigma
                if nb is not None and nb < rest_min:
                    continue
                yield from from_symbols(prod, i + 1, acc + (sub,), context, nb)

    yield from from_rule(rule, rule, max_sigma)

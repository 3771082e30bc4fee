"""Hypothesis expression language: parse, print, evaluate, canonicalize.

Grammar (standard precedence, ``**`` binds tighter than unary minus and is
right-associative):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ['**' unary]
    atom   := NUMBER | NAME '(' expr ')' | NAME | '(' expr ')'

Names matching ``C<digits>`` or one of alpha/beta/gamma/delta are free
constants; every other name is a variable reference, checked against the
oracle's parameter list at bind time. ``pow`` is rejected so proposals must
use ``**``. All values are plain floats; domain violations evaluate to
non-finite values rather than raising.
"""

import re
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import _tape
from .errors import ExpressionSyntaxError, UnboundName, UnsupportedFunction

FUNCTIONS = ("exp", "log", "log10", "sqrt", "sin", "cos", "tanh", "abs")
GREEK_CONSTANTS = ("alpha", "beta", "gamma", "delta")
_CONST_RE = re.compile(r"^C\d+$")
_SKELETON_CONST = "C0"  # placeholder token; kept grammar-parseable for idempotence


def is_free_constant_name(name: str) -> bool:
    return bool(_CONST_RE.match(name)) or name in GREEK_CONSTANTS


@dataclass(frozen=True)
class ExprNode:
    """One node of a hypothesis AST.

    kind is one of: var, const, num, neg, add, sub, mul, div, pow, call.
    """

    kind: str
    name: str | None = None
    value: float | None = None
    children: tuple = field(default_factory=tuple)


@dataclass(frozen=True)
class ParsedHypothesis:
    source_text: str
    ast: ExprNode
    free_constants: tuple  # each constant once, first-appearance order
    variables_used: frozenset


@dataclass(frozen=True)
class Skeleton:
    canonical_form: str


# --- lexer -------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>\*\*|[-+*/(),]))"
)


def _tokenize(text: str) -> Iterator[tuple]:
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise ExpressionSyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.group("num") is not None:
            yield ("num", m.group("num"), m.start("num"))
        elif m.group("name") is not None:
            yield ("name", m.group("name"), m.start("name"))
        else:
            yield ("op", m.group("op"), m.start("op"))
        pos = m.end()
    yield ("end", "", len(text))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = list(_tokenize(text))
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_op(self, op: str):
        kind, val, pos = self.peek()
        if kind != "op" or val != op:
            raise ExpressionSyntaxError(f"expected {op!r}, found {val or 'end of input'!r}", pos)
        return self.advance()

    def parse(self) -> ExprNode:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ExpressionSyntaxError(f"unexpected trailing input {val!r}", pos)
        return node

    def expr(self) -> ExprNode:
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "+-":
                self.advance()
                rhs = self.term()
                node = ExprNode("add" if val == "+" else "sub", children=(node, rhs))
            else:
                return node

    def term(self) -> ExprNode:
        node = self.unary()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val in "*/":
                self.advance()
                rhs = self.unary()
                node = ExprNode("mul" if val == "*" else "div", children=(node, rhs))
            else:
                return node

    def unary(self) -> ExprNode:
        kind, val, _ = self.peek()
        if kind == "op" and val == "-":
            self.advance()
            return ExprNode("neg", children=(self.unary(),))
        if kind == "op" and val == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> ExprNode:
        base = self.atom()
        kind, val, _ = self.peek()
        if kind == "op" and val == "**":
            self.advance()
            exponent = self.unary()  # right associative, unary allowed in exponent
            return ExprNode("pow", children=(base, exponent))
        return base

    def atom(self) -> ExprNode:
        kind, val, pos = self.advance()
        if kind == "num":
            return ExprNode("num", value=float(val))
        if kind == "name":
            nk, nv, _ = self.peek()
            if nk == "op" and nv == "(":
                if val not in FUNCTIONS:
                    raise UnsupportedFunction(val, pos)
                self.advance()
                arg = self.expr()
                k2, v2, p2 = self.peek()
                if k2 == "op" and v2 == ",":
                    raise ExpressionSyntaxError(f"{val} expects exactly one argument", p2)
                self.expect_op(")")
                return ExprNode("call", name=val, children=(arg,))
            if is_free_constant_name(val):
                return ExprNode("const", name=val)
            return ExprNode("var", name=val)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExpressionSyntaxError(f"expected a value, found {val or 'end of input'!r}", pos)


def _collect(ast: ExprNode, consts: list, variables: set):
    if ast.kind == "const":
        if ast.name not in consts:
            consts.append(ast.name)
    elif ast.kind == "var":
        variables.add(ast.name)
    for child in ast.children:
        _collect(child, consts, variables)


_parse_cache: dict = {}


def parse(text: str) -> ParsedHypothesis:
    """Parse hypothesis text into an AST with constant/variable inventories."""
    if not text or not text.strip():
        raise ExpressionSyntaxError("empty expression", 0)
    cached = _parse_cache.get(text)
    if cached is not None:
        return cached
    ast = _Parser(text).parse()
    consts: list = []
    variables: set = set()
    _collect(ast, consts, variables)
    parsed = ParsedHypothesis(text, ast, tuple(consts), frozenset(variables))
    if len(_parse_cache) < 50_000:
        _parse_cache[text] = parsed
    return parsed


# --- printer ------------------------------------------------------------------

_BIN_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "**"}


def to_text(ast: ExprNode) -> str:
    """Canonical text: explicit parentheses on every operator, ``**`` for power."""
    if ast.kind == "num":
        return repr(ast.value)
    if ast.kind in ("var", "const"):
        return ast.name
    if ast.kind == "neg":
        return f"(-{to_text(ast.children[0])})"
    if ast.kind == "call":
        return f"{ast.name}({to_text(ast.children[0])})"
    sym = _BIN_SYMBOL[ast.kind]
    a, b = ast.children
    if ast.kind == "pow":
        return f"({to_text(a)}**{to_text(b)})"
    return f"({to_text(a)} {sym} {to_text(b)})"


def print_hypothesis(h: ParsedHypothesis) -> str:
    return to_text(h.ast)


# --- evaluation ---------------------------------------------------------------

_compile_cache: dict = {}


def compile_tape(h: ParsedHypothesis, variable_order: tuple):
    """Compile to a stack program over columns ordered as ``variable_order``."""
    key = (h.source_text, variable_order)
    hit = _compile_cache.get(key)
    if hit is not None:
        return hit
    var_index = {name: i for i, name in enumerate(variable_order)}
    const_index = {name: i for i, name in enumerate(h.free_constants)}
    prog: list = []
    lits: list = []

    def emit(node: ExprNode) -> int:
        if node.kind == "var":
            if node.name not in var_index:
                raise UnboundName(f"variable {node.name!r} not in {variable_order}")
            prog.append((_tape.OP_VAR, var_index[node.name]))
            return 1
        if node.kind == "const":
            prog.append((_tape.OP_CONST, const_index[node.name]))
            return 1
        if node.kind == "num":
            lits.append(node.value)
            prog.append((_tape.OP_LIT, len(lits) - 1))
            return 1
        if node.kind == "neg":
            d = emit(node.children[0])
            prog.append((_tape.OP_NEG, 0))
            return d
        if node.kind == "call":
            d = emit(node.children[0])
            prog.append((_tape.FUNC_OPS[node.name], 0))
            return d
        da = emit(node.children[0])
        db = emit(node.children[1])
        op = {"add": _tape.OP_ADD, "sub": _tape.OP_SUB, "mul": _tape.OP_MUL,
              "div": _tape.OP_DIV, "pow": _tape.OP_POW}[node.kind]
        prog.append((op, 0))
        return max(da, 1 + db)

    depth = emit(h.ast)
    compiled = (
        np.asarray(prog, dtype=np.int32).reshape(-1, 2),
        np.asarray(lits, dtype=np.float64),
        max(depth, 1),
    )
    if len(_compile_cache) < 50_000:
        _compile_cache[key] = compiled
    return compiled


def batch_evaluate(h: ParsedHypothesis, X: np.ndarray, constants, variable_order: tuple) -> np.ndarray:
    """Vectorized evaluation over rows of X; non-finite outputs pass through."""
    prog, lits, depth = compile_tape(h, variable_order)
    theta = np.asarray([constants[name] for name in h.free_constants], dtype=np.float64)
    return _tape.tape_eval(prog, lits, theta, X, depth)


def evaluate(h: ParsedHypothesis, variable_bindings, constant_bindings) -> float:
    """Evaluate once; domain violations yield non-finite floats, not errors."""
    for name in h.variables_used:
        if name not in variable_bindings:
            raise UnboundName(f"variable {name!r} has no binding")
    for name in h.free_constants:
        if name not in constant_bindings:
            raise UnboundName(f"constant {name!r} has no binding")
    order = tuple(sorted(h.variables_used))
    X = np.asarray([[float(variable_bindings[n]) for n in order]], dtype=np.float64)
    if not order:
        X = np.zeros((1, 0))
    return float(batch_evaluate(h, X, constant_bindings, order)[0])


# --- skeletons ------------------------------------------------------------------

def _anonymize(node: ExprNode) -> ExprNode:
    if node.kind in ("const", "num"):
        return ExprNode("const", name=_SKELETON_CONST)
    if node.children:
        return ExprNode(node.kind, name=node.name,
                        children=tuple(_anonymize(c) for c in node.children))
    return node


def _flatten(node: ExprNode, kind: str, out: list):
    if node.kind == kind:
        _flatten(node.children[0], kind, out)
        _flatten(node.children[1], kind, out)
    else:
        out.append(node)


def _canonical(node: ExprNode) -> ExprNode:
    if node.kind in ("add", "mul"):
        operands: list = []
        _flatten(node, node.kind, operands)
        operands = [_canonical(c) for c in operands]
        operands.sort(key=to_text)
        acc = operands[0]
        for nxt in operands[1:]:
            acc = ExprNode(node.kind, children=(acc, nxt))
        return acc
    if node.children:
        return ExprNode(node.kind, name=node.name,
                        children=tuple(_canonical(c) for c in node.children))
    return node


def skeletonize(h: ParsedHypothesis) -> Skeleton:
    """Anonymize constants/literals and sort commutative chains.

    Invariant under free-constant renaming, literal values, and commutative
    operand permutation; re-parsing the canonical form and skeletonizing
    again is a fixed point.
    """
    return Skeleton(to_text(_canonical(_anonymize(h.ast))))


def equivalent_up_to_constants(a: ParsedHypothesis, b: ParsedHypothesis) -> bool:
    """Skeleton equality. Sound but incomplete: algebraically equal forms with
    different skeletons compare unequal."""
    return skeletonize(a).canonical_form == skeletonize(b).canonical_form


# --- AST rewriting (used to derive task truth text and library templates) -------

def substitute_names(h: ParsedHypothesis, mapping) -> ParsedHypothesis:
    """Replace variable references per ``mapping``.

    Values may be floats (become numeric literals) or replacement names
    (become constant or variable references per the naming rules).
    """

    def rewrite(node: ExprNode) -> ExprNode:
        if node.kind == "var" and node.name in mapping:
            target = mapping[node.name]
            if isinstance(target, str):
                kind = "const" if is_free_constant_name(target) else "var"
                return ExprNode(kind, name=target)
            return ExprNode("num", value=float(target))
        if node.children:
            return ExprNode(node.kind, name=node.name,
                            children=tuple(rewrite(c) for c in node.children))
        return node

    return parse(to_text(rewrite(h.ast)))


def evaluate_scalar_math(h: ParsedHypothesis, variable_bindings, constant_bindings) -> float:
    """Slow recursive reference evaluator (tests use it as an independent oracle).

    IEEE semantics throughout, matching the tape executors: domain violations
    come back as nan/inf values.
    """
    _unary = {"exp": np.exp, "log": np.log, "log10": np.log10, "sqrt": np.sqrt,
              "sin": np.sin, "cos": np.cos, "tanh": np.tanh, "abs": np.abs}

    def ev(node: ExprNode) -> float:
        if node.kind == "num":
            return float(node.value)
        if node.kind == "var":
            if node.name not in variable_bindings:
                raise UnboundName(node.name)
            return float(variable_bindings[node.name])
        if node.kind == "const":
            if node.name not in constant_bindings:
                raise UnboundName(node.name)
            return float(constant_bindings[node.name])
        if node.kind == "neg":
            return -ev(node.children[0])
        with np.errstate(all="ignore"):
            if node.kind == "call":
                return float(_unary[node.name](np.float64(ev(node.children[0]))))
            a = np.float64(ev(node.children[0]))
            b = np.float64(ev(node.children[1]))
            if node.kind == "add":
                return float(a + b)
            if node.kind == "sub":
                return float(a - b)
            if node.kind == "mul":
                return float(a * b)
            if node.kind == "div":
                return float(a / b)
            return float(np.power(a, b))

    return ev(h.ast)

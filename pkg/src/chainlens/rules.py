"""Rule language used by the control blocks.

A rule is ``WHEN <condition> THEN <action>``: a boolean expression over the
``input``, ``output`` and ``attribution`` namespaces paired with an action
(override a label, reject the input, shut the pipeline down, or reset it).
Keywords are case-insensitive; field names are not. Standard precedence
NOT > AND > OR, parentheses allowed. Numbers are 64-bit floats and ``==`` on
numbers is exact; rule editors should warn when comparing computed floats
for equality.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Mapping

from .errors import AttributionUnavailable, InvalidRule, ParseError, UnboundField
from .jsonutil import format_float

NAMESPACES = ("input", "output", "attribution")
COMPARE_OPS = ("==", "!=", "<=", ">=", "<", ">")

KEYWORDS = {
    "when", "then", "and", "or", "not", "abs", "total_attribution",
    "override", "reject", "shutdown", "reset",
}


# --- AST ------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldRef:
    namespace: str
    field: str


@dataclass(frozen=True)
class NumberLit:
    value: float


@dataclass(frozen=True)
class TextLit:
    value: str


@dataclass(frozen=True)
class Abs:
    term: "Term"


@dataclass(frozen=True)
class TotalAttribution:
    pass


@dataclass(frozen=True)
class Mul:
    left: "Term"
    right: "Term"


Term = FieldRef | NumberLit | TextLit | Abs | TotalAttribution | Mul


@dataclass(frozen=True)
class Comparison:
    left: Term
    op: str
    right: Term


@dataclass(frozen=True)
class And:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Or:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Not:
    operand: "Expr"


Expr = Comparison | And | Or | Not


@dataclass(frozen=True)
class Override:
    label: str


@dataclass(frozen=True)
class Reject:
    message: str


@dataclass(frozen=True)
class Shutdown:
    pass


@dataclass(frozen=True)
class Reset:
    pass


Action = Override | Reject | Shutdown | Reset


@dataclass(frozen=True)
class RuleAst:
    condition: Expr
    action: Action


@dataclass
class EvalContext:
    """Values a rule condition is evaluated against.

    ``attribution`` stays ``None`` unless the caller supplies per-feature
    attribution scores; referencing the attribution namespace without them
    raises :class:`AttributionUnavailable`.
    """

    input: Mapping[str, Any] = field(default_factory=dict)
    output: Mapping[str, Any] | None = None
    attribution: Mapping[str, float] | None = None


# --- lexer ------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>-?\d+(\.\d+)?([eE][+-]?\d+)?)
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>'(\\.|[^'\\])*')
  | (?P<op>==|!=|<=|>=|<|>|\(|\)|\*|\.|,)
    """,
    re.VERBOSE,
)


@dataclass
class _Token:
    kind: str  # number | word | string | op | eof
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(pos, ("token",), f"parse error at offset {pos}: unexpected character {text[pos]!r}")
        if m.lastgroup != "ws":
            tokens.append(_Token(m.lastgroup, m.group(0), pos))
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


def _unquote(raw: str) -> str:
    return raw[1:-1].replace("\\'", "'").replace("\\\\", "\\")


def _quote(value: str) -> str:
    return "'" + value.replace("\\", "\\\\").replace("'", "\\'") + "'"


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.index = 0

    # -- plumbing --

    def peek(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        tok = self.tokens[self.index]
        self.index += 1
        return tok

    def is_keyword(self, name: str) -> bool:
        tok = self.peek()
        return tok.kind == "word" and tok.text.lower() == name

    def eat_keyword(self, name: str) -> bool:
        if self.is_keyword(name):
            self.advance()
            return True
        return False

    def expect_keyword(self, name: str) -> None:
        if not self.eat_keyword(name):
            raise ParseError(self.peek().pos, (name.upper(),))

    def expect_op(self, op: str) -> None:
        tok = self.peek()
        if tok.kind == "op" and tok.text == op:
            self.advance()
            return
        raise ParseError(tok.pos, (op,))

    def fail(self, expected: tuple[str, ...]) -> ParseError:
        return ParseError(self.peek().pos, expected)

    # -- grammar --

    def parse_rule(self) -> RuleAst:
        self.expect_keyword("when")
        condition = self.parse_expr()
        self.expect_keyword("then")
        action = self.parse_action()
        if self.peek().kind != "eof":
            raise self.fail(("end of rule",))
        return RuleAst(condition, action)

    def parse_condition_only(self) -> Expr:
        expr = self.parse_expr()
        if self.peek().kind != "eof":
            raise self.fail(("end of condition",))
        return expr

    def parse_expr(self) -> Expr:
        left = self.parse_and()
        while self.eat_keyword("or"):
            left = Or(left, self.parse_and())
        return left

    def parse_and(self) -> Expr:
        left = self.parse_not()
        while self.eat_keyword("and"):
            left = And(left, self.parse_not())
        return left

    def parse_not(self) -> Expr:
        if self.eat_keyword("not"):
            return Not(self.parse_not())
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "op" and tok.text == "(":
            # "(" may open a parenthesized boolean expression or a
            # parenthesized term; try the expression reading first and fall
            # back, keeping whichever error got further.
            saved = self.index
            try:
                self.advance()
                expr = self.parse_expr()
                self.expect_op(")")
                return expr
            except ParseError as expr_err:
                self.index = saved
                try:
                    return self.parse_comparison()
                except ParseError as cmp_err:
                    raise cmp_err if cmp_err.position >= expr_err.position else expr_err
        return self.parse_comparison()

    def parse_comparison(self) -> Comparison:
        left = self.parse_term()
        tok = self.peek()
        if tok.kind == "op" and tok.text in COMPARE_OPS:
            self.advance()
            right = self.parse_term()
            return Comparison(left, tok.text, right)
        raise self.fail(COMPARE_OPS)

    def parse_term(self) -> Term:
        left = self.parse_factor()
        while True:
            tok = self.peek()
            if tok.kind == "op" and tok.text == "*":
                self.advance()
                left = Mul(left, self.parse_factor())
            else:
                return left

    def parse_factor(self) -> Term:
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return NumberLit(float(tok.text))
        if tok.kind == "string":
            self.advance()
            return TextLit(_unquote(tok.text))
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            term = self.parse_term()
            self.expect_op(")")
            return term
        if tok.kind == "word":
            lowered = tok.text.lower()
            if lowered == "abs":
                self.advance()
                self.expect_op("(")
                inner = self.parse_term()
                self.expect_op(")")
                return Abs(inner)
            if lowered == "total_attribution":
                self.advance()
                return TotalAttribution()
            if lowered in NAMESPACES:
                self.advance()
                self.expect_op(".")
                name = self.peek()
                if name.kind != "word":
                    raise self.fail(("field name",))
                self.advance()
                return FieldRef(lowered, name.text)
        raise self.fail(("term",))

    def parse_action(self) -> Action:
        tok = self.peek()
        if tok.kind == "word":
            lowered = tok.text.lower()
            if lowered == "override":
                self.advance()
                return Override(self._action_text())
            if lowered == "reject":
                self.advance()
                return Reject(self._action_text())
            if lowered == "shutdown":
                self.advance()
                return Shutdown()
            if lowered == "reset":
                self.advance()
                return Reset()
        raise self.fail(("OVERRIDE", "REJECT", "SHUTDOWN", "RESET"))

    def _action_text(self) -> str:
        self.expect_op("(")
        tok = self.peek()
        if tok.kind != "string":
            raise self.fail(("quoted text",))
        self.advance()
        self.expect_op(")")
        return _unquote(tok.text)


def parse_rule(text: str) -> RuleAst:
    """Parse rule text; raises :class:`ParseError` with a byte offset."""
    return _Parser(text).parse_rule()


def parse_condition(text: str) -> Expr:
    """Parse a bare condition (no WHEN/THEN), as used by splitter routes."""
    return _Parser(text).parse_condition_only()


# --- formatting ---------------------------------------------------------------------


def _format_number(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return format_float(value)


def _format_term(term: Term) -> str:
    if isinstance(term, NumberLit):
        return _format_number(term.value)
    if isinstance(term, TextLit):
        return _quote(term.value)
    if isinstance(term, FieldRef):
        return f"{term.namespace}.{term.field}"
    if isinstance(term, Abs):
        return f"abs({_format_term(term.term)})"
    if isinstance(term, TotalAttribution):
        return "total_attribution"
    if isinstance(term, Mul):
        left = _format_term(term.left)
        right = _format_term(term.right)
        if isinstance(term.right, Mul):
            right = f"({right})"
        return f"{left} * {right}"
    raise TypeError(f"not a term: {term!r}")


def _format_expr(expr: Expr, parent: str = "or") -> str:
    if isinstance(expr, Or):
        text = f"{_format_expr(expr.left, 'or')} OR {_format_expr(expr.right, 'or_right')}"
        return f"({text})" if parent in ("and", "and_right", "not", "or_right") else text
    if isinstance(expr, And):
        text = f"{_format_expr(expr.left, 'and')} AND {_format_expr(expr.right, 'and_right')}"
        return f"({text})" if parent in ("not", "and_right") else text
    if isinstance(expr, Not):
        inner = _format_expr(expr.operand, "not")
        return f"NOT {inner}"
    if isinstance(expr, Comparison):
        return f"{_format_term(expr.left)} {expr.op} {_format_term(expr.right)}"
    raise TypeError(f"not an expression: {expr!r}")


def _format_action(action: Action) -> str:
    if isinstance(action, Override):
        return f"OVERRIDE({_quote(action.label)})"
    if isinstance(action, Reject):
        return f"REJECT({_quote(action.message)})"
    if isinstance(action, Shutdown):
        return "SHUTDOWN"
    return "RESET"


def format_rule(ast: RuleAst) -> str:
    """Canonical text for a rule; ``parse_rule(format_rule(x))`` equals ``x``."""
    return f"WHEN {_format_expr(ast.condition)} THEN {_format_action(ast.action)}"


def format_condition(expr: Expr) -> str:
    return _format_expr(expr)


# --- binding ---------------------------------------------------------------------


@dataclass
class BindContext:
    """Schema a rule must resolve against before it may run."""

    input_fields: Mapping[str, str] = field(default_factory=dict)  # name -> "number" | "text"
    classes: tuple[str, ...] = ()
    attribution_allowed: bool = False
    attribution_fields: tuple[str, ...] = ()
    allowed_actions: tuple[type, ...] = (Override, Reject, Shutdown, Reset)

    output_fields = {"label": "text", "probability": "number"}


def _term_type(term: Term, ctx: BindContext) -> str:
    if isinstance(term, NumberLit):
        return "number"
    if isinstance(term, TextLit):
        return "text"
    if isinstance(term, TotalAttribution):
        if not ctx.attribution_allowed:
            raise InvalidRule("total_attribution is only available in explanation-aware blocks")
        return "number"
    if isinstance(term, Abs):
        if _term_type(term.term, ctx) != "number":
            raise InvalidRule("abs() requires a numeric term")
        return "number"
    if isinstance(term, Mul):
        if _term_type(term.left, ctx) != "number" or _term_type(term.right, ctx) != "number":
            raise InvalidRule("'*' requires numeric terms")
        return "number"
    if isinstance(term, FieldRef):
        if term.namespace == "input":
            if term.field not in ctx.input_fields:
                raise UnboundField(f"unknown input field '{term.field}'")
            return ctx.input_fields[term.field]
        if term.namespace == "output":
            if term.field not in ctx.output_fields:
                raise UnboundField(f"unknown output field '{term.field}'")
            return ctx.output_fields[term.field]
        if not ctx.attribution_allowed:
            raise InvalidRule("attribution terms are only available in explanation-aware blocks")
        if ctx.attribution_fields and term.field not in ctx.attribution_fields:
            raise UnboundField(f"unknown attribution field '{term.field}'")
        return "number"
    raise TypeError(f"not a term: {term!r}")


def _bind_expr(expr: Expr, ctx: BindContext) -> None:
    if isinstance(expr, (And, Or)):
        _bind_expr(expr.left, ctx)
        _bind_expr(expr.right, ctx)
    elif isinstance(expr, Not):
        _bind_expr(expr.operand, ctx)
    elif isinstance(expr, Comparison):
        lt = _term_type(expr.left, ctx)
        rt = _term_type(expr.right, ctx)
        if lt != rt:
            raise InvalidRule(f"cannot compare {lt} with {rt}")
        if lt == "text" and expr.op not in ("==", "!="):
            raise InvalidRule("text terms only support == and !=")
    else:
        raise TypeError(f"not an expression: {expr!r}")


def bind_rule(ast: RuleAst, ctx: BindContext) -> RuleAst:
    """Validate field references, comparison types, and the action against a schema."""
    _bind_expr(ast.condition, ctx)
    if not isinstance(ast.action, ctx.allowed_actions):
        names = "/".join(t.__name__ for t in ctx.allowed_actions)
        raise InvalidRule(f"action {type(ast.action).__name__} not allowed here (expected {names})")
    if isinstance(ast.action, Override) and ctx.classes and ast.action.label not in ctx.classes:
        raise InvalidRule(f"override label '{ast.action.label}' is not a model class")
    return ast


def bind_condition(expr: Expr, ctx: BindContext) -> Expr:
    _bind_expr(expr, ctx)
    return expr


def references_attribution(expr: Expr) -> bool:
    if isinstance(expr, (And, Or)):
        return references_attribution(expr.left) or references_attribution(expr.right)
    if isinstance(expr, Not):
        return references_attribution(expr.operand)
    if isinstance(expr, Comparison):
        return _term_references(expr.left) or _term_references(expr.right)
    return False


def _term_references(term: Term) -> bool:
    if isinstance(term, TotalAttribution):
        return True
    if isinstance(term, FieldRef):
        return term.namespace == "attribution"
    if isinstance(term, Abs):
        return _term_references(term.term)
    if isinstance(term, Mul):
        return _term_references(term.left) or _term_references(term.right)
    return False


# --- evaluation ----------------------------------------------------------------------


def _eval_term(term: Term, ctx: EvalContext) -> Any:
    if isinstance(term, NumberLit):
        return term.value
    if isinstance(term, TextLit):
        return term.value
    if isinstance(term, TotalAttribution):
        if ctx.attribution is None:
            raise AttributionUnavailable("rule needs attributions but none were supplied")
        return float(sum(abs(v) for v in ctx.attribution.values()))
    if isinstance(term, Abs):
        value = _eval_term(term.term, ctx)
        if isinstance(value, str):
            raise InvalidRule("abs() applied to text")
        return abs(float(value))
    if isinstance(term, Mul):
        left = _eval_term(term.left, ctx)
        right = _eval_term(term.right, ctx)
        if isinstance(left, str) or isinstance(right, str):
            raise InvalidRule("'*' applied to text")
        return float(left) * float(right)
    if isinstance(term, FieldRef):
        if term.namespace == "input":
            if term.field not in ctx.input:
                raise UnboundField(f"input field '{term.field}' missing from context")
            return ctx.input[term.field]
        if term.namespace == "output":
            if ctx.output is None or term.field not in ctx.output:
                raise UnboundField(f"output field '{term.field}' missing from context")
            return ctx.output[term.field]
        if ctx.attribution is None:
            raise AttributionUnavailable("rule needs attributions but none were supplied")
        if term.field not in ctx.attribution:
            raise UnboundField(f"attribution field '{term.field}' missing from context")
        return float(ctx.attribution[term.field])
    raise TypeError(f"not a term: {term!r}")


def _eval_expr(expr: Expr, ctx: EvalContext) -> bool:
    if isinstance(expr, And):
        return _eval_expr(expr.left, ctx) and _eval_expr(expr.right, ctx)
    if isinstance(expr, Or):
        return _eval_expr(expr.left, ctx) or _eval_expr(expr.right, ctx)
    if isinstance(expr, Not):
        return not _eval_expr(expr.operand, ctx)
    if isinstance(expr, Comparison):
        left = _eval_term(expr.left, ctx)
        right = _eval_term(expr.right, ctx)
        text = isinstance(left, str) or isinstance(right, str)
        if text:
            if expr.op == "==":
                return left == right
            if expr.op == "!=":
                return left != right
            raise InvalidRule("text terms only support == and !=")
        left = float(left)
        right = float(right)
        if expr.op == "==":
            return left == right
        if expr.op == "!=":
            return left != right
        if expr.op == "<":
            return left < right
        if expr.op == "<=":
            return left <= right
        if expr.op == ">":
            return left > right
        return left >= right
    raise TypeError(f"not an expression: {expr!r}")


def evaluate(ast: RuleAst, ctx: EvalContext) -> Action | None:
    """Return the rule's action iff the condition holds; pure."""
    return ast.action if _eval_expr(ast.condition, ctx) else None


def evaluate_condition(expr: Expr, ctx: EvalContext) -> bool:
    return _eval_expr(expr, ctx)

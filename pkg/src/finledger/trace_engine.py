"""Straight-line arithmetic trace DSL: parser, evaluator, scalar extraction.

The trace language covers execution traces attached to financial QA records:
one assignment per line, four operators, parentheses, unary minus.

    step_1 = 100 - 80
    step_2 = step_1 * 3

Identifiers must be assigned before use, there are no loops or conditionals,
and every numeric literal is preserved verbatim so the exact surface scalars
can be extracted and substituted. That closed shape is the point: the
saboteur re-executes mutated traces here and needs the result to be a pure
function of the text.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from collections import Counter
from typing import Union

from .errors import DivisionByZero, Overflow, ParseError, UndefinedStep
from .textutils import canon_number, scan_numerals

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"\d[\d,]*(?:\.\d+)?")


@dataclass(frozen=True)
class NumberLiteral:
    raw: str
    value: float


@dataclass(frozen=True)
class VarRef:
    name: str


@dataclass(frozen=True)
class UnaryNeg:
    operand: "Expr"


@dataclass(frozen=True)
class BinaryOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


Expr = Union[NumberLiteral, VarRef, UnaryNeg, BinaryOp]

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


@dataclass(frozen=True)
class TraceStep:
    target: str
    expr: Expr


@dataclass(frozen=True)
class TraceProgram:
    steps: tuple[TraceStep, ...]

    @property
    def final(self) -> str:
        return self.steps[-1].target

    def to_text(self) -> str:
        return "\n".join(f"{s.target} = {_expr_text(s.expr)}" for s in self.steps)


def _expr_text(expr: Expr, parent_prec: int = 0, right_side: bool = False) -> str:
    if isinstance(expr, NumberLiteral):
        return expr.raw
    if isinstance(expr, VarRef):
        return expr.name
    if isinstance(expr, UnaryNeg):
        inner = _expr_text(expr.operand, parent_prec=3)
        return f"-{inner}"
    prec = _PRECEDENCE[expr.op]
    text = (
        f"{_expr_text(expr.left, prec, False)} {expr.op} "
        f"{_expr_text(expr.right, prec, True)}"
    )
    needs_parens = prec < parent_prec or (prec == parent_prec and right_side)
    return f"({text})" if needs_parens else text


class _Tokens:
    def __init__(self, text: str, line: int):
        self.line = line
        self.items: list[tuple[str, str]] = []
        i = 0
        while i < len(text):
            ch = text[i]
            if ch.isspace():
                i += 1
                continue
            m = _NUMBER_RE.match(text, i)
            if m:
                self.items.append(("num", m.group()))
                i = m.end()
                continue
            m = _IDENT_RE.match(text, i)
            if m:
                self.items.append(("ident", m.group()))
                i = m.end()
                continue
            if ch in "+-*/()":
                self.items.append(("op", ch))
                i += 1
                continue
            raise ParseError(f"unexpected character {ch!r}", line=line)
        self.pos = 0

    def peek(self) -> tuple[str, str] | None:
        return self.items[self.pos] if self.pos < len(self.items) else None

    def take(self) -> tuple[str, str]:
        item = self.peek()
        if item is None:
            raise ParseError("unexpected end of expression", line=self.line)
        self.pos += 1
        return item


def _parse_expr(tokens: _Tokens, defined: set[str]) -> Expr:
    node = _parse_term(tokens, defined)
    while True:
        item = tokens.peek()
        if item and item[0] == "op" and item[1] in "+-":
            tokens.take()
            node = BinaryOp(op=item[1], left=node, right=_parse_term(tokens, defined))
        else:
            return node


def _parse_term(tokens: _Tokens, defined: set[str]) -> Expr:
    node = _parse_factor(tokens, defined)
    while True:
        item = tokens.peek()
        if item and item[0] == "op" and item[1] in "*/":
            tokens.take()
            node = BinaryOp(op=item[1], left=node, right=_parse_factor(tokens, defined))
        else:
            return node


def _parse_factor(tokens: _Tokens, defined: set[str]) -> Expr:
    kind, value = tokens.take()
    if kind == "op" and value == "-":
        return UnaryNeg(operand=_parse_factor(tokens, defined))
    if kind == "num":
        return NumberLiteral(raw=value, value=float(value.replace(",", "")))
    if kind == "ident":
        if value not in defined:
            raise UndefinedStep(value, line=tokens.line)
        return VarRef(name=value)
    if kind == "op" and value == "(":
        node = _parse_expr(tokens, defined)
        closing = tokens.take()
        if closing != ("op", ")"):
            raise ParseError("expected ')'", line=tokens.line)
        return node
    raise ParseError(f"unexpected token {value!r}", line=tokens.line)


def parse_trace(text: str) -> TraceProgram:
    """Parse trace text, one "name = expr" assignment per line."""
    steps: list[TraceStep] = []
    defined: set[str] = set()
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'name = expression'", line=line_no)
        target, expr_text = line.split("=", 1)
        target = target.strip()
        if not _IDENT_RE.fullmatch(target):
            raise ParseError(f"invalid step name {target!r}", line=line_no)
        tokens = _Tokens(expr_text, line_no)
        expr = _parse_expr(tokens, defined)
        if tokens.peek() is not None:
            raise ParseError(
                f"trailing input {tokens.peek()[1]!r} after expression", line=line_no
            )
        steps.append(TraceStep(target=target, expr=expr))
        defined.add(target)
    if not steps:
        raise ParseError("trace contains no assignments", line=None)
    return TraceProgram(steps=tuple(steps))


def _eval_expr(expr: Expr, env: dict[str, float], step: str) -> float:
    if isinstance(expr, NumberLiteral):
        return expr.value
    if isinstance(expr, VarRef):
        return env[expr.name]
    if isinstance(expr, UnaryNeg):
        return -_eval_expr(expr.operand, env, step)
    left = _eval_expr(expr.left, env, step)
    right = _eval_expr(expr.right, env, step)
    if expr.op == "+":
        result = left + right
    elif expr.op == "-":
        result = left - right
    elif expr.op == "*":
        result = left * right
    else:
        if right == 0.0:
            raise DivisionByZero(step)
        result = left / right
    if math.isinf(result) or math.isnan(result):
        raise Overflow(step)
    return result


def eval_trace(program: TraceProgram) -> float:
    """Value of the final step under double-precision arithmetic."""
    env: dict[str, float] = {}
    for step in program.steps:
        env[step.target] = _eval_expr(step.expr, env, step.target)
    return env[program.final]


def _walk_literals(expr: Expr):
    if isinstance(expr, NumberLiteral):
        yield expr
    elif isinstance(expr, UnaryNeg):
        yield from _walk_literals(expr.operand)
    elif isinstance(expr, BinaryOp):
        yield from _walk_literals(expr.left)
        yield from _walk_literals(expr.right)


def extract_scalars(program: TraceProgram) -> Counter:
    """Multiset of the program's numeric literals in canonical decimal form."""
    counts: Counter = Counter()
    for step in program.steps:
        for literal in _walk_literals(step.expr):
            counts[canon_number(literal.raw)] += 1
    return counts


def extract_scalars_text(text: str) -> Counter:
    """Multiset of numeric scalars scanned from free text.

    Uses the same numeral grammar as the quote aligner's numeric tier;
    "$100M" contributes the bare 100 (unit suffixes are surface text, never
    multiplied in).
    """
    counts: Counter = Counter()
    for raw, _start, _end in scan_numerals(text):
        counts[canon_number(raw)] += 1
    return counts


def _substitute(expr: Expr, target_canon: str, replacement_raw: str) -> Expr:
    if isinstance(expr, NumberLiteral):
        if canon_number(expr.raw) == target_canon:
            return NumberLiteral(
                raw=replacement_raw, value=float(replacement_raw.replace(",", ""))
            )
        return expr
    if isinstance(expr, VarRef):
        return expr
    if isinstance(expr, UnaryNeg):
        return UnaryNeg(operand=_substitute(expr.operand, target_canon, replacement_raw))
    return BinaryOp(
        op=expr.op,
        left=_substitute(expr.left, target_canon, replacement_raw),
        right=_substitute(expr.right, target_canon, replacement_raw),
    )


def substitute_scalar(
    program: TraceProgram, target_canon: str, replacement_raw: str
) -> TraceProgram:
    """New program with every literal equal to ``target_canon`` replaced."""
    return TraceProgram(
        steps=tuple(
            TraceStep(
                target=s.target,
                expr=_substitute(s.expr, target_canon, replacement_raw),
            )
            for s in program.steps
        )
    )

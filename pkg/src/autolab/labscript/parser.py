"""LabScript parser: line-oriented statements into an AST.

LabScript is the small control DSL the agent generates and the sandbox
executes. One statement per line, ``#`` comments, ``{var}`` interpolation
inside string templates, SWEEP...END for loops. Grammar version 1.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Union

LABSCRIPT_VERSION = "1"

GRAMMAR_SUMMARY = """\
LabScript v1 — one statement per line, '#' starts a comment.
  OPEN <alias> "<resource_id>" [SCPI|STAGE]   connect an instrument
  WRITE <alias> "<command>"                   send a line, no reply expected
  QUERY <alias> "<command>" -> <var>          send, read one reply, bind var
  MOVE <alias> <x_um> <y_um>                  stage move (expressions allowed)
  WAITIDLE <alias> <timeout_ms>               poll stage until IDLE
  SET <var> <expr>                            assign a numeric variable
  SWEEP <var> FROM <a> TO <b> STEP <s>        loop var over a..b inclusive
  END                                         close the SWEEP body
  RECORD <expr>[, <expr>...]                  append a numeric tuple
  SAVE "<file.csv>"                           write records (CSV, header row)
  PRINT "<text with {var}>"                   append a line to stdout
Expressions: numbers, variables, + - * / and parentheses.
Templates substitute {var}. Strings use double quotes."""


class LabScriptParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.reason = message


# ----------------------------- expressions -----------------------------

_EXPR_TOKEN_RE = re.compile(r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[()+\-*/]))")


@dataclass(frozen=True)
class Expr:
    """Parsed arithmetic expression over floats and variables."""

    node: tuple
    source: str

    def names(self) -> set[str]:
        found = set()

        def walk(node):
            if node[0] == "var":
                found.add(node[1])
            elif node[0] in ("+", "-", "*", "/", "neg"):
                for child in node[1:]:
                    walk(child)

        walk(self.node)
        return found


def parse_expr(text: str, line: int) -> Expr:
    tokens = []
    pos = 0
    while pos < len(text):
        match = _EXPR_TOKEN_RE.match(text, pos)
        if not match:
            if text[pos:].strip():
                raise LabScriptParseError(line, f"bad expression {text!r}")
            break
        if match.group("num") is not None:
            tokens.append(("num", float(match.group("num"))))
        elif match.group("name") is not None:
            tokens.append(("name", match.group("name")))
        else:
            tokens.append(("op", match.group("op")))
        pos = match.end()
    if not tokens:
        raise LabScriptParseError(line, "empty expression")

    index = 0

    def peek():
        return tokens[index] if index < len(tokens) else (None, None)

    def take():
        nonlocal index
        token = tokens[index]
        index += 1
        return token

    def parse_sum():
        node = parse_product()
        while peek() == ("op", "+") or peek() == ("op", "-"):
            op = take()[1]
            node = (op, node, parse_product())
        return node

    def parse_product():
        node = parse_atom()
        while peek() == ("op", "*") or peek() == ("op", "/"):
            op = take()[1]
            node = (op, node, parse_atom())
        return node

    def parse_atom():
        kind, value = peek()
        if (kind, value) == ("op", "-"):
            take()
            return ("neg", parse_atom())
        if (kind, value) == ("op", "+"):
            take()
            return parse_atom()
        if kind == "num":
            take()
            return ("num", value)
        if kind == "name":
            take()
            return ("var", value)
        if (kind, value) == ("op", "("):
            take()
            node = parse_sum()
            if peek() != ("op", ")"):
                raise LabScriptParseError(line, f"unbalanced parentheses in {text!r}")
            take()
            return node
        raise LabScriptParseError(line, f"bad expression {text!r}")

    node = parse_sum()
    if index != len(tokens):
        raise LabScriptParseError(line, f"trailing tokens in expression {text!r}")
    return Expr(node=node, source=text.strip())


# ------------------------------ statements ------------------------------

@dataclass
class Open:
    alias: str
    resource_id: str
    protocol: Optional[str]  # "SCPI" | "STAGE" | None (infer from registry)
    line: int


@dataclass
class Write:
    alias: str
    template: str
    line: int


@dataclass
class Query:
    alias: str
    template: str
    bind_var: str
    line: int


@dataclass
class Move:
    alias: str
    x_expr: Expr
    y_expr: Expr
    line: int


@dataclass
class WaitIdle:
    alias: str
    timeout_ms: float
    line: int


@dataclass
class SetVar:
    var: str
    expr: Expr
    line: int


@dataclass
class Record:
    exprs: list[Expr]
    line: int


@dataclass
class Save:
    path: str
    line: int


@dataclass
class Print:
    template: str
    line: int


@dataclass
class Sweep:
    var: str
    start: float
    stop: float
    step: float
    body: list = field(default_factory=list)
    line: int = 0


Statement = Union[Open, Write, Query, Move, WaitIdle, SetVar, Record, Save, Print, Sweep]


@dataclass
class Program:
    statements: list[Statement]


_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")


def _split_tokens(text: str, line: int) -> list[tuple[str, bool]]:
    """Split into (token, was_quoted) pairs; double-quoted strings are one token."""
    tokens = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == '"':
            end = text.find('"', i + 1)
            if end < 0:
                raise LabScriptParseError(line, "unterminated string")
            tokens.append((text[i + 1 : end], True))
            i = end + 1
        else:
            j = i
            while j < len(text) and not text[j].isspace():
                if text[j] == '"':
                    break
                j += 1
            tokens.append((text[i:j], False))
            i = j
    return tokens


def _require_name(token: tuple[str, bool], line: int, what: str) -> str:
    text, quoted = token
    if quoted or not _NAME_RE.match(text):
        raise LabScriptParseError(line, f"bad {what} {text!r}")
    return text


def _require_number(token: tuple[str, bool], line: int, what: str) -> float:
    text, quoted = token
    if not quoted:
        try:
            return float(text)
        except ValueError:
            pass
    raise LabScriptParseError(line, f"{what} must be a number, got {text!r}")


def parse_program(text: str) -> Program:
    """Parse a complete script; raises LabScriptParseError with line numbers."""
    top: list[Statement] = []
    stack: list[Sweep] = []
    opened: set[str] = set()

    def current_body() -> list[Statement]:
        return stack[-1].body if stack else top

    def check_alias(name: str, line: int) -> str:
        if name not in opened:
            raise LabScriptParseError(line, f"alias {name!r} used before OPEN")
        return name

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        tokens = _split_tokens(stripped, lineno)
        verb = tokens[0][0].upper() if not tokens[0][1] else ""
        rest = tokens[1:]

        if verb == "OPEN":
            if len(rest) not in (2, 3):
                raise LabScriptParseError(lineno, "usage: OPEN <alias> <resource> [SCPI|STAGE]")
            alias = _require_name(rest[0], lineno, "alias")
            resource_id = rest[1][0]
            protocol = None
            if len(rest) == 3:
                protocol = rest[2][0].upper()
                if protocol not in ("SCPI", "STAGE"):
                    raise LabScriptParseError(lineno, f"unknown protocol {rest[2][0]!r}")
            opened.add(alias)
            current_body().append(Open(alias, resource_id, protocol, lineno))
        elif verb == "WRITE":
            if len(rest) != 2 or not rest[1][1]:
                raise LabScriptParseError(lineno, 'usage: WRITE <alias> "<command>"')
            alias = check_alias(_require_name(rest[0], lineno, "alias"), lineno)
            current_body().append(Write(alias, rest[1][0], lineno))
        elif verb == "QUERY":
            if (
                len(rest) != 4
                or not rest[1][1]
                or rest[2] != ("->", False)
            ):
                raise LabScriptParseError(lineno, 'usage: QUERY <alias> "<command>" -> <var>')
            alias = check_alias(_require_name(rest[0], lineno, "alias"), lineno)
            bind = _require_name(rest[3], lineno, "variable")
            current_body().append(Query(alias, rest[1][0], bind, lineno))
        elif verb == "MOVE":
            if len(rest) != 3:
                raise LabScriptParseError(lineno, "usage: MOVE <alias> <x> <y>")
            alias = check_alias(_require_name(rest[0], lineno, "alias"), lineno)
            x_expr = parse_expr(rest[1][0], lineno)
            y_expr = parse_expr(rest[2][0], lineno)
            current_body().append(Move(alias, x_expr, y_expr, lineno))
        elif verb == "WAITIDLE":
            if len(rest) != 2:
                raise LabScriptParseError(lineno, "usage: WAITIDLE <alias> <timeout_ms>")
            alias = check_alias(_require_name(rest[0], lineno, "alias"), lineno)
            timeout = _require_number(rest[1], lineno, "timeout")
            if timeout < 0:
                raise LabScriptParseError(lineno, "timeout must be >= 0")
            current_body().append(WaitIdle(alias, timeout, lineno))
        elif verb == "SET":
            after_verb = stripped[len(tokens[0][0]):].strip()
            parts = after_verb.split(None, 1)
            if len(parts) != 2:
                raise LabScriptParseError(lineno, "usage: SET <var> <expr>")
            var = _require_name((parts[0], False), lineno, "variable")
            current_body().append(SetVar(var, parse_expr(parts[1], lineno), lineno))
        elif verb == "SWEEP":
            keywords = [t[0].upper() for t in rest]
            if (
                len(rest) != 7
                or keywords[1] != "FROM"
                or keywords[3] != "TO"
                or keywords[5] != "STEP"
            ):
                raise LabScriptParseError(
                    lineno, "usage: SWEEP <var> FROM <a> TO <b> STEP <s>"
                )
            var = _require_name(rest[0], lineno, "variable")
            start = _require_number(rest[2], lineno, "FROM")
            stop = _require_number(rest[4], lineno, "TO")
            step = _require_number(rest[6], lineno, "STEP")
            if step == 0:
                raise LabScriptParseError(lineno, "STEP must not be zero")
            if stop != start and (stop - start) * step < 0:
                raise LabScriptParseError(lineno, "STEP sign must match TO - FROM")
            sweep = Sweep(var=var, start=start, stop=stop, step=step, line=lineno)
            current_body().append(sweep)
            stack.append(sweep)
        elif verb == "END":
            if len(rest) != 0:
                raise LabScriptParseError(lineno, "END takes no arguments")
            if not stack:
                raise LabScriptParseError(lineno, "END without SWEEP")
            stack.pop()
        elif verb == "RECORD":
            text_after = stripped[len(tokens[0][0]):].strip()
            if not text_after:
                raise LabScriptParseError(lineno, "usage: RECORD <expr>[, <expr>...]")
            exprs = [parse_expr(part, lineno) for part in text_after.split(",")]
            current_body().append(Record(exprs, lineno))
        elif verb == "SAVE":
            if len(rest) != 1 or not rest[0][1]:
                raise LabScriptParseError(lineno, 'usage: SAVE "<file.csv>"')
            current_body().append(Save(rest[0][0], lineno))
        elif verb == "PRINT":
            if len(rest) != 1 or not rest[0][1]:
                raise LabScriptParseError(lineno, 'usage: PRINT "<text>"')
            current_body().append(Print(rest[0][0], lineno))
        else:
            raise LabScriptParseError(lineno, f"unknown verb {tokens[0][0]!r}")

    if stack:
        raise LabScriptParseError(stack[-1].line, "SWEEP without matching END")
    return Program(statements=top)

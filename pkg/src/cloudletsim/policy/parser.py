"""Recursive-descent parser for the policy declaration language.

Concrete syntax, one declaration per `auth` keyword, `#` line comments:

    auth send(s: Source, tc: TC) := eff(s, "type") in att(system, "sender-types")
    auth f(s, tc) := exists x in att(tc, "zones") . x in eff(s, "zones")

Operators by loosening precedence: relations, `not`, `and`, `or`; quantifier
bodies extend as far right as possible.  `intersect`/`union` chains are
left-associative.  Scope errors (unbound quantifier variables, references to
undeclared formals) are reported at parse time with positions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from ..errors import PolicySyntaxError, UnboundVariable, UnknownFormal
from .nodes import (
    And,
    AuthFunction,
    BoolLit,
    BoundVar,
    DirAtt,
    EffAtt,
    Exists,
    Forall,
    Formal,
    In,
    Literal,
    Not,
    NotIn,
    Or,
    ParamKind,
    Paren,
    SetOp,
    SetRel,
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<nl>\n)
  | (?P<assign>:=)
  | (?P<number>-?\d+(\.\d+)?)
  | (?P<string>"[^"\n]*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_-]*)
  | (?P<punct>[(),.:])
    """,
    re.VERBOSE,
)

_KEYWORDS = {
    "auth", "and", "or", "not", "exists", "forall", "in", "notin",
    "subset", "subseteq", "nsubseteq", "intersect", "union",
    "eff", "att", "true", "false",
}

_PARAM_KINDS = {
    "Source": ParamKind.SOURCE,
    "TC": ParamKind.CLOUDLET,
    "Cloudlet": ParamKind.CLOUDLET,
    "Vehicle": ParamKind.TARGET_VEHICLE,
    "TargetVehicle": ParamKind.TARGET_VEHICLE,
}

_SET_OPS = {
    "subset": SetOp.SUBSET,
    "subseteq": SetOp.SUBSETEQ,
    "nsubseteq": SetOp.NSUBSETEQ,
}


@dataclass(frozen=True)
class Token:
    kind: str  # 'keyword' | 'ident' | 'number' | 'string' | punctuation/':=' literal | 'eof'
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise PolicySyntaxError(
                f"unexpected character {text[pos]!r}", line, col, expected="token"
            )
        pos = m.end()
        kind = m.lastgroup
        value = m.group()
        if kind == "nl":
            line += 1
            col = 1
            continue
        if kind in ("ws", "comment"):
            col += len(value)
            continue
        if kind == "ident":
            tok_kind = "keyword" if value in _KEYWORDS else "ident"
            tokens.append(Token(tok_kind, value, line, col))
        elif kind in ("number", "string"):
            tokens.append(Token(kind, value, line, col))
        else:  # punct / assign
            tokens.append(Token(value, value, line, col))
        col += len(value)
    tokens.append(Token("eof", "", line, col))
    return tokens


class Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0
        self.formals: dict[str, Formal] = {}
        self.binders: list[str] = []

    # -- token helpers ---------------------------------------------------------

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def at_keyword(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "keyword" and tok.text in words

    def take_keyword(self, *words: str) -> Optional[Token]:
        if self.at_keyword(*words):
            return self.advance()
        return None

    def expect(self, kind: str, expected: str) -> Token:
        tok = self.peek()
        if tok.kind != kind:
            raise PolicySyntaxError(
                f"expected {expected}, found {tok.text!r}" if tok.text else f"expected {expected}, found end of input",
                tok.line,
                tok.col,
                expected=expected,
            )
        return self.advance()

    def expect_keyword(self, word: str) -> Token:
        tok = self.peek()
        if not self.at_keyword(word):
            raise PolicySyntaxError(
                f"expected {word!r}, found {tok.text!r}", tok.line, tok.col, expected=word
            )
        return self.advance()

    # -- declarations ----------------------------------------------------------

    def parse_program(self) -> list[AuthFunction]:
        decls = []
        while not self.peek().kind == "eof":
            decls.append(self.parse_decl())
        return decls

    def parse_decl(self) -> AuthFunction:
        self.expect_keyword("auth")
        name = self.expect("ident", "operation name").text
        self.expect("(", "'('")
        formals: list[Formal] = []
        self.formals = {}
        self.binders = []
        if self.peek().kind != ")":
            while True:
                formals.append(self.parse_formal())
                if self.peek().kind == ",":
                    self.advance()
                    continue
                break
        self.expect(")", "')'")
        self.expect(":=", "':='")
        body = self.parse_expr()
        return AuthFunction(name, tuple(formals), body)

    def parse_formal(self) -> Formal:
        tok = self.expect("ident", "parameter name")
        if tok.text in self.formals or tok.text == "system":
            raise PolicySyntaxError(
                f"duplicate or reserved parameter {tok.text!r}", tok.line, tok.col,
                expected="distinct parameter name",
            )
        kind = None
        if self.peek().kind == ":":
            self.advance()
            ktok = self.expect("ident", "parameter kind")
            if ktok.text not in _PARAM_KINDS:
                raise PolicySyntaxError(
                    f"unknown parameter kind {ktok.text!r}", ktok.line, ktok.col,
                    expected="Source, TC or Vehicle",
                )
            kind = _PARAM_KINDS[ktok.text]
        formal = Formal(tok.text, kind)
        self.formals[tok.text] = formal
        return formal

    # -- formulas ---------------------------------------------------------------

    def parse_expr(self):
        return self.parse_or()

    def parse_or(self):
        left = self.parse_and()
        while self.take_keyword("or"):
            left = Or(left, self.parse_and())
        return left

    def parse_and(self):
        left = self.parse_not()
        while self.take_keyword("and"):
            left = And(left, self.parse_not())
        return left

    def parse_not(self):
        if self.take_keyword("not"):
            return Not(self.parse_not())
        if self.at_keyword("exists", "forall"):
            return self.parse_quantifier()
        return self.parse_atom()

    def parse_quantifier(self):
        kw = self.advance()
        var = self.expect("ident", "quantifier variable").text
        self.expect_keyword("in")
        domain = self.parse_operand_chain()
        self.expect(".", "'.'")
        self.binders.append(var)
        try:
            body = self.parse_expr()
        finally:
            self.binders.pop()
        cls = Exists if kw.text == "exists" else Forall
        return cls(var, domain, body)

    def parse_atom(self):
        tok = self.peek()
        if tok.kind == "(":
            self.advance()
            inner = self.parse_expr()
            self.expect(")", "')'")
            return Paren(inner)
        if self.take_keyword("true"):
            return BoolLit(True)
        if self.take_keyword("false"):
            return BoolLit(False)
        return self.parse_relation()

    def parse_relation(self):
        start = self.peek()
        left = self.parse_operand_chain()
        if self.take_keyword("in"):
            return In(left, self.parse_operand_chain())
        if self.take_keyword("notin"):
            return NotIn(left, self.parse_operand_chain())
        if self.at_keyword(*_SET_OPS):
            op = _SET_OPS[self.advance().text]
            return SetRel(left, op, self.parse_operand_chain())
        # A lone operand is only a formula when it is an intersect/union
        # combination (asserted non-empty); anything else is a grammar error.
        if isinstance(left, SetRel):
            return left
        raise PolicySyntaxError(
            "operand is not a formula; expected a relational operator",
            start.line,
            start.col,
            expected="in, notin, subset, subseteq, nsubseteq, intersect or union",
        )

    def parse_operand_chain(self):
        left = self.parse_operand()
        while self.at_keyword("intersect", "union"):
            op = SetOp(self.advance().text)
            left = SetRel(left, op, self.parse_operand())
        return left

    def parse_operand(self):
        tok = self.peek()
        if self.at_keyword("eff", "att"):
            kw = self.advance()
            self.expect("(", "'('")
            param = self.parse_param_ref()
            self.expect(",", "','")
            att = self.expect("string", "attribute name string")
            self.expect(")", "')'")
            cls = EffAtt if kw.text == "eff" else DirAtt
            return cls(param, att.text[1:-1])
        if tok.kind == "string":
            self.advance()
            return Literal(tok.text[1:-1])
        if tok.kind == "number":
            self.advance()
            text = tok.text
            return Literal(float(text) if "." in text else int(text))
        if tok.kind == "ident":
            self.advance()
            if tok.text not in self.binders:
                raise UnboundVariable(
                    f"variable {tok.text!r} is not bound by an enclosing quantifier",
                    tok.line,
                    tok.col,
                    expected="bound variable",
                )
            return BoundVar(tok.text)
        raise PolicySyntaxError(
            f"expected an operand, found {tok.text!r}" if tok.text else "expected an operand, found end of input",
            tok.line,
            tok.col,
            expected="eff(...), att(...), literal or bound variable",
        )

    def parse_param_ref(self) -> str:
        tok = self.peek()
        if tok.kind == "ident":
            self.advance()
            if tok.text == "system" or tok.text in self.formals:
                return tok.text
            raise UnknownFormal(
                f"{tok.text!r} is not a declared parameter (or 'system')",
                tok.line,
                tok.col,
                expected="formal parameter or system",
            )
        raise PolicySyntaxError(
            f"expected a parameter reference, found {tok.text!r}",
            tok.line,
            tok.col,
            expected="formal parameter or system",
        )


def parse_policy(text: str) -> AuthFunction:
    """Parse exactly one `auth` declaration."""
    parser = Parser(text)
    decl = parser.parse_decl()
    tok = parser.peek()
    if tok.kind != "eof":
        raise PolicySyntaxError(
            f"trailing input after declaration: {tok.text!r}", tok.line, tok.col,
            expected="end of input",
        )
    return decl


def parse_policies(text: str) -> list[AuthFunction]:
    """Parse a whole policy file (zero or more declarations)."""
    return Parser(text).parse_program()

"""AST for the authorization policy language.

Formula nodes evaluate to booleans; EffAtt/DirAtt/Literal/BoundVar are the
operand leaves.  `intersect`/`union` appear in both positions: as an operand
of a relation they denote the combined set, in formula position they assert
the combined set is non-empty.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union


class ParamKind(Enum):
    SOURCE = "Source"
    CLOUDLET = "TC"
    TARGET_VEHICLE = "Vehicle"


@dataclass(frozen=True)
class Formal:
    name: str
    kind: Optional[ParamKind] = None


class SetOp(Enum):
    SUBSET = "subset"          # proper subset
    SUBSETEQ = "subseteq"
    NSUBSETEQ = "nsubseteq"    # negation of subseteq
    INTERSECT = "intersect"
    UNION = "union"


BOOLEAN_SET_OPS = frozenset({SetOp.SUBSET, SetOp.SUBSETEQ, SetOp.NSUBSETEQ})


# Operand leaves ---------------------------------------------------------------

@dataclass(frozen=True)
class EffAtt:
    param: str
    att: str


@dataclass(frozen=True)
class DirAtt:
    param: str
    att: str


@dataclass(frozen=True)
class Literal:
    value: Union[str, int, float]


@dataclass(frozen=True)
class BoundVar:
    name: str


# Formula nodes ----------------------------------------------------------------

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
    expr: "Expr"


@dataclass(frozen=True)
class Paren:
    expr: "Expr"


@dataclass(frozen=True)
class Exists:
    var: str
    domain: "Operand"
    body: "Expr"


@dataclass(frozen=True)
class Forall:
    var: str
    domain: "Operand"
    body: "Expr"


@dataclass(frozen=True)
class SetRel:
    left: "Operand"
    op: SetOp
    right: "Operand"


@dataclass(frozen=True)
class In:
    item: "Operand"
    coll: "Operand"


@dataclass(frozen=True)
class NotIn:
    item: "Operand"
    coll: "Operand"


@dataclass(frozen=True)
class BoolLit:
    value: bool


Operand = Union[EffAtt, DirAtt, Literal, BoundVar, SetRel]
Expr = Union[And, Or, Not, Paren, Exists, Forall, SetRel, In, NotIn, BoolLit]


@dataclass(frozen=True)
class AuthFunction:
    name: str
    formals: tuple[Formal, ...]
    body: Expr

    def arity(self) -> int:
        return len(self.formals)


# Pretty printing ----------------------------------------------------------------
#
# Precedence: or < and < not < relations/atoms.  A quantifier body extends as
# far right as possible, so a quantifier printed anywhere something could
# follow it must be parenthesized (`tail` tracks that).

_PREC_OR = 1
_PREC_AND = 2
_PREC_NOT = 3


def to_text(node) -> str:
    return _fmt(node, 0, tail=True)


def function_to_text(fn: AuthFunction) -> str:
    formals = ", ".join(
        f.name if f.kind is None else f"{f.name}: {f.kind.value}" for f in fn.formals
    )
    return f"auth {fn.name}({formals}) := {to_text(fn.body)}"


def _fmt(node, prec: int, tail: bool) -> str:
    if isinstance(node, BoolLit):
        return "true" if node.value else "false"
    if isinstance(node, Paren):
        return f"({_fmt(node.expr, 0, tail=True)})"
    if isinstance(node, Or):
        # chains associate left: equal precedence is fine on the left,
        # the right side needs grouping to force right-nesting
        text = f"{_fmt(node.left, _PREC_OR, tail=False)} or {_fmt(node.right, _PREC_OR + 1, tail=tail)}"
        return f"({text})" if prec > _PREC_OR else text
    if isinstance(node, And):
        text = f"{_fmt(node.left, _PREC_AND, tail=False)} and {_fmt(node.right, _PREC_AND + 1, tail=tail)}"
        return f"({text})" if prec > _PREC_AND else text
    if isinstance(node, Not):
        return f"not {_fmt(node.expr, _PREC_NOT, tail=tail)}"
    if isinstance(node, (Exists, Forall)):
        kw = "exists" if isinstance(node, Exists) else "forall"
        text = f"{kw} {node.var} in {operand_to_text(node.domain)} . {_fmt(node.body, 0, tail=True)}"
        # Anything following an unparenthesized quantifier would be captured
        # by its body, so group unless we are the rightmost expression.
        return text if tail else f"({text})"
    if isinstance(node, In):
        return f"{operand_to_text(node.item)} in {operand_to_text(node.coll)}"
    if isinstance(node, NotIn):
        return f"{operand_to_text(node.item)} notin {operand_to_text(node.coll)}"
    if isinstance(node, SetRel):
        return f"{operand_to_text(node.left)} {node.op.value} {operand_to_text(node.right)}"
    raise TypeError(f"not a formula node: {node!r}")


def operand_to_text(node) -> str:
    if isinstance(node, EffAtt):
        return f'eff({node.param}, "{node.att}")'
    if isinstance(node, DirAtt):
        return f'att({node.param}, "{node.att}")'
    if isinstance(node, Literal):
        if isinstance(node.value, str):
            return f'"{node.value}"'
        return repr(node.value)
    if isinstance(node, BoundVar):
        return node.name
    if isinstance(node, SetRel) and node.op in (SetOp.INTERSECT, SetOp.UNION):
        return f"{operand_to_text(node.left)} {node.op.value} {operand_to_text(node.right)}"
    raise TypeError(f"not an operand node: {node!r}")

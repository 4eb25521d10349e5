"""Authorization policy language: parser, AST and evaluator."""

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
    function_to_text,
    operand_to_text,
    to_text,
)
from .parser import parse_policies, parse_policy
from .evaluator import (
    CheckFinding,
    EvalContext,
    PolicyEngine,
    TraceNode,
    check_functions,
    evaluate,
    evaluate_traced,
)

__all__ = [
    "And", "AuthFunction", "BoolLit", "BoundVar", "CheckFinding", "DirAtt",
    "EffAtt", "EvalContext", "Exists", "Forall", "Formal", "In", "Literal",
    "Not", "NotIn", "Or", "ParamKind", "Paren", "PolicyEngine", "SetOp",
    "SetRel", "TraceNode", "check_functions", "evaluate", "evaluate_traced",
    "function_to_text", "operand_to_text", "parse_policies", "parse_policy",
    "to_text",
]

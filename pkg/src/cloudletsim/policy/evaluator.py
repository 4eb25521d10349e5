"""Evaluation of authorization functions against an attribute store.

Semantics:
  * quantifiers range over the finite, materialized value of their domain;
  * a null atomic value is a member of no set, so `in` is false and `notin`
    is true;
  * `subset` is proper subset, `nsubseteq` negates `subseteq`;
  * `intersect`/`union` in formula position assert the result is non-empty;
  * `eff(...)` on a cloudlet or the system entity means its direct value
    (effective attributes are defined for sources only).

Evaluation is pure: it never mutates the store, and two evaluations over the
same snapshot return the same result.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from ..attributes import AttributeStore, AttType, EntityId, EntityKind, SYSTEM
from ..errors import (
    ArityMismatch,
    DuplicateOperation,
    TypeMismatch,
    UnknownOperation,
)
from .nodes import (
    And,
    AuthFunction,
    BOOLEAN_SET_OPS,
    BoolLit,
    BoundVar,
    DirAtt,
    EffAtt,
    Exists,
    Forall,
    In,
    Literal,
    Not,
    NotIn,
    Or,
    ParamKind,
    Paren,
    SetOp,
    SetRel,
    operand_to_text,
    to_text,
)
from .parser import parse_policies


@dataclass
class EvalContext:
    """Bindings of formal parameters to entities, plus the store handle."""

    store: AttributeStore
    bindings: dict[str, EntityId]

    def resolve(self, param: str) -> EntityId:
        if param == "system":
            return SYSTEM
        try:
            return self.bindings[param]
        except KeyError:
            raise ArityMismatch(f"parameter {param!r} is not bound") from None


@dataclass
class TraceNode:
    """One evaluated subexpression: its text, its value, its children."""

    label: str
    value: object
    children: list["TraceNode"] = field(default_factory=list)


def evaluate(fn: AuthFunction, ctx: EvalContext) -> bool:
    for formal in fn.formals:
        ctx.resolve(formal.name)
    return _ev_bool(fn.body, ctx, {}, None)


def evaluate_traced(fn: AuthFunction, ctx: EvalContext) -> tuple[bool, TraceNode]:
    root = TraceNode(to_text(fn.body), None)
    result = _ev_bool(fn.body, ctx, {}, root)
    root.value = result
    return result, root


def _child(trace: Optional[TraceNode], node) -> Optional[TraceNode]:
    if trace is None:
        return None
    child = TraceNode(to_text(node) if _is_formula(node) else _operand_text(node), None)
    trace.children.append(child)
    return child


def _is_formula(node) -> bool:
    return isinstance(node, (And, Or, Not, Paren, Exists, Forall, In, NotIn, BoolLit)) or (
        isinstance(node, SetRel) and node.op in BOOLEAN_SET_OPS
    )


def _operand_text(node) -> str:
    return operand_to_text(node)


def _ev_bool(node, ctx: EvalContext, env: dict, trace: Optional[TraceNode]) -> bool:
    if isinstance(node, BoolLit):
        _set(trace, node.value)
        return node.value
    if isinstance(node, Paren):
        sub = _child(trace, node.expr)
        value = _ev_bool(node.expr, ctx, env, sub)
        _set(trace, value, sub)
        return value
    if isinstance(node, And):
        lt, rt = _child(trace, node.left), _child(trace, node.right)
        value = _ev_bool(node.left, ctx, env, lt) & _ev_bool(node.right, ctx, env, rt)
        _set(trace, value, lt, rt)
        return value
    if isinstance(node, Or):
        lt, rt = _child(trace, node.left), _child(trace, node.right)
        value = _ev_bool(node.left, ctx, env, lt) | _ev_bool(node.right, ctx, env, rt)
        _set(trace, value, lt, rt)
        return value
    if isinstance(node, Not):
        sub = _child(trace, node.expr)
        value = not _ev_bool(node.expr, ctx, env, sub)
        _set(trace, value, sub)
        return value
    if isinstance(node, (Exists, Forall)):
        domain = sorted(_ev_set(node.domain, ctx, env), key=repr)
        results = []
        for element in domain:
            binding = None
            if trace is not None:
                binding = TraceNode(f"{node.var} = {element!r}", None)
                trace.children.append(binding)
            body_trace = _child(binding, node.body)
            value = _ev_bool(node.body, ctx, {**env, node.var: element}, body_trace)
            if binding is not None:
                binding.value = value
            results.append(value)
            if isinstance(node, Exists) and value:
                break
            if isinstance(node, Forall) and not value:
                break
        value = any(results) if isinstance(node, Exists) else all(results)
        _set(trace, value)
        return value
    if isinstance(node, In):
        item = _ev_atomic(node.item, ctx, env)
        value = item is not None and item in _ev_set(node.coll, ctx, env)
        _set(trace, value)
        return value
    if isinstance(node, NotIn):
        item = _ev_atomic(node.item, ctx, env)
        value = item is None or item not in _ev_set(node.coll, ctx, env)
        _set(trace, value)
        return value
    if isinstance(node, SetRel):
        left = _ev_set(node.left, ctx, env)
        right = _ev_set(node.right, ctx, env)
        if node.op is SetOp.SUBSET:
            value = left < right
        elif node.op is SetOp.SUBSETEQ:
            value = left <= right
        elif node.op is SetOp.NSUBSETEQ:
            value = not (left <= right)
        elif node.op is SetOp.INTERSECT:
            value = bool(left & right)
        else:
            value = bool(left | right)
        _set(trace, value)
        return value
    raise TypeMismatch(f"not a formula: {node!r}")


def _set(trace: Optional[TraceNode], value, *_children) -> None:
    if trace is not None:
        trace.value = value


def _ev_set(node, ctx: EvalContext, env: dict) -> frozenset:
    if isinstance(node, SetRel):
        if node.op not in (SetOp.INTERSECT, SetOp.UNION):
            raise TypeMismatch(f"{node.op.value} yields a boolean, not a set")
        left = _ev_set(node.left, ctx, env)
        right = _ev_set(node.right, ctx, env)
        return left & right if node.op is SetOp.INTERSECT else left | right
    if isinstance(node, (EffAtt, DirAtt)):
        entity = ctx.resolve(node.param)
        schema = ctx.store.schema(node.att)
        if schema.att_type is not AttType.SET:
            raise TypeMismatch(f"attribute {node.att!r} is atomic, set expected")
        if isinstance(node, DirAtt) or entity.kind in (
            EntityKind.CLOUDLET,
            EntityKind.SYSTEM_WIDE,
        ):
            return ctx.store.get_attribute(entity, node.att)  # type: ignore[return-value]
        return ctx.store.effective_set_attribute(entity, node.att)
    if isinstance(node, (Literal, BoundVar)):
        raise TypeMismatch(f"{_operand_text(node)} is atomic, set expected")
    raise TypeMismatch(f"not a set expression: {node!r}")


def _ev_atomic(node, ctx: EvalContext, env: dict):
    if isinstance(node, Literal):
        return node.value
    if isinstance(node, BoundVar):
        return env[node.name]
    if isinstance(node, (EffAtt, DirAtt)):
        entity = ctx.resolve(node.param)
        schema = ctx.store.schema(node.att)
        if schema.att_type is not AttType.ATOMIC:
            raise TypeMismatch(f"attribute {node.att!r} is set-valued, atomic expected")
        if isinstance(node, DirAtt) or entity.kind in (
            EntityKind.CLOUDLET,
            EntityKind.SYSTEM_WIDE,
        ):
            return ctx.store.get_attribute(entity, node.att)
        return ctx.store.effective_atomic_attribute(entity, node.att)
    if isinstance(node, SetRel):
        raise TypeMismatch("set combination used where an atomic value is expected")
    raise TypeMismatch(f"not an atomic expression: {node!r}")


class PolicyEngine:
    """Named authorization functions over one attribute store.

    Zero-formal declarations act as system-wide policies: `authorize_all`
    and the broker's communication check require every one of them to hold.
    """

    def __init__(self, store: AttributeStore):
        self.store = store
        self._functions: dict[str, AuthFunction] = {}
        self._lock = threading.Lock()

    def add(self, fn: AuthFunction) -> None:
        with self._lock:
            if fn.name in self._functions:
                raise DuplicateOperation(f"operation {fn.name!r} already declared")
            self._functions[fn.name] = fn

    def load_text(self, text: str) -> list[AuthFunction]:
        decls = parse_policies(text)
        for decl in decls:
            self.add(decl)
        return decls

    def load_file(self, path: str) -> list[AuthFunction]:
        with open(path, "r", encoding="utf-8") as fh:
            return self.load_text(fh.read())

    def functions(self) -> dict[str, AuthFunction]:
        with self._lock:
            return dict(self._functions)

    def function(self, op_name: str) -> AuthFunction:
        try:
            return self._functions[op_name]
        except KeyError:
            raise UnknownOperation(f"no authorization function for {op_name!r}") from None

    def has(self, op_name: str) -> bool:
        return op_name in self._functions

    def bind(self, op_name: str, actuals: Sequence[EntityId]) -> EvalContext:
        fn = self.function(op_name)
        if len(actuals) != fn.arity():
            raise ArityMismatch(
                f"{op_name} takes {fn.arity()} argument(s), got {len(actuals)}"
            )
        bindings = {f.name: a for f, a in zip(fn.formals, actuals)}
        return EvalContext(self.store, bindings)

    def authorize(self, op_name: str, actuals: Sequence[EntityId]) -> bool:
        """Evaluate Auth_op with the given actual arguments.

        An unknown operation raises UnknownOperation rather than returning
        False, so configuration mistakes are distinguishable from denials.
        """
        fn = self.function(op_name)
        return evaluate(fn, self.bind(op_name, actuals))

    def system_policies_ok(self) -> bool:
        with self._lock:
            zero_arg = [fn for fn in self._functions.values() if fn.arity() == 0]
        return all(evaluate(fn, EvalContext(self.store, {})) for fn in zero_arg)


@dataclass(frozen=True)
class CheckFinding:
    op_name: str
    severity: str  # 'error' | 'warning'
    message: str


def check_functions(
    functions: Sequence[AuthFunction], store: AttributeStore
) -> list[CheckFinding]:
    """Static type-check of attribute references against the declared schema."""
    findings: list[CheckFinding] = []
    for fn in functions:
        kinds = {f.name: f.kind for f in fn.formals}
        _check_node(fn.body, fn, kinds, store, findings, expect=None)
    return findings


def _check_node(node, fn, kinds, store, findings, expect: Optional[str]) -> None:
    err = lambda msg: findings.append(CheckFinding(fn.name, "error", msg))
    warn = lambda msg: findings.append(CheckFinding(fn.name, "warning", msg))

    if isinstance(node, (And, Or)):
        _check_node(node.left, fn, kinds, store, findings, None)
        _check_node(node.right, fn, kinds, store, findings, None)
    elif isinstance(node, (Not, Paren)):
        _check_node(node.expr, fn, kinds, store, findings, None)
    elif isinstance(node, (Exists, Forall)):
        _check_node(node.domain, fn, kinds, store, findings, "set")
        _check_node(node.body, fn, kinds, store, findings, None)
    elif isinstance(node, (In, NotIn)):
        _check_node(node.item, fn, kinds, store, findings, "atomic")
        _check_node(node.coll, fn, kinds, store, findings, "set")
    elif isinstance(node, SetRel):
        _check_node(node.left, fn, kinds, store, findings, "set")
        _check_node(node.right, fn, kinds, store, findings, "set")
    elif isinstance(node, (EffAtt, DirAtt)):
        try:
            schema = store.schema(node.att)
        except Exception:
            err(f"attribute {node.att!r} is not declared")
            return
        actual = "set" if schema.att_type is AttType.SET else "atomic"
        if expect is not None and actual != expect:
            err(f"attribute {node.att!r} is {actual}-valued where {expect} expected")
        if isinstance(node, EffAtt):
            kind = kinds.get(node.param)
            if node.param == "system" or kind is ParamKind.CLOUDLET:
                warn(
                    f"eff({node.param}, \"{node.att}\") on a non-source "
                    "evaluates as the direct value"
                )
    elif isinstance(node, (Literal, BoundVar)):
        if expect == "set":
            err(f"{_operand_text(node)} is atomic where a set is expected")
    elif isinstance(node, BoolLit):
        pass

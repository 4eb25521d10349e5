"""Seeded generators for small random worlds and well-typed policy formulas.

Worlds stay within the acceptance bounds: at most 5 cloudlets, 10 sources and
4 attributes.  Formula generation only produces well-typed trees so the main
evaluator and the brute-force oracle can be compared on boolean results.
"""

from __future__ import annotations

import random
from string import ascii_lowercase

from cloudletsim.attributes import (
    AttributeSchema,
    AttributeStore,
    AttType,
    EntityKind,
    SYSTEM,
)
from cloudletsim.policy.nodes import (
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
    Paren,
    SetOp,
    SetRel,
)

SOURCE_KIND_CHOICES = [EntityKind.VEHICLE, EntityKind.INFRASTRUCTURE, EntityKind.USER]


class World:
    def __init__(self, store, cloudlets, sources, set_atts, atomic_atts):
        self.store = store
        self.cloudlets = cloudlets
        self.sources = sources
        self.set_atts = set_atts
        self.atomic_atts = atomic_atts


def random_world(rng: random.Random) -> World:
    store = AttributeStore()
    n_atts = rng.randint(2, 4)
    set_atts, atomic_atts = [], []
    for i in range(n_atts):
        name = f"att{i}"
        values = tuple(
            rng.sample([f"{c}{i}" for c in ascii_lowercase[:8]], rng.randint(2, 5))
        )
        if i == 0 or (i != 1 and rng.random() < 0.5):
            store.declare_attribute(AttributeSchema(name, AttType.SET, values))
            set_atts.append(name)
        else:
            store.declare_attribute(AttributeSchema(name, AttType.ATOMIC, values))
            atomic_atts.append(name)

    cloudlets = [
        store.register_entity(EntityKind.CLOUDLET, f"tc-{i}")
        for i in range(rng.randint(1, 5))
    ]
    sources = [
        store.register_entity(rng.choice(SOURCE_KIND_CHOICES), f"src-{i}")
        for i in range(rng.randint(1, 10))
    ]

    everyone = cloudlets + sources + [SYSTEM]
    assignments = []
    for entity in everyone:
        for att in set_atts:
            if rng.random() < 0.7:
                schema = store.schema(att)
                size = rng.randint(0, len(schema.range))
                assignments.append((entity, att, frozenset(rng.sample(schema.range, size))))
        for att in atomic_atts:
            if rng.random() < 0.7:
                schema = store.schema(att)
                value = rng.choice(list(schema.range) + [None])
                assignments.append((entity, att, value))
    rng.shuffle(assignments)  # randomizes atomic recency stamps
    for entity, att, value in assignments:
        store.set_attribute(entity, att, value)

    for source in sources:
        for tc in cloudlets:
            if rng.random() < 0.5:
                store.associate(source, tc)

    return World(store, cloudlets, sources, set_atts, atomic_atts)


def random_formula(rng: random.Random, world: World, formals: list[Formal], depth: int = 4):
    return _gen_bool(rng, world, [f.name for f in formals], [], depth)


def random_auth_function(rng: random.Random, world: World, name: str = "op") -> AuthFunction:
    formals = (Formal("s"), Formal("tc"))
    return AuthFunction(name, formals, random_formula(rng, world, list(formals)))


def _params(rng, param_names):
    return rng.choice(param_names + ["system"])


def _gen_set(rng, world, param_names, depth):
    if depth > 0 and rng.random() < 0.3:
        op = rng.choice([SetOp.INTERSECT, SetOp.UNION])
        return SetRel(
            _gen_set(rng, world, param_names, 0),
            op,
            _gen_set(rng, world, param_names, 0),
        )
    att = rng.choice(world.set_atts)
    cls = EffAtt if rng.random() < 0.5 else DirAtt
    return cls(_params(rng, param_names), att)


def _gen_atomic(rng, world, param_names, binders):
    roll = rng.random()
    if binders and roll < 0.3:
        return BoundVar(rng.choice(binders))
    if world.atomic_atts and roll < 0.7:
        att = rng.choice(world.atomic_atts)
        cls = EffAtt if rng.random() < 0.5 else DirAtt
        return cls(_params(rng, param_names), att)
    att = rng.choice(world.set_atts + world.atomic_atts)
    return Literal(rng.choice(world.store.schema(att).range))


def _gen_bool(rng, world, param_names, binders, depth):
    if depth <= 0:
        return _gen_leaf(rng, world, param_names, binders)
    roll = rng.random()
    if roll < 0.15:
        return And(
            _gen_bool(rng, world, param_names, binders, depth - 1),
            _gen_bool(rng, world, param_names, binders, depth - 1),
        )
    if roll < 0.3:
        return Or(
            _gen_bool(rng, world, param_names, binders, depth - 1),
            _gen_bool(rng, world, param_names, binders, depth - 1),
        )
    if roll < 0.42:
        return Not(_gen_bool(rng, world, param_names, binders, depth - 1))
    if roll < 0.5:
        return Paren(_gen_bool(rng, world, param_names, binders, depth - 1))
    if roll < 0.7:
        var = f"x{len(binders)}"
        cls = Exists if rng.random() < 0.5 else Forall
        return cls(
            var,
            _gen_set(rng, world, param_names, depth - 1),
            _gen_bool(rng, world, param_names, binders + [var], depth - 1),
        )
    return _gen_leaf(rng, world, param_names, binders)


def _gen_leaf(rng, world, param_names, binders):
    roll = rng.random()
    if roll < 0.08:
        return BoolLit(rng.random() < 0.5)
    if roll < 0.45:
        item = _gen_atomic(rng, world, param_names, binders)
        coll = _gen_set(rng, world, param_names, 1)
        return In(item, coll) if rng.random() < 0.5 else NotIn(item, coll)
    op = rng.choice([SetOp.SUBSET, SetOp.SUBSETEQ, SetOp.NSUBSETEQ, SetOp.INTERSECT, SetOp.UNION])
    # intersect/union chains associate left, so keep the right operand a leaf
    # (parser-shaped trees are what the round-trip property ranges over)
    right_depth = 0 if op in (SetOp.INTERSECT, SetOp.UNION) else 1
    return SetRel(
        _gen_set(rng, world, param_names, 1),
        op,
        _gen_set(rng, world, param_names, right_depth),
    )

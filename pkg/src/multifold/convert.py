"""Conversions between the fact form, the instance form, and pairwise triples.

Three conversions are provided:

* ``fact_to_instances`` expands a fact into the cartesian product of its
  role sets (one instance per combination);
* ``fact_to_instances_id`` does the same but attaches the fact's id under
  the ``FACT-ID`` role, which makes the expansion reversible;
* ``s2c_representation`` replaces every instance by the clique of pairwise
  triples over its entities ("star to clique").  This direction is lossy:
  :func:`s2c_collision_witness` exhibits two different inputs with the same
  output.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product
from typing import Iterable

from .kb import (
    FACT_ID_ROLE,
    PAIR_SEPARATOR,
    DataError,
    EntityId,
    Fact,
    FactRepresentation,
    Instance,
    InstanceRepresentation,
    RelationSchema,
    RelTypeId,
    RoleId,
)

Edge = tuple[EntityId, str, EntityId]


@dataclass(frozen=True)
class LabelledGraph:
    """Undirected edge-labelled graph; edge endpoints stored in sorted order."""

    vertices: frozenset[EntityId]
    edges: frozenset[Edge]

    @classmethod
    def from_edges(cls, edges: Iterable[Edge], extra_vertices: Iterable[EntityId] = ()) -> "LabelledGraph":
        normalized: set[Edge] = set()
        vertices: set[EntityId] = set(extra_vertices)
        for u, label, v in edges:
            if u == v:
                raise DataError(f"self-loop at {u!r} (label {label!r})")
            a, b = (u, v) if u <= v else (v, u)
            normalized.add((a, label, b))
            vertices.update((u, v))
        return cls(frozenset(vertices), frozenset(normalized))


def pair_label(role_a: RoleId, role_b: RoleId) -> str:
    """Deterministic label for an unordered pair of distinct roles."""
    if role_a == role_b:
        raise ValueError(f"pair label needs two distinct roles, got {role_a!r} twice")
    a, b = sorted((role_a, role_b))
    return f"{a}{PAIR_SEPARATOR}{b}"


def pair_rel_type(rel_type: RelTypeId, label: str) -> RelTypeId:
    """Relation type of the pairwise triples produced from one role pair."""
    return f"{rel_type}{PAIR_SEPARATOR}{label}"


def s2c_vertex(graph: LabelledGraph, star: EntityId) -> LabelledGraph:
    """Replace ``star`` by edges between its neighbours, then delete it.

    For every two incident edges with *different* labels, an edge labelled
    with the role pair is added between the far endpoints; equal labels
    contribute nothing, and edges that would be self-loops are dropped.
    """
    if star not in graph.vertices:
        raise ValueError(f"vertex {star!r} not in graph")
    incident: list[tuple[EntityId, str]] = []
    kept: set[Edge] = set()
    for u, label, v in graph.edges:
        if u == star:
            incident.append((v, label))
        elif v == star:
            incident.append((u, label))
        else:
            kept.add((u, label, v))
    for (x1, r1), (x2, r2) in combinations(sorted(incident), 2):
        if r1 == r2 or x1 == x2:
            continue
        a, b = (x1, x2) if x1 <= x2 else (x2, x1)
        kept.add((a, pair_label(r1, r2), b))
    return LabelledGraph(graph.vertices - {star}, frozenset(kept))


def _schema_with_fact_id(schema: RelationSchema) -> RelationSchema:
    if schema.has_fact_id():
        raise DataError(f"relation {schema.rel_type!r} already has a {FACT_ID_ROLE} role")
    return RelationSchema.define(schema.rel_type, schema.roles + (FACT_ID_ROLE,))


def fact_to_instances(fact: Fact) -> frozenset[Instance]:
    """All instances over the cartesian product of the fact's role sets."""
    for role, s in zip(fact.schema.roles, fact.entity_sets):
        if not s:
            raise DataError(f"fact {fact.fact_id!r}: role {role!r} has no entities")
    out = set()
    for combo in product(*(sorted(s) for s in fact.entity_sets)):
        out.add(Instance(fact.schema, combo))
    return frozenset(out)


def fact_to_instances_id(fact: Fact, force_id: bool = False) -> frozenset[Instance]:
    """Like :func:`fact_to_instances` but each instance carries the fact id.

    A degenerate fact expands to its single instance with no id attached
    (there is nothing to group back together), unless ``force_id`` is set,
    which callers use when other facts of the same meta-relation are
    non-degenerate and the schema therefore carries the id role.
    """
    if fact.is_degenerate() and not force_id:
        return fact_to_instances(fact)
    schema = _schema_with_fact_id(fact.schema)
    fid_pos = schema.role_index(FACT_ID_ROLE)
    out = set()
    for plain in fact_to_instances(fact):
        ents = list(plain.entities)
        ents.insert(fid_pos, fact.fact_id)
        out.add(Instance(schema, tuple(ents)))
    return frozenset(out)


def convert_fact_rep(rep: FactRepresentation, keep_ids: bool) -> InstanceRepresentation:
    """Expand every fact; with ``keep_ids``, fact ids become entities.

    Id roles are added per meta-relation type: a type whose facts are all
    degenerate keeps its schema (and contributes no id entities), any other
    type gains the id role on every instance, degenerate facts included.
    """
    instances: list[Instance] = []
    extra_entities: set[EntityId] = set(rep.entities)
    extra_schemas: dict[RelTypeId, RelationSchema] = {}
    for qt in sorted(rep.facts):
        facts = sorted(rep.facts[qt], key=Fact.sort_key)
        schema = rep.schemas[qt]
        with_ids = keep_ids and not all(f.is_degenerate() for f in facts)
        extra_schemas[qt] = _schema_with_fact_id(schema) if with_ids else schema
        for fact in facts:
            if with_ids:
                if fact.fact_id in rep.entities:
                    raise DataError(f"fact id {fact.fact_id!r} collides with an entity name")
                extra_entities.add(fact.fact_id)
                instances.extend(fact_to_instances_id(fact, force_id=True))
            else:
                instances.extend(fact_to_instances(fact))
    return InstanceRepresentation.build(instances, extra_entities, extra_schemas)


def _synthetic_fact_id(rel_type: RelTypeId, entities: tuple[EntityId, ...], used: set[EntityId]) -> EntityId:
    base = ":".join((rel_type,) + entities)
    fid = base
    n = 1
    while fid in used:
        n += 1
        fid = f"{base}:{n}"
    return fid


def recover_facts(rep: InstanceRepresentation) -> FactRepresentation:
    """Rebuild facts by grouping instances on their fact-id values.

    Types without an id role are taken as degenerate: each instance becomes
    its own fact under a synthetic id.  If an instance group is incomplete
    (a split put part of a fact elsewhere) the union over the partial group
    is returned, i.e. a sub-fact.
    """
    facts: list[Fact] = []
    owner: dict[EntityId, RelTypeId] = {}
    fact_id_values: set[EntityId] = set()
    used_ids: set[EntityId] = set()
    extra_schemas: dict[RelTypeId, RelationSchema] = {}

    for rt in sorted(rep.instances):
        schema = rep.schemas[rt]
        insts = sorted(rep.instances[rt], key=Instance.sort_key)
        if not schema.has_fact_id():
            extra_schemas[rt] = schema
            for inst in insts:
                fid = _synthetic_fact_id(rt, inst.entities, used_ids)
                used_ids.add(fid)
                facts.append(Fact(schema, fid, tuple(frozenset((e,)) for e in inst.entities)))
            continue

        base_roles = tuple(r for r in schema.roles if r != FACT_ID_ROLE)
        base_schema = RelationSchema.define(rt, base_roles)
        extra_schemas[rt] = base_schema
        groups: dict[EntityId, list[Instance]] = {}
        for inst in insts:
            fid = inst.value(FACT_ID_ROLE)
            if owner.setdefault(fid, rt) != rt:
                raise DataError(
                    f"fact id {fid!r} appears under both {owner[fid]!r} and {rt!r}"
                )
            groups.setdefault(fid, []).append(inst)
        for fid in sorted(groups):
            sets = {role: set() for role in base_roles}
            for inst in groups[fid]:
                for role in base_roles:
                    sets[role].add(inst.value(role))
            used_ids.add(fid)
            fact_id_values.add(fid)
            facts.append(Fact(base_schema, fid, tuple(frozenset(sets[r]) for r in base_roles)))

    return FactRepresentation.build(
        facts, extra_entities=rep.entities - fact_id_values, extra_schemas=extra_schemas
    )


def drop_fact_ids(rep: InstanceRepresentation) -> InstanceRepresentation:
    """Restrict every instance to its non-id roles; id entities disappear."""
    instances: list[Instance] = []
    fact_id_values: set[EntityId] = set()
    extra_schemas: dict[RelTypeId, RelationSchema] = {}
    for rt in sorted(rep.instances):
        schema = rep.schemas[rt]
        if not schema.has_fact_id():
            extra_schemas[rt] = schema
            instances.extend(rep.instances[rt])
            continue
        keep = [i for i, r in enumerate(schema.roles) if r != FACT_ID_ROLE]
        base_schema = RelationSchema.define(rt, tuple(schema.roles[i] for i in keep))
        extra_schemas[rt] = base_schema
        for inst in rep.instances[rt]:
            fact_id_values.add(inst.value(FACT_ID_ROLE))
            instances.append(Instance(base_schema, tuple(inst.entities[i] for i in keep)))
    return InstanceRepresentation.build(
        instances, extra_entities=rep.entities - fact_id_values, extra_schemas=extra_schemas
    )


def s2c_instance_triples(inst: Instance) -> list[Instance]:
    """The pairwise triples of one instance, in canonical role-pair order.

    Each role pair yields one binary instance whose relation type combines
    the source type with the pair label.  Pairs binding the same entity
    twice would be self-loops and are dropped.
    """
    triples: list[Instance] = []
    for r1, r2 in combinations(inst.schema.roles, 2):
        x, y = inst.value(r1), inst.value(r2)
        if x == y:
            continue
        label = pair_label(r1, r2)
        schema = RelationSchema.define(pair_rel_type(inst.schema.rel_type, label), (r1, r2))
        triples.append(Instance(schema, (x, y)))
    return triples


def s2c_representation(rep: InstanceRepresentation) -> InstanceRepresentation:
    """Convert every instance to its clique of pairwise triples.

    The entity set is preserved; duplicate triples arising from different
    instances merge.
    """
    triples: list[Instance] = []
    for inst in rep.all_instances():
        triples.extend(s2c_instance_triples(inst))
    return InstanceRepresentation.build(triples, extra_entities=rep.entities)


def s2c_type_folds(rep: InstanceRepresentation) -> dict[RelTypeId, int]:
    """Map each pairwise triple type to the arity of its source relation."""
    folds: dict[RelTypeId, int] = {}
    for rt in sorted(rep.schemas):
        schema = rep.schemas[rt]
        for r1, r2 in combinations(schema.roles, 2):
            folds[pair_rel_type(rt, pair_label(r1, r2))] = schema.fold()
    return folds


def triple_edge_set(rep: InstanceRepresentation) -> frozenset[Edge]:
    """The graph view of a binary representation: (entity, pair label, entity).

    Edge identity keeps only the pair label, not the triple's relation type;
    this is the level at which the clique conversion is compared.
    """
    edges: set[Edge] = set()
    for rt in sorted(rep.instances):
        schema = rep.schemas[rt]
        if schema.fold() != 2:
            raise DataError(f"relation {rt!r} is not binary; no graph view")
        label = pair_label(schema.roles[0], schema.roles[1])
        for inst in rep.instances[rt]:
            u, v = inst.entities
            a, b = (u, v) if u <= v else (v, u)
            edges.add((a, label, b))
    return frozenset(edges)


def s2c_collision_witness() -> tuple[InstanceRepresentation, InstanceRepresentation]:
    """Two different representations with identical clique conversions.

    The first holds a single 3-ary instance; the second holds the three
    pairwise edges of the same triangle as three binary relations.  Their
    converted edge sets coincide, so neither input can be recovered from
    the output.
    """
    hub = RelationSchema.define("hub", ("pa", "pb", "pc"))
    one = InstanceRepresentation.build([Instance(hub, ("e1", "e2", "e3"))])

    ab = RelationSchema.define(pair_rel_type("hub", pair_label("pa", "pb")), ("pa", "pb"))
    ac = RelationSchema.define(pair_rel_type("hub", pair_label("pa", "pc")), ("pa", "pc"))
    bc = RelationSchema.define(pair_rel_type("hub", pair_label("pb", "pc")), ("pb", "pc"))
    clique = InstanceRepresentation.build(
        [Instance(ab, ("e1", "e2")), Instance(ac, ("e1", "e3")), Instance(bc, ("e2", "e3"))]
    )
    return one, clique

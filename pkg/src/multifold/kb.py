"""Core types for knowledge bases whose relations bind two or more named roles.

A knowledge base is held in one of two forms:

* an *instance representation*: per relation type, a set of instances,
  each instance assigning exactly one entity to every role of the relation;
* a *fact representation*: per meta-relation type, a set of facts, each
  fact assigning a nonempty *set* of entities to every role.

Identifiers are interned strings.  Role order within a schema is always
lexicographic by role name; that single convention makes positional file
formats, pairwise edge labels and parameter layouts deterministic.
"""

from __future__ import annotations

import sys
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

EntityId = str
RoleId = str
RelTypeId = str

#: Bookkeeping role added when facts are converted to instances with their ids.
FACT_ID_ROLE: RoleId = "FACT-ID"

#: Joins two role names into a pairwise edge label; therefore illegal in role names.
PAIR_SEPARATOR = "."


class DataError(Exception):
    """Malformed or inconsistent knowledge-base data."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        if path is not None:
            where = path if line is None else f"{path}:{line}"
            message = f"{where}: {message}"
        super().__init__(message)


def _intern_name(name: str, kind: str) -> str:
    if not isinstance(name, str) or not name:
        raise DataError(f"empty {kind} name")
    if any(ch.isspace() for ch in name):
        raise DataError(f"{kind} name contains whitespace: {name!r}")
    return sys.intern(name)


def intern_entity(name: str) -> EntityId:
    """Intern an entity (or fact-id) name.  Idempotent; identical names share one id."""
    eid = _intern_name(name, "entity")
    if any(ch in eid for ch in "{},"):
        raise DataError(f"entity name contains a reserved character: {eid!r}")
    return eid


def intern_role(name: str) -> RoleId:
    """Intern a role name.  Roles live in one global namespace across relations."""
    rid = _intern_name(name, "role")
    if PAIR_SEPARATOR in rid or "=" in rid:
        raise DataError(f"role name contains a reserved character: {rid!r}")
    return rid


def intern_rel_type(name: str) -> RelTypeId:
    """Intern a relation-type name."""
    return _intern_name(name, "relation type")


@dataclass(frozen=True)
class RelationSchema:
    """A relation type together with its role set, roles kept in canonical order."""

    rel_type: RelTypeId
    roles: tuple[RoleId, ...]

    @classmethod
    def define(cls, rel_type: str, roles: Iterable[str]) -> "RelationSchema":
        rt = intern_rel_type(rel_type)
        rs = tuple(sorted(intern_role(r) for r in roles))
        if not rs:
            raise DataError(f"relation {rt!r} declares no roles")
        if len(set(rs)) != len(rs):
            raise DataError(f"relation {rt!r} declares a duplicate role")
        return cls(rt, rs)

    def fold(self) -> int:
        """Number of roles (the relation's arity)."""
        return len(self.roles)

    def effective_fold(self) -> int:
        """Arity not counting the bookkeeping fact-id role."""
        return sum(1 for r in self.roles if r != FACT_ID_ROLE)

    def has_fact_id(self) -> bool:
        return FACT_ID_ROLE in self.roles

    def role_index(self, role: RoleId) -> int:
        try:
            return self.roles.index(role)
        except ValueError:
            raise KeyError(f"relation {self.rel_type!r} has no role {role!r}") from None


@dataclass(frozen=True)
class Instance:
    """One observed tuple of a relation: exactly one entity per schema role.

    ``entities`` is aligned with ``schema.roles``.  Instances are values:
    equal schema and entities mean the same instance.
    """

    schema: RelationSchema
    entities: tuple[EntityId, ...]

    @classmethod
    def from_assignment(cls, schema: RelationSchema, assignment: Mapping[str, str]) -> "Instance":
        missing = set(schema.roles) - set(assignment)
        extra = set(assignment) - set(schema.roles)
        if missing or extra:
            raise DataError(
                f"instance of {schema.rel_type!r} has wrong roles"
                f" (missing {sorted(missing)}, extra {sorted(extra)})"
            )
        return cls(schema, tuple(intern_entity(assignment[r]) for r in schema.roles))

    def value(self, role: RoleId) -> EntityId:
        return self.entities[self.schema.role_index(role)]

    @property
    def assignment(self) -> dict[RoleId, EntityId]:
        return dict(zip(self.schema.roles, self.entities))

    def fold(self) -> int:
        return self.schema.fold()

    def replace(self, role: RoleId, entity: EntityId) -> "Instance":
        """Copy of this instance with one role reassigned to a known entity id."""
        i = self.schema.role_index(role)
        ents = list(self.entities)
        ents[i] = entity
        return Instance(self.schema, tuple(ents))

    def sort_key(self) -> tuple:
        return (self.schema.rel_type, self.entities)

    def describe(self) -> str:
        return f"{self.schema.rel_type}({','.join(self.entities)})"


@dataclass(frozen=True, eq=False)
class Fact:
    """One fact of a meta-relation: a nonempty entity set per schema role.

    A meta-relation is a set of role-to-entity-set functions, so a fact's
    identity is its assignment; ``fact_id`` is the fact's *name*.  Names are
    what instances converted from the fact point back to.
    """

    schema: RelationSchema
    fact_id: EntityId
    entity_sets: tuple[frozenset[EntityId], ...]

    @classmethod
    def from_assignment(
        cls, schema: RelationSchema, fact_id: str, assignment: Mapping[str, Iterable[str]]
    ) -> "Fact":
        missing = set(schema.roles) - set(assignment)
        extra = set(assignment) - set(schema.roles)
        if missing or extra:
            raise DataError(
                f"fact {fact_id!r} of {schema.rel_type!r} has wrong roles"
                f" (missing {sorted(missing)}, extra {sorted(extra)})"
            )
        sets = tuple(frozenset(intern_entity(e) for e in assignment[r]) for r in schema.roles)
        return cls(schema, intern_entity(fact_id), sets)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Fact):
            return NotImplemented
        return self.schema == other.schema and self.entity_sets == other.entity_sets

    def __hash__(self) -> int:
        return hash((self.schema, self.entity_sets))

    def role_set(self, role: RoleId) -> frozenset[EntityId]:
        return self.entity_sets[self.schema.role_index(role)]

    @property
    def assignment(self) -> dict[RoleId, frozenset[EntityId]]:
        return dict(zip(self.schema.roles, self.entity_sets))

    def is_degenerate(self) -> bool:
        """True when every role set is a singleton (the fact is a single instance)."""
        return all(len(s) == 1 for s in self.entity_sets)

    def sort_key(self) -> tuple:
        return (self.schema.rel_type, tuple(tuple(sorted(s)) for s in self.entity_sets))


@dataclass(frozen=True)
class Violation:
    """One invariant violation found by :func:`validate`."""

    rule: str
    rel_type: RelTypeId | None
    subject: str
    detail: str

    def __str__(self) -> str:
        where = f" [{self.rel_type}]" if self.rel_type else ""
        return f"{self.rule}{where} {self.subject}: {self.detail}"


@dataclass(frozen=True)
class InstanceRepresentation:
    """A knowledge base as (entities, relation schemas, instance sets per type)."""

    entities: frozenset[EntityId]
    schemas: dict[RelTypeId, RelationSchema]
    instances: dict[RelTypeId, frozenset[Instance]]

    @classmethod
    def build(
        cls,
        instances: Iterable[Instance],
        extra_entities: Iterable[EntityId] = (),
        extra_schemas: Mapping[RelTypeId, RelationSchema] | None = None,
    ) -> "InstanceRepresentation":
        """Group instances by relation type; duplicate instances merge silently."""
        schemas: dict[RelTypeId, RelationSchema] = dict(extra_schemas or {})
        grouped: dict[RelTypeId, set[Instance]] = {r: set() for r in schemas}
        entities: set[EntityId] = set(extra_entities)
        for inst in instances:
            rt = inst.schema.rel_type
            known = schemas.setdefault(rt, inst.schema)
            if known != inst.schema:
                raise DataError(f"conflicting schemas for relation {rt!r}")
            grouped.setdefault(rt, set()).add(inst)
            entities.update(inst.entities)
        return cls(
            entities=frozenset(entities),
            schemas=schemas,
            instances={r: frozenset(s) for r, s in grouped.items()},
        )

    def all_instances(self) -> list[Instance]:
        """All instances in deterministic (relation, entity-tuple) order."""
        out: list[Instance] = []
        for rt in sorted(self.instances):
            out.extend(sorted(self.instances[rt], key=Instance.sort_key))
        return out

    def instance_count(self) -> int:
        return sum(len(s) for s in self.instances.values())

    def __iter__(self) -> Iterator[Instance]:
        return iter(self.all_instances())


@dataclass(frozen=True)
class FactRepresentation:
    """A knowledge base as (entities, meta-relation schemas, fact sets per type)."""

    entities: frozenset[EntityId]
    schemas: dict[RelTypeId, RelationSchema]
    facts: dict[RelTypeId, frozenset[Fact]]

    @classmethod
    def build(
        cls,
        facts: Iterable[Fact],
        extra_entities: Iterable[EntityId] = (),
        extra_schemas: Mapping[RelTypeId, RelationSchema] | None = None,
    ) -> "FactRepresentation":
        schemas: dict[RelTypeId, RelationSchema] = dict(extra_schemas or {})
        grouped: dict[RelTypeId, set[Fact]] = {q: set() for q in schemas}
        entities: set[EntityId] = set(extra_entities)
        for fact in facts:
            qt = fact.schema.rel_type
            known = schemas.setdefault(qt, fact.schema)
            if known != fact.schema:
                raise DataError(f"conflicting schemas for meta-relation {qt!r}")
            grouped.setdefault(qt, set()).add(fact)
            for s in fact.entity_sets:
                entities.update(s)
        return cls(
            entities=frozenset(entities),
            schemas=schemas,
            facts={q: frozenset(s) for q, s in grouped.items()},
        )

    def all_facts(self) -> list[Fact]:
        out: list[Fact] = []
        for qt in sorted(self.facts):
            out.extend(sorted(self.facts[qt], key=Fact.sort_key))
        return out

    def fact_count(self) -> int:
        return sum(len(s) for s in self.facts.values())


def _validate_schema(rel_type: RelTypeId, schema: RelationSchema, out: list[Violation]) -> None:
    if schema.rel_type != rel_type:
        out.append(Violation("schema-key-mismatch", rel_type, schema.rel_type,
                             "registered under a different relation type"))
    if not schema.roles:
        out.append(Violation("schema-roles-empty", rel_type, rel_type, "no roles declared"))
    if len(set(schema.roles)) != len(schema.roles):
        out.append(Violation("schema-roles-duplicate", rel_type, rel_type, "duplicate role"))
    if tuple(sorted(schema.roles)) != schema.roles:
        out.append(Violation("schema-roles-order", rel_type, rel_type,
                             "roles not in canonical (sorted) order"))


def validate(rep: InstanceRepresentation | FactRepresentation) -> list[Violation]:
    """Check every representation invariant; violations are data, not exceptions."""
    out: list[Violation] = []
    for rt in sorted(rep.schemas):
        _validate_schema(rt, rep.schemas[rt], out)

    if isinstance(rep, InstanceRepresentation):
        for rt in sorted(rep.instances):
            schema = rep.schemas.get(rt)
            for inst in sorted(rep.instances[rt], key=Instance.sort_key):
                if schema is None or inst.schema != schema:
                    out.append(Violation("instance-schema-mismatch", rt, inst.describe(),
                                         "schema differs from the registered one"))
                if len(inst.entities) != len(inst.schema.roles):
                    out.append(Violation("instance-arity", rt, inst.describe(),
                                         f"{len(inst.entities)} entities for "
                                         f"{len(inst.schema.roles)} roles"))
                for e in inst.entities:
                    if e not in rep.entities:
                        out.append(Violation("entity-unknown", rt, inst.describe(),
                                             f"entity {e!r} not in entity set"))
        return out

    seen_ids: dict[EntityId, RelTypeId] = {}
    for qt in sorted(rep.facts):
        schema = rep.schemas.get(qt)
        for fact in sorted(rep.facts[qt], key=Fact.sort_key):
            label = f"{fact.fact_id}:{qt}"
            if schema is None or fact.schema != schema:
                out.append(Violation("fact-schema-mismatch", qt, label,
                                     "schema differs from the registered one"))
            if len(fact.entity_sets) != len(fact.schema.roles):
                out.append(Violation("fact-arity", qt, label,
                                     f"{len(fact.entity_sets)} role sets for "
                                     f"{len(fact.schema.roles)} roles"))
            for role, s in zip(fact.schema.roles, fact.entity_sets):
                if not s:
                    out.append(Violation("role-set-empty", qt, label, f"role {role!r} has no entities"))
                for e in s:
                    if e not in rep.entities:
                        out.append(Violation("entity-unknown", qt, label,
                                             f"entity {e!r} not in entity set"))
            if fact.fact_id in seen_ids and seen_ids[fact.fact_id] is not None:
                out.append(Violation("fact-id-duplicate", qt, label,
                                     f"fact id also used under {seen_ids[fact.fact_id]!r}"))
            seen_ids.setdefault(fact.fact_id, qt)
    return out


@dataclass(frozen=True)
class Stats:
    """Counts over a representation; ``fold_histogram`` maps arity to item count."""

    entity_count: int
    rel_type_count: int
    instance_count: int
    fold_histogram: dict[int, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "entity_count": self.entity_count,
            "rel_type_count": self.rel_type_count,
            "instance_count": self.instance_count,
            "fold_histogram": dict(sorted(self.fold_histogram.items())),
        }


def stats(rep: InstanceRepresentation | FactRepresentation) -> Stats:
    """Exact counts; for fact representations, facts are counted as instances."""
    histogram: Counter[int] = Counter()
    if isinstance(rep, InstanceRepresentation):
        items = rep.instances
        total = rep.instance_count()
    else:
        items = rep.facts
        total = rep.fact_count()
    for rt, group in items.items():
        if group:
            histogram[rep.schemas[rt].fold()] += len(group)
    return Stats(
        entity_count=len(rep.entities),
        rel_type_count=len(rep.schemas),
        instance_count=total,
        fold_histogram=dict(histogram),
    )


def union(a: InstanceRepresentation, b: InstanceRepresentation) -> InstanceRepresentation:
    """Merge two representations; shared relation types must agree on schema."""
    for rt, schema in b.schemas.items():
        if rt in a.schemas and a.schemas[rt] != schema:
            raise DataError(f"cannot merge: conflicting schemas for {rt!r}")
    merged_schemas = dict(a.schemas)
    merged_schemas.update(b.schemas)
    merged: dict[RelTypeId, frozenset[Instance]] = dict(a.instances)
    for rt, group in b.instances.items():
        merged[rt] = merged.get(rt, frozenset()) | group
    return InstanceRepresentation(
        entities=a.entities | b.entities,
        schemas=merged_schemas,
        instances=merged,
    )
